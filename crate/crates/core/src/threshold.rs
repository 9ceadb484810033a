//! Detection-threshold selection from false-alarm / missed-detection rates.
//!
//! A record is a missed detection (MD) at threshold `P` when no PDP sample is
//! strictly above `P`. It is a false alarm (FA) when the first sample above `P`
//! lies more than `fa_guard` before the true arrival `d/c`. Both reduce to two
//! per-record maxima, so a whole candidate sweep costs one pass per record.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cir::power_to_dbm;
use crate::error::{Error, Result};
use crate::record::SweepRecord;

/// Fewest pre-arrival samples a record must offer to the noise estimator.
pub const MIN_PRE_ARRIVAL_SAMPLES: usize = 50;

/// Thermal-noise level statistics in the dB domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseStats {
    pub mean_dbm: f64,
    pub std_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCurve {
    pub thresholds: Vec<f64>,
    pub fa_rate: Vec<f64>,
    pub md_rate: Vec<f64>,
    pub selected_dbm: f64,
}

impl ThresholdCurve {
    /// Number of noise standard deviations the selected threshold sits above the noise mean.
    pub fn k_factor(&self, noise: &NoiseStats) -> f64 {
        (self.selected_dbm - noise.mean_dbm) / noise.std_db
    }
}

fn true_toa(record: &SweepRecord) -> Result<f64> {
    record.true_toa_ns().ok_or_else(|| {
        Error::InvalidInput("record has no true distance".into()).in_record(&record.record_id)
    })
}

/// Levels `10·log10(|h|²/P0)` of the non-zero samples earlier than
/// `d/c - guard_ns`.
pub fn pre_arrival_levels_dbm(record: &SweepRecord, guard_ns: f64) -> Result<Vec<f64>> {
    let cutoff = true_toa(record)? - guard_ns;
    let cir = &record.cir;
    let pre = (0..cir.len()).take_while(|&i| cir.delay_ns(i) < cutoff).count();
    if pre < MIN_PRE_ARRIVAL_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{pre} pre-arrival samples, need {MIN_PRE_ARRIVAL_SAMPLES}"
        ))
        .in_record(&record.record_id));
    }
    Ok(cir.taps[..pre]
        .iter()
        .map(|t| t.norm_sqr())
        .filter(|&p| p > 0.0)
        .map(power_to_dbm)
        .collect())
}

/// Fits mean and sample standard deviation of the pre-arrival levels of all
/// records. Zero-power samples carry no level and are skipped.
pub fn estimate_noise_stats(records: &[SweepRecord], guard_ns: f64) -> Result<NoiseStats> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no records".into()));
    }
    let per_record: Vec<Vec<f64>> = records
        .par_iter()
        .map(|r| pre_arrival_levels_dbm(r, guard_ns))
        .collect::<Result<_>>()?;

    let levels: Vec<f64> = per_record.into_iter().flatten().collect();
    if levels.len() < 2 {
        return Err(Error::InsufficientData("fewer than two non-zero noise samples".into()));
    }
    let n = levels.len() as f64;
    let mean = levels.iter().sum::<f64>() / n;
    let var = levels.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Err(Error::DegenerateSignal("noise floor has zero spread".into()));
    }
    Ok(NoiseStats {
        mean_dbm: mean,
        std_db: var.sqrt(),
    })
}

/// Per-record levels that decide FA/MD for any threshold.
#[derive(Debug, Clone, Copy)]
struct DetectionLevels {
    /// Strongest sample earlier than `d/c - guard`.
    pre_arrival_max_dbm: f64,
    /// Strongest sample anywhere.
    max_dbm: f64,
}

fn detection_levels(record: &SweepRecord, fa_guard_ns: f64) -> Result<DetectionLevels> {
    let cutoff = true_toa(record)? - fa_guard_ns;
    let mut levels = DetectionLevels {
        pre_arrival_max_dbm: f64::NEG_INFINITY,
        max_dbm: f64::NEG_INFINITY,
    };
    for (i, tap) in record.cir.taps.iter().enumerate() {
        let dbm = power_to_dbm(tap.norm_sqr());
        if record.cir.delay_ns(i) < cutoff {
            levels.pre_arrival_max_dbm = levels.pre_arrival_max_dbm.max(dbm);
        }
        levels.max_dbm = levels.max_dbm.max(dbm);
    }
    Ok(levels)
}

/// FA and MD rates for every candidate; the selected threshold minimises
/// `max(fa, md)` with ties going to the lower threshold.
pub fn sweep_thresholds(
    records: &[SweepRecord],
    candidates: &[f64],
    fa_guard_ns: f64,
) -> Result<ThresholdCurve> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("empty threshold candidate set".into()));
    }
    if candidates.iter().any(|c| !c.is_finite()) || candidates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "threshold candidates must be finite and strictly ascending".into(),
        ));
    }
    if records.is_empty() {
        return Err(Error::InsufficientData("no records".into()));
    }
    let levels: Vec<DetectionLevels> = records
        .par_iter()
        .map(|r| detection_levels(r, fa_guard_ns))
        .collect::<Result<_>>()?;

    let n = levels.len() as f64;
    let (fa_rate, md_rate): (Vec<f64>, Vec<f64>) = candidates
        .iter()
        .map(|&th| {
            let fa = levels.iter().filter(|l| l.pre_arrival_max_dbm > th).count();
            let md = levels.iter().filter(|l| l.max_dbm <= th).count();
            (fa as f64 / n, md as f64 / n)
        })
        .unzip();

    let mut best = 0;
    for i in 1..candidates.len() {
        if fa_rate[i].max(md_rate[i]) < fa_rate[best].max(md_rate[best]) {
            best = i;
        }
    }
    Ok(ThresholdCurve {
        thresholds: candidates.to_vec(),
        selected_dbm: candidates[best],
        fa_rate,
        md_rate,
    })
}

/// Ascending grid `min, min+step, …` up to and including `max` (within rounding).
pub fn threshold_grid(min_dbm: f64, max_dbm: f64, step_db: f64) -> Result<Vec<f64>> {
    if !(min_dbm.is_finite() && max_dbm.is_finite() && step_db > 0.0 && max_dbm >= min_dbm) {
        return Err(Error::InvalidInput(format!(
            "bad threshold grid {min_dbm}..{max_dbm} step {step_db}"
        )));
    }
    let count = ((max_dbm - min_dbm) / step_db + 1e-9).floor() as usize + 1;
    // round to 1e-9 dB so printed grids stay tidy
    Ok((0..count)
        .map(|i| ((min_dbm + i as f64 * step_db) * 1e9).round() / 1e9)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cir::{dbm_to_power, ImpulseResponse};
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn record(id: &str, distance_m: f64, levels_dbm: &[f64]) -> SweepRecord {
        let taps = levels_dbm
            .iter()
            .map(|&l| {
                if l.is_finite() {
                    Complex64::new(dbm_to_power(l).sqrt(), 0.0)
                } else {
                    Complex64::default()
                }
            })
            .collect();
        SweepRecord {
            record_id: id.into(),
            tx_id: "tx".into(),
            rx_id: "rx".into(),
            true_distance_m: Some(distance_m),
            scenario: None,
            cir: ImpulseResponse::new(taps, 0.5e-9).unwrap(),
        }
    }

    /// 100 noise samples at -60 dBm (±2 alternating), a -30 dBm arrival at 30 ns (index 60).
    fn noisy_record(id: &str) -> SweepRecord {
        let mut levels: Vec<f64> = (0..200).map(|i| if i % 2 == 0 { -62.0 } else { -58.0 }).collect();
        levels[60] = -30.0;
        record(id, 9.0, &levels)
    }

    #[test]
    fn hand_computed_noise_stats() {
        let mut a = vec![f64::NEG_INFINITY; 100];
        let mut b = vec![f64::NEG_INFINITY; 100];
        for i in 0..50 {
            a[i] = -60.0;
            b[i] = if i % 2 == 0 { -70.0 } else { -62.0 };
        }
        // d = 15 m -> 50 ns; guard 0 -> indices 0..99 are pre-arrival, zeros skipped
        let recs = vec![record("a", 15.0, &a), record("b", 15.0, &b)];
        let stats = estimate_noise_stats(&recs, 0.0).unwrap();
        let levels: Vec<f64> = a[..50].iter().chain(&b[..50]).copied().collect();
        let mean = levels.iter().sum::<f64>() / 100.0;
        let std = (levels.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
        assert!((stats.mean_dbm - mean).abs() < 1e-9);
        assert!((stats.std_db - std).abs() < 1e-9);
        assert!((mean + 63.0).abs() < 1e-9);
    }

    #[test]
    fn constant_noise_is_degenerate() {
        let recs = vec![record("flat", 30.0, &[-64.0; 300])];
        assert!(matches!(estimate_noise_stats(&recs, 1.0), Err(Error::DegenerateSignal(_))));
    }

    #[test]
    fn short_pre_arrival_window_rejected() {
        let recs = vec![record("close", 3.0, &[-64.0; 300])];
        let err = estimate_noise_stats(&recs, 1.0).unwrap_err();
        assert!(matches!(err.root(), Error::InsufficientData(_)));
        assert!(err.to_string().contains("close"));
    }

    #[test]
    fn threshold_above_everything_is_all_missed() {
        let recs: Vec<_> = (0..4).map(|i| noisy_record(&format!("r{i}"))).collect();
        let curve = sweep_thresholds(&recs, &[-20.0], 1.0).unwrap();
        assert_eq!(curve.md_rate, vec![1.0]);
        assert_eq!(curve.fa_rate, vec![0.0]);
    }

    #[test]
    fn threshold_below_noise_is_all_false_alarms() {
        let recs: Vec<_> = (0..4).map(|i| noisy_record(&format!("r{i}"))).collect();
        let curve = sweep_thresholds(&recs, &[-70.0, -59.0, -50.0, -25.0], 1.0).unwrap();
        assert_eq!(curve.fa_rate, vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(curve.md_rate, vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(curve.selected_dbm, -50.0);
    }

    #[test]
    fn early_detection_inside_guard_is_not_a_false_alarm() {
        let mut levels = vec![-80.0; 200];
        levels[59] = -35.0; // 0.5 ns before the 30 ns arrival
        levels[60] = -30.0;
        let recs = vec![record("edge", 9.0, &levels)];
        assert_eq!(sweep_thresholds(&recs, &[-40.0], 1.0).unwrap().fa_rate, vec![0.0]);
        assert_eq!(sweep_thresholds(&recs, &[-40.0], 0.25).unwrap().fa_rate, vec![1.0]);
    }

    #[test]
    fn rejects_bad_candidates() {
        let recs = vec![noisy_record("r")];
        assert!(matches!(sweep_thresholds(&recs, &[], 1.0), Err(Error::InvalidInput(_))));
        assert!(sweep_thresholds(&recs, &[-40.0, -50.0], 1.0).is_err());
    }

    #[test]
    fn grid_construction() {
        let g = threshold_grid(-60.0, -30.0, 0.1).unwrap();
        assert_eq!(g.len(), 301);
        assert_eq!(g[0], -60.0);
        assert_eq!(*g.last().unwrap(), -30.0);
        assert_eq!(g[162], -43.8);
        assert!(threshold_grid(-30.0, -60.0, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn rates_are_monotone(
            data in prop::collection::vec((prop::collection::vec(-90.0f64..0.0, 120), 1.0f64..15.0), 1..12),
            guard in 0.0f64..5.0,
        ) {
            let recs: Vec<_> = data
                .iter()
                .enumerate()
                .map(|(i, (levels, d))| record(&i.to_string(), *d, levels))
                .collect();
            let grid = threshold_grid(-95.0, 5.0, 2.5).unwrap();
            let curve = sweep_thresholds(&recs, &grid, guard).unwrap();
            for w in curve.fa_rate.windows(2) { prop_assert!(w[1] <= w[0]); }
            for w in curve.md_rate.windows(2) { prop_assert!(w[1] >= w[0]); }
            prop_assert!(curve.thresholds.contains(&curve.selected_dbm));
            prop_assert_eq!(sweep_thresholds(&recs, &grid, guard).unwrap(), curve);
        }
    }
}
