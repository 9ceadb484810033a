//! Feature diagnostics over a labeled feature table: class overlap and
//! correlations with distance, with the NLOS ranging error, and between
//! feature pairs. Sample (n-1) statistics throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Feature, FeatureRow};
use crate::record::LinkClass;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n-1 denominator).
pub fn sample_std(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)).sqrt()
}

/// `sqrt(σ_L σ_N) / |μ_N - μ_L|`; small values mean separable classes.
pub fn overlap_metric(los: &[f64], nlos: &[f64]) -> Result<f64> {
    if los.len() < 2 || nlos.len() < 2 {
        return Err(Error::InsufficientData(
            "overlap needs at least two samples per class".into(),
        ));
    }
    let gap = (mean(nlos) - mean(los)).abs();
    if gap == 0.0 {
        return Err(Error::UndefinedOverlap);
    }
    Ok((sample_std(los) * sample_std(nlos)).sqrt() / gap)
}

/// Pearson sample correlation.
pub fn correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "correlation of unequal lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData("correlation needs at least two pairs".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Per-feature metrics. `None` marks a value that is undefined on this table
/// (constant column, equal class means).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMetrics {
    pub feature: Feature,
    pub overlap: Option<f64>,
    pub corr_distance: Option<f64>,
    pub corr_nlos_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDiagnostics {
    pub los_count: usize,
    pub nlos_count: usize,
    pub metrics: Vec<FeatureMetrics>,
    /// Pairwise correlations, indexed like [`Feature::ALL`].
    pub pairwise: Vec<Vec<Option<f64>>>,
}

impl FeatureDiagnostics {
    pub fn metric(&self, feature: Feature) -> &FeatureMetrics {
        self.metrics
            .iter()
            .find(|m| m.feature == feature)
            .expect("every feature has a metrics row")
    }

    pub fn pair(&self, a: Feature, b: Feature) -> Option<f64> {
        let idx = |f| Feature::ALL.iter().position(|&x| x == f).unwrap();
        self.pairwise[idx(a)][idx(b)]
    }
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedCorrelation | Error::UndefinedOverlap) => Ok(None),
        Err(e) => Err(e),
    }
}

/// `c·τ₁ - d` for every NLOS row, in table order.
pub fn nlos_errors(rows: &[FeatureRow]) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.class() == Some(LinkClass::Nlos))
        .filter_map(FeatureRow::range_error_m)
        .collect()
}

/// Overlap over the class split, distance correlation over all rows,
/// error correlation over NLOS rows only, pairwise correlation over all rows.
/// `errors_nlos` must follow the order of the NLOS rows in `rows`.
pub fn build_diagnostics(rows: &[FeatureRow], errors_nlos: &[f64]) -> Result<FeatureDiagnostics> {
    let mut distance = Vec::with_capacity(rows.len());
    for r in rows {
        if r.class().is_none() {
            return Err(Error::InvalidInput(format!("row `{}` has no scenario label", r.record_id)));
        }
        distance.push(r.true_distance_m.ok_or_else(|| {
            Error::InvalidInput(format!("row `{}` has no true distance", r.record_id))
        })?);
    }
    let is_nlos: Vec<bool> = rows.iter().map(|r| r.class() == Some(LinkClass::Nlos)).collect();
    let nlos_count = is_nlos.iter().filter(|&&n| n).count();
    let los_count = rows.len() - nlos_count;
    if los_count == 0 || nlos_count == 0 {
        return Err(Error::InsufficientData(format!(
            "need both classes, have {los_count} LOS and {nlos_count} NLOS rows"
        )));
    }
    if errors_nlos.len() != nlos_count {
        return Err(Error::InvalidInput(format!(
            "{} NLOS errors for {nlos_count} NLOS rows",
            errors_nlos.len()
        )));
    }

    let columns: Vec<Vec<f64>> = Feature::ALL
        .iter()
        .map(|f| rows.iter().map(|r| f.of(&r.features)).collect())
        .collect();

    let metrics = Feature::ALL
        .iter()
        .zip(&columns)
        .map(|(&feature, col)| {
            let (mut los, mut nlos) = (Vec::new(), Vec::new());
            for (&v, &n) in col.iter().zip(&is_nlos) {
                if n { nlos.push(v) } else { los.push(v) }
            }
            Ok(FeatureMetrics {
                feature,
                overlap: defined(overlap_metric(&los, &nlos))?,
                corr_distance: defined(correlation(col, &distance))?,
                corr_nlos_error: defined(correlation(&nlos, errors_nlos))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = Feature::ALL.len();
    let mut pairwise = vec![vec![None; n]; n];
    for i in 0..n {
        for j in i..n {
            let rho = defined(correlation(&columns[i], &columns[j]))?;
            let rho = if i == j { rho.map(|_| 1.0) } else { rho };
            pairwise[i][j] = rho;
            pairwise[j][i] = rho;
        }
    }

    Ok(FeatureDiagnostics {
        los_count,
        nlos_count,
        metrics,
        pairwise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::ChannelFeatures;
    use crate::record::Scenario;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_variance_classes_have_zero_overlap() {
        assert_eq!(overlap_metric(&[1.0; 5], &[3.0; 7]).unwrap(), 0.0);
    }

    #[test]
    fn constructed_overlap_is_one() {
        // mean 0 std 1, mean 2 std 4 (sample std)
        let los = [-1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()];
        let nlos = [2.0 - 4.0 / 2f64.sqrt(), 2.0 + 4.0 / 2f64.sqrt()];
        assert!((sample_std(&los) - 1.0).abs() < 1e-12);
        assert!((sample_std(&nlos) - 4.0).abs() < 1e-12);
        assert!((overlap_metric(&los, &nlos).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_errors() {
        assert!(matches!(overlap_metric(&[1.0], &[2.0, 3.0]), Err(Error::InsufficientData(_))));
        assert!(matches!(overlap_metric(&[1.0, 3.0], &[2.0, 2.0]), Err(Error::UndefinedOverlap)));
    }

    #[test]
    fn affine_and_negated_correlation() {
        let x: Vec<f64> = (0..20).map(|i| (i as f64).sin() * 3.0 + i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((correlation(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert!((correlation(&x, &z).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(correlation(&x, &[1.0; 20]), Err(Error::UndefinedCorrelation)));
        assert!(correlation(&x, &y[..5]).is_err());
    }

    #[test]
    fn independent_sequences_are_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000);
        let x: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        // direct formula
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        let direct = cov / (vx * vy).sqrt();
        let rho = correlation(&x, &y).unwrap();
        assert!((rho - direct).abs() < 1e-12);
        assert!(rho.abs() < 0.05);
    }

    fn table(seed: u64, n: usize) -> Vec<FeatureRow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let scenario = if i % 4 == 3 { Scenario::NlosWall } else { Scenario::Los };
                let d = rng.random_range(5.0..40.0);
                let bias = if scenario == Scenario::NlosWall { rng.random_range(0.0..8.0) } else { 0.0 };
                let mut features = ChannelFeatures::from_values(
                    Feature::ALL.iter().map(|&f| (f, rng.random_range(0.0..10.0))).chain([
                        (Feature::Toa, (d + bias) / 0.3),
                        (Feature::Kurtosis, 3.0),
                    ]),
                );
                if scenario == Scenario::NlosWall {
                    features.rise_time_ns += 8.0;
                }
                FeatureRow {
                    record_id: format!("r{i}"),
                    scenario: Some(scenario),
                    true_distance_m: Some(d),
                    features,
                }
            })
            .collect()
    }

    #[test]
    fn constant_feature_is_undefined_others_are_not() {
        let rows = table(1, 80);
        let diag = build_diagnostics(&rows, &nlos_errors(&rows)).unwrap();
        let k = diag.metric(Feature::Kurtosis);
        assert_eq!((k.overlap, k.corr_distance, k.corr_nlos_error), (None, None, None));
        assert_eq!(diag.pair(Feature::Kurtosis, Feature::Kurtosis), None);
        assert_eq!(diag.pair(Feature::Kurtosis, Feature::Rss), None);
        let toa = diag.metric(Feature::Toa);
        assert!(toa.overlap.is_some() && toa.corr_distance.unwrap() > 0.9);
        assert_eq!(diag.pair(Feature::Rss, Feature::Rss), Some(1.0));
    }

    #[test]
    fn table_shape_and_symmetry() {
        let rows = table(2, 120);
        let diag = build_diagnostics(&rows, &nlos_errors(&rows)).unwrap();
        assert_eq!(diag.metrics.len(), 8);
        assert_eq!(diag.pairwise.len(), 8);
        assert_eq!((diag.los_count, diag.nlos_count), (90, 30));
        for i in 0..8 {
            assert_eq!(diag.pairwise[i].len(), 8);
            for j in 0..8 {
                assert_eq!(diag.pairwise[i][j], diag.pairwise[j][i]);
                if let Some(r) = diag.pairwise[i][j] {
                    assert!(r.abs() <= 1.0);
                }
            }
        }
    }

    #[test]
    fn nlos_error_correlation_uses_only_nlos_rows() {
        let rows = table(3, 200);
        let errs = nlos_errors(&rows);
        let diag = build_diagnostics(&rows, &errs).unwrap();
        for f in Feature::ALL {
            let subset: Vec<f64> = rows
                .iter()
                .filter(|r| r.scenario == Some(Scenario::NlosWall))
                .map(|r| f.of(&r.features))
                .collect();
            assert_eq!(diag.metric(f).corr_nlos_error, correlation(&subset, &errs).ok());
        }
    }

    #[test]
    fn single_class_table_rejected() {
        let rows: Vec<_> = table(4, 40).into_iter().filter(|r| r.scenario == Some(Scenario::Los)).collect();
        assert!(matches!(build_diagnostics(&rows, &[]), Err(Error::InsufficientData(_))));
    }

    proptest! {
        #[test]
        fn affine_rescaling_invariance(seed in 0u64..1000, a in 0.01f64..100.0, b in -100.0f64..100.0) {
            let rows = table(seed, 60);
            let errs = nlos_errors(&rows);
            let base = build_diagnostics(&rows, &errs).unwrap();
            let scaled: Vec<FeatureRow> = rows
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    r.features.rise_time_ns = a * r.features.rise_time_ns + b;
                    r
                })
                .collect();
            let diag = build_diagnostics(&scaled, &errs).unwrap();
            let (m0, m1) = (base.metric(Feature::RiseTime), diag.metric(Feature::RiseTime));
            prop_assert!((m0.overlap.unwrap() - m1.overlap.unwrap()).abs() <= 1e-12 * m0.overlap.unwrap());
            prop_assert!((m0.corr_distance.unwrap() - m1.corr_distance.unwrap()).abs() < 1e-12);
            prop_assert!((m0.corr_nlos_error.unwrap() - m1.corr_nlos_error.unwrap()).abs() < 1e-12);
            for f in Feature::ALL {
                let (p0, p1) = (base.pair(Feature::RiseTime, f), diag.pair(Feature::RiseTime, f));
                if let (Some(p0), Some(p1)) = (p0, p1) {
                    prop_assert!((p0 - p1).abs() < 1e-12);
                }
            }
        }
    }
}
