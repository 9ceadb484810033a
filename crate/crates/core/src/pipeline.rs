//! End-to-end runs: PDPs and features, threshold sweep, diagnostics, model
//! fit, classification, distance likelihoods and plot data, all written
//! under one output directory.
//!
//! Layout of a run directory:
//!
//! ```text
//! features.csv            threshold_curve.csv     model.json
//! classification.csv      likelihoods.csv         summary.json
//! diagnostics/{overlap,corr_distance,corr_nlos_error,pairwise}.csv
//! diagnostics/diagnostics.json
//! plots/*.csv
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cir::compute_pdp;
use crate::diagnostics::{build_diagnostics, mean, nlos_errors, sample_std, FeatureDiagnostics};
use crate::error::{Error, Result};
use crate::features::{extract_features_with, ChannelFeatures, Feature, FeatureConfig, FeatureRow};
use crate::io::{self, DatasetManifest, RunConfig};
use crate::model::{RangeSample, RangingModel};
use crate::record::{LinkClass, SweepRecord};
use crate::threshold::{estimate_noise_stats, pre_arrival_levels_dbm, sweep_thresholds, threshold_grid, NoiseStats};
use crate::SPEED_OF_LIGHT_M_PER_NS;

/// Detected feature rows plus the ids of missed detections, both in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtraction {
    pub rows: Vec<FeatureRow>,
    pub missed: Vec<String>,
}

pub fn extract_all(records: &[SweepRecord], threshold_dbm: f64, config: &FeatureConfig) -> Result<FeatureExtraction> {
    let results: Vec<Result<Option<FeatureRow>>> = records
        .par_iter()
        .map(|r| {
            let pdp = compute_pdp(&r.cir, threshold_dbm).map_err(|e| e.in_record(&r.record_id))?;
            match extract_features_with(&pdp, &r.cir, config) {
                Ok(features) => Ok(Some(FeatureRow {
                    record_id: r.record_id.clone(),
                    scenario: r.scenario,
                    true_distance_m: r.true_distance_m,
                    features,
                })),
                Err(Error::NoSignalDetected) => Ok(None),
                Err(e) => Err(e.in_record(&r.record_id)),
            }
        })
        .collect();
    let mut out = FeatureExtraction {
        rows: Vec::new(),
        missed: Vec::new(),
    };
    for (r, res) in records.iter().zip(results) {
        match res? {
            Some(row) => out.rows.push(row),
            None => out.missed.push(r.record_id.clone()),
        }
    }
    Ok(out)
}

/// NLOS range-error statistics before and after subtracting `g(τ_MAX)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MitigationStats {
    pub count: usize,
    pub before_mean_m: f64,
    pub before_std_m: f64,
    pub after_mean_m: f64,
    pub after_std_m: f64,
}

/// `(before, after)` NLOS errors in table order.
pub fn nlos_mitigation(rows: &[FeatureRow], model: &RangingModel) -> (Vec<f64>, Vec<f64>) {
    rows.iter()
        .filter(|r| r.class() == Some(LinkClass::Nlos))
        .filter_map(|r| r.range_error_m().map(|e| (e, e - model.g(r.features.max_excess_delay_ns))))
        .unzip()
}

pub fn mitigation_stats(rows: &[FeatureRow], model: &RangingModel) -> Option<MitigationStats> {
    let (before, after) = nlos_mitigation(rows, model);
    (before.len() >= 2).then(|| MitigationStats {
        count: before.len(),
        before_mean_m: mean(&before),
        before_std_m: sample_std(&before),
        after_mean_m: mean(&after),
        after_std_m: sample_std(&after),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    AllMissed,
    FitFailed,
}

/// Machine-readable record of one run. Contains no timestamps so repeated
/// runs produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub tool: String,
    pub version: String,
    pub status: RunStatus,
    pub seed: u64,
    pub config: RunConfig,
    pub records: usize,
    pub detected: usize,
    pub missed_detections: usize,
    pub missed_detection_rate: f64,
    pub missed_record_ids: Vec<String>,
    pub noise: Option<NoiseStats>,
    pub selected_threshold_dbm: Option<f64>,
    pub k_factor: Option<f64>,
    pub model: Option<RangingModel>,
    pub mitigation: Option<MitigationStats>,
    pub classified_nlos: usize,
    /// Stages that were skipped, with the reason.
    pub notes: Vec<String>,
    pub artifacts: Vec<String>,
}

struct Output {
    dir: PathBuf,
    written: Vec<String>,
}

impl Output {
    fn text(&mut self, rel: &str, contents: &str) -> Result<()> {
        io::write_text(&self.dir.join(rel), contents)?;
        self.written.push(rel.to_owned());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        io::write_json(&self.dir.join(rel), value)?;
        self.written.push(rel.to_owned());
        Ok(())
    }

    fn features(&mut self, rel: &str, rows: &[FeatureRow]) -> Result<()> {
        io::write_features_csv(&self.dir.join(rel), rows)?;
        self.written.push(rel.to_owned());
        Ok(())
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn class_name(row: &FeatureRow) -> &'static str {
    row.class().map_or("", LinkClass::as_str)
}

/// Counts per fixed-width bin, bins aligned to multiples of `width`.
/// Returns `(bin_centre, counts per series)` over the union of occupied bins.
pub fn histogram(series: &[&[f64]], width: f64) -> Vec<(f64, Vec<usize>)> {
    let mut bins: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (s, values) in series.iter().enumerate() {
        for &v in values.iter().filter(|v| v.is_finite()) {
            bins.entry((v / width).floor() as i64).or_insert_with(|| vec![0; series.len()])[s] += 1;
        }
    }
    let (Some(&lo), Some(&hi)) = (bins.keys().next(), bins.keys().next_back()) else {
        return Vec::new();
    };
    (lo..=hi)
        .map(|k| {
            let counts = bins.get(&k).cloned().unwrap_or_else(|| vec![0; series.len()]);
            ((k as f64 + 0.5) * width, counts)
        })
        .collect()
}

fn histogram_csv(header: &str, series: &[&[f64]], width: f64, density: bool) -> String {
    let mut out = format!("{header}\n");
    let totals: Vec<usize> = series.iter().map(|s| s.len()).collect();
    for (centre, counts) in histogram(series, width) {
        out.push_str(&centre.to_string());
        for (c, n) in counts.iter().zip(&totals) {
            if density {
                let d = if *n == 0 { 0.0 } else { *c as f64 / (*n as f64 * width) };
                out.push_str(&format!(",{d}"));
            } else {
                out.push_str(&format!(",{c}"));
            }
        }
        out.push('\n');
    }
    out
}

fn diagnostics_files(out: &mut Output, diag: &FeatureDiagnostics) -> Result<()> {
    for (name, pick) in [
        ("overlap", (|m| m.overlap) as fn(&crate::diagnostics::FeatureMetrics) -> Option<f64>),
        ("corr_distance", |m| m.corr_distance),
        ("corr_nlos_error", |m| m.corr_nlos_error),
    ] {
        let mut text = format!("feature,{name}\n");
        for m in &diag.metrics {
            text.push_str(&format!("{},{}\n", m.feature.column(), cell(pick(m))));
        }
        out.text(&format!("diagnostics/{name}.csv"), &text)?;
    }
    let mut text = String::from("feature");
    for f in Feature::ALL {
        text.push(',');
        text.push_str(f.column());
    }
    text.push('\n');
    for (f, row) in Feature::ALL.iter().zip(&diag.pairwise) {
        text.push_str(f.column());
        for v in row {
            text.push(',');
            text.push_str(&cell(*v));
        }
        text.push('\n');
    }
    out.text("diagnostics/pairwise.csv", &text)?;
    out.json("diagnostics/diagnostics.json", diag)
}

/// Posteriors shown in the example likelihood plot.
pub const EXAMPLE_POSTERIORS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
/// Example channel for the likelihood plot: first path at 30 ns, 60 ns excess delay.
pub const EXAMPLE_TOA_NS: f64 = 30.0;
pub const EXAMPLE_MAX_EXCESS_NS: f64 = 60.0;

fn example_features() -> ChannelFeatures {
    ChannelFeatures {
        toa_ns: EXAMPLE_TOA_NS,
        rss_dbm: 0.0,
        max_power_dbm: 0.0,
        mean_excess_delay_ns: EXAMPLE_TOA_NS,
        max_excess_delay_ns: EXAMPLE_MAX_EXCESS_NS,
        rms_delay_spread_ns: 0.0,
        rise_time_ns: 0.0,
        kurtosis: 3.0,
    }
}

/// Grid covering both mixture components out to four standard deviations,
/// snapped to multiples of `step`.
fn likelihood_span(model: &RangingModel, f: &ChannelFeatures, step: f64) -> (f64, f64) {
    let range = SPEED_OF_LIGHT_M_PER_NS * f.toa_ns;
    let (a, b) = (range - model.mu_los_m, range - model.g(f.max_excess_delay_ns));
    let reach = 4.0 * model.sigma_los_m.max(model.sigma_nlos_m);
    (
        ((a.min(b) - reach) / step).floor() * step,
        ((a.max(b) + reach) / step).ceil() * step,
    )
}

/// Hard decisions for every row, as CSV, plus the number classified NLOS.
pub fn classification_csv(rows: &[FeatureRow], model: &RangingModel) -> (String, usize) {
    let mut text = String::from("record_id,scenario,true_distance_m,posterior_nlos,class,range_m,d_hat_m,error_m\n");
    let mut nlos = 0;
    for row in rows {
        let est = model.point_estimate(&row.features);
        if est.class == LinkClass::Nlos {
            nlos += 1;
        }
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.record_id,
            row.scenario.map(|s| s.to_string()).unwrap_or_default(),
            cell(row.true_distance_m),
            est.posterior_nlos,
            est.class,
            SPEED_OF_LIGHT_M_PER_NS * row.features.toa_ns,
            est.distance_m,
            cell(row.true_distance_m.map(|d| est.distance_m - d)),
        ));
    }
    (text, nlos)
}

/// Distance likelihood of every row as `record_id,d_m,density`. Without an
/// explicit `(min, max)` each record gets a grid spanning both components.
pub fn likelihood_csv(
    rows: &[FeatureRow],
    model: &RangingModel,
    span_m: Option<(f64, f64)>,
    step_m: f64,
) -> Result<String> {
    let mut text = String::from("record_id,d_m,density\n");
    for row in rows {
        let (lo, hi) = span_m.unwrap_or_else(|| likelihood_span(model, &row.features, step_m));
        for (d, p) in model.range_likelihood(&row.features).grid(lo, hi, step_m)? {
            text.push_str(&format!("{},{d},{p}\n", row.record_id));
        }
    }
    Ok(text)
}

/// Writes the per-metric diagnostics CSVs and JSON under `dir/diagnostics/`.
pub fn write_diagnostics(dir: &Path, diag: &FeatureDiagnostics) -> Result<()> {
    diagnostics_files(
        &mut Output {
            dir: dir.to_owned(),
            written: Vec::new(),
        },
        diag,
    )
}

/// Runs the pipeline on a manifest.
pub fn run_pipeline(manifest: &DatasetManifest, config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    let records = io::load_records(manifest)?;
    run_records(&records, config)
}

/// Runs the pipeline on in-memory records and writes all artifacts to
/// `config.output_dir`. Returns [`Error::AllMissed`] when nothing is detected
/// and [`Error::FitFailed`] when no model can be fitted; the summary is
/// written in both cases.
pub fn run_records(records: &[SweepRecord], config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::InvalidInput("no records to process".into()));
    }
    let mut out = Output {
        dir: config.output_dir.clone(),
        written: Vec::new(),
    };
    let feature_config = FeatureConfig {
        kurtosis_source: config.kurtosis_source,
    };
    let extraction = extract_all(records, config.threshold_dbm, &feature_config)?;
    let rows = &extraction.rows;
    let mut summary = RunSummary {
        tool: "tunnelrange".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        status: RunStatus::Ok,
        seed: config.seed,
        config: config.clone(),
        records: records.len(),
        detected: rows.len(),
        missed_detections: extraction.missed.len(),
        missed_detection_rate: extraction.missed.len() as f64 / records.len() as f64,
        missed_record_ids: extraction.missed.clone(),
        noise: None,
        selected_threshold_dbm: None,
        k_factor: None,
        model: None,
        mitigation: None,
        classified_nlos: 0,
        notes: Vec::new(),
        artifacts: Vec::new(),
    };
    out.features("features.csv", rows)?;

    // threshold trade-off on the labeled records
    let labeled: Vec<SweepRecord> = records.iter().filter(|r| r.true_distance_m.is_some()).cloned().collect();
    if labeled.is_empty() {
        summary.notes.push("threshold sweep skipped: no record carries a true distance".into());
    } else {
        match estimate_noise_stats(&labeled, config.noise_guard_ns) {
            Ok(noise) => summary.noise = Some(noise),
            Err(e) => summary.notes.push(format!("noise statistics skipped: {e}")),
        }
        let g = &config.threshold_grid;
        let candidates = threshold_grid(g.min, g.max, g.step)?;
        match sweep_thresholds(&labeled, &candidates, config.fa_guard_ns) {
            Ok(curve) => {
                let mut text = String::from("threshold_dbm,fa_rate,md_rate\n");
                for ((t, fa), md) in curve.thresholds.iter().zip(&curve.fa_rate).zip(&curve.md_rate) {
                    text.push_str(&format!("{t},{fa},{md}\n"));
                }
                out.text("threshold_curve.csv", &text)?;
                summary.selected_threshold_dbm = Some(curve.selected_dbm);
                summary.k_factor = summary.noise.map(|n| curve.k_factor(&n));
            }
            Err(e) => summary.notes.push(format!("threshold sweep skipped: {e}")),
        }
        let levels: Vec<f64> = labeled
            .par_iter()
            .filter_map(|r| pre_arrival_levels_dbm(r, config.noise_guard_ns).ok())
            .flatten()
            .collect();
        if !levels.is_empty() {
            out.text("plots/noise_level_pdf.csv", &histogram_csv("level_dbm,density", &[&levels], 1.0, true))?;
        }
    }

    if rows.is_empty() {
        summary.status = RunStatus::AllMissed;
        summary.notes.push("every record was a missed detection; no model fitted".into());
        finish(&mut out, &mut summary)?;
        return Err(Error::AllMissed(records.len()));
    }

    let training: Vec<FeatureRow> = rows
        .iter()
        .filter(|r| r.class().is_some() && r.true_distance_m.is_some())
        .cloned()
        .collect();
    match build_diagnostics(&training, &nlos_errors(&training)) {
        Ok(diag) => diagnostics_files(&mut out, &diag)?,
        Err(e) => summary.notes.push(format!("diagnostics skipped: {e}")),
    }

    let samples: Vec<RangeSample> = training.iter().map(RangeSample::from).collect();
    let model = match RangingModel::fit(&samples, config.prior_nlos) {
        Ok(m) => m,
        Err(e) => {
            summary.status = RunStatus::FitFailed;
            summary.notes.push(format!("model fit failed: {e}"));
            finish(&mut out, &mut summary)?;
            return Err(Error::FitFailed(Box::new(e)));
        }
    };
    out.json("model.json", &model)?;
    summary.model = Some(model);
    summary.mitigation = mitigation_stats(&training, &model);

    let (cls, nlos) = classification_csv(rows, &model);
    summary.classified_nlos = nlos;
    out.text("classification.csv", &cls)?;
    out.text("likelihoods.csv", &likelihood_csv(rows, &model, None, config.likelihood_step_m)?)?;

    plot_files(&mut out, &training, &model, config)?;
    finish(&mut out, &mut summary)?;
    Ok(summary)
}

fn plot_files(out: &mut Output, training: &[FeatureRow], model: &RangingModel, config: &RunConfig) -> Result<()> {
    let mut text = String::from("record_id,class,true_distance_m,range_m\n");
    for r in training {
        text.push_str(&format!(
            "{},{},{},{}\n",
            r.record_id,
            class_name(r),
            cell(r.true_distance_m),
            SPEED_OF_LIGHT_M_PER_NS * r.features.toa_ns
        ));
    }
    out.text("plots/toa_vs_distance.csv", &text)?;

    let errors = |class| -> Vec<f64> {
        training
            .iter()
            .filter(|r| r.class() == Some(class))
            .filter_map(FeatureRow::range_error_m)
            .collect()
    };
    let (los, nlos) = (errors(LinkClass::Los), errors(LinkClass::Nlos));
    out.text(
        "plots/range_error_histogram.csv",
        &histogram_csv("error_m,los_count,nlos_count", &[&los, &nlos], config.histogram_bin_m, false),
    )?;

    let mut text = String::from("record_id,class,error_m,rise_ns,max_excess_ns,rms_ns,mean_excess_ns,kurtosis\n");
    for r in training {
        let f = &r.features;
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.record_id,
            class_name(r),
            cell(r.range_error_m()),
            f.rise_time_ns,
            f.max_excess_delay_ns,
            f.rms_delay_spread_ns,
            f.mean_excess_delay_ns - f.toa_ns,
            f.kurtosis
        ));
    }
    out.text("plots/feature_scatter.csv", &text)?;

    let (before, after) = nlos_mitigation(training, model);
    out.text(
        "plots/mitigation_histogram.csv",
        &histogram_csv("error_m,before_count,after_count", &[&before, &after], config.histogram_bin_m, false),
    )?;

    let features = example_features();
    let (lo, hi) = likelihood_span(model, &features, 0.05);
    let mut text = String::from("d_m");
    for p in EXAMPLE_POSTERIORS {
        text.push_str(&format!(",posterior_nlos_{p}"));
    }
    text.push('\n');
    let curves: Vec<Vec<(f64, f64)>> = EXAMPLE_POSTERIORS
        .iter()
        .map(|&p| model.likelihood_with_posterior(&features, p).grid(lo, hi, 0.05))
        .collect::<Result<_>>()?;
    for i in 0..curves[0].len() {
        text.push_str(&curves[0][i].0.to_string());
        for c in &curves {
            text.push_str(&format!(",{}", c[i].1));
        }
        text.push('\n');
    }
    out.text("plots/likelihood_example.csv", &text)
}

fn finish(out: &mut Output, summary: &mut RunSummary) -> Result<()> {
    let mut artifacts = out.written.clone();
    artifacts.push("summary.json".into());
    artifacts.sort();
    summary.artifacts = artifacts;
    out.json("summary.json", summary)
}

/// Reads a run summary written by [`run_records`].
pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    io::read_json(&dir.join("summary.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_bins_align_to_width() {
        let h = histogram(&[&[0.1, 0.3, -0.1], &[0.6]], 0.25);
        let centres: Vec<f64> = h.iter().map(|(c, _)| *c).collect();
        assert_eq!(centres, vec![-0.125, 0.125, 0.375, 0.625]);
        assert_eq!(h[1].1, vec![1, 0]);
        assert_eq!(h[3].1, vec![0, 1]);
        assert!(histogram(&[&[]], 1.0).is_empty());
    }

    #[test]
    fn density_histogram_integrates_to_one() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin() * 5.0).collect();
        let text = histogram_csv("x,density", &[&v], 0.5, true);
        let total: f64 = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap() * 0.5)
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn likelihood_span_covers_both_modes() {
        let m = RangingModel::tunnel_reference();
        let (lo, hi) = likelihood_span(&m, &example_features(), 0.25);
        assert!(lo <= 6.148 - 4.0 * 1.61 && hi >= 9.27 + 4.0 * 1.61);
        assert_eq!((lo / 0.25).fract(), 0.0);
    }
}
