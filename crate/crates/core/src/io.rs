//! On-disk formats: JSON-lines dataset manifests, per-record `index,re,im`
//! CSV files with JSON sidecars, feature tables, model files and run
//! configuration.
//!
//! Numbers are written with Rust's shortest round-trip `Display`, which never
//! uses exponents, so every file is plain '.'-decimal text and re-reading it
//! reproduces the same bits.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cir::{ingest_frequency_response, FrequencyResponse, ImpulseResponse, SweepConfig};
use crate::error::{Error, Result};
use crate::features::{ChannelFeatures, Feature, FeatureRow, KurtosisSource};
use crate::model::RangingModel;
use crate::record::{Scenario, SweepRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Frequency,
    Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub record_id: String,
    pub tx_id: String,
    pub rx_id: String,
    pub true_distance_m: Option<f64>,
    pub scenario: Option<Scenario>,
    /// Relative to the manifest's directory.
    pub cir_path: String,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestHeader {
    sweep_config: SweepConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub sweep_config: SweepConfig,
    pub entries: Vec<ManifestEntry>,
    /// Directory `cir_path`s are resolved against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(sweep_config: SweepConfig, base_dir: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            sweep_config,
            entries: Vec::new(),
            base_dir: base_dir.into(),
        }
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.cir_path)
    }
}

/// Sidecar stored next to every CIR file, same stem, `.json` extension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "lowercase", deny_unknown_fields)]
pub enum Sidecar {
    Frequency { sweep_config: SweepConfig },
    Time { delay_step_s: f64, origin_delay_s: f64 },
}

impl Sidecar {
    fn domain(&self) -> Domain {
        match self {
            Sidecar::Frequency { .. } => Domain::Frequency,
            Sidecar::Time { .. } => Domain::Time,
        }
    }
}

pub fn sidecar_path(cir_path: &Path) -> PathBuf {
    cir_path.with_extension("json")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_owned(),
        line: e.line(),
        reason: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut out = serde_json::to_string(&ManifestHeader {
        sweep_config: manifest.sweep_config.clone(),
    })?;
    out.push('\n');
    for entry in &manifest.entries {
        out.push_str(&serde_json::to_string(entry)?);
        out.push('\n');
    }
    write_text(path, &out)
}

/// Parses and validates a manifest. Blank lines are ignored; the first
/// non-blank line must be the `sweep_config` header.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let malformed = |line: usize, reason: String| Error::Malformed {
        path: path.to_owned(),
        line,
        reason,
    };
    let base_dir = path.parent().map(Path::to_owned).unwrap_or_default();
    let mut header: Option<SweepConfig> = None;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            let h: ManifestHeader = serde_json::from_str(&line)
                .map_err(|e| malformed(lineno, format!("expected sweep_config header: {e}")))?;
            h.sweep_config
                .validate()
                .map_err(|e| malformed(lineno, e.to_string()))?;
            header = Some(h.sweep_config);
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| {
            let id = serde_json::from_str::<serde_json::Value>(&line)
                .ok()
                .and_then(|v| v.get("record_id").and_then(|id| id.as_str()).map(str::to_owned));
            match id {
                Some(id) => malformed(lineno, format!("record `{id}`: {e}")),
                None => malformed(lineno, e.to_string()),
            }
        })?;
        if !seen.insert(entry.record_id.clone()) {
            return Err(Error::DuplicateRecordId(entry.record_id));
        }
        if entry.scenario.is_some() != entry.true_distance_m.is_some() {
            return Err(malformed(
                lineno,
                format!(
                    "record `{}`: scenario and true_distance_m must be given together",
                    entry.record_id
                ),
            ));
        }
        if let Some(d) = entry.true_distance_m {
            if !(d > 0.0 && d.is_finite()) {
                return Err(malformed(
                    lineno,
                    format!("record `{}`: true_distance_m must be positive, got {d}", entry.record_id),
                ));
            }
        }
        let cir = base_dir.join(&entry.cir_path);
        for file in [cir.clone(), sidecar_path(&cir)] {
            if !file.is_file() {
                return Err(Error::MissingFile {
                    record_id: entry.record_id,
                    path: file,
                });
            }
        }
        entries.push(entry);
    }
    let sweep_config = header.ok_or_else(|| malformed(1, "missing sweep_config header".into()))?;
    Ok(DatasetManifest {
        sweep_config,
        entries,
        base_dir,
    })
}

// ---------------------------------------------------------------------------
// CIR / frequency-response files
// ---------------------------------------------------------------------------

pub fn write_samples_csv(path: &Path, samples: &[Complex64]) -> Result<()> {
    let mut out = String::with_capacity(samples.len() * 48);
    out.push_str("index,re,im\n");
    for (i, s) in samples.iter().enumerate() {
        out.push_str(&format!("{i},{},{}\n", s.re, s.im));
    }
    write_text(path, &out)
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<Complex64>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?;
    if header != vec!["index", "re", "im"] {
        return Err(Error::Malformed {
            path: path.to_owned(),
            line: 1,
            reason: "expected header `index,re,im`".into(),
        });
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| csv_error(path, e))?;
        let bad = |reason: String| Error::Malformed {
            path: path.to_owned(),
            line,
            reason,
        };
        let index: usize = row[0].trim().parse().map_err(|_| bad(format!("bad index `{}`", &row[0])))?;
        if index != i {
            return Err(bad(format!("expected index {i}, found {index}")));
        }
        let num = |s: &str| -> Result<f64> {
            let v: f64 = s.trim().parse().map_err(|_| bad(format!("bad number `{s}`")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(format!("non-finite value `{s}`")))
            }
        };
        out.push(Complex64::new(num(&row[1])?, num(&row[2])?));
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Malformed {
        path: path.to_owned(),
        line,
        reason: e.to_string(),
    }
}

/// Writes a time-domain record under `base_dir/cir/` and returns its manifest entry.
pub fn write_time_record(base_dir: &Path, record: &SweepRecord) -> Result<ManifestEntry> {
    let rel = format!("cir/{}.csv", record.record_id);
    let path = base_dir.join(&rel);
    write_samples_csv(&path, &record.cir.taps)?;
    write_json(
        &sidecar_path(&path),
        &Sidecar::Time {
            delay_step_s: record.cir.delay_step_s,
            origin_delay_s: record.cir.origin_delay_s,
        },
    )?;
    Ok(entry_for(record, rel, Domain::Time))
}

/// Writes a frequency-domain sweep under `base_dir/cir/` and returns its manifest entry.
pub fn write_frequency_record(
    base_dir: &Path,
    record: &SweepRecord,
    response: &FrequencyResponse,
) -> Result<ManifestEntry> {
    let rel = format!("cir/{}.csv", record.record_id);
    let path = base_dir.join(&rel);
    write_samples_csv(&path, &response.samples)?;
    write_json(
        &sidecar_path(&path),
        &Sidecar::Frequency {
            sweep_config: response.config.clone(),
        },
    )?;
    Ok(entry_for(record, rel, Domain::Frequency))
}

fn entry_for(record: &SweepRecord, cir_path: String, domain: Domain) -> ManifestEntry {
    ManifestEntry {
        record_id: record.record_id.clone(),
        tx_id: record.tx_id.clone(),
        rx_id: record.rx_id.clone(),
        true_distance_m: record.true_distance_m,
        scenario: record.scenario,
        cir_path,
        domain,
    }
}

/// Reads one record; frequency-domain sweeps are windowed and transformed.
pub fn load_record(manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<SweepRecord> {
    let load = || -> Result<SweepRecord> {
        let path = manifest.resolve(entry);
        let side_path = sidecar_path(&path);
        let sidecar: Sidecar = read_json(&side_path)?;
        if sidecar.domain() != entry.domain {
            return Err(Error::Malformed {
                path: side_path,
                line: 1,
                reason: format!("sidecar domain {:?} contradicts manifest domain {:?}", sidecar.domain(), entry.domain),
            });
        }
        let samples = read_samples_csv(&path)?;
        let cir = match sidecar {
            Sidecar::Time {
                delay_step_s,
                origin_delay_s,
            } => {
                let cir = ImpulseResponse {
                    taps: samples,
                    delay_step_s,
                    origin_delay_s,
                };
                cir.validate()?;
                cir
            }
            Sidecar::Frequency { sweep_config } => {
                ingest_frequency_response(&FrequencyResponse::new(samples, sweep_config)?)?
            }
        };
        Ok(SweepRecord {
            record_id: entry.record_id.clone(),
            tx_id: entry.tx_id.clone(),
            rx_id: entry.rx_id.clone(),
            true_distance_m: entry.true_distance_m,
            scenario: entry.scenario,
            cir,
        })
    };
    load().map_err(|e| e.in_record(&entry.record_id))
}

/// Loads every record in manifest order.
pub fn load_records(manifest: &DatasetManifest) -> Result<Vec<SweepRecord>> {
    let loaded: Vec<Result<SweepRecord>> = manifest.entries.par_iter().map(|e| load_record(manifest, e)).collect();
    loaded.into_iter().collect()
}

/// Writes records as time-domain files plus `manifest.jsonl` in `dir`.
pub fn write_dataset(dir: &Path, sweep_config: &SweepConfig, records: &[SweepRecord]) -> Result<PathBuf> {
    let entries: Vec<Result<ManifestEntry>> = records.par_iter().map(|r| write_time_record(dir, r)).collect();
    let mut manifest = DatasetManifest::new(sweep_config.clone(), dir);
    manifest.entries = entries.into_iter().collect::<Result<_>>()?;
    let path = dir.join("manifest.jsonl");
    write_manifest(&path, &manifest)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Feature tables
// ---------------------------------------------------------------------------

pub const FEATURE_HEADER: [&str; 3] = ["record_id", "scenario", "true_distance_m"];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_features_csv(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    let mut out = FEATURE_HEADER.join(",");
    for f in Feature::ALL {
        out.push(',');
        out.push_str(f.column());
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!("{},{},{}", row.record_id, opt(row.scenario), opt(row.true_distance_m)));
        for f in Feature::ALL {
            out.push_str(&format!(",{}", f.of(&row.features)));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn read_features_csv(path: &Path) -> Result<Vec<FeatureRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let expected: Vec<&str> = FEATURE_HEADER
        .iter()
        .copied()
        .chain(Feature::ALL.iter().map(|f| f.column()))
        .collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Malformed {
            path: path.to_owned(),
            line: 1,
            reason: format!("expected header `{}`", expected.join(",")),
        });
    }
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = |reason: String| Error::Malformed {
            path: path.to_owned(),
            line,
            reason: format!("record `{}`: {reason}", &rec[0]),
        };
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| bad(format!("bad number `{s}`"))) };
        let scenario = match &rec[1] {
            "" => None,
            s => Some(s.parse::<Scenario>().map_err(|e| bad(e.to_string()))?),
        };
        let true_distance_m = match &rec[2] {
            "" => None,
            s => Some(num(s)?),
        };
        let mut values = Vec::with_capacity(8);
        for (k, f) in Feature::ALL.iter().enumerate() {
            values.push((*f, num(&rec[3 + k])?));
        }
        if !seen.insert(rec[0].to_owned()) {
            return Err(Error::DuplicateRecordId(rec[0].to_owned()));
        }
        rows.push(FeatureRow {
            record_id: rec[0].to_owned(),
            scenario,
            true_distance_m,
            features: ChannelFeatures::from_values(values),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Models and run configuration
// ---------------------------------------------------------------------------

pub fn write_model(path: &Path, model: &RangingModel) -> Result<()> {
    write_json(path, model)
}

pub fn read_model(path: &Path) -> Result<RangingModel> {
    let model: RangingModel = read_json(path)?;
    model.validate()?;
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Detection threshold for feature extraction (dBm).
    pub threshold_dbm: f64,
    /// Tolerance before the true arrival when counting false alarms (ns).
    pub fa_guard_ns: f64,
    /// Samples closer than this to the true arrival are not used as noise (ns).
    pub noise_guard_ns: f64,
    pub prior_nlos: f64,
    /// Candidate thresholds for the FA/MD sweep (dBm).
    pub threshold_grid: GridSpec,
    /// Spacing of the per-record distance-likelihood grids (m).
    pub likelihood_step_m: f64,
    /// Width of error-histogram bins in plot data (m).
    pub histogram_bin_m: f64,
    pub kurtosis_source: KurtosisSource,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            threshold_dbm: -43.8,
            fa_guard_ns: 5.0,
            noise_guard_ns: 5.0,
            prior_nlos: crate::model::DEFAULT_PRIOR_NLOS,
            threshold_grid: GridSpec {
                min: -60.0,
                max: -30.0,
                step: 0.1,
            },
            likelihood_step_m: 0.25,
            histogram_bin_m: 0.25,
            kurtosis_source: KurtosisSource::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(format!("run config: {msg}")));
        if !self.threshold_dbm.is_finite() {
            return bad("threshold_dbm must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.prior_nlos) {
            return bad(format!("prior_nlos {} outside [0, 1]", self.prior_nlos));
        }
        for (name, v) in [("fa_guard_ns", self.fa_guard_ns), ("noise_guard_ns", self.noise_guard_ns)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        for (name, v) in [
            ("likelihood_step_m", self.likelihood_step_m),
            ("histogram_bin_m", self.histogram_bin_m),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        let g = &self.threshold_grid;
        crate::threshold::threshold_grid(g.min, g.max, g.step).map(|_| ())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let config: RunConfig = read_json(path)?;
        config.validate()?;
        Ok(config)
    }
}
