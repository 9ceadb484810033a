use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tunnelrange::diagnostics::{build_diagnostics, nlos_errors};
use tunnelrange::io::{self, RunConfig};
use tunnelrange::pipeline::{self, classification_csv, likelihood_csv};
use tunnelrange::synth::{generate_campaign, verify_profile, SynthProfile};
use tunnelrange::threshold::{estimate_noise_stats, sweep_thresholds, threshold_grid};
use tunnelrange::{Error, RangeSample, RangingModel, Result};

const EXIT_INPUT: u8 = 2;
const EXIT_MD_ALL: u8 = 3;
const EXIT_FIT: u8 = 4;
const EXIT_OTHER: u8 = 1;

#[derive(Parser, Debug)]
#[command(name = "tunnelrange", version, about = "UWB channel analysis and TOA ranging with LOS/NLOS mitigation")]
struct Cli {
    /// Run configuration (JSON); missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed recorded in run summaries and used by the synthetic generator.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic campaign: manifest, CIR files and the profile used.
    Simulate {
        #[command(flatten)]
        profile: ProfileArgs,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also compare the generated campaign with the profile targets.
        #[arg(long)]
        verify: bool,
    },
    /// Extract channel features from every record of a manifest.
    Features {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold_dbm: Option<f64>,
    },
    /// Sweep detection thresholds and report the FA/MD trade-off.
    TuneThreshold {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        min_dbm: Option<f64>,
        #[arg(long)]
        max_dbm: Option<f64>,
        #[arg(long)]
        step_db: Option<f64>,
        #[arg(long)]
        fa_guard_ns: Option<f64>,
        /// Curve CSV destination.
        #[arg(long, default_value = "threshold_curve.csv")]
        out: PathBuf,
    },
    /// Overlap and correlation diagnostics of a labeled feature table.
    AnalyzeFeatures {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Fit the ranging model to a labeled feature table.
    Fit {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        prior_nlos: Option<f64>,
    },
    /// LOS/NLOS decisions and corrected distances.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Output CSV; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distance likelihood grids as `d_m,density` (prefixed by `record_id`
    /// unless a single record is selected).
    RangeLikelihood {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        grid_min_m: f64,
        #[arg(long)]
        grid_max_m: f64,
        #[arg(long, default_value_t = 0.25)]
        grid_step_m: f64,
        #[arg(long)]
        record_id: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline on a manifest, or on a campaign generated in memory.
    RunAll {
        #[arg(long, conflicts_with_all = ["profile", "preset"])]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        profile: ProfileArgs,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct ProfileArgs {
    /// Generator profile (JSON); missing fields take the tunnel defaults.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Preset {
    Tunnel,
    KirunaLike,
    NoiseOnly,
}

impl ProfileArgs {
    fn load(&self, seed: Option<u64>) -> Result<SynthProfile> {
        let mut profile = match (&self.profile, self.preset) {
            (Some(path), _) => io::read_json(path)?,
            (None, Some(Preset::KirunaLike)) => SynthProfile::kiruna_like(),
            (None, Some(Preset::NoiseOnly)) => SynthProfile::noise_only(),
            (None, _) => SynthProfile::default(),
        };
        if let Some(seed) = seed {
            profile.seed = seed;
        }
        profile.validate()?;
        Ok(profile)
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => io::write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("JSON values always serialize"));
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli)?;
    match cli.command {
        Command::Simulate {
            profile,
            out_dir,
            verify,
        } => {
            let profile = profile.load(cli.seed)?;
            let records = generate_campaign(&profile)?;
            let manifest = io::write_dataset(&out_dir, &profile.sweep, &records)?;
            io::write_json(&out_dir.join("profile.json"), &profile)?;
            let mut report = serde_json::json!({
                "manifest": manifest,
                "records": records.len(),
                "seed": profile.seed,
            });
            if verify {
                report["verification"] = serde_json::to_value(verify_profile(&records, &profile))?;
            }
            print_json(&report);
        }
        Command::Features {
            manifest,
            out,
            threshold_dbm,
        } => {
            if let Some(t) = threshold_dbm {
                config.threshold_dbm = t;
            }
            config.validate()?;
            let manifest = io::load_manifest(&manifest)?;
            let records = io::load_records(&manifest)?;
            let feature_config = tunnelrange::FeatureConfig {
                kurtosis_source: config.kurtosis_source,
            };
            let extraction = pipeline::extract_all(&records, config.threshold_dbm, &feature_config)?;
            io::write_features_csv(&out, &extraction.rows)?;
            print_json(&serde_json::json!({
                "records": records.len(),
                "detected": extraction.rows.len(),
                "missed_record_ids": extraction.missed,
            }));
            if !records.is_empty() && extraction.rows.is_empty() {
                return Err(Error::AllMissed(records.len()));
            }
        }
        Command::TuneThreshold {
            manifest,
            min_dbm,
            max_dbm,
            step_db,
            fa_guard_ns,
            out,
        } => {
            let g = &mut config.threshold_grid;
            g.min = min_dbm.unwrap_or(g.min);
            g.max = max_dbm.unwrap_or(g.max);
            g.step = step_db.unwrap_or(g.step);
            config.fa_guard_ns = fa_guard_ns.unwrap_or(config.fa_guard_ns);
            config.validate()?;
            let manifest = io::load_manifest(&manifest)?;
            let records = io::load_records(&manifest)?;
            let g = &config.threshold_grid;
            let curve = sweep_thresholds(&records, &threshold_grid(g.min, g.max, g.step)?, config.fa_guard_ns)?;
            let mut text = String::from("threshold_dbm,fa_rate,md_rate\n");
            for ((t, fa), md) in curve.thresholds.iter().zip(&curve.fa_rate).zip(&curve.md_rate) {
                text.push_str(&format!("{t},{fa},{md}\n"));
            }
            io::write_text(&out, &text)?;
            let noise = estimate_noise_stats(&records, config.noise_guard_ns).ok();
            print_json(&serde_json::json!({
                "selected_dbm": curve.selected_dbm,
                "noise": noise,
                "k_factor": noise.map(|n| curve.k_factor(&n)),
                "curve": out,
            }));
        }
        Command::AnalyzeFeatures { features, out_dir } => {
            let rows = io::read_features_csv(&features)?;
            let training: Vec<_> = rows.into_iter().filter(|r| r.class().is_some()).collect();
            let diag = build_diagnostics(&training, &nlos_errors(&training))?;
            pipeline::write_diagnostics(&out_dir, &diag)?;
            print_json(&serde_json::to_value(&diag)?);
        }
        Command::Fit {
            features,
            out,
            prior_nlos,
        } => {
            let prior = prior_nlos.unwrap_or(config.prior_nlos);
            let rows = io::read_features_csv(&features)?;
            let samples: Vec<RangeSample> = rows.iter().map(RangeSample::from).collect();
            let model = RangingModel::fit(&samples, prior).map_err(|e| match e {
                Error::InvalidInput(_) => e,
                other => Error::FitFailed(Box::new(other)),
            })?;
            io::write_model(&out, &model)?;
            print_json(&serde_json::json!({
                "model": model,
                "mitigation": pipeline::mitigation_stats(&rows, &model),
            }));
        }
        Command::Classify { model, features, out } => {
            let model = io::read_model(&model)?;
            let rows = io::read_features_csv(&features)?;
            emit(out.as_deref(), &classification_csv(&rows, &model).0)?;
        }
        Command::RangeLikelihood {
            model,
            features,
            grid_min_m,
            grid_max_m,
            grid_step_m,
            record_id,
            out,
        } => {
            let model = io::read_model(&model)?;
            let rows = io::read_features_csv(&features)?;
            let text = match record_id {
                Some(id) => {
                    let row = rows
                        .iter()
                        .find(|r| r.record_id == id)
                        .ok_or_else(|| Error::InvalidInput(format!("record `{id}` not in feature table")))?;
                    let mut text = String::from("d_m,density\n");
                    for (d, p) in model
                        .range_likelihood(&row.features)
                        .grid(grid_min_m, grid_max_m, grid_step_m)?
                    {
                        text.push_str(&format!("{d},{p}\n"));
                    }
                    text
                }
                None => likelihood_csv(&rows, &model, Some((grid_min_m, grid_max_m)), grid_step_m)?,
            };
            emit(out.as_deref(), &text)?;
        }
        Command::RunAll {
            manifest,
            profile,
            out_dir,
        } => {
            if let Some(dir) = out_dir {
                config.output_dir = dir;
            }
            config.validate()?;
            let summary = match manifest {
                Some(path) => pipeline::run_pipeline(&io::load_manifest(&path)?, &config)?,
                None => {
                    let profile = profile.load(cli.seed)?;
                    config.seed = profile.seed;
                    pipeline::run_records(&generate_campaign(&profile)?, &config)?
                }
            };
            print_json(&serde_json::to_value(&summary)?);
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::AllMissed(_) => EXIT_MD_ALL,
        Error::FitFailed(_) => EXIT_FIT,
        _ if err.is_input_error() => EXIT_INPUT,
        _ => EXIT_OTHER,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(&err))
        }
    }
}
