//! UWB channel-sounding analysis for TOA ranging in tunnels.
//!
//! Raw soundings become power-delay profiles, then eight channel features,
//! then a fitted statistical ranging model with soft LOS/NLOS identification
//! and NLOS-error mitigation. [`synth`] generates tunnel-like campaigns with
//! known ground truth and [`pipeline`] ties everything into file-based runs.

pub mod cir;
pub mod diagnostics;
pub mod error;
pub mod features;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod record;
pub mod synth;
pub mod threshold;

/// Propagation speed used for every delay-to-distance conversion.
pub const SPEED_OF_LIGHT_M_PER_NS: f64 = 0.3;

pub use cir::{
    compute_pdp, ingest_frequency_response, FrequencyResponse, ImpulseResponse, PowerDelayProfile, SweepConfig,
    Window,
};
pub use diagnostics::{build_diagnostics, correlation, overlap_metric, FeatureDiagnostics};
pub use error::{Error, Result};
pub use features::{extract_features, ChannelFeatures, Feature, FeatureConfig, FeatureRow};
pub use model::{PointEstimate, RangeLikelihood, RangeSample, RangingModel};
pub use record::{LinkClass, Scenario, SweepRecord};
pub use threshold::{estimate_noise_stats, sweep_thresholds, NoiseStats, ThresholdCurve};
