//! The eight channel propagation parameters of a thresholded PDP.
//!
//! Integrals over the observation window become Riemann sums on the uniform
//! delay grid. The window spans the `N` sample cells (`T = N·Δ`), so the
//! `1/T ∫ … dt` averages are plain sample means. All delays are absolute
//! (they include the CIR origin) and are reported in ns.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cir::{power_to_dbm, ImpulseResponse, PowerDelayProfile, REFERENCE_POWER_MW};
use crate::error::{Error, Result};
use crate::record::{LinkClass, Scenario};
use crate::SPEED_OF_LIGHT_M_PER_NS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelFeatures {
    /// First delay whose power is above threshold.
    pub toa_ns: f64,
    pub rss_dbm: f64,
    pub max_power_dbm: f64,
    pub mean_excess_delay_ns: f64,
    /// Span from the first to the last detected component.
    pub max_excess_delay_ns: f64,
    pub rms_delay_spread_ns: f64,
    /// Delay from the first detected component to the strongest one.
    pub rise_time_ns: f64,
    pub kurtosis: f64,
}

/// Names the eight parameters so they can be addressed as table columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Toa,
    Rss,
    MaxPower,
    MeanExcessDelay,
    MaxExcessDelay,
    RmsDelaySpread,
    RiseTime,
    Kurtosis,
}

impl Feature {
    pub const ALL: [Feature; 8] = [
        Feature::Toa,
        Feature::Rss,
        Feature::MaxPower,
        Feature::MeanExcessDelay,
        Feature::MaxExcessDelay,
        Feature::RmsDelaySpread,
        Feature::RiseTime,
        Feature::Kurtosis,
    ];

    /// Column name in the feature table.
    pub fn column(self) -> &'static str {
        match self {
            Feature::Toa => "toa_ns",
            Feature::Rss => "rss_dbm",
            Feature::MaxPower => "pmax_dbm",
            Feature::MeanExcessDelay => "mean_excess_ns",
            Feature::MaxExcessDelay => "max_excess_ns",
            Feature::RmsDelaySpread => "rms_ns",
            Feature::RiseTime => "rise_ns",
            Feature::Kurtosis => "kurtosis",
        }
    }

    pub fn of(self, f: &ChannelFeatures) -> f64 {
        match self {
            Feature::Toa => f.toa_ns,
            Feature::Rss => f.rss_dbm,
            Feature::MaxPower => f.max_power_dbm,
            Feature::MeanExcessDelay => f.mean_excess_delay_ns,
            Feature::MaxExcessDelay => f.max_excess_delay_ns,
            Feature::RmsDelaySpread => f.rms_delay_spread_ns,
            Feature::RiseTime => f.rise_time_ns,
            Feature::Kurtosis => f.kurtosis,
        }
    }

    fn slot(self, f: &mut ChannelFeatures) -> &mut f64 {
        match self {
            Feature::Toa => &mut f.toa_ns,
            Feature::Rss => &mut f.rss_dbm,
            Feature::MaxPower => &mut f.max_power_dbm,
            Feature::MeanExcessDelay => &mut f.mean_excess_delay_ns,
            Feature::MaxExcessDelay => &mut f.max_excess_delay_ns,
            Feature::RmsDelaySpread => &mut f.rms_delay_spread_ns,
            Feature::RiseTime => &mut f.rise_time_ns,
            Feature::Kurtosis => &mut f.kurtosis,
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.column() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown feature column `{s}`")))
    }
}

impl ChannelFeatures {
    /// Builds a feature vector from `(feature, value)` pairs; missing ones are 0.
    pub fn from_values(values: impl IntoIterator<Item = (Feature, f64)>) -> Self {
        let mut f = ChannelFeatures {
            toa_ns: 0.0,
            rss_dbm: 0.0,
            max_power_dbm: 0.0,
            mean_excess_delay_ns: 0.0,
            max_excess_delay_ns: 0.0,
            rms_delay_spread_ns: 0.0,
            rise_time_ns: 0.0,
            kurtosis: 0.0,
        };
        for (feature, v) in values {
            *feature.slot(&mut f) = v;
        }
        f
    }
}

/// One row of the feature table: a detected record with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub record_id: String,
    pub scenario: Option<Scenario>,
    pub true_distance_m: Option<f64>,
    pub features: ChannelFeatures,
}

impl FeatureRow {
    pub fn class(&self) -> Option<LinkClass> {
        self.scenario.map(Scenario::class)
    }

    /// Ranging error `c·τ₁ - d` in meters.
    pub fn range_error_m(&self) -> Option<f64> {
        self.true_distance_m
            .map(|d| SPEED_OF_LIGHT_M_PER_NS * self.features.toa_ns - d)
    }
}

/// Which magnitude sequence the kurtosis is computed on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KurtosisSource {
    /// Full `|h(t)|` over the observation window, noise included.
    #[default]
    Unthresholded,
    /// `sqrt(p_h(t))`, i.e. only the detected components.
    Thresholded,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    #[serde(default)]
    pub kurtosis_source: KurtosisSource,
}

pub fn extract_features(pdp: &PowerDelayProfile, cir: &ImpulseResponse) -> Result<ChannelFeatures> {
    extract_features_with(pdp, cir, &FeatureConfig::default())
}

pub fn extract_features_with(
    pdp: &PowerDelayProfile,
    cir: &ImpulseResponse,
    config: &FeatureConfig,
) -> Result<ChannelFeatures> {
    if pdp.power.len() != cir.len() || pdp.mask.len() != cir.len() {
        return Err(Error::InvalidInput(format!(
            "PDP length {} does not match CIR length {}",
            pdp.power.len(),
            cir.len()
        )));
    }
    let first = pdp.first_detected().ok_or(Error::NoSignalDetected)?;
    let last = pdp.last_detected().unwrap_or(first);
    let p_h = pdp.thresholded();
    let n = p_h.len() as f64;

    let total: f64 = p_h.iter().sum();
    // Earliest index wins on ties.
    let (peak, peak_power) = p_h
        .iter()
        .enumerate()
        .fold((first, p_h[first]), |best, (i, &p)| if p > best.1 { (i, p) } else { best });

    let detected = || (first..=last).filter(|&i| pdp.mask[i]);
    let mean_delay = detected().map(|i| pdp.delay_ns(i) * p_h[i]).sum::<f64>() / total;
    let spread = detected()
        .map(|i| {
            let dt = pdp.delay_ns(i) - mean_delay;
            dt * dt * p_h[i]
        })
        .sum::<f64>()
        / total;

    let toa = pdp.delay_ns(first);
    Ok(ChannelFeatures {
        toa_ns: toa,
        rss_dbm: 10.0 * (total / (n * REFERENCE_POWER_MW)).log10(),
        max_power_dbm: power_to_dbm(peak_power),
        mean_excess_delay_ns: mean_delay,
        max_excess_delay_ns: pdp.delay_ns(last) - toa,
        rms_delay_spread_ns: spread.max(0.0).sqrt(),
        rise_time_ns: pdp.delay_ns(peak) - toa,
        kurtosis: match config.kurtosis_source {
            KurtosisSource::Unthresholded => kurtosis(cir.taps.iter().map(|t| t.norm()))?,
            KurtosisSource::Thresholded => kurtosis(p_h.iter().map(|p| p.sqrt()))?,
        },
    })
}

/// Fourth standardized moment with population (1/N) moments.
pub fn kurtosis(values: impl Iterator<Item = f64> + Clone) -> Result<f64> {
    let (count, sum) = values.clone().fold((0usize, 0.0), |(c, s), v| (c + 1, s + v));
    if count == 0 {
        return Err(Error::DegenerateSignal("empty magnitude sequence".into()));
    }
    let n = count as f64;
    let mean = sum / n;
    let (m2, m4) = values.fold((0.0, 0.0), |(m2, m4), v| {
        let d2 = (v - mean) * (v - mean);
        (m2 + d2, m4 + d2 * d2)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    if m2 <= 0.0 {
        return Err(Error::DegenerateSignal("|h(t)| has zero variance".into()));
    }
    Ok(m4 / (m2 * m2))
}
