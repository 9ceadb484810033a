//! Frequency sweep → impulse response → thresholded power-delay profile.
//!
//! Power values are `|h|²` in mW, so `10·log10(|h|² / 1 mW)` is the dBm level
//! the detection threshold is compared against.
//!
//! Transform convention: the inverse DFT is unitary (`1/√N`), which makes
//! `Σ|X_k|² = Σ|h_n|²`. Frequency samples are expected to be normalised so that
//! a flat spectrum carrying 0 dBm in total (`|X_k|² = 1/N`) produces a single
//! 0 dBm tap. A raw calibrated S21 sweep (`|S21| = 1` at the calibration
//! reference) is brought to this scale by [`FrequencyResponse::from_s21`].
//! The Hann window is normalised to unit mean so that windowing does not move
//! the peak level of a flat spectrum.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reference power of the dBm scale, in the unit of `|h|²`.
pub const REFERENCE_POWER_MW: f64 = 1.0;

/// Power in mW → dBm.
#[inline]
pub fn power_to_dbm(power_mw: f64) -> f64 {
    10.0 * (power_mw / REFERENCE_POWER_MW).log10()
}

/// dBm → power in mW.
#[inline]
pub fn dbm_to_power(dbm: f64) -> f64 {
    REFERENCE_POWER_MW * 10f64.powf(dbm / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    None,
}

impl Window {
    /// Window coefficients, scaled to unit mean.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::None => vec![1.0; n],
            Window::Hann => {
                if n < 2 {
                    return vec![1.0; n];
                }
                let raw: Vec<f64> = (0..n)
                    .map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / (n - 1) as f64).cos()))
                    .collect();
                let mean = raw.iter().sum::<f64>() / n as f64;
                raw.into_iter().map(|w| w / mean).collect()
            }
        }
    }
}

/// Sweep geometry of the sounder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub center_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub num_points: usize,
    pub time_resolution_s: f64,
    pub observation_interval_s: f64,
    pub reference_power_mw: f64,
    pub window: Window,
}

impl Default for SweepConfig {
    /// 3001-point sweep over 2.5–4.5 GHz with a Hann window.
    fn default() -> Self {
        SweepConfig {
            center_frequency_hz: 3.5e9,
            bandwidth_hz: 2.0e9,
            num_points: 3001,
            time_resolution_s: 0.5e-9,
            observation_interval_s: 1.5e-6,
            reference_power_mw: REFERENCE_POWER_MW,
            window: Window::Hann,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("sweep config: {msg}")));
        if self.num_points < 2 {
            return bad("num_points must be at least 2");
        }
        if !(self.time_resolution_s > 0.0 && self.time_resolution_s.is_finite()) {
            return bad("time_resolution_s must be positive");
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return bad("bandwidth_hz must be positive");
        }
        if !(self.center_frequency_hz - self.bandwidth_hz / 2.0 > 0.0) {
            return bad("lowest swept frequency must be positive");
        }
        if self.reference_power_mw != REFERENCE_POWER_MW {
            return bad("reference_power_mw must be 1 (dBm scale)");
        }
        let span = (self.num_points - 1) as f64 * self.time_resolution_s;
        if ((span - self.observation_interval_s) / self.observation_interval_s).abs() > 1e-9 {
            return bad("observation_interval_s must equal (num_points - 1) * time_resolution_s");
        }
        Ok(())
    }

    pub fn start_frequency_hz(&self) -> f64 {
        self.center_frequency_hz - self.bandwidth_hz / 2.0
    }

    pub fn frequency_step_hz(&self) -> f64 {
        self.bandwidth_hz / (self.num_points - 1) as f64
    }

    /// Swept frequencies, lowest first.
    pub fn frequencies(&self) -> Vec<f64> {
        let f0 = self.start_frequency_hz();
        let df = self.frequency_step_hz();
        (0..self.num_points).map(|k| f0 + k as f64 * df).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponse {
    pub samples: Vec<Complex64>,
    pub config: SweepConfig,
}

impl FrequencyResponse {
    pub fn new(samples: Vec<Complex64>, config: SweepConfig) -> Result<Self> {
        let fr = FrequencyResponse { samples, config };
        fr.validate()?;
        Ok(fr)
    }

    /// Rescales a calibrated S21 sweep (unit magnitude at the calibration
    /// reference) onto the unitary power scale.
    pub fn from_s21(s21: Vec<Complex64>, config: SweepConfig) -> Result<Self> {
        let scale = 1.0 / (s21.len().max(1) as f64).sqrt();
        Self::new(s21.into_iter().map(|x| x * scale).collect(), config)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.samples.len() != self.config.num_points {
            return Err(Error::InvalidInput(format!(
                "frequency response has {} samples, config expects {}",
                self.samples.len(),
                self.config.num_points
            )));
        }
        check_finite(&self.samples, "frequency sample")
    }
}

/// Complex baseband impulse response on a uniform delay grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub taps: Vec<Complex64>,
    pub delay_step_s: f64,
    pub origin_delay_s: f64,
}

impl ImpulseResponse {
    pub fn new(taps: Vec<Complex64>, delay_step_s: f64) -> Result<Self> {
        let cir = ImpulseResponse {
            taps,
            delay_step_s,
            origin_delay_s: 0.0,
        };
        cir.validate()?;
        Ok(cir)
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps.is_empty() {
            return Err(Error::InvalidInput("impulse response has no taps".into()));
        }
        if !(self.delay_step_s > 0.0 && self.delay_step_s.is_finite()) {
            return Err(Error::InvalidInput("delay_step_s must be positive".into()));
        }
        if !self.origin_delay_s.is_finite() || self.origin_delay_s < 0.0 {
            return Err(Error::InvalidInput(
                "origin_delay_s must be finite and non-negative".into(),
            ));
        }
        check_finite(&self.taps, "tap")
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Delay of tap `i` in ns.
    #[inline]
    pub fn delay_ns(&self, i: usize) -> f64 {
        self.origin_delay_s * 1e9 + i as f64 * (self.delay_step_s * 1e9)
    }
}

fn check_finite(values: &[Complex64], what: &str) -> Result<()> {
    match values.iter().position(|c| !(c.re.is_finite() && c.im.is_finite())) {
        Some(i) => Err(Error::InvalidInput(format!("{what} {i} is not finite"))),
        None => Ok(()),
    }
}

fn unitary_transform(mut buf: Vec<Complex64>, inverse: bool) -> Vec<Complex64> {
    let n = buf.len();
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    fft.process(&mut buf);
    let scale = 1.0 / (n as f64).sqrt();
    buf.iter_mut().for_each(|x| *x *= scale);
    buf
}

/// Windowed, unitary inverse DFT of a sweep. Tap `n` sits at delay
/// `n · time_resolution`.
pub fn ingest_frequency_response(raw: &FrequencyResponse) -> Result<ImpulseResponse> {
    raw.validate()?;
    let window = raw.config.window.coefficients(raw.samples.len());
    let windowed: Vec<Complex64> = raw
        .samples
        .iter()
        .zip(&window)
        .map(|(x, w)| x * *w)
        .collect();
    Ok(ImpulseResponse {
        taps: unitary_transform(windowed, true),
        delay_step_s: raw.config.time_resolution_s,
        origin_delay_s: 0.0,
    })
}

/// Forward unitary DFT of a CIR back onto the sweep grid (no window applied).
pub fn to_frequency_response(cir: &ImpulseResponse, config: &SweepConfig) -> Result<FrequencyResponse> {
    cir.validate()?;
    config.validate()?;
    if cir.len() != config.num_points {
        return Err(Error::InvalidInput(format!(
            "impulse response has {} taps, config expects {}",
            cir.len(),
            config.num_points
        )));
    }
    Ok(FrequencyResponse {
        samples: unitary_transform(cir.taps.clone(), false),
        config: config.clone(),
    })
}

/// `|h|²` on the delay grid together with the detection mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerDelayProfile {
    pub power: Vec<f64>,
    pub delay_step_s: f64,
    pub origin_delay_s: f64,
    pub threshold_dbm: f64,
    pub mask: Vec<bool>,
}

impl PowerDelayProfile {
    /// Thresholded profile: power where the mask is set, zero elsewhere.
    pub fn thresholded(&self) -> Vec<f64> {
        self.power
            .iter()
            .zip(&self.mask)
            .map(|(&p, &m)| if m { p } else { 0.0 })
            .collect()
    }

    #[inline]
    pub fn delay_ns(&self, i: usize) -> f64 {
        self.origin_delay_s * 1e9 + i as f64 * (self.delay_step_s * 1e9)
    }

    pub fn first_detected(&self) -> Option<usize> {
        self.mask.iter().position(|&m| m)
    }

    pub fn last_detected(&self) -> Option<usize> {
        self.mask.iter().rposition(|&m| m)
    }

    pub fn detected_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Squares the taps and marks samples strictly above `threshold_dbm`.
pub fn compute_pdp(cir: &ImpulseResponse, threshold_dbm: f64) -> Result<PowerDelayProfile> {
    cir.validate()?;
    if !threshold_dbm.is_finite() {
        return Err(Error::InvalidInput("threshold must be finite".into()));
    }
    let power: Vec<f64> = cir.taps.iter().map(|t| t.norm_sqr()).collect();
    let mask = power
        .iter()
        .map(|&p| power_to_dbm(p) > threshold_dbm)
        .collect();
    Ok(PowerDelayProfile {
        power,
        delay_step_s: cir.delay_step_s,
        origin_delay_s: cir.origin_delay_s,
        threshold_dbm,
        mask,
    })
}
