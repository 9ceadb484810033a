//! Statistical tunnel-channel generator.
//!
//! Records are built directly in the delay domain. The generator draws, per
//! record, the rise time and maximum excess delay from their class
//! distributions, places the first path so that the range error follows the
//! configured LOS bias or NLOS polynomial, fills in rise and tail taps, and
//! adds dB-Gaussian noise to every bin. Every feature the pipeline extracts
//! at the reference threshold then equals the drawn value exactly.

use num_complex::Complex64;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cir::{compute_pdp, dbm_to_power, ImpulseResponse, SweepConfig};
use crate::diagnostics::{mean, overlap_metric, sample_std};
use crate::error::{Error, Result};
use crate::features::extract_features;
use crate::record::{LinkClass, Scenario, SweepRecord};
use crate::SPEED_OF_LIGHT_M_PER_NS;

/// One value per measurement scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerScenario<T> {
    #[serde(rename = "LOS")]
    pub los: T,
    #[serde(rename = "NLOS-M")]
    pub nlos_m: T,
    #[serde(rename = "NLOS-P")]
    pub nlos_p: T,
    #[serde(rename = "NLOS-W")]
    pub nlos_w: T,
}

impl<T: Copy> PerScenario<T> {
    pub fn get(&self, s: Scenario) -> T {
        match s {
            Scenario::Los => self.los,
            Scenario::NlosMetal => self.nlos_m,
            Scenario::NlosPerson => self.nlos_p,
            Scenario::NlosWall => self.nlos_w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    /// Transmitter positions `[x, y]` in meters.
    pub tx: Vec<[f64; 2]>,
    /// Receiver positions `[x, y]` in meters.
    pub rx: Vec<[f64; 2]>,
    /// Records per (tx, rx) pair and scenario.
    pub repetitions: PerScenario<usize>,
}

impl Default for Geometry {
    /// Three transmitters near the tunnel axis, 30 receivers 10–39 m away.
    fn default() -> Self {
        Geometry {
            tx: vec![[0.0, 0.0], [0.0, 1.2], [-2.0, -0.8]],
            rx: (0..30).map(|i| [10.0 + i as f64, 0.4 * ((i % 3) as f64 - 1.0)]).collect(),
            repetitions: PerScenario {
                los: 10,
                nlos_m: 10,
                nlos_p: 10,
                nlos_w: 10,
            },
        }
    }
}

/// Strongest-path power: `reference_dbm − 10·exponent·log10(d) + N(0, shadowing)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerLaw {
    pub reference_dbm: f64,
    pub exponent: f64,
    pub shadowing_db: f64,
}

impl Default for PowerLaw {
    fn default() -> Self {
        PowerLaw {
            reference_dbm: 0.0,
            exponent: 1.6,
            shadowing_db: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Multipath {
    /// When false every record is a single tap.
    pub enabled: bool,
    /// Inclusive range of tail-tap counts between the peak and the last tap.
    pub tail_taps: [usize; 2],
    /// Most taps between the first path and the peak.
    pub max_rise_taps: usize,
    /// Weakest multipath tap, in dBm.
    pub floor_dbm: f64,
    /// Strongest path stays at least this far above the floor.
    pub peak_margin_db: f64,
    /// First-path attenuation below the peak, uniform in this range.
    pub los_first_path_drop_db: [f64; 2],
    pub nlos_first_path_drop_db: [f64; 2],
    /// Std of the dB jitter on tail taps.
    pub jitter_db: f64,
    /// LOS maximum excess delay, uniform in this range (ns).
    pub los_excess_delay_ns: [f64; 2],
    /// NLOS maximum excess delay, symmetric Beta over this range (ns),
    /// lower end raised to the rise time.
    pub nlos_excess_delay_ns: [f64; 2],
    pub nlos_beta_shape: f64,
}

impl Default for Multipath {
    fn default() -> Self {
        Multipath {
            enabled: true,
            tail_taps: [8, 24],
            max_rise_taps: 3,
            floor_dbm: -36.0,
            peak_margin_db: 6.0,
            los_first_path_drop_db: [3.0, 9.0],
            nlos_first_path_drop_db: [3.0, 15.0],
            jitter_db: 2.0,
            los_excess_delay_ns: [15.0, 170.0],
            nlos_excess_delay_ns: [10.0, 140.0],
            nlos_beta_shape: 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LosError {
    pub mean_m: f64,
    pub sigma_m: f64,
}

impl Default for LosError {
    fn default() -> Self {
        LosError {
            mean_m: -0.27,
            sigma_m: 0.16,
        }
    }
}

/// Alternative NLOS error: one of two Gaussian clusters, picked by whether
/// the excess delay is below `split_excess_delay_ns`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoCluster {
    pub centers_m: [f64; 2],
    pub split_excess_delay_ns: f64,
    pub sigma_m: f64,
}

impl Default for TwoCluster {
    fn default() -> Self {
        TwoCluster {
            centers_m: [10.0, 4.0],
            split_excess_delay_ns: 60.0,
            sigma_m: 1.61,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NlosBias {
    /// `[p2, p1, p0]`, excess delay in ns, error in m.
    pub poly: [f64; 3],
    pub sigma_m: f64,
    /// Smallest NLOS range error. Residuals around `g` are zero-mean with
    /// std `sigma_m` but skewed where `g` approaches this bound.
    pub min_error_m: f64,
    pub two_cluster: Option<TwoCluster>,
}

impl Default for NlosBias {
    fn default() -> Self {
        NlosBias {
            poly: [0.00087, -0.2, 11.72],
            sigma_m: 1.61,
            min_error_m: -0.75,
            two_cluster: None,
        }
    }
}

impl NlosBias {
    pub fn g(&self, tau_ns: f64) -> f64 {
        let [p2, p1, p0] = self.poly;
        (p2 * tau_ns + p1) * tau_ns + p0
    }

    /// Zero-mean residual with std `sigma` and support above
    /// `min_error_m − g(tau)`: a standardized Gamma whose shape is the
    /// largest that respects the bound, capped where it is already Gaussian.
    fn residual(&self, tau_ns: f64, sigma: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
        const MAX_SHAPE: f64 = 400.0;
        if sigma == 0.0 {
            return Ok(0.0);
        }
        let room = self.g(tau_ns) - self.min_error_m;
        let shape = (room / sigma).powi(2).min(MAX_SHAPE);
        let gamma = Gamma::new(shape, 1.0).map_err(|e| Error::InvalidProfile(e.to_string()))?;
        Ok(sigma * (gamma.sample(rng) - shape) / shape.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiseTime {
    pub los_rate_per_ns: f64,
    pub nlos_rate_per_ns: f64,
}

impl Default for RiseTime {
    fn default() -> Self {
        RiseTime {
            los_rate_per_ns: 0.333,
            nlos_rate_per_ns: 0.075,
        }
    }
}

impl RiseTime {
    pub fn rate(&self, class: LinkClass) -> f64 {
        match class {
            LinkClass::Los => self.los_rate_per_ns,
            LinkClass::Nlos => self.nlos_rate_per_ns,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Noise {
    pub enabled: bool,
    pub mean_dbm: f64,
    pub sigma_db: f64,
    /// Upper truncation of the dB-Gaussian, in units of `sigma_db`.
    pub clip_sigma: Option<f64>,
}

impl Default for Noise {
    fn default() -> Self {
        Noise {
            enabled: true,
            mean_dbm: -64.0,
            sigma_db: 6.0,
            clip_sigma: Some(3.3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthProfile {
    pub seed: u64,
    pub sweep: SweepConfig,
    pub geometry: Geometry,
    pub direct_path: PowerLaw,
    /// Extra attenuation of the strongest path per scenario (dB).
    pub scenario_loss_db: PerScenario<f64>,
    pub multipath: Multipath,
    pub los_error: LosError,
    pub nlos_bias: NlosBias,
    pub rise_time: RiseTime,
    pub noise: Noise,
    /// When false records contain noise only.
    pub signal_enabled: bool,
    /// Detection threshold used by `verify_profile`.
    pub reference_threshold_dbm: f64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        SynthProfile {
            seed: 0x5eed_2015,
            sweep: SweepConfig::default(),
            geometry: Geometry::default(),
            direct_path: PowerLaw::default(),
            scenario_loss_db: PerScenario {
                los: 0.0,
                nlos_m: 2.0,
                nlos_p: 1.0,
                nlos_w: 5.0,
            },
            multipath: Multipath::default(),
            los_error: LosError::default(),
            nlos_bias: NlosBias::default(),
            rise_time: RiseTime::default(),
            noise: Noise::default(),
            signal_enabled: true,
            reference_threshold_dbm: -43.8,
        }
    }
}

impl SynthProfile {
    /// Mine-tunnel flavour: coarser 2 ns grid, fewer records and more overlap
    /// between the class rise-time distributions.
    pub fn kiruna_like() -> Self {
        SynthProfile {
            sweep: SweepConfig {
                center_frequency_hz: 3.5e9,
                bandwidth_hz: 0.5e9,
                num_points: 751,
                time_resolution_s: 2.0e-9,
                observation_interval_s: 1.5e-6,
                ..SweepConfig::default()
            },
            geometry: Geometry {
                tx: vec![[0.0, 0.0]],
                rx: (0..8).map(|i| [35.0 + 5.0 * i as f64, 0.0]).collect(),
                repetitions: PerScenario {
                    los: 7,
                    nlos_m: 0,
                    nlos_p: 0,
                    nlos_w: 3,
                },
            },
            multipath: Multipath {
                los_excess_delay_ns: [30.0, 250.0],
                nlos_excess_delay_ns: [20.0, 130.0],
                ..Multipath::default()
            },
            los_error: LosError {
                mean_m: -0.4,
                sigma_m: 0.45,
            },
            nlos_bias: NlosBias {
                poly: [0.003, -0.4, 14.8],
                sigma_m: 2.2,
                min_error_m: -1.2,
                two_cluster: None,
            },
            rise_time: RiseTime {
                los_rate_per_ns: 1.0 / 7.0,
                nlos_rate_per_ns: 0.1,
            },
            ..SynthProfile::default()
        }
    }

    /// Same profile with signals switched off.
    pub fn noise_only() -> Self {
        SynthProfile {
            signal_enabled: false,
            ..SynthProfile::default()
        }
    }

    pub fn record_count(&self) -> usize {
        let reps: usize = Scenario::ALL.iter().map(|&s| self.geometry.repetitions.get(s)).sum();
        self.geometry.tx.len() * self.geometry.rx.len() * reps
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidProfile(msg));
        self.sweep
            .validate()
            .map_err(|e| Error::InvalidProfile(format!("sweep: {e}")))?;
        let positive = [
            ("rise_time.los_rate_per_ns", self.rise_time.los_rate_per_ns),
            ("rise_time.nlos_rate_per_ns", self.rise_time.nlos_rate_per_ns),
            ("los_error.sigma_m", self.los_error.sigma_m),
            ("nlos_bias.sigma_m", self.nlos_bias.sigma_m),
            ("noise.sigma_db", self.noise.sigma_db),
            ("multipath.nlos_beta_shape", self.multipath.nlos_beta_shape),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let non_negative = [
            ("direct_path.shadowing_db", self.direct_path.shadowing_db),
            ("multipath.jitter_db", self.multipath.jitter_db),
            ("multipath.peak_margin_db", self.multipath.peak_margin_db),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        let mp = &self.multipath;
        let ranges = [
            ("los_first_path_drop_db", mp.los_first_path_drop_db),
            ("nlos_first_path_drop_db", mp.nlos_first_path_drop_db),
            ("los_excess_delay_ns", mp.los_excess_delay_ns),
            ("nlos_excess_delay_ns", mp.nlos_excess_delay_ns),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
                return bad(format!("multipath.{name} must be an increasing non-negative range"));
            }
        }
        if mp.los_first_path_drop_db[0] < 3.0 || mp.nlos_first_path_drop_db[0] < 3.0 {
            return bad("first-path drops below 3 dB would compete with the peak".into());
        }
        if mp.tail_taps[0] > mp.tail_taps[1] {
            return bad("multipath.tail_taps must be [min, max]".into());
        }
        if let Some(k) = self.noise.clip_sigma {
            if !(k > 0.0) {
                return bad("noise.clip_sigma must be positive".into());
            }
        }
        for (i, c) in self.nlos_bias.poly.iter().enumerate() {
            if !c.is_finite() {
                return bad(format!("nlos_bias.poly[{i}] is not finite"));
            }
        }
        if self.signal_enabled && self.geometry.repetitions.nlos_w > 0 && self.nlos_bias.two_cluster.is_none() {
            let [lo, hi] = mp.nlos_excess_delay_ns;
            let vertex = if self.nlos_bias.poly[0] != 0.0 {
                -self.nlos_bias.poly[1] / (2.0 * self.nlos_bias.poly[0])
            } else {
                lo
            };
            let min_g = [lo, hi, vertex.clamp(lo, hi)]
                .into_iter()
                .map(|t| self.nlos_bias.g(t))
                .fold(f64::INFINITY, f64::min);
            if !(min_g > self.nlos_bias.min_error_m) {
                return bad(format!(
                    "NLOS bias polynomial reaches {min_g:.3} m on the excess-delay range, not above min_error_m = {}; \
                     the first path would precede the direct path",
                    self.nlos_bias.min_error_m
                ));
            }
        }
        Ok(())
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn phasor(rng: &mut ChaCha8Rng, power_mw: f64) -> Complex64 {
    Complex64::from_polar(power_mw.sqrt(), rng.random_range(0.0..std::f64::consts::TAU))
}

struct Job {
    index: usize,
    tx: usize,
    rx: usize,
    scenario: Scenario,
    rep: usize,
}

/// Generates every record of the campaign, ordered by transmitter, receiver,
/// scenario and repetition.
pub fn generate_campaign(profile: &SynthProfile) -> Result<Vec<SweepRecord>> {
    profile.validate()?;
    let g = &profile.geometry;
    let mut jobs = Vec::with_capacity(profile.record_count());
    for tx in 0..g.tx.len() {
        for rx in 0..g.rx.len() {
            for scenario in Scenario::ALL {
                for rep in 0..g.repetitions.get(scenario) {
                    jobs.push(Job {
                        index: jobs.len(),
                        tx,
                        rx,
                        scenario,
                        rep,
                    });
                }
            }
        }
    }
    let results: Vec<Result<SweepRecord>> = jobs.par_iter().map(|job| generate_record(profile, job)).collect();
    results.into_iter().collect()
}

fn generate_record(profile: &SynthProfile, job: &Job) -> Result<SweepRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    rng.set_stream(job.index as u64);

    let record_id = format!("t{:02}-r{:02}-{}-{:02}", job.tx, job.rx, job.scenario, job.rep);
    let d = distance(profile.geometry.tx[job.tx], profile.geometry.rx[job.rx]);
    let n = profile.sweep.num_points;
    let step_ns = profile.sweep.time_resolution_s * 1e9;
    let mut taps = vec![Complex64::new(0.0, 0.0); n];

    if profile.signal_enabled {
        place_signal(profile, job.scenario, d, &mut rng, &mut taps).map_err(|e| e.in_record(&record_id))?;
    }
    if profile.noise.enabled {
        let nz = &profile.noise;
        for tap in taps.iter_mut() {
            let z = loop {
                let z = gaussian(&mut rng);
                if nz.clip_sigma.map_or(true, |k| z <= k) {
                    break z;
                }
            };
            *tap += phasor(&mut rng, dbm_to_power(nz.mean_dbm + nz.sigma_db * z));
        }
    }

    Ok(SweepRecord {
        record_id,
        tx_id: format!("t{:02}", job.tx),
        rx_id: format!("r{:02}", job.rx),
        true_distance_m: Some(d),
        scenario: Some(job.scenario),
        cir: ImpulseResponse::new(taps, step_ns * 1e-9)?,
    })
}

fn place_signal(
    profile: &SynthProfile,
    scenario: Scenario,
    d: f64,
    rng: &mut ChaCha8Rng,
    taps: &mut [Complex64],
) -> Result<()> {
    let mp = &profile.multipath;
    let class = scenario.class();
    let step_ns = profile.sweep.time_resolution_s * 1e9;
    let bin_m = SPEED_OF_LIGHT_M_PER_NS * step_ns;
    let n = taps.len();
    let to_bins = |ns: f64| (ns / step_ns).round() as usize;

    // rise time and maximum excess delay, in bins
    let (rise, excess) = if mp.enabled {
        let range = match class {
            LinkClass::Los => mp.los_excess_delay_ns,
            LinkClass::Nlos => mp.nlos_excess_delay_ns,
        };
        let max_rise = to_bins(range[1]);
        let exp = Exp::new(profile.rise_time.rate(class)).map_err(|e| Error::InvalidProfile(e.to_string()))?;
        let rise = loop {
            let r = to_bins(exp.sample(rng));
            if r < max_rise {
                break r;
            }
        };
        let excess_ns = match class {
            LinkClass::Los => uniform(rng, range),
            LinkClass::Nlos => {
                let lo = range[0].max(rise as f64 * step_ns);
                let beta = Beta::new(mp.nlos_beta_shape, mp.nlos_beta_shape)
                    .map_err(|e| Error::InvalidProfile(e.to_string()))?;
                lo + beta.sample(rng) * (range[1] - lo)
            }
        };
        (rise, to_bins(excess_ns).max(rise))
    } else {
        (0, 0)
    };
    let excess_ns = excess as f64 * step_ns;

    // range error; the grid adds uniform rounding error, so remove its variance
    let rounding_var = bin_m * bin_m / 12.0;
    let eff = |sigma: f64| (sigma * sigma - rounding_var).max(0.0).sqrt();
    let error_m = match class {
        LinkClass::Los => profile.los_error.mean_m + eff(profile.los_error.sigma_m) * gaussian(rng),
        LinkClass::Nlos => match profile.nlos_bias.two_cluster {
            Some(tc) => {
                let c = if excess_ns < tc.split_excess_delay_ns { tc.centers_m[0] } else { tc.centers_m[1] };
                c + eff(tc.sigma_m) * gaussian(rng)
            }
            None => {
                let nb = &profile.nlos_bias;
                nb.g(excess_ns) + nb.residual(excess_ns, eff(nb.sigma_m), rng)?
            }
        },
    };
    let first_m = d + error_m;
    if first_m < 0.0 {
        return Err(Error::InvalidProfile(format!(
            "range error {error_m:.2} m places the first path before delay zero"
        )));
    }
    let first = (first_m / bin_m).round() as usize;
    if first + excess >= n {
        return Err(Error::InvalidProfile(format!(
            "first path at bin {first} plus excess delay of {excess} bins exceeds the {n}-point record"
        )));
    }

    // strongest path
    let path_loss = 10.0 * profile.direct_path.exponent * d.max(1.0).log10();
    let peak_dbm = (profile.direct_path.reference_dbm - path_loss
        + profile.direct_path.shadowing_db * gaussian(rng)
        - profile.scenario_loss_db.get(scenario))
    .max(mp.floor_dbm + mp.peak_margin_db);
    let peak = first + rise;
    let below_peak = peak_dbm - 3.0;
    let floor = mp.floor_dbm.min(below_peak);
    taps[peak] = phasor(rng, dbm_to_power(peak_dbm));

    if rise > 0 {
        let drop = match class {
            LinkClass::Los => mp.los_first_path_drop_db,
            LinkClass::Nlos => mp.nlos_first_path_drop_db,
        };
        let first_dbm = (peak_dbm - uniform(rng, drop)).max(floor);
        taps[first] = phasor(rng, dbm_to_power(first_dbm));
        let count = mp.max_rise_taps.min(rise - 1);
        for k in index::sample(rng, rise - 1, count).into_vec() {
            let p = uniform(rng, [(peak_dbm - 15.0).max(floor), below_peak]);
            taps[first + 1 + k] = phasor(rng, dbm_to_power(p));
        }
    }

    let end = first + excess;
    if end > peak {
        let span = (end - peak) as f64;
        let count = rng.random_range(mp.tail_taps[0]..=mp.tail_taps[1]).min(end - peak - 1);
        for k in index::sample(rng, end - peak - 1, count).into_vec() {
            let bin = peak + 1 + k;
            let frac = (bin - peak) as f64 / span;
            let p = below_peak + frac * (floor - below_peak) + mp.jitter_db * gaussian(rng);
            taps[bin] = phasor(rng, dbm_to_power(p.clamp(floor, below_peak)));
        }
        taps[end] = phasor(rng, dbm_to_power(floor));
    }
    Ok(())
}

/// One measured statistic against its generator target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub target: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn abs(name: &str, measured: f64, target: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            measured,
            target,
            tolerance,
            pass: (measured - target).abs() <= tolerance,
        }
    }

    fn rel(name: &str, measured: f64, target: f64, fraction: f64) -> Self {
        Check::abs(name, measured, target, fraction * target.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub records: usize,
    pub missed_detections: usize,
    pub extraction_failures: usize,
    /// Rise-time overlap between the classes, when both are present.
    pub rise_time_overlap: Option<f64>,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Re-extracts features at the profile's reference threshold and compares
/// their statistics with the generator targets.
pub fn verify_profile(records: &[SweepRecord], profile: &SynthProfile) -> VerifyReport {
    let extracted: Vec<_> = records
        .par_iter()
        .map(|r| compute_pdp(&r.cir, profile.reference_threshold_dbm).and_then(|pdp| extract_features(&pdp, &r.cir)))
        .collect();

    let mut missed = 0;
    let mut failures = 0;
    let mut rise = [Vec::new(), Vec::new()];
    let mut los_err = Vec::new();
    let mut nlos_resid = Vec::new();
    let mut soft_err = [Vec::new(), Vec::new()];
    for (r, f) in records.iter().zip(&extracted) {
        let f = match f {
            Ok(f) => f,
            Err(Error::NoSignalDetected) => {
                missed += 1;
                continue;
            }
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        let Some(scenario) = r.scenario else { continue };
        let err = r.true_distance_m.map(|d| SPEED_OF_LIGHT_M_PER_NS * f.toa_ns - d);
        match scenario.class() {
            LinkClass::Los => rise[0].push(f.rise_time_ns),
            LinkClass::Nlos => rise[1].push(f.rise_time_ns),
        }
        let Some(err) = err else { continue };
        match scenario {
            Scenario::Los => los_err.push(err),
            Scenario::NlosMetal => soft_err[0].push(err),
            Scenario::NlosPerson => soft_err[1].push(err),
            Scenario::NlosWall => {
                if profile.nlos_bias.two_cluster.is_none() {
                    nlos_resid.push(err - profile.nlos_bias.g(f.max_excess_delay_ns))
                }
            }
        }
    }

    let mut checks = Vec::new();
    let md_rate = if records.is_empty() { 0.0 } else { missed as f64 / records.len() as f64 };
    checks.push(if profile.signal_enabled {
        Check::abs("missed_detection_rate", md_rate, 0.0, 0.01)
    } else {
        Check::abs("missed_detection_rate", md_rate, 1.0, 0.0)
    });
    if profile.signal_enabled {
        let rt = &profile.rise_time;
        for (samples, rate, name) in [
            (&rise[0], rt.los_rate_per_ns, "los_mean_rise_time_ns"),
            (&rise[1], rt.nlos_rate_per_ns, "nlos_mean_rise_time_ns"),
        ] {
            if !samples.is_empty() {
                checks.push(Check::rel(name, mean(samples), 1.0 / rate, 0.15));
            }
        }
        if los_err.len() >= 2 {
            checks.push(Check::rel("los_error_std_m", sample_std(&los_err), profile.los_error.sigma_m, 0.10));
        }
        if nlos_resid.len() >= 2 {
            checks.push(Check::rel(
                "nlos_residual_std_m",
                sample_std(&nlos_resid),
                profile.nlos_bias.sigma_m,
                0.15,
            ));
        }
        for (samples, name) in [(&soft_err[0], "nlos_m_mean_error_m"), (&soft_err[1], "nlos_p_mean_error_m")] {
            if !samples.is_empty() {
                checks.push(Check::abs(name, mean(samples), 0.0, 0.5));
            }
        }
    }

    VerifyReport {
        records: records.len(),
        missed_detections: missed,
        extraction_failures: failures,
        rise_time_overlap: overlap_metric(&rise[0], &rise[1]).ok(),
        checks,
    }
}
