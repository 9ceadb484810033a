//! Statistical ranging model: LOS bias, NLOS error as a quadratic in the
//! maximum excess delay, exponential rise-time likelihoods, the LOS/NLOS
//! posterior, hard-decision ranging and the two-component distance likelihood.
//!
//! Every delay in here is in ns and every distance in meters.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{mean, sample_std};
use crate::error::{Error, Result};
use crate::features::{ChannelFeatures, FeatureRow};
use crate::record::LinkClass;
use crate::SPEED_OF_LIGHT_M_PER_NS;

/// Fewest NLOS samples `fit` accepts.
pub const MIN_NLOS_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeSample {
    pub features: ChannelFeatures,
    pub true_distance_m: Option<f64>,
    pub class: Option<LinkClass>,
}

impl RangeSample {
    pub fn range_error_m(&self) -> Option<f64> {
        self.true_distance_m
            .map(|d| SPEED_OF_LIGHT_M_PER_NS * self.features.toa_ns - d)
    }
}

impl From<&FeatureRow> for RangeSample {
    fn from(row: &FeatureRow) -> Self {
        RangeSample {
            features: row.features,
            true_distance_m: row.true_distance_m,
            class: row.class(),
        }
    }
}

/// Fitted ranging constants. The JSON field names are the model-file format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangingModel {
    #[serde(rename = "mu_L_m")]
    pub mu_los_m: f64,
    #[serde(rename = "sigma_L_m")]
    pub sigma_los_m: f64,
    #[serde(rename = "sigma_N_m")]
    pub sigma_nlos_m: f64,
    /// `[p2, p1, p0]` of `g(τ) = p2·τ² + p1·τ + p0`, τ in ns, g in m.
    pub poly: [f64; 3],
    #[serde(rename = "lambda_L_per_ns")]
    pub lambda_los_per_ns: f64,
    #[serde(rename = "lambda_N_per_ns")]
    pub lambda_nlos_per_ns: f64,
    pub prior_nlos: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointEstimate {
    pub distance_m: f64,
    pub class: LinkClass,
    pub posterior_nlos: f64,
}

impl RangingModel {
    /// Reference constants for a narrow concrete service tunnel.
    pub fn tunnel_reference() -> Self {
        RangingModel {
            mu_los_m: -0.27,
            sigma_los_m: 0.16,
            sigma_nlos_m: 1.61,
            poly: [0.00087, -0.2, 11.72],
            lambda_los_per_ns: 0.333,
            lambda_nlos_per_ns: 0.075,
            prior_nlos: DEFAULT_PRIOR_NLOS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma_L_m", self.sigma_los_m),
            ("sigma_N_m", self.sigma_nlos_m),
            ("lambda_L_per_ns", self.lambda_los_per_ns),
            ("lambda_N_per_ns", self.lambda_nlos_per_ns),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("model {name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.prior_nlos) {
            return Err(Error::InvalidInput(format!(
                "model prior_nlos must lie in [0, 1], got {}",
                self.prior_nlos
            )));
        }
        if !(self.mu_los_m.is_finite() && self.poly.iter().all(|p| p.is_finite())) {
            return Err(Error::InvalidInput("model coefficients must be finite".into()));
        }
        Ok(())
    }

    /// NLOS range error predicted from the maximum excess delay. Not clamped.
    pub fn g(&self, tau_max_ns: f64) -> f64 {
        let [p2, p1, p0] = self.poly;
        (p2 * tau_max_ns + p1) * tau_max_ns + p0
    }

    /// `p(NLOS | τ_RT)` under exponential rise-time likelihoods.
    pub fn posterior_nlos(&self, tau_rt_ns: f64) -> f64 {
        let prior = self.prior_nlos;
        if prior <= 0.0 {
            return 0.0;
        }
        if prior >= 1.0 {
            return 1.0;
        }
        // log-odds avoids 0/0 when both densities underflow
        let log_nlos = (prior * self.lambda_nlos_per_ns).ln() - self.lambda_nlos_per_ns * tau_rt_ns;
        let log_los = ((1.0 - prior) * self.lambda_los_per_ns).ln() - self.lambda_los_per_ns * tau_rt_ns;
        1.0 / (1.0 + (log_los - log_nlos).exp())
    }

    /// Hard decision (NLOS only when the posterior exceeds 1/2) and the
    /// corresponding bias-corrected distance.
    pub fn point_estimate(&self, features: &ChannelFeatures) -> PointEstimate {
        let posterior_nlos = self.posterior_nlos(features.rise_time_ns);
        let range = SPEED_OF_LIGHT_M_PER_NS * features.toa_ns;
        let (class, distance_m) = if posterior_nlos > 0.5 {
            (LinkClass::Nlos, range - self.g(features.max_excess_delay_ns))
        } else {
            (LinkClass::Los, range - self.mu_los_m)
        };
        PointEstimate {
            distance_m,
            class,
            posterior_nlos,
        }
    }

    pub fn range_likelihood(&self, features: &ChannelFeatures) -> RangeLikelihood {
        self.likelihood_with_posterior(features, self.posterior_nlos(features.rise_time_ns))
    }

    /// Mixture likelihood with an externally supplied NLOS posterior.
    pub fn likelihood_with_posterior(&self, features: &ChannelFeatures, posterior_nlos: f64) -> RangeLikelihood {
        let range = SPEED_OF_LIGHT_M_PER_NS * features.toa_ns;
        let p = posterior_nlos.clamp(0.0, 1.0);
        RangeLikelihood {
            components: [
                MixtureComponent {
                    weight: 1.0 - p,
                    mean_m: range - self.mu_los_m,
                    std_m: self.sigma_los_m,
                },
                MixtureComponent {
                    weight: p,
                    mean_m: range - self.g(features.max_excess_delay_ns),
                    std_m: self.sigma_nlos_m,
                },
            ],
        }
    }

    /// Fits every constant except the prior, which is supplied.
    pub fn fit(samples: &[RangeSample], prior_nlos: f64) -> Result<RangingModel> {
        if !(0.0..=1.0).contains(&prior_nlos) {
            return Err(Error::InvalidInput(format!("prior_nlos {prior_nlos} outside [0, 1]")));
        }
        let mut los_err = Vec::new();
        let mut los_rt = Vec::new();
        let mut nlos_err = Vec::new();
        let mut nlos_tmax = Vec::new();
        let mut nlos_rt = Vec::new();
        for s in samples {
            let (Some(class), Some(err)) = (s.class, s.range_error_m()) else {
                continue;
            };
            match class {
                LinkClass::Los => {
                    los_err.push(err);
                    los_rt.push(s.features.rise_time_ns);
                }
                LinkClass::Nlos => {
                    nlos_err.push(err);
                    nlos_tmax.push(s.features.max_excess_delay_ns);
                    nlos_rt.push(s.features.rise_time_ns);
                }
            }
        }
        if los_err.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "{} labeled LOS samples, need at least 2",
                los_err.len()
            )));
        }
        if nlos_err.len() < MIN_NLOS_SAMPLES {
            return Err(Error::InsufficientData(format!(
                "{} labeled NLOS samples, need at least {MIN_NLOS_SAMPLES}",
                nlos_err.len()
            )));
        }

        let mu_los_m = mean(&los_err);
        let sigma_los_m = sample_std(&los_err);
        let poly = fit_quadratic(&nlos_tmax, &nlos_err)?;
        let mitigated: Vec<f64> = nlos_tmax
            .iter()
            .zip(&nlos_err)
            .map(|(&t, &e)| e - eval_poly(&poly, t))
            .collect();
        let sigma_nlos_m = sample_std(&mitigated);

        let rate = |rt: &[f64], class: &str| {
            let m = mean(rt);
            if m > 0.0 {
                Ok(1.0 / m)
            } else {
                Err(Error::DegenerateFit(format!("{class} rise times are all zero")))
            }
        };
        let model = RangingModel {
            mu_los_m,
            sigma_los_m,
            sigma_nlos_m,
            poly,
            lambda_los_per_ns: rate(&los_rt, "LOS")?,
            lambda_nlos_per_ns: rate(&nlos_rt, "NLOS")?,
            prior_nlos,
        };
        if !(sigma_los_m > 0.0 && sigma_nlos_m > 0.0) {
            return Err(Error::DegenerateFit("zero residual spread".into()));
        }
        Ok(model)
    }
}

/// Default NLOS prior when the floor-plan geometry is not modelled.
pub const DEFAULT_PRIOR_NLOS: f64 = 0.25;

fn eval_poly(poly: &[f64; 3], x: f64) -> f64 {
    (poly[0] * x + poly[1]) * x + poly[2]
}

/// Ordinary least squares for `y ≈ p2·x² + p1·x + p0`, returned as `[p2, p1, p0]`.
pub fn fit_quadratic(x: &[f64], y: &[f64]) -> Result<[f64; 3]> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput("x and y lengths differ".into()));
    }
    if x.len() < 3 {
        return Err(Error::DegenerateFit("a quadratic needs at least three points".into()));
    }
    let n = x.len();
    let mut design = DMatrix::from_fn(n, 3, |i, j| x[i].powi(2 - j as i32));
    // equilibrate columns so the rank test does not depend on units
    let mut scale = [0.0; 3];
    for (j, s) in scale.iter_mut().enumerate() {
        *s = design.column(j).norm();
        if *s == 0.0 {
            return Err(Error::DegenerateFit("all-zero regressor column".into()));
        }
        design.column_mut(j).unscale_mut(*s);
    }
    let svd = design.svd(true, true);
    let sv = &svd.singular_values;
    if sv.min() <= 1e-10 * sv.max() {
        return Err(Error::DegenerateFit(
            "singular normal equations (too few distinct max-excess-delay values)".into(),
        ));
    }
    let sol = svd
        .solve(&DVector::from_column_slice(y), 0.0)
        .map_err(|e| Error::DegenerateFit(e.to_string()))?;
    Ok([sol[0] / scale[0], sol[1] / scale[1], sol[2] / scale[2]])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean_m: f64,
    pub std_m: f64,
}

impl MixtureComponent {
    pub fn density(&self, d: f64) -> f64 {
        let z = (d - self.mean_m) / self.std_m;
        self.weight * (-0.5 * z * z).exp() / (self.std_m * (2.0 * PI).sqrt())
    }
}

/// Two-component Gaussian mixture over distance: LOS first, NLOS second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeLikelihood {
    pub components: [MixtureComponent; 2],
}

impl RangeLikelihood {
    pub fn density(&self, d: f64) -> f64 {
        self.components.iter().map(|c| c.density(d)).sum()
    }

    /// `(d, density)` on `min, min+step, …, ≤ max`.
    pub fn grid(&self, min_m: f64, max_m: f64, step_m: f64) -> Result<Vec<(f64, f64)>> {
        if !(step_m > 0.0 && max_m >= min_m && min_m.is_finite() && max_m.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "bad distance grid {min_m}..{max_m} step {step_m}"
            )));
        }
        let count = ((max_m - min_m) / step_m + 1e-9).floor() as usize + 1;
        Ok((0..count)
            .map(|i| {
                let d = min_m + i as f64 * step_m;
                (d, self.density(d))
            })
            .collect())
    }
}
