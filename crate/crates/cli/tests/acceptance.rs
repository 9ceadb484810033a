//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tunnelrange::diagnostics::{build_diagnostics, nlos_errors};
use tunnelrange::features::{extract_features, ChannelFeatures, Feature, FeatureRow};
use tunnelrange::model::RangeSample;
use tunnelrange::pipeline::{extract_all, mitigation_stats};
use tunnelrange::synth::{generate_campaign, PerScenario, SynthProfile};
use tunnelrange::threshold::{estimate_noise_stats, sweep_thresholds, threshold_grid, ThresholdCurve};
use tunnelrange::{compute_pdp, FeatureConfig, ImpulseResponse, LinkClass, RangingModel, SweepRecord};

/// Published rates, spreads and quadratic of the reference tunnel.
const LAMBDA_L: f64 = 0.333;
const LAMBDA_N: f64 = 0.075;
const SIGMA_L: f64 = 0.16;
const SIGMA_N: f64 = 1.61;
const POLY: [f64; 3] = [0.00087, -0.2, 11.72];
const P_TH: f64 = -43.8;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Campaign {
    records: Vec<SweepRecord>,
    rows: Vec<FeatureRow>,
    model: RangingModel,
    elapsed: Duration,
}

fn default_campaign() -> Campaign {
    let start = Instant::now();
    let records = generate_campaign(&SynthProfile::default()).expect("default profile generates");
    let rows = extract_all(&records, P_TH, &FeatureConfig::default()).expect("features").rows;
    let samples: Vec<RangeSample> = rows.iter().map(RangeSample::from).collect();
    let model = RangingModel::fit(&samples, 0.25).expect("fit");
    Campaign {
        records,
        rows,
        model,
        elapsed: start.elapsed(),
    }
}

fn within(x: f64, target: f64, frac: f64) -> bool {
    (x - target).abs() <= frac * target.abs()
}

fn quad(p: [f64; 3], t: f64) -> f64 {
    p[0] * t * t + p[1] * t + p[2]
}

fn ac1(c: &Campaign) -> Outcome {
    let m = &c.model;
    let los = c.rows.iter().filter(|r| r.class() == Some(LinkClass::Los)).count();
    let nlos = c.rows.iter().filter(|r| r.class() == Some(LinkClass::Nlos)).count();
    let max_g = (0..=1000)
        .map(|i| 20.0 + 0.1 * i as f64)
        .map(|t| (quad(m.poly, t) - quad(POLY, t)).abs())
        .fold(0.0, f64::max);
    let pass = los == 2700
        && nlos == 900
        && within(m.lambda_los_per_ns, LAMBDA_L, 0.10)
        && within(m.lambda_nlos_per_ns, LAMBDA_N, 0.10)
        && within(m.sigma_los_m, SIGMA_L, 0.10)
        && within(m.sigma_nlos_m, SIGMA_N, 0.15)
        && max_g <= 0.3
        && c.elapsed <= Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "fit round-trip ({los} LOS + {nlos} NLOS): lambda_L={:.4} lambda_N={:.4} sigma_L={:.4} sigma_N={:.4} max|dg|={:.4} m runtime={:.2}s",
            m.lambda_los_per_ns,
            m.lambda_nlos_per_ns,
            m.sigma_los_m,
            m.sigma_nlos_m,
            max_g,
            c.elapsed.as_secs_f64()
        ),
    )
}

fn ac2(c: &Campaign) -> Outcome {
    let Some(s) = mitigation_stats(&c.rows, &c.model) else {
        return outcome(false, "no NLOS rows".into());
    };
    let pass = s.after_std_m <= 0.6 * s.before_std_m && s.after_mean_m.abs() <= 0.15;
    outcome(
        pass,
        format!(
            "mitigation: std {:.3} -> {:.3} m (ratio {:.3}), mean after {:.2e} m",
            s.before_std_m,
            s.after_std_m,
            s.after_std_m / s.before_std_m,
            s.after_mean_m
        ),
    )
}

/// Bayes' rule with exponential rise-time likelihoods, evaluated directly.
fn hand_posterior(rt: f64, prior: f64) -> f64 {
    let nlos = prior * LAMBDA_N * (-LAMBDA_N * rt).exp();
    let los = (1.0 - prior) * LAMBDA_L * (-LAMBDA_L * rt).exp();
    nlos / (nlos + los)
}

fn ac3() -> Outcome {
    let model = RangingModel {
        prior_nlos: 0.5,
        ..RangingModel::tunnel_reference()
    };
    let (p20, p2) = (model.posterior_nlos(20.0), model.posterior_nlos(2.0));
    let pass = (p20 - 0.9751).abs() <= 1e-4
        && (p2 - 0.2739).abs() <= 1e-4
        && (p20 - hand_posterior(20.0, 0.5)).abs() <= 1e-12
        && (p2 - hand_posterior(2.0, 0.5)).abs() <= 1e-12;
    outcome(pass, format!("posterior: p(NLOS|20 ns)={p20:.6} p(NLOS|2 ns)={p2:.6}"))
}

fn ac4() -> Outcome {
    let m = RangingModel::tunnel_reference();
    let (g60, g0) = (m.g(60.0), m.g(0.0));
    let pass = (g60 - 2.852).abs() <= 1e-9 && (g0 - 11.72).abs() <= 1e-9;
    outcome(pass, format!("polynomial: g(60)={g60:.12} g(0)={g0:.12}"))
}

/// Literal per-sample evaluation of the eight channel parameters.
fn oracle_features(taps: &[Complex64], step_ns: f64, th_dbm: f64) -> Option<[f64; 8]> {
    let n = taps.len();
    let p: Vec<f64> = taps.iter().map(|t| t.re * t.re + t.im * t.im).collect();
    let ph: Vec<f64> = p.iter().map(|&x| if 10.0 * x.log10() > th_dbm { x } else { 0.0 }).collect();
    let tau = |i: usize| i as f64 * step_ns;
    let first = (0..n).find(|&i| ph[i] > 0.0)?;
    let last = (0..n).rev().find(|&i| ph[i] > 0.0)?;
    let mut e = 0.0;
    let mut m1 = 0.0;
    let mut peak = 0;
    for i in 0..n {
        e += ph[i];
        m1 += tau(i) * ph[i];
        if ph[i] > ph[peak] {
            peak = i;
        }
    }
    let mean = m1 / e;
    let mut m2 = 0.0;
    for i in 0..n {
        m2 += (tau(i) - mean) * (tau(i) - mean) * ph[i];
    }
    let mag: Vec<f64> = taps.iter().map(|t| (t.re * t.re + t.im * t.im).sqrt()).collect();
    let mu = mag.iter().sum::<f64>() / n as f64;
    let (mut c2, mut c4) = (0.0, 0.0);
    for &a in &mag {
        c2 += (a - mu).powi(2);
        c4 += (a - mu).powi(4);
    }
    let (c2, c4) = (c2 / n as f64, c4 / n as f64);
    Some([
        tau(first),
        10.0 * (e / n as f64).log10(),
        10.0 * ph[peak].log10(),
        mean,
        tau(last) - tau(first),
        (m2 / e).sqrt(),
        tau(peak) - tau(first),
        c4 / (c2 * c2),
    ])
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

fn ac5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20150901);
    let mut worst = 0.0f64;
    let mut mismatches = 0;
    for _ in 0..100 {
        let n = 50;
        let mut taps: Vec<Complex64> = (0..n)
            .map(|_| {
                let dbm: f64 = rng.random_range(-70.0..-10.0);
                Complex64::from_polar(10f64.powf(dbm / 20.0), rng.random_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        let forced = rng.random_range(0..n);
        taps[forced] = Complex64::new(0.1, 0.0);
        let cir = ImpulseResponse::new(taps.clone(), 0.5e-9).unwrap();
        let got = extract_features(&compute_pdp(&cir, P_TH).unwrap(), &cir).unwrap();
        let want = oracle_features(&taps, 0.5, P_TH).unwrap();
        for (k, f) in Feature::ALL.iter().enumerate() {
            let (a, b) = (f.of(&got), want[k]);
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1.0));
            if !close(a, b) {
                mismatches += 1;
            }
        }
    }

    let feat = |powers: &[(usize, f64)]| -> ChannelFeatures {
        let mut taps = vec![Complex64::new(0.0, 0.0); 100];
        for &(i, p) in powers {
            taps[i] = Complex64::new(p.sqrt(), 0.0);
        }
        let cir = ImpulseResponse::new(taps, 0.5e-9).unwrap();
        extract_features(&compute_pdp(&cir, P_TH).unwrap(), &cir).unwrap()
    };
    let one = feat(&[(60, 1.0)]);
    let one_ok = one.toa_ns == 30.0
        && one.max_excess_delay_ns == 0.0
        && one.rms_delay_spread_ns == 0.0
        && one.rise_time_ns == 0.0
        && one.mean_excess_delay_ns == 30.0
        && one.max_power_dbm == 0.0;
    let two = feat(&[(0, 1.0), (20, 1.0)]);
    let two_ok = two.toa_ns == 0.0
        && two.mean_excess_delay_ns == 5.0
        && two.rms_delay_spread_ns == 5.0
        && two.max_excess_delay_ns == 10.0;
    outcome(
        mismatches == 0 && one_ok && two_ok,
        format!(
            "feature oracle: 100 random PDPs, {mismatches} mismatches, worst rel diff {worst:.2e}; one-tap exact={one_ok}, two-tap exact={two_ok}"
        ),
    )
}

fn monotone(c: &ThresholdCurve) -> bool {
    c.fa_rate.windows(2).all(|w| w[1] <= w[0]) && c.md_rate.windows(2).all(|w| w[1] >= w[0])
}

fn ac6(c: &Campaign) -> Outcome {
    let grid = threshold_grid(-60.0, -30.0, 0.1).unwrap();
    let curve = sweep_thresholds(&c.records, &grid, 5.0).unwrap();
    let noise = estimate_noise_stats(&c.records, 5.0).unwrap();
    let k = curve.k_factor(&noise);

    let mut all_monotone = monotone(&curve);
    let mut others = Vec::new();
    for (name, profile) in [
        ("kiruna-like", SynthProfile::kiruna_like()),
        ("noise-only", {
            let mut p = SynthProfile::noise_only();
            p.geometry.rx.truncate(10);
            p
        }),
    ] {
        let recs = generate_campaign(&profile).unwrap();
        let cv = sweep_thresholds(&recs, &grid, 5.0).unwrap();
        all_monotone &= monotone(&cv);
        others.push(format!("{name} monotone={}", monotone(&cv)));
    }
    let pass = all_monotone && (-50.0..=-40.0).contains(&curve.selected_dbm) && (2.5..=4.5).contains(&k);
    outcome(
        pass,
        format!(
            "threshold tuner: selected {:.1} dBm, noise {:.2} dBm / {:.2} dB, k={k:.2}, default monotone={}, {}",
            curve.selected_dbm,
            noise.mean_dbm,
            noise.std_db,
            monotone(&curve),
            others.join(", ")
        ),
    )
}

fn ac7(c: &Campaign) -> Outcome {
    let diag = build_diagnostics(&c.rows, &nlos_errors(&c.rows)).unwrap();
    let rho_toa = diag.metric(Feature::Toa).corr_distance.unwrap_or(f64::NAN);
    let rho_tmax = diag.metric(Feature::MaxExcessDelay).corr_nlos_error.unwrap_or(f64::NAN);
    let xi_rt = diag.metric(Feature::RiseTime).overlap.unwrap_or(f64::NAN);
    let xi_rms = diag.metric(Feature::RmsDelaySpread).overlap.unwrap_or(f64::NAN);
    outcome(
        rho_toa > 0.9 && rho_tmax < -0.5 && xi_rt < xi_rms,
        format!("diagnostics: rho(toa,d)={rho_toa:.3} rho(tau_max,nu_N)={rho_tmax:.3} xi(rise)={xi_rt:.3} xi(rms)={xi_rms:.3}"),
    )
}

fn ac8() -> Outcome {
    let model = RangingModel::tunnel_reference();
    let features = ChannelFeatures {
        toa_ns: 30.0,
        rss_dbm: -40.0,
        max_power_dbm: -30.0,
        mean_excess_delay_ns: 40.0,
        max_excess_delay_ns: 60.0,
        rms_delay_spread_ns: 10.0,
        rise_time_ns: 5.0,
        kurtosis: 8.0,
    };
    let mut worst_weight = 0.0f64;
    let mut worst_integral = 0.0f64;
    for &p in &[0.0, 0.1, 0.25, 0.5, 0.9, 1.0] {
        let lik = model.likelihood_with_posterior(&features, p);
        let w: f64 = lik.components.iter().map(|c| c.weight).sum();
        worst_weight = worst_weight.max((w - 1.0).abs());
        // composite Simpson over a span far beyond both components
        let (a, b, n) = (-20.0, 40.0, 60_000);
        let h = (b - a) / n as f64;
        let mut s = lik.density(a) + lik.density(b);
        for i in 1..n {
            s += lik.density(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        worst_integral = worst_integral.max((s * h / 3.0 - 1.0).abs());
    }
    let los_only = RangingModel {
        prior_nlos: 0.0,
        ..model
    };
    let lik = los_only.range_likelihood(&features);
    let peak = lik.density(lik.components[0].mean_m);
    let expected = 1.0 / (SIGMA_L * (2.0 * std::f64::consts::PI).sqrt());
    outcome(
        worst_weight <= 1e-12 && worst_integral <= 1e-6 && (peak - expected).abs() <= 1e-6,
        format!(
            "mixture likelihood: max |sum w - 1|={worst_weight:.1e}, max |integral - 1|={worst_integral:.1e}, LOS peak={peak:.6} (expected {expected:.6})"
        ),
    )
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn ac9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut profile = SynthProfile::default();
    profile.geometry.rx.truncate(8);
    profile.geometry.repetitions = PerScenario {
        los: 2,
        nlos_m: 2,
        nlos_p: 2,
        nlos_w: 4,
    };
    let profile_path = tmp.path().join("profile.json");
    fs::write(&profile_path, serde_json::to_string_pretty(&profile).unwrap()).unwrap();

    let run = |name: &str| {
        // identical configs: each run gets its own working directory and the same relative output dir
        let cwd = tmp.path().join(name);
        fs::create_dir_all(&cwd).unwrap();
        let out = cwd.join("out");
        let status = Command::new(env!("CARGO_BIN_EXE_tunnelrange"))
            .current_dir(&cwd)
            .args(["run-all", "--seed", "77", "--out-dir", "out", "--profile"])
            .arg(&profile_path)
            .output()
            .expect("binary runs");
        (status.status.success(), tree(&out))
    };
    let (ok_a, a) = run("a");
    let (ok_b, b) = run("b");
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    outcome(
        ok_a && ok_b && !a.is_empty() && a.len() == b.len() && differing.is_empty(),
        format!(
            "determinism: two run-all invocations, {} files each, exit ok={}, differing files={:?}",
            a.len(),
            ok_a && ok_b,
            differing
        ),
    )
}

fn main() {
    let campaign = default_campaign();
    let results = [
        ("AC1", ac1(&campaign)),
        ("AC2", ac2(&campaign)),
        ("AC3", ac3()),
        ("AC4", ac4()),
        ("AC5", ac5()),
        ("AC6", ac6(&campaign)),
        ("AC7", ac7(&campaign)),
        ("AC8", ac8()),
        ("AC9", ac9()),
    ];
    let mut failed = 0;
    for (id, r) in &results {
        println!("{id} {} {}", if r.pass { "PASS" } else { "FAIL" }, r.detail);
        failed += usize::from(!r.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
