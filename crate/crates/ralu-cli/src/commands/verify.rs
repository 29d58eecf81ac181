//! `ralu verify`: statistical and numerical verification.
//!
//! Three groups of checks run: the Monte-Carlo injection law (conditional
//! mean, isotropic covariance, block decorrelation), schedule math against
//! independent quadrature oracles, and flow-backend oracles (closed-form
//! conditional mean, Bayes-quadrature velocity, Euler convergence order).
//! Every check prints one PASS/FAIL line and lands in a CSV report.

use ralu_core::flow::{euler_integrate, GaussianModel, GaussianTarget};
use ralu_core::latent_grid::{LatentGrid, Level, TokenSet};
use ralu_core::noise::verify_injection;
use ralu_core::schedule::{
    cdf_shift, injection_coefficients, inv_cdf_shift, jsd, pdf_shift, pdf_truncated,
    target_distribution, Density, StageConfig, QUAD_POINTS,
};

use crate::config::{resolve, Overrides};
use crate::CliError;

struct Check {
    name: String,
    expected: f64,
    observed: f64,
    z_score: f64,
    pass: bool,
    expected_fail: bool,
}

impl Check {
    fn new(name: &str, expected: f64, observed: f64, z_score: f64, pass: bool) -> Self {
        Self {
            name: name.into(),
            expected,
            observed,
            z_score,
            pass,
            expected_fail: false,
        }
    }
}

pub fn run(over: &Overrides, samples: usize, skip_injection: bool) -> Result<(), CliError> {
    if samples < 1000 {
        return Err(CliError::config(format!(
            "refusing to verify with {samples} samples: statistical power too low (need >= 1000)"
        )));
    }
    let resolved = resolve(over)?;
    let mut checks = Vec::new();

    injection_checks(
        &resolved.run.stages,
        resolved.run.c_override,
        resolved.sigma,
        samples,
        resolved.run.seed,
        skip_injection,
        &mut checks,
    )?;
    schedule_checks(&mut checks);
    flow_checks(resolved.sigma, &mut checks);

    let out = super::ensure_out_dir(&resolved)?;
    let mut csv = String::from("statistic,expected,observed,z_score\n");
    for c in &checks {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            c.name, c.expected, c.observed, c.z_score
        ));
    }
    super::write_text(&out.join("verify_report.csv"), &csv)?;

    let mut failures = 0usize;
    for c in &checks {
        let label = if c.pass {
            if c.expected_fail {
                "EXPECTED-FAIL"
            } else {
                "PASS"
            }
        } else {
            failures += 1;
            "FAIL"
        };
        println!(
            "{label} {} (expected {:.6}, observed {:.6}, z {:.2})",
            c.name, c.expected, c.observed, c.z_score
        );
    }
    println!(
        "verify: {} checks, {} failed -> {}",
        checks.len(),
        failures,
        out.join("verify_report.csv").display()
    );
    if failures > 0 {
        return Err(CliError::verification(format!(
            "{failures} verification checks failed"
        )));
    }
    Ok(())
}

/// Monte-Carlo injection verification on a fixed 8x8 -> 16x16 geometry.
fn injection_checks(
    stages: &[StageConfig],
    c_override: Option<f64>,
    sigma: f64,
    samples: usize,
    seed: u64,
    skip_injection: bool,
    checks: &mut Vec<Check>,
) -> Result<(), CliError> {
    let e = stages.first().map(|s| s.end).unwrap_or(0.3);
    let e = if e < 1.0 { e } else { 0.3 };
    let c = c_override.unwrap_or(0.0251);
    let target = GaussianTarget::new(GaussianTarget::square_field(16, 16, 1), sigma)?;
    let report = verify_injection(&target, e, c, samples, seed)?;
    for row in &report.rows {
        let ablation = row.statistic == "no_injection_within_block_corr_min";
        if skip_injection {
            // Ablation mode: the isotropy rows are informational; the
            // replication signature is the expectation that must hold.
            if ablation {
                checks.push(Check::new(
                    "ablation_replication_corr_min",
                    row.expected,
                    row.observed,
                    row.z_score,
                    row.pass,
                ));
            } else if row.statistic == "within_block_corr_max_abs" {
                // report the isotropy check the pipeline would have needed
                let mut check = Check::new(
                    "injection_isotropy_skipped",
                    0.0,
                    report
                        .rows
                        .iter()
                        .find(|r| r.statistic == "no_injection_within_block_corr_min")
                        .map(|r| r.observed)
                        .unwrap_or(1.0),
                    f64::INFINITY,
                    true,
                );
                check.expected_fail = true;
                checks.push(check);
            }
        } else {
            checks.push(Check::new(
                &format!("injection_{}", row.statistic),
                row.expected,
                row.observed,
                row.z_score,
                row.pass,
            ));
        }
    }
    Ok(())
}

/// Composite Simpson integral on [a, b].
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += weight * f(a + h * i as f64);
    }
    acc * h / 3.0
}

fn schedule_checks(checks: &mut Vec<Check>) {
    // coefficient identities on a 10x10 grid of (e, c)
    let mut max_err = 0.0f64;
    let mut s_before_e = true;
    for i in 1..=10 {
        let e = i as f64 / 11.0;
        for j in 1..=10 {
            let c = 0.25 * j as f64 / 10.0;
            let coef = injection_coefficients(e, c).unwrap();
            max_err = max_err
                .max((coef.a * e - coef.s_next).abs())
                .max((coef.b - (1.0 - coef.s_next)).abs());
            s_before_e &= coef.s_next < e;
        }
    }
    checks.push(Check::new(
        "schedule_coefficient_identities_max_err",
        0.0,
        max_err,
        max_err / 1e-12,
        max_err <= 1e-12 && s_before_e,
    ));

    // shifted and truncated densities normalize under Simpson quadrature
    let mut worst = 0.0f64;
    for &h in &[0.5, 1.0, 2.0, 5.0, 10.0] {
        let full = simpson(|t| pdf_shift(t, h).unwrap(), 0.0, 1.0, 16384);
        worst = worst.max((full - 1.0).abs());
        for &(s, e) in &[
            (0.0, 1.0),
            (0.2, 0.7),
            (0.05, 0.3),
            (0.5, 0.95),
            (0.3, 0.45),
        ] {
            let trunc = simpson(|t| pdf_truncated(t, h, s, e).unwrap(), s, e, 16384);
            worst = worst.max((trunc - 1.0).abs());
        }
    }
    checks.push(Check::new(
        "schedule_density_normalization_max_err",
        0.0,
        worst,
        worst / 1e-6,
        worst <= 1e-6,
    ));

    // CDF round trip
    let mut rt = 0.0f64;
    for &h in &[0.5, 1.0, 2.0, 5.0, 10.0, 16.0] {
        for i in 0..=50 {
            let t = i as f64 / 50.0;
            rt = rt.max((inv_cdf_shift(cdf_shift(t, h).unwrap(), h).unwrap() - t).abs());
        }
    }
    checks.push(Check::new(
        "schedule_cdf_roundtrip_max_err",
        0.0,
        rt,
        rt / 1e-12,
        rt <= 1e-12,
    ));

    // JSD: identity, symmetry, upper bound, disjoint supports
    let p = Density::from_fn(QUAD_POINTS, |t| pdf_shift(t, 3.0).unwrap()).unwrap();
    let q = Density::from_fn(QUAD_POINTS, |t| pdf_shift(t, 1.3).unwrap()).unwrap();
    let self_div = jsd(&p, &p).unwrap();
    let asym = (jsd(&p, &q).unwrap() - jsd(&q, &p).unwrap()).abs();
    let left = Density::from_fn(QUAD_POINTS, |t| if t < 0.5 { 2.0 } else { 0.0 }).unwrap();
    let right = Density::from_fn(QUAD_POINTS, |t| if t >= 0.5 { 2.0 } else { 0.0 }).unwrap();
    let disjoint = jsd(&left, &right).unwrap();
    let jsd_ok = self_div == 0.0
        && asym <= 1e-15
        && jsd(&p, &q).unwrap() <= std::f64::consts::LN_2
        && (disjoint - std::f64::consts::LN_2).abs() <= 2e-3;
    checks.push(Check::new(
        "schedule_jsd_properties_disjoint",
        std::f64::consts::LN_2,
        disjoint,
        asym,
        jsd_ok,
    ));

    // normalization of a composed target density
    let configs = [
        StageConfig { steps: 5, end: 0.3 },
        StageConfig {
            steps: 6,
            end: 0.45,
        },
        StageConfig { steps: 7, end: 1.0 },
    ];
    let target = target_distribution(&configs, 0.0251, 3.0).unwrap();
    let norm_err = (target.integral() - 1.0).abs();
    checks.push(Check::new(
        "schedule_target_normalization_err",
        0.0,
        norm_err,
        norm_err / 1e-9,
        norm_err <= 1e-9,
    ));
}

/// Conditional mean by numerical Bayes integration over the data posterior,
/// independent of the closed-form velocity path.
fn bayes_velocity(x: f64, t: f64, mu: f64, sigma: f64) -> f64 {
    let spread = (1.0 - t) / t;
    let lo = (mu - 15.0 * sigma).min(x / t - 15.0 * spread);
    let hi = (mu + 15.0 * sigma).max(x / t + 15.0 * spread);
    let weight = |x1: f64| -> f64 {
        let prior = (-(x1 - mu) * (x1 - mu) / (2.0 * sigma * sigma)).exp();
        let x0 = (x - t * x1) / (1.0 - t);
        prior * (-x0 * x0 / 2.0).exp()
    };
    let mass = simpson(weight, lo, hi, 32768);
    let e_x1 = simpson(|x1| x1 * weight(x1), lo, hi, 32768) / mass;
    let e_x0 = (x - t * e_x1) / (1.0 - t);
    e_x1 - e_x0
}

fn flow_checks(sigma: f64, checks: &mut Vec<Check>) {
    let (mu, sig) = (1.3, sigma);

    // closed-form conditional-mean consistency of the one-step extrapolation
    let mut tweedie_err = 0.0f64;
    for i in 0..20 {
        let t = i as f64 / 20.0;
        for &x in &[-1.5, -0.2, 0.4, 1.3, 2.8] {
            let v = ralu_core::flow::gaussian_velocity_scalar(x, t, mu, sig);
            let denom = (1.0 - t) * (1.0 - t) + t * t * sig * sig;
            let conditional_mean = mu + t * sig * sig * (x - t * mu) / denom;
            tweedie_err = tweedie_err.max((x + (1.0 - t) * v - conditional_mean).abs());
        }
    }
    checks.push(Check::new(
        "flow_tweedie_consistency_max_err",
        0.0,
        tweedie_err,
        tweedie_err / 1e-10,
        tweedie_err <= 1e-10,
    ));

    // velocity against the Bayes quadrature oracle
    let mut bayes_err = 0.0f64;
    for i in 1..=9 {
        let t = i as f64 / 10.0;
        for &x in &[-1.0, 0.3, 1.2, 2.5] {
            let direct = ralu_core::flow::gaussian_velocity_scalar(x, t, mu, sig);
            bayes_err = bayes_err.max((direct - bayes_velocity(x, t, mu, sig)).abs());
        }
    }
    checks.push(Check::new(
        "flow_velocity_bayes_oracle_max_err",
        0.0,
        bayes_err,
        bayes_err / 1e-6,
        bayes_err <= 1e-6,
    ));

    // first-order convergence of the Euler integrator
    let mu_grid = LatentGrid::from_fn(2, 2, 1, Level::High, |_, _, _| mu);
    let model = GaussianModel::new(GaussianTarget::new(mu_grid, sig).unwrap());
    let start_grid = LatentGrid::from_fn(2, 2, 1, Level::High, |_, _, _| 0.7);
    let start = TokenSet::from_high_grid(&start_grid).unwrap();
    let terminal = |steps: usize| -> f64 {
        let ts: Vec<f64> = (0..=steps).map(|j| j as f64 / steps as f64).collect();
        euler_integrate(&start, &model, &ts).unwrap().entries[0].values[0]
    };
    let reference = terminal(800);
    let err_coarse = (terminal(20) - reference).abs();
    let err_fine = (terminal(40) - reference).abs();
    let ratio = err_coarse / err_fine;
    checks.push(Check::new(
        "flow_euler_halving_error_ratio",
        2.0,
        ratio,
        (ratio - 2.0).abs(),
        (1.5..=2.5).contains(&ratio),
    ));
}
