//! Correlated noise for stage transitions.
//!
//! Nearest-neighbor upsampling replicates values, so the upsampled latent's
//! conditional covariance is `(1-e)^2 Sigma` rather than isotropic. Mixing in
//! `z ~ N(0, I - c Sigma)` with the coefficients from
//! [`injection_coefficients`] restores an isotropic on-trajectory law at the
//! earlier timestep `s_{k+1}`. The square root of `I - c Sigma` is closed
//! form: `z = eps + alpha * Sigma eps` with
//! `alpha = (-1 + sqrt(1 - 4c)) / 4`, which samples in O(n).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::flow::GaussianTarget;
use crate::latent_grid::{BlockCovariance, SIBLING_OFFSETS};
use crate::rng::stream_rng;
use crate::schedule::{injection_coefficients, InjectionCoefficients, MAX_NOISE_STRENGTH};

/// Everything needed to perform one stage-transition injection.
#[derive(Debug, Clone, Copy)]
pub struct InjectionSpec {
    pub e: f64,
    pub c: f64,
    pub coefficients: InjectionCoefficients,
    pub rng_seed: u64,
}

impl InjectionSpec {
    pub fn new(e: f64, c: f64, rng_seed: u64) -> Result<Self> {
        Ok(Self {
            e,
            c,
            coefficients: injection_coefficients(e, c)?,
            rng_seed,
        })
    }
}

/// Mixing weight of the per-block sum in the covariance square root.
pub fn correlated_alpha(c: f64) -> Result<f64> {
    if !(0.0..=MAX_NOISE_STRENGTH).contains(&c) {
        return Err(Error::Domain(format!(
            "noise strength must lie in [0, {MAX_NOISE_STRENGTH}], got {c}"
        )));
    }
    Ok((-1.0 + (1.0 - 4.0 * c).sqrt()) / 4.0)
}

/// Draws one 2x2 sibling block of `N(0, I - c Sigma)` noise given `alpha`.
#[inline]
pub fn correlated_block(rng: &mut ChaCha8Rng, alpha: f64) -> [f64; 4] {
    let eps: [f64; 4] = [
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    ];
    let sum: f64 = eps.iter().sum();
    [
        eps[0] + alpha * sum,
        eps[1] + alpha * sum,
        eps[2] + alpha * sum,
        eps[3] + alpha * sum,
    ]
}

/// Samples `z ~ N(0, I - c Sigma)` over a HIGH grid layout, deterministically
/// from the seed. Blocks are drawn per channel in row-major block order.
pub fn sample_correlated(
    high_height: usize,
    high_width: usize,
    channels: usize,
    c: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let cov = BlockCovariance::new(high_height, high_width, channels)?;
    let alpha = correlated_alpha(c)?;
    let mut rng = stream_rng(seed, "correlated");
    let mut out = vec![0.0; cov.len()];
    for ch in 0..channels {
        let plane = ch * high_height * high_width;
        for br in 0..high_height / 2 {
            for bc in 0..high_width / 2 {
                let block = correlated_block(&mut rng, alpha);
                for (i, (dr, dc)) in SIBLING_OFFSETS.iter().enumerate() {
                    out[plane + (2 * br + dr) * high_width + 2 * bc + dc] = block[i];
                }
            }
        }
    }
    Ok(out)
}

/// Applies `x <- a * up + b * z` over a HIGH layout and returns the values
/// together with the timestep the flow resumes from.
pub fn inject(
    upsampled: &[f64],
    high_height: usize,
    high_width: usize,
    channels: usize,
    spec: &InjectionSpec,
) -> Result<(Vec<f64>, f64)> {
    let cov = BlockCovariance::new(high_height, high_width, channels)?;
    if upsampled.len() != cov.len() {
        return Err(Error::Shape(format!(
            "expected {} values, got {}",
            cov.len(),
            upsampled.len()
        )));
    }
    let z = sample_correlated(high_height, high_width, channels, spec.c, spec.rng_seed)?;
    let InjectionCoefficients { s_next, a, b } = spec.coefficients;
    let out = upsampled
        .iter()
        .zip(z.iter())
        .map(|(&x, &zi)| a * x + b * zi)
        .collect();
    Ok((out, s_next))
}

/// One verified statistic: its expectation, the observed value, and how far
/// off it is in standard errors.
#[derive(Debug, Clone)]
pub struct StatRow {
    pub statistic: String,
    pub expected: f64,
    pub observed: f64,
    pub z_score: f64,
    pub pass: bool,
}

/// Outcome of [`verify_injection`].
#[derive(Debug, Clone)]
pub struct InjectionReport {
    pub e: f64,
    pub c: f64,
    pub s_next: f64,
    pub n_samples: usize,
    pub rows: Vec<StatRow>,
}

impl InjectionReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Monte-Carlo check that injection puts the upsampled latent back on the
/// trajectory.
///
/// Draws `x_e | x_1 ~ N(e x_1, (1-e)^2 I)` at LOW resolution with
/// `x_1 = downsample(mu)`, upsamples, injects, and compares the empirical
/// conditional law against `N(s Up(x_1), (1-s)^2 I)`: mean error, diagonal
/// variance, within-block and cross-block correlations. The same statistics
/// with injection skipped expose the pure replication (correlation one).
pub fn verify_injection(
    target: &GaussianTarget,
    e: f64,
    c: f64,
    n_samples: usize,
    seed: u64,
) -> Result<InjectionReport> {
    if n_samples < 1000 {
        return Err(Error::Domain(format!(
            "need at least 1000 samples for meaningful statistics, got {n_samples}"
        )));
    }
    if !(0.0..=1.0).contains(&e) {
        return Err(Error::Domain(format!("e must lie in [0, 1], got {e}")));
    }
    let mu = &target.mu;
    let cov = BlockCovariance::new(mu.height, mu.width, mu.channels)?;
    let x1_low = mu.downsample_avg()?;
    let x1_up = x1_low.upsample_nn()?;
    let coef = injection_coefficients(e, c)?;
    let (s, a, b) = (coef.s_next, coef.a, coef.b);
    let alpha = correlated_alpha(c)?;
    let n_cells = cov.len();
    let (h, w, channels) = (mu.height, mu.width, mu.channels);
    let (bh, bw) = (h / 2, w / 2);
    let n_blocks = bh * bw * channels;

    let mut rng = stream_rng(seed, "verify");
    let mut sum = vec![0.0; n_cells];
    let mut sum_sq = vec![0.0; n_cells];
    // injected within-block pair products (6 pairs per block), raw residual
    // pair products for the no-injection branch, and one horizontal
    // cross-block pair per block for independence across blocks.
    let mut pair_inj = vec![[0.0; 6]; n_blocks];
    let mut pair_raw = vec![[0.0; 6]; n_blocks];
    let mut cross = vec![0.0; n_blocks];
    let mut raw_sum = vec![0.0; n_cells];
    let mut raw_sq = vec![0.0; n_cells];

    const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

    let mut low = vec![0.0; bh * bw * channels];
    let mut injected = vec![0.0; n_cells];
    let mut raw = vec![0.0; n_cells];
    for _ in 0..n_samples {
        // conditional draw at LOW resolution, replicated to HIGH
        for (i, v) in low.iter_mut().enumerate() {
            let g: f64 = rng.sample(StandardNormal);
            *v = e * x1_low.values[i] + (1.0 - e) * g;
        }
        for ch in 0..channels {
            for r in 0..h {
                for col in 0..w {
                    let lo = (ch * bh + r / 2) * bw + col / 2;
                    let hi = (ch * h + r) * w + col;
                    raw[hi] = low[lo];
                }
            }
        }
        // injection with a fresh correlated draw
        for ch in 0..channels {
            let plane = ch * h * w;
            for br in 0..bh {
                for bc in 0..bw {
                    let z = correlated_block(&mut rng, alpha);
                    for (i, (dr, dc)) in SIBLING_OFFSETS.iter().enumerate() {
                        let idx = plane + (2 * br + dr) * w + 2 * bc + dc;
                        injected[idx] = a * raw[idx] + b * z[i];
                    }
                }
            }
        }
        for i in 0..n_cells {
            sum[i] += injected[i];
            sum_sq[i] += injected[i] * injected[i];
            let r = raw[i] - e * x1_up.values[i];
            raw_sum[i] += r;
            raw_sq[i] += r * r;
        }
        for ch in 0..channels {
            let plane = ch * h * w;
            for br in 0..bh {
                for bc in 0..bw {
                    let block = ch * bh * bw + br * bw + bc;
                    let mut vals = [0.0; 4];
                    let mut rawvals = [0.0; 4];
                    for (i, (dr, dc)) in SIBLING_OFFSETS.iter().enumerate() {
                        let idx = plane + (2 * br + dr) * w + 2 * bc + dc;
                        vals[i] = injected[idx];
                        rawvals[i] = raw[idx] - e * x1_up.values[idx];
                    }
                    for (p, (i, j)) in PAIRS.iter().enumerate() {
                        pair_inj[block][p] += vals[*i] * vals[*j];
                        pair_raw[block][p] += rawvals[*i] * rawvals[*j];
                    }
                    if bw >= 2 {
                        // right neighbor in the adjacent block, wrapping
                        let nb_col = (2 * bc + 2) % w;
                        let idx_a = plane + (2 * br) * w + 2 * bc + 1;
                        let idx_b = plane + (2 * br) * w + nb_col;
                        cross[block] += injected[idx_a] * injected[idx_b];
                    }
                }
            }
        }
    }

    let nf = n_samples as f64;
    let mean: Vec<f64> = sum.iter().map(|v| v / nf).collect();
    let var: Vec<f64> = sum_sq
        .iter()
        .zip(mean.iter())
        .map(|(sq, m)| sq / nf - m * m)
        .collect();
    let expected_var = (1.0 - s) * (1.0 - s);

    let mut max_abs_mean_err = 0.0f64;
    for (i, m) in mean.iter().enumerate() {
        max_abs_mean_err = max_abs_mean_err.max((m - s * x1_up.values[i]).abs());
    }
    let mean_se = (1.0 - s) / nf.sqrt();

    let max_var_rel_err = var
        .iter()
        .map(|v| ((v - expected_var) / expected_var).abs())
        .fold(0.0, f64::max);
    let var_se = (2.0 / nf).sqrt();

    // correlations from pair sums: corr = E[xy] - E[x]E[y] over the
    // geometric mean of the two variances
    let mut max_within = 0.0f64;
    for ch in 0..channels {
        let plane = ch * h * w;
        for br in 0..bh {
            for bc in 0..bw {
                let block = ch * bh * bw + br * bw + bc;
                let mut idx4 = [0usize; 4];
                for (i, (dr, dc)) in SIBLING_OFFSETS.iter().enumerate() {
                    idx4[i] = plane + (2 * br + dr) * w + 2 * bc + dc;
                }
                for (p, (i, j)) in PAIRS.iter().enumerate() {
                    let (ia, ib) = (idx4[*i], idx4[*j]);
                    let cov_ij = pair_inj[block][p] / nf - mean[ia] * mean[ib];
                    let corr = cov_ij / (var[ia] * var[ib]).sqrt();
                    max_within = max_within.max(corr.abs());
                }
            }
        }
    }

    let mut max_cross = 0.0f64;
    if bw >= 2 {
        for ch in 0..channels {
            let plane = ch * h * w;
            for br in 0..bh {
                for bc in 0..bw {
                    let block = ch * bh * bw + br * bw + bc;
                    let nb_col = (2 * bc + 2) % w;
                    let ia = plane + (2 * br) * w + 2 * bc + 1;
                    let ib = plane + (2 * br) * w + nb_col;
                    let cov_ij = cross[block] / nf - mean[ia] * mean[ib];
                    let corr = cov_ij / (var[ia] * var[ib]).sqrt();
                    max_cross = max_cross.max(corr.abs());
                }
            }
        }
    }

    // no-injection branch: residual correlation within blocks is replication
    let raw_mean: Vec<f64> = raw_sum.iter().map(|v| v / nf).collect();
    let raw_var: Vec<f64> = raw_sq
        .iter()
        .zip(raw_mean.iter())
        .map(|(sq, m)| sq / nf - m * m)
        .collect();
    let mut min_raw_within = 1.0f64;
    for ch in 0..channels {
        let plane = ch * h * w;
        for br in 0..bh {
            for bc in 0..bw {
                let block = ch * bh * bw + br * bw + bc;
                let mut idx4 = [0usize; 4];
                for (i, (dr, dc)) in SIBLING_OFFSETS.iter().enumerate() {
                    idx4[i] = plane + (2 * br + dr) * w + 2 * bc + dc;
                }
                for (p, (i, j)) in PAIRS.iter().enumerate() {
                    let (ia, ib) = (idx4[*i], idx4[*j]);
                    let cov_ij = pair_raw[block][p] / nf - raw_mean[ia] * raw_mean[ib];
                    let corr = cov_ij / (raw_var[ia] * raw_var[ib]).sqrt();
                    min_raw_within = min_raw_within.min(corr);
                }
            }
        }
    }

    let rows = vec![
        StatRow {
            statistic: "mean_max_abs_error".into(),
            expected: 0.0,
            observed: max_abs_mean_err,
            z_score: max_abs_mean_err / mean_se,
            pass: max_abs_mean_err <= 4.0 * mean_se,
        },
        // fixed bounds hold at 1e5 samples; smaller runs fall back to the
        // 4.5-standard-error rule so power scales with the sample count
        StatRow {
            statistic: "diag_variance_max_rel_error".into(),
            expected: 0.0,
            observed: max_var_rel_err,
            z_score: max_var_rel_err / var_se,
            pass: max_var_rel_err <= 0.02f64.max(4.5 * var_se),
        },
        StatRow {
            statistic: "within_block_corr_max_abs".into(),
            expected: 0.0,
            observed: max_within,
            z_score: max_within * nf.sqrt(),
            pass: max_within <= 0.05f64.max(4.5 / nf.sqrt()),
        },
        StatRow {
            statistic: "cross_block_corr_max_abs".into(),
            expected: 0.0,
            observed: max_cross,
            z_score: max_cross * nf.sqrt(),
            pass: max_cross <= 0.05f64.max(4.5 / nf.sqrt()),
        },
        StatRow {
            statistic: "no_injection_within_block_corr_min".into(),
            expected: 1.0,
            observed: min_raw_within,
            z_score: (min_raw_within - 1.0) * nf.sqrt(),
            pass: min_raw_within >= 0.95,
        },
    ];

    Ok(InjectionReport {
        e,
        c,
        s_next: s,
        n_samples,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn alpha_limits() {
        assert_eq!(correlated_alpha(0.0).unwrap(), 0.0);
        assert_relative_eq!(correlated_alpha(0.25).unwrap(), -0.25);
        assert!(correlated_alpha(0.26).is_err());
    }

    #[test]
    fn zero_strength_is_iid() {
        let z = sample_correlated(4, 4, 1, 0.0, 9).unwrap();
        // alpha = 0: block sums do not enter, so values are plain normals;
        // spot-check moments loosely on a bigger draw
        let big = sample_correlated(64, 64, 1, 0.0, 9).unwrap();
        let mean: f64 = big.iter().sum::<f64>() / big.len() as f64;
        let var: f64 = big.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / big.len() as f64;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((var - 1.0).abs() < 0.15, "var {var}");
        assert_eq!(z.len(), 16);
    }

    #[test]
    fn max_strength_kills_block_sums() {
        let z = sample_correlated(8, 8, 2, 0.25, 3).unwrap();
        for ch in 0..2 {
            for br in 0..4 {
                for bc in 0..4 {
                    let mut sum = 0.0;
                    for (dr, dc) in SIBLING_OFFSETS {
                        sum += z[(ch * 8 + 2 * br + dr) * 8 + 2 * bc + dc];
                    }
                    assert!(sum.abs() < 1e-12, "block sum {sum}");
                }
            }
        }
    }

    #[test]
    fn empirical_covariance_matches_i_minus_c_sigma() {
        let c = 0.1;
        let n = 30_000usize;
        let mut diag = 0.0;
        let mut within = 0.0;
        let mut cross = 0.0;
        let alpha = correlated_alpha(c).unwrap();
        let mut rng = stream_rng(123, "cov-test");
        for _ in 0..n {
            let b1 = correlated_block(&mut rng, alpha);
            let b2 = correlated_block(&mut rng, alpha);
            diag += b1[0] * b1[0];
            within += b1[0] * b1[1];
            cross += b1[3] * b2[0];
        }
        let nf = n as f64;
        assert_relative_eq!(diag / nf, 1.0 - c, epsilon = 0.03);
        assert_relative_eq!(within / nf, -c, epsilon = 0.02);
        assert!((cross / nf).abs() < 0.02);
    }

    #[test]
    fn determinism_bit_identical() {
        let a = sample_correlated(6, 4, 3, 0.17, 77).unwrap();
        let b = sample_correlated(6, 4, 3, 0.17, 77).unwrap();
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = sample_correlated(6, 4, 3, 0.17, 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn inject_at_data_endpoint_is_identity() {
        let spec = InjectionSpec::new(1.0, 0.1, 5).unwrap();
        let values = vec![0.5, -0.25, 1.5, 2.0];
        let (out, s) = inject(&values, 2, 2, 1, &spec).unwrap();
        assert_eq!(out, values);
        assert_eq!(s, 1.0);
    }

    #[test]
    fn verifier_refuses_low_power() {
        let target = GaussianTarget::new(GaussianTarget::square_field(4, 4, 1), 0.5).unwrap();
        assert!(matches!(
            verify_injection(&target, 0.3, 0.1, 100, 1),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn verifier_passes_on_small_grid() {
        let target = GaussianTarget::new(GaussianTarget::square_field(8, 8, 1), 0.5).unwrap();
        let report = verify_injection(&target, 0.3, 0.0251, 60_000, 11).unwrap();
        for row in &report.rows {
            assert!(row.pass, "{} failed: {:?}", row.statistic, row);
        }
        // the replication statistic is exactly one
        let raw = report
            .rows
            .iter()
            .find(|r| r.statistic == "no_injection_within_block_corr_min")
            .unwrap();
        assert!(raw.observed > 0.999999);
    }
}
