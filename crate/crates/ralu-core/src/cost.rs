//! Token and compute accounting.
//!
//! Stage token counts follow directly from the base shape and the upsampling
//! ratio: `P` low tokens in stage 1, `P + 3 ceil(rho P)` mixed tokens in
//! stage 2, `4P` in stage 3; cached steps pass `floor((1-r) T)` tokens. The
//! cost model prices a step as `alpha T + beta (T + t_aux)^2` and adds a
//! one-time decoder cost, which is enough to reason about speedup ratios —
//! it makes no claim about hardware FLOPs.

use serde::{Deserialize, Serialize};

use crate::caching::computed_tokens_per_cached_step;
use crate::error::{Error, Result};
use crate::util::ceil_ratio;

/// Token count for one stage, with the per-cached-step variant when a
/// caching ratio applies to that stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTokens {
    pub stage: usize,
    pub tokens: usize,
    pub cached_step_tokens: Option<usize>,
}

/// Per-stage token counts for the three-stage pipeline.
pub fn token_counts(
    base_height: usize,
    base_width: usize,
    ratio: f64,
    caching_ratio: Option<f64>,
) -> Result<Vec<StageTokens>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Domain(format!(
            "upsampling ratio must lie in [0, 1], got {ratio}"
        )));
    }
    if let Some(r) = caching_ratio {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::Domain(format!(
                "caching ratio must lie in [0, 1), got {r}"
            )));
        }
    }
    let patches = base_height * base_width;
    let selected = ceil_ratio(ratio, patches);
    let per_stage = [patches, patches + 3 * selected, 4 * patches];
    Ok(per_stage
        .iter()
        .enumerate()
        .map(|(i, &tokens)| StageTokens {
            stage: i + 1,
            tokens,
            // stage 1 is never cached
            cached_step_tokens: caching_ratio
                .filter(|_| i > 0)
                .map(|r| computed_tokens_per_cached_step(tokens, r)),
        })
        .collect())
}

/// Steps broken into full and cached executions for one stage.
fn stage_step_split(steps: u32, cached: Option<usize>, is_last_stage: bool) -> (u32, u32) {
    match cached {
        Some(_) if steps >= 3 => {
            let final_full = if is_last_stage { 1 } else { 0 };
            let cached_steps = steps.saturating_sub(2 + final_full);
            (steps - cached_steps, cached_steps)
        }
        _ => (steps, 0),
    }
}

/// Token-step totals and the reduction against a full-resolution baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStepSummary {
    pub per_stage: Vec<u64>,
    pub total: u64,
    pub baseline_total: u64,
    /// `baseline_total / total`.
    pub reduction: f64,
}

/// Sums `N_k * T_k` over stages (with cached-step substitution where a
/// cached count is present) and compares with `baseline_steps * 4P`.
pub fn token_steps(
    steps: &[u32],
    counts: &[StageTokens],
    baseline_steps: u32,
    base_height: usize,
    base_width: usize,
) -> Result<TokenStepSummary> {
    if steps.len() != counts.len() {
        return Err(Error::Shape(format!(
            "steps and counts must align: {} stages vs {} counts",
            steps.len(),
            counts.len()
        )));
    }
    let last = steps.len().saturating_sub(1);
    let mut per_stage = Vec::with_capacity(steps.len());
    for (i, (&n, count)) in steps.iter().zip(counts.iter()).enumerate() {
        let (full, cached) = stage_step_split(n, count.cached_step_tokens, i == last);
        let cached_tokens = count.cached_step_tokens.unwrap_or(count.tokens) as u64;
        per_stage.push(u64::from(full) * count.tokens as u64 + u64::from(cached) * cached_tokens);
    }
    let total: u64 = per_stage.iter().sum();
    let baseline_total = u64::from(baseline_steps) * 4 * (base_height * base_width) as u64;
    let reduction = if total > 0 {
        baseline_total as f64 / total as f64
    } else {
        f64::INFINITY
    };
    Ok(TokenStepSummary {
        per_stage,
        total,
        baseline_total,
        reduction,
    })
}

/// Per-step cost parameters: linear token term, quadratic attention term
/// over `tokens + t_aux`, and a one-time decoder cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub alpha: f64,
    pub beta: f64,
    pub t_aux: f64,
    pub decoder_cost: f64,
}

impl CostModel {
    pub fn new(alpha: f64, beta: f64, t_aux: f64, decoder_cost: f64) -> Result<Self> {
        if alpha < 0.0 || beta < 0.0 || t_aux < 0.0 || decoder_cost < 0.0 {
            return Err(Error::Domain(
                "cost model parameters must be nonnegative".into(),
            ));
        }
        Ok(Self {
            alpha,
            beta,
            t_aux,
            decoder_cost,
        })
    }

    fn step_cost(&self, tokens: usize) -> f64 {
        let t = tokens as f64;
        let attended = t + self.t_aux;
        self.alpha * t + self.beta * attended * attended
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub stage: usize,
    pub steps: u32,
    pub tokens: usize,
    pub cost: f64,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub stages: Vec<StageCost>,
    pub decoder_cost: f64,
    pub total: f64,
    /// Decoder cost as a fraction of the total.
    pub decoder_share: f64,
}

/// Prices each stage under the cost model (cached-step substitution
/// included) and adds the decoder cost once.
pub fn estimate_cost(
    steps: &[u32],
    counts: &[StageTokens],
    model: &CostModel,
) -> Result<CostBreakdown> {
    if steps.len() != counts.len() {
        return Err(Error::Shape(format!(
            "steps and counts must align: {} stages vs {} counts",
            steps.len(),
            counts.len()
        )));
    }
    let last = steps.len().saturating_sub(1);
    let mut stages = Vec::with_capacity(steps.len());
    let mut total = model.decoder_cost;
    for (i, (&n, count)) in steps.iter().zip(counts.iter()).enumerate() {
        let (full, cached) = stage_step_split(n, count.cached_step_tokens, i == last);
        let cached_tokens = count.cached_step_tokens.unwrap_or(count.tokens);
        let cost = f64::from(full) * model.step_cost(count.tokens)
            + f64::from(cached) * model.step_cost(cached_tokens);
        total += cost;
        stages.push(StageCost {
            stage: i + 1,
            steps: n,
            tokens: count.tokens,
            cost,
            share: 0.0,
        });
    }
    for stage in &mut stages {
        stage.share = if total > 0.0 { stage.cost / total } else { 0.0 };
    }
    let decoder_share = if total > 0.0 {
        model.decoder_cost / total
    } else {
        0.0
    };
    Ok(CostBreakdown {
        stages,
        decoder_cost: model.decoder_cost,
        total,
        decoder_share,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn published_token_counts() {
        let counts = token_counts(32, 32, 0.3, Some(0.4)).unwrap();
        assert_eq!(counts[0].tokens, 1024);
        assert_eq!(counts[1].tokens, 1948);
        assert_eq!(counts[2].tokens, 4096);
        assert_eq!(counts[0].cached_step_tokens, None);
        assert_eq!(counts[1].cached_step_tokens, Some(1168));
        assert_eq!(counts[2].cached_step_tokens, Some(2457));
    }

    #[test]
    fn zero_ratio_counts() {
        let counts = token_counts(32, 32, 0.0, None).unwrap();
        let tokens: Vec<usize> = counts.iter().map(|c| c.tokens).collect();
        assert_eq!(tokens, vec![1024, 1024, 4096]);
    }

    #[test]
    fn flux_token_step_totals() {
        let counts = token_counts(32, 32, 0.3, None).unwrap();
        let four_x = token_steps(&[5, 6, 7], &counts, 50, 32, 32).unwrap();
        assert_eq!(four_x.per_stage, vec![5120, 11688, 28672]);
        assert_eq!(four_x.total, 45480);
        assert_eq!(four_x.baseline_total, 204800);
        assert_relative_eq!(four_x.reduction, 204800.0 / 45480.0);

        let seven_x = token_steps(&[2, 3, 5], &counts, 50, 32, 32).unwrap();
        assert_eq!(seven_x.total, 28372);
        assert_relative_eq!(seven_x.reduction, 7.2184, epsilon = 1e-3);

        let empty = token_steps(&[0, 0, 0], &counts, 50, 32, 32).unwrap();
        assert_eq!(empty.total, 0);
    }

    #[test]
    fn token_steps_monotone_in_steps_and_ratio() {
        let counts_lo = token_counts(32, 32, 0.2, None).unwrap();
        let counts_hi = token_counts(32, 32, 0.4, None).unwrap();
        let base = token_steps(&[5, 6, 7], &counts_lo, 50, 32, 32)
            .unwrap()
            .total;
        assert!(
            token_steps(&[6, 6, 7], &counts_lo, 50, 32, 32)
                .unwrap()
                .total
                > base
        );
        assert!(
            token_steps(&[5, 7, 7], &counts_lo, 50, 32, 32)
                .unwrap()
                .total
                > base
        );
        assert!(
            token_steps(&[5, 6, 8], &counts_lo, 50, 32, 32)
                .unwrap()
                .total
                > base
        );
        assert!(
            token_steps(&[5, 6, 7], &counts_hi, 50, 32, 32)
                .unwrap()
                .total
                > base
        );
    }

    #[test]
    fn cached_token_steps_substitute() {
        let counts = token_counts(32, 32, 0.3, Some(0.4)).unwrap();
        let summary = token_steps(&[5, 6, 7], &counts, 50, 32, 32).unwrap();
        // stage 2: 2 full + 4 cached, stage 3: 2 full + 4 cached + final full
        assert_eq!(summary.per_stage[1], 2 * 1948 + 4 * 1168);
        assert_eq!(summary.per_stage[2], 3 * 4096 + 4 * 2457);
    }

    #[test]
    fn beta_zero_reduces_to_scaled_token_steps() {
        let counts = token_counts(32, 32, 0.3, None).unwrap();
        let model = CostModel::new(2.0, 0.0, 0.0, 0.0).unwrap();
        let breakdown = estimate_cost(&[5, 6, 7], &counts, &model).unwrap();
        let summary = token_steps(&[5, 6, 7], &counts, 50, 32, 32).unwrap();
        assert_relative_eq!(breakdown.total, 2.0 * summary.total as f64);
    }

    #[test]
    fn decoder_share_matches_published_magnitudes() {
        // calibrate alpha so the 50-step full-res baseline costs 2990.96
        // including the 2.48 decoder pass
        let counts = token_counts(32, 32, 0.0, None).unwrap();
        let baseline_counts = vec![StageTokens {
            stage: 1,
            tokens: 4096,
            cached_step_tokens: None,
        }];
        let alpha = (2990.96 - 2.48) / 204800.0;
        let model = CostModel::new(alpha, 0.0, 0.0, 2.48).unwrap();
        let breakdown = estimate_cost(&[50], &baseline_counts, &model).unwrap();
        assert_relative_eq!(breakdown.total, 2990.96, epsilon = 1e-9);
        assert_relative_eq!(breakdown.decoder_share, 2.48 / 2990.96, epsilon = 1e-12);
        assert!((breakdown.decoder_share * 100.0 - 0.083).abs() < 0.005);
        drop(counts);
    }

    #[test]
    fn quadratic_term_discounts_low_res_more() {
        let counts = token_counts(32, 32, 0.3, None).unwrap();
        let linear = CostModel::new(1.0, 0.0, 0.0, 0.0).unwrap();
        let quadratic = CostModel::new(0.0, 1e-4, 512.0, 0.0).unwrap();
        let lin = estimate_cost(&[5, 6, 7], &counts, &linear).unwrap();
        let quad = estimate_cost(&[5, 6, 7], &counts, &quadratic).unwrap();
        // stage 1 carries a smaller share of the total under attention scaling
        assert!(quad.stages[0].share < lin.stages[0].share);
    }

    #[test]
    fn cost_is_linear_in_parameters() {
        let counts = token_counts(16, 16, 0.25, Some(0.4)).unwrap();
        let steps = [4, 5, 6];
        let m1 = CostModel::new(1.0, 2.0, 64.0, 3.0).unwrap();
        let m2 = CostModel::new(2.0, 4.0, 64.0, 6.0).unwrap();
        let c1 = estimate_cost(&steps, &counts, &m1).unwrap();
        let c2 = estimate_cost(&steps, &counts, &m2).unwrap();
        assert_relative_eq!(c2.total, 2.0 * c1.total, epsilon = 1e-9);
    }
}
