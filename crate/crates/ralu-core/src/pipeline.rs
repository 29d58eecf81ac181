//! The three-stage mixed-resolution sampler.
//!
//! Stage 1 denoises at low resolution on `[0, e_1]`. The data endpoint is
//! then estimated with the one-step extrapolation, decoded and edge-scored;
//! the top-k patches are promoted to high resolution and every token is
//! renoised back to `s_2`. Stage 2 runs the mixed token set on `[s_2, e_2]`,
//! after which the remaining low tokens are promoted and renoised to `s_3`
//! for the full-resolution stage 3. Newly replicated tokens receive
//! correlated noise `N(0, I - c Sigma)`; tokens already carrying an
//! isotropic residual receive isotropic noise scaled by `b sqrt(1-c)`, which
//! matches the correlated branch's conditional variance exactly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::caching::{run_stage, CachePolicy, StageCacheSettings};
use crate::error::{Error, Result};
use crate::flow::{GaussianModel, VelocityModel};
use crate::latent_grid::{LatentGrid, Level, TokenSet};
use crate::noise::{correlated_alpha, correlated_block};
use crate::region_select::{
    canny, patch_scores, select_topk, tweedie_terminal, CannyParams, Decoder, EdgeScoreMap,
};
use crate::rng::stream_rng;
use crate::schedule::{
    discretize_timesteps, injection_coefficients, solve_ntdm_with, SchedulePlan, SolveOptions,
    StageConfig, TransitionCoefficients,
};

/// Everything a pipeline run needs besides the velocity model and decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub base_height: usize,
    pub base_width: usize,
    pub channels: usize,
    pub stages: Vec<StageConfig>,
    /// Fraction of patches promoted at the first transition.
    pub ratio: f64,
    pub h_ori: f64,
    /// Fix the noise strength instead of solving for it.
    pub c_override: Option<f64>,
    pub seed: u64,
    pub footprint: usize,
    pub canny: CannyParams,
    pub caching: Option<CachePolicy>,
    pub baseline_steps: u32,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_height == 0 || self.base_width == 0 || self.channels == 0 {
            return Err(Error::Domain(
                "base shape and channels must be positive".into(),
            ));
        }
        if self.stages.len() < 2 {
            return Err(Error::Domain(
                "the pipeline needs at least two stages".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::Domain(format!(
                "ratio must lie in [0, 1], got {}",
                self.ratio
            )));
        }
        if self.footprint == 0 {
            return Err(Error::Domain("footprint must be positive".into()));
        }
        if self.baseline_steps == 0 {
            return Err(Error::Domain("baseline step count must be positive".into()));
        }
        Ok(())
    }

    pub fn patches(&self) -> usize {
        self.base_height * self.base_width
    }
}

/// Per-stage execution record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub tokens: usize,
    pub steps: u32,
    pub start: f64,
    pub end: f64,
    pub shift: f64,
    pub timesteps: Vec<f64>,
    pub computed_tokens_per_step: Vec<usize>,
    pub caching_active: bool,
    pub caching_note: Option<String>,
    pub frozen_tokens: usize,
}

/// Full record of one run: schedule, selection, per-stage accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub seed: u64,
    pub base_height: usize,
    pub base_width: usize,
    pub channels: usize,
    pub ratio: f64,
    pub h_ori: f64,
    pub c: f64,
    pub jsd: f64,
    pub coefficients: Vec<TransitionCoefficients>,
    pub selection: Option<EdgeScoreMap>,
    pub stages: Vec<StageReport>,
    /// Tokens passed to the model across all integration steps.
    pub integration_token_steps: u64,
    /// The extra model evaluation for the endpoint estimate at `e_1`.
    pub tweedie_eval_tokens: u64,
    pub baseline_token_steps: u64,
    pub token_step_reduction: f64,
}

/// Solves the schedule for a config (honoring a fixed noise strength).
pub fn solve_plan(cfg: &RunConfig) -> Result<SchedulePlan> {
    cfg.validate()?;
    let opts = SolveOptions {
        fixed_c: cfg.c_override,
        ..SolveOptions::default()
    };
    solve_ntdm_with(&cfg.stages, cfg.h_ori, &opts)
}

/// Runs the full pipeline, solving the schedule first.
pub fn run_ralu<M: VelocityModel + ?Sized>(
    cfg: &RunConfig,
    model: &M,
    decoder: &dyn Decoder,
) -> Result<(LatentGrid, RunReport)> {
    let plan = solve_plan(cfg)?;
    run_ralu_with_plan(cfg, &plan, model, decoder)
}

/// Runs the pipeline under an already-solved schedule (Monte-Carlo callers
/// reuse one plan across seeds).
pub fn run_ralu_with_plan<M: VelocityModel + ?Sized>(
    cfg: &RunConfig,
    plan: &SchedulePlan,
    model: &M,
    decoder: &dyn Decoder,
) -> Result<(LatentGrid, RunReport)> {
    cfg.validate()?;
    plan.validate()?;
    if plan.stages.len() != cfg.stages.len() {
        return Err(Error::Consistency(
            "plan and config stage counts differ".into(),
        ));
    }
    let k_stages = plan.stages.len();

    let mut init_rng = stream_rng(cfg.seed, "init");
    let init = LatentGrid::from_fn(
        cfg.base_height,
        cfg.base_width,
        cfg.channels,
        Level::Low,
        |_, _, _| init_rng.sample(StandardNormal),
    );
    let mut state = TokenSet::from_low_grid(&init)?;

    let mut stage_reports = Vec::with_capacity(k_stages);
    let mut selection: Option<EdgeScoreMap> = None;
    let mut tweedie_eval_tokens = 0u64;

    for k in 0..k_stages {
        let stage_plan = &plan.stages[k];
        let cache_settings = cache_for_stage(cfg.caching.as_ref(), k, k_stages);
        let exec = run_stage(&state, model, &stage_plan.timesteps, cache_settings)?;
        let tokens_in_stage = state.token_count();
        state = exec.tokens;
        state.validate_coverage()?;
        stage_reports.push(StageReport {
            stage: k + 1,
            tokens: tokens_in_stage,
            steps: stage_plan.steps,
            start: stage_plan.start,
            end: stage_plan.end,
            shift: stage_plan.shift,
            timesteps: stage_plan.timesteps.clone(),
            computed_tokens_per_step: exec.computed_per_step,
            caching_active: exec.caching_active,
            caching_note: exec.note,
            frozen_tokens: exec.frozen_tokens,
        });

        if k + 1 == k_stages {
            break;
        }

        // Region selection runs exactly once, on the stage-1 terminal state.
        if k == 0 && k_stages > 2 {
            let map = score_regions(&state, model, decoder, stage_plan.end, cfg)?;
            tweedie_eval_tokens = state.token_count() as u64;
            selection = Some(map);
        }
        let newly: Vec<(usize, usize)> = if k == k_stages - 2 {
            state.low_patches()
        } else if k == 0 {
            selection
                .as_ref()
                .map(|s| s.selected.clone())
                .unwrap_or_default()
        } else {
            Vec::new()
        };
        let mut inject_rng = stream_rng(cfg.seed, &format!("inject/{}", k + 1));
        state = apply_transition(
            &state,
            &newly,
            &plan.coefficients[k],
            plan.c,
            &mut inject_rng,
        )?;
        state.validate_coverage()?;
    }

    let final_grid = state.assemble_high()?;
    let integration_token_steps: u64 = stage_reports
        .iter()
        .flat_map(|s| s.computed_tokens_per_step.iter())
        .map(|&t| t as u64)
        .sum();
    let baseline_token_steps = u64::from(cfg.baseline_steps) * 4 * cfg.patches() as u64;
    let report = RunReport {
        mode: "ralu".into(),
        seed: cfg.seed,
        base_height: cfg.base_height,
        base_width: cfg.base_width,
        channels: cfg.channels,
        ratio: cfg.ratio,
        h_ori: plan.h_ori,
        c: plan.c,
        jsd: plan.jsd,
        coefficients: plan.coefficients.clone(),
        selection,
        stages: stage_reports,
        integration_token_steps,
        tweedie_eval_tokens,
        baseline_token_steps,
        token_step_reduction: baseline_token_steps as f64 / integration_token_steps as f64,
    };
    Ok((final_grid, report))
}

fn cache_for_stage(
    policy: Option<&CachePolicy>,
    stage_index: usize,
    k_stages: usize,
) -> Option<StageCacheSettings> {
    let policy = policy?;
    let enabled = match stage_index {
        0 => false, // stage 1 is never cached
        1 => policy.stage2,
        2 => policy.stage3,
        _ => false,
    };
    enabled.then_some(StageCacheSettings {
        ratio: policy.ratio,
        final_step_full: stage_index == k_stages - 1,
    })
}

/// Endpoint estimate, decode, edge detection and top-k selection.
fn score_regions<M: VelocityModel + ?Sized>(
    state: &TokenSet,
    model: &M,
    decoder: &dyn Decoder,
    t: f64,
    cfg: &RunConfig,
) -> Result<EdgeScoreMap> {
    let velocities = model.predict(state, t)?;
    let ch = state.channels;
    let mut estimate = LatentGrid::zeros(state.base_height, state.base_width, ch, Level::Low);
    for (i, entry) in state.entries.iter().enumerate() {
        if entry.level != Level::Low {
            return Err(Error::Contract(
                "region selection expects an all-LOW state".into(),
            ));
        }
        let est = tweedie_terminal(&entry.values, t, &velocities[i * ch..(i + 1) * ch])?;
        for (c, v) in est.iter().enumerate() {
            let idx = estimate.index(c, entry.row, entry.col);
            estimate.values[idx] = *v;
        }
    }
    let image = decoder.decode(&estimate)?;
    let edges = canny(&image, &cfg.canny)?;
    let scores = patch_scores(
        &edges,
        state.base_height,
        state.base_width,
        decoder.footprint(),
    )?;
    select_topk(&scores, cfg.ratio)
}

/// Upsamples `newly` and renoises every token with the transition
/// coefficients: correlated blocks for the fresh replicas, isotropic noise
/// scaled by `b sqrt(1-c)` for everything else. Noise is drawn in canonical
/// entry order, channel-major within each entry.
fn apply_transition(
    state: &TokenSet,
    newly: &[(usize, usize)],
    coef: &TransitionCoefficients,
    c: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TokenSet> {
    let mut upsampled = state.upsample_selected(newly)?;
    let mut is_new = vec![false; state.base_height * state.base_width];
    for &(r, col) in newly {
        is_new[r * state.base_width + col] = true;
    }
    let alpha = correlated_alpha(c)?;
    let (a, b) = (coef.a, coef.b);
    let b_iso = b * (1.0 - c).sqrt();
    let channels = upsampled.channels;

    let mut i = 0;
    while i < upsampled.entries.len() {
        let entry = &upsampled.entries[i];
        let fresh = entry.level == Level::High
            && is_new[(entry.row / 2) * state.base_width + entry.col / 2];
        if fresh {
            debug_assert_eq!((entry.row % 2, entry.col % 2), (0, 0));
            for ch in 0..channels {
                let block = correlated_block(rng, alpha);
                for (child, z) in block.iter().enumerate() {
                    let value = &mut upsampled.entries[i + child].values[ch];
                    *value = a * *value + b * z;
                }
            }
            i += 4;
        } else {
            for ch in 0..channels {
                let eps: f64 = rng.sample(StandardNormal);
                let value = &mut upsampled.entries[i].values[ch];
                *value = a * *value + b_iso * eps;
            }
            i += 1;
        }
    }
    Ok(upsampled)
}

/// Single-stage full-resolution baseline under the original shift.
pub fn run_fullres_baseline<M: VelocityModel + ?Sized>(
    cfg: &RunConfig,
    model: &M,
) -> Result<(LatentGrid, RunReport)> {
    cfg.validate()?;
    let timesteps = discretize_timesteps(0.0, 1.0, cfg.h_ori, cfg.baseline_steps)?;
    let mut init_rng = stream_rng(cfg.seed, "init");
    let init = LatentGrid::from_fn(
        2 * cfg.base_height,
        2 * cfg.base_width,
        cfg.channels,
        Level::High,
        |_, _, _| init_rng.sample(StandardNormal),
    );
    let tokens = TokenSet::from_high_grid(&init)?;
    let exec = run_stage(&tokens, model, &timesteps, None)?;
    let final_grid = exec.tokens.assemble_high()?;
    let tokens_total = 4 * cfg.patches();
    let integration_token_steps: u64 = exec.computed_per_step.iter().map(|&t| t as u64).sum();
    let report = RunReport {
        mode: "baseline".into(),
        seed: cfg.seed,
        base_height: cfg.base_height,
        base_width: cfg.base_width,
        channels: cfg.channels,
        ratio: cfg.ratio,
        h_ori: cfg.h_ori,
        c: 0.0,
        jsd: 0.0,
        coefficients: Vec::new(),
        selection: None,
        stages: vec![StageReport {
            stage: 1,
            tokens: tokens_total,
            steps: cfg.baseline_steps,
            start: 0.0,
            end: 1.0,
            shift: cfg.h_ori,
            timesteps,
            computed_tokens_per_step: exec.computed_per_step,
            caching_active: false,
            caching_note: None,
            frozen_tokens: 0,
        }],
        integration_token_steps,
        tweedie_eval_tokens: 0,
        baseline_token_steps: integration_token_steps,
        token_step_reduction: 1.0,
    };
    Ok((final_grid, report))
}

/// Options for the upsampling-timing experiment.
#[derive(Debug, Clone)]
pub struct TimingSweepOptions {
    pub steps_low: u32,
    pub steps_high: u32,
    pub n_runs: usize,
    pub c_override: Option<f64>,
}

/// Ensemble statistics for one branch (injection applied or skipped).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchStats {
    /// Mean within-block correlation of the state entering stage 2.
    pub start_within_block_corr: f64,
    pub terminal_mean_abs_err_max: f64,
    /// Mean per-cell variance over sigma^2.
    pub terminal_var_ratio_mean: f64,
    pub terminal_within_block_corr: f64,
}

/// Measurements for one upsampling timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub upsample_t: f64,
    pub s_next: f64,
    pub c: f64,
    pub shift_low: f64,
    pub shift_high: f64,
    pub n_runs: usize,
    pub with_injection: BranchStats,
    pub without_injection: BranchStats,
}

/// Two-stage experiment: denoise everything at low resolution up to each
/// sweep timestep, upsample all latents, and continue at high resolution
/// with and without the noise-timestep rescheduling. Reports within-block
/// correlations and terminal moment errors against the analytic target; no
/// quality verdict is attached.
pub fn run_timing_sweep(
    cfg: &RunConfig,
    model: &GaussianModel,
    timings: &[f64],
    opts: &TimingSweepOptions,
) -> Result<Vec<TimingReport>> {
    cfg.validate()?;
    if opts.n_runs == 0 {
        return Err(Error::Domain("n_runs must be positive".into()));
    }
    if opts.steps_high == 0 {
        return Err(Error::Domain(
            "the high-resolution stage needs steps".into(),
        ));
    }
    let mut reports = Vec::with_capacity(timings.len());
    for (ti, &t_up) in timings.iter().enumerate() {
        if !(0.0..1.0).contains(&t_up) {
            return Err(Error::Domain(format!(
                "upsample timestep must lie in [0, 1), got {t_up}"
            )));
        }
        let (low_ts, high_ts, coef, c, shift_low, shift_high) = if t_up == 0.0 {
            let c = opts.c_override.unwrap_or(0.1);
            let coef = injection_coefficients(0.0, c)?;
            let high = discretize_timesteps(0.0, 1.0, cfg.h_ori, opts.steps_high)?;
            (Vec::new(), high, coef, c, cfg.h_ori, cfg.h_ori)
        } else {
            if opts.steps_low == 0 {
                return Err(Error::Domain(
                    "nonzero sweep timesteps need low-res steps".into(),
                ));
            }
            let configs = [
                StageConfig {
                    steps: opts.steps_low,
                    end: t_up,
                },
                StageConfig {
                    steps: opts.steps_high,
                    end: 1.0,
                },
            ];
            let solve_opts = SolveOptions {
                fixed_c: opts.c_override,
                ..SolveOptions::default()
            };
            let plan = solve_ntdm_with(&configs, cfg.h_ori, &solve_opts)?;
            let coef = injection_coefficients(t_up, plan.c)?;
            (
                plan.stages[0].timesteps.clone(),
                plan.stages[1].timesteps.clone(),
                coef,
                plan.c,
                plan.stages[0].shift,
                plan.stages[1].shift,
            )
        };
        // The skip branch carries no rescheduling at all: it resumes on the
        // original shift over [t_up, 1].
        let skip_ts = discretize_timesteps(t_up, 1.0, cfg.h_ori, opts.steps_high)?;

        let (h, w, ch) = (2 * cfg.base_height, 2 * cfg.base_width, cfg.channels);
        let mut start_inj = MomentAccumulator::new(h, w, ch);
        let mut start_skip = MomentAccumulator::new(h, w, ch);
        let mut term_inj = MomentAccumulator::new(h, w, ch);
        let mut term_skip = MomentAccumulator::new(h, w, ch);
        let alpha = correlated_alpha(c)?;
        let b_scale = coef.b;

        for run in 0..opts.n_runs {
            let seed = crate::rng::derive_seed(cfg.seed, &format!("sweep/{ti}/{run}"));
            let mut init_rng = stream_rng(seed, "init");
            let init = LatentGrid::from_fn(
                cfg.base_height,
                cfg.base_width,
                cfg.channels,
                Level::Low,
                |_, _, _| init_rng.sample(StandardNormal),
            );
            let mut low = TokenSet::from_low_grid(&init)?;
            if !low_ts.is_empty() {
                low = run_stage(&low, model, &low_ts, None)?.tokens;
            }
            let up = low.assemble_high()?;

            // injected branch
            let mut inject_rng = stream_rng(seed, "inject/sweep");
            let mut injected = up.clone();
            for chn in 0..ch {
                for br in 0..h / 2 {
                    for bc in 0..w / 2 {
                        let block = correlated_block(&mut inject_rng, alpha);
                        for (bi, (dr, dc)) in crate::latent_grid::SIBLING_OFFSETS.iter().enumerate()
                        {
                            let idx = injected.index(chn, 2 * br + dr, 2 * bc + dc);
                            injected.values[idx] =
                                coef.a * injected.values[idx] + b_scale * block[bi];
                        }
                    }
                }
            }
            start_inj.add(&injected.values);
            start_skip.add(&up.values);

            let inj_tokens = TokenSet::from_high_grid(&injected)?;
            let inj_final = run_stage(&inj_tokens, model, &high_ts, None)?
                .tokens
                .assemble_high()?;
            term_inj.add(&inj_final.values);

            let skip_tokens = TokenSet::from_high_grid(&up)?;
            let skip_final = run_stage(&skip_tokens, model, &skip_ts, None)?
                .tokens
                .assemble_high()?;
            term_skip.add(&skip_final.values);
        }

        let sigma2 = model.target.sigma * model.target.sigma;
        let mu = &model.target.mu.values;
        reports.push(TimingReport {
            upsample_t: t_up,
            s_next: coef.s_next,
            c,
            shift_low,
            shift_high,
            n_runs: opts.n_runs,
            with_injection: BranchStats {
                start_within_block_corr: start_inj.within_block_corr_mean(),
                terminal_mean_abs_err_max: term_inj.mean_abs_err_max(mu),
                terminal_var_ratio_mean: term_inj.var_mean() / sigma2,
                terminal_within_block_corr: term_inj.within_block_corr_mean(),
            },
            without_injection: BranchStats {
                start_within_block_corr: start_skip.within_block_corr_mean(),
                terminal_mean_abs_err_max: term_skip.mean_abs_err_max(mu),
                terminal_var_ratio_mean: term_skip.var_mean() / sigma2,
                terminal_within_block_corr: term_skip.within_block_corr_mean(),
            },
        });
    }
    Ok(reports)
}

/// Streaming per-cell moments plus within-block pair products over a HIGH
/// grid layout.
struct MomentAccumulator {
    h: usize,
    w: usize,
    ch: usize,
    n: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    pairs: Vec<[f64; 6]>,
}

const BLOCK_PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

impl MomentAccumulator {
    fn new(h: usize, w: usize, ch: usize) -> Self {
        let cells = h * w * ch;
        let blocks = (h / 2) * (w / 2) * ch;
        Self {
            h,
            w,
            ch,
            n: 0,
            sum: vec![0.0; cells],
            sum_sq: vec![0.0; cells],
            pairs: vec![[0.0; 6]; blocks],
        }
    }

    fn add(&mut self, values: &[f64]) {
        self.n += 1;
        for (i, v) in values.iter().enumerate() {
            self.sum[i] += v;
            self.sum_sq[i] += v * v;
        }
        for chn in 0..self.ch {
            let plane = chn * self.h * self.w;
            for br in 0..self.h / 2 {
                for bc in 0..self.w / 2 {
                    let block = (chn * (self.h / 2) + br) * (self.w / 2) + bc;
                    let mut vals = [0.0; 4];
                    for (i, (dr, dc)) in crate::latent_grid::SIBLING_OFFSETS.iter().enumerate() {
                        vals[i] = values[plane + (2 * br + dr) * self.w + 2 * bc + dc];
                    }
                    for (p, (i, j)) in BLOCK_PAIRS.iter().enumerate() {
                        self.pairs[block][p] += vals[*i] * vals[*j];
                    }
                }
            }
        }
    }

    fn mean(&self, i: usize) -> f64 {
        self.sum[i] / self.n as f64
    }

    fn var(&self, i: usize) -> f64 {
        let m = self.mean(i);
        (self.sum_sq[i] / self.n as f64 - m * m).max(0.0)
    }

    fn var_mean(&self) -> f64 {
        (0..self.sum.len()).map(|i| self.var(i)).sum::<f64>() / self.sum.len() as f64
    }

    fn mean_abs_err_max(&self, reference: &[f64]) -> f64 {
        (0..self.sum.len())
            .map(|i| (self.mean(i) - reference[i]).abs())
            .fold(0.0, f64::max)
    }

    fn within_block_corr_mean(&self) -> f64 {
        let nf = self.n as f64;
        let mut acc = 0.0;
        let mut count = 0usize;
        for chn in 0..self.ch {
            let plane = chn * self.h * self.w;
            for br in 0..self.h / 2 {
                for bc in 0..self.w / 2 {
                    let block = (chn * (self.h / 2) + br) * (self.w / 2) + bc;
                    let mut idx = [0usize; 4];
                    for (i, (dr, dc)) in crate::latent_grid::SIBLING_OFFSETS.iter().enumerate() {
                        idx[i] = plane + (2 * br + dr) * self.w + 2 * bc + dc;
                    }
                    for (p, (i, j)) in BLOCK_PAIRS.iter().enumerate() {
                        let cov =
                            self.pairs[block][p] / nf - self.mean(idx[*i]) * self.mean(idx[*j]);
                        let denom = (self.var(idx[*i]) * self.var(idx[*j])).sqrt();
                        if denom > 0.0 {
                            acc += cov / denom;
                            count += 1;
                        }
                    }
                }
            }
        }
        if count == 0 {
            0.0
        } else {
            acc / count as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::GaussianTarget;
    use crate::region_select::NormDecoder;

    fn test_config(base: usize, seed: u64) -> RunConfig {
        RunConfig {
            base_height: base,
            base_width: base,
            channels: 1,
            stages: vec![
                StageConfig { steps: 3, end: 0.3 },
                StageConfig {
                    steps: 3,
                    end: 0.45,
                },
                StageConfig { steps: 4, end: 1.0 },
            ],
            ratio: 0.3,
            h_ori: 3.0,
            c_override: Some(0.0251),
            seed,
            footprint: 4,
            canny: CannyParams::default(),
            caching: None,
            baseline_steps: 10,
        }
    }

    fn model_for(cfg: &RunConfig, sigma: f64) -> GaussianModel {
        let mu =
            GaussianTarget::square_field(2 * cfg.base_height, 2 * cfg.base_width, cfg.channels);
        GaussianModel::new(GaussianTarget::new(mu, sigma).unwrap())
    }

    #[test]
    fn pipeline_token_counts_and_shapes() {
        let cfg = test_config(8, 3);
        let model = model_for(&cfg, 0.5);
        let decoder = NormDecoder::new(cfg.footprint).unwrap();
        let (grid, report) = run_ralu(&cfg, &model, &decoder).unwrap();
        assert_eq!((grid.height, grid.width), (16, 16));
        let p = 64;
        let k = 20; // ceil(0.3 * 64)
        assert_eq!(report.stages[0].tokens, p);
        assert_eq!(report.stages[1].tokens, p + 3 * k);
        assert_eq!(report.stages[2].tokens, 4 * p);
        assert_eq!(report.selection.as_ref().unwrap().selected.len(), k);
        assert_eq!(report.tweedie_eval_tokens, p as u64);
    }

    #[test]
    fn determinism_per_seed() {
        let cfg = test_config(4, 11);
        let model = model_for(&cfg, 0.5);
        let decoder = NormDecoder::new(cfg.footprint).unwrap();
        let plan = solve_plan(&cfg).unwrap();
        let (a, ra) = run_ralu_with_plan(&cfg, &plan, &model, &decoder).unwrap();
        let (b, rb) = run_ralu_with_plan(&cfg, &plan, &model, &decoder).unwrap();
        assert!(a
            .values
            .iter()
            .zip(b.values.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(ra, rb);

        let mut other = cfg.clone();
        other.seed = 12;
        let (c_grid, _) = run_ralu_with_plan(&other, &plan, &model, &decoder).unwrap();
        assert_ne!(a.values, c_grid.values);
    }

    #[test]
    fn extreme_ratios_collapse_stage_two() {
        let mut cfg = test_config(4, 5);
        let model = model_for(&cfg, 0.5);
        let decoder = NormDecoder::new(cfg.footprint).unwrap();

        cfg.ratio = 1.0;
        let (_, full) = run_ralu(&cfg, &model, &decoder).unwrap();
        assert_eq!(full.stages[1].tokens, 64); // 4P: everything promoted early

        cfg.ratio = 0.0;
        let (_, none) = run_ralu(&cfg, &model, &decoder).unwrap();
        assert_eq!(none.stages[1].tokens, 16); // still all-LOW in stage 2
    }

    #[test]
    fn accounting_matches_cost_module() {
        let mut cfg = test_config(8, 9);
        cfg.stages = vec![
            StageConfig { steps: 5, end: 0.3 },
            StageConfig {
                steps: 6,
                end: 0.45,
            },
            StageConfig { steps: 7, end: 1.0 },
        ];
        cfg.caching = Some(CachePolicy::with_ratio(0.4));
        let model = model_for(&cfg, 0.5);
        let decoder = NormDecoder::new(cfg.footprint).unwrap();
        let (_, report) = run_ralu(&cfg, &model, &decoder).unwrap();
        let counts = crate::cost::token_counts(8, 8, 0.3, Some(0.4)).unwrap();
        let steps: Vec<u32> = cfg.stages.iter().map(|s| s.steps).collect();
        let summary = crate::cost::token_steps(&steps, &counts, cfg.baseline_steps, 8, 8).unwrap();
        assert_eq!(report.integration_token_steps, summary.total);
    }

    #[test]
    fn caching_zero_matches_uncached_bits() {
        let mut cfg = test_config(4, 21);
        let model = model_for(&cfg, 0.5);
        let decoder = NormDecoder::new(cfg.footprint).unwrap();
        let plan = solve_plan(&cfg).unwrap();
        let (plain, _) = run_ralu_with_plan(&cfg, &plan, &model, &decoder).unwrap();
        cfg.caching = Some(CachePolicy::with_ratio(0.0));
        let (cached, _) = run_ralu_with_plan(&cfg, &plan, &model, &decoder).unwrap();
        assert!(plain
            .values
            .iter()
            .zip(cached.values.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn baseline_runs_and_accounts() {
        let cfg = test_config(8, 2);
        let model = model_for(&cfg, 0.5);
        let (grid, report) = run_fullres_baseline(&cfg, &model).unwrap();
        assert_eq!((grid.height, grid.width), (16, 16));
        assert_eq!(report.integration_token_steps, 10 * 4 * 64);
        assert_eq!(report.mode, "baseline");
        let (again, _) = run_fullres_baseline(&cfg, &model).unwrap();
        assert_eq!(grid, again);
    }

    #[test]
    fn timing_sweep_brackets() {
        let cfg = test_config(4, 7);
        let model = model_for(&cfg, 0.5);
        let opts = TimingSweepOptions {
            steps_low: 3,
            steps_high: 6,
            n_runs: 400,
            c_override: Some(0.0251),
        };
        let reports = run_timing_sweep(&cfg, &model, &[0.0, 0.2, 0.7], &opts).unwrap();
        assert_eq!(reports.len(), 3);
        for r in &reports {
            // replication is exact correlation before injection
            assert!(
                r.without_injection.start_within_block_corr > 0.999,
                "raw start corr {} at t={}",
                r.without_injection.start_within_block_corr,
                r.upsample_t
            );
            assert!(r.with_injection.start_within_block_corr < 0.3);
        }
        // the early-vs-late asymmetry: late upsampling leaves more
        // within-block correlation at the terminal state
        let early = &reports[1].with_injection;
        let late = &reports[2].with_injection;
        assert!(
            late.terminal_within_block_corr > early.terminal_within_block_corr,
            "late {} vs early {}",
            late.terminal_within_block_corr,
            early.terminal_within_block_corr
        );

        // upsampling at t = 0 injects to an exactly isotropic start, so the
        // injected branch is in law the 6-step full-resolution sampler: its
        // terminal variance matches the discrete Euler propagation and no
        // block correlation survives
        let at_zero = &reports[0].with_injection;
        assert!(at_zero.start_within_block_corr.abs() < 0.05);
        assert!(at_zero.terminal_within_block_corr.abs() < 0.05);
        let sigma2 = 0.25;
        let beta = |t: f64| (t * sigma2 - (1.0 - t)) / ((1.0 - t) * (1.0 - t) + t * t * sigma2);
        let ts = discretize_timesteps(0.0, 1.0, cfg.h_ori, 6).unwrap();
        let mut predicted = 1.0;
        for w in ts.windows(2) {
            let m = 1.0 + beta(w[0]) * (w[1] - w[0]);
            predicted *= m * m;
        }
        let measured = at_zero.terminal_var_ratio_mean * sigma2;
        assert!(
            (measured - predicted).abs() / predicted < 0.15,
            "terminal var {measured} vs discrete-flow prediction {predicted}"
        );
    }
}
