//! Token caching within a stage.
//!
//! The first two steps of a cached stage run the model on every token. The
//! two velocity predictions are compared per token by cosine similarity, and
//! the most stable fraction is frozen: frozen tokens hold their second-step
//! velocity for the remaining steps while the rest recompute. The final step
//! of the last stage always recomputes everything, and stage 1 is never
//! cached (the callers enforce that policy).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::VelocityModel;
use crate::latent_grid::TokenSet;
use crate::util::floor_ratio;

/// Which stages cache and how much.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CachePolicy {
    /// Fraction of tokens frozen after the ranking steps, in [0, 1).
    pub ratio: f64,
    pub stage2: bool,
    pub stage3: bool,
}

impl Default for CachePolicy {
    fn default() -> Self {
        Self {
            ratio: 0.4,
            stage2: true,
            stage3: true,
        }
    }
}

impl CachePolicy {
    pub fn with_ratio(ratio: f64) -> Self {
        Self {
            ratio,
            ..Self::default()
        }
    }
}

/// Number of tokens the model sees per cached step: `floor((1 - ratio) * T)`.
pub fn computed_tokens_per_cached_step(total_tokens: usize, ratio: f64) -> usize {
    floor_ratio(1.0 - ratio, total_tokens)
}

/// Token indices ordered by descending cosine similarity between two
/// velocity predictions, ties broken by ascending token index. A zero-norm
/// prediction ranks as similarity -1 (always recomputed).
pub fn similarity_rank(first: &[f64], second: &[f64], channels: usize) -> Result<Vec<usize>> {
    if first.len() != second.len() || channels == 0 || first.len() % channels != 0 {
        return Err(Error::Shape(format!(
            "prediction buffers must align: {} vs {} values, {} channels",
            first.len(),
            second.len(),
            channels
        )));
    }
    let tokens = first.len() / channels;
    let mut sims = Vec::with_capacity(tokens);
    for i in 0..tokens {
        let a = &first[i * channels..(i + 1) * channels];
        let b = &second[i * channels..(i + 1) * channels];
        let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        sims.push(if na == 0.0 || nb == 0.0 {
            -1.0
        } else {
            dot / (na * nb)
        });
    }
    let mut order: Vec<usize> = (0..tokens).collect();
    order.sort_by(|&a, &b| {
        sims[b]
            .partial_cmp(&sims[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    Ok(order)
}

/// Cache settings for one stage execution.
#[derive(Debug, Clone, Copy)]
pub struct StageCacheSettings {
    pub ratio: f64,
    /// Recompute all tokens at the stage's final step (the output boundary
    /// of the last stage).
    pub final_step_full: bool,
}

/// Outcome of one stage: the advanced token set plus the per-step count of
/// tokens actually passed to the model.
#[derive(Debug, Clone)]
pub struct StageExecution {
    pub tokens: TokenSet,
    pub computed_per_step: Vec<usize>,
    pub caching_active: bool,
    pub frozen_tokens: usize,
    pub note: Option<String>,
}

/// Euler-steps a token set over `timesteps`, optionally with token caching.
///
/// Without caching (or with ratio 0) this is arithmetically identical to
/// plain Euler integration. Stages with fewer than three steps cannot rank
/// and silently disable caching, noting why.
pub fn run_stage<M: VelocityModel + ?Sized>(
    tokens: &TokenSet,
    model: &M,
    timesteps: &[f64],
    cache: Option<StageCacheSettings>,
) -> Result<StageExecution> {
    if timesteps.len() < 2 {
        return Err(Error::Domain(
            "a stage needs at least one integration interval".into(),
        ));
    }
    if timesteps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain(
            "timesteps must be strictly increasing".into(),
        ));
    }
    let n_steps = timesteps.len() - 1;
    let total = tokens.token_count();
    let channels = tokens.channels;

    let mut note = None;
    let active = match cache {
        None => false,
        Some(settings) => {
            if !(0.0..1.0).contains(&settings.ratio) {
                return Err(Error::Domain(format!(
                    "caching ratio must lie in [0, 1), got {}",
                    settings.ratio
                )));
            }
            if n_steps < 3 {
                note = Some(format!("caching disabled: stage has {n_steps} steps (< 3)"));
                false
            } else {
                true
            }
        }
    };
    let settings = cache.unwrap_or(StageCacheSettings {
        ratio: 0.0,
        final_step_full: false,
    });
    let frozen_target = if active {
        total - computed_tokens_per_cached_step(total, settings.ratio)
    } else {
        0
    };

    let mut state = tokens.clone();
    let mut velocities = vec![0.0; total * channels];
    let mut first_prediction: Vec<f64> = Vec::new();
    let mut frozen = vec![false; total];
    let mut frozen_count = 0usize;
    let mut computed_per_step = Vec::with_capacity(n_steps);

    for j in 0..n_steps {
        let t = timesteps[j];
        let dt = timesteps[j + 1] - timesteps[j];
        let final_step = j == n_steps - 1;
        let full =
            !active || j < 2 || frozen_count == 0 || (final_step && settings.final_step_full);
        if full {
            velocities = model.predict(&state, t)?;
            if velocities.len() != total * channels {
                return Err(Error::Shape("velocity length mismatch".into()));
            }
            computed_per_step.push(total);
            if active && j == 0 {
                first_prediction = velocities.clone();
            }
            if active && j == 1 {
                let order = similarity_rank(&first_prediction, &velocities, channels)?;
                for &tok in order.iter().take(frozen_target) {
                    frozen[tok] = true;
                }
                frozen_count = frozen_target;
            }
        } else {
            let mask: Vec<bool> = frozen.iter().map(|f| !f).collect();
            let fresh = model.predict_masked(&state, t, &mask)?;
            let mut cursor = 0usize;
            for (i, keep) in mask.iter().enumerate() {
                if *keep {
                    velocities[i * channels..(i + 1) * channels]
                        .copy_from_slice(&fresh[cursor * channels..(cursor + 1) * channels]);
                    cursor += 1;
                }
            }
            if cursor * channels != fresh.len() {
                return Err(Error::Shape("masked velocity length mismatch".into()));
            }
            computed_per_step.push(total - frozen_count);
        }
        for (i, entry) in state.entries.iter_mut().enumerate() {
            for (c, value) in entry.values.iter_mut().enumerate() {
                *value += dt * velocities[i * channels + c];
            }
        }
    }

    Ok(StageExecution {
        tokens: state,
        computed_per_step,
        caching_active: active,
        frozen_tokens: frozen_count,
        note,
    })
}
