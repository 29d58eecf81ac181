//! Rectified-flow integration and the analytic Gaussian backend.
//!
//! Trajectories follow `x_t = (1-t) x_0 + t x_1` with `t = 0` at noise and
//! `t = 1` at data. The Gaussian backend models independent cells with
//! `x_0 ~ N(0, 1)` and `x_1 ~ N(mu, sigma^2)`, for which the conditional
//! velocity `E[x_1 - x_0 | x_t]` has a closed form — every moment a sampler
//! should reproduce is checkable against pencil-and-paper laws.

use crate::error::{Error, Result};
use crate::latent_grid::{LatentGrid, Level, TokenSet, SIBLING_OFFSETS};

/// Velocity predictor over mixed-resolution token sets.
///
/// `predict` returns one velocity per entry channel, flattened entry-major
/// (entry 0 channels, entry 1 channels, ...). Implementations must be
/// deterministic in `(tokens, t)`.
pub trait VelocityModel {
    fn predict(&self, tokens: &TokenSet, t: f64) -> Result<Vec<f64>>;

    /// Velocities for the masked entries only (used by token caching, which
    /// excludes frozen tokens from the model input). The returned vector
    /// covers masked entries in order. The default computes everything and
    /// filters; separable models should override to skip unmasked work.
    fn predict_masked(&self, tokens: &TokenSet, t: f64, mask: &[bool]) -> Result<Vec<f64>> {
        if mask.len() != tokens.entries.len() {
            return Err(Error::Shape("mask length must match token count".into()));
        }
        let all = self.predict(tokens, t)?;
        let ch = tokens.channels;
        let mut out = Vec::new();
        for (i, &keep) in mask.iter().enumerate() {
            if keep {
                out.extend_from_slice(&all[i * ch..(i + 1) * ch]);
            }
        }
        Ok(out)
    }
}

/// Velocity predictor over full high-resolution grids.
pub trait GridVelocityModel {
    /// Per-cell velocities in the grid's own layout.
    fn predict_grid(&self, grid: &LatentGrid, t: f64) -> Result<Vec<f64>>;
}

/// Independent-cell Gaussian data law: `x_1 ~ N(mu, sigma^2 I)` with a
/// per-cell mean field on the HIGH grid.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    pub mu: LatentGrid,
    pub sigma: f64,
}

impl GaussianTarget {
    pub fn new(mu: LatentGrid, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        Ok(Self { mu, sigma })
    }

    /// Default mean field: background 1.0 with a centered, block-aligned
    /// square of 2.0 spanning half the grid — enough edge structure for
    /// region scoring while every cell mean stays away from zero.
    pub fn square_field(high_height: usize, high_width: usize, channels: usize) -> LatentGrid {
        let (r0, rows) = ((high_height / 4) & !1, high_height / 2);
        let (c0, cols) = ((high_width / 4) & !1, high_width / 2);
        LatentGrid::from_fn(high_height, high_width, channels, Level::High, |_, r, c| {
            if r >= r0 && r < r0 + rows && c >= c0 && c < c0 + cols {
                2.0
            } else {
                1.0
            }
        })
    }
}

/// Closed-form conditional velocity for one cell:
/// `v = mu + ((t s^2 - (1-t)) (x - t mu)) / ((1-t)^2 + t^2 s^2)`.
#[inline]
pub fn gaussian_velocity_scalar(x: f64, t: f64, mu: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    mu + ((t * s2 - (1.0 - t)) * (x - t * mu)) / ((1.0 - t) * (1.0 - t) + t * t * s2)
}

/// Conditional velocity over a slice of cells paired with their means.
pub fn gaussian_velocity(x: &[f64], t: f64, mu: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if x.len() != mu.len() {
        return Err(Error::Shape(format!(
            "value/mean length mismatch: {} vs {}",
            x.len(),
            mu.len()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("t must lie in [0, 1], got {t}")));
    }
    Ok(x.iter()
        .zip(mu.iter())
        .map(|(&xi, &mi)| gaussian_velocity_scalar(xi, t, mi, sigma))
        .collect())
}

/// Parameters of the conditional law `x_t | x_1 ~ N(t x_1, (1-t)^2 I)`,
/// with the target's mean field standing in for the conditioning point.
pub fn gaussian_conditional_law(t: f64, target: &GaussianTarget) -> Result<(LatentGrid, f64)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("t must lie in [0, 1], got {t}")));
    }
    let mut mean = target.mu.clone();
    for v in &mut mean.values {
        *v *= t;
    }
    Ok((mean, (1.0 - t) * (1.0 - t)))
}

/// The Gaussian backend as a velocity model. Cells are independent, so both
/// full grids and arbitrary token subsets evaluate exactly: a LOW token's
/// velocity is the average of its four children's velocities at the
/// replicated value, which for this model equals the velocity under the
/// block-averaged mean.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    pub target: GaussianTarget,
}

impl GaussianModel {
    pub fn new(target: GaussianTarget) -> Self {
        Self { target }
    }

    fn entry_velocity(
        &self,
        entry_level: Level,
        row: usize,
        col: usize,
        values: &[f64],
        t: f64,
    ) -> Vec<f64> {
        let mu = &self.target.mu;
        let sigma = self.target.sigma;
        match entry_level {
            Level::High => (0..values.len())
                .map(|ch| gaussian_velocity_scalar(values[ch], t, mu.get(ch, row, col), sigma))
                .collect(),
            Level::Low => (0..values.len())
                .map(|ch| {
                    let mut acc = 0.0;
                    for (dr, dc) in SIBLING_OFFSETS {
                        acc += gaussian_velocity_scalar(
                            values[ch],
                            t,
                            mu.get(ch, 2 * row + dr, 2 * col + dc),
                            sigma,
                        );
                    }
                    acc / 4.0
                })
                .collect(),
        }
    }
}

impl GridVelocityModel for GaussianModel {
    fn predict_grid(&self, grid: &LatentGrid, t: f64) -> Result<Vec<f64>> {
        let mu = &self.target.mu;
        if grid.height != mu.height || grid.width != mu.width || grid.channels != mu.channels {
            return Err(Error::Shape(format!(
                "grid {}x{}x{} does not match mean field {}x{}x{}",
                grid.height, grid.width, grid.channels, mu.height, mu.width, mu.channels
            )));
        }
        gaussian_velocity(&grid.values, t, &mu.values, self.target.sigma)
    }
}

impl VelocityModel for GaussianModel {
    fn predict(&self, tokens: &TokenSet, t: f64) -> Result<Vec<f64>> {
        self.check_tokens(tokens)?;
        let mut out = Vec::with_capacity(tokens.entries.len() * tokens.channels);
        for e in &tokens.entries {
            out.extend(self.entry_velocity(e.level, e.row, e.col, &e.values, t));
        }
        Ok(out)
    }

    fn predict_masked(&self, tokens: &TokenSet, t: f64, mask: &[bool]) -> Result<Vec<f64>> {
        if mask.len() != tokens.entries.len() {
            return Err(Error::Shape("mask length must match token count".into()));
        }
        self.check_tokens(tokens)?;
        let mut out = Vec::new();
        for (e, &keep) in tokens.entries.iter().zip(mask.iter()) {
            if keep {
                out.extend(self.entry_velocity(e.level, e.row, e.col, &e.values, t));
            }
        }
        Ok(out)
    }
}

impl GaussianModel {
    fn check_tokens(&self, tokens: &TokenSet) -> Result<()> {
        let mu = &self.target.mu;
        if 2 * tokens.base_height != mu.height
            || 2 * tokens.base_width != mu.width
            || tokens.channels != mu.channels
        {
            return Err(Error::Shape(format!(
                "token base {}x{}x{} does not match mean field {}x{}x{}",
                tokens.base_height,
                tokens.base_width,
                tokens.channels,
                mu.height,
                mu.width,
                mu.channels
            )));
        }
        Ok(())
    }
}

/// Adapts a HIGH-grid velocity model to mixed token sets: the token set is
/// assembled into its replicated HIGH grid, the model runs once, HIGH tokens
/// take their cell's velocity and LOW tokens the average over their four
/// children. Exact for per-cell-separable models on replicated inputs.
#[derive(Debug, Clone)]
pub struct MixedVelocityAdapter<M: GridVelocityModel> {
    pub model: M,
}

impl<M: GridVelocityModel> MixedVelocityAdapter<M> {
    pub fn new(model: M) -> Self {
        Self { model }
    }
}

impl<M: GridVelocityModel> VelocityModel for MixedVelocityAdapter<M> {
    fn predict(&self, tokens: &TokenSet, t: f64) -> Result<Vec<f64>> {
        let grid = tokens.assemble_high()?;
        let v = self.model.predict_grid(&grid, t)?;
        let mut out = Vec::with_capacity(tokens.entries.len() * tokens.channels);
        for e in &tokens.entries {
            match e.level {
                Level::High => {
                    for ch in 0..tokens.channels {
                        out.push(v[grid.index(ch, e.row, e.col)]);
                    }
                }
                Level::Low => {
                    for ch in 0..tokens.channels {
                        let mut acc = 0.0;
                        for (dr, dc) in SIBLING_OFFSETS {
                            acc += v[grid.index(ch, 2 * e.row + dr, 2 * e.col + dc)];
                        }
                        out.push(acc / 4.0);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Explicit Euler over the given strictly increasing timesteps:
/// `x_{j+1} = x_j + (t_{j+1} - t_j) v(x_j, t_j)`.
pub fn euler_integrate<M: VelocityModel + ?Sized>(
    tokens: &TokenSet,
    model: &M,
    timesteps: &[f64],
) -> Result<TokenSet> {
    if timesteps.is_empty() {
        return Err(Error::Domain("at least one timestep required".into()));
    }
    if timesteps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain(
            "timesteps must be strictly increasing".into(),
        ));
    }
    let mut state = tokens.clone();
    let ch = state.channels;
    for j in 0..timesteps.len() - 1 {
        let dt = timesteps[j + 1] - timesteps[j];
        let v = model.predict(&state, timesteps[j])?;
        if v.len() != state.entries.len() * ch {
            return Err(Error::Shape("velocity length mismatch".into()));
        }
        for (i, e) in state.entries.iter_mut().enumerate() {
            for (c, val) in e.values.iter_mut().enumerate() {
                *val += dt * v[i * ch + c];
            }
        }
    }
    Ok(state)
}
