//! Noise-timestep rescheduling with distribution matching.
//!
//! Flow-matching samplers draw timesteps from the shifted density
//! `f_h(t) = h / (1 + (h-1) t)^2` on [0, 1]. Injecting noise at the end of a
//! stage moves the state back from `e_k` to `s_{k+1} < e_k`, so the intervals
//! `[s_{k+1}, e_k]` are denoised twice. The target density adds the truncated
//! original density over each overlap; the realized density is the per-stage
//! mixture actually sampled. [`solve_ntdm`] picks stage shifts `{h_k}` and
//! the noise strength `c` minimizing the Jensen-Shannon divergence between
//! the two.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quadrature points used for density grids and the solver objective.
pub const QUAD_POINTS: usize = 4096;

/// Densities are floored at this value inside KL terms.
const DENSITY_FLOOR: f64 = 1e-12;

/// Largest admissible correlated-noise strength: `I - c*Sigma` stops being
/// positive semidefinite beyond 1/4 for 2x nearest-neighbor blocks.
pub const MAX_NOISE_STRENGTH: f64 = 0.25;

/// Shifted timestep density `h / (1 + (h-1) t)^2`.
pub fn pdf_shift(t: f64, h: f64) -> Result<f64> {
    check_shift(h)?;
    check_unit(t, "t")?;
    let d = 1.0 + (h - 1.0) * t;
    Ok(h / (d * d))
}

/// CDF of [`pdf_shift`]: `h t / (1 + (h-1) t)`.
pub fn cdf_shift(t: f64, h: f64) -> Result<f64> {
    check_shift(h)?;
    check_unit(t, "t")?;
    Ok(h * t / (1.0 + (h - 1.0) * t))
}

/// Exact inverse of [`cdf_shift`]: `u / (h - (h-1) u)`.
pub fn inv_cdf_shift(u: f64, h: f64) -> Result<f64> {
    check_shift(h)?;
    check_unit(u, "u")?;
    Ok(u / (h - (h - 1.0) * u))
}

/// Truncated shifted density, normalized over `[s, e]`; zero outside.
pub fn pdf_truncated(t: f64, h: f64, s: f64, e: f64) -> Result<f64> {
    if s >= e {
        return Err(Error::Domain(format!(
            "truncation requires s < e, got [{s}, {e}]"
        )));
    }
    check_unit(s, "s")?;
    check_unit(e, "e")?;
    if t < s || t > e {
        return Ok(0.0);
    }
    let mass = cdf_shift(e, h)? - cdf_shift(s, h)?;
    Ok(pdf_shift(t, h)? / mass)
}

fn check_shift(h: f64) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Domain(format!(
            "shift parameter must be positive, got {h}"
        )));
    }
    Ok(())
}

fn check_unit(x: f64, name: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("{name} must lie in [0, 1], got {x}")));
    }
    Ok(())
}

/// Coefficients of the stage-transition injection `x <- a * Up(x) + b * z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectionCoefficients {
    /// Timestep the next stage resumes from.
    pub s_next: f64,
    pub a: f64,
    pub b: f64,
}

/// Solves the moment-matching conditions at a transition ending at `e` with
/// noise strength `c`:
/// `s = e / ((1-e)/sqrt(c) + e)`, `a = s / e`, `b = 1 - s`.
///
/// `e = 0` is the degenerate immediate-upsample case and yields
/// `(0, sqrt(c), 1)`.
pub fn injection_coefficients(e: f64, c: f64) -> Result<InjectionCoefficients> {
    check_unit(e, "e")?;
    if !(c > 0.0 && c <= MAX_NOISE_STRENGTH) {
        return Err(Error::Domain(format!(
            "noise strength must lie in (0, {MAX_NOISE_STRENGTH}], got {c}"
        )));
    }
    let q = (1.0 - e) / c.sqrt();
    let denom = q + e;
    Ok(InjectionCoefficients {
        s_next: e / denom,
        a: 1.0 / denom,
        b: q / denom,
    })
}

/// Per-stage sampler configuration: step count and stage end timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub steps: u32,
    pub end: f64,
}

fn validate_configs(configs: &[StageConfig]) -> Result<()> {
    if configs.is_empty() {
        return Err(Error::Domain("at least one stage required".into()));
    }
    let mut prev = 0.0;
    for (k, cfg) in configs.iter().enumerate() {
        if cfg.steps == 0 {
            return Err(Error::Domain(format!("stage {} has zero steps", k + 1)));
        }
        if !(cfg.end > prev && cfg.end <= 1.0) {
            return Err(Error::Domain(format!(
                "stage ends must be strictly increasing in (0, 1], got {} after {}",
                cfg.end, prev
            )));
        }
        prev = cfg.end;
    }
    if (configs[configs.len() - 1].end - 1.0).abs() > 1e-12 {
        return Err(Error::Domain("the final stage must end at t = 1".into()));
    }
    Ok(())
}

/// A probability density tabulated on a uniform grid over [0, 1] and
/// normalized to unit mass under trapezoidal quadrature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub grid: Vec<f64>,
    pub masses: Vec<f64>,
}

impl Density {
    /// Tabulates `f` on `points` uniform grid points and renormalizes.
    pub fn from_fn(points: usize, mut f: impl FnMut(f64) -> f64) -> Result<Density> {
        if points < 2 {
            return Err(Error::Domain("density grid needs at least 2 points".into()));
        }
        let grid: Vec<f64> = (0..points)
            .map(|i| i as f64 / (points - 1) as f64)
            .collect();
        let mut masses: Vec<f64> = grid.iter().map(|&t| f(t)).collect();
        for (i, m) in masses.iter().enumerate() {
            if !(*m >= 0.0) {
                return Err(Error::Domain(format!(
                    "density negative or NaN at grid point {i}"
                )));
            }
        }
        let total = trapezoid(&grid, &masses);
        if !(total > 0.0) {
            return Err(Error::Domain("density integrates to zero".into()));
        }
        for m in &mut masses {
            *m /= total;
        }
        Ok(Density { grid, masses })
    }

    /// Trapezoidal integral of the tabulated masses (1 after construction).
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.masses)
    }
}

fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 1..grid.len() {
        acc += 0.5 * (values[i] + values[i - 1]) * (grid[i] - grid[i - 1]);
    }
    acc
}

/// Stage starts implied by `(configs, c)`: `s_1 = 0`, thereafter the
/// injection solution at the previous stage end.
fn stage_starts(configs: &[StageConfig], c: f64) -> Result<Vec<f64>> {
    let mut starts = vec![0.0];
    for cfg in &configs[..configs.len() - 1] {
        starts.push(injection_coefficients(cfg.end, c)?.s_next);
    }
    Ok(starts)
}

/// The timestep density the original model would realize, including the
/// re-denoised overlap intervals `[s_{k+1}, e_k]`.
pub fn target_distribution(configs: &[StageConfig], c: f64, h_ori: f64) -> Result<Density> {
    target_distribution_on(configs, c, h_ori, QUAD_POINTS)
}

pub fn target_distribution_on(
    configs: &[StageConfig],
    c: f64,
    h_ori: f64,
    points: usize,
) -> Result<Density> {
    validate_configs(configs)?;
    check_shift(h_ori)?;
    let starts = stage_starts(configs, c)?;
    let mut overlaps = Vec::new();
    for k in 0..configs.len() - 1 {
        let (s_next, e_k) = (starts[k + 1], configs[k].end);
        if s_next >= e_k {
            return Err(Error::Consistency(format!(
                "injection start {s_next} does not precede stage end {e_k}"
            )));
        }
        overlaps.push((s_next, e_k));
    }
    let normalizer = 1.0 + overlaps.iter().map(|(s, e)| e - s).sum::<f64>();
    Density::from_fn(points, |t| {
        let mut val = pdf_truncated(t, h_ori, 0.0, 1.0).unwrap_or(0.0);
        for &(s, e) in &overlaps {
            val += (e - s) * pdf_truncated(t, h_ori, s, e).unwrap_or(0.0);
        }
        val / normalizer
    })
}

/// The timestep density realized by sampling `N_k` steps from
/// `f_{h_k, s_k, e_k}` in each stage.
pub fn realized_distribution(plan: &SchedulePlan) -> Result<Density> {
    realized_distribution_on(plan, QUAD_POINTS)
}

pub fn realized_distribution_on(plan: &SchedulePlan, points: usize) -> Result<Density> {
    let total_steps: f64 = plan.stages.iter().map(|s| f64::from(s.steps)).sum();
    if total_steps <= 0.0 {
        return Err(Error::Consistency("plan has no steps".into()));
    }
    for stage in &plan.stages {
        if stage.start >= stage.end {
            return Err(Error::Consistency(format!(
                "stage interval [{}, {}] is empty",
                stage.start, stage.end
            )));
        }
    }
    let stages = plan.stages.clone();
    Density::from_fn(points, |t| {
        let mut val = 0.0;
        for stage in &stages {
            val += f64::from(stage.steps)
                * pdf_truncated(t, stage.shift, stage.start, stage.end).unwrap_or(0.0);
        }
        val / total_steps
    })
}

/// Jensen-Shannon divergence between two densities on the same grid
/// (natural log, trapezoid-weighted, densities floored at 1e-12).
pub fn jsd(p: &Density, q: &Density) -> Result<f64> {
    if p.grid.len() != q.grid.len() {
        return Err(Error::Shape(format!(
            "density grids differ: {} vs {} points",
            p.grid.len(),
            q.grid.len()
        )));
    }
    let integrand: Vec<f64> = p
        .masses
        .iter()
        .zip(q.masses.iter())
        .map(|(&pi, &qi)| {
            let m = 0.5 * (pi + qi);
            let (pf, qf, mf) = (
                pi.max(DENSITY_FLOOR),
                qi.max(DENSITY_FLOOR),
                m.max(DENSITY_FLOOR),
            );
            0.5 * pi * (pf / mf).ln() + 0.5 * qi * (qf / mf).ln()
        })
        .collect();
    Ok(trapezoid(&p.grid, &integrand).max(0.0))
}

/// Stage timesteps: the `N+1` quantiles of `f_h` between `s` and `e`, i.e.
/// `t_j = F_h^{-1}(F_h(s) + (j/N) (F_h(e) - F_h(s)))`, endpoints exact.
pub fn discretize_timesteps(s: f64, e: f64, h: f64, n: u32) -> Result<Vec<f64>> {
    if s >= e {
        return Err(Error::Domain(format!(
            "discretize requires s < e, got [{s}, {e}]"
        )));
    }
    if n == 0 {
        return Err(Error::Domain(
            "at least one integration interval required".into(),
        ));
    }
    check_unit(s, "s")?;
    check_unit(e, "e")?;
    let (us, ue) = (cdf_shift(s, h)?, cdf_shift(e, h)?);
    let mut out = Vec::with_capacity(n as usize + 1);
    for j in 0..=n {
        let t = if j == 0 {
            s
        } else if j == n {
            e
        } else {
            inv_cdf_shift(us + (f64::from(j) / f64::from(n)) * (ue - us), h)?
        };
        out.push(t);
    }
    for w in out.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Consistency(
                "discretized timesteps are not strictly increasing".into(),
            ));
        }
    }
    Ok(out)
}

/// One stage of a solved schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub steps: u32,
    pub start: f64,
    pub end: f64,
    pub shift: f64,
    pub timesteps: Vec<f64>,
}

/// Per-transition injection scalars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionCoefficients {
    pub a: f64,
    pub b: f64,
}

/// A fully determined sampling schedule: per-stage `(N, s, e, h)` with
/// discretized timesteps, the noise strength `c`, the per-transition `(a, b)`
/// and the divergence achieved against the target density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub h_ori: f64,
    pub c: f64,
    pub jsd: f64,
    pub stages: Vec<StagePlan>,
    pub coefficients: Vec<TransitionCoefficients>,
}

impl SchedulePlan {
    pub fn total_steps(&self) -> u32 {
        self.stages.iter().map(|s| s.steps).sum()
    }

    pub fn stage_configs(&self) -> Vec<StageConfig> {
        self.stages
            .iter()
            .map(|s| StageConfig {
                steps: s.steps,
                end: s.end,
            })
            .collect()
    }

    /// Re-checks the structural invariants (starts from the injection
    /// formula, coefficient identities, monotone timesteps).
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Consistency("plan has no stages".into()));
        }
        if self.stages[0].start != 0.0 {
            return Err(Error::Consistency("first stage must start at t = 0".into()));
        }
        if self.coefficients.len() + 1 != self.stages.len() {
            return Err(Error::Consistency(
                "one coefficient pair per transition required".into(),
            ));
        }
        for k in 0..self.stages.len() - 1 {
            let coef = injection_coefficients(self.stages[k].end, self.c)?;
            let tol = 1e-9;
            if (self.stages[k + 1].start - coef.s_next).abs() > tol
                || (self.coefficients[k].a - coef.a).abs() > tol
                || (self.coefficients[k].b - coef.b).abs() > tol
            {
                return Err(Error::Consistency(format!(
                    "transition {k} coefficients inconsistent"
                )));
            }
        }
        for stage in &self.stages {
            if stage.timesteps.len() != stage.steps as usize + 1 {
                return Err(Error::Consistency("stage timestep count mismatch".into()));
            }
            if stage.timesteps[0] != stage.start
                || stage.timesteps[stage.steps as usize] != stage.end
            {
                return Err(Error::Consistency(
                    "stage timesteps must span [s, e] exactly".into(),
                ));
            }
            if stage.timesteps.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Consistency(
                    "stage timesteps must strictly increase".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Builds the plan implied by explicit parameters `{h_k}` and `c`, computing
/// stage starts, timesteps, transition coefficients and the achieved JSD.
pub fn plan_from_parameters(
    configs: &[StageConfig],
    h_ori: f64,
    shifts: &[f64],
    c: f64,
) -> Result<SchedulePlan> {
    validate_configs(configs)?;
    if shifts.len() != configs.len() {
        return Err(Error::Shape(format!(
            "need one shift per stage: {} stages, {} shifts",
            configs.len(),
            shifts.len()
        )));
    }
    let starts = stage_starts(configs, c)?;
    let mut stages = Vec::with_capacity(configs.len());
    for (k, cfg) in configs.iter().enumerate() {
        let timesteps = discretize_timesteps(starts[k], cfg.end, shifts[k], cfg.steps)?;
        stages.push(StagePlan {
            steps: cfg.steps,
            start: starts[k],
            end: cfg.end,
            shift: shifts[k],
            timesteps,
        });
    }
    let mut coefficients = Vec::with_capacity(configs.len() - 1);
    for cfg in &configs[..configs.len() - 1] {
        let coef = injection_coefficients(cfg.end, c)?;
        coefficients.push(TransitionCoefficients {
            a: coef.a,
            b: coef.b,
        });
    }
    let mut plan = SchedulePlan {
        h_ori,
        c,
        jsd: f64::NAN,
        stages,
        coefficients,
    };
    let target = target_distribution(configs, c, h_ori)?;
    let realized = realized_distribution(&plan)?;
    plan.jsd = jsd(&target, &realized)?;
    Ok(plan)
}

/// Search-space and budget knobs for [`solve_ntdm_with`].
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub shift_bounds: (f64, f64),
    pub c_bounds: (f64, f64),
    pub grid_shifts: usize,
    pub grid_c: usize,
    pub max_refine_iters: usize,
    /// Hold `c` fixed (e.g. a user override) and search shifts only.
    pub fixed_c: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            shift_bounds: (1.0, 16.0),
            c_bounds: (1e-4, MAX_NOISE_STRENGTH),
            grid_shifts: 9,
            grid_c: 13,
            max_refine_iters: 2000,
            fixed_c: None,
        }
    }
}

/// Minimizes `JSD(P_target, P)` over per-stage shifts and the noise strength
/// via a coarse log-grid scan followed by Nelder-Mead refinement.
pub fn solve_ntdm(configs: &[StageConfig], h_ori: f64) -> Result<SchedulePlan> {
    solve_ntdm_with(configs, h_ori, &SolveOptions::default())
}

pub fn solve_ntdm_with(
    configs: &[StageConfig],
    h_ori: f64,
    opts: &SolveOptions,
) -> Result<SchedulePlan> {
    validate_configs(configs)?;
    check_shift(h_ori)?;
    if configs.len() < 2 {
        return Err(Error::Domain(
            "rescheduling needs at least two stages".into(),
        ));
    }
    if let Some(c) = opts.fixed_c {
        if !(c > 0.0 && c <= MAX_NOISE_STRENGTH) {
            return Err(Error::Domain(format!("fixed c = {c} outside (0, 0.25]")));
        }
    }
    let k = configs.len();
    let points = QUAD_POINTS;

    // Objective over clamped log-parameters [ln h_1 .. ln h_K, ln c].
    let (h_lo, h_hi) = opts.shift_bounds;
    let (c_lo, c_hi) = opts.c_bounds;
    let eval = |x: &[f64]| -> f64 {
        let shifts: Vec<f64> = x[..k].iter().map(|v| v.exp().clamp(h_lo, h_hi)).collect();
        let c = match opts.fixed_c {
            Some(c) => c,
            None => x[k].exp().clamp(c_lo, c_hi),
        };
        let target = match target_distribution_on(configs, c, h_ori, points) {
            Ok(d) => d,
            Err(_) => return f64::INFINITY,
        };
        let plan = match plan_from_parameters_unscored(configs, shifts.as_slice(), c) {
            Ok(p) => p,
            Err(_) => return f64::INFINITY,
        };
        let realized = match realized_distribution_on(&plan, points) {
            Ok(d) => d,
            Err(_) => return f64::INFINITY,
        };
        jsd(&target, &realized).unwrap_or(f64::INFINITY)
    };

    // Coarse scan with the target density cached per c value. Candidates are
    // visited with c ascending so ties keep the lowest noise strength.
    let log_grid = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        (0..n)
            .map(|i| lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64)
            .collect()
    };
    let h_grid = log_grid(h_lo, h_hi, opts.grid_shifts);
    let c_grid = match opts.fixed_c {
        Some(c) => vec![c.ln()],
        None => log_grid(c_lo, c_hi, opts.grid_c),
    };
    // The objective trades c against the shifts and has one shallow basin
    // per noise-strength regime, so refinement seeds from the best shift
    // combination at every c value.
    let mut candidates: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut combo = vec![0usize; k];
    for &lc in &c_grid {
        let c = lc.exp().clamp(c_lo, c_hi);
        let c = opts.fixed_c.unwrap_or(c);
        let target = match target_distribution_on(configs, c, h_ori, points) {
            Ok(d) => d,
            Err(_) => continue,
        };
        let mut best_here: Option<(f64, Vec<f64>)> = None;
        combo.fill(0);
        loop {
            let shifts: Vec<f64> = combo.iter().map(|&i| h_grid[i].exp()).collect();
            let f = plan_from_parameters_unscored(configs, &shifts, c)
                .and_then(|plan| realized_distribution_on(&plan, points))
                .and_then(|realized| jsd(&target, &realized))
                .unwrap_or(f64::INFINITY);
            if f.is_finite() && best_here.as_ref().is_none_or(|(bf, _)| f < *bf) {
                let mut x: Vec<f64> = combo.iter().map(|&i| h_grid[i]).collect();
                if opts.fixed_c.is_none() {
                    x.push(lc);
                }
                best_here = Some((f, x));
            }
            // advance the mixed-radix counter over shift combinations
            let mut d = k;
            loop {
                if d == 0 {
                    break;
                }
                d -= 1;
                combo[d] += 1;
                if combo[d] < h_grid.len() {
                    break;
                }
                combo[d] = 0;
                if d == 0 {
                    break;
                }
            }
            if combo.iter().all(|&i| i == 0) {
                break;
            }
        }
        if let Some(seed) = best_here {
            candidates.push(seed);
        }
    }
    if candidates.is_empty() {
        return Err(Error::Consistency(
            "no feasible schedule parameters found".into(),
        ));
    }

    // refine every seed and keep the best result; near-ties resolve to the
    // lowest c, then lexicographically smallest shifts
    let mut refined: Vec<(f64, Vec<f64>, bool)> = Vec::new();
    for (f0, x0) in &candidates {
        let (x, f, converged) = nelder_mead(&eval, x0, 0.25, opts.max_refine_iters);
        if f <= *f0 {
            refined.push((f, x, converged));
        } else {
            refined.push((*f0, x0.clone(), true));
        }
    }
    let decode = |x: &[f64]| -> (Vec<f64>, f64) {
        let shifts: Vec<f64> = x[..k].iter().map(|v| v.exp().clamp(h_lo, h_hi)).collect();
        let c = opts.fixed_c.unwrap_or_else(|| x[k].exp().clamp(c_lo, c_hi));
        (shifts, c)
    };
    refined.sort_by(|a, b| {
        const TIE: f64 = 1e-12;
        if (a.0 - b.0).abs() > TIE {
            return a.0.partial_cmp(&b.0).unwrap();
        }
        let (sa, ca) = decode(&a.1);
        let (sb, cb) = decode(&b.1);
        ca.partial_cmp(&cb)
            .unwrap()
            .then_with(|| sa.partial_cmp(&sb).unwrap())
    });
    let (final_f, final_x, converged) = refined[0].clone();

    let (shifts, c) = decode(&final_x);
    let mut plan = plan_from_parameters(configs, h_ori, &shifts, c)?;
    plan.jsd = final_f;
    if !converged {
        return Err(Error::SolveNotConverged {
            best_jsd: final_f,
            plan: Box::new(plan),
        });
    }
    Ok(plan)
}

/// Plan construction without the JSD evaluation (the solver scores itself).
fn plan_from_parameters_unscored(
    configs: &[StageConfig],
    shifts: &[f64],
    c: f64,
) -> Result<SchedulePlan> {
    let starts = stage_starts(configs, c)?;
    let mut stages = Vec::with_capacity(configs.len());
    for (k, cfg) in configs.iter().enumerate() {
        stages.push(StagePlan {
            steps: cfg.steps,
            start: starts[k],
            end: cfg.end,
            shift: shifts[k],
            timesteps: Vec::new(),
        });
    }
    Ok(SchedulePlan {
        h_ori: f64::NAN,
        c,
        jsd: f64::NAN,
        stages,
        coefficients: Vec::new(),
    })
}

/// Plain Nelder-Mead on `f`, starting from `x0` with per-coordinate step
/// `step`. Returns `(best_x, best_f, converged)`.
fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_iters: usize,
) -> (Vec<f64>, f64, bool) {
    const ALPHA: f64 = 1.0; // reflection
    const GAMMA: f64 = 2.0; // expansion
    const RHO: f64 = 0.5; // contraction
    const SHRINK: f64 = 0.5;
    const F_TOL: f64 = 1e-13;
    const X_TOL: f64 = 1e-9;

    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }

    let mut converged = false;
    for _ in 0..max_iters {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let f_spread = simplex[n].1 - simplex[0].1;
        let x_spread = (0..n)
            .map(|i| {
                simplex
                    .iter()
                    .map(|(x, _)| (x[i] - simplex[0].0[i]).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if f_spread.abs() < F_TOL && x_spread < X_TOL {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|i| simplex[..n].iter().map(|(x, _)| x[i]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflect: Vec<f64> = (0..n)
            .map(|i| centroid[i] + ALPHA * (centroid[i] - worst.0[i]))
            .collect();
        let f_reflect = f(&reflect);

        if f_reflect < simplex[0].1 {
            let expand: Vec<f64> = (0..n)
                .map(|i| centroid[i] + GAMMA * (reflect[i] - centroid[i]))
                .collect();
            let f_expand = f(&expand);
            simplex[n] = if f_expand < f_reflect {
                (expand, f_expand)
            } else {
                (reflect, f_reflect)
            };
        } else if f_reflect < simplex[n - 1].1 {
            simplex[n] = (reflect, f_reflect);
        } else {
            let contract: Vec<f64> = (0..n)
                .map(|i| centroid[i] + RHO * (worst.0[i] - centroid[i]))
                .collect();
            let f_contract = f(&contract);
            if f_contract < worst.1 {
                simplex[n] = (contract, f_contract);
            } else {
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = (0..n)
                        .map(|i| best[i] + SHRINK * (entry.0[i] - best[i]))
                        .collect();
                    let fx = f(&x);
                    *entry = (x, fx);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    (simplex[0].0.clone(), simplex[0].1, converged)
}
