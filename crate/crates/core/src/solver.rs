//! Crank–Nicolson / projected SOR solver for the optimal selling problem.
//!
//! The value `V` satisfies `max{L V, f - V} = 0` on `[0, T_bar) x R` with
//! `V(T_bar, .) = f(T_bar, .)`, where
//! `L = -r + d/dt + A(t, x) d/dx + sigma^2/2 d^2/dx^2`.
//!
//! On a uniform grid the scheme is marched backward in time. At each level
//! `j - 1` the tridiagonal system
//!
//! ```text
//! -alpha_{i,j-1} V_{i-1} + (1 - beta) V_i - gamma_{i,j-1} V_{i+1} = rhs_i
//! ```
//!
//! is solved by SOR sweeps in increasing `i`, projecting each update onto the
//! obstacle as soon as it is computed.
//!
//! By default the unknown is the delayed liquidation premium `P = V - f`
//! rather than `V` itself. `P` solves the same complementarity problem with
//! obstacle 0 and source `G` (the drive), since `L V = L P + G`. Two rewards
//! with the same drive then produce the same premium surface to rounding, so
//! their exercise regions coincide exactly. [`Formulation::Value`] runs the
//! textbook scheme on `V` with obstacle `f` for comparison.
//!
//! Edge nodes are Dirichlet: `V = f` (equivalently `P = 0`) at `x_min` and
//! `x_max`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::payoffs::{drive_with_drift, reward, PayoffError, RewardSpec};
use crate::priors::{drift, prior_moments, MarketParams, Prior, PriorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("PSOR did not converge at time index {time_index}: last update {residual:e} after {iterations} sweeps")]
    NonConvergence { time_index: usize, residual: f64, iterations: usize },
    #[error("coefficient index out of range: {0}")]
    IndexOutOfRange(String),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Payoff(#[from] PayoffError),
}

pub const DEFAULT_OMEGA: f64 = 1.2;
pub const DEFAULT_EPS: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 10_000;
/// Relative tolerance used to flag exercise nodes.
pub const MASK_REL_TOL: f64 = 1e-7;

/// Uniform `(t, x)` lattice plus PSOR controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    /// Number of space intervals.
    pub m: usize,
    /// Number of time intervals on `[0, T_bar]`.
    pub n: usize,
    pub omega: f64,
    pub eps: f64,
    pub max_iters: usize,
}

impl GridSpec {
    /// Default bounds `x0 ± 5 max(sigma sqrt(T_bar), sd(D))` with default PSOR
    /// controls.
    pub fn for_problem(prior: &Prior, market: &MarketParams, m: usize, n: usize) -> Self {
        let (x_min, x_max) = default_bounds(prior, market);
        GridSpec { x_min, x_max, m, n, omega: DEFAULT_OMEGA, eps: DEFAULT_EPS, max_iters: DEFAULT_MAX_ITERS }
    }

    pub fn with_bounds(mut self, x_min: f64, x_max: f64) -> Self {
        self.x_min = x_min;
        self.x_max = x_max;
        self
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.m as f64
    }

    pub fn dt(&self, market: &MarketParams) -> f64 {
        market.deadline / self.n as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i == self.m {
            self.x_max
        } else {
            self.x_min + self.dx() * i as f64
        }
    }

    pub fn t(&self, j: usize, market: &MarketParams) -> f64 {
        if j == self.n {
            market.deadline
        } else {
            self.dt(market) * j as f64
        }
    }

    pub fn validate(&self, market: &MarketParams) -> Result<(), SolveError> {
        let bad = |s: String| Err(SolveError::InvalidGrid(s));
        if !(self.x_min < market.x0 && market.x0 < self.x_max) {
            return bad(format!("need x_min < x0 < x_max (got {} < {} < {})", self.x_min, market.x0, self.x_max));
        }
        if self.m < 8 || self.n < 8 {
            return bad(format!("need M >= 8 and N >= 8 (got M = {}, N = {})", self.m, self.n));
        }
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return bad(format!("omega ({}) must lie in (0, 2)", self.omega));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps ({}) must be positive", self.eps));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive".into());
        }
        Ok(())
    }
}

pub fn default_bounds(prior: &Prior, market: &MarketParams) -> (f64, f64) {
    let half = 5.0 * (market.sigma * market.deadline.sqrt()).max(prior_moments(prior).std_dev());
    (market.x0 - half, market.x0 + half)
}

/// Crank–Nicolson coefficients at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CnCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

fn coefficients_from(a_left: f64, a_right: f64, sigma: f64, rate: f64, dt: f64, dx: f64) -> CnCoefficients {
    let diffusion = sigma * sigma / (4.0 * dx * dx);
    let advection = (a_left + a_right) / (8.0 * dx);
    CnCoefficients {
        alpha: dt * (diffusion - advection),
        beta: -0.5 * dt * (rate + sigma * sigma / (dx * dx)),
        gamma: dt * (diffusion + advection),
    }
}

/// `(alpha_{i,j}, beta, gamma_{i,j})` for interior node `i` at time level `j`.
pub fn cn_coefficients(
    prior: &Prior,
    market: &MarketParams,
    grid: &GridSpec,
    i: usize,
    j: usize,
) -> Result<CnCoefficients, SolveError> {
    if i < 1 || i >= grid.m {
        return Err(SolveError::IndexOutOfRange(format!("space index {i} not in 1..={}", grid.m - 1)));
    }
    if j > grid.n {
        return Err(SolveError::IndexOutOfRange(format!("time index {j} not in 0..={}", grid.n)));
    }
    let t = grid.t(j, market);
    let a_left = drift(prior, t, grid.x(i - 1), market)?;
    let a_right = drift(prior, t, grid.x(i + 1), market)?;
    Ok(coefficients_from(a_left, a_right, market.sigma, market.rate, grid.dt(market), grid.dx()))
}

/// Which unknown the PSOR iteration works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// Premium `V - f` with obstacle 0 and the drive as source.
    #[default]
    Premium,
    /// Value `V` with obstacle `f`.
    Value,
}

/// A solved stopping problem on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub grid: GridSpec,
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    /// `value[j][i] = V(t_j, x_i)`.
    pub value: Vec<Vec<f64>>,
    pub payoff: Vec<Vec<f64>>,
    pub premium: Vec<Vec<f64>>,
    pub exercise: Vec<Vec<bool>>,
    /// Interpolated exercise/continuation crossings per time level, ascending.
    pub boundaries: Vec<Vec<f64>>,
    /// PSOR sweeps used at each level (0 at the terminal level).
    pub iterations: Vec<usize>,
    /// Premium threshold below which a node counts as exercise.
    pub mask_tol: f64,
}

impl Solution {
    /// Assembles a solution from value and payoff surfaces.
    pub fn from_surfaces(
        grid: GridSpec,
        times: Vec<f64>,
        xs: Vec<f64>,
        value: Vec<Vec<f64>>,
        payoff: Vec<Vec<f64>>,
        iterations: Vec<usize>,
    ) -> Self {
        let premium: Vec<Vec<f64>> = value
            .iter()
            .zip(&payoff)
            .map(|(v, f)| v.iter().zip(f).map(|(v, f)| v - f).collect())
            .collect();
        Self::from_premium(grid, times, xs, premium, payoff, iterations)
    }

    fn from_premium(
        grid: GridSpec,
        times: Vec<f64>,
        xs: Vec<f64>,
        premium: Vec<Vec<f64>>,
        payoff: Vec<Vec<f64>>,
        iterations: Vec<usize>,
    ) -> Self {
        let value = premium
            .iter()
            .zip(&payoff)
            .map(|(l, f)| l.iter().zip(f).map(|(l, f)| f + l).collect())
            .collect();
        let peak = premium.iter().flatten().fold(0.0_f64, |acc, l| acc.max(l.abs()));
        let mask_tol = MASK_REL_TOL * (1.0 + peak);
        let exercise: Vec<Vec<bool>> =
            premium.iter().map(|row| row.iter().map(|&l| l <= mask_tol).collect()).collect();
        let boundaries = premium.iter().map(|row| crossings(row, &xs, mask_tol)).collect();
        Solution { grid, times, xs, value, payoff, premium, exercise, boundaries, iterations, mask_tol }
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// Premium at `(t_j, x)`, linear in `x` between nodes and clamped to the
    /// grid edges.
    pub fn premium_at(&self, j: usize, x: f64) -> f64 {
        interpolate(&self.xs, &self.premium[j], x)
    }

    pub fn value_at(&self, j: usize, x: f64) -> f64 {
        interpolate(&self.xs, &self.value[j], x)
    }

    /// Whether `(t_j, x)` lies in the exercise region.
    pub fn is_exercise(&self, j: usize, x: f64) -> bool {
        if x <= self.xs[0] || x >= self.xs[self.xs.len() - 1] {
            return true;
        }
        self.premium_at(j, x) <= self.mask_tol
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let last = xs.len() - 1;
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[last] {
        return ys[last];
    }
    let dx = (xs[last] - xs[0]) / last as f64;
    let i = (((x - xs[0]) / dx) as usize).min(last - 1);
    let w = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] * (1.0 - w) + ys[i + 1] * w
}

/// Crossings of the premium through `tol` between adjacent interior nodes.
fn crossings(premium: &[f64], xs: &[f64], tol: f64) -> Vec<f64> {
    let m = premium.len() - 1;
    let mut out = Vec::new();
    for i in 1..m.saturating_sub(1) {
        let (a, b) = (premium[i], premium[i + 1]);
        if (a <= tol) != (b <= tol) {
            let w = (tol - a) / (b - a);
            out.push(xs[i] + w * (xs[i + 1] - xs[i]));
        }
    }
    out
}

/// Sell/hold layout of one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceRegions {
    pub time_index: usize,
    pub t: f64,
    pub crossings: Vec<f64>,
    /// Maximal runs of interior continuation nodes.
    pub continuation: Vec<(f64, f64)>,
    /// Maximal runs of interior exercise nodes.
    pub exercise: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regions {
    pub slices: Vec<SliceRegions>,
    pub max_continuation_intervals: usize,
    pub max_exercise_intervals: usize,
}

impl Regions {
    /// At least one level has two or more separate continuation intervals.
    pub fn is_disconnected(&self) -> bool {
        self.max_continuation_intervals >= 2
    }
}

/// Per-level boundaries and interval topology. Only interior nodes are
/// scanned; the Dirichlet edge nodes are exercise by construction.
pub fn extract_regions(sol: &Solution) -> Regions {
    let m = sol.grid.m;
    let slices: Vec<SliceRegions> = (0..sol.n_times())
        .map(|j| {
            let mask = &sol.exercise[j];
            let (mut continuation, mut exercise) = (Vec::new(), Vec::new());
            let mut start = 1;
            for i in 2..=m {
                if i == m || mask[i] != mask[start] {
                    let run = (sol.xs[start], sol.xs[i - 1]);
                    if mask[start] {
                        exercise.push(run);
                    } else {
                        continuation.push(run);
                    }
                    start = i;
                }
            }
            SliceRegions { time_index: j, t: sol.times[j], crossings: sol.boundaries[j].clone(), continuation, exercise }
        })
        .collect();
    let max_continuation_intervals = slices.iter().map(|s| s.continuation.len()).max().unwrap_or(0);
    let max_exercise_intervals = slices.iter().map(|s| s.exercise.len()).max().unwrap_or(0);
    Regions { slices, max_continuation_intervals, max_exercise_intervals }
}

/// The delayed liquidation premium surface `V - f`.
pub fn premium_surface(sol: &Solution) -> &[Vec<f64>] {
    &sol.premium
}

/// Solves with the default (premium) formulation.
pub fn solve_vi(spec: &RewardSpec, prior: &Prior, market: &MarketParams, grid: &GridSpec) -> Result<Solution, SolveError> {
    solve_vi_with(spec, prior, market, grid, Formulation::default())
}

pub fn solve_vi_with(
    spec: &RewardSpec,
    prior: &Prior,
    market: &MarketParams,
    grid: &GridSpec,
    formulation: Formulation,
) -> Result<Solution, SolveError> {
    market.validate()?;
    prior.validate()?;
    spec.validate()?;
    grid.validate(market)?;

    let (m, n) = (grid.m, grid.n);
    let (dt, dx) = (grid.dt(market), grid.dx());
    let xs: Vec<f64> = (0..=m).map(|i| grid.x(i)).collect();
    let times: Vec<f64> = (0..=n).map(|j| grid.t(j, market)).collect();

    let mut payoff = Vec::with_capacity(n + 1);
    let mut drifts = Vec::with_capacity(n + 1);
    for &t in &times {
        payoff.push(xs.iter().map(|&x| reward(spec, t, x, market)).collect::<Vec<_>>());
        drifts.push(xs.iter().map(|&x| drift(prior, t, x, market)).collect::<Result<Vec<_>, _>>()?);
    }
    let level = |j: usize| -> Vec<CnCoefficients> {
        (1..m)
            .map(|i| coefficients_from(drifts[j][i - 1], drifts[j][i + 1], market.sigma, market.rate, dt, dx))
            .collect()
    };
    let drive_row = |j: usize| -> Vec<f64> {
        (0..=m).map(|i| drive_with_drift(spec, drifts[j][i], times[j], xs[i], market)).collect()
    };

    let mut surface = vec![Vec::new(); n + 1];
    let mut iterations = vec![0; n + 1];
    surface[n] = match formulation {
        Formulation::Premium => vec![0.0; m + 1],
        Formulation::Value => payoff[n].clone(),
    };

    let mut upper = level(n);
    let mut upper_drive = match formulation {
        Formulation::Premium => Some(drive_row(n)),
        Formulation::Value => None,
    };
    let mut rhs = vec![0.0; m + 1];
    for j in (1..=n).rev() {
        let lower = level(j - 1);
        let lower_drive = upper_drive.as_ref().map(|_| drive_row(j - 1));
        let next = &surface[j];
        let beta = upper[0].beta;

        let obstacle: Vec<f64> = match formulation {
            Formulation::Premium => vec![0.0; m + 1],
            Formulation::Value => payoff[j - 1].clone(),
        };
        // Dirichlet edges: the unknown equals its obstacle there.
        let mut current = next.clone();
        current[0] = obstacle[0];
        current[m] = obstacle[m];

        for i in 1..m {
            let c = upper[i - 1];
            rhs[i] = c.alpha * next[i - 1] + (1.0 + beta) * next[i] + c.gamma * next[i + 1];
            if let (Some(g_hi), Some(g_lo)) = (&upper_drive, &lower_drive) {
                rhs[i] += 0.5 * dt * (g_hi[i] + g_lo[i]);
            }
            current[i] = current[i].max(obstacle[i]);
        }

        iterations[j - 1] = psor(&lower, 1.0 - beta, &rhs, &obstacle, &mut current, grid)
            .map_err(|residual| SolveError::NonConvergence { time_index: j - 1, residual, iterations: grid.max_iters })?;
        surface[j - 1] = current;
        upper = lower;
        upper_drive = lower_drive;
    }

    Ok(match formulation {
        Formulation::Premium => Solution::from_premium(*grid, times, xs, surface, payoff, iterations),
        Formulation::Value => Solution::from_surfaces(*grid, times, xs, surface, payoff, iterations),
    })
}

/// One entry of a batch solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveJob {
    pub reward: RewardSpec,
    pub prior: Prior,
    pub market: MarketParams,
    pub grid: GridSpec,
}

/// Solves independent problems, one per job. Each solve is itself
/// sequential, so results do not depend on `exec`.
pub fn solve_many(jobs: &[SolveJob], exec: Execution) -> Vec<Result<Solution, SolveError>> {
    exec.map_indexed(jobs.len(), |k| {
        let job = &jobs[k];
        solve_vi(&job.reward, &job.prior, &job.market, &job.grid)
    })
}

/// `V(0, x0)` on a grid and its two successive doublings of `M` and `N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub values: [f64; 3],
    /// Observed order `log2(|v1 - v0| / |v2 - v1|)`.
    pub order: f64,
}

impl Refinement {
    pub fn increments(&self) -> [f64; 2] {
        [self.values[1] - self.values[0], self.values[2] - self.values[1]]
    }
}

/// Convergence diagnostic at `(0, x0)`. The grid must put `x0` on a node.
pub fn refinement_study(
    spec: &RewardSpec,
    prior: &Prior,
    market: &MarketParams,
    grid: &GridSpec,
) -> Result<Refinement, SolveError> {
    let offset = (market.x0 - grid.x_min) / grid.dx();
    if (offset - offset.round()).abs() > 1e-9 {
        return Err(SolveError::InvalidGrid(format!("x0 must sit on a grid node (offset {offset} cells)")));
    }
    let mut values = [0.0; 3];
    for (k, v) in values.iter_mut().enumerate() {
        let g = GridSpec { m: grid.m << k, n: grid.n << k, ..*grid };
        *v = solve_vi(spec, prior, market, &g)?.value_at(0, market.x0);
    }
    let order = ((values[1] - values[0]).abs() / (values[2] - values[1]).abs()).log2();
    Ok(Refinement { values, order })
}

/// Projected SOR on one level. `v` holds the initial guess (edges fixed) and
/// receives the solution; returns the sweep count or the last update size.
fn psor(
    coeffs: &[CnCoefficients],
    diag: f64,
    rhs: &[f64],
    obstacle: &[f64],
    v: &mut [f64],
    grid: &GridSpec,
) -> Result<usize, f64> {
    let m = v.len() - 1;
    let relax = grid.omega / diag;
    let mut change = f64::INFINITY;
    for sweep in 1..=grid.max_iters {
        change = 0.0;
        for i in 1..m {
            let c = coeffs[i - 1];
            let residual = rhs[i] + c.alpha * v[i - 1] - diag * v[i] + c.gamma * v[i + 1];
            let updated = (v[i] + relax * residual).max(obstacle[i]);
            change = f64::max(change, (updated - v[i]).abs());
            v[i] = updated;
        }
        if !change.is_finite() {
            return Err(change);
        }
        if change < grid.eps {
            return Ok(sweep);
        }
    }
    Err(change)
}
