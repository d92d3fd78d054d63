//! Brute-force reference computations.
//!
//! Nothing here shares code with the closed forms it checks: posterior means
//! are integrated from the raw Gaussian likelihood of the bridge, the
//! stopping problem is re-solved with a fully explicit scheme, and stopping
//! rules are valued by simulation.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{euler_step, ShockStream, SimConfig, SimError};
use crate::exec::Execution;
use crate::payoffs::{reward, PayoffError, RewardSpec};
use crate::priors::{drift, prior_moments, MarketParams, Prior, PriorError};
use crate::solver::{GridSpec, Solution, SolveError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("quadrature needs a continuous prior, got {0}")]
    DiscretePrior(&'static str),
    #[error("exact sum is only defined for the two-point prior, got {0}")]
    NotTwoPoint(&'static str),
    #[error("invalid quadrature spec: {0}")]
    InvalidQuadrature(String),
    #[error("time {t} must lie strictly inside (0, {pin_time})")]
    TimeOutOfRange { t: f64, pin_time: f64 },
    #[error("explicit reference grid too large: M = {m}, N = {n} (limit {limit})")]
    GridTooLarge { m: usize, n: usize, limit: usize },
    #[error("explicit step unstable: dt = {dt:e} exceeds dx^2/sigma^2 = {bound:e}")]
    StabilityViolation { dt: f64, bound: f64 },
    #[error("stopping rule incompatible with simulation: {0}")]
    IncompatibleRule(String),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Payoff(#[from] PayoffError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Largest `M` or `N` accepted by [`explicit_vi_reference`].
pub const EXPLICIT_GRID_LIMIT: usize = 64;

const MAX_DEFAULT_NODES: usize = 2_000_001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureScheme {
    CompositeSimpson,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub z_min: f64,
    pub z_max: f64,
    /// Simpson node count; for the adaptive scheme, the initial panel count.
    pub n_nodes: usize,
    pub scheme: QuadratureScheme,
}

impl QuadratureSpec {
    /// Prior mean ± `width` prior standard deviations, Simpson with `n_nodes`.
    pub fn around_prior(prior: &Prior, width: f64, n_nodes: usize) -> Self {
        let mo = prior_moments(prior);
        let half = width * mo.std_dev();
        QuadratureSpec { z_min: mo.mean - half, z_max: mo.mean + half, n_nodes, scheme: QuadratureScheme::CompositeSimpson }
    }

    /// Covers 12 prior standard deviations and 12 likelihood standard
    /// deviations around the value of `D` the observation `(t, x)` points to.
    /// Far from `x0` at small `t` the likelihood, not the prior, locates the
    /// posterior, so a prior-only range can miss it entirely.
    ///
    /// Nodes are spaced at most 1/400 of the narrowest length scale of the
    /// prior or likelihood, with at least 20,001 of them.
    pub fn default_for(prior: &Prior, t: f64, x: f64, m: &MarketParams) -> Self {
        let mut q = Self::around_prior(prior, 12.0, 20_001);
        let mut scale = match *prior {
            Prior::Normal { sigma_d, .. } => sigma_d,
            Prior::DoubleExponential { lambda_1, lambda_2, .. } => 1.0 / lambda_1.max(lambda_2),
            _ => prior_moments(prior).std_dev(),
        };
        if t > 0.0 && t < m.pin_time {
            let centre = m.pin_time * (x - m.x0) / t;
            let sd = m.sigma * (m.pin_time * (m.pin_time - t) / t).sqrt();
            q.z_min = q.z_min.min(centre - 12.0 * sd);
            q.z_max = q.z_max.max(centre + 12.0 * sd);
            scale = scale.min(sd);
        }
        if scale > 0.0 {
            let wanted = ((q.z_max - q.z_min) / (scale / 400.0)).ceil().min(MAX_DEFAULT_NODES as f64) as usize;
            q.n_nodes = q.n_nodes.max(wanted | 1);
        }
        q
    }

    pub fn adaptive(mut self) -> Self {
        self.scheme = QuadratureScheme::Adaptive;
        self
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if !(self.z_min < self.z_max) || !self.z_min.is_finite() || !self.z_max.is_finite() {
            return Err(OracleError::InvalidQuadrature(format!("need finite z_min < z_max, got [{}, {}]", self.z_min, self.z_max)));
        }
        if self.n_nodes < 9 {
            return Err(OracleError::InvalidQuadrature(format!("n_nodes ({}) must be at least 9", self.n_nodes)));
        }
        if self.scheme == QuadratureScheme::CompositeSimpson && self.n_nodes.is_multiple_of(2) {
            return Err(OracleError::InvalidQuadrature(format!("Simpson needs an odd node count, got {}", self.n_nodes)));
        }
        Ok(())
    }
}

/// Log prior density written out from the definitions. `side` picks the
/// one-sided limit at a jump: the branch that applies just below (`Less`) or
/// just above (`Greater`) `z`.
fn ln_prior(prior: &Prior, z: f64, side: Ordering) -> f64 {
    match *prior {
        Prior::Normal { mu, sigma_d } => {
            let u = (z - mu) / sigma_d;
            -0.5 * u * u - sigma_d.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
        }
        Prior::DoubleExponential { theta, p_1, lambda_1, lambda_2 } => {
            if z < theta || (z == theta && side == Ordering::Less) {
                (p_1 * lambda_1).ln() + lambda_1 * (z - theta)
            } else {
                ((1.0 - p_1) * lambda_2).ln() - lambda_2 * (z - theta)
            }
        }
        _ => unreachable!("discrete priors are rejected earlier"),
    }
}

fn kinks(prior: &Prior) -> Vec<f64> {
    match *prior {
        Prior::DoubleExponential { theta, .. } => vec![theta],
        _ => Vec::new(),
    }
}

/// Log-likelihood of `X_t = x` given `D = z`, up to a constant in `z`.
fn ln_likelihood(t: f64, x: f64, z: f64, m: &MarketParams) -> f64 {
    let var = m.sigma * m.sigma * t * (m.pin_time - t) / m.pin_time;
    let r = x - m.x0 - t * z / m.pin_time;
    -0.5 * r * r / var
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / (n - 1) as f64;
    let mut sum = f(a) + f(b);
    for k in 1..n - 1 {
        sum += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + h * k as f64);
    }
    sum * h / 3.0
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, tol: f64) -> f64 {
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let (lo, hi) = (a + h * k as f64, a + h * (k + 1) as f64);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            rec(f, lo, hi, fa, fm, fb, (hi - lo) / 6.0 * (fa + 4.0 * fm + fb), tol / panels as f64, 40)
        })
        .sum()
}

/// `E[D | X_t = x]` by direct numerical integration of
/// `z p(z) L(z) / p(z) L(z)` over the spec's range.
pub fn posterior_mean_quadrature(
    prior: &Prior,
    t: f64,
    x: f64,
    m: &MarketParams,
    q: &QuadratureSpec,
) -> Result<f64, OracleError> {
    prior.validate()?;
    m.validate()?;
    if prior.is_discrete() {
        return Err(OracleError::DiscretePrior(prior.kind()));
    }
    if !(t > 0.0 && t < m.pin_time) {
        return Err(OracleError::TimeOutOfRange { t, pin_time: m.pin_time });
    }
    q.validate()?;

    let ln_w = |z: f64, side: Ordering| ln_prior(prior, z, side) + ln_likelihood(t, x, z, m);
    let mut cuts = vec![q.z_min];
    cuts.extend(kinks(prior).into_iter().filter(|&k| k > q.z_min && k < q.z_max));
    cuts.push(q.z_max);

    // Stabilise by the largest log-weight on a coarse scan plus the pieces' ends.
    let scan = 4 * q.n_nodes;
    let peak = (0..=scan)
        .map(|k| q.z_min + (q.z_max - q.z_min) * k as f64 / scan as f64)
        .chain(cuts.iter().copied())
        .flat_map(|z| [ln_w(z, Ordering::Less), ln_w(z, Ordering::Greater)])
        .fold(f64::NEG_INFINITY, f64::max);

    let (mut num, mut den) = (0.0, 0.0);
    for piece in cuts.windows(2) {
        let (a, b) = (piece[0], piece[1]);
        // Inside a piece the density is smooth; its ends take the inner limits.
        let weight = |z: f64| {
            let side = if z >= b { Ordering::Less } else { Ordering::Greater };
            (ln_w(z, side) - peak).exp()
        };
        let moment = |z: f64| z * weight(z);
        let share = ((b - a) / (q.z_max - q.z_min) * q.n_nodes as f64) as usize;
        match q.scheme {
            QuadratureScheme::CompositeSimpson => {
                let n = (share.max(9)) | 1;
                num += simpson(&moment, a, b, n);
                den += simpson(&weight, a, b, n);
            }
            QuadratureScheme::Adaptive => {
                let panels = share.max(4);
                den += adaptive_simpson(&weight, a, b, panels, 1e-14 * (b - a));
                num += adaptive_simpson(&moment, a, b, panels, 1e-14 * (b - a) * (1.0 + a.abs().max(b.abs())));
            }
        }
    }
    Ok(num / den)
}

/// `E[D | X_t = x]` for the two-point prior as an explicit two-term sum.
pub fn posterior_mean_exact_sum(prior: &Prior, t: f64, x: f64, m: &MarketParams) -> Result<f64, OracleError> {
    prior.validate()?;
    m.validate()?;
    let Prior::TwoPoint { delta_u, delta_d, p_u } = *prior else {
        return Err(OracleError::NotTwoPoint(prior.kind()));
    };
    if !(t > 0.0 && t < m.pin_time) {
        return Err(OracleError::TimeOutOfRange { t, pin_time: m.pin_time });
    }
    let lu = p_u.ln() + ln_likelihood(t, x, delta_u, m);
    let ld = (1.0 - p_u).ln() + ln_likelihood(t, x, delta_d, m);
    let top = lu.max(ld);
    let (wu, wd) = ((lu - top).exp(), (ld - top).exp());
    Ok((delta_u * wu + delta_d * wd) / (wu + wd))
}

/// `L f = -r f + f_t + A f_x + sigma^2/2 f_xx` for the reward, by central
/// differences with step `h` in both `t` and `x`.
pub fn generator_fd(spec: &RewardSpec, prior: &Prior, t: f64, x: f64, m: &MarketParams, h: f64) -> Result<f64, OracleError> {
    let f = |t: f64, x: f64| reward(spec, t, x, m);
    let a = drift(prior, t, x, m)?;
    let f0 = f(t, x);
    let ft = (f(t + h, x) - f(t - h, x)) / (2.0 * h);
    let fx = (f(t, x + h) - f(t, x - h)) / (2.0 * h);
    let fxx = (f(t, x + h) - 2.0 * f0 + f(t, x - h)) / (h * h);
    Ok(-m.rate * f0 + ft + a * fx + 0.5 * m.sigma * m.sigma * fxx)
}

/// Fully explicit finite-difference solution of the stopping problem on a
/// small grid, projecting onto the reward after every step.
pub fn explicit_vi_reference(
    spec: &RewardSpec,
    prior: &Prior,
    m: &MarketParams,
    grid: &GridSpec,
) -> Result<Solution, OracleError> {
    prior.validate()?;
    spec.validate()?;
    grid.validate(m)?;
    if grid.m > EXPLICIT_GRID_LIMIT || grid.n > EXPLICIT_GRID_LIMIT {
        return Err(OracleError::GridTooLarge { m: grid.m, n: grid.n, limit: EXPLICIT_GRID_LIMIT });
    }
    let (dt, dx) = (grid.dt(m), grid.dx());
    let bound = dx * dx / (m.sigma * m.sigma);
    if dt > bound {
        return Err(OracleError::StabilityViolation { dt, bound });
    }

    let xs: Vec<f64> = (0..=grid.m).map(|i| grid.x(i)).collect();
    let times: Vec<f64> = (0..=grid.n).map(|j| grid.t(j, m)).collect();
    let payoff: Vec<Vec<f64>> = times.iter().map(|&t| xs.iter().map(|&x| reward(spec, t, x, m)).collect()).collect();
    let mut value = vec![Vec::new(); grid.n + 1];
    value[grid.n] = payoff[grid.n].clone();
    let half_var = 0.5 * m.sigma * m.sigma;
    for j in (1..=grid.n).rev() {
        let next = &value[j];
        let mut row = payoff[j - 1].clone();
        for i in 1..grid.m {
            let a = drift(prior, times[j], xs[i], m)?;
            let vx = (next[i + 1] - next[i - 1]) / (2.0 * dx);
            let vxx = (next[i + 1] - 2.0 * next[i] + next[i - 1]) / (dx * dx);
            let stepped = next[i] + dt * (a * vx + half_var * vxx - m.rate * next[i]);
            row[i] = stepped.max(payoff[j - 1][i]);
        }
        value[j - 1] = row;
    }
    Ok(Solution::from_surfaces(*grid, times, xs, value, payoff, vec![0; grid.n + 1]))
}

/// A stopping rule to be valued by simulation.
#[derive(Debug, Clone, Copy)]
pub enum StoppingRule<'a> {
    StopNow,
    HoldToDeadline,
    /// Sell at the first solver time level whose exercise region contains
    /// the path.
    FromSolution(&'a Solution),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n_paths: usize,
}

impl McEstimate {
    /// Standard error of the difference of two independent estimates.
    pub fn joint_stderr(&self, other: &McEstimate) -> f64 {
        self.stderr.hypot(other.stderr)
    }
}

/// Expected discounted reward of `rule`, estimated from `cfg.n_paths`
/// simulated paths. The same seed gives the same paths for every rule.
pub fn mc_value_of_rule(
    spec: &RewardSpec,
    prior: &Prior,
    m: &MarketParams,
    rule: StoppingRule<'_>,
    cfg: &SimConfig,
) -> Result<McEstimate, OracleError> {
    mc_value_of_rule_with(spec, prior, m, rule, cfg, Execution::default())
}

pub fn mc_value_of_rule_with(
    spec: &RewardSpec,
    prior: &Prior,
    m: &MarketParams,
    rule: StoppingRule<'_>,
    cfg: &SimConfig,
    exec: Execution,
) -> Result<McEstimate, OracleError> {
    spec.validate()?;
    prior.validate()?;
    cfg.validate(m)?;
    if let StoppingRule::StopNow = rule {
        return Ok(McEstimate { estimate: reward(spec, 0.0, m.x0, m), stderr: 0.0, n_paths: cfg.n_paths });
    }
    let horizon = cfg.resolved_horizon(m);
    if (horizon - m.deadline).abs() > 1e-12 * m.deadline {
        return Err(OracleError::IncompatibleRule(format!("horizon {horizon} must equal the deadline {}", m.deadline)));
    }
    // Check at every `stride`-th simulation step, i.e. on the solver's times.
    let stride = match rule {
        StoppingRule::FromSolution(sol) => {
            if sol.grid.n == 0 || !cfg.n_steps.is_multiple_of(sol.grid.n) {
                return Err(OracleError::IncompatibleRule(format!(
                    "n_steps ({}) must be a multiple of the solver's N ({})",
                    cfg.n_steps, sol.grid.n
                )));
            }
            Some(cfg.n_steps / sol.grid.n)
        }
        _ => None,
    };

    let dt = cfg.dt(m);
    let payoffs = exec.try_map_indexed(cfg.n_paths, |k| {
        let mut shocks = ShockStream::new(cfg.seed, k);
        let mut x = m.x0;
        for step in 0..cfg.n_steps {
            if let (Some(stride), StoppingRule::FromSolution(sol)) = (stride, rule) {
                if step % stride == 0 && sol.is_exercise(step / stride, x) {
                    let t = step as f64 * dt;
                    return Ok((-m.rate * t).exp() * reward(spec, t, x, m));
                }
            }
            x = euler_step(prior, m, step as f64 * dt, x, dt, shocks.next_normal())?;
        }
        Ok::<_, PriorError>((-m.rate * m.deadline).exp() * reward(spec, m.deadline, x, m))
    })?;

    let n = payoffs.len() as f64;
    let mean = payoffs.iter().sum::<f64>() / n;
    let var = payoffs.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(McEstimate { estimate: mean, stderr: (var / n).sqrt(), n_paths: cfg.n_paths })
}
