//! Rewards, Black–Scholes prices and drive functions.
//!
//! The drive `G = -r f + f_t + A f_x + sigma^2/2 f_xx` is the drift of the
//! discounted reward; where it is positive, waiting adds value. Options are
//! European with maturity equal to the pinning time `T`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::priors::{drift, MarketParams, Prior, PriorError};
use crate::special::norm_cdf;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PayoffError {
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error("invalid reward: {0}")]
    InvalidReward(String),
    #[error("shape diagnostics need a normal prior, got {0}")]
    NotNormal(&'static str),
    #[error("start time {t0} must precede the deadline {deadline}")]
    StartAfterDeadline { t0: f64, deadline: f64 },
}

/// The security being sold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardSpec {
    Stock,
    Call { strike: f64 },
    Put { strike: f64 },
    /// Long one call, short one put at the same strike.
    CallMinusPut { strike: f64 },
}

impl RewardSpec {
    pub fn validate(&self) -> Result<(), PayoffError> {
        match *self {
            RewardSpec::Stock => Ok(()),
            RewardSpec::Call { strike } | RewardSpec::Put { strike } | RewardSpec::CallMinusPut { strike } => {
                if strike > 0.0 && strike.is_finite() {
                    Ok(())
                } else {
                    Err(PayoffError::InvalidReward(format!("strike ({strike}) must be positive")))
                }
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RewardSpec::Stock => "stock",
            RewardSpec::Call { .. } => "call",
            RewardSpec::Put { .. } => "put",
            RewardSpec::CallMinusPut { .. } => "call_minus_put",
        }
    }
}

/// `d_1` of Black–Scholes in log-price form; `tau > 0`.
fn d1(x: f64, strike: f64, rate: f64, sigma: f64, tau: f64) -> f64 {
    (x - strike.ln() + (rate + 0.5 * sigma * sigma) * tau) / (sigma * tau.sqrt())
}

/// European call on `S = e^x` with time to expiry `tau`.
pub fn bs_call(x: f64, strike: f64, rate: f64, sigma: f64, tau: f64) -> f64 {
    let spot = x.exp();
    if tau <= 0.0 {
        return (spot - strike).max(0.0);
    }
    let d1 = d1(x, strike, rate, sigma, tau);
    let d2 = d1 - sigma * tau.sqrt();
    norm_cdf(d1) * spot - norm_cdf(d2) * strike * (-rate * tau).exp()
}

/// European put on `S = e^x` with time to expiry `tau`.
pub fn bs_put(x: f64, strike: f64, rate: f64, sigma: f64, tau: f64) -> f64 {
    let spot = x.exp();
    if tau <= 0.0 {
        return (strike - spot).max(0.0);
    }
    let d1 = d1(x, strike, rate, sigma, tau);
    let d2 = d1 - sigma * tau.sqrt();
    norm_cdf(-d2) * strike * (-rate * tau).exp() - norm_cdf(-d1) * spot
}

/// Sale value `f(t, x)`. At `t >= T` options pay intrinsic value.
pub fn reward(spec: &RewardSpec, t: f64, x: f64, m: &MarketParams) -> f64 {
    let tau = m.pin_time - t;
    match *spec {
        RewardSpec::Stock => x.exp(),
        RewardSpec::Call { strike } => bs_call(x, strike, m.rate, m.sigma, tau),
        RewardSpec::Put { strike } => bs_put(x, strike, m.rate, m.sigma, tau),
        RewardSpec::CallMinusPut { strike } => {
            bs_call(x, strike, m.rate, m.sigma, tau) - bs_put(x, strike, m.rate, m.sigma, tau)
        }
    }
}

/// `(Phi(d_1), Phi(-d_1))`, with the expiry limit taken explicitly.
fn delta_pair(x: f64, strike: f64, m: &MarketParams, t: f64) -> (f64, f64) {
    let tau = m.pin_time - t;
    if tau <= 0.0 {
        return match x.partial_cmp(&strike.ln()) {
            Some(std::cmp::Ordering::Greater) => (1.0, 0.0),
            Some(std::cmp::Ordering::Less) => (0.0, 1.0),
            _ => (0.5, 0.5),
        };
    }
    let d1 = d1(x, strike, m.rate, m.sigma, tau);
    (norm_cdf(d1), norm_cdf(-d1))
}

/// Drive function `G(t, x)` for selling `spec`.
pub fn drive(spec: &RewardSpec, prior: &Prior, t: f64, x: f64, m: &MarketParams) -> Result<f64, PayoffError> {
    let a = drift(prior, t, x, m)?;
    Ok(drive_with_drift(spec, a, t, x, m))
}

/// Drive evaluated with a precomputed drift value.
pub fn drive_with_drift(spec: &RewardSpec, a: f64, t: f64, x: f64, m: &MarketParams) -> f64 {
    let carry = -m.rate + a + 0.5 * m.sigma * m.sigma;
    let spot = x.exp();
    match *spec {
        RewardSpec::Stock => carry * spot,
        RewardSpec::Call { strike } => carry * spot * delta_pair(x, strike, m, t).0,
        RewardSpec::Put { strike } => -carry * spot * delta_pair(x, strike, m, t).1,
        RewardSpec::CallMinusPut { strike } => {
            let (up, down) = delta_pair(x, strike, m, t);
            carry * spot * up - (-carry * spot * down)
        }
    }
}

/// A drive value at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveEval {
    pub t: f64,
    pub x: f64,
    pub g: f64,
}

/// Sign structure of the drive over a time/price window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extremal {
    /// `G > 0` everywhere: hold until the deadline.
    HoldToDeadline,
    /// `G <= 0` everywhere: sell immediately.
    ExerciseNow,
    Nontrivial,
}

/// Grid-sampled classification of the drive on `[t0, T_bar] x x_range`.
///
/// Sampling is advisory: a sign change between samples goes unnoticed.
pub fn classify_extremal(
    spec: &RewardSpec,
    prior: &Prior,
    m: &MarketParams,
    t0: f64,
    x_range: (f64, f64),
    resolution: (usize, usize),
) -> Result<Extremal, PayoffError> {
    if t0 >= m.deadline {
        return Err(PayoffError::StartAfterDeadline { t0, deadline: m.deadline });
    }
    let (nt, nx) = (resolution.0.max(2), resolution.1.max(2));
    let (mut any_pos, mut any_nonpos) = (false, false);
    for it in 0..nt {
        let t = t0 + (m.deadline - t0) * it as f64 / (nt - 1) as f64;
        for ix in 0..nx {
            let x = x_range.0 + (x_range.1 - x_range.0) * ix as f64 / (nx - 1) as f64;
            if drive(spec, prior, t, x, m)? > 0.0 {
                any_pos = true;
            } else {
                any_nonpos = true;
            }
        }
    }
    Ok(match (any_pos, any_nonpos) {
        (true, false) => Extremal::HoldToDeadline,
        (false, true) => Extremal::ExerciseNow,
        _ => Extremal::Nontrivial,
    })
}

/// First and second partial derivatives of the stock drive under a normal prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GstockPartials {
    pub dx: f64,
    pub dxx: f64,
    pub dt: f64,
    pub dtt: f64,
}

struct NormalDriveParts {
    /// `sigma_D^2 - T sigma^2`
    spread: f64,
    /// `t sigma_D^2 + T sigma^2 (T - t)`
    denom: f64,
    /// `sigma^2 / 2 - r`
    carry: f64,
    mu: f64,
}

fn normal_parts(prior: &Prior, t: f64, m: &MarketParams) -> Result<NormalDriveParts, PayoffError> {
    let Prior::Normal { mu, sigma_d } = *prior else {
        return Err(PayoffError::NotNormal(prior.kind()));
    };
    if !(t >= 0.0 && t < m.pin_time) {
        return Err(PriorError::TimeOutOfRange { t, range: "[0, T)" }.into());
    }
    let s2t = m.sigma * m.sigma * m.pin_time;
    let v = sigma_d * sigma_d;
    Ok(NormalDriveParts {
        spread: v - s2t,
        denom: t * v + s2t * (m.pin_time - t),
        carry: 0.5 * m.sigma * m.sigma - m.rate,
        mu,
    })
}

/// Closed-form partials of `G_stock` for a normal prior.
pub fn gstock_partials(prior: &Prior, t: f64, x: f64, m: &MarketParams) -> Result<GstockPartials, PayoffError> {
    let p = normal_parts(prior, t, m)?;
    let a = drift(prior, t, x, m)?;
    let spot = x.exp();
    let level = (p.spread * (x - m.x0) + p.mu * m.sigma * m.sigma * m.pin_time) / p.denom;
    let ratio = p.spread / p.denom;
    Ok(GstockPartials {
        dx: (p.carry + level + ratio) * spot,
        dxx: (p.carry + level + 2.0 * ratio) * spot,
        dt: -ratio * spot * a,
        dtt: 2.0 * ratio * ratio * spot * a,
    })
}

/// Slope/curvature label of the stock drive along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeRegion {
    DownConcave,
    DownConvex,
    UpConcave,
    UpConvex,
    Degenerate,
}

impl ShapeRegion {
    fn from_signs(up: bool, convex: bool) -> Self {
        match (up, convex) {
            (true, true) => ShapeRegion::UpConvex,
            (true, false) => ShapeRegion::UpConcave,
            (false, true) => ShapeRegion::DownConvex,
            (false, false) => ShapeRegion::DownConcave,
        }
    }

    pub fn is_upward(&self) -> Option<bool> {
        match self {
            ShapeRegion::UpConcave | ShapeRegion::UpConvex => Some(true),
            ShapeRegion::DownConcave | ShapeRegion::DownConvex => Some(false),
            ShapeRegion::Degenerate => None,
        }
    }

    pub fn is_convex(&self) -> Option<bool> {
        match self {
            ShapeRegion::UpConvex | ShapeRegion::DownConvex => Some(true),
            ShapeRegion::UpConcave | ShapeRegion::DownConcave => Some(false),
            ShapeRegion::Degenerate => None,
        }
    }
}

/// Relative size below which `sigma_D^2 - T sigma^2` counts as zero.
const SPREAD_TOL: f64 = 1e-12;

fn is_degenerate(p: &NormalDriveParts, m: &MarketParams) -> bool {
    p.spread.abs() <= SPREAD_TOL * (p.spread.abs() + m.sigma * m.sigma * m.pin_time)
}

/// The price threshold `q(t)` that splits the x-direction shape bands.
/// `None` when `sigma_D = sqrt(T) sigma`.
pub fn shape_threshold(prior: &Prior, t: f64, m: &MarketParams) -> Result<Option<f64>, PayoffError> {
    let p = normal_parts(prior, t, m)?;
    if is_degenerate(&p, m) {
        return Ok(None);
    }
    Ok(Some(m.x0 - (p.mu * m.sigma * m.sigma * m.pin_time + p.carry * p.denom) / p.spread))
}

/// Price level separating rising from falling drive in the time direction.
pub fn time_shape_threshold(prior: &Prior, m: &MarketParams) -> Result<Option<f64>, PayoffError> {
    let p = normal_parts(prior, 0.0, m)?;
    if is_degenerate(&p, m) {
        return Ok(None);
    }
    Ok(Some(m.x0 - p.mu * m.sigma * m.sigma * m.pin_time / p.spread))
}

/// Shape of `x -> G_stock(t, x)` at `x`.
///
/// Bands are `x <= q - 2`, `q - 2 < x < q - 1`, `x >= q - 1`; the labels
/// exactly on a band edge are implementation-defined.
pub fn gstock_shape(prior: &Prior, t: f64, x: f64, m: &MarketParams) -> Result<ShapeRegion, PayoffError> {
    let p = normal_parts(prior, t, m)?;
    let Some(q) = shape_threshold(prior, t, m)? else {
        return Ok(ShapeRegion::Degenerate);
    };
    // slope ~ spread * (x - q + 1), curvature ~ spread * (x - q + 2)
    let wide = p.spread > 0.0;
    let up = if x >= q - 1.0 { wide } else { !wide };
    let convex = if x >= q - 2.0 { wide } else { !wide };
    Ok(ShapeRegion::from_signs(up, convex))
}

/// Shape of `t -> G_stock(t, x)` at `(t, x)`.
///
/// When `sigma_D = sqrt(T) sigma` the drive is `(sigma^2/2 - r + mu/T) e^x`,
/// constant in time; the label then reports the sign of that constant.
pub fn gstock_shape_in_time(prior: &Prior, t: f64, x: f64, m: &MarketParams) -> Result<ShapeRegion, PayoffError> {
    let p = normal_parts(prior, t, m)?;
    let Some(h) = time_shape_threshold(prior, m)? else {
        let c = p.carry + p.mu / m.pin_time;
        return Ok(if c > 0.0 {
            ShapeRegion::UpConvex
        } else if c < 0.0 {
            ShapeRegion::DownConcave
        } else {
            ShapeRegion::Degenerate
        });
    };
    // dG/dt ~ -(x - h), d2G/dt2 ~ spread * (x - h)
    let up = x < h;
    let convex = if x >= h { p.spread > 0.0 } else { p.spread < 0.0 };
    Ok(ShapeRegion::from_signs(up, convex))
}
