//! Terminal-return beliefs and the drift they induce on the log-price.
//!
//! The log-price is a Brownian bridge pinned at `x0 + D` at the pinning time,
//! where `D` is drawn from the trader's prior. Conditioning on the observed
//! price `X_t = x` updates the prior by the exponential tilt
//!
//! ```text
//! pi_t(z) ∝ p(z) exp(s z - zeta z^2),
//! s = (x - x0) / (sigma^2 (T - t)),   zeta = t / (2 T sigma^2 (T - t)),
//! ```
//!
//! and the filtered drift is `A(t, x) = (E[D | X_t = x] - (x - x0)) / (T - t)`.
//! Each prior below evaluates that posterior mean in closed form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::{half_ln_pi_over, ln_norm_cdf, log_add_exp, mills_shift};

/// Below `T_EPS_FRACTION * T` the double-exponential posterior mean is
/// replaced by the prior mean.
pub const T_EPS_FRACTION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PriorError {
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("invalid market parameters: {0}")]
    InvalidMarket(String),
    #[error("time {t} is outside the allowed range {range}")]
    TimeOutOfRange { t: f64, range: &'static str },
}

/// Distribution of the terminal log-return `D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Prior {
    /// Point mass at `delta`.
    Constant { delta: f64 },
    /// `delta_u` with probability `p_u`, else `delta_d`.
    TwoPoint { delta_u: f64, delta_d: f64, p_u: f64 },
    Normal { mu: f64, sigma_d: f64 },
    /// Asymmetric Laplace: density `p_1 l_1 e^{l_1 (z - theta)}` below `theta`
    /// and `(1 - p_1) l_2 e^{-l_2 (z - theta)}` above.
    DoubleExponential { theta: f64, p_1: f64, lambda_1: f64, lambda_2: f64 },
}

/// Mean and variance of a prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

impl Moments {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

impl Prior {
    pub fn constant(delta: f64) -> Result<Self, PriorError> {
        Prior::Constant { delta }.validated()
    }

    pub fn two_point(delta_u: f64, delta_d: f64, p_u: f64) -> Result<Self, PriorError> {
        Prior::TwoPoint { delta_u, delta_d, p_u }.validated()
    }

    pub fn normal(mu: f64, sigma_d: f64) -> Result<Self, PriorError> {
        Prior::Normal { mu, sigma_d }.validated()
    }

    pub fn double_exponential(
        theta: f64,
        p_1: f64,
        lambda_1: f64,
        lambda_2: f64,
    ) -> Result<Self, PriorError> {
        Prior::DoubleExponential { theta, p_1, lambda_1, lambda_2 }.validated()
    }

    /// Symmetric two-point prior `±delta` with equal weights.
    pub fn symmetric_two_point(delta: f64) -> Result<Self, PriorError> {
        Self::two_point(delta, -delta, 0.5)
    }

    /// Symmetric Laplace prior centred at zero.
    pub fn symmetric_laplace(lambda: f64) -> Result<Self, PriorError> {
        Self::double_exponential(0.0, 0.5, lambda, lambda)
    }

    pub fn validated(self) -> Result<Self, PriorError> {
        self.validate().map(|_| self)
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        let bad = |msg: String| Err(PriorError::InvalidPrior(msg));
        let open_unit = |p: f64| p > 0.0 && p < 1.0;
        match *self {
            Prior::Constant { delta } if !delta.is_finite() => bad("delta must be finite".into()),
            Prior::TwoPoint { delta_u, delta_d, p_u } => {
                if !(delta_u.is_finite() && delta_d.is_finite()) {
                    bad("delta_u and delta_d must be finite".into())
                } else if delta_u <= delta_d {
                    bad(format!("delta_u ({delta_u}) must exceed delta_d ({delta_d})"))
                } else if !open_unit(p_u) {
                    bad(format!("p_u ({p_u}) must lie in (0,1)"))
                } else {
                    Ok(())
                }
            }
            Prior::Normal { mu, sigma_d } => {
                if !mu.is_finite() {
                    bad("mu must be finite".into())
                } else if !(sigma_d > 0.0 && sigma_d.is_finite()) {
                    bad(format!("sigma_d ({sigma_d}) must be positive"))
                } else {
                    Ok(())
                }
            }
            Prior::DoubleExponential { theta, p_1, lambda_1, lambda_2 } => {
                if !theta.is_finite() {
                    bad("theta must be finite".into())
                } else if !open_unit(p_1) {
                    bad(format!("p_1 ({p_1}) must lie in (0,1)"))
                } else if !(lambda_1 > 0.0 && lambda_1.is_finite()) {
                    bad(format!("lambda_1 ({lambda_1}) must be positive"))
                } else if !(lambda_2 > 0.0 && lambda_2.is_finite()) {
                    bad(format!("lambda_2 ({lambda_2}) must be positive"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Short machine-friendly name of the prior family.
    pub fn kind(&self) -> &'static str {
        match self {
            Prior::Constant { .. } => "constant",
            Prior::TwoPoint { .. } => "two_point",
            Prior::Normal { .. } => "normal",
            Prior::DoubleExponential { .. } => "double_exponential",
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Prior::Constant { .. } | Prior::TwoPoint { .. })
    }

    /// Prior density (continuous priors) or `None` for atoms.
    pub fn density(&self, z: f64) -> Option<f64> {
        self.ln_density(z).map(f64::exp)
    }

    pub(crate) fn ln_density(&self, z: f64) -> Option<f64> {
        match *self {
            Prior::Normal { mu, sigma_d } => {
                let u = (z - mu) / sigma_d;
                Some(-0.5 * u * u - sigma_d.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln())
            }
            Prior::DoubleExponential { theta, p_1, lambda_1, lambda_2 } => Some(if z < theta {
                p_1.ln() + lambda_1.ln() + lambda_1 * (z - theta)
            } else {
                (1.0 - p_1).ln() + lambda_2.ln() - lambda_2 * (z - theta)
            }),
            _ => None,
        }
    }
}

/// Closed-form mean and variance of `D`.
pub fn prior_moments(prior: &Prior) -> Moments {
    match *prior {
        Prior::Constant { delta } => Moments { mean: delta, variance: 0.0 },
        Prior::TwoPoint { delta_u, delta_d, p_u } => {
            let p_d = 1.0 - p_u;
            Moments {
                mean: delta_u * p_u + delta_d * p_d,
                variance: delta_u * delta_u * p_u * (1.0 - p_u) + delta_d * delta_d * p_d * (1.0 - p_d)
                    - 2.0 * delta_u * delta_d * p_u * p_d,
            }
        }
        Prior::Normal { mu, sigma_d } => Moments { mean: mu, variance: sigma_d * sigma_d },
        Prior::DoubleExponential { theta, p_1, lambda_1, lambda_2 } => {
            let p_2 = 1.0 - p_1;
            let skew = p_1 / lambda_1 - p_2 / lambda_2;
            Moments {
                mean: theta - skew,
                variance: 2.0 * p_1 / (lambda_1 * lambda_1) + 2.0 * p_2 / (lambda_2 * lambda_2) - skew * skew,
            }
        }
    }
}

/// Market inputs shared by every computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams {
    /// Initial log-price.
    pub x0: f64,
    /// Bridge noise scale.
    pub sigma: f64,
    /// Pinning time `T`; also the maturity of any option being sold.
    pub pin_time: f64,
    /// Trading deadline, strictly before `pin_time`.
    pub deadline: f64,
    /// Discount rate.
    pub rate: f64,
}

impl MarketParams {
    pub fn new(x0: f64, sigma: f64, pin_time: f64, deadline: f64, rate: f64) -> Result<Self, PriorError> {
        let m = MarketParams { x0, sigma, pin_time, deadline, rate };
        m.validate().map(|_| m)
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        let bad = |msg: String| Err(PriorError::InvalidMarket(msg));
        if !self.x0.is_finite() {
            return bad("x0 must be finite".into());
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma ({}) must be positive", self.sigma));
        }
        if !(self.deadline > 0.0 && self.deadline < self.pin_time && self.pin_time.is_finite()) {
            return bad(format!(
                "deadline must satisfy 0 < T_bar < T (got T_bar = {}, T = {})",
                self.deadline, self.pin_time
            ));
        }
        if !(self.rate >= 0.0 && self.rate.is_finite()) {
            return bad(format!("rate ({}) must be non-negative", self.rate));
        }
        Ok(())
    }

    /// Initial price `e^{x0}`.
    pub fn spot(&self) -> f64 {
        self.x0.exp()
    }
}

/// Observation-dependent pieces of the tilted posterior.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tilt {
    /// Coefficient of `z` in the log-likelihood.
    pub slope: f64,
    /// Coefficient of `-z^2` in the log-likelihood.
    pub zeta: f64,
}

impl Tilt {
    pub fn at(t: f64, x: f64, m: &MarketParams) -> Self {
        let s2 = m.sigma * m.sigma;
        let left = m.pin_time - t;
        Tilt {
            slope: (x - m.x0) / (s2 * left),
            zeta: t / (2.0 * m.pin_time * s2 * left),
        }
    }

    pub fn ln_weight(&self, z: f64) -> f64 {
        self.slope * z - self.zeta * z * z
    }
}

fn check_before_pin(t: f64, m: &MarketParams) -> Result<(), PriorError> {
    if t >= 0.0 && t < m.pin_time {
        Ok(())
    } else {
        Err(PriorError::TimeOutOfRange { t, range: "[0, T)" })
    }
}

/// Posterior mean `a(t, x) = E[D | X_t = x]`.
pub fn posterior_mean(prior: &Prior, t: f64, x: f64, m: &MarketParams) -> Result<f64, PriorError> {
    check_before_pin(t, m)?;
    if t == 0.0 && x == m.x0 {
        return Ok(prior_moments(prior).mean);
    }
    Ok(match *prior {
        Prior::Constant { delta } => delta,
        Prior::TwoPoint { delta_u, delta_d, p_u } => {
            let w_u = two_point_up_weight(delta_u, delta_d, p_u, Tilt::at(t, x, m));
            delta_d + (delta_u - delta_d) * w_u
        }
        Prior::Normal { mu, sigma_d } => {
            let (big_t, s2, v) = (m.pin_time, m.sigma * m.sigma, sigma_d * sigma_d);
            let left = big_t - t;
            big_t * ((x - m.x0) * v + mu * s2 * left) / (t * v + big_t * s2 * left)
        }
        Prior::DoubleExponential { .. } => {
            if t < T_EPS_FRACTION * m.pin_time {
                prior_moments(prior).mean
            } else {
                laplace_posterior(prior, Tilt::at(t, x, m)).mean
            }
        }
    })
}

/// Filtered log-price drift `A(t, x)`.
pub fn drift(prior: &Prior, t: f64, x: f64, m: &MarketParams) -> Result<f64, PriorError> {
    check_before_pin(t, m)?;
    if let Prior::Normal { mu, sigma_d } = *prior {
        // Direct affine form; avoids the a - (x - x0) cancellation near T.
        let (big_t, s2, v) = (m.pin_time, m.sigma * m.sigma, sigma_d * sigma_d);
        return Ok(((v - big_t * s2) * (x - m.x0) + mu * s2 * big_t) / (t * v + big_t * s2 * (big_t - t)));
    }
    let a = posterior_mean(prior, t, x, m)?;
    Ok((a - (x - m.x0)) / (m.pin_time - t))
}

/// Posterior density of `D` at `z` given `X_t = x`; for the discrete
/// priors the conditional probability mass of the atom at `z` (zero off the
/// atoms).
pub fn posterior_density(prior: &Prior, t: f64, x: f64, z: f64, m: &MarketParams) -> Result<f64, PriorError> {
    if !(t > 0.0 && t < m.pin_time) {
        return Err(PriorError::TimeOutOfRange { t, range: "(0, T)" });
    }
    let tilt = Tilt::at(t, x, m);
    Ok(match *prior {
        Prior::Constant { delta } => {
            if z == delta {
                1.0
            } else {
                0.0
            }
        }
        Prior::TwoPoint { delta_u, delta_d, p_u } => {
            let w_u = two_point_up_weight(delta_u, delta_d, p_u, tilt);
            if z == delta_u {
                w_u
            } else if z == delta_d {
                1.0 - w_u
            } else {
                0.0
            }
        }
        Prior::Normal { sigma_d, .. } => {
            let precision = 2.0 * (tilt.zeta + 0.5 / (sigma_d * sigma_d));
            let mean = posterior_mean(prior, t, x, m)?;
            let u = (z - mean) * precision.sqrt();
            crate::special::norm_pdf(u) * precision.sqrt()
        }
        Prior::DoubleExponential { .. } => {
            let post = laplace_posterior(prior, tilt);
            let ln_p = prior.ln_density(z).expect("continuous prior");
            (ln_p + tilt.ln_weight(z) - post.ln_norm).exp()
        }
    })
}

fn two_point_up_weight(delta_u: f64, delta_d: f64, p_u: f64, tilt: Tilt) -> f64 {
    let e_u = p_u.ln() + tilt.ln_weight(delta_u);
    let e_d = (1.0 - p_u).ln() + tilt.ln_weight(delta_d);
    let hi = e_u.max(e_d);
    let (u, d) = ((e_u - hi).exp(), (e_d - hi).exp());
    u / (u + d)
}

/// Log-space summary of the double-exponential posterior.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LaplacePosterior {
    pub mean: f64,
    /// `ln ∫ p(z) exp(s z - zeta z^2) dz`.
    pub ln_norm: f64,
}

/// Posterior of the double-exponential prior under a Gaussian tilt.
///
/// Each side of `theta` contributes a truncated normal with variance
/// `1/(2 zeta)` and centre `m_i`; its mass `H_i` is kept in log form and its
/// conditional mean is written through the inverse Mills ratio, so nothing
/// overflows when `zeta` is small or the tilt is large.
pub(crate) fn laplace_posterior(prior: &Prior, tilt: Tilt) -> LaplacePosterior {
    let Prior::DoubleExponential { theta, p_1, lambda_1, lambda_2 } = *prior else {
        unreachable!("laplace_posterior called with {prior:?}");
    };
    let Tilt { slope, zeta } = tilt;
    let sd = (2.0 * zeta).sqrt().recip();
    let at_theta = slope * theta - zeta * theta * theta;
    let half_ln = half_ln_pi_over(zeta);

    // lower side, z < theta
    let c1 = (slope + lambda_1) / (2.0 * zeta);
    let u1 = (theta - c1) / sd;
    let ln_h1 = (p_1 * lambda_1).ln()
        + half_ln
        + if u1 <= 0.0 {
            // mass sits in the upper tail of the truncation: factor out exp(-u1^2/2)
            at_theta + (0.5 * crate::special::erfcx(-u1 * std::f64::consts::FRAC_1_SQRT_2)).ln()
        } else {
            zeta * c1 * c1 - lambda_1 * theta + ln_norm_cdf(u1)
        };
    let mean1 = theta - sd * mills_shift(u1);

    // upper side, z >= theta
    let c2 = (slope - lambda_2) / (2.0 * zeta);
    let u2 = (theta - c2) / sd;
    let ln_h2 = ((1.0 - p_1) * lambda_2).ln()
        + half_ln
        + if u2 >= 0.0 {
            at_theta + (0.5 * crate::special::erfcx(u2 * std::f64::consts::FRAC_1_SQRT_2)).ln()
        } else {
            zeta * c2 * c2 + lambda_2 * theta + ln_norm_cdf(-u2)
        };
    let mean2 = theta + sd * mills_shift(-u2);

    let ln_norm = log_add_exp(ln_h1, ln_h2);
    let w1 = (ln_h1 - ln_norm).exp();
    let w2 = (ln_h2 - ln_norm).exp();
    LaplacePosterior { mean: w1 * mean1 + w2 * mean2, ln_norm }
}
