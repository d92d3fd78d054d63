//! Normal-distribution special functions used throughout the crate.
//!
//! Everything here is built on the complementary error function, which keeps
//! the tails accurate where `1 - erf` would cancel. The scaled variant
//! `erfcx(x) = exp(x^2) erfc(x)` lets callers work with log-probabilities of
//! deep tails without underflow.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};


const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Beyond this |d| the normal CDF is returned as exactly 0 or 1.
pub const CDF_SATURATION: f64 = 40.0;

/// Continued-fraction switch-over for `erfcx`.
const ERFCX_CF_START: f64 = 4.0;

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Depth giving full double precision for arguments at or above the switch.
fn cf_terms(x: f64) -> usize {
    if x < 5.0 {
        40
    } else if x < 12.0 {
        24
    } else {
        12
    }
}

/// Scaled complementary error function `exp(x^2) * erfc(x)`.
///
/// Finite for all `x` above roughly `-26.6`; returns `+inf` below that.
pub fn erfcx(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        let x2 = x * x;
        if x2 > 709.0 {
            return f64::INFINITY;
        }
        return 2.0 * x2.exp() - erfcx(-x);
    }
    if x < ERFCX_CF_START {
        return (x * x).exp() * libm::erfc(x);
    }
    // Laplace continued fraction, evaluated bottom-up:
    // erfcx(x) = 1/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    let terms = cf_terms(x);
    let mut tail = x;
    for k in (1..=terms).rev() {
        tail = x + (k as f64 * 0.5) / tail;
    }
    FRAC_1_SQRT_PI / tail
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF via `erfc`, saturating to exactly 0 or 1 for |x| > 40.
pub fn norm_cdf(x: f64) -> f64 {
    if x > CDF_SATURATION {
        1.0
    } else if x < -CDF_SATURATION {
        0.0
    } else {
        0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
    }
}

/// `ln Phi(x)`, accurate in both tails.
pub fn ln_norm_cdf(x: f64) -> f64 {
    if x > 0.0 {
        (-0.5 * libm::erfc(x * FRAC_1_SQRT_2)).ln_1p()
    } else {
        (0.5 * erfcx(-x * FRAC_1_SQRT_2)).ln() - 0.5 * x * x
    }
}

/// Inverse Mills ratio `phi(x) / Phi(x)`.
///
/// Tends to `-x` as `x -> -inf` and to 0 as `x -> +inf`.
pub fn inverse_mills(x: f64) -> f64 {
    SQRT_2_OVER_PI / erfcx(-x * FRAC_1_SQRT_2)
}

/// `x + phi(x)/Phi(x)`, the standardized shortfall of a normal truncated
/// above at `x`. Evaluated without the cancellation the naive sum suffers for
/// very negative `x`.
pub fn mills_shift(x: f64) -> f64 {
    let y = -x * FRAC_1_SQRT_2;
    if y < ERFCX_CF_START {
        return x + inverse_mills(x);
    }
    // 1/(sqrt(pi) erfcx(y)) = y + (1/2)/(y + 1/(y + ...)), so the shift is the
    // continued-fraction tail itself.
    let terms = cf_terms(y);
    let mut tail = y;
    for k in (2..=terms).rev() {
        tail = y + (k as f64 * 0.5) / tail;
    }
    SQRT_2 * 0.5 / tail
}

/// Standard normal quantile.
///
/// Acklam's rational approximation followed by one Halley step against the
/// `erfc`-based CDF, which brings it to full double precision.
pub fn norm_inv(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0, "quantile level {p} outside (0,1)");
    if p > 0.5 {
        return -norm_inv(1.0 - p);
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let z = if p < 0.024_25 {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let e = (0.5 * libm::erfc(-z * FRAC_1_SQRT_2) - p) / norm_pdf(z);
    z - e / (1.0 + 0.5 * z * e)
}

/// `ln(exp(a) + exp(b))` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let hi = a.max(b);
    hi + (-(a - b).abs()).exp().ln_1p()
}

/// `sqrt(pi / zeta)` in log form.
pub(crate) fn half_ln_pi_over(zeta: f64) -> f64 {
    0.5 * (PI / zeta).ln()
}
