//! The oracle suite behind `rbb verify`: closed forms against brute-force
//! references on a fixed reference market. Sample points come from additive
//! recurrences, so the suite is deterministic; `seed` drives only the Monte
//! Carlo checks.

use rbb_core::oracle::{
    explicit_vi_reference, generator_fd, mc_value_of_rule, posterior_mean_exact_sum, posterior_mean_quadrature,
    QuadratureSpec, StoppingRule,
};
use rbb_core::{drive, posterior_mean, reward, solve_vi, GridSpec, MarketParams, Prior, RewardSpec, SimConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    /// Worst observed error, in the units of `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn check(name: &'static str, worst: Option<f64>, tolerance: f64) -> Check {
    let worst = worst.unwrap_or(f64::INFINITY);
    Check { name, worst, tolerance, passed: worst <= tolerance }
}

/// Point `k` of a low-discrepancy sequence in `[0, 1)`, coordinate `dim`.
/// Starts one step in, since the zeroth point sits on the centre of every
/// range and a symmetric prior's mean is exactly zero there.
fn sample(k: usize, dim: usize) -> f64 {
    const ALPHA: [f64; 6] = [
        0.618_033_988_749_894_8,
        0.414_213_562_373_095,
        0.732_050_807_568_877_2,
        0.236_067_977_499_79,
        0.645_751_311_064_590_6,
        0.316_624_790_355_4,
    ];
    (0.5 + (k + 1) as f64 * ALPHA[dim % ALPHA.len()]).fract()
}

fn lerp(u: f64, lo: f64, hi: f64) -> f64 {
    lo + u * (hi - lo)
}

pub fn reference_market() -> MarketParams {
    MarketParams::new(1.0, 0.4, 1.1, 1.0, 0.1).expect("valid reference market")
}

fn prior_for(k: usize) -> Prior {
    let u = |d| sample(k, d);
    match k % 4 {
        0 => Prior::constant(lerp(u(2), -0.5, 0.5)),
        1 => Prior::two_point(lerp(u(2), 0.01, 1.0), lerp(u(3), -1.0, -0.01), lerp(u(4), 0.05, 0.95)),
        2 => Prior::normal(lerp(u(2), -0.3, 0.3), lerp(u(3), 0.05, 1.0)),
        _ => Prior::double_exponential(
            lerp(u(2), -0.2, 0.2),
            lerp(u(3), 0.1, 0.9),
            lerp(u(4), 1.5, 10.0),
            lerp(u(5), 1.5, 10.0),
        ),
    }
    .expect("sampled prior parameters are valid")
}

fn max_of(it: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    // NaN poisons the result instead of being skipped by f64::max.
    it.fold(Some(0.0_f64), |acc, v| {
        let (acc, v) = (acc?, v?);
        Some(if acc.is_nan() || v.is_nan() { f64::NAN } else { acc.max(v) })
    })
}

fn drive_parity(m: &MarketParams) -> Check {
    let worst = max_of((0..1000).map(|k| {
        let prior = prior_for(k);
        let (t, x, strike) = (lerp(sample(k, 0), 0.0, 1.0), m.x0 + lerp(sample(k, 1), -1.5, 1.5), lerp(sample(k, 5), 0.5, 200.0));
        let g = |spec| drive(&spec, &prior, t, x, m).ok();
        let s = g(RewardSpec::Stock)?;
        Some((g(RewardSpec::Call { strike })? - g(RewardSpec::Put { strike })? - s).abs() / (1.0 + s.abs()))
    }));
    check("drive_parity", worst, 1e-12)
}

fn posterior_vs_quadrature(name: &'static str, prior: Prior, m: &MarketParams, tol: f64) -> Check {
    let worst = max_of((0..50).map(|k| {
        let t = lerp(sample(k, 0), 0.01, 0.99 * m.pin_time);
        let x = m.x0 + lerp(sample(k, 1), -1.0, 1.0);
        let q = QuadratureSpec::default_for(&prior, t, x, m);
        let want = posterior_mean_quadrature(&prior, t, x, m, &q).ok()?;
        let got = posterior_mean(&prior, t, x, m).ok()?;
        Some((got - want).abs() / want.abs().max(1e-12))
    }));
    check(name, worst, tol)
}

fn two_point_exact_sum(m: &MarketParams) -> Check {
    let worst = max_of((0..200).map(|k| {
        let prior = prior_for(4 * k + 1);
        let Prior::TwoPoint { delta_u, delta_d, .. } = prior else { return None };
        let t = lerp(sample(k, 0), 0.0, 0.999 * m.pin_time);
        let x = m.x0 + lerp(sample(k, 1), -3.0, 3.0);
        let a = posterior_mean(&prior, t, x, m).ok()?;
        let b = posterior_mean_exact_sum(&prior, t, x, m).ok()?;
        Some((a - b).abs() / (delta_u - delta_d))
    }));
    check("posterior_two_point_sum", worst, 1e-13)
}

fn drive_generator(m: &MarketParams) -> Check {
    let worst = max_of((0..200).map(|k| {
        let prior = prior_for(k);
        let strike = lerp(sample(k, 5), 1.5, 5.0);
        let spec = [RewardSpec::Stock, RewardSpec::Call { strike }, RewardSpec::Put { strike }, RewardSpec::CallMinusPut { strike }]
            [(k / 4) % 4];
        let t = lerp(sample(k, 0), 0.05, 0.95);
        let x = m.x0 + lerp(sample(k, 1), -0.8, 0.8);
        let g = drive(&spec, &prior, t, x, m).ok()?;
        let fd = generator_fd(&spec, &prior, t, x, m, 1e-4).ok()?;
        Some((g - fd).abs() / (1.0 + x.exp()))
    }));
    check("drive_generator", worst, 1e-5)
}

fn zero_drift(m: &MarketParams) -> Prior {
    Prior::normal(0.0, m.sigma * m.pin_time.sqrt()).expect("positive sigma")
}

fn closed_form_solve(m: &MarketParams) -> Check {
    let m = MarketParams { sigma: 0.5, ..*m };
    let prior = zero_drift(&m);
    let grid = GridSpec::for_problem(&prior, &m, 200, 200);
    let worst = solve_vi(&RewardSpec::Stock, &prior, &m, &grid).ok().map(|sol| {
        let growth = 0.5 * m.sigma * m.sigma - m.rate;
        let mut worst = 0.0_f64;
        for (j, &t) in sol.times.iter().enumerate() {
            for i in grid.m / 5..=grid.m - grid.m / 5 {
                let want = (sol.xs[i] + growth * (m.deadline - t)).exp();
                worst = worst.max((sol.value[j][i] / want - 1.0).abs());
            }
        }
        worst
    });
    check("closed_form_solve", worst, 5e-3)
}

fn immediate_exercise(m: &MarketParams) -> Check {
    let prior = zero_drift(m);
    let grid = GridSpec::for_problem(&prior, m, 200, 200);
    let worst = solve_vi(&RewardSpec::Stock, &prior, m, &grid).ok().map(|sol| {
        let max_f = sol.payoff.iter().flatten().fold(0.0_f64, |a, &f| a.max(f));
        let max_l = sol.premium.iter().flatten().fold(0.0_f64, |a, &l| a.max(l));
        max_l / max_f
    });
    check("immediate_exercise", worst, 1e-8)
}

/// Narrow-belief priors with the x windows that keep PSOR convergent.
fn boundary_priors() -> [(Prior, f64); 3] {
    [
        (Prior::symmetric_two_point(0.1).expect("valid"), 1.5),
        (Prior::normal(0.0, 0.2).expect("valid"), 2.0),
        (Prior::symmetric_laplace(10.0).expect("valid"), 1.5),
    ]
}

fn explicit_vs_cn(m: &MarketParams) -> Check {
    let worst = max_of(boundary_priors().into_iter().map(|(prior, half)| {
        let fine = GridSpec::for_problem(&prior, m, 200, 200).with_bounds(m.x0 - half, m.x0 + half);
        let cn = solve_vi(&RewardSpec::Stock, &prior, m, &fine).ok()?.value_at(0, m.x0);
        let small = GridSpec::for_problem(&prior, m, 64, 64).with_bounds(m.x0 - 2.0, m.x0 + 2.0);
        let ex = explicit_vi_reference(&RewardSpec::Stock, &prior, m, &small).ok()?.value_at(0, m.x0);
        Some((ex / cn - 1.0).abs())
    }));
    check("explicit_vs_crank_nicolson", worst, 0.02)
}

fn timing_parity(m: &MarketParams) -> Check {
    let worst = max_of(boundary_priors().into_iter().map(|(prior, half)| {
        let grid = GridSpec::for_problem(&prior, m, 200, 200).with_bounds(m.x0 - half, m.x0 + half);
        let stock = solve_vi(&RewardSpec::Stock, &prior, m, &grid).ok()?;
        let mut diff = 0usize;
        for strike in [100.0, 50.0] {
            let cmp = solve_vi(&RewardSpec::CallMinusPut { strike }, &prior, m, &grid).ok()?;
            diff += stock.exercise.iter().flatten().zip(cmp.exercise.iter().flatten()).filter(|(a, b)| a != b).count();
        }
        Some(diff as f64)
    }));
    check("timing_parity_mask_mismatches", worst, 0.0)
}

fn mc_hold(m: &MarketParams, seed: u64) -> Check {
    let m = MarketParams { sigma: 0.5, ..*m };
    let prior = zero_drift(&m);
    let cfg = SimConfig::new(20_000, 100, seed);
    let worst = mc_value_of_rule(&RewardSpec::Stock, &prior, &m, StoppingRule::HoldToDeadline, &cfg).ok().map(|e| {
        let want = (m.x0 + (0.5 * m.sigma * m.sigma - m.rate) * m.deadline).exp();
        (e.estimate - want).abs() / e.stderr
    });
    check("mc_hold_zero_drift_stderrs", worst, 3.0)
}

fn mc_optimal(m: &MarketParams, seed: u64) -> Check {
    let (prior, half) = boundary_priors()[1];
    let grid = GridSpec::for_problem(&prior, m, 200, 200).with_bounds(m.x0 - half, m.x0 + half);
    let cfg = SimConfig::new(20_000, 400, seed);
    let worst = (|| {
        let sol = solve_vi(&RewardSpec::Stock, &prior, m, &grid).ok()?;
        let opt = mc_value_of_rule(&RewardSpec::Stock, &prior, m, StoppingRule::FromSolution(&sol), &cfg).ok()?;
        let hold = mc_value_of_rule(&RewardSpec::Stock, &prior, m, StoppingRule::HoldToDeadline, &cfg).ok()?;
        let now = reward(&RewardSpec::Stock, 0.0, m.x0, m);
        let above_value = (opt.estimate - sol.value_at(0, m.x0)) / opt.stderr;
        let below_hold = (hold.estimate - opt.estimate) / opt.joint_stderr(&hold);
        let below_now = (now - opt.estimate) / opt.stderr;
        Some(above_value.max(below_hold).max(below_now))
    })();
    check("mc_optimal_rule_stderrs", worst, 3.0)
}

/// Runs every check on the reference market.
pub fn run_checks(seed: u64) -> Vec<Check> {
    let m = reference_market();
    vec![
        drive_parity(&m),
        posterior_vs_quadrature("posterior_normal", Prior::normal(0.1, 0.3).expect("valid"), &m, 1e-8),
        posterior_vs_quadrature(
            "posterior_double_exponential",
            Prior::symmetric_laplace(2.357).expect("valid"),
            &m,
            1e-7,
        ),
        two_point_exact_sum(&m),
        drive_generator(&m),
        closed_form_solve(&m),
        immediate_exercise(&m),
        explicit_vs_cn(&m),
        timing_parity(&m),
        mc_hold(&m, seed),
        mc_optimal(&m, seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_stay_in_the_unit_interval() {
        for k in 0..1000 {
            for d in 0..6 {
                let u = sample(k, d);
                assert!((0.0..1.0).contains(&u));
            }
        }
    }

    #[test]
    fn failed_evaluations_fail_the_check() {
        assert!(!check("x", None, 1.0).passed);
        assert!(!check("x", Some(f64::NAN), 1.0).passed);
        assert!(check("x", Some(0.5), 1.0).passed);
    }
}
