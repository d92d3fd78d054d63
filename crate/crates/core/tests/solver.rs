use proptest::prelude::*;
use rbb_core::exec::Execution;
use rbb_core::oracle::explicit_vi_reference;
use rbb_core::solver::{premium_surface, refinement_study, solve_many, SolveJob};
use rbb_core::{extract_regions, solve_vi, GridSpec, MarketParams, Prior, RewardSpec, Solution};

fn market(sigma: f64) -> MarketParams {
    MarketParams::new(1.0, sigma, 1.1, 1.0, 0.1).unwrap()
}

fn zero_drift(m: &MarketParams) -> Prior {
    Prior::normal(0.0, m.sigma * m.pin_time.sqrt()).unwrap()
}

fn middle(sol: &Solution) -> std::ops::RangeInclusive<usize> {
    let m = sol.grid.m;
    (m / 5)..=(m - m / 5)
}

#[test]
fn hold_region_value_matches_the_lognormal_closed_form() {
    let m = market(0.5);
    let prior = zero_drift(&m);
    let grid = GridSpec::for_problem(&prior, &m, 200, 200);
    let sol = solve_vi(&RewardSpec::Stock, &prior, &m, &grid).unwrap();
    let growth = 0.5 * m.sigma * m.sigma - m.rate;
    for (j, &t) in sol.times.iter().enumerate() {
        for i in middle(&sol) {
            let want = (sol.xs[i] + growth * (m.deadline - t)).exp();
            assert!((sol.value[j][i] / want - 1.0).abs() <= 5e-3, "t={t} x={}", sol.xs[i]);
        }
    }
    let l0 = sol.premium_at(0, m.x0);
    let want = m.x0.exp() * ((growth * m.deadline).exp() - 1.0);
    assert!((l0 / want - 1.0).abs() <= 5e-3, "{l0} vs {want}");
}

#[test]
fn negative_drive_means_immediate_sale() {
    let m = market(0.4);
    let prior = zero_drift(&m);
    let grid = GridSpec::for_problem(&prior, &m, 200, 200);
    let sol = solve_vi(&RewardSpec::Stock, &prior, &m, &grid).unwrap();
    let max_f = sol.payoff.iter().flatten().fold(0.0_f64, |a, &f| a.max(f));
    let worst = premium_surface(&sol).iter().flatten().fold(0.0_f64, |a, &l| a.max(l));
    assert!(worst <= 1e-8 * max_f);
    assert!(worst <= 10.0 * grid.eps * max_f);
    let regions = extract_regions(&sol);
    assert_eq!(regions.max_continuation_intervals, 0);
}

#[test]
fn increasing_boundary_under_a_wide_two_point_belief() {
    let m = market(0.4);
    let prior = Prior::symmetric_two_point(2.0).unwrap();
    let grid = GridSpec { omega: 1.0, ..GridSpec::for_problem(&prior, &m, 200, 200).with_bounds(-1.0, 3.0) };
    let sol = solve_vi(&RewardSpec::Stock, &prior, &m, &grid).unwrap();
    let regions = extract_regions(&sol);
    let mut last = f64::NEG_INFINITY;
    for slice in &regions.slices[..grid.n] {
        assert_eq!(slice.crossings.len(), 1, "t={}", slice.t);
        assert!(slice.crossings[0] >= last - 1e-12);
        last = slice.crossings[0];
    }
}

#[test]
fn value_is_nondecreasing_in_price_and_dominates_the_reward() {
    let m = market(0.4);
    for prior in [
        Prior::symmetric_two_point(0.1).unwrap(),
        Prior::normal(0.0, 0.2).unwrap(),
        Prior::symmetric_laplace(10.0).unwrap(),
    ] {
        let grid = GridSpec::for_problem(&prior, &m, 200, 200).with_bounds(-0.5, 2.5);
        let sol = solve_vi(&RewardSpec::Stock, &prior, &m, &grid).unwrap();
        let scale = sol.payoff.iter().flatten().fold(0.0_f64, |a, &f| a.max(f));
        for (v, f) in sol.value.iter().zip(&sol.payoff) {
            assert!(v.windows(2).all(|w| w[1] >= w[0]));
            assert!(v.iter().zip(f).all(|(v, f)| v - f >= -1e-10 * scale));
        }
        assert!(sol.premium[grid.n].iter().all(|&l| l == 0.0));
    }
}

#[test]
fn solves_are_deterministic_and_batchable() {
    let m = market(0.4);
    let prior = Prior::symmetric_two_point(0.8).unwrap();
    let grid = GridSpec::for_problem(&prior, &m, 100, 100).with_bounds(-1.0, 3.0);
    let jobs: Vec<SolveJob> = [RewardSpec::Stock, RewardSpec::Call { strike: 2.0 }, RewardSpec::Put { strike: 3.0 }]
        .into_iter()
        .map(|reward| SolveJob { reward, prior, market: m, grid })
        .collect();
    let seq = solve_many(&jobs, Execution::Sequential);
    let par = solve_many(&jobs, Execution::Parallel);
    for ((job, a), b) in jobs.iter().zip(&seq).zip(&par) {
        let single = solve_vi(&job.reward, &job.prior, &job.market, &job.grid).unwrap();
        assert_eq!(a.as_ref().unwrap(), &single);
        assert_eq!(b.as_ref().unwrap(), &single);
    }
}

#[test]
fn refinement_converges_at_first_order_or_better() {
    let m = market(0.4);
    let prior = Prior::normal(0.0, 0.2).unwrap();
    let grid = GridSpec::for_problem(&prior, &m, 50, 50).with_bounds(-1.0, 3.0);
    let r = refinement_study(&RewardSpec::Stock, &prior, &m, &grid).unwrap();
    let [d1, d2] = r.increments();
    assert!(d2.abs() * 2.0 <= d1.abs(), "{:?}", r);
    assert!(r.order >= 1.0);
}

#[test]
fn explicit_scheme_agrees_with_crank_nicolson() {
    let m = market(0.4);
    for (prior, half) in [
        (Prior::symmetric_two_point(0.1).unwrap(), 1.5),
        (Prior::normal(0.0, 0.2).unwrap(), 2.0),
        (Prior::symmetric_laplace(10.0).unwrap(), 1.5),
    ] {
        let fine = GridSpec::for_problem(&prior, &m, 200, 200).with_bounds(m.x0 - half, m.x0 + half);
        let cn = solve_vi(&RewardSpec::Stock, &prior, &m, &fine).unwrap().value_at(0, m.x0);
        let small = GridSpec::for_problem(&prior, &m, 64, 64).with_bounds(m.x0 - 2.0, m.x0 + 2.0);
        let ex = explicit_vi_reference(&RewardSpec::Stock, &prior, &m, &small).unwrap().value_at(0, m.x0);
        assert!((ex / cn - 1.0).abs() <= 0.02, "{prior:?}: explicit {ex} vs CN {cn}");
    }
}

#[test]
fn explicit_scheme_matches_the_hold_closed_form() {
    let m = market(0.5);
    let prior = zero_drift(&m);
    let grid = GridSpec::for_problem(&prior, &m, 64, 64);
    let sol = explicit_vi_reference(&RewardSpec::Stock, &prior, &m, &grid).unwrap();
    let want = (m.x0 + (0.5 * m.sigma * m.sigma - m.rate) * m.deadline).exp();
    assert!((sol.value_at(0, m.x0) / want - 1.0).abs() <= 0.02);
}

fn small_prior() -> impl Strategy<Value = Prior> {
    prop_oneof![
        (0.05f64..0.9).prop_map(|d| Prior::symmetric_two_point(d).unwrap()),
        (-0.2f64..0.2, 0.05f64..0.6).prop_map(|(mu, s)| Prior::normal(mu, s).unwrap()),
        (5.0f64..15.0).prop_map(|l| Prior::symmetric_laplace(l).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn selling_the_stock_and_the_parity_portfolio_share_one_exercise_region(prior in small_prior(), k1 in 1.0f64..100.0, k2 in 1.0f64..100.0) {
        let m = market(0.4);
        let grid = GridSpec::for_problem(&prior, &m, 80, 160).with_bounds(0.0, 2.0);
        let stock = solve_vi(&RewardSpec::Stock, &prior, &m, &grid).unwrap();
        let a = solve_vi(&RewardSpec::CallMinusPut { strike: k1 }, &prior, &m, &grid).unwrap();
        let b = solve_vi(&RewardSpec::CallMinusPut { strike: k2 }, &prior, &m, &grid).unwrap();
        prop_assert_eq!(&stock.exercise, &a.exercise);
        prop_assert_eq!(&stock.exercise, &b.exercise);
    }

    #[test]
    fn premium_is_nonnegative_with_a_zero_terminal_row(prior in small_prior(), kind in 0usize..3, strike in 1.5f64..4.0) {
        let m = market(0.4);
        let spec = [RewardSpec::Stock, RewardSpec::Call { strike }, RewardSpec::Put { strike }][kind];
        let grid = GridSpec::for_problem(&prior, &m, 80, 160).with_bounds(0.0, 2.0);
        let sol = solve_vi(&spec, &prior, &m, &grid).unwrap();
        let scale = sol.payoff.iter().flatten().fold(0.0_f64, |a, &f| a.max(f.abs()));
        prop_assert!(sol.premium.iter().flatten().all(|&l| l >= -1e-10 * scale));
        prop_assert!(sol.premium[grid.n].iter().all(|&l| l == 0.0));
    }
}
