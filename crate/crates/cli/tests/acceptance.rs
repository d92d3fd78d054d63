//! Acceptance suite. Runs every criterion, prints one line each and exits
//! nonzero if any fails.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbb_cli::presets::preset;
use rbb_cli::{parse_config, Job, RunConfig};
use rbb_core::dynamics::mean_and_variance;
use rbb_core::oracle::{mc_value_of_rule, posterior_mean_quadrature, QuadratureSpec, StoppingRule};
use rbb_core::payoffs::{gstock_shape, gstock_shape_in_time, shape_threshold, time_shape_threshold};
use rbb_core::solver::{solve_many, SolveJob};
use rbb_core::{
    drive, extract_regions, posterior_mean, simulate_paths, solve_vi, Execution, GridSpec, MarketParams,
    Prior, RewardSpec, SimConfig, Solution,
};
use std::process::ExitCode;
use std::time::Instant;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const SOLVE_PRESETS: [&str; 7] = ["fig3a", "fig3b", "fig3c", "fig3d", "fig4", "fig5a", "fig5b"];
const SWEEP_PRESETS: [&str; 6] = ["fig6a", "fig6b", "fig6c", "fig6d", "fig6e", "fig6f"];

fn load(name: &str) -> RunConfig {
    parse_config(preset(name).expect("known preset")).expect("preset parses")
}

fn solve(cfg: &RunConfig) -> Solution {
    solve_vi(&cfg.reward, cfg.prior(), &cfg.market, &cfg.grid).expect("preset solves")
}

fn fig3_market() -> MarketParams {
    MarketParams::new(1.0, 0.4, 1.1, 1.0, 0.1).unwrap()
}

fn zero_drift(m: &MarketParams) -> Prior {
    Prior::normal(0.0, m.sigma * m.pin_time.sqrt()).unwrap()
}

fn within(limit: f64, start: Instant) -> Result<f64, String> {
    let secs = start.elapsed().as_secs_f64();
    if secs < limit {
        Ok(secs)
    } else {
        Err(format!("took {secs:.1} s, limit {limit} s"))
    }
}

fn random_prior(rng: &mut ChaCha8Rng) -> Prior {
    match rng.random_range(0..4) {
        0 => Prior::constant(rng.random_range(-0.5..0.5)),
        1 => Prior::two_point(rng.random_range(0.01..1.0), rng.random_range(-1.0..-0.01), rng.random_range(0.05..0.95)),
        2 => Prior::normal(rng.random_range(-0.3..0.3), rng.random_range(0.05..1.0)),
        _ => Prior::double_exponential(
            rng.random_range(-0.2..0.2),
            rng.random_range(0.1..0.9),
            rng.random_range(1.5..10.0),
            rng.random_range(1.5..10.0),
        ),
    }
    .unwrap()
}

fn drive_parity() -> Outcome {
    let start = Instant::now();
    let m = fig3_market();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let prior = random_prior(&mut rng);
        let t = rng.random_range(0.0..m.pin_time);
        let x = m.x0 + rng.random_range(-2.0..2.0);
        let strike = rng.random_range(0.5..200.0);
        let g = |spec| drive(&spec, &prior, t, x, &m).map_err(|e| e.to_string());
        let s = g(RewardSpec::Stock)?;
        let err = (g(RewardSpec::Call { strike })? - g(RewardSpec::Put { strike })? - s).abs() / (1.0 + s.abs());
        if !(err <= 1e-12) {
            return Err(format!("error {err:.3e} at t={t}, x={x}, K={strike}, {prior:?}"));
        }
        worst = worst.max(err);
    }
    let secs = within(1.0, start)?;
    Ok(format!("worst {worst:.2e} <= 1e-12, {secs:.3} s"))
}

fn closed_form_solve() -> Outcome {
    let start = Instant::now();
    let m = MarketParams { sigma: 0.5, ..fig3_market() };
    let prior = zero_drift(&m);
    let grid = GridSpec::for_problem(&prior, &m, 200, 200);
    let sol = solve_vi(&RewardSpec::Stock, &prior, &m, &grid).map_err(|e| e.to_string())?;
    let growth = 0.5 * m.sigma * m.sigma - m.rate;
    let mut worst = 0.0_f64;
    for (j, &t) in sol.times.iter().enumerate() {
        for i in grid.m / 5..=grid.m - grid.m / 5 {
            let want = (sol.xs[i] + growth * (m.deadline - t)).exp();
            worst = worst.max((sol.value[j][i] / want - 1.0).abs());
        }
    }
    let secs = within(30.0, start)?;
    if worst <= 5e-3 {
        Ok(format!("worst relative error {worst:.2e} <= 5e-3, {secs:.2} s"))
    } else {
        Err(format!("worst relative error {worst:.2e} > 5e-3"))
    }
}

fn immediate_exercise() -> Outcome {
    let m = fig3_market();
    let prior = zero_drift(&m);
    let grid = GridSpec::for_problem(&prior, &m, 200, 200);
    let sol = solve_vi(&RewardSpec::Stock, &prior, &m, &grid).map_err(|e| e.to_string())?;
    let max_f = sol.payoff.iter().flatten().fold(0.0_f64, |a, &f| a.max(f.abs()));
    let worst = sol
        .value
        .iter()
        .zip(&sol.payoff)
        .flat_map(|(v, f)| v.iter().zip(f).map(|(v, f)| v - f))
        .fold(f64::NEG_INFINITY, f64::max);
    if worst <= 1e-8 * max_f {
        Ok(format!("max(V - f) = {worst:.2e} <= {:.2e}", 1e-8 * max_f))
    } else {
        Err(format!("max(V - f) = {worst:.2e} > {:.2e}", 1e-8 * max_f))
    }
}

fn posterior_oracles() -> Outcome {
    let start = Instant::now();
    let m = fig3_market();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let priors = [
        ("normal", Prior::normal(0.1, 0.3).unwrap()),
        ("double_exponential", Prior::symmetric_laplace(2.357).unwrap()),
    ];
    let mut summary = Vec::new();
    for (name, prior) in priors {
        let mut worst = 0.0_f64;
        for _ in 0..50 {
            let t = rng.random_range(0.01..0.99 * m.pin_time);
            let x = m.x0 + rng.random_range(-1.0..1.0);
            let q = QuadratureSpec::default_for(&prior, t, x, &m);
            let want = posterior_mean_quadrature(&prior, t, x, &m, &q).map_err(|e| e.to_string())?;
            let got = posterior_mean(&prior, t, x, &m).map_err(|e| e.to_string())?;
            let err = (got - want).abs() / want.abs();
            if !(err <= 1e-7) {
                return Err(format!("{name}: relative error {err:.3e} at t={t}, x={x}"));
            }
            worst = worst.max(err);
        }
        summary.push(format!("{name} {worst:.2e}"));
    }
    let secs = within(10.0, start)?;
    Ok(format!("{} <= 1e-7, {secs:.2} s", summary.join(", ")))
}

fn monte_carlo_pinning() -> Outcome {
    let cfg = load("fig1a");
    let m = cfg.market;
    let prior = Prior::symmetric_two_point(0.3).unwrap();
    let batch = simulate_paths(&prior, &m, &SimConfig::new(10_000, 1000, 5)).map_err(|e| e.to_string())?;
    let end = batch.terminal_values();
    let up = end.iter().filter(|&&x| x > m.x0).count() as f64 / end.len() as f64;
    if !(0.47..=0.53).contains(&up) {
        return Err(format!("up-fraction {up:.4} outside [0.47, 0.53]"));
    }

    let half = 0.5 * m.pin_time;
    let sim = SimConfig::new(50_000, 1000, 6).with_horizon(half);
    let batch = simulate_paths(&Prior::constant(0.1).unwrap(), &m, &sim).map_err(|e| e.to_string())?;
    let (_, var) = mean_and_variance(&batch.terminal_values());
    let want = m.sigma * m.sigma * m.pin_time / 4.0;
    let rel = (var / want - 1.0).abs();
    if rel <= 0.05 {
        Ok(format!("up-fraction {up:.4}; variance at T/2 {var:.5} vs {want:.5} ({:.2}%)", 100.0 * rel))
    } else {
        Err(format!("variance at T/2 {var:.5} vs {want:.5} ({:.2}% off)", 100.0 * rel))
    }
}

/// Single boundary crossing on every level before the deadline, monotone in time.
fn single_monotone_boundary(sol: &Solution, increasing: bool) -> Result<(), String> {
    let n = sol.times.len() - 1;
    let mut prev: Option<f64> = None;
    for j in 0..n {
        let b = &sol.boundaries[j];
        if b.len() != 1 {
            return Err(format!("{} crossings at t={}", b.len(), sol.times[j]));
        }
        if let Some(p) = prev {
            let tol = 1e-9;
            let ok = if increasing { b[0] >= p - tol } else { b[0] <= p + tol };
            if !ok {
                return Err(format!("boundary moves from {p} to {} at t={}", b[0], sol.times[j]));
            }
        }
        prev = Some(b[0]);
    }
    Ok(())
}

fn figure_topology() -> Outcome {
    let mut notes = Vec::new();
    let mut timed = |name: &str| -> Result<(Solution, RunConfig), String> {
        let start = Instant::now();
        let cfg = load(name);
        let sol = solve(&cfg);
        let secs = within(60.0, start).map_err(|e| format!("{name}: {e}"))?;
        notes.push(format!("{name} {secs:.2} s"));
        Ok((sol, cfg))
    };

    let (sol, _) = timed("fig3a")?;
    single_monotone_boundary(&sol, false).map_err(|e| format!("fig3a: {e}"))?;
    let (sol, _) = timed("fig3b")?;
    single_monotone_boundary(&sol, true).map_err(|e| format!("fig3b: {e}"))?;

    let (sol, _) = timed("fig4")?;
    let regions = extract_regions(&sol);
    if !regions.is_disconnected() {
        return Err("fig4: continuation region is connected on every level".into());
    }
    let split_levels = regions.slices.iter().filter(|s| s.continuation.len() >= 2).count();

    // The upper hold interval exists at later times but not near the start:
    // early levels carry one continuation interval, reaching below x0.
    let (sol, cfg) = timed("fig5b")?;
    let regions = extract_regions(&sol);
    let early = 0.1 * cfg.market.deadline;
    for s in regions.slices.iter().filter(|s| s.t <= early) {
        if s.continuation.len() != 1 || s.continuation[0].0 >= cfg.market.x0 {
            return Err(format!("fig5b: continuation at t={} is {:?}", s.t, s.continuation));
        }
    }
    if !regions.is_disconnected() {
        return Err("fig5b: no level carries an upper continuation interval".into());
    }
    let first_split = regions.slices.iter().find(|s| s.continuation.len() >= 2).map(|s| s.t).unwrap_or(f64::NAN);
    Ok(format!(
        "fig3a nonincreasing, fig3b nondecreasing, fig4 split on {split_levels} levels, fig5b upper interval from t={first_split:.3}; {}",
        notes.join(", ")
    ))
}

fn timing_parity() -> Outcome {
    let mut jobs = Vec::new();
    for name in SOLVE_PRESETS {
        let cfg = load(name);
        for reward in [RewardSpec::Stock, RewardSpec::CallMinusPut { strike: 100.0 }, RewardSpec::CallMinusPut { strike: 50.0 }] {
            jobs.push(SolveJob { reward, prior: *cfg.prior(), market: cfg.market, grid: cfg.grid });
        }
    }
    let sols = solve_many(&jobs, Execution::default()).into_iter().collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
    for (name, trio) in SOLVE_PRESETS.iter().zip(sols.chunks(3)) {
        for (k, other) in trio[1..].iter().enumerate() {
            let mismatches = trio[0]
                .exercise
                .iter()
                .zip(&other.exercise)
                .flat_map(|(a, b)| a.iter().zip(b).filter(|(a, b)| a != b))
                .count();
            if mismatches > 0 {
                let strike = [100, 50][k];
                return Err(format!("{name}: {mismatches} mask differences between stock and call-minus-put K={strike}"));
            }
        }
    }
    Ok(format!("masks identical for stock, K=100 and K=50 on {} presets", SOLVE_PRESETS.len()))
}

/// Signs of the finite-difference partials of the stock drive.
fn fd_signs(prior: &Prior, t: f64, x: f64, m: &MarketParams) -> [bool; 4] {
    let g = |t, x| drive(&RewardSpec::Stock, prior, t, x, m).unwrap();
    let (hx, ht) = (1e-4, 1e-4);
    let g0 = g(t, x);
    let dx = g(t, x + hx) - g(t, x - hx);
    let dxx = g(t, x + hx) - 2.0 * g0 + g(t, x - hx);
    let dt = g(t + ht, x) - g(t - ht, x);
    let dtt = g(t + ht, x) - 2.0 * g0 + g(t - ht, x);
    [dx > 0.0, dxx > 0.0, dt > 0.0, dtt > 0.0]
}

fn shape_agreement(prior: &Prior, m: &MarketParams, seed: u64) -> Result<(f64, usize), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = time_shape_threshold(prior, m).map_err(|e| e.to_string())?.ok_or("degenerate prior")?;
    let margin = 1e-3;
    let (mut agree, mut total) = (0usize, 0usize);
    while total < 10_000 {
        let t = rng.random_range(0.01..m.deadline);
        let x = m.x0 + rng.random_range(-3.0..2.0);
        let q = shape_threshold(prior, t, m).map_err(|e| e.to_string())?.ok_or("degenerate prior")?;
        if [q - 1.0, q - 2.0, h].iter().any(|e| (x - e).abs() < margin) {
            continue;
        }
        let in_x = gstock_shape(prior, t, x, m).map_err(|e| e.to_string())?;
        let in_t = gstock_shape_in_time(prior, t, x, m).map_err(|e| e.to_string())?;
        let labels = [in_x.is_upward(), in_x.is_convex(), in_t.is_upward(), in_t.is_convex()];
        let fd = fd_signs(prior, t, x, m);
        total += 1;
        if labels.iter().zip(fd).all(|(l, s)| *l == Some(s)) {
            agree += 1;
        }
    }
    Ok((agree as f64 / total as f64, total))
}

fn shape_labels() -> Outcome {
    let m = fig3_market();
    let critical = m.sigma * m.pin_time.sqrt();
    let mut notes = Vec::new();
    for (seed, prior) in [(8, Prior::normal(0.05, 0.6).unwrap()), (9, Prior::normal(0.05, 0.2).unwrap())] {
        let Prior::Normal { sigma_d, .. } = prior else { unreachable!() };
        let (frac, n) = shape_agreement(&prior, &m, seed)?;
        let side = if sigma_d > critical { ">" } else { "<" };
        let note = format!("sigma_D={sigma_d} ({side} {critical:.4}): {:.2}% of {n}", 100.0 * frac);
        if frac < 0.99 {
            return Err(note);
        }
        notes.push(note);
    }
    Ok(notes.join(", "))
}

fn mc_consistency() -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();
    for (k, name) in ["fig3a", "fig3b", "fig3c", "fig3d"].into_iter().enumerate() {
        let cfg = load(name);
        let (m, prior, spec) = (cfg.market, *cfg.prior(), cfg.reward);
        let sol = solve(&cfg);
        let sim = SimConfig::new(50_000, 2 * cfg.grid.n, 90 + k as u64);
        let value = |rule| mc_value_of_rule(&spec, &prior, &m, rule, &sim).map_err(|e| e.to_string());
        let opt = value(StoppingRule::FromSolution(&sol))?;
        let now = value(StoppingRule::StopNow)?;
        let hold = value(StoppingRule::HoldToDeadline)?;
        let best = if now.estimate >= hold.estimate { now } else { hold };
        let lower = best.estimate - 3.0 * opt.joint_stderr(&best);
        let v0 = sol.value_at(0, m.x0);
        let upper = v0 + 3.0 * opt.stderr;
        if !(opt.estimate >= lower && opt.estimate <= upper) {
            return Err(format!(
                "{name}: optimal {:.5} outside [{lower:.5}, {upper:.5}] (stop {:.5}, hold {:.5}, V0 {v0:.5})",
                opt.estimate, now.estimate, hold.estimate
            ));
        }
        notes.push(format!("{name} {:.4} in [{lower:.4}, {upper:.4}]", opt.estimate));
    }
    let secs = within(120.0, start)?;
    Ok(format!("{}; {secs:.1} s", notes.join(", ")))
}

fn premium_sign_and_terminal() -> Outcome {
    let mut jobs = Vec::new();
    let mut names = Vec::new();
    for name in SOLVE_PRESETS {
        let cfg = load(name);
        jobs.push(SolveJob { reward: cfg.reward, prior: *cfg.prior(), market: cfg.market, grid: cfg.grid });
        names.push(name.to_string());
    }
    for name in SWEEP_PRESETS {
        let cfg = load(name);
        let Job::Sweep(sweep) = &cfg.job else { return Err(format!("{name} is not a sweep")) };
        for &v in &sweep.values {
            let c = cfg.with_parameter(sweep.parameter, v).map_err(|e| e.to_string())?;
            jobs.push(SolveJob { reward: c.reward, prior: *c.prior(), market: c.market, grid: c.grid });
            names.push(format!("{name}[{}={v}]", sweep.parameter.name()));
        }
    }
    let sols = solve_many(&jobs, Execution::default());
    let mut worst = 0.0_f64;
    for (name, sol) in names.iter().zip(sols) {
        let sol = sol.map_err(|e| format!("{name}: {e}"))?;
        let scale = sol.payoff.iter().flatten().fold(0.0_f64, |a, &f| a.max(f.abs()));
        let min_l = sol.premium.iter().flatten().fold(f64::INFINITY, |a, &l| a.min(l));
        if !(min_l >= -1e-10 * scale) {
            return Err(format!("{name}: min L = {min_l:.3e} below -1e-10 * {scale:.3}"));
        }
        let last = sol.premium.last().expect("terminal level");
        if last.iter().any(|&l| l != 0.0) {
            return Err(format!("{name}: nonzero premium at the deadline"));
        }
        worst = worst.min(min_l / scale);
    }
    Ok(format!("{} solves, min L/scale = {worst:.2e}, L(T_bar, .) = 0", names.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("drive parity", drive_parity),
        ("closed-form solve", closed_form_solve),
        ("immediate exercise", immediate_exercise),
        ("posterior-mean oracles", posterior_oracles),
        ("Monte Carlo pinning", monte_carlo_pinning),
        ("figure topology", figure_topology),
        ("timing parity", timing_parity),
        ("shape labels", shape_labels),
        ("Monte Carlo consistency", mc_consistency),
        ("premium sign and terminal value", premium_sign_and_terminal),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({detail})", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
