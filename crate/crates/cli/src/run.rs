//! Job dispatch. Each job writes its CSVs into an [`ArtifactSet`] and a
//! manifest last; any error removes what was written.

use crate::config::{render, to_json, DriveJob, Job, RunConfig, SweepJob};
use crate::output::{num, row, Artifact, ArtifactSet};
use crate::verify::{run_checks, Check};
use rbb_core::dynamics::terminal_histogram;
use rbb_core::exec::Execution;
use rbb_core::payoffs::drive_with_drift;
use rbb_core::solver::{solve_many, SolveJob};
use rbb_core::{
    drift, extract_regions, reward, simulate_paths, solve_vi, PriorError, Regions, SimError, SolveError, Solution,
};
use serde_json::{json, Value};
use std::io;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error("{0}")]
    Config(#[from] crate::config::ConfigError),
}

impl RunError {
    /// 1 for usage and file-system problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Io(_) | RunError::Config(_) => 1,
            RunError::Solve(_) | RunError::Sim(_) | RunError::Prior(_) => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub artifacts: Vec<Artifact>,
    /// Oracle checks that missed their tolerance (verify jobs only).
    pub failed_checks: Vec<String>,
    pub summary: Value,
}

/// Runs `cfg.job` and writes its artifacts into `out_dir`.
pub fn run(cfg: &RunConfig, defaults: &[String], out_dir: &Path) -> Result<RunReport, RunError> {
    let start = Instant::now();
    let mut set = ArtifactSet::create(out_dir)?;
    let (summary, failed) = match &cfg.job {
        Job::Simulate { histogram_bins } => (simulate(cfg, *histogram_bins, &mut set)?, Vec::new()),
        Job::Solve => (solve(cfg, &mut set)?, Vec::new()),
        Job::Drive(d) => (drive(cfg, d, &mut set)?, Vec::new()),
        Job::Sweep(s) => (sweep(cfg, s, &mut set)?, Vec::new()),
        Job::Verify => verify(cfg.sim.seed, &mut set)?,
    };
    let manifest = manifest(Some(cfg), defaults, cfg.sim.seed, cfg.job.kind(), &set, &summary, start);
    let artifacts = set.artifacts().to_vec();
    set.commit(&manifest)?;
    Ok(RunReport { artifacts, failed_checks: failed, summary })
}

/// Runs the oracle suite without a config file.
pub fn run_verify(seed: u64, out_dir: &Path) -> Result<RunReport, RunError> {
    let start = Instant::now();
    let mut set = ArtifactSet::create(out_dir)?;
    let (summary, failed) = verify(seed, &mut set)?;
    let manifest = manifest(None, &[], seed, "verify", &set, &summary, start);
    let artifacts = set.artifacts().to_vec();
    set.commit(&manifest)?;
    Ok(RunReport { artifacts, failed_checks: failed, summary })
}

fn manifest(
    cfg: Option<&RunConfig>,
    defaults: &[String],
    seed: u64,
    job: &str,
    set: &ArtifactSet,
    summary: &Value,
    start: Instant,
) -> Value {
    let files: Vec<Value> = set.artifacts().iter().map(|a| json!({"file": a.file, "rows": a.rows})).collect();
    json!({
        "tool": "rbb",
        "version": env!("CARGO_PKG_VERSION"),
        "job": job,
        "seed": seed,
        "parallel": Execution::parallel_available(),
        "config": cfg.map(render),
        "resolved": cfg.map(to_json),
        "defaults_applied": defaults,
        "artifacts": files,
        "summary": summary,
        "wall_time_seconds": start.elapsed().as_secs_f64(),
    })
}

fn simulate(cfg: &RunConfig, bins: usize, set: &mut ArtifactSet) -> Result<Value, RunError> {
    let batch = simulate_paths(cfg.prior(), &cfg.market, &cfg.sim)?;
    let times = &batch.times;
    set.csv(
        "paths.csv",
        "path_id,t,x",
        batch
            .paths
            .iter()
            .enumerate()
            .flat_map(|(k, p)| p.iter().zip(times).map(move |(x, t)| row([k.to_string(), num(*t), num(*x)]))),
    )?;
    let h = terminal_histogram(&batch, bins);
    set.csv(
        "terminal_histogram.csv",
        "bin_lo,bin_hi,count",
        h.counts.iter().enumerate().map(|(k, c)| row([num(h.edges[k]), num(h.edges[k + 1]), c.to_string()])),
    )?;
    let terminal = batch.terminal_values();
    let up = terminal.iter().filter(|&&x| x > cfg.market.x0).count();
    Ok(json!({
        "n_paths": batch.n_paths(),
        "horizon": times.last(),
        "fraction_above_x0": up as f64 / terminal.len() as f64,
    }))
}

fn write_solution(sol: &Solution, regions: &Regions, set: &mut ArtifactSet) -> Result<(), RunError> {
    set.csv(
        "surface.csv",
        "t,x,V,L,exercise",
        sol.times.iter().enumerate().flat_map(|(j, &t)| {
            sol.xs.iter().enumerate().map(move |(i, &x)| {
                let ex = if sol.exercise[j][i] { "1" } else { "0" };
                row([num(t), num(x), num(sol.value[j][i]), num(sol.premium[j][i]), ex.to_string()])
            })
        }),
    )?;
    write_boundaries(sol, set, "boundaries.csv")?;
    set.csv(
        "regions.csv",
        "t,continuation_intervals,exercise_intervals",
        regions
            .slices
            .iter()
            .map(|s| row([num(s.t), s.continuation.len().to_string(), s.exercise.len().to_string()])),
    )?;
    set.csv(
        "intervals.csv",
        "t,region,interval_index,x_lo,x_hi",
        regions.slices.iter().flat_map(|s| {
            let tag = |name: &'static str, v: &Vec<(f64, f64)>| {
                v.iter()
                    .enumerate()
                    .map(move |(k, &(lo, hi))| row([num(s.t), name.to_string(), k.to_string(), num(lo), num(hi)]))
                    .collect::<Vec<_>>()
            };
            let mut rows = tag("continuation", &s.continuation);
            rows.extend(tag("exercise", &s.exercise));
            rows
        }),
    )?;
    Ok(())
}

fn write_boundaries(sol: &Solution, set: &mut ArtifactSet, name: &str) -> Result<usize, RunError> {
    Ok(set.csv(
        name,
        "t,crossing_index,x_boundary",
        sol.times
            .iter()
            .zip(&sol.boundaries)
            .flat_map(|(&t, b)| b.iter().enumerate().map(move |(k, &x)| row([num(t), k.to_string(), num(x)]))),
    )?)
}

fn topology(regions: &Regions) -> Value {
    json!({
        "max_continuation_intervals": regions.max_continuation_intervals,
        "max_exercise_intervals": regions.max_exercise_intervals,
        "disconnected": regions.is_disconnected(),
    })
}

fn solve(cfg: &RunConfig, set: &mut ArtifactSet) -> Result<Value, RunError> {
    let sol = solve_vi(&cfg.reward, cfg.prior(), &cfg.market, &cfg.grid)?;
    let regions = extract_regions(&sol);
    write_solution(&sol, &regions, set)?;
    let x0 = cfg.market.x0;
    Ok(json!({
        "V0": sol.value_at(0, x0),
        "f0": reward(&cfg.reward, 0.0, x0, &cfg.market),
        "L0": sol.premium_at(0, x0),
        "mask_tol": sol.mask_tol,
        "psor_iterations": sol.iterations.iter().sum::<usize>(),
        "topology": topology(&regions),
    }))
}

fn drive(cfg: &RunConfig, job: &DriveJob, set: &mut ArtifactSet) -> Result<Value, RunError> {
    let m = &cfg.market;
    let xs = job.xs();
    let mut files = Vec::new();
    for np in &cfg.priors {
        let mut rows = Vec::with_capacity(job.times.len() * xs.len());
        for &t in &job.times {
            for &x in &xs {
                let a = drift(&np.prior, t, x, m)?;
                let g = drive_with_drift(&cfg.reward, a, t, x, m);
                rows.push(row([num(t), num(x), num(a), num(g)]));
            }
        }
        let name = format!("drive_{}.csv", np.label);
        set.csv(&name, "t,x,A,G", rows)?;
        files.push(json!({"label": np.label, "kind": np.prior.kind(), "file": name}));
    }
    Ok(json!({ "priors": files }))
}

fn sweep(cfg: &RunConfig, job: &SweepJob, set: &mut ArtifactSet) -> Result<Value, RunError> {
    let configs = job
        .values
        .iter()
        .map(|&v| cfg.with_parameter(job.parameter, v))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<SolveJob> = configs
        .iter()
        .map(|c| SolveJob { reward: c.reward, prior: *c.prior(), market: c.market, grid: c.grid })
        .collect();
    let solutions = solve_many(&jobs, Execution::default()).into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for (k, ((sol, c), &v)) in solutions.iter().zip(&configs).zip(&job.values).enumerate() {
        write_boundaries(sol, set, &format!("boundaries_{k}.csv"))?;
        let regions = extract_regions(sol);
        let x0 = c.market.x0;
        rows.push(row([
            k.to_string(),
            num(v),
            num(sol.value_at(0, x0)),
            num(sol.premium_at(0, x0)),
            regions.max_continuation_intervals.to_string(),
        ]));
    }
    set.csv("sweep.csv", "index,value,V0,L0,max_continuation_intervals", rows)?;
    Ok(json!({ "parameter": job.parameter.name(), "values": job.values }))
}

fn verify(seed: u64, set: &mut ArtifactSet) -> Result<(Value, Vec<String>), RunError> {
    let checks: Vec<Check> = run_checks(seed);
    set.csv(
        "verify.csv",
        "check,worst,tolerance,pass",
        checks.iter().map(|c| row([c.name.to_string(), num(c.worst), num(c.tolerance), (c.passed as u8).to_string()])),
    )?;
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.name.to_string()).collect();
    let passed = checks.len() - failed.len();
    Ok((json!({ "checks": checks.len(), "passed": passed, "failed": failed }), failed))
}

