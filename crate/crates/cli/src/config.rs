//! Run configuration: a TOML document with `[market]`, `[prior]` (or
//! `[[priors]]`), `[reward]`, `[grid]`, `[sim]` and `[job]` sections.
//!
//! Parsing is two-stage. The text is first read into loosely typed raw
//! sections, so syntax errors, unknown keys and type mismatches come back as
//! [`ConfigError::Parse`] with a line and column. The raw sections are then
//! checked against the model invariants and defaults are filled in; failures
//! there are [`ConfigError::Validation`].

use rbb_core::solver::{default_bounds, DEFAULT_EPS, DEFAULT_MAX_ITERS, DEFAULT_OMEGA};
use rbb_core::{GridSpec, MarketParams, Prior, RewardSpec, SimConfig};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

pub const DEFAULT_GRID_SIZE: usize = 200;
pub const DEFAULT_N_PATHS: usize = 1_000;
pub const DEFAULT_N_STEPS: usize = 1_000;
pub const DEFAULT_HISTOGRAM_BINS: usize = 50;
pub const DEFAULT_DRIVE_POINTS: usize = 201;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid config: {0}")]
    Validation(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Validation(msg.into()))
}

// ---------------------------------------------------------------------------
// Raw document

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    market: Option<RawMarket>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prior: Option<RawPrior>,
    #[serde(skip_serializing_if = "Option::is_none")]
    priors: Option<Vec<RawPrior>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reward: Option<RawReward>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<RawGrid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sim: Option<RawSim>,
    #[serde(skip_serializing_if = "Option::is_none")]
    job: Option<RawJob>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMarket {
    x0: Option<f64>,
    sigma: Option<f64>,
    #[serde(rename = "T")]
    pin_time: Option<f64>,
    #[serde(rename = "T_bar")]
    deadline: Option<f64>,
    r: Option<f64>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrior {
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_u: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_u: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mu: Option<f64>,
    #[serde(rename = "sigma_D", skip_serializing_if = "Option::is_none")]
    sigma_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_2: Option<f64>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReward {
    kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    strike: Option<f64>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    #[serde(skip_serializing_if = "Option::is_none")]
    x_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    x_max: Option<f64>,
    #[serde(rename = "M", skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_iters: Option<usize>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    #[serde(skip_serializing_if = "Option::is_none")]
    n_paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    horizon: Option<f64>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJob {
    kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output_dir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    histogram_bins: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    times: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    x_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    x_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    parameter: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// Validated configuration

#[derive(Debug, Clone, PartialEq)]
pub struct NamedPrior {
    pub label: String,
    pub prior: Prior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriveJob {
    pub times: Vec<f64>,
    pub x_min: f64,
    pub x_max: f64,
    pub points: usize,
}

impl DriveJob {
    pub fn xs(&self) -> Vec<f64> {
        let h = (self.x_max - self.x_min) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.x_min + h * i as f64).collect()
    }
}

/// A scalar input that a sweep job varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    X0,
    Sigma,
    PinTime,
    Deadline,
    Rate,
    Delta,
    DeltaU,
    DeltaD,
    PU,
    Mu,
    SigmaD,
    Theta,
    P1,
    /// Both rates of a double-exponential prior at once.
    Lambda,
    Lambda1,
    Lambda2,
}

impl SweepParameter {
    const ALL: [SweepParameter; 16] = [
        SweepParameter::X0,
        SweepParameter::Sigma,
        SweepParameter::PinTime,
        SweepParameter::Deadline,
        SweepParameter::Rate,
        SweepParameter::Delta,
        SweepParameter::DeltaU,
        SweepParameter::DeltaD,
        SweepParameter::PU,
        SweepParameter::Mu,
        SweepParameter::SigmaD,
        SweepParameter::Theta,
        SweepParameter::P1,
        SweepParameter::Lambda,
        SweepParameter::Lambda1,
        SweepParameter::Lambda2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::X0 => "x0",
            SweepParameter::Sigma => "sigma",
            SweepParameter::PinTime => "T",
            SweepParameter::Deadline => "T_bar",
            SweepParameter::Rate => "r",
            SweepParameter::Delta => "delta",
            SweepParameter::DeltaU => "delta_u",
            SweepParameter::DeltaD => "delta_d",
            SweepParameter::PU => "p_u",
            SweepParameter::Mu => "mu",
            SweepParameter::SigmaD => "sigma_D",
            SweepParameter::Theta => "theta",
            SweepParameter::P1 => "p_1",
            SweepParameter::Lambda => "lambda",
            SweepParameter::Lambda1 => "lambda_1",
            SweepParameter::Lambda2 => "lambda_2",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepJob {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Job {
    Simulate { histogram_bins: usize },
    Solve,
    Drive(DriveJob),
    Sweep(SweepJob),
    Verify,
}

impl Job {
    pub fn kind(&self) -> &'static str {
        match self {
            Job::Simulate { .. } => "simulate",
            Job::Solve => "solve",
            Job::Drive(_) => "drive",
            Job::Sweep(_) => "sweep",
            Job::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub market: MarketParams,
    /// One prior, or several labelled ones for a drive job.
    pub priors: Vec<NamedPrior>,
    pub reward: RewardSpec,
    pub grid: GridSpec,
    pub sim: SimConfig,
    pub output_dir: Option<PathBuf>,
    pub job: Job,
}

impl RunConfig {
    pub fn prior(&self) -> &Prior {
        &self.priors[0].prior
    }

    /// Copy of this config with one sweep parameter set to `value`.
    pub fn with_parameter(&self, parameter: SweepParameter, value: f64) -> Result<RunConfig, ConfigError> {
        let mut cfg = self.clone();
        let m = &mut cfg.market;
        let prior = &mut cfg.priors[0].prior;
        let mismatch = || invalid(format!("sweep parameter {} does not apply to a {} prior", parameter.name(), self.prior().kind()));
        match (parameter, prior) {
            (SweepParameter::X0, _) => m.x0 = value,
            (SweepParameter::Sigma, _) => m.sigma = value,
            (SweepParameter::PinTime, _) => m.pin_time = value,
            (SweepParameter::Deadline, _) => m.deadline = value,
            (SweepParameter::Rate, _) => m.rate = value,
            (SweepParameter::Delta, Prior::Constant { delta }) => *delta = value,
            (SweepParameter::Delta, Prior::TwoPoint { delta_u, delta_d, .. }) => {
                *delta_u = value;
                *delta_d = -value;
            }
            (SweepParameter::DeltaU, Prior::TwoPoint { delta_u, .. }) => *delta_u = value,
            (SweepParameter::DeltaD, Prior::TwoPoint { delta_d, .. }) => *delta_d = value,
            (SweepParameter::PU, Prior::TwoPoint { p_u, .. }) => *p_u = value,
            (SweepParameter::Mu, Prior::Normal { mu, .. }) => *mu = value,
            (SweepParameter::SigmaD, Prior::Normal { sigma_d, .. }) => *sigma_d = value,
            (SweepParameter::Theta, Prior::DoubleExponential { theta, .. }) => *theta = value,
            (SweepParameter::P1, Prior::DoubleExponential { p_1, .. }) => *p_1 = value,
            (SweepParameter::Lambda, Prior::DoubleExponential { lambda_1, lambda_2, .. }) => {
                *lambda_1 = value;
                *lambda_2 = value;
            }
            (SweepParameter::Lambda1, Prior::DoubleExponential { lambda_1, .. }) => *lambda_1 = value,
            (SweepParameter::Lambda2, Prior::DoubleExponential { lambda_2, .. }) => *lambda_2 = value,
            _ => return mismatch(),
        }
        cfg.job = Job::Solve;
        check_market(&cfg.market)?;
        cfg.priors[0].prior.validate().map_err(|e| ConfigError::Validation(e.to_string()))?;
        cfg.grid.validate(&cfg.market).map_err(|e| ConfigError::Validation(e.to_string()))?;
        Ok(cfg)
    }
}

/// Parsed config plus a note for every value that was filled in by default.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub config: RunConfig,
    pub defaults: Vec<String>,
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_with_defaults(text).map(|p| p.config)
}

pub fn parse_config_with_defaults(text: &str) -> Result<Parsed, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
        ConfigError::Parse { line, column, message: e.message().trim().to_string() }
    })?;
    let mut defaults = Vec::new();
    let config = resolve(raw, &mut defaults)?;
    Ok(Parsed { config, defaults })
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Renders a config as a TOML document that parses back to an equal config.
/// Every default is written out explicitly.
pub fn render(cfg: &RunConfig) -> String {
    let m = &cfg.market;
    let market = RawMarket {
        x0: Some(m.x0),
        sigma: Some(m.sigma),
        pin_time: Some(m.pin_time),
        deadline: Some(m.deadline),
        r: Some(m.rate),
    };
    let raw_priors: Vec<RawPrior> = cfg.priors.iter().map(raw_prior).collect();
    let (prior, priors) = match raw_priors.len() {
        1 => (raw_priors.into_iter().next(), None),
        _ => (None, Some(raw_priors)),
    };
    let reward = match cfg.reward {
        RewardSpec::Stock => RawReward { kind: Some("stock".into()), strike: None },
        RewardSpec::Call { strike } => RawReward { kind: Some("call".into()), strike: Some(strike) },
        RewardSpec::Put { strike } => RawReward { kind: Some("put".into()), strike: Some(strike) },
        RewardSpec::CallMinusPut { strike } => RawReward { kind: Some("call_minus_put".into()), strike: Some(strike) },
    };
    let g = &cfg.grid;
    let grid = RawGrid {
        x_min: Some(g.x_min),
        x_max: Some(g.x_max),
        m: Some(g.m),
        n: Some(g.n),
        omega: Some(g.omega),
        eps: Some(g.eps),
        max_iters: Some(g.max_iters),
    };
    let s = &cfg.sim;
    let sim = RawSim { n_paths: Some(s.n_paths), n_steps: Some(s.n_steps), seed: Some(s.seed), horizon: s.horizon };
    let mut job = RawJob {
        kind: Some(cfg.job.kind().into()),
        output_dir: cfg.output_dir.as_ref().map(|p| p.to_string_lossy().into_owned()),
        ..RawJob::default()
    };
    match &cfg.job {
        Job::Simulate { histogram_bins } => job.histogram_bins = Some(*histogram_bins),
        Job::Drive(d) => {
            job.times = Some(d.times.clone());
            job.x_min = Some(d.x_min);
            job.x_max = Some(d.x_max);
            job.points = Some(d.points);
        }
        Job::Sweep(s) => {
            job.parameter = Some(s.parameter.name().into());
            job.values = Some(s.values.clone());
        }
        Job::Solve | Job::Verify => {}
    }
    let raw = RawConfig {
        market: Some(market),
        prior,
        priors,
        reward: Some(reward),
        grid: Some(grid),
        sim: Some(sim),
        job: Some(job),
    };
    toml::to_string(&raw).expect("config sections always serialize")
}

/// The resolved config as JSON, for manifests.
pub fn to_json(cfg: &RunConfig) -> serde_json::Value {
    let raw: RawConfig = toml::from_str(&render(cfg)).expect("rendered config parses");
    serde_json::to_value(raw).expect("config sections always serialize")
}

fn raw_prior(p: &NamedPrior) -> RawPrior {
    let mut raw = RawPrior {
        label: (p.label != p.prior.kind()).then(|| p.label.clone()),
        kind: Some(p.prior.kind().into()),
        ..RawPrior::default()
    };
    match p.prior {
        Prior::Constant { delta } => raw.delta = Some(delta),
        Prior::TwoPoint { delta_u, delta_d, p_u } => {
            raw.delta_u = Some(delta_u);
            raw.delta_d = Some(delta_d);
            raw.p_u = Some(p_u);
        }
        Prior::Normal { mu, sigma_d } => {
            raw.mu = Some(mu);
            raw.sigma_d = Some(sigma_d);
        }
        Prior::DoubleExponential { theta, p_1, lambda_1, lambda_2 } => {
            raw.theta = Some(theta);
            raw.p_1 = Some(p_1);
            raw.lambda_1 = Some(lambda_1);
            raw.lambda_2 = Some(lambda_2);
        }
    }
    raw
}

// ---------------------------------------------------------------------------
// Validation

fn resolve(raw: RawConfig, defaults: &mut Vec<String>) -> Result<RunConfig, ConfigError> {
    let market = resolve_market(raw.market)?;
    let job_raw = match raw.job {
        Some(j) => j,
        None => return invalid("missing [job] section"),
    };
    let priors = match (raw.prior, raw.priors) {
        (Some(_), Some(_)) => return invalid("use either [prior] or [[priors]], not both"),
        (Some(p), None) => vec![resolve_prior(p, "prior")?],
        (None, Some(ps)) if ps.is_empty() => return invalid("[[priors]] lists no priors"),
        (None, Some(ps)) => ps
            .into_iter()
            .enumerate()
            .map(|(k, p)| resolve_prior(p, &format!("priors[{k}]")))
            .collect::<Result<Vec<_>, _>>()?,
        (None, None) => return invalid("missing [prior] section"),
    };
    for (k, p) in priors.iter().enumerate() {
        if priors[..k].iter().any(|q| q.label == p.label) {
            return invalid(format!("duplicate prior label {:?}", p.label));
        }
    }
    let reward = resolve_reward(raw.reward, defaults)?;
    let grid = resolve_grid(raw.grid, &priors[0].prior, &market, defaults)?;
    let sim = resolve_sim(raw.sim, &market, defaults)?;
    let output_dir = job_raw.output_dir.clone().map(PathBuf::from);
    let job = resolve_job(job_raw, &market, defaults)?;
    if priors.len() > 1 && !matches!(job, Job::Drive(_)) {
        return invalid(format!("a {} job takes a single [prior]; [[priors]] lists {}", job.kind(), priors.len()));
    }
    let cfg = RunConfig { market, priors, reward, grid, sim, output_dir, job };
    if let Job::Sweep(s) = &cfg.job {
        for &v in &s.values {
            cfg.with_parameter(s.parameter, v)
                .map_err(|e| ConfigError::Validation(format!("sweep value {} = {v}: {e}", s.parameter.name())))?;
        }
    }
    Ok(cfg)
}

fn require<T>(v: Option<T>, key: &str) -> Result<T, ConfigError> {
    v.ok_or_else(|| ConfigError::Validation(format!("{key} is required")))
}

fn check_market(m: &MarketParams) -> Result<(), ConfigError> {
    if !(m.deadline < m.pin_time) {
        return invalid(format!("T_bar must be < T (got T_bar = {}, T = {})", m.deadline, m.pin_time));
    }
    m.validate().map_err(|e| ConfigError::Validation(e.to_string()))
}

fn resolve_market(raw: Option<RawMarket>) -> Result<MarketParams, ConfigError> {
    let Some(raw) = raw else { return invalid("missing [market] section") };
    let m = MarketParams {
        x0: require(raw.x0, "market.x0")?,
        sigma: require(raw.sigma, "market.sigma")?,
        pin_time: require(raw.pin_time, "market.T")?,
        deadline: require(raw.deadline, "market.T_bar")?,
        rate: require(raw.r, "market.r")?,
    };
    check_market(&m)?;
    Ok(m)
}

fn resolve_prior(raw: RawPrior, section: &str) -> Result<NamedPrior, ConfigError> {
    let kind = match raw.kind.as_deref() {
        Some(k) => k,
        None if raw.label.is_none() && raw_prior_is_blank(&raw) => {
            return invalid(format!("[{section}] is empty; set kind to constant, two_point, normal or double_exponential"))
        }
        None => return invalid(format!("{section}.kind is required")),
    };
    let fields: [(&str, Option<f64>); 10] = [
        ("delta", raw.delta),
        ("delta_u", raw.delta_u),
        ("delta_d", raw.delta_d),
        ("p_u", raw.p_u),
        ("mu", raw.mu),
        ("sigma_D", raw.sigma_d),
        ("theta", raw.theta),
        ("p_1", raw.p_1),
        ("lambda_1", raw.lambda_1),
        ("lambda_2", raw.lambda_2),
    ];
    let wanted: &[&str] = match kind {
        "constant" => &["delta"],
        "two_point" => &["delta_u", "delta_d", "p_u"],
        "normal" => &["mu", "sigma_D"],
        "double_exponential" => &["theta", "p_1", "lambda_1", "lambda_2"],
        other => {
            return invalid(format!(
                "{section}.kind = {other:?} is not one of constant, two_point, normal, double_exponential"
            ))
        }
    };
    for (name, value) in fields {
        if value.is_some() && !wanted.contains(&name) {
            return invalid(format!("{section}.{name} does not apply to a {kind} prior"));
        }
    }
    let get = |name: &str| {
        let v = fields.iter().find(|(n, _)| *n == name).and_then(|(_, v)| *v);
        require(v, &format!("{section}.{name}"))
    };
    let prior = match kind {
        "constant" => Prior::Constant { delta: get("delta")? },
        "two_point" => Prior::TwoPoint { delta_u: get("delta_u")?, delta_d: get("delta_d")?, p_u: get("p_u")? },
        "normal" => Prior::Normal { mu: get("mu")?, sigma_d: get("sigma_D")? },
        _ => Prior::DoubleExponential {
            theta: get("theta")?,
            p_1: get("p_1")?,
            lambda_1: get("lambda_1")?,
            lambda_2: get("lambda_2")?,
        },
    };
    prior.validate().map_err(|e| ConfigError::Validation(format!("[{section}]: {e}")))?;
    let label = raw.label.unwrap_or_else(|| prior.kind().to_string());
    if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return invalid(format!("{section}.label {label:?} must be non-empty and use only letters, digits, '_' or '-'"));
    }
    Ok(NamedPrior { label, prior })
}

fn raw_prior_is_blank(raw: &RawPrior) -> bool {
    [raw.delta, raw.delta_u, raw.delta_d, raw.p_u, raw.mu, raw.sigma_d, raw.theta, raw.p_1, raw.lambda_1, raw.lambda_2]
        .iter()
        .all(Option::is_none)
}

fn resolve_reward(raw: Option<RawReward>, defaults: &mut Vec<String>) -> Result<RewardSpec, ConfigError> {
    let Some(raw) = raw else {
        defaults.push("reward.kind = \"stock\"".into());
        return Ok(RewardSpec::Stock);
    };
    let kind = require(raw.kind, "reward.kind")?;
    let strike = |s: Option<f64>| require(s, "reward.strike");
    let spec = match kind.as_str() {
        "stock" if raw.strike.is_some() => return invalid("reward.strike does not apply to the stock"),
        "stock" => RewardSpec::Stock,
        "call" => RewardSpec::Call { strike: strike(raw.strike)? },
        "put" => RewardSpec::Put { strike: strike(raw.strike)? },
        "call_minus_put" => RewardSpec::CallMinusPut { strike: strike(raw.strike)? },
        other => return invalid(format!("reward.kind = {other:?} is not one of stock, call, put, call_minus_put")),
    };
    spec.validate().map_err(|e| ConfigError::Validation(e.to_string()))?;
    Ok(spec)
}

fn resolve_grid(
    raw: Option<RawGrid>,
    prior: &Prior,
    market: &MarketParams,
    defaults: &mut Vec<String>,
) -> Result<GridSpec, ConfigError> {
    let raw = raw.unwrap_or_default();
    let mut fill = |key: &str, v: String| defaults.push(format!("grid.{key} = {v}"));
    let (x_min, x_max) = match (raw.x_min, raw.x_max) {
        (Some(lo), Some(hi)) => (lo, hi),
        (None, None) => {
            let (lo, hi) = default_bounds(prior, market);
            fill("x_min", lo.to_string());
            fill("x_max", hi.to_string());
            (lo, hi)
        }
        _ => return invalid("grid.x_min and grid.x_max must be given together"),
    };
    let mut or = |v: Option<usize>, key: &str, d: usize| {
        v.unwrap_or_else(|| {
            fill(key, d.to_string());
            d
        })
    };
    let m = or(raw.m, "M", DEFAULT_GRID_SIZE);
    let n = or(raw.n, "N", DEFAULT_GRID_SIZE);
    let max_iters = or(raw.max_iters, "max_iters", DEFAULT_MAX_ITERS);
    let omega = raw.omega.unwrap_or_else(|| {
        fill("omega", DEFAULT_OMEGA.to_string());
        DEFAULT_OMEGA
    });
    let eps = raw.eps.unwrap_or_else(|| {
        fill("eps", DEFAULT_EPS.to_string());
        DEFAULT_EPS
    });
    let grid = GridSpec { x_min, x_max, m, n, omega, eps, max_iters };
    grid.validate(market).map_err(|e| ConfigError::Validation(e.to_string()))?;
    if max_iters == 0 {
        return invalid("grid.max_iters must be at least 1");
    }
    Ok(grid)
}

fn resolve_sim(raw: Option<RawSim>, market: &MarketParams, defaults: &mut Vec<String>) -> Result<SimConfig, ConfigError> {
    let raw = raw.unwrap_or_default();
    let mut fill = |key: &str, v: String| defaults.push(format!("sim.{key} = {v}"));
    let n_paths = raw.n_paths.unwrap_or_else(|| {
        fill("n_paths", DEFAULT_N_PATHS.to_string());
        DEFAULT_N_PATHS
    });
    let n_steps = raw.n_steps.unwrap_or_else(|| {
        fill("n_steps", DEFAULT_N_STEPS.to_string());
        DEFAULT_N_STEPS
    });
    let seed = raw.seed.unwrap_or_else(|| {
        fill("seed", "0".into());
        0
    });
    let sim = SimConfig { n_paths, n_steps, seed, horizon: raw.horizon };
    sim.validate(market).map_err(|e| ConfigError::Validation(e.to_string()))?;
    Ok(sim)
}

fn resolve_job(raw: RawJob, market: &MarketParams, defaults: &mut Vec<String>) -> Result<Job, ConfigError> {
    let kind = require(raw.kind.clone(), "job.kind")?;
    let used: [(&str, bool); 7] = [
        ("histogram_bins", raw.histogram_bins.is_some()),
        ("times", raw.times.is_some()),
        ("x_min", raw.x_min.is_some()),
        ("x_max", raw.x_max.is_some()),
        ("points", raw.points.is_some()),
        ("parameter", raw.parameter.is_some()),
        ("values", raw.values.is_some()),
    ];
    let allowed: &[&str] = match kind.as_str() {
        "simulate" => &["histogram_bins"],
        "drive" => &["times", "x_min", "x_max", "points"],
        "sweep" => &["parameter", "values"],
        "solve" | "verify" => &[],
        other => return invalid(format!("job.kind = {other:?} is not one of simulate, solve, drive, sweep, verify")),
    };
    if let Some((key, _)) = used.iter().find(|(k, set)| *set && !allowed.contains(k)) {
        return invalid(format!("job.{key} does not apply to a {kind} job"));
    }
    match kind.as_str() {
        "simulate" => {
            let histogram_bins = raw.histogram_bins.unwrap_or_else(|| {
                defaults.push(format!("job.histogram_bins = {DEFAULT_HISTOGRAM_BINS}"));
                DEFAULT_HISTOGRAM_BINS
            });
            if histogram_bins == 0 {
                return invalid("job.histogram_bins must be at least 1");
            }
            Ok(Job::Simulate { histogram_bins })
        }
        "solve" => Ok(Job::Solve),
        "verify" => Ok(Job::Verify),
        "drive" => {
            let times = require(raw.times, "job.times")?;
            if times.is_empty() {
                return invalid("job.times lists no times");
            }
            if let Some(t) = times.iter().find(|&&t| !(t >= 0.0 && t < market.pin_time)) {
                return invalid(format!("job.times entry {t} must lie in [0, T) with T = {}", market.pin_time));
            }
            let half = 4.0 * market.sigma * market.pin_time.sqrt();
            let (x_min, x_max) = match (raw.x_min, raw.x_max) {
                (Some(lo), Some(hi)) => (lo, hi),
                (None, None) => {
                    defaults.push(format!("job.x_min = {}", market.x0 - half));
                    defaults.push(format!("job.x_max = {}", market.x0 + half));
                    (market.x0 - half, market.x0 + half)
                }
                _ => return invalid("job.x_min and job.x_max must be given together"),
            };
            if !(x_min < x_max && x_min.is_finite() && x_max.is_finite()) {
                return invalid(format!("job.x_min ({x_min}) must be below job.x_max ({x_max})"));
            }
            let points = raw.points.unwrap_or_else(|| {
                defaults.push(format!("job.points = {DEFAULT_DRIVE_POINTS}"));
                DEFAULT_DRIVE_POINTS
            });
            if points < 2 {
                return invalid("job.points must be at least 2");
            }
            Ok(Job::Drive(DriveJob { times, x_min, x_max, points }))
        }
        _ => {
            let name = require(raw.parameter, "job.parameter")?;
            let Some(parameter) = SweepParameter::parse(&name) else {
                let names: Vec<_> = SweepParameter::ALL.iter().map(|p| p.name()).collect();
                return invalid(format!("job.parameter = {name:?} is not one of {}", names.join(", ")));
            };
            let values = require(raw.values, "job.values")?;
            if values.is_empty() {
                return invalid("job.values lists no values");
            }
            Ok(Job::Sweep(SweepJob { parameter, values }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[market]
x0 = 1.0
sigma = 0.4
T = 1.1
T_bar = 1.0
r = 0.1

[prior]
kind = "normal"
mu = 0.0
sigma_D = 0.2

[job]
kind = "solve"
"#;

    #[test]
    fn defaults_are_filled_and_recorded() {
        let p = parse_config_with_defaults(BASE).unwrap();
        assert_eq!(p.config.grid.m, DEFAULT_GRID_SIZE);
        assert_eq!(p.config.reward, RewardSpec::Stock);
        assert!(p.defaults.iter().any(|d| d.starts_with("grid.omega")));
        assert!(p.defaults.iter().any(|d| d.starts_with("grid.x_min")));
    }

    #[test]
    fn render_round_trips() {
        let cfg = parse_config(BASE).unwrap();
        assert_eq!(parse_config(&render(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_reports_its_position() {
        let text = BASE.replace("mu = 0.0", "mu = 0.0\nvolatility = 2");
        match parse_config(&text) {
            Err(ConfigError::Parse { line, column, message }) => {
                assert_eq!(line, 12);
                assert_eq!(column, 1);
                assert!(message.contains("volatility"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_its_position() {
        let text = BASE.replace("sigma = 0.4", "sigma = = 0.4");
        assert!(matches!(parse_config(&text), Err(ConfigError::Parse { line: 4, .. })));
    }

    #[test]
    fn deadline_must_precede_the_pin() {
        let text = BASE.replace("T_bar = 1.0", "T_bar = 1.1");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("T_bar must be < T"), "{err}");
    }

    #[test]
    fn empty_prior_is_a_validation_error() {
        let text = BASE.replace("kind = \"normal\"\nmu = 0.0\nsigma_D = 0.2", "");
        assert!(matches!(parse_config(&text), Err(ConfigError::Validation(msg)) if msg.contains("[prior] is empty")));
    }

    #[test]
    fn misplaced_prior_field_is_rejected() {
        let text = BASE.replace("mu = 0.0", "mu = 0.0\np_u = 0.5");
        assert!(matches!(parse_config(&text), Err(ConfigError::Validation(msg)) if msg.contains("p_u")));
    }

    #[test]
    fn sweep_values_are_checked_up_front() {
        let text = BASE.replace("kind = \"solve\"", "kind = \"sweep\"\nparameter = \"sigma_D\"\nvalues = [0.1, -0.2]");
        assert!(matches!(parse_config(&text), Err(ConfigError::Validation(msg)) if msg.contains("-0.2")));
        let text = BASE.replace("kind = \"solve\"", "kind = \"sweep\"\nparameter = \"lambda\"\nvalues = [1.0]");
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn several_priors_need_a_drive_job() {
        let text = BASE.replace(
            "[prior]\nkind = \"normal\"\nmu = 0.0\nsigma_D = 0.2",
            "[[priors]]\nkind = \"normal\"\nmu = 0.0\nsigma_D = 0.2\n[[priors]]\nkind = \"constant\"\ndelta = 0.1",
        );
        assert!(parse_config(&text).is_err());
        let drive = text.replace("kind = \"solve\"", "kind = \"drive\"\ntimes = [0.1]");
        let cfg = parse_config(&drive).unwrap();
        assert_eq!(cfg.priors.len(), 2);
        assert_eq!(parse_config(&render(&cfg)).unwrap(), cfg);
    }
}
