//! Euler–Maruyama simulation of the filtered log-price.
//!
//! Paths are driven only by the drift `A(t, x)`; neither the terminal return
//! nor the bridge noise is ever sampled. Path `k` draws its Gaussian shocks
//! from the ChaCha8 stream `k` of the run seed, so a batch is reproducible
//! bit for bit regardless of how many threads produced it.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::priors::{drift, MarketParams, Prior, PriorError};
use crate::special::norm_inv;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("horizon {horizon} leaves the last drift evaluation at or after T - dt (T = {pin_time}, dt = {dt})")]
    HorizonTooLong { horizon: f64, pin_time: f64, dt: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Simulated time span; the trading deadline when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

impl SimConfig {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Self {
        SimConfig { n_paths, n_steps, seed, horizon: None }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = Some(horizon);
        self
    }

    pub fn resolved_horizon(&self, m: &MarketParams) -> f64 {
        self.horizon.unwrap_or(m.deadline)
    }

    pub fn dt(&self, m: &MarketParams) -> f64 {
        self.resolved_horizon(m) / self.n_steps as f64
    }

    pub fn validate(&self, m: &MarketParams) -> Result<(), SimError> {
        if self.n_paths < 1 {
            return Err(SimError::InvalidConfig("n_paths must be at least 1".into()));
        }
        if self.n_steps < 2 {
            return Err(SimError::InvalidConfig("n_steps must be at least 2".into()));
        }
        let horizon = self.resolved_horizon(m);
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(SimError::InvalidConfig(format!("horizon ({horizon}) must be positive")));
        }
        let dt = self.dt(m);
        if horizon > m.pin_time - dt {
            return Err(SimError::HorizonTooLong { horizon, pin_time: m.pin_time, dt });
        }
        Ok(())
    }
}

/// Independent Gaussian shocks for one path.
pub(crate) struct ShockStream {
    rng: ChaCha8Rng,
}

impl ShockStream {
    pub fn new(seed: u64, path: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path as u64);
        ShockStream { rng }
    }

    /// Standard normal via the inverse CDF of a uniform in (0, 1).
    pub fn next_normal(&mut self) -> f64 {
        let bits = self.rng.next_u64() >> 11;
        let u = (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
        norm_inv(u)
    }
}

/// One Euler–Maruyama step from `(t, x)`.
#[inline]
pub(crate) fn euler_step(prior: &Prior, m: &MarketParams, t: f64, x: f64, dt: f64, shock: f64) -> Result<f64, PriorError> {
    Ok(x + drift(prior, t, x, m)? * dt + m.sigma * dt.sqrt() * shock)
}

/// Simulated log-price paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    pub times: Vec<f64>,
    /// `paths[k][i]` is path `k` at `times[i]`.
    pub paths: Vec<Vec<f64>>,
    pub seed: u64,
}

impl PathBatch {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn terminal_values(&self) -> Vec<f64> {
        self.paths.iter().map(|p| *p.last().expect("paths are non-empty")).collect()
    }

    /// Cross-sectional values at time index `i`.
    pub fn slice(&self, i: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p[i]).collect()
    }
}

/// Simulates with the default execution strategy.
pub fn simulate_paths(prior: &Prior, m: &MarketParams, cfg: &SimConfig) -> Result<PathBatch, SimError> {
    simulate_paths_with(prior, m, cfg, Execution::default())
}

pub fn simulate_paths_with(
    prior: &Prior,
    m: &MarketParams,
    cfg: &SimConfig,
    exec: Execution,
) -> Result<PathBatch, SimError> {
    cfg.validate(m)?;
    let dt = cfg.dt(m);
    let times: Vec<f64> = (0..=cfg.n_steps).map(|i| i as f64 * dt).collect();
    let paths = exec.try_map_indexed(cfg.n_paths, |k| {
        let mut shocks = ShockStream::new(cfg.seed, k);
        let mut path = Vec::with_capacity(cfg.n_steps + 1);
        let mut x = m.x0;
        path.push(x);
        for &t in &times[..cfg.n_steps] {
            x = euler_step(prior, m, t, x, dt, shocks.next_normal())?;
            path.push(x);
        }
        Ok::<_, PriorError>(path)
    })?;
    Ok(PathBatch { times, paths, seed: cfg.seed })
}

/// Equal-width histogram of the terminal log-prices.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `counts.len() + 1` edges spanning `[min, max]` of the data.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

pub fn terminal_histogram(batch: &PathBatch, n_bins: usize) -> Histogram {
    histogram(&batch.terminal_values(), n_bins)
}

pub fn histogram(values: &[f64], n_bins: usize) -> Histogram {
    let n_bins = n_bins.max(1);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let edges = (0..=n_bins)
        .map(|i| if i == n_bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0; n_bins];
    for &v in values {
        let bin = if width > 0.0 { (((v - lo) / width) as usize).min(n_bins - 1) } else { 0 };
        counts[bin] += 1;
    }
    Histogram { edges, counts }
}

/// Sample mean and (unbiased) variance.
pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var)
}
