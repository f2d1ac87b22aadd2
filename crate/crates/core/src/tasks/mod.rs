//! Objective functions: random Fourier feature draws from a Matérn-5/2 prior,
//! standard benchmarks, and the noisy observation channel.

mod benchmarks;
mod rff;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream;

pub use benchmarks::{benchmark, constants_version, Benchmark, BenchmarkKind};
pub use rff::{sample_matern_task, sample_rff_task, MaxSearch, RffOptions, Spectrum, SyntheticTask, TaskFile};

/// Basis functions per synthetic task unless configured otherwise.
pub const DEFAULT_N_BASIS: usize = 1 << 14;

/// Which task a run optimizes; the dimension comes from the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TaskSpec {
    Synthetic {
        #[serde(default = "default_n_basis")]
        n_basis: usize,
    },
    Branin {},
    Hartmann3 {},
    Hartmann6 {},
    Levy {},
}

fn default_n_basis() -> usize {
    DEFAULT_N_BASIS
}

impl TaskSpec {
    pub fn synthetic() -> Self {
        TaskSpec::Synthetic { n_basis: DEFAULT_N_BASIS }
    }

    /// Parses a CLI name (`synthetic`, `branin`, `hartmann3`, `hartmann6`, `levy`).
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "synthetic" | "rff" => Ok(Self::synthetic()),
            other => Ok(match other.parse::<BenchmarkKind>()? {
                BenchmarkKind::Branin => Self::Branin {},
                BenchmarkKind::Hartmann3 => Self::Hartmann3 {},
                BenchmarkKind::Hartmann6 => Self::Hartmann6 {},
                BenchmarkKind::Levy => Self::Levy {},
            }),
        }
    }

    /// Input dimension this task forces, if any.
    pub fn fixed_dim(&self) -> Option<usize> {
        match self {
            TaskSpec::Branin {} => Some(2),
            TaskSpec::Hartmann3 {} => Some(3),
            TaskSpec::Hartmann6 {} => Some(6),
            TaskSpec::Synthetic { .. } | TaskSpec::Levy {} => None,
        }
    }

    /// Instantiates the task; synthetic draws depend on `seed`.
    pub fn build(&self, d: usize, seed: u64) -> Result<Task> {
        if let Some(fixed) = self.fixed_dim() {
            if fixed != d {
                return Err(Error::config(format!("{self:?} is {fixed}-dimensional, config says {d}")));
            }
        }
        Ok(match self {
            TaskSpec::Synthetic { n_basis } => Task::Synthetic(sample_matern_task(d, *n_basis, seed)?),
            TaskSpec::Branin {} => Task::Benchmark(Benchmark::new(BenchmarkKind::Branin, d)?),
            TaskSpec::Hartmann3 {} => Task::Benchmark(Benchmark::new(BenchmarkKind::Hartmann3, d)?),
            TaskSpec::Hartmann6 {} => Task::Benchmark(Benchmark::new(BenchmarkKind::Hartmann6, d)?),
            TaskSpec::Levy {} => Task::Benchmark(Benchmark::new(BenchmarkKind::Levy, d)?),
        })
    }
}

/// A black-box objective on the unit cube, to be maximized.
#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Synthetic(SyntheticTask),
    Benchmark(Benchmark),
}

impl Task {
    pub fn dim(&self) -> usize {
        match self {
            Task::Synthetic(t) => t.dim(),
            Task::Benchmark(b) => b.dim,
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        match self {
            Task::Synthetic(t) => t.evaluate(x),
            Task::Benchmark(b) => b.evaluate(x),
        }
    }

    /// Maximum used for regret: published optima for benchmarks, the recorded
    /// estimate for synthetic draws.
    pub fn optimum(&self) -> f64 {
        match self {
            Task::Synthetic(t) => t.true_max(),
            Task::Benchmark(b) => b.optimum(),
        }
    }
}

/// Gaussian measurement noise with a counter-based stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationChannel {
    pub noise_variance: f64,
    pub seed: u64,
}

impl Default for ObservationChannel {
    fn default() -> Self {
        Self { noise_variance: 1e-3, seed: 0 }
    }
}

impl ObservationChannel {
    pub fn new(noise_variance: f64, seed: u64) -> Result<Self> {
        if !(noise_variance >= 0.0) || !noise_variance.is_finite() {
            return Err(Error::config("noise_variance must be finite and non-negative"));
        }
        Ok(Self { noise_variance, seed })
    }

    /// Noise for the `index`-th observation.
    pub fn noise(&self, index: u64) -> f64 {
        self.noise_variance.sqrt() * stream::normal(self.seed, index)
    }
}

/// `f(x) + eps` with `eps` the channel's `index`-th noise draw.
pub fn observe(task: &Task, x: &[f64], channel: &ObservationChannel, index: u64) -> Result<f64> {
    Ok(task.evaluate(x)? + channel.noise(index))
}

#[cfg(test)]
mod tests;
