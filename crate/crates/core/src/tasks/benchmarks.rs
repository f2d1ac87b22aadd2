use std::f64::consts::PI;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical constants, versioned alongside the code.
const DATA: &str = include_str!("../../data/benchmarks.json");

#[derive(Debug, Deserialize)]
struct Constants {
    version: u32,
    branin: BraninConstants,
    hartmann3: HartmannConstants,
    hartmann6: HartmannConstants,
    levy: LevyConstants,
}

#[derive(Debug, Deserialize)]
struct BraninConstants {
    lower: [f64; 2],
    upper: [f64; 2],
    a: f64,
    b: f64,
    c: f64,
    r: f64,
    s: f64,
    t: f64,
    minimum: f64,
}

#[derive(Debug, Deserialize)]
struct HartmannConstants {
    alpha: Vec<f64>,
    a: Vec<Vec<f64>>,
    p: Vec<Vec<f64>>,
    minimum: f64,
}

#[derive(Debug, Deserialize)]
struct LevyConstants {
    lower: f64,
    upper: f64,
    minimum: f64,
}

fn constants() -> &'static Constants {
    static CELL: OnceLock<Constants> = OnceLock::new();
    CELL.get_or_init(|| serde_json::from_str(DATA).expect("bundled benchmark constants parse"))
}

/// Version of the bundled constants file.
pub fn constants_version() -> u32 {
    constants().version
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkKind {
    Branin,
    Hartmann3,
    Hartmann6,
    Levy,
}

impl FromStr for BenchmarkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "branin" => Ok(Self::Branin),
            "hartmann3" => Ok(Self::Hartmann3),
            "hartmann6" => Ok(Self::Hartmann6),
            "levy" => Ok(Self::Levy),
            other => Err(Error::config(format!("unknown benchmark '{other}'"))),
        }
    }
}

/// A standard test function on the unit cube, sign-flipped for maximization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Benchmark {
    pub kind: BenchmarkKind,
    pub dim: usize,
}

impl Benchmark {
    /// Fixed-dimension benchmarks ignore `dim`; Levy uses it (at least 1).
    pub fn new(kind: BenchmarkKind, dim: usize) -> Result<Self> {
        let dim = match kind {
            BenchmarkKind::Branin => 2,
            BenchmarkKind::Hartmann3 => 3,
            BenchmarkKind::Hartmann6 => 6,
            BenchmarkKind::Levy if dim >= 1 => dim,
            BenchmarkKind::Levy => return Err(Error::config("levy needs dim >= 1")),
        };
        Ok(Self { kind, dim })
    }

    /// Maps a unit-cube point to native coordinates.
    pub fn to_native(&self, x: &[f64]) -> Vec<f64> {
        let c = constants();
        match self.kind {
            BenchmarkKind::Branin => {
                (0..2).map(|j| c.branin.lower[j] + x[j] * (c.branin.upper[j] - c.branin.lower[j])).collect()
            }
            BenchmarkKind::Hartmann3 | BenchmarkKind::Hartmann6 => x.to_vec(),
            BenchmarkKind::Levy => x.iter().map(|v| c.levy.lower + v * (c.levy.upper - c.levy.lower)).collect(),
        }
    }

    /// Canonical (minimization) value at a native point.
    pub fn native_value(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim {
            return Err(Error::input(format!("{:?} takes {} coordinates, got {}", self.kind, self.dim, z.len())));
        }
        let c = constants();
        Ok(match self.kind {
            BenchmarkKind::Branin => {
                let b = &c.branin;
                let (x1, x2) = (z[0], z[1]);
                b.a * (x2 - b.b * x1 * x1 + b.c * x1 - b.r).powi(2) + b.s * (1.0 - b.t) * x1.cos() + b.s
            }
            BenchmarkKind::Hartmann3 => hartmann(&c.hartmann3, z),
            BenchmarkKind::Hartmann6 => hartmann(&c.hartmann6, z),
            BenchmarkKind::Levy => {
                let w: Vec<f64> = z.iter().map(|v| 1.0 + (v - 1.0) / 4.0).collect();
                let n = w.len();
                let mut total = (PI * w[0]).sin().powi(2);
                for wi in &w[..n - 1] {
                    total += (wi - 1.0).powi(2) * (1.0 + 10.0 * (PI * wi + 1.0).sin().powi(2));
                }
                total + (w[n - 1] - 1.0).powi(2) * (1.0 + (2.0 * PI * w[n - 1]).sin().powi(2))
            }
        })
    }

    /// Negated canonical value at a unit-cube point.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::input(format!("{:?} takes {} coordinates, got {}", self.kind, self.dim, x.len())));
        }
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::input("point lies outside the unit cube"));
        }
        Ok(-self.native_value(&self.to_native(x))?)
    }

    /// Published optimum of the maximization form.
    pub fn optimum(&self) -> f64 {
        let c = constants();
        -match self.kind {
            BenchmarkKind::Branin => c.branin.minimum,
            BenchmarkKind::Hartmann3 => c.hartmann3.minimum,
            BenchmarkKind::Hartmann6 => c.hartmann6.minimum,
            BenchmarkKind::Levy => c.levy.minimum,
        }
    }
}

fn hartmann(h: &HartmannConstants, z: &[f64]) -> f64 {
    -h.alpha
        .iter()
        .zip(h.a.iter().zip(&h.p))
        .map(|(al, (a, p))| {
            let inner: f64 = z.iter().zip(a.iter().zip(p)).map(|(x, (aj, pj))| aj * (x - pj).powi(2)).sum();
            al * (-inner).exp()
        })
        .sum::<f64>()
}

/// Evaluates a named benchmark (maximization form) at a unit-cube point.
pub fn benchmark(name: &str, x: &[f64]) -> Result<f64> {
    Benchmark::new(name.parse()?, x.len())?.evaluate(x)
}
