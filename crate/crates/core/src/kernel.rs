//! Kernels, the bandwidth rule and the weighted kernel sums shared by every estimator.
//!
//! Both the complete-data estimator and the restoration-estimation algorithm
//! reduce to the same pair of sums at a point `y`,
//!
//! ```text
//! S0 = 1/(n h) * sum_k w_k K_h(y - Y_k)
//! S1 = 1/(n h) * sum_k w_k Y_{k+1} K_h(y - Y_k)
//! ```
//!
//! with `K_h(u) = K(u / h)` and `k = 0..n-1`. Indicator weights `1{x_{k+1} = i}`
//! give the complete-data components; smoothed regime probabilities give the
//! contrast used for convergence diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulation::Trajectory;

pub const DEFAULT_GRID_POINTS: usize = 201;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    Gaussian,
    Epanechnikov,
}

impl KernelFamily {
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => {
                const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
                INV_SQRT_2PI * (-0.5 * u * u).exp()
            }
            KernelFamily::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn kernel_eval(family: KernelFamily, u: f64) -> f64 {
    family.eval(u)
}

/// `(log n / n)^(1/5)`: shrinks to zero while `n h` grows without bound.
pub fn default_bandwidth(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "bandwidth rule needs n >= 2, got {n}"
        )));
    }
    let n = n as f64;
    Ok((n.ln() / n).powf(0.2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub bandwidth: f64,
    pub grid: Vec<f64>,
}

impl KernelConfig {
    pub fn new(family: KernelFamily, bandwidth: f64, grid: Vec<f64>) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        if grid.is_empty() {
            return Err(Error::invalid("evaluation grid must be nonempty"));
        }
        if grid.iter().any(|g| !g.is_finite()) || grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "evaluation grid must be finite and strictly increasing",
            ));
        }
        Ok(KernelConfig {
            family,
            bandwidth,
            grid,
        })
    }

    /// Default grid of 201 equispaced points over `[min Y - h, max Y + h]`,
    /// with the rule-of-thumb bandwidth unless one is given.
    pub fn for_trajectory(
        traj: &Trajectory,
        family: KernelFamily,
        bandwidth: Option<f64>,
    ) -> Result<Self> {
        let h = match bandwidth {
            Some(h) => h,
            None => default_bandwidth(traj.n())?,
        };
        let lo = traj.y.iter().copied().fold(f64::INFINITY, f64::min) - h;
        let hi = traj.y.iter().copied().fold(f64::NEG_INFINITY, f64::max) + h;
        KernelConfig::new(family, h, linspace(lo, hi, DEFAULT_GRID_POINTS))
    }

    #[inline]
    pub fn kernel_h(&self, u: f64) -> f64 {
        self.family.eval(u / self.bandwidth)
    }
}

pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|i| {
                if i == points - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (points - 1) as f64
                }
            })
            .collect(),
    }
}

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Normalized kernel sums `(S0, S1)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KernelSums {
    pub s0: f64,
    pub s1: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Accumulator {
    s0: CompensatedSum,
    s1: CompensatedSum,
}

impl Accumulator {
    #[inline]
    fn push(&mut self, weighted_kernel: f64, y_next: f64) {
        self.s0.add(weighted_kernel);
        self.s1.add(weighted_kernel * y_next);
    }

    #[inline]
    fn finish(&self, norm: f64) -> KernelSums {
        KernelSums {
            s0: self.s0.value() / norm,
            s1: self.s1.value() / norm,
        }
    }
}

/// Weighted kernel sums at `y`; `weights[k]` pairs with `(Y_k, Y_{k+1})`.
pub fn weighted_sums(
    y: f64,
    traj: &Trajectory,
    weights: &[f64],
    config: &KernelConfig,
) -> Result<KernelSums> {
    let n = traj.n();
    if weights.len() != n {
        return Err(Error::invalid(format!(
            "weight vector has {} entries, expected n = {n}",
            weights.len()
        )));
    }
    let mut acc = Accumulator::default();
    for (k, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        acc.push(w * config.kernel_h(y - traj.y[k]), traj.y[k + 1]);
    }
    Ok(acc.finish(n as f64 * config.bandwidth))
}

/// Kernel values `K_h(y_g - Y_k)` for every grid point and step, computed once
/// per trajectory so repeated weightings only pay for the sums.
#[derive(Debug, Clone)]
pub struct KernelTable {
    n: usize,
    grid_len: usize,
    norm: f64,
    values: Vec<f64>,
    y_next: Vec<f64>,
}

impl KernelTable {
    pub fn new(traj: &Trajectory, config: &KernelConfig) -> Self {
        let n = traj.n();
        let mut values = Vec::with_capacity(config.grid.len() * n);
        for &g in &config.grid {
            values.extend(traj.y[..n].iter().map(|&yk| config.kernel_h(g - yk)));
        }
        KernelTable {
            n,
            grid_len: config.grid.len(),
            norm: n as f64 * config.bandwidth,
            values,
            y_next: traj.y[1..].to_vec(),
        }
    }

    #[inline]
    pub fn grid_len(&self) -> usize {
        self.grid_len
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Normalization `n h` applied to every sum.
    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm
    }

    #[inline]
    pub fn row(&self, g: usize) -> &[f64] {
        &self.values[g * self.n..(g + 1) * self.n]
    }

    #[inline]
    pub fn y_next(&self) -> &[f64] {
        &self.y_next
    }

    pub fn sums(&self, g: usize, weights: &[f64]) -> KernelSums {
        debug_assert_eq!(weights.len(), self.n);
        let mut acc = Accumulator::default();
        for ((&kv, &w), &yn) in self.row(g).iter().zip(weights).zip(&self.y_next) {
            if w == 0.0 {
                continue;
            }
            acc.push(w * kv, yn);
        }
        acc.finish(self.norm)
    }

    /// Sums for every regime at once under the indicator weights of `path`
    /// (`path[k]` is the regime of step `k + 1`). Bitwise equal to
    /// [`KernelTable::sums`] with 0/1 weights.
    pub fn indicator_sums(&self, g: usize, path: &[usize], m: usize) -> Vec<KernelSums> {
        debug_assert_eq!(path.len(), self.n);
        let mut acc = vec![Accumulator::default(); m];
        for ((&kv, &state), &yn) in self.row(g).iter().zip(path).zip(&self.y_next) {
            acc[state].push(kv, yn);
        }
        acc.iter().map(|a| a.finish(self.norm)).collect()
    }
}
