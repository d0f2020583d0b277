//! Initialization of the restoration-estimation algorithm: a stochastic
//! approximation EM fit of a linear Gaussian switching autoregression
//!
//! ```text
//! Y_k = rho_{X_k} Y_{k-1} + b_{X_k} + sigma_{X_k} e_k
//! ```
//!
//! whose final restored regime path seeds the nonparametric estimate.

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{backward_sample_with, forward_filter, RegimeModel};
use crate::kernel::KernelConfig;
use crate::model::{gaussian_logpdf, TransitionMatrix};
use crate::nw::{nw_estimate, ThetaField};
use crate::rng::{derive_seed, SimRng, Stream};
use crate::simulation::Trajectory;

pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMsArParams {
    pub slope: Vec<f64>,
    pub intercept: Vec<f64>,
    pub sigma: Vec<f64>,
    pub transition: TransitionMatrix,
    pub init: Vec<f64>,
}

impl LinearMsArParams {
    /// Regime `i` of the result is regime `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        LinearMsArParams {
            slope: perm.iter().map(|&p| self.slope[p]).collect(),
            intercept: perm.iter().map(|&p| self.intercept[p]).collect(),
            sigma: perm.iter().map(|&p| self.sigma[p]).collect(),
            transition: self.transition.permuted(perm),
            init: perm.iter().map(|&p| self.init[p]).collect(),
        }
    }
}

impl RegimeModel for LinearMsArParams {
    fn m(&self) -> usize {
        self.slope.len()
    }
    fn transition(&self) -> &TransitionMatrix {
        &self.transition
    }
    fn initial(&self) -> &[f64] {
        &self.init
    }
    fn emission_logdensity(&self, i: usize, y_prev: f64, y: f64) -> f64 {
        gaussian_logpdf(y, self.slope[i] * y_prev + self.intercept[i], self.sigma[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaemConfig {
    pub m: usize,
    pub iterations: usize,
    /// Iterations with unit step before the `1 / (t - warmup)` decay.
    pub warmup: usize,
    pub seed: u64,
    pub init: SaemInit,
    /// Independent runs; the one with the highest final log-likelihood wins.
    pub restarts: usize,
}

/// Rule for the initial regime assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaemInit {
    /// Contiguous runs of random regimes with geometric lengths of mean `n / (10 m)`.
    #[default]
    Blocks,
    /// k-means on the lag pairs `(Y_{k-1}, Y_k)`.
    KMeans,
}

impl SaemConfig {
    pub fn new(m: usize, seed: u64) -> Self {
        SaemConfig {
            m,
            iterations: 100,
            warmup: 20,
            seed,
            init: SaemInit::Blocks,
            restarts: 4,
        }
    }

    pub fn step_size(&self, t: usize) -> f64 {
        if t <= self.warmup {
            1.0
        } else {
            1.0 / (t - self.warmup) as f64
        }
    }
}

/// Complete-data sufficient statistics, per regime:
/// `[sum 1, sum Y_{k-1}, sum Y_k, sum Y_{k-1}^2, sum Y_{k-1} Y_k, sum Y_k^2]`,
/// plus transition counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub regime: Vec<[f64; 6]>,
    pub transitions: Vec<Vec<f64>>,
}

impl SufficientStats {
    pub fn zeros(m: usize) -> Self {
        SufficientStats {
            regime: vec![[0.0; 6]; m],
            transitions: vec![vec![0.0; m]; m],
        }
    }

    pub fn from_path(traj: &Trajectory, path: &[usize], m: usize) -> Self {
        let mut s = SufficientStats::zeros(m);
        for (k, &i) in path.iter().enumerate() {
            let (yp, y) = (traj.y[k], traj.y[k + 1]);
            let r = &mut s.regime[i];
            r[0] += 1.0;
            r[1] += yp;
            r[2] += y;
            r[3] += yp * yp;
            r[4] += yp * y;
            r[5] += y * y;
        }
        for w in path.windows(2) {
            s.transitions[w[0]][w[1]] += 1.0;
        }
        s
    }

    /// `self <- self + gamma (other - self)`.
    pub fn blend(&mut self, other: &SufficientStats, gamma: f64) {
        for (a, b) in self.regime.iter_mut().zip(&other.regime) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += gamma * (y - *x);
            }
        }
        for (a, b) in self.transitions.iter_mut().zip(&other.transitions) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += gamma * (y - *x);
            }
        }
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        SufficientStats {
            regime: perm.iter().map(|&p| self.regime[p]).collect(),
            transitions: perm
                .iter()
                .map(|&p| perm.iter().map(|&q| self.transitions[p][q]).collect())
                .collect(),
        }
    }
}

/// Residual sum of squares of `slope * Y_{k-1} + intercept` under the statistics.
fn weighted_rss(s: &[f64; 6], slope: f64, intercept: f64) -> f64 {
    let [n, sx, sy, sxx, sxy, syy] = *s;
    syy - 2.0 * slope * sxy - 2.0 * intercept * sy
        + slope * slope * sxx
        + 2.0 * slope * intercept * sx
        + intercept * intercept * n
}

/// Expected complete-data log-likelihood of the emission part.
pub fn complete_data_loglik(stats: &SufficientStats, params: &LinearMsArParams) -> f64 {
    stats
        .regime
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let var = params.sigma[i] * params.sigma[i];
            -s[0] * (params.sigma[i].ln() + 0.5 * (2.0 * std::f64::consts::PI).ln())
                - weighted_rss(s, params.slope[i], params.intercept[i]) / (2.0 * var)
        })
        .sum()
}

/// Closed-form maximizer: weighted least squares per regime, residual
/// variance, row-normalized transitions and occupancy-based initial law.
pub fn m_step(stats: &SufficientStats) -> Result<LinearMsArParams> {
    let m = stats.regime.len();
    let mut slope = Vec::with_capacity(m);
    let mut intercept = Vec::with_capacity(m);
    let mut sigma = Vec::with_capacity(m);
    for s in &stats.regime {
        let [n, sx, sy, sxx, sxy, _] = *s;
        let det = n * sxx - sx * sx;
        let (rho, b) = if n > 0.0 && det > 1e-12 * (n * sxx).max(1e-300) {
            let rho = (n * sxy - sx * sy) / det;
            (rho, (sy - rho * sx) / n)
        } else if n > 0.0 {
            (0.0, sy / n)
        } else {
            (0.0, 0.0)
        };
        let var = if n > 0.0 {
            weighted_rss(s, rho, b) / n
        } else {
            1.0
        };
        slope.push(rho);
        intercept.push(b);
        sigma.push(var.max(0.0).sqrt().max(SIGMA_FLOOR));
    }
    let rows = stats
        .transitions
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                let mut r: Vec<f64> = row.iter().map(|c| c / total).collect();
                let head: f64 = r[..m - 1].iter().sum();
                r[m - 1] = (1.0 - head).max(0.0);
                r
            } else {
                vec![1.0 / m as f64; m]
            }
        })
        .collect();
    let occupancy: f64 = stats.regime.iter().map(|s| s[0]).sum();
    let init = if occupancy > 0.0 {
        let mut p: Vec<f64> = stats.regime.iter().map(|s| s[0] / occupancy).collect();
        let head: f64 = p[..m - 1].iter().sum();
        p[m - 1] = (1.0 - head).max(0.0);
        p
    } else {
        vec![1.0 / m as f64; m]
    };
    Ok(LinearMsArParams {
        slope,
        intercept,
        sigma,
        transition: TransitionMatrix::new(rows)?,
        init,
    })
}

/// Lloyd's algorithm on the lag pairs `(Y_{k-1}, Y_k)` with k-means++ seeding.
pub fn kmeans_labels(traj: &Trajectory, m: usize, rng: &mut SimRng) -> Vec<usize> {
    let n = traj.n();
    let points: Vec<[f64; 2]> = (0..n).map(|k| [traj.y[k], traj.y[k + 1]]).collect();
    let dist = |p: &[f64; 2], c: &[f64; 2]| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
    let mut centers = vec![points[rng.below(n)]];
    while centers.len() < m {
        let d: Vec<f64> = points
            .iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|c| dist(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let pick = rng.categorical(&d).unwrap_or_else(|| rng.below(n));
        centers.push(points[pick]);
    }
    let mut labels = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for (k, p) in points.iter().enumerate() {
            let best = (0..m)
                .min_by(|&a, &b| dist(p, &centers[a]).total_cmp(&dist(p, &centers[b])))
                .expect("m >= 1");
            if best != labels[k] {
                labels[k] = best;
                changed = true;
            }
        }
        let mut sums = vec![[0.0f64; 3]; m];
        for (p, &l) in points.iter().zip(&labels) {
            sums[l][0] += p[0];
            sums[l][1] += p[1];
            sums[l][2] += 1.0;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[2] > 0.0 {
                *c = [s[0] / s[2], s[1] / s[2]];
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

#[derive(Debug, Clone, Serialize)]
pub struct SaemResult {
    pub params: LinearMsArParams,
    /// Last restored regime path.
    #[serde(skip)]
    pub path: Vec<usize>,
    /// Observed-data log-likelihood after each M-step.
    pub loglik_trace: Vec<f64>,
    pub reseeded: usize,
    /// Index of the selected restart and the final log-likelihood of each.
    pub restart: usize,
    pub restart_logliks: Vec<f64>,
}

/// Piecewise-constant random path with geometric run lengths.
pub fn block_labels(n: usize, m: usize, mean_length: f64, rng: &mut SimRng) -> Vec<usize> {
    let mut path = Vec::with_capacity(n);
    let mut state = rng.below(m);
    while path.len() < n {
        let len = 1 + (-rng.uniform().ln() * mean_length) as usize;
        path.extend(std::iter::repeat_n(state, len.min(n - path.len())));
        if m > 1 {
            state = (state + 1 + rng.below(m - 1)) % m;
        }
    }
    path
}

/// Reassigns random steps to any regime with fewer than two observations.
fn reseed_degenerate(path: &mut [usize], m: usize, rng: &mut SimRng) -> usize {
    let n = path.len();
    let mut reseeded = 0;
    for i in 0..m {
        let count = path.iter().filter(|&&s| s == i).count();
        if count < 2 {
            let take = (n / (4 * m)).max(2);
            for _ in 0..take {
                path[rng.below(n)] = i;
            }
            warn!(
                "regime {} had {count} observations; reseeded {take} steps",
                i + 1
            );
            reseeded += 1;
        }
    }
    reseeded
}

pub fn saem_linear_msar(traj: &Trajectory, config: &SaemConfig) -> Result<SaemResult> {
    let m = config.m;
    let n = traj.n();
    if m == 0 {
        return Err(Error::invalid("regime count must be positive"));
    }
    if n < 10 * m {
        return Err(Error::invalid(format!(
            "SAEM needs n >= 10 m observations (n = {n}, m = {m})"
        )));
    }
    if config.restarts == 0 {
        return Err(Error::invalid("SAEM needs at least one restart"));
    }
    traj.validate(None)?;
    let runs: Vec<SaemResult> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = SimRng::stream(derive_seed(config.seed, r as u64), Stream::Saem);
            let path = match config.init {
                SaemInit::Blocks => {
                    block_labels(n, m, (n as f64 / (10 * m) as f64).max(1.0), &mut rng)
                }
                SaemInit::KMeans => kmeans_labels(traj, m, &mut rng),
            };
            saem_from_path(traj, config, path, &mut rng)
        })
        .collect::<Result<_>>()?;
    let final_ll = |r: &SaemResult| r.loglik_trace.last().copied().unwrap_or(f64::NEG_INFINITY);
    let restart_logliks: Vec<f64> = runs.iter().map(final_ll).collect();
    let best = (0..runs.len())
        .reduce(|a, b| {
            if restart_logliks[b] > restart_logliks[a] {
                b
            } else {
                a
            }
        })
        .expect("at least one restart");
    let mut result = runs.into_iter().nth(best).expect("index in range");
    result.restart = best;
    result.restart_logliks = restart_logliks;
    Ok(result)
}

/// SAEM iterations from a given initial regime assignment.
pub fn saem_from_path(
    traj: &Trajectory,
    config: &SaemConfig,
    mut path: Vec<usize>,
    rng: &mut SimRng,
) -> Result<SaemResult> {
    let m = config.m;
    if path.len() != traj.n() || path.iter().any(|&s| s >= m) {
        return Err(Error::invalid("initial path does not match the trajectory"));
    }
    let mut reseeded = reseed_degenerate(&mut path, m, rng);
    let mut stats = SufficientStats::from_path(traj, &path, m);
    let mut params = m_step(&stats)?;
    let mut loglik_trace = Vec::with_capacity(config.iterations);
    for t in 1..=config.iterations {
        let fp = forward_filter(&params, traj).map_err(|e| e.at_iteration(t))?;
        path = backward_sample_with(&fp, &params.transition, rng).map_err(|e| e.at_iteration(t))?;
        reseeded += reseed_degenerate(&mut path, m, rng);
        let fresh = SufficientStats::from_path(traj, &path, m);
        stats.blend(&fresh, config.step_size(t));
        params = m_step(&stats)?;
        let ll = forward_filter(&params, traj)
            .map_err(|e| e.at_iteration(t))?
            .loglik;
        debug!("saem iteration {t}: loglik {ll:.6}");
        loglik_trace.push(ll);
    }
    Ok(SaemResult {
        params,
        path,
        loglik_trace,
        reseeded,
        restart: 0,
        restart_logliks: Vec::new(),
    })
}

/// Complete-data estimate with the restored path standing in for the regimes.
pub fn init_theta_field(
    traj: &Trajectory,
    restored: &[usize],
    m: usize,
    config: &KernelConfig,
) -> Result<ThetaField> {
    let completed = Trajectory {
        x: Some(restored.to_vec()),
        ..traj.clone()
    };
    nw_estimate(&completed, m, config)
}
