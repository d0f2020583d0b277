//! Restoration-estimation Robbins-Monro algorithm.
//!
//! For each grid point `y` the algorithm minimizes the local weighted
//! least-squares potential
//!
//! ```text
//! U(y, Y, X, theta) = 1/(n h) sum_k sum_i K_h(y - Y_k) 1{X_{k+1} = i} (Y_{k+1} - theta_i)^2
//! ```
//!
//! by alternating a posterior draw of the hidden path (restoration) with a
//! stochastic gradient step, and reports the Polyak average of the iterates.
//! Averaging `U` over the exact restoration law gives the contrast `u`, whose
//! stationary point `theta*` is the smoothed-weight Nadaraya-Watson ratio.

use std::io::Write;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{
    backward_sample_with, forward_filter, smooth, transition_counts, FilterPosterior, PsiState,
};
use crate::kernel::{weighted_sums, CompensatedSum, KernelConfig, KernelSums, KernelTable};
use crate::model::TransitionMatrix;
use crate::nw::{nw_ratio, ThetaField, DENOM_FLOOR};
use crate::rng::{SimRng, Stream};
use crate::saem::{init_theta_field, saem_linear_msar, SaemConfig, SaemResult};
use crate::simulation::{fmt_f64, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSchedule {
    /// Iterations run with unit step.
    pub warmup: usize,
    pub iterations: usize,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule {
            warmup: 50,
            iterations: 2000,
        }
    }
}

impl StepSchedule {
    /// `1` for `t <= warmup`, `1 / (t - warmup)` afterwards.
    #[inline]
    pub fn gamma(&self, t: usize) -> f64 {
        if t <= self.warmup {
            1.0
        } else {
            1.0 / (t - self.warmup) as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("schedule needs at least one iteration"));
        }
        Ok(())
    }
}

fn indicator(path: &[usize], i: usize) -> Vec<f64> {
    path.iter()
        .map(|&s| if s == i { 1.0 } else { 0.0 })
        .collect()
}

fn check_path(traj: &Trajectory, path: &[usize]) -> Result<()> {
    if path.len() != traj.n() {
        return Err(Error::invalid(format!(
            "path has {} labels, trajectory has {} transitions",
            path.len(),
            traj.n()
        )));
    }
    Ok(())
}

/// Normalized potential at `y` for the per-regime values `theta_at_y`.
pub fn potential(
    y: f64,
    traj: &Trajectory,
    path: &[usize],
    theta_at_y: &[f64],
    config: &KernelConfig,
) -> Result<f64> {
    check_path(traj, path)?;
    let mut acc = CompensatedSum::default();
    for (k, &i) in path.iter().enumerate() {
        let r = traj.y[k + 1] - theta_at_y[i];
        acc.add(config.kernel_h(y - traj.y[k]) * r * r);
    }
    Ok(acc.value() / (traj.n() as f64 * config.bandwidth))
}

/// `dU/dtheta_i = -2 (g_i - theta_i f_i)`; zero wherever `f_i` vanishes.
#[inline]
pub fn gradient_from_sums(sums: &KernelSums, theta_i: f64) -> f64 {
    -2.0 * (sums.s1 - theta_i * sums.s0)
}

pub fn gradient(
    y: f64,
    traj: &Trajectory,
    path: &[usize],
    theta_at_y: &[f64],
    config: &KernelConfig,
) -> Result<Vec<f64>> {
    check_path(traj, path)?;
    theta_at_y
        .iter()
        .enumerate()
        .map(|(i, &th)| {
            let s = weighted_sums(y, traj, &indicator(path, i), config)?;
            Ok(gradient_from_sums(&s, th))
        })
        .collect()
}

/// `theta - gamma * grad` at every regime and grid point.
pub fn rm_step(theta: &ThetaField, grad: &[Vec<f64>], gamma: f64) -> Result<ThetaField> {
    if grad.len() != theta.m() || grad.iter().any(|row| row.len() != theta.grid.len()) {
        return Err(Error::invalid("gradient field shape does not match theta"));
    }
    let mut next = theta.clone();
    for (regime, (row, grow)) in next.theta.iter_mut().zip(grad).enumerate() {
        for (grid_index, (v, g)) in row.iter_mut().zip(grow).enumerate() {
            *v -= gamma * g;
            if !v.is_finite() {
                return Err(Error::NonFiniteUpdate { regime, grid_index });
            }
        }
    }
    Ok(next)
}

/// Running mean `bar + (theta_t - bar) / t`; denominators are taken from `theta_t`.
pub fn polyak_update(theta_bar: &ThetaField, theta_t: &ThetaField, t: usize) -> ThetaField {
    assert!(t >= 1, "averaging index starts at 1");
    let w = 1.0 / t as f64;
    let theta = theta_bar
        .theta
        .iter()
        .zip(&theta_t.theta)
        .map(|(b, c)| b.iter().zip(c).map(|(b, c)| b + w * (c - b)).collect())
        .collect();
    ThetaField {
        grid: theta_bar.grid.clone(),
        theta,
        f_hat: theta_t.f_hat.clone(),
    }
}

/// `P(X_{k+1} = i | Y_{0:n}, psi')` laid out as one weight vector per regime.
pub fn smoothed_weights(fp: &FilterPosterior, m: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|i| fp.smoothed.iter().map(|row| row[i]).collect())
        .collect()
}

fn contrast_sums_at(
    y: f64,
    traj: &Trajectory,
    psi_prime: &PsiState,
    config: &KernelConfig,
) -> Result<Vec<KernelSums>> {
    let fp = crate::hmm::smoothed_probabilities(psi_prime, traj)?;
    smoothed_weights(&fp, psi_prime.theta.m())
        .iter()
        .map(|w| weighted_sums(y, traj, w, config))
        .collect()
}

/// Gradient of the contrast `u` at `y`: the potential gradient with indicator
/// weights replaced by smoothed regime probabilities under `psi_prime`.
pub fn grad_u(
    y: f64,
    traj: &Trajectory,
    theta_at_y: &[f64],
    psi_prime: &PsiState,
    config: &KernelConfig,
) -> Result<Vec<f64>> {
    let sums = contrast_sums_at(y, traj, psi_prime, config)?;
    Ok(sums
        .iter()
        .zip(theta_at_y)
        .map(|(s, &th)| gradient_from_sums(s, th))
        .collect())
}

/// Stationary point of the contrast at `y`: the smoothed-weight ratio.
pub fn fixed_point_oracle(
    y: f64,
    traj: &Trajectory,
    psi_prime: &PsiState,
    config: &KernelConfig,
) -> Result<Vec<f64>> {
    Ok(contrast_sums_at(y, traj, psi_prime, config)?
        .iter()
        .map(nw_ratio)
        .collect())
}

/// Smoothed-weight kernel sums over the whole grid, `[regime][grid]`.
pub fn contrast_field_sums(table: &KernelTable, weights: &[Vec<f64>]) -> Vec<Vec<KernelSums>> {
    weights
        .iter()
        .map(|w| {
            (0..table.grid_len())
                .into_par_iter()
                .map(|g| table.sums(g, w))
                .collect()
        })
        .collect()
}

/// Field of fixed points `theta*` under the smoothed weights of `psi_prime`.
pub fn fixed_point_field(
    traj: &Trajectory,
    psi_prime: &PsiState,
    config: &KernelConfig,
) -> Result<ThetaField> {
    let fp = crate::hmm::smoothed_probabilities(psi_prime, traj)?;
    let table = KernelTable::new(traj, config);
    let sums = contrast_field_sums(&table, &smoothed_weights(&fp, psi_prime.theta.m()));
    Ok(ThetaField::from_sums(config.grid.clone(), &sums))
}

fn field_gradient(sums: &[Vec<KernelSums>], theta: &ThetaField) -> Vec<Vec<f64>> {
    sums.iter()
        .zip(&theta.theta)
        .map(|(row, th)| {
            row.iter()
                .zip(th)
                .map(|(s, &t)| gradient_from_sums(s, t))
                .collect()
        })
        .collect()
}

fn field_norm(field: &[Vec<f64>]) -> f64 {
    field
        .iter()
        .flat_map(|row| row.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Per regime, `(1/(n h) sum_k |Y_{k+1} - theta_i| K_h(y - Y_k))^2`: with the
/// centered indicators bounded by one, the gradient noise satisfies
/// `E ||noise||^2 <= sum_i Psi_i` and pathwise `||noise||^2 <= 4 sum_i Psi_i`.
pub fn noise_bound_terms(table: &KernelTable, g: usize, theta_at_y: &[f64]) -> Vec<f64> {
    theta_at_y
        .iter()
        .map(|&th| {
            let mut acc = CompensatedSum::default();
            for (&kv, &yn) in table.row(g).iter().zip(table.y_next()) {
                acc.add(kv * (yn - th).abs());
            }
            let v = acc.value() / table.norm();
            v * v
        })
        .collect()
}

/// How the restoration distribution evolves.
#[derive(Debug, Clone, Default)]
pub enum RestorationMode {
    /// `psi^{t-1}` drives the draw at iteration `t`.
    #[default]
    Adaptive,
    /// Every draw uses the same fixed parameter state.
    Frozen(Box<PsiState>),
}

#[derive(Debug, Clone)]
pub struct RmConfig {
    pub m: usize,
    pub kernel: KernelConfig,
    pub schedule: StepSchedule,
    pub saem: SaemConfig,
    pub mode: RestorationMode,
    /// Re-estimate emission scales from smoothed residuals each iteration.
    pub reestimate_sigma: bool,
    /// Keep every iterate and running average in the trace.
    pub keep_snapshots: bool,
}

impl RmConfig {
    pub fn new(m: usize, kernel: KernelConfig, seed: u64) -> Self {
        RmConfig {
            m,
            kernel,
            schedule: StepSchedule::default(),
            saem: SaemConfig::new(m, seed),
            mode: RestorationMode::Adaptive,
            reestimate_sigma: false,
            keep_snapshots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub gamma: f64,
    /// Norm over the grid of the contrast gradient at the running average.
    pub grad_u_norm: f64,
    /// Norm of the gradient noise at the previous iterate.
    pub noise_norm: f64,
    /// Pathwise bound `2 sqrt(sum Psi)` on `noise_norm`.
    pub noise_bound: f64,
    pub occupancy: Vec<usize>,
    pub transition: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RmTrace {
    pub schedule: StepSchedule,
    pub seed: u64,
    pub saem: SaemResult,
    pub initial: ThetaField,
    pub records: Vec<IterationRecord>,
    pub theta: ThetaField,
    pub theta_bar: ThetaField,
    pub transition: TransitionMatrix,
    /// Running average of the transition estimates.
    pub transition_bar: TransitionMatrix,
    pub sigma: Vec<f64>,
    /// Contrast gradient norm at the initial iterate.
    pub initial_grad_u_norm: f64,
    #[serde(skip)]
    pub snapshots: Vec<ThetaField>,
    #[serde(skip)]
    pub averages: Vec<ThetaField>,
}

impl RmTrace {
    /// Columns `t, gamma, grad_u_norm, noise_norm, noise_bound, occupancy_i...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let m = self.theta.m();
        let mut header = String::from("t,gamma,grad_u_norm,noise_norm,noise_bound");
        for i in 1..=m {
            header.push_str(&format!(",occupancy_{i}"));
        }
        for i in 1..=m {
            header.push_str(&format!(",a_{i}{i}"));
        }
        writeln!(w, "{header}")?;
        for r in &self.records {
            let mut line = format!(
                "{},{},{},{},{}",
                r.t,
                fmt_f64(r.gamma),
                fmt_f64(r.grad_u_norm),
                fmt_f64(r.noise_norm),
                fmt_f64(r.noise_bound)
            );
            for c in &r.occupancy {
                line.push_str(&format!(",{c}"));
            }
            for (i, row) in r.transition.iter().enumerate() {
                line.push(',');
                line.push_str(&fmt_f64(row[i]));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

struct IterationSums {
    grad: Vec<Vec<f64>>,
    f_hat: Vec<Vec<f64>>,
    noise_sq: f64,
    bound_sq: f64,
}

/// Potential gradient for the restored path, plus gradient-noise diagnostics
/// against the contrast of the law the path was drawn from.
fn iteration_sums(
    table: &KernelTable,
    path: &[usize],
    theta: &ThetaField,
    contrast: &[Vec<KernelSums>],
    m: usize,
) -> IterationSums {
    let per_grid: Vec<(Vec<KernelSums>, f64, f64)> = (0..table.grid_len())
        .into_par_iter()
        .map(|g| {
            let sums = table.indicator_sums(g, path, m);
            let th: Vec<f64> = (0..m).map(|i| theta.theta[i][g]).collect();
            let mut noise = 0.0;
            for i in 0..m {
                let d = gradient_from_sums(&sums[i], th[i])
                    - gradient_from_sums(&contrast[i][g], th[i]);
                noise += d * d;
            }
            let bound: f64 = noise_bound_terms(table, g, &th).iter().sum();
            (sums, noise, 4.0 * bound)
        })
        .collect();
    let mut grad = vec![Vec::with_capacity(table.grid_len()); m];
    let mut f_hat = vec![Vec::with_capacity(table.grid_len()); m];
    let (mut noise_sq, mut bound_sq) = (0.0, 0.0);
    for (g, (sums, noise, bound)) in per_grid.into_iter().enumerate() {
        for i in 0..m {
            let s = &sums[i];
            // frozen where the restored path puts no mass
            grad[i].push(if s.s0 >= DENOM_FLOOR {
                gradient_from_sums(s, theta.theta[i][g])
            } else {
                0.0
            });
            f_hat[i].push(s.s0);
        }
        noise_sq += noise;
        bound_sq += bound;
    }
    IterationSums {
        grad,
        f_hat,
        noise_sq,
        bound_sq,
    }
}

fn reestimated_sigma(psi: &PsiState, traj: &Trajectory, fp: &FilterPosterior) -> Vec<f64> {
    let m = psi.theta.m();
    (0..m)
        .map(|i| {
            let (mut num, mut den) = (0.0, 0.0);
            for k in 0..traj.n() {
                let w = fp.smoothed[k][i];
                let r = traj.y[k + 1] - psi.regression(i, traj.y[k]);
                num += w * r * r;
                den += w;
            }
            if den > 0.0 {
                (num / den).sqrt().max(crate::saem::SIGMA_FLOOR)
            } else {
                psi.sigma[i]
            }
        })
        .collect()
}

/// Step 0 of the algorithm: SAEM fit, restored path, initial field and transitions.
pub struct Initialization {
    pub saem: SaemResult,
    pub psi: PsiState,
}

pub fn initialize(traj: &Trajectory, config: &RmConfig) -> Result<Initialization> {
    let saem = saem_linear_msar(traj, &config.saem)?;
    let theta0 = init_theta_field(traj, &saem.path, config.m, &config.kernel)?;
    let a0 = transition_counts(&saem.path, config.m)?.estimate;
    let psi = PsiState::new(
        theta0,
        a0,
        saem.params.sigma.clone(),
        saem.params.init.clone(),
    )?;
    Ok(Initialization { saem, psi })
}

/// Full restoration-estimation run on a trajectory whose regimes are hidden.
pub fn run_restoration_estimation(
    traj: &Trajectory,
    config: &RmConfig,
    seed: u64,
) -> Result<RmTrace> {
    let init = initialize(traj, config)?;
    run_from(traj, config, seed, init)
}

/// Runs the R/E/A loop from a given initialization.
pub fn run_from(
    traj: &Trajectory,
    config: &RmConfig,
    seed: u64,
    init: Initialization,
) -> Result<RmTrace> {
    config.schedule.validate()?;
    let m = config.m;
    if init.psi.theta.m() != m {
        return Err(Error::invalid("initial state has the wrong regime count"));
    }
    traj.validate(None)?;
    let table = KernelTable::new(traj, &config.kernel);
    let mut rng = SimRng::stream(seed, Stream::Restoration);

    let mut psi = init.psi.clone();
    let initial = psi.theta.clone();
    let mut theta = initial.clone();
    let mut theta_bar = initial.clone();
    let mut a_bar = vec![vec![0.0; m]; m];
    let mut f_bar = initial.f_hat.clone();

    // Contrast sums for a frozen restoration law never change.
    let frozen = match &config.mode {
        RestorationMode::Frozen(p) => {
            let mut fp = forward_filter(p.as_ref(), traj)?;
            smooth(&mut fp, &p.transition);
            let sums = contrast_field_sums(&table, &smoothed_weights(&fp, m));
            Some((p.as_ref().clone(), fp, sums))
        }
        RestorationMode::Adaptive => None,
    };
    let initial_grad_u_norm = {
        let sums = match &frozen {
            Some((_, _, s)) => s.clone(),
            None => {
                let mut fp = forward_filter(&psi, traj)?;
                smooth(&mut fp, &psi.transition);
                contrast_field_sums(&table, &smoothed_weights(&fp, m))
            }
        };
        field_norm(&field_gradient(&sums, &theta_bar))
    };

    let mut records = Vec::with_capacity(config.schedule.iterations);
    let mut snapshots = Vec::new();
    let mut averages = Vec::new();
    for t in 1..=config.schedule.iterations {
        let gamma = config.schedule.gamma(t);
        let ctx = |e: Error| e.at_iteration(t);

        // R: draw the hidden path given psi^{t-1}
        let (path, a_used, contrast) = match &frozen {
            Some((p, fp, sums)) => {
                let path = backward_sample_with(fp, &p.transition, &mut rng).map_err(ctx)?;
                (path, p.transition.clone(), sums.clone())
            }
            None => {
                let mut fp = forward_filter(&psi, traj).map_err(ctx)?;
                smooth(&mut fp, &psi.transition);
                let path = backward_sample_with(&fp, &psi.transition, &mut rng).map_err(ctx)?;
                if config.reestimate_sigma {
                    psi.sigma = reestimated_sigma(&psi, traj, &fp);
                }
                let sums = contrast_field_sums(&table, &smoothed_weights(&fp, m));
                (path, psi.transition.clone(), sums)
            }
        };
        let _ = a_used;

        // E: gradient step at every grid point, transition counts
        let step = iteration_sums(&table, &path, &theta, &contrast, m);
        let mut next = rm_step(&theta, &step.grad, gamma).map_err(ctx)?;
        for (fb, fr) in f_bar.iter_mut().zip(&step.f_hat) {
            for (b, v) in fb.iter_mut().zip(fr) {
                *b += (v - *b) / (t as f64 + 1.0);
            }
        }
        next.f_hat = f_bar.clone();
        theta = next;
        let counts = transition_counts(&path, m).map_err(ctx)?;
        for (ab, row) in a_bar.iter_mut().zip(counts.estimate.rows()) {
            for (b, v) in ab.iter_mut().zip(row) {
                *b += (v - *b) / t as f64;
            }
        }

        // A: running average
        theta_bar = polyak_update(&theta_bar, &theta, t);

        let grad_u_norm = field_norm(&field_gradient(&contrast, &theta_bar));
        let mut occupancy = vec![0usize; m];
        for &s in &path {
            occupancy[s] += 1;
        }
        debug!("rm iteration {t}: gamma {gamma:.4}, |grad u| {grad_u_norm:.3e}");
        records.push(IterationRecord {
            t,
            gamma,
            grad_u_norm,
            noise_norm: step.noise_sq.sqrt(),
            noise_bound: step.bound_sq.sqrt(),
            occupancy,
            transition: counts.estimate.rows(),
        });
        if config.keep_snapshots {
            snapshots.push(theta.clone());
            averages.push(theta_bar.clone());
        }

        if frozen.is_none() {
            psi = PsiState::new(
                theta.clone(),
                counts.estimate,
                psi.sigma.clone(),
                psi.init.clone(),
            )
            .map_err(ctx)?;
        }
    }
    info!(
        "restoration-estimation finished: {} iterations, final |grad u| {:.3e}",
        config.schedule.iterations,
        records.last().map_or(f64::NAN, |r| r.grad_u_norm)
    );
    let transition_bar = TransitionMatrix::new(normalize_rows(a_bar))?;
    Ok(RmTrace {
        schedule: config.schedule,
        seed,
        saem: init.saem,
        initial,
        records,
        transition: psi.transition.clone(),
        sigma: psi.sigma.clone(),
        theta,
        theta_bar,
        transition_bar,
        initial_grad_u_norm,
        snapshots,
        averages,
    })
}

fn normalize_rows(rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    rows.into_iter()
        .map(|r| {
            let s: f64 = r.iter().sum();
            let mut r: Vec<f64> = r.iter().map(|v| v / s).collect();
            let last = r.len() - 1;
            let head: f64 = r[..last].iter().sum();
            r[last] = (1.0 - head).max(0.0);
            r
        })
        .collect()
}
