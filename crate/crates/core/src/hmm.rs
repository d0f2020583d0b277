//! Regime inference for a fixed parameter state: emissions, forward filtering,
//! smoothing, Carter-Kohn path sampling and exact enumeration for small problems.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{gaussian_logpdf, validate_probability_vector, TransitionMatrix};
use crate::nw::{bridged_eval, ThetaField};
use crate::rng::{derive_seed, SimRng, Stream};
use crate::simulation::{fmt_f64, Trajectory};

/// Anything that defines a switching autoregression: a chain and per-regime
/// conditional densities of `Y_k` given `Y_{k-1}`.
pub trait RegimeModel {
    fn m(&self) -> usize;
    fn transition(&self) -> &TransitionMatrix;
    fn initial(&self) -> &[f64];
    fn emission_logdensity(&self, i: usize, y_prev: f64, y: f64) -> f64;
}

/// Current parameter state of the restoration-estimation algorithm.
#[derive(Debug, Clone, Serialize)]
pub struct PsiState {
    pub theta: ThetaField,
    pub transition: TransitionMatrix,
    pub sigma: Vec<f64>,
    pub init: Vec<f64>,
    #[serde(skip)]
    knots: Vec<(Vec<f64>, Vec<f64>)>,
}

impl PsiState {
    pub fn new(
        theta: ThetaField,
        transition: TransitionMatrix,
        sigma: Vec<f64>,
        init: Vec<f64>,
    ) -> Result<Self> {
        let m = theta.m();
        if transition.m() != m || sigma.len() != m || init.len() != m {
            return Err(Error::invalid(format!(
                "parameter state dimensions disagree (theta has {m} regimes)"
            )));
        }
        if sigma.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("emission scales must be positive"));
        }
        validate_probability_vector(&init, "initial distribution")?;
        theta.check_finite()?;
        let knots = (0..m).map(|i| theta.populated_knots(i)).collect();
        Ok(PsiState {
            theta,
            transition,
            sigma,
            init,
            knots,
        })
    }

    /// Current estimate of `r_i` at `y`, bridging grid points with empty denominators.
    #[inline]
    pub fn regression(&self, i: usize, y: f64) -> f64 {
        let (k, v) = &self.knots[i];
        bridged_eval(k, v, y)
    }

    pub fn with_theta(&self, theta: ThetaField) -> Result<Self> {
        PsiState::new(
            theta,
            self.transition.clone(),
            self.sigma.clone(),
            self.init.clone(),
        )
    }

    pub fn with_transition(&self, transition: TransitionMatrix) -> Result<Self> {
        PsiState::new(
            self.theta.clone(),
            transition,
            self.sigma.clone(),
            self.init.clone(),
        )
    }
}

impl RegimeModel for PsiState {
    fn m(&self) -> usize {
        self.theta.m()
    }
    fn transition(&self) -> &TransitionMatrix {
        &self.transition
    }
    fn initial(&self) -> &[f64] {
        &self.init
    }
    fn emission_logdensity(&self, i: usize, y_prev: f64, y: f64) -> f64 {
        emission_logdensity(self, i, y_prev, y)
    }
}

/// `log N(y; r_i(y_prev), sigma_i^2)` under the tabulated estimate.
pub fn emission_logdensity(psi: &PsiState, i: usize, y_prev: f64, y: f64) -> f64 {
    gaussian_logpdf(y, psi.regression(i, y_prev), psi.sigma[i])
}

/// Regime probabilities for one trajectory. Row `k - 1` refers to `X_k`, `k = 1..n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterPosterior {
    pub filtered: Vec<Vec<f64>>,
    pub smoothed: Vec<Vec<f64>>,
    pub loglik: f64,
    #[serde(skip)]
    predicted: Vec<Vec<f64>>,
}

impl FilterPosterior {
    pub fn n(&self) -> usize {
        self.filtered.len()
    }

    /// Columns `k, filtered_i..., smoothed_i...` (1-based regimes and steps).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let m = self.filtered.first().map_or(0, Vec::len);
        let mut header = String::from("k");
        for i in 1..=m {
            header.push_str(&format!(",filtered_{i}"));
        }
        for i in 1..=m {
            header.push_str(&format!(",smoothed_{i}"));
        }
        writeln!(w, "{header}")?;
        for k in 0..self.n() {
            let mut line = (k + 1).to_string();
            for v in &self.filtered[k] {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            if let Some(row) = self.smoothed.get(k) {
                for v in row {
                    line.push(',');
                    line.push_str(&fmt_f64(*v));
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

fn check_dims<M: RegimeModel + ?Sized>(model: &M, traj: &Trajectory) -> Result<()> {
    if traj.y.len() < 2 {
        return Err(Error::invalid("filtering needs at least two observations"));
    }
    if model.transition().m() != model.m() || model.initial().len() != model.m() {
        return Err(Error::invalid("model dimensions disagree"));
    }
    Ok(())
}

/// Normalized predict-update recursion, computed in log space per step.
pub fn forward_filter<M: RegimeModel + ?Sized>(
    model: &M,
    traj: &Trajectory,
) -> Result<FilterPosterior> {
    check_dims(model, traj)?;
    let m = model.m();
    let a = model.transition();
    let n = traj.n();
    let mut filtered = Vec::with_capacity(n);
    let mut predicted = Vec::with_capacity(n);
    let mut loglik = 0.0;
    let mut log_joint = vec![0.0; m];
    for k in 1..=n {
        let pred: Vec<f64> = if k == 1 {
            model.initial().to_vec()
        } else {
            let prev: &Vec<f64> = &filtered[k - 2];
            (0..m)
                .map(|j| (0..m).map(|i| prev[i] * a.get(i, j)).sum())
                .collect()
        };
        for i in 0..m {
            log_joint[i] = pred[i].ln() + model.emission_logdensity(i, traj.y[k - 1], traj.y[k]);
        }
        let peak = log_joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !peak.is_finite() {
            return Err(Error::EmissionUnderflow { step: k });
        }
        let weights: Vec<f64> = log_joint.iter().map(|l| (l - peak).exp()).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::EmissionUnderflow { step: k });
        }
        loglik += peak + total.ln();
        filtered.push(weights.iter().map(|w| w / total).collect());
        predicted.push(pred);
    }
    Ok(FilterPosterior {
        filtered,
        smoothed: Vec::new(),
        loglik,
        predicted,
    })
}

/// Backward pass producing `P(X_k = i | Y_{0:n})` for every step.
pub fn smooth(fp: &mut FilterPosterior, a: &TransitionMatrix) {
    let n = fp.n();
    let m = a.m();
    let mut smoothed = vec![vec![0.0; m]; n];
    smoothed[n - 1] = fp.filtered[n - 1].clone();
    for k in (0..n - 1).rev() {
        let next = &smoothed[k + 1];
        let pred = &fp.predicted[k + 1];
        let mut row: Vec<f64> = (0..m)
            .map(|i| {
                let back: f64 = (0..m)
                    .filter(|&j| pred[j] > 0.0)
                    .map(|j| a.get(i, j) * next[j] / pred[j])
                    .sum();
                fp.filtered[k][i] * back
            })
            .collect();
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        }
        smoothed[k] = row;
    }
    fp.smoothed = smoothed;
}

pub fn smoothed_probabilities<M: RegimeModel + ?Sized>(
    model: &M,
    traj: &Trajectory,
) -> Result<FilterPosterior> {
    let mut fp = forward_filter(model, traj)?;
    smooth(&mut fp, model.transition());
    Ok(fp)
}

/// Carter-Kohn draw of `x_1..x_n` from the posterior, seeded deterministically.
pub fn backward_sample(
    fp: &FilterPosterior,
    a: &TransitionMatrix,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut rng = SimRng::new(derive_seed(seed, Stream::Restoration as u64));
    backward_sample_with(fp, a, &mut rng)
}

pub fn backward_sample_with(
    fp: &FilterPosterior,
    a: &TransitionMatrix,
    rng: &mut SimRng,
) -> Result<Vec<usize>> {
    let n = fp.n();
    let m = a.m();
    let mut path = vec![0usize; n];
    path[n - 1] = rng
        .categorical(&fp.filtered[n - 1])
        .ok_or(Error::ZeroNormalizer { step: n })?;
    let mut weights = vec![0.0; m];
    for k in (0..n - 1).rev() {
        let next = path[k + 1];
        for i in 0..m {
            weights[i] = a.get(i, next) * fp.filtered[k][i];
        }
        path[k] = rng
            .categorical(&weights)
            .ok_or(Error::ZeroNormalizer { step: k + 1 })?;
    }
    Ok(path)
}

pub const MAX_ENUMERATED_PATHS: usize = 1_000_000;

/// Exact posterior over all `m^n` regime paths.
#[derive(Debug, Clone)]
pub struct PathPosterior {
    pub m: usize,
    pub n: usize,
    /// Probability of the path whose base-`m` digits (most significant first) are `x_1..x_n`.
    pub probabilities: Vec<f64>,
    /// Log of the normalizing constant `p(Y_{1:n} | Y_0)`.
    pub log_normalizer: f64,
}

impl PathPosterior {
    pub fn decode(&self, mut code: usize) -> Vec<usize> {
        let mut path = vec![0; self.n];
        for k in (0..self.n).rev() {
            path[k] = code % self.m;
            code /= self.m;
        }
        path
    }

    pub fn encode(&self, path: &[usize]) -> usize {
        path.iter().fold(0, |acc, &s| acc * self.m + s)
    }

    pub fn path_probability(&self, path: &[usize]) -> f64 {
        self.probabilities[self.encode(path)]
    }

    /// `P(X_{k+1} = i | Y)` for `k = 0..n-1`.
    pub fn marginals(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.m]; self.n];
        for (code, &p) in self.probabilities.iter().enumerate() {
            for (k, s) in self.decode(code).into_iter().enumerate() {
                out[k][s] += p;
            }
        }
        out
    }

    /// `E[f(X)]` under the posterior.
    pub fn expectation<T, F>(&self, mut f: F) -> Vec<f64>
    where
        F: FnMut(&[usize]) -> T,
        T: AsRef<[f64]>,
    {
        let mut acc: Vec<f64> = Vec::new();
        for (code, &p) in self.probabilities.iter().enumerate() {
            let v = f(&self.decode(code));
            let v = v.as_ref();
            if acc.is_empty() {
                acc = vec![0.0; v.len()];
            }
            for (a, x) in acc.iter_mut().zip(v) {
                *a += p * x;
            }
        }
        acc
    }
}

/// Enumerates every path with the joint factorization
/// `mu_{x_1} f_{x_1}(y_1|y_0) prod_k a_{x_{k-1} x_k} f_{x_k}(y_k|y_{k-1})`.
pub fn brute_force_posterior<M: RegimeModel + ?Sized>(
    model: &M,
    traj: &Trajectory,
) -> Result<PathPosterior> {
    check_dims(model, traj)?;
    let m = model.m();
    let n = traj.n();
    let total = (m as f64).powi(n as i32);
    if total > MAX_ENUMERATED_PATHS as f64 {
        return Err(Error::TooManyPaths {
            paths: total,
            limit: MAX_ENUMERATED_PATHS,
        });
    }
    let total = total as usize;
    let a = model.transition();
    let emissions: Vec<Vec<f64>> = (1..=n)
        .map(|k| {
            (0..m)
                .map(|i| model.emission_logdensity(i, traj.y[k - 1], traj.y[k]))
                .collect()
        })
        .collect();
    let mut post = PathPosterior {
        m,
        n,
        probabilities: Vec::with_capacity(total),
        log_normalizer: 0.0,
    };
    let mut logs = Vec::with_capacity(total);
    for code in 0..total {
        let path = post.decode(code);
        let mut l = model.initial()[path[0]].ln() + emissions[0][path[0]];
        for k in 1..n {
            l += a.get(path[k - 1], path[k]).ln() + emissions[k][path[k]];
        }
        logs.push(l);
    }
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::EmissionUnderflow { step: 1 });
    }
    let mut norm = crate::kernel::CompensatedSum::default();
    for &l in &logs {
        norm.add((l - peak).exp());
    }
    let z = norm.value();
    post.probabilities = logs.iter().map(|l| (l - peak).exp() / z).collect();
    post.log_normalizer = peak + z.ln();
    Ok(post)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionCounts {
    pub counts: Vec<Vec<usize>>,
    /// Row-normalized counts; rows never visited become uniform.
    pub estimate: TransitionMatrix,
    /// `n_ij / n`, with `n` the path length.
    pub per_step: Vec<Vec<f64>>,
}

pub fn transition_counts(x: &[usize], m: usize) -> Result<TransitionCounts> {
    if x.len() < 2 {
        return Err(Error::invalid(
            "transition counts need a path of length >= 2",
        ));
    }
    if x.iter().any(|&s| s >= m) {
        return Err(Error::invalid("path label outside the regime range"));
    }
    let mut counts = vec![vec![0usize; m]; m];
    for w in x.windows(2) {
        counts[w[0]][w[1]] += 1;
    }
    let rows = counts
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            if total == 0 {
                vec![1.0 / m as f64; m]
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect();
    let n = x.len() as f64;
    let per_step = counts
        .iter()
        .map(|row| row.iter().map(|&c| c as f64 / n).collect())
        .collect();
    Ok(TransitionCounts {
        estimate: TransitionMatrix::new(rows)?,
        counts,
        per_step,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::kernel::linspace;

    /// Small random parameter state with a tabulated regression per regime.
    pub(crate) fn random_psi(rng: &mut SimRng, m: usize) -> PsiState {
        let grid = linspace(-3.0, 3.0, 7);
        let mut theta = ThetaField::zeros(grid.clone(), m);
        for i in 0..m {
            for g in 0..grid.len() {
                theta.theta[i][g] = 2.0 * rng.uniform() - 1.0 + i as f64 * 0.5;
                theta.f_hat[i][g] = 0.1 + rng.uniform();
            }
        }
        let rows = (0..m)
            .map(|_| {
                let raw: Vec<f64> = (0..m).map(|_| 0.05 + rng.uniform()).collect();
                let s: f64 = raw.iter().sum();
                let mut r: Vec<f64> = raw.iter().map(|v| v / s).collect();
                let head: f64 = r[..m - 1].iter().sum();
                r[m - 1] = 1.0 - head;
                r
            })
            .collect();
        let sigma = (0..m).map(|_| 0.4 + rng.uniform()).collect();
        let raw: Vec<f64> = (0..m).map(|_| 0.1 + rng.uniform()).collect();
        let s: f64 = raw.iter().sum();
        let mut init: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let head: f64 = init[..m - 1].iter().sum();
        init[m - 1] = 1.0 - head;
        PsiState::new(theta, TransitionMatrix::new(rows).unwrap(), sigma, init).unwrap()
    }

    pub(crate) fn random_traj(rng: &mut SimRng, n: usize) -> Trajectory {
        Trajectory::new((0..=n).map(|_| 4.0 * rng.uniform() - 2.0).collect(), None).unwrap()
    }

    fn constant_psi(m: usize, value: f64) -> PsiState {
        let grid = vec![-1.0, 1.0];
        let mut theta = ThetaField::zeros(grid, m);
        for i in 0..m {
            theta.theta[i] = vec![value; 2];
            theta.f_hat[i] = vec![1.0; 2];
        }
        let mut init = vec![0.0; m];
        init[0] = 1.0;
        PsiState::new(theta, TransitionMatrix::identity(m), vec![1.0; m], init).unwrap()
    }

    #[test]
    fn emission_examples() {
        let psi = constant_psi(1, 0.25);
        let at_mean = emission_logdensity(&psi, 0, 0.3, 0.25);
        assert!((at_mean - (1.0 / (2.0 * std::f64::consts::PI).sqrt()).ln()).abs() < 1e-15);
        assert_eq!(
            emission_logdensity(&psi, 0, 0.0, 0.25 + 0.7),
            emission_logdensity(&psi, 0, 0.0, 0.25 - 0.7)
        );
        let mut psi = psi;
        psi.sigma = vec![0.4f64.sqrt()];
        let sd = 0.4f64.sqrt();
        let expect = -0.5 / 0.4 - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((emission_logdensity(&psi, 0, 0.0, 1.25) - expect).abs() < 1e-14);
    }

    #[test]
    fn bridging_skips_empty_grid_points() {
        let mut theta = ThetaField::zeros(vec![0.0, 1.0, 2.0], 1);
        theta.theta[0] = vec![1.0, 0.0, 3.0];
        theta.f_hat[0] = vec![1.0, 0.0, 1.0];
        let psi =
            PsiState::new(theta, TransitionMatrix::identity(1), vec![1.0], vec![1.0]).unwrap();
        assert_eq!(psi.regression(0, 1.0), 2.0);
        assert_eq!(psi.regression(0, 3.0), 4.0);
    }

    #[test]
    fn single_regime_filter() {
        let psi = constant_psi(1, 0.0);
        let traj = Trajectory::new(vec![0.1, 0.5, -0.2, 0.3], None).unwrap();
        let fp = smoothed_probabilities(&psi, &traj).unwrap();
        assert!(fp.filtered.iter().all(|r| r == &vec![1.0]));
        assert!(fp.smoothed.iter().all(|r| r == &vec![1.0]));
        let direct: f64 = (1..4)
            .map(|k| emission_logdensity(&psi, 0, traj.y[k - 1], traj.y[k]))
            .sum();
        assert!((fp.loglik - direct).abs() < 1e-14);
        let path = backward_sample(&fp, &psi.transition, 3).unwrap();
        assert_eq!(path, vec![0, 0, 0]);
    }

    #[test]
    fn identity_chain_never_mixes() {
        let psi = constant_psi(2, 0.0);
        let traj = Trajectory::new(vec![0.1, 0.5, -0.2, 0.3, 1.0], None).unwrap();
        let fp = smoothed_probabilities(&psi, &traj).unwrap();
        for row in fp.filtered.iter().chain(&fp.smoothed) {
            assert_eq!(row, &vec![1.0, 0.0]);
        }
        for seed in 0..20 {
            assert_eq!(
                backward_sample(&fp, &psi.transition, seed).unwrap(),
                vec![0; 4]
            );
        }
    }

    #[test]
    fn underflow_names_the_step() {
        let mut psi = constant_psi(1, 0.0);
        psi.sigma = vec![1e-3];
        let traj = Trajectory::new(vec![0.0, 0.0, 1e200], None).unwrap();
        let err = forward_filter(&psi, &traj).unwrap_err();
        assert!(matches!(err, Error::EmissionUnderflow { step: 2 }), "{err}");
    }

    #[test]
    fn matches_enumeration_on_small_instances() {
        let mut rng = SimRng::new(99);
        for _ in 0..50 {
            let m = 2 + rng.below(2);
            let n = 3 + rng.below(4);
            let psi = random_psi(&mut rng, m);
            let traj = random_traj(&mut rng, n);
            let fp = smoothed_probabilities(&psi, &traj).unwrap();
            let exact = brute_force_posterior(&psi, &traj).unwrap();
            let marg = exact.marginals();
            for k in 0..n {
                for i in 0..m {
                    assert!((fp.smoothed[k][i] - marg[k][i]).abs() < 1e-12);
                }
            }
            // filtered at the last step is the smoothed law there
            for i in 0..m {
                assert!((fp.filtered[n - 1][i] - fp.smoothed[n - 1][i]).abs() == 0.0);
            }
            assert!((fp.loglik - exact.log_normalizer).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_regimes_give_prior_law() {
        let mut rng = SimRng::new(5);
        let mut psi = random_psi(&mut rng, 2);
        psi.theta.theta[1] = psi.theta.theta[0].clone();
        psi.sigma[1] = psi.sigma[0];
        let psi = psi.with_theta(psi.theta.clone()).unwrap();
        let traj = random_traj(&mut rng, 4);
        let exact = brute_force_posterior(&psi, &traj).unwrap();
        for code in 0..exact.probabilities.len() {
            let path = exact.decode(code);
            let mut prior = psi.init[path[0]];
            for k in 1..path.len() {
                prior *= psi.transition.get(path[k - 1], path[k]);
            }
            assert!((exact.probabilities[code] - prior).abs() < 1e-14);
        }
    }

    #[test]
    fn single_step_posterior() {
        let mut rng = SimRng::new(8);
        let psi = random_psi(&mut rng, 3);
        let traj = random_traj(&mut rng, 1);
        let exact = brute_force_posterior(&psi, &traj).unwrap();
        let un: Vec<f64> = (0..3)
            .map(|i| psi.init[i] * emission_logdensity(&psi, i, traj.y[0], traj.y[1]).exp())
            .collect();
        let s: f64 = un.iter().sum();
        for i in 0..3 {
            assert!((exact.probabilities[i] - un[i] / s).abs() < 1e-14);
        }
    }

    #[test]
    fn enumeration_limit() {
        let mut rng = SimRng::new(1);
        let psi = random_psi(&mut rng, 2);
        let traj = random_traj(&mut rng, 21);
        assert!(matches!(
            brute_force_posterior(&psi, &traj),
            Err(Error::TooManyPaths { .. })
        ));
    }

    #[test]
    fn transition_count_examples() {
        let t = transition_counts(&[0; 11], 2).unwrap();
        assert_eq!(t.counts[0][0], 10);
        assert_eq!(t.estimate.row(0), &[1.0, 0.0]);
        assert_eq!(t.estimate.row(1), &[0.5, 0.5]);
        let alt: Vec<usize> = (0..10).map(|k| k % 2).collect();
        let t = transition_counts(&alt, 2).unwrap();
        assert_eq!(t.estimate.rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(transition_counts(&[0], 2).is_err());
    }

    #[test]
    fn transition_estimate_from_long_path() {
        let a = TransitionMatrix::new(vec![vec![0.98, 0.02], vec![0.02, 0.98]]).unwrap();
        let x = crate::simulation::simulate_chain(&a, &[0.5, 0.5], 200_000, 17).unwrap();
        let t = transition_counts(&x, 2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((t.estimate.get(i, j) - a.get(i, j)).abs() < 0.01);
            }
        }
    }

    #[test]
    fn filter_csv_shape() {
        let psi = constant_psi(2, 0.0);
        let traj = Trajectory::new(vec![0.1, 0.5, -0.2], None).unwrap();
        let fp = smoothed_probabilities(&psi, &traj).unwrap();
        let mut buf = Vec::new();
        fp.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,filtered_1,filtered_2,smoothed_1,smoothed_2\n1,"));
        assert_eq!(text.lines().count(), 3);
    }
}
