//! Model definitions for Markov-switching nonlinear autoregressions and the
//! checks that decide whether a model admits a stable stationary solution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// Row-stochastic matrix of regime transition probabilities, `a[i][j] = P(X_k = j | X_{k-1} = i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct TransitionMatrix {
    m: usize,
    entries: Vec<f64>,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(Error::invalid(
                "transition matrix must have at least one row",
            ));
        }
        let mut entries = Vec::with_capacity(m * m);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::invalid(format!(
                    "transition matrix row {i} has {} entries, expected {m}",
                    row.len()
                )));
            }
            for (j, &a) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::invalid(format!(
                        "transition probability a[{i}][{j}] = {a} is outside [0, 1]"
                    )));
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(format!(
                    "transition matrix row {i} sums to {sum}, not 1"
                )));
            }
            entries.extend_from_slice(row);
        }
        Ok(TransitionMatrix { m, entries })
    }

    pub fn identity(m: usize) -> Self {
        let mut entries = vec![0.0; m * m];
        for i in 0..m {
            entries[i * m + i] = 1.0;
        }
        TransitionMatrix { m, entries }
    }

    pub fn uniform(m: usize) -> Self {
        TransitionMatrix {
            m,
            entries: vec![1.0 / m as f64; m * m],
        }
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.m + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.m).map(|i| self.row(i).to_vec()).collect()
    }

    /// Applies a relabeling: regime `i` of the result is regime `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let m = self.m;
        let mut entries = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                entries[i * m + j] = self.get(perm[i], perm[j]);
            }
        }
        TransitionMatrix { m, entries }
    }

    fn reachable_from(&self, start: usize) -> Vec<bool> {
        let mut seen = vec![false; self.m];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(u) = stack.pop() {
            for v in 0..self.m {
                if self.get(u, v) > 0.0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }

    /// Checks irreducibility, reporting the first unreachable pair.
    pub fn check_irreducible(&self) -> Result<()> {
        for from in 0..self.m {
            let seen = self.reachable_from(from);
            if let Some(to) = seen.iter().position(|&s| !s) {
                return Err(Error::Reducible { from, to });
            }
        }
        Ok(())
    }

    /// Period of an irreducible chain: gcd over edges `u -> v` of `level(u) + 1 - level(v)`
    /// where `level` is the BFS depth from state 0.
    pub fn period(&self) -> usize {
        let m = self.m;
        let mut level = vec![usize::MAX; m];
        level[0] = 0;
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for v in 0..m {
                if self.get(u, v) > 0.0 && level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        let mut g = 0usize;
        for u in 0..m {
            for v in 0..m {
                if self.get(u, v) > 0.0 && level[u] != usize::MAX && level[v] != usize::MAX {
                    let diff = (level[u] + 1).abs_diff(level[v]);
                    g = gcd(g, diff);
                }
            }
        }
        g
    }

    pub fn check_ergodic(&self) -> Result<()> {
        self.check_irreducible()?;
        match self.period() {
            1 => Ok(()),
            period => Err(Error::Periodic { period }),
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl TryFrom<Vec<Vec<f64>>> for TransitionMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        TransitionMatrix::new(rows)
    }
}

impl From<TransitionMatrix> for Vec<Vec<f64>> {
    fn from(a: TransitionMatrix) -> Self {
        a.rows()
    }
}

/// Invariant law of an irreducible aperiodic chain, from `(A^T - I) mu = 0` with `sum(mu) = 1`.
pub fn stationary_distribution(a: &TransitionMatrix) -> Result<Vec<f64>> {
    a.check_ergodic()?;
    let m = a.m();
    let mut sys = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            sys[(i, j)] = a.get(j, i) - if i == j { 1.0 } else { 0.0 };
        }
    }
    // One balance equation is redundant; swap it for the normalization.
    for j in 0..m {
        sys[(m - 1, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(m);
    rhs[m - 1] = 1.0;
    let mu = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::invalid("stationary system is singular"))?;
    Ok(mu.iter().copied().collect())
}

/// Declared bound `|r(y)| <= rho |y| + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub rho: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressionForm {
    /// `slope * y + intercept`
    Linear { slope: f64, intercept: f64 },
    /// `a * y + b * exp(-c * y^2)`
    Bump { a: f64, b: f64, c: f64 },
    /// `a / (1 + exp(c * y)) + d`
    Logistic { a: f64, c: f64, d: f64 },
    /// Piecewise-linear through `(knots, values)`, linear extrapolation outside.
    Tabulated { knots: Vec<f64>, values: Vec<f64> },
}

impl RegressionForm {
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            RegressionForm::Linear { slope, intercept } => slope * y + intercept,
            RegressionForm::Bump { a, b, c } => a * y + b * (-c * y * y).exp(),
            RegressionForm::Logistic { a, c, d } => a / (1.0 + (c * y).exp()) + d,
            RegressionForm::Tabulated { knots, values } => interpolate(knots, values, y),
        }
    }
}

/// Piecewise-linear interpolation with linear extrapolation from the boundary pair.
/// `knots` must be strictly increasing and nonempty.
pub fn interpolate(knots: &[f64], values: &[f64], y: f64) -> f64 {
    debug_assert_eq!(knots.len(), values.len());
    let n = knots.len();
    if n == 1 {
        return values[0];
    }
    let idx = knots.partition_point(|&k| k <= y);
    let lo = idx.saturating_sub(1).min(n - 2);
    let (x0, x1) = (knots[lo], knots[lo + 1]);
    let (v0, v1) = (values[lo], values[lo + 1]);
    v0 + (v1 - v0) * (y - x0) / (x1 - x0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFunction {
    pub form: RegressionForm,
    pub envelope: Envelope,
}

impl RegressionFunction {
    pub fn new(form: RegressionForm, envelope: Envelope) -> Self {
        RegressionFunction { form, envelope }
    }

    pub fn linear(slope: f64, intercept: f64) -> Self {
        Self::new(
            RegressionForm::Linear { slope, intercept },
            Envelope {
                rho: slope.abs(),
                b: intercept.abs(),
            },
        )
    }

    pub fn bump(a: f64, b: f64, c: f64) -> Self {
        Self::new(
            RegressionForm::Bump { a, b, c },
            Envelope {
                rho: a.abs(),
                b: b.abs(),
            },
        )
    }

    pub fn logistic(a: f64, c: f64, d: f64) -> Self {
        Self::new(
            RegressionForm::Logistic { a, c, d },
            Envelope {
                rho: 0.0,
                b: a.abs() + d.abs(),
            },
        )
    }

    pub fn tabulated(knots: Vec<f64>, values: Vec<f64>, envelope: Envelope) -> Result<Self> {
        let f = Self::new(RegressionForm::Tabulated { knots, values }, envelope);
        f.validate_shape()?;
        Ok(f)
    }

    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        self.form.eval(y)
    }

    fn validate_shape(&self) -> Result<()> {
        if let RegressionForm::Tabulated { knots, values } = &self.form {
            if knots.is_empty() || knots.len() != values.len() {
                return Err(Error::invalid(
                    "tabulated regression needs equally many knots and values (at least one)",
                ));
            }
            if knots.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(
                    "tabulated knots must be strictly increasing",
                ));
            }
            if knots.iter().chain(values).any(|v| !v.is_finite()) {
                return Err(Error::invalid("tabulated knots and values must be finite"));
            }
        }
        Ok(())
    }

    /// Validates the envelope constants and probes the bound on a dense grid over [-50, 50].
    pub fn validate(&self) -> Result<()> {
        self.validate_shape()?;
        let Envelope { rho, b } = self.envelope;
        if !(rho >= 0.0 && b >= 0.0 && rho.is_finite() && b.is_finite()) {
            return Err(Error::invalid(format!(
                "envelope constants must be finite and nonnegative (rho = {rho}, b = {b})"
            )));
        }
        const PROBES: usize = 20_001;
        for p in 0..PROBES {
            let y = -50.0 + 100.0 * p as f64 / (PROBES - 1) as f64;
            let r = self.eval(y);
            let bound = rho * y.abs() + b;
            if !(r.abs() <= bound + 1e-9 * (1.0 + bound)) {
                return Err(Error::invalid(format!(
                    "envelope violated at y = {y}: |r(y)| = {} > {bound}",
                    r.abs()
                )));
            }
        }
        Ok(())
    }
}

/// `log N(y; mean, sd^2)`; the built-in noise density.
#[inline]
pub fn gaussian_logpdf(y: f64, mean: f64, sd: f64) -> f64 {
    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
    let z = (y - mean) / sd;
    -0.5 * z * z - sd.ln() - HALF_LN_2PI
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub transition: TransitionMatrix,
    pub regimes: Vec<RegressionFunction>,
    pub noise_std: Vec<f64>,
    pub initial_distribution: Vec<f64>,
}

#[derive(Deserialize)]
struct RawModelSpec {
    transition: TransitionMatrix,
    regimes: Vec<RegressionFunction>,
    noise_std: Vec<f64>,
    #[serde(default)]
    initial_distribution: Option<Vec<f64>>,
}

impl<'de> Deserialize<'de> for ModelSpec {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = RawModelSpec::deserialize(de)?;
        let init = match raw.initial_distribution {
            Some(v) => v,
            None => stationary_distribution(&raw.transition).map_err(serde::de::Error::custom)?,
        };
        ModelSpec::new(raw.transition, raw.regimes, raw.noise_std, init)
            .map_err(serde::de::Error::custom)
    }
}

pub(crate) fn validate_probability_vector(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::invalid(format!("{what} has entries outside [0, 1]")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::invalid(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

impl ModelSpec {
    pub fn new(
        transition: TransitionMatrix,
        regimes: Vec<RegressionFunction>,
        noise_std: Vec<f64>,
        initial_distribution: Vec<f64>,
    ) -> Result<Self> {
        let m = transition.m();
        if regimes.len() != m || noise_std.len() != m || initial_distribution.len() != m {
            return Err(Error::invalid(format!(
                "model has {m} regimes but {} regression functions, {} noise scales, {} initial probabilities",
                regimes.len(),
                noise_std.len(),
                initial_distribution.len()
            )));
        }
        if noise_std.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid(
                "noise scales must be finite and nonnegative",
            ));
        }
        validate_probability_vector(&initial_distribution, "initial distribution")?;
        for f in &regimes {
            f.validate_shape()?;
        }
        Ok(ModelSpec {
            transition,
            regimes,
            noise_std,
            initial_distribution,
        })
    }

    /// Two regimes: a bump `0.7y + 2exp(-10y^2)` and a decreasing logistic
    /// `2/(1+exp(10y)) - 1`, persistent switching (0.98 on the diagonal) and
    /// Gaussian noise of variance 0.4.
    pub fn bump_logistic() -> Self {
        let sd = 0.4f64.sqrt();
        ModelSpec {
            transition: TransitionMatrix::new(vec![vec![0.98, 0.02], vec![0.02, 0.98]])
                .expect("valid preset"),
            regimes: vec![
                RegressionFunction::bump(0.7, 2.0, 10.0),
                RegressionFunction::logistic(2.0, 10.0, -1.0),
            ],
            noise_std: vec![sd, sd],
            initial_distribution: vec![0.5, 0.5],
        }
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.transition.m()
    }

    /// Regime `i` of the result is regime `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        ModelSpec {
            transition: self.transition.permuted(perm),
            regimes: perm.iter().map(|&p| self.regimes[p].clone()).collect(),
            noise_std: perm.iter().map(|&p| self.noise_std[p]).collect(),
            initial_distribution: perm.iter().map(|&p| self.initial_distribution[p]).collect(),
        }
    }

    /// Short hex digest of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("model serializes");
        let digest = Sha256::digest(&bytes);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub stationary_distribution: Vec<f64>,
    /// `sum_i mu_i log rho_i`; `-inf` when a bounded regime carries weight.
    #[serde(with = "extended_float")]
    pub log_condition_value: f64,
    pub spectral_radius_qs: f64,
    pub moment_order_s: f64,
    pub log_condition_holds: bool,
    pub moment_condition_holds: bool,
    pub stable: bool,
}

/// JSON has no infinities; encode them as strings.
mod extended_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            v.serialize(s)
        } else if *v > 0.0 {
            "inf".serialize(s)
        } else if *v < 0.0 {
            "-inf".serialize(s)
        } else {
            "nan".serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad float {other:?}"))),
            },
        }
    }
}

/// Matrix with entries `rho_j^s * a[i][j]`.
pub fn moment_matrix(a: &TransitionMatrix, rho: &[f64], s: f64) -> DMatrix<f64> {
    let m = a.m();
    DMatrix::from_fn(m, m, |i, j| {
        let r = if rho[j] == 0.0 { 0.0 } else { rho[j].powf(s) };
        r * a.get(i, j)
    })
}

pub fn spectral_radius(q: &DMatrix<f64>) -> f64 {
    q.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Log-moment condition and moment-matrix spectral radius for the declared envelopes.
pub fn check_stability(model: &ModelSpec, s: f64) -> Result<StabilityReport> {
    if !(s >= 1.0 && s.is_finite()) {
        return Err(Error::invalid(format!("moment order s = {s} must be >= 1")));
    }
    for (i, f) in model.regimes.iter().enumerate() {
        let Envelope { rho, b } = f.envelope;
        if !(rho >= 0.0 && b >= 0.0) {
            return Err(Error::invalid(format!(
                "regime {i} has an invalid envelope (rho = {rho}, b = {b})"
            )));
        }
    }
    let mu = stationary_distribution(&model.transition)?;
    let rho: Vec<f64> = model.regimes.iter().map(|f| f.envelope.rho).collect();
    let log_condition_value: f64 = mu
        .iter()
        .zip(&rho)
        .map(|(&w, &r)| if w == 0.0 { 0.0 } else { w * r.ln() })
        .sum();
    let spectral_radius_qs = spectral_radius(&moment_matrix(&model.transition, &rho, s));
    let log_condition_holds = log_condition_value < 0.0;
    let moment_condition_holds = spectral_radius_qs < 1.0;
    Ok(StabilityReport {
        stationary_distribution: mu,
        log_condition_value,
        spectral_radius_qs,
        moment_order_s: s,
        log_condition_holds,
        moment_condition_holds,
        stable: log_condition_holds && moment_condition_holds,
    })
}
