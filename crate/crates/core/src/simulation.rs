use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_stability, validate_probability_vector, ModelSpec, TransitionMatrix};
use crate::rng::{SimRng, Stream};

pub const DEFAULT_BURN_IN: usize = 500;

/// An observed path `y_0..y_n` with optional regimes `x_1..x_n`.
///
/// Regime labels are 0-based in memory (`0..m`) and 1-based in CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub y: Vec<f64>,
    pub x: Option<Vec<usize>>,
    pub seed: u64,
    pub burn_in: usize,
}

impl Trajectory {
    pub fn new(y: Vec<f64>, x: Option<Vec<usize>>) -> Result<Self> {
        let t = Trajectory {
            y,
            x,
            seed: 0,
            burn_in: 0,
        };
        t.validate(None)?;
        Ok(t)
    }

    /// Number of transitions `n`; the path holds `n + 1` observations.
    #[inline]
    pub fn n(&self) -> usize {
        self.y.len().saturating_sub(1)
    }

    pub fn validate(&self, m: Option<usize>) -> Result<()> {
        if self.y.len() < 2 {
            return Err(Error::invalid(
                "trajectory needs at least two observations (n >= 1)",
            ));
        }
        if let Some((k, _)) = self.y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!("observation y_{k} is not finite")));
        }
        if let Some(x) = &self.x {
            if x.len() != self.n() {
                return Err(Error::invalid(format!(
                    "regime path has {} labels but the trajectory has {} transitions",
                    x.len(),
                    self.n()
                )));
            }
            if let Some(m) = m {
                if let Some(&bad) = x.iter().find(|&&l| l >= m) {
                    return Err(Error::invalid(format!(
                        "regime label {} outside 1..={m}",
                        bad + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Same observations with the regime path dropped.
    pub fn hidden(&self) -> Self {
        Trajectory {
            x: None,
            ..self.clone()
        }
    }

    pub fn require_regimes(&self) -> Result<&[usize]> {
        self.x.as_deref().ok_or(Error::MissingRegimes)
    }

    pub fn write_csv<W: Write>(&self, mut w: W, model_hash: Option<&str>) -> Result<()> {
        writeln!(
            w,
            "# msnar trajectory model_hash={} seed={} burn_in={}",
            model_hash.unwrap_or("none"),
            self.seed,
            self.burn_in
        )?;
        writeln!(w, "k,y,x")?;
        for (k, y) in self.y.iter().enumerate() {
            let label = match (&self.x, k) {
                (Some(x), k) if k > 0 => (x[k - 1] + 1).to_string(),
                _ => String::new(),
            };
            writeln!(w, "{k},{},{label}", fmt_f64(*y))?;
        }
        Ok(())
    }

    /// Reads the CSV layout produced by [`Trajectory::write_csv`]; `#` lines are skipped.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut y = Vec::new();
        let mut labels: Vec<Option<usize>> = Vec::new();
        let mut seen_header = false;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !seen_header {
                seen_header = true;
                if line.starts_with('k') {
                    continue;
                }
            }
            let bad = |what: &str| Error::invalid(format!("line {}: {what}", lineno + 1));
            let mut cols = line.split(',');
            let k: usize = cols
                .next()
                .and_then(|c| c.trim().parse().ok())
                .ok_or_else(|| bad("bad index column"))?;
            if k != y.len() {
                return Err(bad("indices must run 0, 1, 2, ..."));
            }
            let v: f64 = cols
                .next()
                .and_then(|c| c.trim().parse().ok())
                .ok_or_else(|| bad("bad y column"))?;
            y.push(v);
            let label = match cols.next().map(str::trim) {
                None | Some("") => None,
                Some(s) => {
                    let l: usize = s.parse().map_err(|_| bad("bad x column"))?;
                    if l == 0 {
                        return Err(bad("regime labels are 1-based"));
                    }
                    Some(l - 1)
                }
            };
            if k > 0 {
                labels.push(label);
            }
        }
        let x = if labels.iter().all(Option::is_some) && !labels.is_empty() {
            Some(labels.into_iter().map(Option::unwrap).collect())
        } else if labels.iter().all(Option::is_none) {
            None
        } else {
            return Err(Error::invalid(
                "regime column must be all present or all empty",
            ));
        };
        Trajectory::new(y, x)
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Draws `x_1..x_n`: `x_1 ~ init`, then rows of `a`.
pub fn simulate_chain(
    a: &TransitionMatrix,
    init: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut rng = SimRng::stream(seed, Stream::Regimes);
    chain_with(a, init, n, &mut rng)
}

fn chain_with(
    a: &TransitionMatrix,
    init: &[f64],
    n: usize,
    rng: &mut SimRng,
) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::invalid("chain length must be at least 1"));
    }
    if init.len() != a.m() {
        return Err(Error::invalid(
            "initial distribution length does not match the chain",
        ));
    }
    validate_probability_vector(init, "initial distribution")?;
    let mut x = Vec::with_capacity(n);
    let mut state = rng.categorical(init).expect("validated");
    x.push(state);
    for _ in 1..n {
        state = rng.categorical(a.row(state)).expect("row-stochastic");
        x.push(state);
    }
    Ok(x)
}

/// Start of the path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialValue {
    Fixed(f64),
    /// Run the recursion from `y = 0` for the burn-in period and discard it.
    Stationary,
}

pub fn simulate(
    model: &ModelSpec,
    n: usize,
    y0: InitialValue,
    seed: u64,
    burn_in: usize,
) -> Result<Trajectory> {
    let mut regime_rng = SimRng::stream(seed, Stream::Regimes);
    let mut noise_rng = SimRng::stream(seed, Stream::Noise);
    let mut t = simulate_with(model, n, y0, burn_in, &mut regime_rng, &mut noise_rng)?;
    t.seed = seed;
    Ok(t)
}

/// As [`simulate`], but with the regime and noise streams seeded separately.
pub fn simulate_coupled(
    model: &ModelSpec,
    n: usize,
    y0: InitialValue,
    burn_in: usize,
    regime_seed: u64,
    noise_seed: u64,
) -> Result<Trajectory> {
    let mut regime_rng = SimRng::stream(regime_seed, Stream::Regimes);
    let mut noise_rng = SimRng::stream(noise_seed, Stream::Noise);
    simulate_with(model, n, y0, burn_in, &mut regime_rng, &mut noise_rng)
}

fn simulate_with(
    model: &ModelSpec,
    n: usize,
    y0: InitialValue,
    burn_in: usize,
    regime_rng: &mut SimRng,
    noise_rng: &mut SimRng,
) -> Result<Trajectory> {
    if n == 0 {
        return Err(Error::invalid("trajectory length n must be at least 1"));
    }
    let (start, prefix) = match y0 {
        InitialValue::Fixed(v) => (v, 0),
        InitialValue::Stationary => {
            if burn_in > 0 {
                let report = check_stability(model, 1.0)?;
                if !report.stable {
                    return Err(Error::invalid(
                        "stationary start requested for a model that fails the stability check",
                    ));
                }
            }
            (0.0, burn_in)
        }
    };
    if !start.is_finite() {
        return Err(Error::invalid("initial value y0 must be finite"));
    }
    let total = n + prefix;
    let mut x_all = chain_with(
        &model.transition,
        &model.initial_distribution,
        total,
        regime_rng,
    )?;
    let mut y_all = Vec::with_capacity(total + 1);
    y_all.push(start);
    let mut prev = start;
    for (step, &state) in x_all.iter().enumerate() {
        let e = noise_rng.standard_normal();
        let next = model.regimes[state].eval(prev) + model.noise_std[state] * e;
        if !next.is_finite() {
            return Err(Error::NonFinite { step: step + 1 });
        }
        y_all.push(next);
        prev = next;
    }
    Ok(Trajectory {
        y: y_all.split_off(prefix),
        x: Some(x_all.split_off(prefix)),
        seed: 0,
        burn_in: prefix,
    })
}

/// Sample autocorrelation at lags `0..=max_lag`.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Vec<f64> {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let c0: f64 = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    (0..=max_lag.min(n - 1))
        .map(|lag| {
            let c: f64 = (0..n - lag)
                .map(|k| (series[k] - mean) * (series[k + lag] - mean))
                .sum::<f64>()
                / n as f64;
            c / c0
        })
        .collect()
}
