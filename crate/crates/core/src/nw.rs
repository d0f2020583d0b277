//! Per-regime Nadaraya-Watson estimation when the regime path is observed.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{weighted_sums, KernelConfig, KernelSums, KernelTable};
use crate::model::{interpolate, ModelSpec};
use crate::simulation::{fmt_f64, Trajectory};

/// Denominators below this are treated as exactly zero.
pub const DENOM_FLOOR: f64 = 1e-12;

/// Regression estimates tabulated on a grid; `theta[i][g]` estimates `r_i(grid[g])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaField {
    pub grid: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
    pub f_hat: Vec<Vec<f64>>,
}

impl ThetaField {
    pub fn zeros(grid: Vec<f64>, m: usize) -> Self {
        let len = grid.len();
        ThetaField {
            grid,
            theta: vec![vec![0.0; len]; m],
            f_hat: vec![vec![0.0; len]; m],
        }
    }

    /// Ratio field from per-(regime, grid point) sums, with the zero-denominator convention.
    pub fn from_sums(grid: Vec<f64>, sums: &[Vec<KernelSums>]) -> Self {
        let theta = sums
            .iter()
            .map(|row| row.iter().map(nw_ratio).collect())
            .collect();
        let f_hat = sums
            .iter()
            .map(|row| row.iter().map(|s| s.s0).collect())
            .collect();
        ThetaField { grid, theta, f_hat }
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.theta.len()
    }

    #[inline]
    pub fn populated(&self, i: usize, g: usize) -> bool {
        self.f_hat[i][g] >= DENOM_FLOOR
    }

    /// Grid points and values of regime `i` restricted to populated points.
    pub fn populated_knots(&self, i: usize) -> (Vec<f64>, Vec<f64>) {
        (0..self.grid.len())
            .filter(|&g| self.populated(i, g))
            .map(|g| (self.grid[g], self.theta[i][g]))
            .unzip()
    }

    /// Regime `i` of the result is regime `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        ThetaField {
            grid: self.grid.clone(),
            theta: perm.iter().map(|&p| self.theta[p].clone()).collect(),
            f_hat: perm.iter().map(|&p| self.f_hat[p].clone()).collect(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for (regime, row) in self.theta.iter().enumerate() {
            if let Some(grid_index) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteUpdate { regime, grid_index });
            }
        }
        Ok(())
    }

    /// Columns `y_grid`, then `theta_i,f_hat_i` for each regime (1-based).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("y_grid");
        for i in 1..=self.m() {
            header.push_str(&format!(",theta_{i},f_hat_{i}"));
        }
        writeln!(w, "{header}")?;
        for (g, y) in self.grid.iter().enumerate() {
            let mut line = fmt_f64(*y);
            for i in 0..self.m() {
                line.push(',');
                line.push_str(&fmt_f64(self.theta[i][g]));
                line.push(',');
                line.push_str(&fmt_f64(self.f_hat[i][g]));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

#[inline]
pub fn nw_ratio(s: &KernelSums) -> f64 {
    if s.s0 >= DENOM_FLOOR {
        s.s1 / s.s0
    } else {
        0.0
    }
}

fn indicator_weights(path: &[usize], i: usize) -> Vec<f64> {
    path.iter()
        .map(|&s| if s == i { 1.0 } else { 0.0 })
        .collect()
}

/// `(g_hat_i(y), f_hat_i(y))` for regime `i` from the observed path.
pub fn nw_components(
    y: f64,
    traj: &Trajectory,
    i: usize,
    config: &KernelConfig,
) -> Result<(f64, f64)> {
    let path = traj.require_regimes()?;
    let s = weighted_sums(y, traj, &indicator_weights(path, i), config)?;
    Ok((s.s1, s.s0))
}

/// Complete-data estimate on `config.grid` for `m` regimes.
pub fn nw_estimate(traj: &Trajectory, m: usize, config: &KernelConfig) -> Result<ThetaField> {
    let path = traj.require_regimes()?;
    traj.validate(Some(m))?;
    let table = KernelTable::new(traj, config);
    Ok(nw_estimate_with_table(&table, path, m, &config.grid))
}

pub fn nw_estimate_with_table(
    table: &KernelTable,
    path: &[usize],
    m: usize,
    grid: &[f64],
) -> ThetaField {
    let mut sums = vec![Vec::with_capacity(grid.len()); m];
    for g in 0..table.grid_len() {
        for (i, s) in table.indicator_sums(g, path, m).into_iter().enumerate() {
            sums[i].push(s);
        }
    }
    ThetaField::from_sums(grid.to_vec(), &sums)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupError {
    pub per_regime: Vec<f64>,
    /// Fraction of in-region grid points skipped for an empty denominator.
    pub skipped_fraction: Vec<f64>,
}

impl SupError {
    pub fn total(&self) -> f64 {
        self.per_regime.iter().sum()
    }
}

/// Max absolute deviation from the true regression functions over grid points in `[lo, hi]`.
pub fn sup_error(field: &ThetaField, truth: &ModelSpec, region: (f64, f64)) -> Result<SupError> {
    if truth.m() != field.m() {
        return Err(Error::invalid(
            "field and model have different regime counts",
        ));
    }
    sup_error_with(field, region, |i, y| truth.regimes[i].eval(y))
}

pub fn sup_error_with(
    field: &ThetaField,
    (lo, hi): (f64, f64),
    truth: impl Fn(usize, f64) -> f64,
) -> Result<SupError> {
    let (grid_lo, grid_hi) = (field.grid[0], *field.grid.last().expect("nonempty grid"));
    if !(lo <= hi && lo >= grid_lo && hi <= grid_hi) {
        return Err(Error::RegionOutsideGrid {
            lo,
            hi,
            grid_lo,
            grid_hi,
        });
    }
    let inside: Vec<usize> = (0..field.grid.len())
        .filter(|&g| field.grid[g] >= lo && field.grid[g] <= hi)
        .collect();
    let mut per_regime = Vec::with_capacity(field.m());
    let mut skipped_fraction = Vec::with_capacity(field.m());
    for i in 0..field.m() {
        let mut worst: f64 = 0.0;
        let mut skipped = 0usize;
        for &g in &inside {
            if !field.populated(i, g) {
                skipped += 1;
                continue;
            }
            worst = worst.max((field.theta[i][g] - truth(i, field.grid[g])).abs());
        }
        per_regime.push(worst);
        skipped_fraction.push(if inside.is_empty() {
            0.0
        } else {
            skipped as f64 / inside.len() as f64
        });
    }
    Ok(SupError {
        per_regime,
        skipped_fraction,
    })
}

pub fn permutations(m: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(m), &mut vec![false; m], &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Estimated regime `perm[i]` is matched to true regime `i`.
    pub permutation: Vec<usize>,
    pub error: SupError,
}

/// Label permutation minimizing the total sup error against `truth`.
pub fn align_labels(
    field: &ThetaField,
    truth: &ModelSpec,
    region: (f64, f64),
) -> Result<Alignment> {
    let mut best: Option<Alignment> = None;
    for perm in permutations(field.m()) {
        let error = sup_error(&field.permuted(&perm), truth, region)?;
        if best
            .as_ref()
            .is_none_or(|b| error.total() < b.error.total())
        {
            best = Some(Alignment {
                permutation: perm,
                error,
            });
        }
    }
    best.ok_or_else(|| Error::invalid("no regimes to align"))
}

/// Evaluates a tabulated row at `y` using only populated grid points; rows with
/// no populated point evaluate to zero.
pub fn bridged_eval(knots: &[f64], values: &[f64], y: f64) -> f64 {
    if knots.is_empty() {
        0.0
    } else {
        interpolate(knots, values, y)
    }
}
