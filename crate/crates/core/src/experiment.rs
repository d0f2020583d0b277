//! Config-driven experiments: simulation, estimation, sweeps and figure data.
//!
//! Every run writes CSV payloads plus a `report.json` into the output
//! directory. CSVs depend only on the config, so identical configs give
//! byte-identical files; wall-clock timings live in the report only.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{default_bandwidth, linspace, KernelConfig, KernelFamily, DEFAULT_GRID_POINTS};
use crate::model::{check_stability, ModelSpec, StabilityReport};
use crate::nw::{align_labels, nw_estimate, sup_error, ThetaField};
use crate::rm::{fixed_point_field, initialize, run_from, RestorationMode, RmConfig, StepSchedule};
use crate::saem::{LinearMsArParams, SaemInit};
use crate::simulation::{fmt_f64, simulate, InitialValue, Trajectory, DEFAULT_BURN_IN};

pub const SCHEMA_VERSION: u32 = 1;
pub const PRESET_NAME: &str = "bump_logistic";
/// Alternative spelling accepted for the preset.
pub const PRESET_ALIAS: &str = "paper_section4";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    EstimateComplete,
    EstimateRm,
    StabilityCheck,
    ConsistencySweep,
    ReproduceFigures,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Simulate,
        Mode::EstimateComplete,
        Mode::EstimateRm,
        Mode::StabilityCheck,
        Mode::ConsistencySweep,
        Mode::ReproduceFigures,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::EstimateComplete => "estimate-complete",
            Mode::EstimateRm => "estimate-rm",
            Mode::StabilityCheck => "stability-check",
            Mode::ConsistencySweep => "consistency-sweep",
            Mode::ReproduceFigures => "reproduce-figures",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode '{s}'")))
    }
}

/// A model given inline or by preset name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelChoice {
    Preset(String),
    Spec(ModelSpec),
}

impl Default for ModelChoice {
    fn default() -> Self {
        ModelChoice::Preset(PRESET_NAME.to_string())
    }
}

impl ModelChoice {
    pub fn resolve(&self) -> Result<ModelSpec> {
        match self {
            ModelChoice::Preset(name) if name == PRESET_NAME || name == PRESET_ALIAS => {
                Ok(ModelSpec::bump_logistic())
            }
            ModelChoice::Preset(name) => {
                Err(Error::Config(format!("unknown model preset '{name}'")))
            }
            ModelChoice::Spec(spec) => Ok(spec.clone()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelOverrides {
    pub family: Option<KernelFamily>,
    pub bandwidth: Option<f64>,
    pub grid_points: Option<usize>,
    /// Fixed grid span; defaults to the data range widened by `h`.
    pub grid_range: Option<(f64, f64)>,
}

impl KernelOverrides {
    pub fn build(&self, traj: &Trajectory) -> Result<KernelConfig> {
        let h = match self.bandwidth {
            Some(h) => h,
            None => default_bandwidth(traj.n())?,
        };
        let points = self.grid_points.unwrap_or(DEFAULT_GRID_POINTS);
        let (lo, hi) = match self.grid_range {
            Some(r) => r,
            None => {
                let lo = traj.y.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = traj.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo - h, hi + h)
            }
        };
        KernelConfig::new(self.family.unwrap_or_default(), h, linspace(lo, hi, points))
            .map_err(|e| Error::Config(format!("kernel: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Restoration {
    #[default]
    Adaptive,
    /// Every draw uses the Step-0 state.
    FrozenInitial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelChoice,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub kernel: KernelOverrides,
    #[serde(default)]
    pub schedule: Option<StepSchedule>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Fixed starting value; the default runs a burn-in from zero.
    #[serde(default)]
    pub y0: Option<f64>,
    /// Trajectory CSV to estimate from instead of simulating.
    #[serde(default)]
    pub input: Option<PathBuf>,
    /// Regime count for hidden-regime estimation; defaults to the model's.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub restoration: Restoration,
    #[serde(default)]
    pub reestimate_sigma: bool,
    #[serde(default)]
    pub saem_init: SaemInit,
    #[serde(default = "default_eval_region")]
    pub eval_region: (f64, f64),
    #[serde(default = "default_sweep_sizes")]
    pub sweep_sizes: Vec<usize>,
    #[serde(default = "default_sweep_region")]
    pub sweep_region: (f64, f64),
    /// Moment order `s` of the stability check.
    #[serde(default = "default_moment_order")]
    pub moment_order: f64,
}

fn default_n() -> usize {
    1000
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}
fn default_eval_region() -> (f64, f64) {
    (-1.0, 1.0)
}
fn default_sweep_sizes() -> Vec<usize> {
    vec![500, 1000, 2000, 4000]
}
fn default_sweep_region() -> (f64, f64) {
    (-1.5, 1.5)
}
fn default_moment_order() -> f64 {
    1.0
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self, mode: Mode) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if let Some(m) = self.mode {
            if m != mode {
                return fail(format!(
                    "config mode '{}' does not match '{}'",
                    m.name(),
                    mode.name()
                ));
            }
        }
        if self.seeds.is_empty() {
            return fail("seeds must list at least one seed".into());
        }
        if self.n < 2 {
            return fail(format!("n must be at least 2, got {}", self.n));
        }
        if let Some(s) = &self.schedule {
            if s.iterations == 0 {
                return fail("schedule.iterations must be positive".into());
            }
        }
        if self.m == Some(0) {
            return fail("m must be positive".into());
        }
        if matches!(self.kernel.bandwidth, Some(h) if !(h > 0.0 && h.is_finite())) {
            return fail("kernel.bandwidth must be positive and finite".into());
        }
        if matches!(self.kernel.grid_points, Some(p) if p < 2) {
            return fail("kernel.grid_points must be at least 2".into());
        }
        for (name, (lo, hi)) in [
            ("eval_region", self.eval_region),
            ("sweep_region", self.sweep_region),
        ] {
            if !(lo < hi) {
                return fail(format!("{name} must satisfy lo < hi"));
            }
        }
        if mode == Mode::ConsistencySweep && self.sweep_sizes.iter().any(|&n| n < 2) {
            return fail("sweep_sizes must all be at least 2".into());
        }
        if self.input.is_some() && matches!(mode, Mode::Simulate | Mode::ConsistencySweep) {
            return fail(format!("input is not used by mode '{}'", mode.name()));
        }
        if !(self.moment_order > 0.0) {
            return fail("moment_order must be positive".into());
        }
        self.model.resolve().map(|_| ())
    }

    fn initial_value(&self) -> InitialValue {
        self.y0
            .map_or(InitialValue::Stationary, InitialValue::Fixed)
    }

    fn trajectory(&self, model: &ModelSpec, n: usize, seed: u64) -> Result<Trajectory> {
        match &self.input {
            Some(path) => {
                let file = File::open(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                Trajectory::read_csv(BufReader::new(file))
            }
            None => simulate(model, n, self.initial_value(), seed, self.burn_in),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub seed: u64,
    pub n: usize,
    pub occupancy: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteSummary {
    pub seed: u64,
    pub bandwidth: f64,
    pub sup_error: Vec<f64>,
    pub skipped_fraction: Vec<f64>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmSummary {
    pub seed: u64,
    pub bandwidth: f64,
    /// Estimated regime `permutation[i]` corresponds to true regime `i`.
    pub permutation: Vec<usize>,
    pub sup_error: Vec<f64>,
    /// Same seed, same grid, regimes observed.
    pub complete_sup_error: Vec<f64>,
    pub error_ratio: f64,
    /// Aligned average of the per-iteration transition estimates.
    pub transition_hat: Vec<Vec<f64>>,
    /// Aligned estimate from the last restored path.
    pub transition_last: Vec<Vec<f64>>,
    pub saem: LinearMsArParams,
    pub saem_restart: usize,
    pub saem_restart_logliks: Vec<f64>,
    pub initial_grad_u_norm: f64,
    pub final_grad_u_norm: f64,
    pub grad_u_ratio: f64,
    /// Median `|theta_bar - theta*|` where the fixed-point density exceeds 1e-6;
    /// frozen restoration only.
    pub fixed_point_gap_median: Option<f64>,
    pub files: Vec<String>,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub median_sup_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub region: (f64, f64),
    pub rows: Vec<SweepRow>,
    /// Per regime: medians nonincreasing in n.
    pub monotone: Vec<bool>,
    /// Per regime: largest-n median over smallest-n median.
    pub end_ratio: Vec<f64>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureSummary {
    pub seed: u64,
    pub permutation: Vec<usize>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub mode: Mode,
    pub model_hash: String,
    pub n: usize,
    pub seeds: Vec<u64>,
    pub stability: Option<StabilityReport>,
    pub elapsed_ms: u128,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulations: Option<Vec<SimulationSummary>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complete: Option<Vec<CompleteSummary>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rm: Option<Vec<RmSummary>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figures: Option<FigureSummary>,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_file(
    dir: &Path,
    name: &str,
    f: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<String> {
    let mut w = create(dir, name)?;
    f(&mut w)?;
    w.flush()?;
    Ok(name.to_string())
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Runs `mode`, writing artifacts and `report.json` into `out`.
pub fn run(config: &ExperimentConfig, mode: Mode, out: &Path) -> Result<Report> {
    config.validate(mode)?;
    let model = config.model.resolve()?;
    fs::create_dir_all(out)?;
    let start = Instant::now();
    let stability = match check_stability(&model, config.moment_order) {
        Ok(r) => Some(r),
        Err(e) if mode == Mode::StabilityCheck => return Err(e),
        Err(_) => None,
    };
    let mut report = Report {
        schema_version: SCHEMA_VERSION,
        mode,
        model_hash: model.hash(),
        n: config.n,
        seeds: config.seeds.clone(),
        stability,
        elapsed_ms: 0,
        simulations: None,
        complete: None,
        rm: None,
        sweep: None,
        figures: None,
    };
    match mode {
        Mode::StabilityCheck => {}
        Mode::Simulate => report.simulations = Some(run_simulate(config, &model, out)?),
        Mode::EstimateComplete => report.complete = Some(run_complete(config, &model, out)?),
        Mode::EstimateRm => {
            report.rm = Some(
                config
                    .seeds
                    .par_iter()
                    .map(|&s| run_rm_seed(config, &model, s, out))
                    .collect::<Result<_>>()?,
            )
        }
        Mode::ConsistencySweep => report.sweep = Some(run_sweep(config, &model, out)?),
        Mode::ReproduceFigures => report.figures = Some(run_figures(config, &model, out)?),
    }
    report.elapsed_ms = start.elapsed().as_millis();
    let file = File::create(out.join(REPORT_FILE))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    info!("{} finished in {} ms", mode.name(), report.elapsed_ms);
    Ok(report)
}

fn run_simulate(
    config: &ExperimentConfig,
    model: &ModelSpec,
    out: &Path,
) -> Result<Vec<SimulationSummary>> {
    let hash = model.hash();
    config
        .seeds
        .par_iter()
        .map(|&seed| {
            let traj = simulate(
                model,
                config.n,
                config.initial_value(),
                seed,
                config.burn_in,
            )?;
            let mut occupancy = vec![0; model.m()];
            for &s in traj.x.as_deref().unwrap_or(&[]) {
                occupancy[s] += 1;
            }
            let file = write_file(out, &format!("trajectory_seed{seed}.csv"), |w| {
                traj.write_csv(w, Some(&hash))
            })?;
            Ok(SimulationSummary {
                seed,
                n: traj.n(),
                occupancy,
                file,
            })
        })
        .collect()
}

fn run_complete(
    config: &ExperimentConfig,
    model: &ModelSpec,
    out: &Path,
) -> Result<Vec<CompleteSummary>> {
    config
        .seeds
        .par_iter()
        .map(|&seed| {
            let traj = config.trajectory(model, config.n, seed)?;
            let kc = config.kernel.build(&traj)?;
            let field = nw_estimate(&traj, model.m(), &kc)?;
            let err = sup_error(&field, model, config.eval_region)?;
            let file = write_file(out, &format!("theta_complete_seed{seed}.csv"), |w| {
                field.write_csv(w)
            })?;
            Ok(CompleteSummary {
                seed,
                bandwidth: kc.bandwidth,
                sup_error: err.per_regime,
                skipped_fraction: err.skipped_fraction,
                file,
            })
        })
        .collect()
}

fn rm_config(config: &ExperimentConfig, m: usize, kc: KernelConfig, seed: u64) -> RmConfig {
    let mut rc = RmConfig::new(m, kc, seed);
    if let Some(s) = config.schedule {
        rc.schedule = s;
    }
    rc.reestimate_sigma = config.reestimate_sigma;
    rc.saem.init = config.saem_init;
    rc
}

struct RmOutcome {
    summary: RmSummary,
    complete: ThetaField,
    theta_bar: ThetaField,
    traj: Trajectory,
}

fn rm_seed(
    config: &ExperimentConfig,
    model: &ModelSpec,
    seed: u64,
    out: &Path,
) -> Result<RmOutcome> {
    let start = Instant::now();
    let traj = config.trajectory(model, config.n, seed)?;
    let m = config.m.unwrap_or(model.m());
    let kc = config.kernel.build(&traj)?;
    let hidden = traj.hidden();
    let mut rc = rm_config(config, m, kc.clone(), seed);
    let init = initialize(&hidden, &rc)?;
    let frozen_law = match config.restoration {
        Restoration::Adaptive => None,
        Restoration::FrozenInitial => {
            rc.mode = RestorationMode::Frozen(Box::new(init.psi.clone()));
            Some(init.psi.clone())
        }
    };
    let trace = run_from(&hidden, &rc, seed, init)?;

    let mut files = Vec::new();
    files.push(write_file(out, &format!("theta_rm_seed{seed}.csv"), |w| {
        trace.theta_bar.write_csv(w)
    })?);
    files.push(write_file(
        out,
        &format!("theta_rm_last_seed{seed}.csv"),
        |w| trace.theta.write_csv(w),
    )?);
    files.push(write_file(out, &format!("rm_trace_seed{seed}.csv"), |w| {
        trace.write_csv(w)
    })?);

    let fixed_point_gap_median = match &frozen_law {
        Some(psi) => {
            let star = fixed_point_field(&hidden, psi, &kc)?;
            files.push(write_file(
                out,
                &format!("fixed_point_seed{seed}.csv"),
                |w| star.write_csv(w),
            )?);
            let mut gaps = Vec::new();
            for i in 0..m {
                for g in 0..star.grid.len() {
                    if star.f_hat[i][g] > 1e-6 {
                        gaps.push((trace.theta_bar.theta[i][g] - star.theta[i][g]).abs());
                    }
                }
            }
            Some(median(&gaps))
        }
        None => None,
    };

    // errors against the truth need matching regime counts and observed labels
    let comparable = m == model.m() && traj.x.is_some();
    let (permutation, sup, complete_sup, complete) = if comparable {
        let complete = nw_estimate(&traj, m, &kc)?;
        let alignment = align_labels(&trace.theta_bar, model, config.eval_region)?;
        let complete_sup = sup_error(&complete, model, config.eval_region)?.per_regime;
        (
            alignment.permutation,
            alignment.error.per_regime,
            complete_sup,
            complete,
        )
    } else {
        (
            (0..m).collect(),
            Vec::new(),
            Vec::new(),
            ThetaField::zeros(kc.grid.clone(), m),
        )
    };
    let error_ratio = if comparable {
        sup.iter().sum::<f64>() / complete_sup.iter().sum::<f64>()
    } else {
        f64::NAN
    };
    let final_grad_u_norm = trace.records.last().map_or(f64::NAN, |r| r.grad_u_norm);
    let summary = RmSummary {
        seed,
        bandwidth: kc.bandwidth,
        transition_hat: trace.transition_bar.permuted(&permutation).rows(),
        transition_last: trace.transition.permuted(&permutation).rows(),
        permutation,
        sup_error: sup,
        complete_sup_error: complete_sup,
        error_ratio,
        saem: trace.saem.params.clone(),
        saem_restart: trace.saem.restart,
        saem_restart_logliks: trace.saem.restart_logliks.clone(),
        initial_grad_u_norm: trace.initial_grad_u_norm,
        final_grad_u_norm,
        grad_u_ratio: final_grad_u_norm / trace.initial_grad_u_norm,
        fixed_point_gap_median,
        files,
        elapsed_ms: start.elapsed().as_millis(),
    };
    Ok(RmOutcome {
        summary,
        complete,
        theta_bar: trace.theta_bar,
        traj,
    })
}

fn run_rm_seed(
    config: &ExperimentConfig,
    model: &ModelSpec,
    seed: u64,
    out: &Path,
) -> Result<RmSummary> {
    rm_seed(config, model, seed, out).map(|o| o.summary)
}

fn run_sweep(config: &ExperimentConfig, model: &ModelSpec, out: &Path) -> Result<SweepSummary> {
    let cells: Vec<(usize, u64)> = config
        .sweep_sizes
        .iter()
        .flat_map(|&n| config.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let errors: Vec<Vec<f64>> = cells
        .par_iter()
        .map(|&(n, seed)| {
            let traj = simulate(model, n, config.initial_value(), seed, config.burn_in)?;
            let kc = config.kernel.build(&traj)?;
            let field = nw_estimate(&traj, model.m(), &kc)?;
            Ok(sup_error(&field, model, config.sweep_region)?.per_regime)
        })
        .collect::<Result<_>>()?;
    let m = model.m();
    let file = write_file(out, "sweep.csv", |w| {
        let mut header = String::from("n,seed");
        for i in 1..=m {
            header.push_str(&format!(",sup_error_{i}"));
        }
        writeln!(w, "{header}")?;
        for ((n, seed), e) in cells.iter().zip(&errors) {
            let cols: Vec<String> = e.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(w, "{n},{seed},{}", cols.join(","))?;
        }
        Ok(())
    })?;
    let rows: Vec<SweepRow> = config
        .sweep_sizes
        .iter()
        .map(|&n| {
            let median_sup_error = (0..m)
                .map(|i| {
                    let v: Vec<f64> = cells
                        .iter()
                        .zip(&errors)
                        .filter(|((cn, _), _)| *cn == n)
                        .map(|(_, e)| e[i])
                        .collect();
                    median(&v)
                })
                .collect();
            SweepRow {
                n,
                median_sup_error,
            }
        })
        .collect();
    let monotone = (0..m)
        .map(|i| {
            rows.windows(2)
                .all(|w| w[1].median_sup_error[i] <= w[0].median_sup_error[i])
        })
        .collect();
    let end_ratio = (0..m)
        .map(|i| rows.last().expect("sizes").median_sup_error[i] / rows[0].median_sup_error[i])
        .collect();
    Ok(SweepSummary {
        region: config.sweep_region,
        rows,
        monotone,
        end_ratio,
        file,
    })
}

fn run_figures(config: &ExperimentConfig, model: &ModelSpec, out: &Path) -> Result<FigureSummary> {
    let seed = config.seeds[0];
    let outcome = rm_seed(config, model, seed, out)?;
    let perm = outcome.summary.permutation.clone();
    let rm = outcome.theta_bar.permuted(&perm);
    let complete = outcome.complete;
    let m = model.m();
    let mut files = outcome.summary.files.clone();
    files.push(write_file(out, "figure_regressions.csv", |w| {
        let mut header = String::from("y_grid");
        for prefix in ["truth", "complete", "rm"] {
            for i in 1..=m {
                header.push_str(&format!(",{prefix}_{i}"));
            }
        }
        writeln!(w, "{header}")?;
        for (g, &y) in rm.grid.iter().enumerate() {
            let mut line = fmt_f64(y);
            for i in 0..m {
                line.push(',');
                line.push_str(&fmt_f64(model.regimes[i].eval(y)));
            }
            for field in [&complete, &rm] {
                for i in 0..m {
                    line.push(',');
                    line.push_str(&fmt_f64(field.theta[i][g]));
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    })?);
    let traj = &outcome.traj;
    files.push(write_file(out, "figure_scatter.csv", |w| {
        writeln!(w, "k,y_prev,y,x")?;
        for k in 1..=traj.n() {
            let x = traj
                .x
                .as_ref()
                .map_or(String::new(), |x| (x[k - 1] + 1).to_string());
            writeln!(
                w,
                "{k},{},{},{x}",
                fmt_f64(traj.y[k - 1]),
                fmt_f64(traj.y[k])
            )?;
        }
        Ok(())
    })?);
    Ok(FigureSummary {
        seed,
        permutation: perm,
        files,
    })
}

/// Reads a report written by [`run`].
pub fn read_report(dir: &Path) -> Result<Report> {
    let file = File::open(dir.join(REPORT_FILE))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}
