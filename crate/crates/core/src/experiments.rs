//! Named experiments producing CSV tables.
//!
//! Every experiment sweeps a thermal-noise grid. Output starts with a comment
//! line carrying the schema version, a SHA-256 of the resolved configuration
//! and the coefficient index convention; numbers are written in `{:.16e}` and
//! missing values as `NA`. Grid points run concurrently on a pool of `jobs`
//! threads and rows are assembled in grid order.

use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{renyi2_mutual_info, TargetScenario, DEFAULT_VARPHI, DENSE_DIM_LIMIT};
use crate::error::{Error, Result};
use crate::fock::{
    coherent_cutoff, coherent_state, squeezed_vacuum, thermal_cutoff, PureState, DEFAULT_TAIL_TOLERANCE,
};
use crate::optimize::{optimize, Objective, OptimizationProblem};
use crate::qfi::{
    drho_first_order, qfi_channel, qfi_coherent_squeezed, qfi_exact, qfi_loss_scenario, qfi_mixed_spectral,
    qfi_nphoton_analytic, qfi_phase_mzi, qfi_pure_reflectivity, DerivativeMode, QfiResult,
};
use crate::receiver::{ReceiverConfig, ReceiverEvaluator, ReceiverStats};
use crate::states::{
    build_coherent_pair, build_nphoton, build_tmsv_for_budget, CoherentSqueezedParams,
    EnergyBudget, NPhotonState, StateFamily,
};
use crate::C64;

pub const SCHEMA_VERSION: &str = "qillum-csv/1";

/// Coefficient `a_n` multiplies `|N−n, n⟩`, i.e. `n` counts idler photons.
pub const INDEX_CONVENTION: &str = "signal-count";

const FIG4_DEFAULT_GRID: [f64; 13] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 1.0, 1.5, 2.0, 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Fig3b,
    Fig4,
    Verify,
    OptimizeState,
    QfiPoint,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Fig3b => "fig3b",
            Experiment::Fig4 => "fig4",
            Experiment::Verify => "verify",
            Experiment::OptimizeState => "optimize-state",
            Experiment::QfiPoint => "qfi-point",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig3b" => Ok(Experiment::Fig3b),
            "fig4" => Ok(Experiment::Fig4),
            "verify" => Ok(Experiment::Verify),
            "optimize-state" => Ok(Experiment::OptimizeState),
            "qfi-point" => Ok(Experiment::QfiPoint),
            other => Err(Error::Config(format!("unknown experiment '{other}'"))),
        }
    }
}

/// Everything that determines an experiment's output.
///
/// `None` fields take experiment-specific defaults when resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub state: Option<StateFamily>,
    pub n: usize,
    /// Explicit N-photon coefficients for `qfi-point`.
    pub coeffs: Option<Vec<f64>>,
    pub nb_min: Option<f64>,
    pub nb_max: Option<f64>,
    pub steps: Option<usize>,
    pub eta: f64,
    pub varphi: f64,
    pub energy: f64,
    pub signal_only: Option<bool>,
    /// Largest thermal photon number a run may need.
    pub cutoff_thermal: Option<usize>,
    /// Largest per-mode probe cutoff a run may need.
    pub cutoff_signal: Option<usize>,
    pub derivative: DerivativeMode,
    pub seed: u64,
    pub objective: String,
    pub restarts: Option<usize>,
    pub combiner_phase: Option<f64>,
    pub tail_tolerance: f64,
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            state: None,
            n: 4,
            coeffs: None,
            nb_min: None,
            nb_max: None,
            steps: None,
            eta: 1e-3,
            varphi: DEFAULT_VARPHI,
            energy: 4.0,
            signal_only: None,
            cutoff_thermal: None,
            cutoff_signal: None,
            derivative: DerivativeMode::FirstOrder,
            seed: 0,
            objective: "qfi".into(),
            restarts: None,
            combiner_phase: None,
            tail_tolerance: DEFAULT_TAIL_TOLERANCE,
        }
    }

    /// Sets one `key = value` pair; keys use underscores or dashes.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "experiment" => self.experiment = value.parse()?,
            "state" => self.state = Some(value.parse()?),
            "n" => self.n = parse(&key, value)?,
            "coeffs" => {
                let c = value
                    .split(',')
                    .map(|x| parse::<f64>(&key, x.trim()))
                    .collect::<Result<Vec<_>>>()?;
                self.coeffs = Some(c);
            }
            "nb_min" => self.nb_min = Some(parse(&key, value)?),
            "nb_max" => self.nb_max = Some(parse(&key, value)?),
            "steps" => self.steps = Some(parse(&key, value)?),
            "eta" => self.eta = parse(&key, value)?,
            "varphi" => self.varphi = parse(&key, value)?,
            "energy" => self.energy = parse(&key, value)?,
            "signal_only" => self.signal_only = Some(parse(&key, value)?),
            "cutoff_thermal" => self.cutoff_thermal = Some(parse(&key, value)?),
            "cutoff_signal" => self.cutoff_signal = Some(parse(&key, value)?),
            "derivative" => self.derivative = value.parse()?,
            "seed" => self.seed = parse(&key, value)?,
            "objective" => {
                value.parse::<Objective>()?;
                self.objective = value.into();
            }
            "restarts" => self.restarts = Some(parse(&key, value)?),
            "combiner_phase" => self.combiner_phase = Some(parse(&key, value)?),
            "tail_tolerance" => self.tail_tolerance = parse(&key, value)?,
            other => return Err(Error::Config(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    /// Parses flat `key = value` lines; `#` starts a comment.
    pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    pub fn signal_only(&self) -> bool {
        self.signal_only
            .unwrap_or(matches!(self.experiment, Experiment::Fig4))
    }

    pub fn budget(&self) -> EnergyBudget {
        EnergyBudget {
            total_mean_photons: self.energy,
            signal_only: self.signal_only(),
        }
    }

    pub fn receiver(&self) -> ReceiverConfig {
        ReceiverConfig {
            combiner_phase: self.combiner_phase,
            fd_step: None,
        }
    }

    pub fn objective(&self) -> Result<Objective> {
        Ok(match self.objective.parse::<Objective>()? {
            Objective::Qfi => Objective::Qfi,
            Objective::ReceiverSnr { .. } => Objective::ReceiverSnr {
                eta: self.eta,
                varphi: self.varphi,
                config: self.receiver(),
            },
        })
    }

    /// The n_b sweep. Any explicit bound or step count selects a uniform grid.
    pub fn grid(&self) -> Result<Vec<f64>> {
        let explicit = self.nb_min.is_some() || self.nb_max.is_some() || self.steps.is_some();
        if matches!(self.experiment, Experiment::Fig4) && !explicit {
            return Ok(FIG4_DEFAULT_GRID.to_vec());
        }
        let (lo, hi, steps) = match self.experiment {
            Experiment::Fig4 => (0.0, 3.0, 13),
            _ => (0.0, 5.0, 11),
        };
        let lo = self.nb_min.unwrap_or(lo);
        let hi = self.nb_max.unwrap_or(hi);
        let steps = self.steps.unwrap_or(steps);
        if steps < 2 {
            return Err(Error::Config(format!("grid needs at least 2 steps, got {steps}")));
        }
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Config(format!("grid bounds [{lo}, {hi}]")));
        }
        Ok((0..steps)
            .map(|i| {
                if i + 1 == steps {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (steps - 1) as f64
                }
            })
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        if self.n == 0 {
            return Err(Error::Config("N must be at least 1".into()));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!("eta = {} outside (0, 1)", self.eta)));
        }
        if !(self.tail_tolerance > 0.0 && self.tail_tolerance < 1.0) {
            return Err(Error::Config(format!("tail tolerance {}", self.tail_tolerance)));
        }
        if !(self.energy > 0.0 && self.energy.is_finite()) {
            return Err(Error::Config(format!("energy {}", self.energy)));
        }
        if let Some(c) = &self.coeffs {
            if c.len() != self.n + 1 {
                return Err(Error::Config(format!(
                    "{} coefficients given for N = {}",
                    c.len(),
                    self.n
                )));
            }
        }
        match self.experiment {
            Experiment::Fig3b => {
                if self.signal_only() || (self.energy - self.n as f64).abs() > 1e-12 {
                    return Err(Error::Config(format!(
                        "fig3b compares probes at total energy N; got energy {} with N = {}",
                        self.energy, self.n
                    )));
                }
            }
            Experiment::Fig4 if self.state == Some(StateFamily::Tmsv) => {
                return Err(Error::Config(
                    "tmsv has zero mean photon-number difference at every reflectivity, \
                     so the difference receiver cannot detect it"
                        .into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration (config plus grid).
    pub fn hash(&self) -> Result<String> {
        let resolved = serde_json::json!({ "config": self, "grid": self.grid()? });
        let bytes = serde_json::to_vec(&resolved).map_err(|e| Error::Config(e.to_string()))?;
        Ok(hex::encode(Sha256::digest(bytes)))
    }

    fn check_cutoffs(&self, n_b: f64, signal_cutoff: usize) -> Result<()> {
        if let Some(cap) = self.cutoff_thermal {
            let k = thermal_cutoff(n_b, self.tail_tolerance);
            if k > cap {
                return Err(Error::Truncation {
                    what: format!("thermal background at n_b = {n_b}"),
                    cutoff: cap,
                    tail: crate::fock::constructors::thermal_tail(n_b, cap),
                    tolerance: self.tail_tolerance,
                });
            }
        }
        if let Some(cap) = self.cutoff_signal {
            if signal_cutoff > cap {
                return Err(Error::Config(format!(
                    "probe needs cutoff {signal_cutoff}, above the configured {cap}"
                )));
            }
        }
        Ok(())
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse '{value}' for {key}")))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Missing,
}

impl Cell {
    fn opt(x: Option<f64>) -> Self {
        x.map_or(Cell::Missing, Cell::Num)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(x) => Some(*x),
            Cell::Int(i) => Some(*i as f64),
            _ => None,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Num(x) => write!(f, "{x:.16e}"),
            Cell::Int(i) => write!(f, "{i}"),
            Cell::Text(s) => f.write_str(s),
            Cell::Missing => f.write_str("NA"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub experiment: Experiment,
    pub config_hash: String,
    /// Extra `key=value` pairs for the header line.
    pub notes: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Diagnostics that do not invalidate the rows.
    pub warnings: Vec<String>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# schema={SCHEMA_VERSION} experiment={} config_sha256={} index_convention={INDEX_CONVENTION}",
            self.experiment, self.config_hash
        );
        for (k, v) in &self.notes {
            let _ = write!(out, " {k}={v}");
        }
        out.push('\n');
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(Cell::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Vec<serde_json::Value>> = self
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|c| match c {
                        Cell::Num(x) => serde_json::json!(x),
                        Cell::Int(i) => serde_json::json!(i),
                        Cell::Text(s) => serde_json::json!(s),
                        Cell::Missing => serde_json::Value::Null,
                    })
                    .collect()
            })
            .collect();
        let notes: serde_json::Map<String, serde_json::Value> = self
            .notes
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::json!(v)))
            .collect();
        let doc = serde_json::json!({
            "schema": SCHEMA_VERSION,
            "experiment": self.experiment.name(),
            "config_sha256": self.config_hash,
            "index_convention": INDEX_CONVENTION,
            "notes": notes,
            "columns": self.columns,
            "rows": rows,
        });
        let mut s = serde_json::to_string_pretty(&doc).expect("table serializes");
        s.push('\n');
        s
    }
}

/// Result of an experiment; `failures` is only populated by `verify`.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub table: Table,
    pub failures: Vec<String>,
}

pub fn run(config: &ExperimentConfig, jobs: usize) -> Result<Report> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| match config.experiment {
        Experiment::Fig3b => run_fig3b(config).map(no_failures),
        Experiment::Fig4 => run_fig4(config).map(no_failures),
        Experiment::OptimizeState => run_optimize_state(config).map(no_failures),
        Experiment::QfiPoint => run_qfi_point(config).map(no_failures),
        Experiment::Verify => run_verify(config),
    })
}

fn no_failures(table: Table) -> Report {
    Report {
        table,
        failures: Vec::new(),
    }
}

fn table(config: &ExperimentConfig, columns: Vec<String>) -> Result<Table> {
    Ok(Table {
        experiment: config.experiment,
        config_hash: config.hash()?,
        notes: Vec::new(),
        columns,
        rows: Vec::new(),
        warnings: Vec::new(),
    })
}

fn coeff_columns(n: usize) -> impl Iterator<Item = String> {
    (0..=n).map(|i| format!("a_{i}"))
}

/// Runs `f` over the grid concurrently, keeping grid order.
fn sweep<T: Send>(grid: &[f64], f: impl Fn(f64) -> Result<T> + Sync) -> Result<Vec<T>> {
    grid.par_iter().map(|&n_b| f(n_b)).collect::<Vec<_>>().into_iter().collect()
}

fn qfi_problem(config: &ExperimentConfig, n_b: f64, objective: Objective) -> OptimizationProblem {
    let mut p = OptimizationProblem::new(config.n, n_b, objective, config.seed);
    if let Some(r) = config.restarts {
        p.restarts = r;
    }
    p.tail_tolerance = config.tail_tolerance;
    p
}

/// Dense joint dimension of the returned and idler modes after the channel.
fn output_dim(input: &PureState, n_b: f64, tail_tolerance: f64) -> usize {
    let (da, dc) = (input.dims()[0], input.dims()[1]);
    (da + thermal_cutoff(n_b, tail_tolerance)) * dc
}

/// Optimized N-photon QFI against the two reference probes at equal total energy.
pub fn run_fig3b(config: &ExperimentConfig) -> Result<Table> {
    let grid = config.grid()?;
    let budget = config.budget();
    let tol = config.tail_tolerance;
    let (tmsv, _) = build_tmsv_for_budget(budget, tol)?;
    let coherent = build_coherent_pair(budget, tol)?;
    let mode = config.derivative;
    if mode == DerivativeMode::Exact {
        return Err(Error::Config("fig3b evaluates at eta = 0; use first-order or finite-diff".into()));
    }
    let mut t = table(
        config,
        ["n_b", "qfi_nphoton_opt", "qfi_tmsv", "qfi_coherent"]
            .into_iter()
            .map(String::from)
            .chain(coeff_columns(config.n))
            .chain(["derivative_mode".to_string()])
            .collect(),
    )?;
    let reference = |input: &PureState, n_b: f64, what: &str| -> Result<(Cell, Option<String>)> {
        if mode == DerivativeMode::FiniteDiff && output_dim(input, n_b, tol) > DENSE_DIM_LIMIT {
            return Ok((
                Cell::Missing,
                Some(format!("{what} at n_b = {n_b}: dense finite difference exceeds the size limit")),
            ));
        }
        Ok((Cell::Num(qfi_channel(input, n_b, config.varphi, mode, tol)?.value), None))
    };
    let rows = sweep(&grid, |n_b| {
        config.check_cutoffs(n_b, tmsv.dims()[0].max(coherent.dims()[0]) - 1)?;
        let opt = optimize(&qfi_problem(config, n_b, Objective::Qfi))?;
        let state = opt.state()?;
        let h_n = match mode {
            DerivativeMode::FirstOrder => opt.objective_value,
            _ => qfi_channel(&build_nphoton(&state)?, n_b, config.varphi, mode, tol)?.value,
        };
        let (h_t, w_t) = reference(&tmsv, n_b, "tmsv")?;
        let (h_c, w_c) = reference(&coherent, n_b, "coherent-pair")?;
        let mut row = vec![Cell::Num(n_b), Cell::Num(h_n), h_t, h_c];
        row.extend(opt.coeffs.iter().map(|&a| Cell::Num(a)));
        row.push(Cell::Text(mode.name().into()));
        let mut warnings: Vec<String> = [w_t, w_c].into_iter().flatten().collect();
        if !opt.converged {
            warnings.push(format!("optimizer at n_b = {n_b}: restart spread {:.3e}", opt.restart_spread));
        }
        Ok((row, warnings))
    })?;
    for (row, w) in rows {
        t.rows.push(row);
        t.warnings.extend(w);
    }
    Ok(t)
}

fn stats_cells(s: &ReceiverStats) -> [Cell; 6] {
    [
        Cell::opt(s.delta_eta),
        Cell::opt(s.snr),
        Cell::opt(s.snr_e),
        Cell::Num(s.m),
        Cell::Num(s.var_m),
        Cell::Num(s.dm_deta),
    ]
}

/// Receiver sensitivity and SNR for the optimized N-photon probe and the coherent pair.
pub fn run_fig4(config: &ExperimentConfig) -> Result<Table> {
    let grid = config.grid()?;
    let tol = config.tail_tolerance;
    let receiver = config.receiver();
    let objective = config.objective()?;
    let families: Vec<StateFamily> = match config.state {
        Some(f) => vec![f],
        None => vec![StateFamily::NPhoton, StateFamily::CoherentPair],
    };
    let coherent = build_coherent_pair(config.budget(), tol)?;
    let mut t = table(
        config,
        ["n_b", "family", "delta_eta", "snr", "snr_e", "m", "var_m", "dm_deta"]
            .into_iter()
            .map(String::from)
            .chain(coeff_columns(config.n))
            .collect(),
    )?;
    let phase = config.combiner_phase.unwrap_or(config.varphi);
    t.notes.push(("eta".into(), format!("{:e}", config.eta)));
    t.notes.push(("combiner_phase".into(), format!("{phase:.16e}")));
    t.notes.push(("objective".into(), objective.name().into()));
    let per_point = sweep(&grid, |n_b| {
        let scenario = TargetScenario::present(config.eta, n_b).with_varphi(config.varphi);
        let mut rows = Vec::new();
        let mut warnings = scenario.warnings();
        for family in &families {
            let (input, coeffs) = match family {
                StateFamily::NPhoton => {
                    config.check_cutoffs(n_b, config.n)?;
                    let opt = optimize(&qfi_problem(config, n_b, objective))?;
                    if !opt.converged {
                        warnings.push(format!(
                            "optimizer at n_b = {n_b}: restart spread {:.3e}",
                            opt.restart_spread
                        ));
                    }
                    (build_nphoton(&opt.state()?)?, Some(opt.coeffs))
                }
                StateFamily::CoherentPair => {
                    config.check_cutoffs(n_b, coherent.dims()[0] - 1)?;
                    (coherent.clone(), None)
                }
                StateFamily::Tmsv => unreachable!("rejected by validate"),
            };
            let stats = ReceiverEvaluator::new(&scenario, &receiver, input.dims()[0], tol)?.evaluate(&input)?;
            if let Some(r) = stats.identity_residual() {
                if r >= 1e-9 {
                    return Err(Error::Numerical(format!("SNR identity residual {r:.2e} at n_b = {n_b}")));
                }
            }
            let mut row = vec![Cell::Num(n_b), Cell::Text(family.name().into())];
            row.extend(stats_cells(&stats));
            match coeffs {
                Some(c) => row.extend(c.into_iter().map(Cell::Num)),
                None => row.extend((0..=config.n).map(|_| Cell::Missing)),
            }
            rows.push(row);
        }
        Ok((rows, warnings))
    })?;
    for (rows, w) in per_point {
        t.rows.extend(rows);
        t.warnings.extend(w);
    }
    t.warnings.dedup();
    Ok(t)
}

/// Optimum and photon distribution per grid point.
pub fn run_optimize_state(config: &ExperimentConfig) -> Result<Table> {
    let grid = config.grid()?;
    let objective = config.objective()?;
    let mut t = table(
        config,
        ["n_b", "objective", "value", "mean_signal", "mean_idler", "converged", "restart_spread"]
            .into_iter()
            .map(String::from)
            .chain(coeff_columns(config.n))
            .collect(),
    )?;
    t.rows = sweep(&grid, |n_b| {
        config.check_cutoffs(n_b, config.n)?;
        let opt = optimize(&qfi_problem(config, n_b, objective))?;
        let st = opt.state()?;
        let mut row = vec![
            Cell::Num(n_b),
            Cell::Text(objective.name().into()),
            Cell::Num(opt.objective_value),
            Cell::Num(st.mean_signal()),
            Cell::Num(st.mean_idler()),
            Cell::Text(opt.converged.to_string()),
            Cell::Num(opt.restart_spread),
        ];
        row.extend(opt.coeffs.iter().map(|&a| Cell::Num(a)));
        Ok(row)
    })?;
    Ok(t)
}

fn probe(config: &ExperimentConfig, family: StateFamily) -> Result<(PureState, Option<NPhotonState>)> {
    let tol = config.tail_tolerance;
    Ok(match family {
        StateFamily::NPhoton => {
            let st = match &config.coeffs {
                Some(c) => NPhotonState::from_unnormalized(c)?,
                None => NPhotonState::all_signal(config.n)?,
            };
            (build_nphoton(&st)?, Some(st))
        }
        StateFamily::Tmsv => (build_tmsv_for_budget(config.budget(), tol)?.0, None),
        StateFamily::CoherentPair => (build_coherent_pair(config.budget(), tol)?, None),
    })
}

/// QFI of one probe across the grid with the configured derivative.
pub fn run_qfi_point(config: &ExperimentConfig) -> Result<Table> {
    let grid = config.grid()?;
    let family = config.state.unwrap_or(StateFamily::NPhoton);
    let (input, nphoton) = probe(config, family)?;
    let mut t = table(
        config,
        ["n_b", "family", "qfi", "qfi_closed_form", "derivative_mode", "eigen_cut", "skipped_pairs", "skipped_weight"]
            .into_iter()
            .map(String::from)
            .collect(),
    )?;
    if config.derivative == DerivativeMode::Exact {
        t.notes.push(("eta".into(), format!("{:e}", config.eta)));
    }
    t.rows = sweep(&grid, |n_b| {
        config.check_cutoffs(n_b, input.dims()[0] - 1)?;
        let q: QfiResult = match config.derivative {
            DerivativeMode::Exact => qfi_exact(&input, config.eta, config.varphi, n_b, config.tail_tolerance)?,
            mode => qfi_channel(&input, n_b, config.varphi, mode, config.tail_tolerance)?,
        };
        let closed = nphoton.as_ref().map(|st| qfi_nphoton_analytic(st, n_b).value);
        Ok(vec![
            Cell::Num(n_b),
            Cell::Text(family.name().into()),
            Cell::Num(q.value),
            Cell::opt(closed),
            Cell::Text(config.derivative.name().into()),
            Cell::opt(q.eigen_cut),
            Cell::Int(q.skipped_pairs as u64),
            Cell::Num(q.skipped_weight),
        ])
    })?;
    Ok(t)
}

/// Outcome of one named verification check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst observed deviation.
    pub worst: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(name: &str, worst: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            passed: worst <= tolerance,
            worst,
            tolerance,
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn random_pure(dims: [usize; 2], rng: &mut ChaCha8Rng) -> Result<PureState> {
    let amps = (0..dims[0] * dims[1])
        .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    Ok(PureState::new(dims.to_vec(), amps)?.normalized())
}

/// Interferometric and direct reflectivity QFI on random states.
pub fn check_equivalence(seed: u64, count: usize) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = (0..count)
        .map(|_| Ok((random_pure([7, 7], &mut rng)?, rng.gen_range(0.0..2.0 * PI))))
        .collect::<Result<Vec<_>>>()?;
    let worst = states
        .par_iter()
        .map(|(s, varphi)| {
            let a = qfi_pure_reflectivity(s, *varphi)?.value;
            let b = qfi_phase_mzi(s, *varphi)?.value;
            Ok(rel(b, a))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(Check::new("equivalence", worst, 1e-7))
}

/// Closed-form coherent-plus-squeezed QFI against the state-vector evaluation.
pub fn check_coherent_squeezed(seed: u64, count: usize) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let alpha = C64::from_polar(rng.gen_range(0.2..1.5), rng.gen_range(0.0..2.0 * PI));
        let r = rng.gen_range(0.0..0.8);
        let chi = rng.gen_range(0.0..2.0 * PI);
        let varphi = rng.gen_range(0.0..2.0 * PI);
        let params = CoherentSqueezedParams { alpha, r, chi };
        let tol = 1e-13;
        let sq_cut = crate::fock::tmsv_cutoff(r, tol) * 2 + 2;
        let state = coherent_state(alpha, coherent_cutoff(alpha), tol)?.tensor(&squeezed_vacuum(r, chi, sq_cut, tol)?);
        let direct = qfi_pure_reflectivity(&state, varphi)?.value;
        worst = worst.max(rel(qfi_coherent_squeezed(&params, varphi).value, direct));
    }
    Ok(Check::new("coherent-squeezed-closed-form", worst, 1e-7))
}

/// Closed-form N-photon QFI against the spectral formula with the first-order derivative.
///
/// The background is truncated at a `1e-14` tail: the truncation edge adds
/// roughly `K p_K / μ_min` for idler eigenvalues `μ`, which reaches `1e-7`
/// relative at the default tail for strongly unbalanced probes.
pub fn check_nphoton_closed_form(seed: u64, per_point: usize) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    for n in 1..=4usize {
        for n_b in [0.0, 0.5, 1.0, 2.0] {
            for _ in 0..per_point {
                let w: Vec<f64> = (0..=n).map(|_| rng.gen_range(0.0..1.0)).collect();
                cases.push((NPhotonState::from_unnormalized(&w)?, n_b));
            }
        }
    }
    let worst = cases
        .par_iter()
        .map(|(st, n_b)| {
            let input = build_nphoton(st)?;
            let (rho0, drho) = drho_first_order(&input, *n_b, DEFAULT_VARPHI, 1e-14)?;
            let spectral = qfi_mixed_spectral(&rho0, &drho, None)?.value;
            Ok(rel(spectral, qfi_nphoton_analytic(st, *n_b).value))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(Check::new("nphoton-closed-form", worst, 1e-6))
}

/// `|N, 0⟩` reaches `4N` under pure loss.
pub fn check_loss_fock() -> Result<Check> {
    let mut worst: f64 = 0.0;
    for n in [1usize, 2, 4] {
        let s = build_nphoton(&NPhotonState::all_signal(n)?)?;
        worst = worst.max(rel(qfi_loss_scenario(&s)?.value, 4.0 * n as f64));
    }
    Ok(Check::new("loss-fock-4n", worst, 1e-6))
}

/// Under pure loss only the signal photon number matters: entangled
/// N-photon probes match product Fock probes of equal signal mean.
pub fn check_loss_idler_independence() -> Result<Check> {
    let h = |c: &[f64]| -> Result<f64> {
        Ok(qfi_loss_scenario(&build_nphoton(&NPhotonState::from_unnormalized(c)?)?)?.value)
    };
    let fock = |na: usize, nc: usize| -> Result<f64> {
        Ok(qfi_loss_scenario(&PureState::fock(vec![na + 1, nc + 1], &[na, nc])?)?.value)
    };
    let pairs = [
        (h(&[1.0, 0.0, 1.0])?, fock(1, 1)?),
        (h(&[1.0, 0.0, 0.0, 0.0, 1.0])?, fock(2, 0)?),
        (h(&[1.0, 0.0, 1.0, 0.0, 0.0])?, fock(3, 0)?),
    ];
    let worst = pairs.iter().map(|(a, b)| rel(*a, *b)).fold(0.0, f64::max);
    Ok(Check::new("loss-idler-independence", worst, 1e-7))
}

/// Correlations introduced by splitting the background stay negligible on the grid.
pub fn check_noise_splitting(eta: f64, grid: &[f64]) -> Check {
    let worst = grid
        .iter()
        .map(|&n_b| renyi2_mutual_info(eta, n_b))
        .fold(0.0, f64::max);
    Check::new("noise-splitting", worst, 1e-5)
}

/// Zero absent-target mean and the SNR identity on library probes.
pub fn check_receiver_identities(eta: f64, tol: f64) -> Result<(Check, Check)> {
    let probes = [
        build_nphoton(&NPhotonState::from_unnormalized(&[0.6, 0.5, 0.4, 0.3, 0.2])?)?,
        build_coherent_pair(EnergyBudget::signal(1.0), tol)?,
        build_tmsv_for_budget(EnergyBudget::total(1.0), tol)?.0,
    ];
    let mut absent: f64 = 0.0;
    let mut identity: f64 = 0.0;
    for input in &probes {
        for n_b in [0.0, 1.0] {
            let scenario = TargetScenario::present(eta, n_b);
            let s = ReceiverEvaluator::new(&scenario, &ReceiverConfig::default(), input.dims()[0], tol)?
                .evaluate(input)?;
            absent = absent.max(s.n0_mean.abs());
            identity = identity.max(s.identity_residual().unwrap_or(0.0));
        }
    }
    Ok((
        Check::new("absent-target-zero-mean", absent, 1e-12),
        Check::new("snr-identity", identity, 1e-9),
    ))
}

/// Runs every named check; a failing check is reported, not raised.
pub fn run_verify(config: &ExperimentConfig) -> Result<Report> {
    let mut fig4 = config.clone();
    fig4.experiment = Experiment::Fig4;
    let (absent, identity) = check_receiver_identities(config.eta, config.tail_tolerance)?;
    let checks = vec![
        check_equivalence(config.seed, 100)?,
        check_coherent_squeezed(config.seed, 20)?,
        check_nphoton_closed_form(config.seed, 10)?,
        check_loss_fock()?,
        check_loss_idler_independence()?,
        check_noise_splitting(config.eta, &fig4.grid()?),
        absent,
        identity,
    ];
    let mut t = table(
        config,
        ["check", "passed", "worst", "tolerance"].into_iter().map(String::from).collect(),
    )?;
    let mut failures = Vec::new();
    for c in checks {
        if !c.passed {
            failures.push(c.name.clone());
        }
        t.rows.push(vec![
            Cell::Text(c.name),
            Cell::Text(c.passed.to_string()),
            Cell::Num(c.worst),
            Cell::Num(c.tolerance),
        ]);
    }
    Ok(Report { table: t, failures })
}
