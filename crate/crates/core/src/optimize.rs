//! Coefficient optimization for N-photon probes.
//!
//! Coefficients are parametrized by hyperspherical angles, which removes the
//! normalization constraint; absolute values keep them nonnegative. Each
//! restart runs Nelder–Mead from a seeded random start, restarts run
//! concurrently and the best value wins (ties go to the lowest restart index).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::TargetScenario;
use crate::error::{Error, Result};
use crate::qfi::qfi_nphoton_analytic;
use crate::receiver::{ReceiverConfig, ReceiverEvaluator};
use crate::states::NPhotonState;

/// Coefficients below this are tried at zero after the search.
const SNAP_THRESHOLD: f64 = 1e-3;

/// Tail tolerance of the coarse receiver screening stage.
const SCREENING_TAIL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Objective {
    /// Closed-form first-order QFI under thermal noise.
    Qfi,
    /// Receiver SNR at reflectivity `eta`.
    ReceiverSnr {
        eta: f64,
        varphi: f64,
        config: ReceiverConfig,
    },
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Qfi => "qfi",
            Objective::ReceiverSnr { .. } => "snr",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses `qfi` or `snr`; the SNR variant starts from the weak-reflection defaults.
impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qfi" => Ok(Objective::Qfi),
            "snr" => Ok(Objective::ReceiverSnr {
                eta: 1e-3,
                varphi: crate::channel::DEFAULT_VARPHI,
                config: ReceiverConfig::default(),
            }),
            other => Err(Error::Config(format!(
                "unknown objective '{other}' (expected qfi or snr)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationProblem {
    pub n: usize,
    pub n_b: f64,
    pub objective: Objective,
    pub restarts: usize,
    pub seed: u64,
    pub tol: f64,
    pub tail_tolerance: f64,
}

impl OptimizationProblem {
    /// Defaults: 16 restarts for the QFI objective, 8 for the receiver SNR.
    pub fn new(n: usize, n_b: f64, objective: Objective, seed: u64) -> Self {
        let restarts = match objective {
            Objective::Qfi => 16,
            Objective::ReceiverSnr { .. } => 8,
        };
        Self {
            n,
            n_b,
            objective,
            restarts,
            seed,
            tol: 1e-12,
            tail_tolerance: crate::fock::DEFAULT_TAIL_TOLERANCE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidParameter("N must be at least 1".into()));
        }
        if !(self.n_b >= 0.0 && self.n_b.is_finite()) {
            return Err(Error::InvalidParameter(format!("thermal mean {}", self.n_b)));
        }
        if self.restarts < 8 {
            return Err(Error::InvalidParameter(format!(
                "{} restarts requested, at least 8 required",
                self.restarts
            )));
        }
        if matches!(self.objective, Objective::Qfi) && !(self.tol > 0.0 && self.tol <= 1e-8) {
            return Err(Error::InvalidParameter(format!(
                "tolerance {} must lie in (0, 1e-8] for the QFI objective",
                self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    /// Amplitudes of `|N−n, n⟩`.
    pub coeffs: Vec<f64>,
    pub objective_value: f64,
    pub converged: bool,
    /// Best minus worst restart value.
    pub restart_spread: f64,
}

impl Optimum {
    pub fn state(&self) -> Result<NPhotonState> {
        NPhotonState::new(self.coeffs.clone())
    }
}

/// Unit vector of length `angles.len() + 1` with nonnegative entries.
pub fn coefficients_from_angles(angles: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(angles.len() + 1);
    let mut s = 1.0;
    for t in angles {
        out.push((s * t.cos()).abs());
        s *= t.sin();
    }
    out.push(s.abs());
    out
}

/// Inverse of [`coefficients_from_angles`] for nonnegative unit vectors.
pub fn angles_from_coefficients(coeffs: &[f64]) -> Vec<f64> {
    let n = coeffs.len() - 1;
    let mut angles = Vec::with_capacity(n);
    for i in 0..n {
        let rest: f64 = coeffs[i + 1..].iter().map(|c| c * c).sum::<f64>().sqrt();
        angles.push(rest.atan2(coeffs[i]));
    }
    angles
}

/// Nelder–Mead minimization; returns the best point, value and whether the
/// simplex met `tol` before `max_iter`.
fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: f64, tol: f64, max_iter: usize) -> (Vec<f64>, f64, bool) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        simplex.push(x);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| f(x)).collect();
    let mut converged = false;
    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let (best, worst) = (values[0], values[n]);
        let diameter = simplex[1..]
            .iter()
            .map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if worst - best <= tol * (1.0 + best.abs()) && diameter <= 1e-9 {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|x| x[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let (contracted, fc) = if fr < values[n] {
                let c = along(-0.5);
                let v = f(&c);
                (c, v)
            } else {
                let c = along(0.5);
                let v = f(&c);
                (c, v)
            };
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                let x0 = simplex[0].clone();
                for i in 1..=n {
                    simplex[i] = simplex[i].iter().zip(&x0).map(|(x, b)| b + 0.5 * (x - b)).collect();
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    let i = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    (simplex[i].clone(), values[i], converged)
}

/// Runs Nelder–Mead repeatedly from its own result until the value stalls.
fn polish(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], tol: f64) -> (Vec<f64>, f64, bool) {
    let (mut x, mut v, mut ok) = nelder_mead(f, x0, 0.3, tol, 20_000);
    for _ in 0..6 {
        let (x2, v2, ok2) = nelder_mead(f, &x, 0.05, tol, 20_000);
        let gain = v - v2;
        if v2 <= v {
            x = x2;
            v = v2;
            ok = ok2;
        }
        if gain <= tol * (1.0 + v.abs()) {
            break;
        }
    }
    (x, v, ok)
}

/// Zeroes coefficients below the snap threshold when the objective does not
/// drop by more than `tol` (relative).
fn snap(coeffs: &[f64], value: f64, objective: &dyn Fn(&[f64]) -> f64, tol: f64) -> (Vec<f64>, f64) {
    let mut best = coeffs.to_vec();
    let mut best_value = value;
    let mut order: Vec<usize> = (0..coeffs.len()).collect();
    order.sort_by(|&a, &b| coeffs[a].total_cmp(&coeffs[b]));
    for i in order {
        if best[i] == 0.0 || best[i] >= SNAP_THRESHOLD {
            continue;
        }
        let mut trial = best.clone();
        trial[i] = 0.0;
        let norm = trial.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        trial.iter_mut().for_each(|c| *c /= norm);
        let v = objective(&trial);
        if v >= best_value - tol * best_value.abs().max(1.0) {
            best = trial;
            best_value = v;
        }
    }
    (best, best_value)
}

fn evaluator_for(problem: &OptimizationProblem, tail: f64) -> Result<Option<ReceiverEvaluator>> {
    match problem.objective {
        Objective::Qfi => Ok(None),
        Objective::ReceiverSnr { eta, varphi, config } => {
            let scenario = TargetScenario::present(eta, problem.n_b).with_varphi(varphi);
            Ok(Some(ReceiverEvaluator::new(&scenario, &config, problem.n + 1, tail)?))
        }
    }
}

fn objective_fn<'a>(problem: &'a OptimizationProblem, eval: Option<&'a ReceiverEvaluator>) -> impl Fn(&[f64]) -> f64 + Sync + 'a {
    move |coeffs: &[f64]| -> f64 {
        let Ok(state) = NPhotonState::new(coeffs.to_vec()) else {
            return f64::NEG_INFINITY;
        };
        match eval {
            None => qfi_nphoton_analytic(&state, problem.n_b).value,
            Some(ev) => crate::states::build_nphoton(&state)
                .and_then(|psi| ev.evaluate(&psi))
                .ok()
                .and_then(|s| s.snr)
                .unwrap_or(0.0),
        }
    }
}

/// Value of the problem's objective at `coeffs`, at the problem's tail tolerance.
pub fn evaluate_objective(problem: &OptimizationProblem, coeffs: &[f64]) -> Result<f64> {
    let eval = evaluator_for(problem, problem.tail_tolerance)?;
    let value = objective_fn(problem, eval.as_ref())(coeffs);
    Ok(value)
}

/// Maximizes the objective over nonnegative unit coefficient vectors.
pub fn optimize(problem: &OptimizationProblem) -> Result<Optimum> {
    problem.validate()?;
    let fine_eval = evaluator_for(problem, problem.tail_tolerance)?;
    // Screening runs on a lighter background truncation, polishing on the full one.
    let coarse_eval = match problem.objective {
        Objective::Qfi => None,
        Objective::ReceiverSnr { .. } => evaluator_for(problem, SCREENING_TAIL.max(problem.tail_tolerance))?,
    };
    let fine = objective_fn(problem, fine_eval.as_ref());
    let coarse = objective_fn(problem, coarse_eval.as_ref().or(fine_eval.as_ref()));
    let screen_tol = match problem.objective {
        Objective::Qfi => problem.tol,
        Objective::ReceiverSnr { .. } => problem.tol.max(1e-9),
    };

    let runs: Vec<(Vec<f64>, f64, bool)> = (0..problem.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
            rng.set_stream(r as u64);
            let x0: Vec<f64> = (0..problem.n)
                .map(|_| rng.gen_range(0.0..std::f64::consts::FRAC_PI_2))
                .collect();
            let neg = |x: &[f64]| -coarse(&coefficients_from_angles(x));
            polish(&neg, &x0, screen_tol)
        })
        .collect();

    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.1 < runs[best].1 {
            best = i;
        }
    }
    let values: Vec<f64> = runs.iter().map(|r| -r.1).collect();
    let spread = values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - values.iter().copied().fold(f64::INFINITY, f64::min);

    // Several local optima exist, so agreement among restarts on the best
    // value is the convergence signal; the spread is reported alongside.
    let top = values[best];
    let reproduced = values
        .iter()
        .filter(|&&v| top - v <= 1e-6 * top.abs().max(1e-12))
        .count();

    let (mut angles, mut ok) = (runs[best].0.clone(), runs[best].2);
    if coarse_eval.is_some() {
        let neg = |x: &[f64]| -fine(&coefficients_from_angles(x));
        let (x, _, ok2) = polish(&neg, &angles, screen_tol);
        angles = x;
        ok = ok2;
    }
    let coeffs = coefficients_from_angles(&angles);
    let value = fine(&coeffs);
    let (coeffs, _) = snap(&coeffs, value, &fine, problem.tol);
    let objective_value = fine(&coeffs);
    Ok(Optimum {
        coeffs,
        objective_value,
        converged: ok && reproduced >= 2,
        restart_spread: spread,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub n_b: f64,
    pub mean_signal: f64,
    pub mean_idler: f64,
    pub optimum: Optimum,
}

/// Optimizes at every grid point and reports where the photons sit.
pub fn noise_trend_report(
    n: usize,
    grid: &[f64],
    objective: Objective,
    seed: u64,
) -> Result<Vec<TrendRow>> {
    grid.iter()
        .map(|&n_b| {
            let opt = optimize(&OptimizationProblem::new(n, n_b, objective, seed))?;
            let st = opt.state()?;
            Ok(TrendRow {
                n_b,
                mean_signal: st.mean_signal(),
                mean_idler: st.mean_idler(),
                optimum: opt,
            })
        })
        .collect()
}
