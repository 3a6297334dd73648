//! Target interrogation channel.
//!
//! The signal mode `a` meets a thermal background mode `b` on a beam splitter
//! with reflectivity `η = sin(θ/2)`; the port that carries mode `b` returns
//! to the receiver and the other is lost. The returned/idler state is kept as
//! a lazy ensemble over thermal photon-number sectors: with `j` thermal
//! photons and `n_a` signal photons the splitter acts on the block of total
//! number `n_a + j`, and tracing the lost port leaves one vector per
//! lost-port count `k`. Only the block columns the input touches are formed.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::constructors::{thermal_tail, thermal_weights};
use crate::fock::{thermal_cutoff, MixedState, PureState, SplitterBlocks};
use crate::C64;

/// Splitter phase used unless a scenario overrides it.
pub const DEFAULT_VARPHI: f64 = FRAC_PI_2;

/// Largest Hilbert-space dimension for which dense output operators are built.
pub const DENSE_DIM_LIMIT: usize = 3000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScenario {
    pub eta: f64,
    pub varphi: f64,
    pub n_b: f64,
    pub present: bool,
}

impl TargetScenario {
    pub fn present(eta: f64, n_b: f64) -> Self {
        Self {
            eta,
            varphi: DEFAULT_VARPHI,
            n_b,
            present: true,
        }
    }

    pub fn absent(n_b: f64) -> Self {
        Self {
            eta: 0.0,
            varphi: DEFAULT_VARPHI,
            n_b,
            present: false,
        }
    }

    pub fn with_varphi(mut self, varphi: f64) -> Self {
        self.varphi = varphi;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidParameter(format!("reflectivity {}", self.eta)));
        }
        if !(self.n_b >= 0.0 && self.n_b.is_finite()) {
            return Err(Error::InvalidParameter(format!("thermal mean {}", self.n_b)));
        }
        if !self.varphi.is_finite() {
            return Err(Error::InvalidParameter("non-finite splitter phase".into()));
        }
        Ok(())
    }

    pub fn theta(&self) -> f64 {
        2.0 * self.eta.asin()
    }

    /// Parameter regimes where the weak-reflection picture is questionable.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.eta > 0.1 {
            w.push(format!("eta = {} is outside the weak-reflection regime", self.eta));
        }
        let split = self.eta * self.eta * self.n_b;
        if split > 1e-2 {
            w.push(format!("eta^2 n_b = {split:.3e} is not small"));
        }
        w
    }
}

/// Gaussian Rényi-2 mutual information between the two split thermal ports.
pub fn renyi2_mutual_info(eta: f64, n_b: f64) -> f64 {
    let e2 = eta * eta;
    (2.0 * e2 * (1.0 - e2) * n_b * n_b / (1.0 + 2.0 * n_b)).ln_1p()
}

/// Splitter columns and thermal weights for one `(η, φ, N_b)` and signal dimension.
///
/// Reusable across inputs sharing the signal dimension, which keeps repeated
/// evaluations (optimizer candidates, finite differences) cheap.
#[derive(Debug, Clone)]
pub struct ChannelKernel {
    eta: f64,
    varphi: f64,
    n_b: f64,
    signal_dim: usize,
    weights: Vec<f64>,
    thermal_tail: f64,
    cols: Vec<DMatrix<C64>>,
    dcols: Option<Vec<DMatrix<C64>>>,
}

impl ChannelKernel {
    /// Negative `eta` is accepted so that differences can straddle `η = 0`.
    /// With `derivative` set, `∂/∂η` of every column is stored as well.
    pub fn new(
        eta: f64,
        varphi: f64,
        n_b: f64,
        signal_dim: usize,
        tail_tolerance: f64,
        derivative: bool,
    ) -> Result<Self> {
        if eta.is_nan() || eta.abs() > 1.0 || (derivative && eta.abs() == 1.0) {
            return Err(Error::InvalidParameter(format!("reflectivity {eta}")));
        }
        if !(n_b >= 0.0 && n_b.is_finite()) {
            return Err(Error::InvalidParameter(format!("thermal mean {n_b}")));
        }
        if signal_dim == 0 {
            return Err(Error::Dimension("empty signal mode".into()));
        }
        let k = thermal_cutoff(n_b, tail_tolerance);
        let weights = thermal_weights(n_b, k);
        let tail = thermal_tail(n_b, k);
        if tail > tail_tolerance {
            return Err(Error::Truncation {
                what: "thermal background".into(),
                cutoff: k,
                tail,
                tolerance: tail_tolerance,
            });
        }
        let max_t = signal_dim - 1 + k;
        let blocks = SplitterBlocks::new(max_t);
        let theta = 2.0 * eta.asin();
        let cols = (0..=max_t)
            .map(|t| blocks.columns(t, theta, varphi, signal_dim))
            .collect();
        let dcols = derivative.then(|| {
            let dtheta = 2.0 / (1.0 - eta * eta).sqrt();
            (0..=max_t)
                .map(|t| blocks.column_derivatives(t, theta, varphi, signal_dim) * C64::new(dtheta, 0.0))
                .collect()
        });
        Ok(Self {
            eta,
            varphi,
            n_b,
            signal_dim,
            weights,
            thermal_tail: tail,
            cols,
            dcols,
        })
    }

    pub fn for_scenario(scenario: &TargetScenario, signal_dim: usize, tail_tolerance: f64) -> Result<Self> {
        scenario.validate()?;
        let eta = if scenario.present { scenario.eta } else { 0.0 };
        Self::new(eta, scenario.varphi, scenario.n_b, signal_dim, tail_tolerance, false)
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn varphi(&self) -> f64 {
        self.varphi
    }

    pub fn n_b(&self) -> f64 {
        self.n_b
    }

    pub fn signal_dim(&self) -> usize {
        self.signal_dim
    }

    /// Largest thermal photon number kept.
    pub fn thermal_cutoff(&self) -> usize {
        self.weights.len() - 1
    }

    /// Dimension of the returned mode, which holds every reachable count.
    pub fn returned_dim(&self) -> usize {
        self.signal_dim + self.thermal_cutoff()
    }

    pub fn apply(self: &Arc<Self>, input: &PureState) -> Result<ChannelOutput> {
        if input.num_modes() != 2 {
            return Err(Error::Dimension(format!(
                "channel input needs modes (a, c), got {} modes",
                input.num_modes()
            )));
        }
        let (da, dc) = (input.dims()[0], input.dims()[1]);
        if da > self.signal_dim {
            return Err(Error::Dimension(format!(
                "signal dimension {da} exceeds kernel dimension {}",
                self.signal_dim
            )));
        }
        let mut psi = DMatrix::<C64>::zeros(self.signal_dim, dc);
        for na in 0..da {
            for nc in 0..dc {
                psi[(na, nc)] = input.amplitudes()[na * dc + nc];
            }
        }
        Ok(ChannelOutput {
            kernel: Arc::clone(self),
            psi,
            input_tail: input.tail_mass(),
        })
    }
}

/// Returned-mode and idler state after the channel.
#[derive(Debug, Clone)]
pub struct ChannelOutput {
    kernel: Arc<ChannelKernel>,
    psi: DMatrix<C64>,
    input_tail: f64,
}

/// One term of the output ensemble: weight, first returned-mode count, and the
/// (returned × idler) amplitude slab starting at that count.
struct Branch<'a> {
    weight: f64,
    m0: usize,
    slab: &'a DMatrix<C64>,
    dslab: Option<&'a DMatrix<C64>>,
}

impl ChannelOutput {
    pub fn kernel(&self) -> &ChannelKernel {
        &self.kernel
    }

    pub fn returned_dim(&self) -> usize {
        self.kernel.returned_dim()
    }

    pub fn idler_dim(&self) -> usize {
        self.psi.ncols()
    }

    /// Thermal mass dropped beyond the background cutoff.
    pub fn thermal_tail(&self) -> f64 {
        self.kernel.thermal_tail
    }

    /// Thermal and input truncation losses combined.
    pub fn tail_mass(&self) -> f64 {
        1.0 - (1.0 - self.kernel.thermal_tail) * (1.0 - self.input_tail)
    }

    fn for_each_branch(&self, derivative: bool, mut f: impl FnMut(Branch<'_>)) -> Result<()> {
        let kern = &*self.kernel;
        let dcols = match (derivative, &kern.dcols) {
            (false, _) => None,
            (true, Some(d)) => Some(d),
            (true, None) => {
                return Err(Error::InvalidParameter(
                    "channel kernel was built without derivatives".into(),
                ))
            }
        };
        let da = kern.signal_dim;
        let dc = self.psi.ncols();
        let mut slab = DMatrix::<C64>::zeros(da, dc);
        let mut dslab = DMatrix::<C64>::zeros(da, dc);
        for (j, &p) in kern.weights.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for k in 0..da + j {
                let na_lo = k.saturating_sub(j);
                let rows = da - na_lo;
                let mut any = false;
                for r in 0..rows {
                    let na = na_lo + r;
                    let u = kern.cols[na + j][(k, na)];
                    let du = dcols.map(|d| d[na + j][(k, na)]).unwrap_or_default();
                    for nc in 0..dc {
                        let z = self.psi[(na, nc)];
                        slab[(r, nc)] = u * z;
                        dslab[(r, nc)] = du * z;
                        any |= slab[(r, nc)] != C64::new(0.0, 0.0) || dslab[(r, nc)] != C64::new(0.0, 0.0);
                    }
                }
                if !any {
                    continue;
                }
                let s = slab.rows(0, rows).into_owned();
                let ds = dcols.map(|_| dslab.rows(0, rows).into_owned());
                f(Branch {
                    weight: p,
                    m0: na_lo + j - k,
                    slab: &s,
                    dslab: ds.as_ref(),
                });
            }
        }
        Ok(())
    }

    pub fn trace(&self) -> f64 {
        let mut t = 0.0;
        self.for_each_branch(false, |b| t += b.weight * b.slab.norm_squared())
            .expect("plain branches");
        t
    }

    /// `⟨n_b⟩` of the returned mode.
    pub fn returned_mean_photons(&self) -> f64 {
        let mut n = 0.0;
        self.for_each_branch(false, |b| {
            for (r, row) in b.slab.row_iter().enumerate() {
                n += b.weight * (b.m0 + r) as f64 * row.norm_squared();
            }
        })
        .expect("plain branches");
        n
    }

    /// Reduced idler state.
    pub fn idler_state(&self) -> Result<MixedState> {
        let dc = self.idler_dim();
        let mut op = DMatrix::<C64>::zeros(dc, dc);
        self.for_each_branch(false, |b| {
            op += b.slab.transpose() * b.slab.map(|z| z.conj()) * C64::new(b.weight, 0.0);
        })?;
        Ok(MixedState::new(vec![dc], op)?.with_tail_mass(self.tail_mass()))
    }

    fn check_dense(&self) -> Result<usize> {
        let dim = self.returned_dim() * self.idler_dim();
        if dim > DENSE_DIM_LIMIT {
            return Err(Error::Config(format!(
                "dense output of dimension {dim} exceeds the limit {DENSE_DIM_LIMIT}"
            )));
        }
        Ok(dim)
    }

    fn dense_accumulate(&self, derivative: bool) -> Result<DMatrix<C64>> {
        let dim = self.check_dense()?;
        let dc = self.idler_dim();
        let mut op = DMatrix::<C64>::zeros(dim, dim);
        self.for_each_branch(derivative, |b| {
            let rows = b.slab.nrows();
            let flat = |s: &DMatrix<C64>| -> Vec<C64> {
                let mut v = Vec::with_capacity(rows * dc);
                for r in 0..rows {
                    v.extend(s.row(r).iter());
                }
                v
            };
            let v = flat(b.slab);
            let off = b.m0 * dc;
            let w = C64::new(b.weight, 0.0);
            match b.dslab {
                None => {
                    for (x, vx) in v.iter().enumerate() {
                        for (y, vy) in v.iter().enumerate() {
                            op[(off + x, off + y)] += w * vx * vy.conj();
                        }
                    }
                }
                Some(ds) => {
                    let dv = flat(ds);
                    for x in 0..v.len() {
                        for y in 0..v.len() {
                            op[(off + x, off + y)] += w * (dv[x] * v[y].conj() + v[x] * dv[y].conj());
                        }
                    }
                }
            }
        })?;
        Ok(op)
    }

    /// Dense state on (returned, idler); fails beyond [`DENSE_DIM_LIMIT`].
    pub fn reduced_state(&self) -> Result<MixedState> {
        let op = self.dense_accumulate(false)?;
        Ok(MixedState::new(vec![self.returned_dim(), self.idler_dim()], op)?
            .with_tail_mass(self.tail_mass()))
    }

    /// Dense `∂ρ/∂η` on (returned, idler); needs a kernel built with derivatives.
    pub fn reduced_derivative(&self) -> Result<DMatrix<C64>> {
        self.dense_accumulate(true)
    }

    /// First and second moments of `M = e^{−iφ_c} b†c + e^{iφ_c} c†b`.
    ///
    /// Ladder operators act on the untruncated space, so the moments are exact
    /// for the stored ensemble.
    pub fn receiver_moments(&self, combiner_phase: f64) -> (f64, f64) {
        let dc = self.idler_dim();
        let up = C64::from_polar(1.0, -combiner_phase);
        let down = up.conj();
        let (mut first, mut second) = (0.0, 0.0);
        self.for_each_branch(false, |b| {
            let rows = b.slab.nrows();
            // Image rows m0−1 ..= m0+rows and idler counts 0 ..= dc.
            let mut img = DMatrix::<C64>::zeros(rows + 2, dc + 1);
            for r in 0..rows {
                let m = b.m0 + r;
                for nc in 0..dc {
                    let z = b.slab[(r, nc)];
                    if z == C64::new(0.0, 0.0) {
                        continue;
                    }
                    if nc > 0 {
                        let f = (((m + 1) * nc) as f64).sqrt();
                        img[(r + 2, nc - 1)] += up * f * z;
                    }
                    if m > 0 {
                        let f = ((m * (nc + 1)) as f64).sqrt();
                        img[(r, nc + 1)] += down * f * z;
                    }
                }
            }
            let mut overlap = C64::new(0.0, 0.0);
            for r in 0..rows {
                for nc in 0..dc {
                    overlap += b.slab[(r, nc)].conj() * img[(r + 1, nc)];
                }
            }
            first += b.weight * overlap.re;
            second += b.weight * img.norm_squared();
        })
        .expect("plain branches");
        (first, second)
    }
}

/// Channel output with the target present at `scenario.eta`.
pub fn apply_present(input: &PureState, scenario: &TargetScenario, tail_tolerance: f64) -> Result<ChannelOutput> {
    scenario.validate()?;
    let kernel = ChannelKernel::new(
        scenario.eta,
        scenario.varphi,
        scenario.n_b,
        input.dims().first().copied().unwrap_or(1),
        tail_tolerance,
        false,
    )?;
    Arc::new(kernel).apply(input)
}

/// Thermal background alone in the returned mode, idler untouched.
pub fn apply_absent(input: &PureState, scenario: &TargetScenario, tail_tolerance: f64) -> Result<ChannelOutput> {
    let absent = TargetScenario {
        present: false,
        ..*scenario
    };
    absent.validate()?;
    let kernel = ChannelKernel::for_scenario(&absent, input.dims().first().copied().unwrap_or(1), tail_tolerance)?;
    Arc::new(kernel).apply(input)
}

/// Dispatches on `scenario.present`.
pub fn apply(input: &PureState, scenario: &TargetScenario, tail_tolerance: f64) -> Result<ChannelOutput> {
    if scenario.present {
        apply_present(input, scenario, tail_tolerance)
    } else {
        apply_absent(input, scenario, tail_tolerance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{thermal_state, Expectation, ModeOperator, ModeTransform, Observable};
    use crate::states::{build_nphoton, build_tmsv_for_budget, EnergyBudget, NPhotonState};

    fn random_input(da: usize, dc: usize, seed: u64) -> PureState {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let amps = (0..da * dc)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        PureState::new(vec![da, dc], amps).unwrap().normalized()
    }

    /// Thermal mixture evolved with the generic three-mode splitter.
    fn brute_force(input: &PureState, eta: f64, varphi: f64, n_b: f64, tol: f64, dims: &[usize]) -> DMatrix<C64> {
        let k = thermal_cutoff(n_b, tol);
        let p = thermal_weights(n_b, k);
        let (da, dc) = (input.dims()[0], input.dims()[1]);
        let mut acc = DMatrix::<C64>::zeros(dims[0] * dims[1], dims[0] * dims[1]);
        for (j, w) in p.iter().enumerate() {
            // Order modes (a, b, c) so the splitter acts on neighbours.
            let mut amps = vec![C64::new(0.0, 0.0); da * (k + 1) * dc];
            for na in 0..da {
                for nc in 0..dc {
                    amps[(na * (k + 1) + j) * dc + nc] = input.amplitude(&[na, nc]);
                }
            }
            let three = PureState::new(vec![da, k + 1, dc], amps).unwrap();
            let out = three.beam_splitter((0, 1), 2.0 * eta.asin(), varphi).unwrap();
            let red = out.reduced(&[1, 2]).unwrap();
            let red = red.embed(&[dims[0].max(red.dims()[0]), dims[1]]).unwrap();
            let n = dims[0] * dims[1];
            let sub = red.matrix().view((0, 0), (n, n)).into_owned();
            acc += sub * C64::new(*w, 0.0);
        }
        acc
    }

    #[test]
    fn sectors_match_three_mode_evolution() {
        let input = random_input(3, 2, 7);
        let scen = TargetScenario::present(0.4, 0.3).with_varphi(0.9);
        let out = apply_present(&input, &scen, 1e-6).unwrap();
        let rho = out.reduced_state().unwrap();
        let reference = brute_force(&input, 0.4, 0.9, 0.3, 1e-6, rho.dims());
        assert!((rho.matrix() - reference).norm() < 1e-12);
    }

    #[test]
    fn zero_reflectivity_keeps_vacuum_and_idler() {
        let input = random_input(3, 3, 1);
        let out = apply_present(&input, &TargetScenario::present(0.0, 0.0), 1e-10).unwrap();
        assert!(out.returned_mean_photons().abs() < 1e-15);
        let idler = out.idler_state().unwrap();
        let expected = input.reduced(&[1]).unwrap();
        assert!((idler.matrix() - expected.matrix()).norm() < 1e-14);
    }

    #[test]
    fn full_reflection_returns_the_photon() {
        let input = build_nphoton(&NPhotonState::new(vec![1.0, 0.0]).unwrap()).unwrap();
        let out = apply_present(&input, &TargetScenario::present(1.0, 0.0), 1e-10).unwrap();
        assert!((out.returned_mean_photons() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn returned_flux_bookkeeping() {
        let tol = 1e-14;
        let eta: f64 = 1e-3;
        let input = build_nphoton(&NPhotonState::all_signal(4).unwrap()).unwrap();
        let out = apply_present(&input, &TargetScenario::present(eta, 1.0), tol).unwrap();
        let expected = eta * eta * 4.0 + (1.0 - eta * eta) * 1.0;
        assert!((out.returned_mean_photons() - expected).abs() < 1e-9);
        // Truncated background: the identity holds against its own mean.
        let input = random_input(4, 3, 3);
        let n_a = input
            .expectation(&Observable::monomial(vec![ModeOperator::number(0)]))
            .unwrap()
            .re;
        let out = apply_present(&input, &TargetScenario::present(0.2, 0.7), 1e-8).unwrap();
        let th = thermal_state(0.7, out.kernel().thermal_cutoff(), 1e-8).unwrap();
        let n_th = th
            .expectation(&Observable::monomial(vec![ModeOperator::number(0)]))
            .unwrap()
            .re;
        let expected = 0.04 * n_a * th.trace().re + 0.96 * n_th;
        assert!((out.returned_mean_photons() - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_reflectivity_equals_absent_target() {
        let input = random_input(3, 3, 11);
        let scen = TargetScenario::present(0.0, 0.8);
        let present = apply_present(&input, &scen, 1e-8).unwrap().reduced_state().unwrap();
        let absent = apply_absent(&input, &scen, 1e-8).unwrap().reduced_state().unwrap();
        assert!(present.trace_distance(&absent).unwrap() < 1e-12);
        let th = thermal_state(0.8, thermal_cutoff(0.8, 1e-8), 1e-8).unwrap();
        let product = th.tensor(&input.reduced(&[1]).unwrap());
        assert!(absent.trace_distance(&product).unwrap() < 1e-12);
    }

    #[test]
    fn idler_marginal_is_untouched() {
        let input = random_input(4, 3, 5);
        let out = apply_present(&input, &TargetScenario::present(0.3, 1.2), 1e-10).unwrap();
        let idler = out.idler_state().unwrap();
        let expected = input.reduced(&[1]).unwrap();
        let kept = C64::new(1.0 - out.thermal_tail(), 0.0);
        assert!((idler.matrix() - expected.matrix() * kept).norm() < 1e-10);
        assert!((out.trace() - (1.0 - out.thermal_tail())).abs() < 1e-12);
    }

    #[test]
    fn absent_target_tmsv_idler_is_thermal() {
        let (tmsv, _) = build_tmsv_for_budget(EnergyBudget::total(4.0), 1e-10).unwrap();
        let out = apply_absent(&tmsv, &TargetScenario::absent(1.0), 1e-10).unwrap();
        let idler = out.idler_state().unwrap();
        let n = idler
            .expectation(&Observable::monomial(vec![ModeOperator::number(0)]))
            .unwrap()
            .re;
        assert!((n - 2.0).abs() < 1e-8);
        let four = build_nphoton(&NPhotonState::all_signal(4).unwrap()).unwrap();
        let out = apply_absent(&four, &TargetScenario::absent(1.0), 1e-14).unwrap();
        assert!((out.returned_mean_photons() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn derivative_matches_central_difference() {
        let input = random_input(3, 2, 9);
        let (eta, h) = (0.25, 1e-5);
        let kern = Arc::new(ChannelKernel::new(eta, 0.4, 0.5, 3, 1e-8, true).unwrap());
        let d = kern.apply(&input).unwrap().reduced_derivative().unwrap();
        let at = |e: f64| {
            let k = Arc::new(ChannelKernel::new(e, 0.4, 0.5, 3, 1e-8, false).unwrap());
            k.apply(&input).unwrap().reduced_state().unwrap().into_matrix()
        };
        let fd = (at(eta + h) - at(eta - h)) / C64::new(2.0 * h, 0.0);
        assert!((d - fd).norm() < 1e-8);
    }

    #[test]
    fn renyi2_values() {
        assert_eq!(renyi2_mutual_info(0.0, 3.0), 0.0);
        assert_eq!(renyi2_mutual_info(0.5, 0.0), 0.0);
        let v = renyi2_mutual_info(1e-3, 1.0);
        assert!((v - 6.667e-7).abs() < 1e-10);
    }

    #[test]
    fn scenario_checks() {
        assert!(TargetScenario::present(1.2, 0.0).validate().is_err());
        assert!(TargetScenario::present(0.1, -1.0).validate().is_err());
        assert!(TargetScenario::present(1e-3, 1.0).warnings().is_empty());
        assert_eq!(TargetScenario::present(0.5, 1.0).warnings().len(), 2);
        let big = random_input(50, 50, 2);
        let out = apply_present(&big, &TargetScenario::present(0.1, 1.0), 1e-10).unwrap();
        assert!(matches!(out.reduced_state(), Err(Error::Config(_))));
    }
}
