//! Quantum Fisher information for reflectivity sensing.
//!
//! Pure-state formulas work directly with the splitter generator
//! `K = a†b e^{iφ} − b†a e^{−iφ}`, for which `∂_η|ψ⟩ = K|ψ⟩` at `η = 0`.
//! Mixed outputs use the spectral formula
//! `H = 2 Σ |⟨φ_n|∂ρ|φ_m⟩|² / (λ_n + λ_m)` over pairs above an eigenvalue cut.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelKernel, DEFAULT_VARPHI};
use crate::error::{Error, Result};
use crate::fock::constructors::{thermal_tail, thermal_weights};
use crate::fock::{
    flat_index, occupation, thermal_cutoff, Expectation, MixedState, ModeOperator, ModeTransform,
    Observable, PureState,
};
use crate::states::{CoherentSqueezedParams, NPhotonState};
use crate::C64;

/// Relative eigenvalue floor applied when no explicit cut is given.
pub const DEFAULT_RELATIVE_EIGEN_CUT: f64 = 1e-12;

/// Reflectivity at which the vacuum-background loss QFI is evaluated.
///
/// At `η = 0` the returned mode of `|N, 0⟩` is exactly vacuum and the
/// derivative of the output vanishes, while the QFI tends to `4N` as
/// `η → 0⁺`; a small positive `η` with the exact derivative resolves the limit.
pub const LOSS_ETA: f64 = 1e-4;

/// Default finite-difference step in `η`.
pub const DEFAULT_FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QfiMethod {
    PureReflectivity,
    PhaseInterferometer,
    CoherentAnalytic,
    NPhotonAnalytic,
    MixedSpectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeMode {
    /// `tr_a[G, |ψ⟩⟨ψ| ⊗ ρ_th]` at `η = 0`.
    FirstOrder,
    /// Central differences of the exact channel about `η = 0`.
    FiniteDiff,
    /// Exact `∂ρ/∂η` at a nonzero reflectivity.
    Exact,
}

impl DerivativeMode {
    pub fn name(&self) -> &'static str {
        match self {
            DerivativeMode::FirstOrder => "first-order",
            DerivativeMode::FiniteDiff => "finite-diff",
            DerivativeMode::Exact => "exact",
        }
    }
}

impl fmt::Display for DerivativeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DerivativeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first-order" => Ok(DerivativeMode::FirstOrder),
            "finite-diff" => Ok(DerivativeMode::FiniteDiff),
            "exact" => Ok(DerivativeMode::Exact),
            other => Err(Error::Config(format!(
                "unknown derivative mode '{other}' (expected first-order or finite-diff)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QfiResult {
    pub value: f64,
    pub method: QfiMethod,
    pub derivative_mode: Option<DerivativeMode>,
    pub eigen_cut: Option<f64>,
    /// Eigenpairs left out because `λ_n + λ_m` fell below the cut.
    pub skipped_pairs: usize,
    /// `Σ |⟨φ_n|∂ρ|φ_m⟩|²` over the skipped pairs.
    pub skipped_weight: f64,
}

impl QfiResult {
    fn plain(value: f64, method: QfiMethod) -> Self {
        Self {
            value,
            method,
            derivative_mode: None,
            eigen_cut: None,
            skipped_pairs: 0,
            skipped_weight: 0.0,
        }
    }

    fn with_mode(mut self, mode: DerivativeMode) -> Self {
        self.derivative_mode = Some(mode);
        self
    }
}

fn check_two_modes(state: &PureState) -> Result<()> {
    if state.num_modes() != 2 {
        return Err(Error::Dimension(format!(
            "two-mode state expected, got {} modes",
            state.num_modes()
        )));
    }
    Ok(())
}

/// `K|ψ⟩` with `K = a†b e^{iφ} − b†a e^{−iφ}`, in dimensions padded by one.
pub(crate) fn apply_generator(state: &PureState, varphi: f64) -> Result<PureState> {
    check_two_modes(state)?;
    let dims = state.dims();
    let out_dims = vec![dims[0] + 1, dims[1] + 1];
    let mut out = vec![C64::new(0.0, 0.0); out_dims[0] * out_dims[1]];
    let up = C64::from_polar(1.0, varphi);
    let mut occ = [0usize; 2];
    for (i, z) in state.amplitudes().iter().enumerate() {
        if *z == C64::new(0.0, 0.0) {
            continue;
        }
        occupation(dims, i, &mut occ);
        let [na, nb] = occ;
        if nb > 0 {
            let f = (((na + 1) * nb) as f64).sqrt();
            out[flat_index(&out_dims, &[na + 1, nb - 1]).unwrap()] += up * f * z;
        }
        if na > 0 {
            let f = ((na * (nb + 1)) as f64).sqrt();
            out[flat_index(&out_dims, &[na - 1, nb + 1]).unwrap()] -= up.conj() * f * z;
        }
    }
    PureState::new(out_dims, out)
}

/// `4(⟨∂ψ|∂ψ⟩ − |⟨ψ|∂ψ⟩|²)` for a possibly unnormalized `ψ`.
fn pure_qfi(psi: &PureState, dpsi: &PureState) -> Result<f64> {
    let norm = psi.norm_sqr();
    let overlap = psi.inner(dpsi)?;
    let value = 4.0 * (dpsi.norm_sqr() / norm - overlap.norm_sqr() / (norm * norm));
    Ok(value.max(0.0))
}

/// Reflectivity QFI of a two-mode pure state at `η = 0`.
pub fn qfi_pure_reflectivity(state: &PureState, varphi: f64) -> Result<QfiResult> {
    let k = apply_generator(state, varphi)?;
    Ok(QfiResult::plain(pure_qfi(state, &k)?, QfiMethod::PureReflectivity))
}

/// QFI of the interferometer phase `φ` for `e^{iφ(n_a − n_b)} B(π/2, varphi + π/2)|ψ⟩`.
///
/// The state derivative is taken numerically at `φ = 0` by Richardson-extrapolated
/// central differences.
pub fn qfi_phase_mzi(state: &PureState, varphi: f64) -> Result<QfiResult> {
    check_two_modes(state)?;
    let mixed = state.beam_splitter((0, 1), FRAC_PI_2, varphi + FRAC_PI_2)?;
    let at = |phi: f64| -> Result<PureState> { mixed.phase_shift(0, phi)?.phase_shift(1, -phi) };
    let diff = |h: f64| -> Result<Vec<C64>> {
        let p = at(h)?;
        let m = at(-h)?;
        Ok(p.amplitudes()
            .iter()
            .zip(m.amplitudes())
            .map(|(x, y)| (x - y) / (2.0 * h))
            .collect())
    };
    let h = 1e-4;
    let coarse = diff(h)?;
    let fine = diff(h / 2.0)?;
    let d: Vec<C64> = fine
        .iter()
        .zip(&coarse)
        .map(|(f, c)| (4.0 * f - c) / 3.0)
        .collect();
    let dpsi = PureState::new(mixed.dims().to_vec(), d)?;
    Ok(QfiResult::plain(pure_qfi(&mixed, &dpsi)?, QfiMethod::PhaseInterferometer))
}

/// Closed form for a coherent signal `|α⟩` and an arbitrary single-mode state in
/// the other port: `4[⟨b†b⟩ + 2|α|² ΔX²_{Θ+π/2}]` with `Θ = arg α − φ`.
pub fn qfi_coherent_analytic(alpha: C64, other: &impl Expectation, varphi: f64) -> Result<QfiResult> {
    let theta = alpha.arg() - varphi;
    let x = ModeOperator::quadrature(0, theta + FRAC_PI_2);
    let n = other.expectation(&Observable::monomial(vec![ModeOperator::number(0)]))?.re;
    let x1 = other.expectation(&Observable::monomial(vec![x]))?.re;
    let x2 = other.expectation(&Observable::monomial(vec![x, x]))?.re;
    let value = 4.0 * (n + 2.0 * alpha.norm_sqr() * (x2 - x1 * x1));
    Ok(QfiResult::plain(value, QfiMethod::CoherentAnalytic))
}

/// The same closed form with squeezed-vacuum moments written out.
pub fn qfi_coherent_squeezed(params: &CoherentSqueezedParams, varphi: f64) -> QfiResult {
    let r = params.r;
    let angle = params.big_theta(varphi) + FRAC_PI_2;
    let var = ((2.0 * r).cosh() - (2.0 * r).sinh() * (2.0 * angle - params.chi).cos()) / 2.0;
    let value = 4.0 * (r.sinh().powi(2) + 2.0 * params.alpha.norm_sqr() * var);
    QfiResult::plain(value, QfiMethod::CoherentAnalytic)
}

/// Closed-form thermal-noise QFI of an N-photon state at first order in `η`.
///
/// Evaluated on the signal-count amplitudes `b_k` (`k` signal photons):
/// `4/(1+N_b) Σ_k (k+1) b²_{k+1} b²_k / (b²_k + b²_{k+1} N_b/(1+N_b))`.
/// Terms with `b_k = b_{k+1} = 0` vanish; at `N_b = 0` a term with `b_k = 0`
/// takes its limit `(k+1) b²_{k+1}`.
pub fn qfi_nphoton_analytic(state: &NPhotonState, n_b: f64) -> QfiResult {
    let b: Vec<f64> = state.signal_major().iter().map(|x| x * x).collect();
    let ratio = n_b / (1.0 + n_b);
    let mut sum = 0.0;
    for k in 0..b.len() - 1 {
        let (lo, hi) = (b[k], b[k + 1]);
        let den = lo + hi * ratio;
        if den > 0.0 {
            sum += (k + 1) as f64 * hi * lo / den;
        } else if n_b == 0.0 {
            sum += (k + 1) as f64 * hi;
        }
    }
    QfiResult::plain(4.0 / (1.0 + n_b) * sum, QfiMethod::NPhotonAnalytic)
}

/// Eigendecomposition of a density operator, block by block.
///
/// Blocks are the connected components of the operator's nonzero pattern, so
/// number-conserving states are diagonalized sector by sector and tiny
/// eigenvalues are not polluted by rounding from unrelated sectors.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    dim: usize,
    blocks: Vec<SpectralBlock>,
}

#[derive(Debug, Clone)]
struct SpectralBlock {
    indices: Vec<usize>,
    values: Vec<f64>,
    vectors: DMatrix<C64>,
}

impl SpectralDecomposition {
    pub fn new(rho: &MixedState) -> Self {
        let op = rho.matrix();
        let n = op.nrows();
        let mut label = vec![usize::MAX; n];
        let mut blocks = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let id = blocks.len();
            let mut members = vec![start];
            label[start] = id;
            let mut head = 0;
            while head < members.len() {
                let i = members[head];
                head += 1;
                for j in 0..n {
                    if label[j] == usize::MAX
                        && (op[(i, j)] != C64::new(0.0, 0.0) || op[(j, i)] != C64::new(0.0, 0.0))
                    {
                        label[j] = id;
                        members.push(j);
                    }
                }
            }
            members.sort_unstable();
            let sub = DMatrix::from_fn(members.len(), members.len(), |r, c| op[(members[r], members[c])]);
            let eig = SymmetricEigen::new(sub);
            blocks.push(SpectralBlock {
                indices: members,
                values: eig.eigenvalues.iter().copied().collect(),
                vectors: eig.eigenvectors,
            });
        }
        Self { dim: n, blocks }
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.values.iter().copied()).collect()
    }

    /// Eigenvectors as columns, in the order of [`SpectralDecomposition::eigenvalues`].
    pub fn eigenvectors(&self) -> DMatrix<C64> {
        let mut v = DMatrix::<C64>::zeros(self.dim, self.dim);
        let mut col = 0;
        for b in &self.blocks {
            for c in 0..b.values.len() {
                for (r, &i) in b.indices.iter().enumerate() {
                    v[(i, col)] = b.vectors[(r, c)];
                }
                col += 1;
            }
        }
        v
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().into_iter().fold(0.0, f64::max)
    }
}

/// Spectral QFI of `rho0` with derivative `drho`.
///
/// Pairs with `λ_n + λ_m ≤ eigen_cut` are skipped and reported; the default cut
/// is `1e-12` times the largest eigenvalue.
pub fn qfi_mixed_spectral(rho0: &MixedState, drho: &DMatrix<C64>, eigen_cut: Option<f64>) -> Result<QfiResult> {
    let n = rho0.matrix().nrows();
    if drho.nrows() != n || drho.ncols() != n {
        return Err(Error::Dimension(format!(
            "derivative is {}x{}, state is {n}x{n}",
            drho.nrows(),
            drho.ncols()
        )));
    }
    let spec = SpectralDecomposition::new(rho0);
    Ok(spectral_sum(&spec, drho, eigen_cut))
}

fn spectral_sum(spec: &SpectralDecomposition, drho: &DMatrix<C64>, eigen_cut: Option<f64>) -> QfiResult {
    let cut = eigen_cut.unwrap_or(DEFAULT_RELATIVE_EIGEN_CUT * spec.max_eigenvalue());
    let mut value = 0.0;
    let mut skipped_pairs = 0;
    let mut skipped_weight = 0.0;
    for a in &spec.blocks {
        for b in &spec.blocks {
            let sub = DMatrix::from_fn(a.indices.len(), b.indices.len(), |r, c| {
                drho[(a.indices[r], b.indices[c])]
            });
            if sub.iter().all(|z| *z == C64::new(0.0, 0.0)) {
                continue;
            }
            let proj = a.vectors.adjoint() * sub * &b.vectors;
            for (i, la) in a.values.iter().enumerate() {
                for (j, lb) in b.values.iter().enumerate() {
                    let w = proj[(i, j)].norm_sqr();
                    if la + lb > cut {
                        value += 2.0 * w / (la + lb);
                    } else if w > 0.0 {
                        skipped_pairs += 1;
                        skipped_weight += w;
                    }
                }
            }
        }
    }
    QfiResult {
        value,
        method: QfiMethod::MixedSpectral,
        derivative_mode: None,
        eigen_cut: Some(cut),
        skipped_pairs,
        skipped_weight,
    }
}

fn input_matrix(input: &PureState) -> Result<DMatrix<C64>> {
    check_two_modes(input)?;
    let (da, dc) = (input.dims()[0], input.dims()[1]);
    Ok(DMatrix::from_row_slice(da, dc, input.amplitudes()))
}

/// `K₁ = tr_a(a† |ψ⟩⟨ψ|)`, an operator on the idler.
fn idler_lowering(psi: &DMatrix<C64>) -> DMatrix<C64> {
    let dc = psi.ncols();
    let mut k1 = DMatrix::<C64>::zeros(dc, dc);
    for n in 1..psi.nrows() {
        let s = (n as f64).sqrt();
        k1 += psi.row(n - 1).transpose() * psi.row(n).map(|z| z.conj()) * C64::new(s, 0.0);
    }
    k1
}

/// Thermal weights padded by one empty level, so `[b, ρ_th]` is representable.
fn padded_thermal(n_b: f64, tail_tolerance: f64) -> Result<Vec<f64>> {
    if !(n_b >= 0.0 && n_b.is_finite()) {
        return Err(Error::InvalidParameter(format!("thermal mean {n_b}")));
    }
    let k = thermal_cutoff(n_b, tail_tolerance);
    let tail = thermal_tail(n_b, k);
    if tail > tail_tolerance {
        return Err(Error::Truncation {
            what: "thermal background".into(),
            cutoff: k,
            tail,
            tolerance: tail_tolerance,
        });
    }
    let mut p = thermal_weights(n_b, k);
    p.push(0.0);
    Ok(p)
}

/// First-order output derivative at `η = 0` and the matching `ρ₀`, on (returned, idler).
///
/// `∂ρ = e^{iφ} [b, ρ_th] ⊗ K₁ + h.c.` with `K₁ = tr_a(a† |ψ⟩⟨ψ|)`; the returned
/// mode keeps one level above the thermal cutoff.
pub fn drho_first_order(
    input: &PureState,
    n_b: f64,
    varphi: f64,
    tail_tolerance: f64,
) -> Result<(MixedState, DMatrix<C64>)> {
    let psi = input_matrix(input)?;
    let p = padded_thermal(n_b, tail_tolerance)?;
    let db = p.len();
    let dc = psi.ncols();
    if db * dc > crate::channel::DENSE_DIM_LIMIT {
        return Err(Error::Config(format!(
            "dense derivative of dimension {} exceeds the limit",
            db * dc
        )));
    }
    let rho_c = &psi.transpose() * psi.map(|z| z.conj());
    let rho_th = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        db,
        p.iter().map(|x| C64::new(*x, 0.0)),
    ));
    let mut comm = DMatrix::<C64>::zeros(db, db);
    for j in 1..db {
        comm[(j - 1, j)] = C64::new((j as f64).sqrt() * (p[j] - p[j - 1]), 0.0);
    }
    let k1 = idler_lowering(&psi);
    let x = comm.kronecker(&k1) * C64::from_polar(1.0, varphi);
    let drho = &x + x.adjoint();
    let rho0 = MixedState::new(vec![db, dc], rho_th.kronecker(&rho_c))?;
    Ok((rho0, drho))
}

/// First-order QFI from the product structure of `ρ₀ = ρ_th ⊗ ρ_c`.
///
/// In the eigenbasis `|j⟩|v_k⟩` the derivative only links `(j−1, k)` with
/// `(j, l)`, giving
/// `H = 4 Σ_{j,k,l} j (p_j − p_{j−1})² |⟨v_k|K₁|v_l⟩|² / (p_{j−1}μ_k + p_j μ_l)`
/// without forming the joint operator. Agrees with [`drho_first_order`] plus
/// [`qfi_mixed_spectral`] at the default cut.
pub fn qfi_first_order_product(input: &PureState, n_b: f64, tail_tolerance: f64) -> Result<QfiResult> {
    let psi = input_matrix(input)?;
    let p = padded_thermal(n_b, tail_tolerance)?;
    let rho_c = &psi.transpose() * psi.map(|z| z.conj());
    let eig = SymmetricEigen::new(rho_c);
    let mu: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let v = eig.eigenvectors;
    let k1 = v.adjoint() * idler_lowering(&psi) * &v;
    let w = k1.map(|z| z.norm_sqr());
    let mu_max = mu.iter().copied().fold(0.0, f64::max);
    let cut = DEFAULT_RELATIVE_EIGEN_CUT * p[0] * mu_max;
    let mut value = 0.0;
    let mut skipped_pairs = 0;
    let mut skipped_weight = 0.0;
    for j in 1..p.len() {
        let dp = p[j] - p[j - 1];
        let pref = j as f64 * dp * dp;
        if pref == 0.0 {
            continue;
        }
        for (k, mk) in mu.iter().enumerate() {
            for (l, ml) in mu.iter().enumerate() {
                let wkl = w[(k, l)];
                if wkl == 0.0 {
                    continue;
                }
                let den = p[j - 1] * mk + p[j] * ml;
                if den > cut {
                    value += 4.0 * pref * wkl / den;
                } else {
                    skipped_pairs += 2;
                    skipped_weight += 2.0 * pref * wkl;
                }
            }
        }
    }
    Ok(QfiResult {
        value,
        method: QfiMethod::MixedSpectral,
        derivative_mode: Some(DerivativeMode::FirstOrder),
        eigen_cut: Some(cut),
        skipped_pairs,
        skipped_weight,
    })
}

/// Output derivative from central differences of the exact channel about `η = 0`.
#[derive(Debug, Clone)]
pub struct FiniteDifference {
    /// Output at `η = 0` on the same dimensions as the derivative.
    pub rho0: MixedState,
    /// Richardson combination `(4 D(h/2) − D(h)) / 3`.
    pub drho: DMatrix<C64>,
    /// `‖D(h/2) − D(h)‖ / ‖drho‖`, the size of the eliminated error term.
    pub richardson_residual: f64,
}

pub fn drho_finite_difference(
    input: &PureState,
    n_b: f64,
    varphi: f64,
    step: f64,
    tail_tolerance: f64,
) -> Result<FiniteDifference> {
    if !(1e-5..=1e-2).contains(&step) {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step {step} outside [1e-5, 1e-2]"
        )));
    }
    check_two_modes(input)?;
    let da = input.dims()[0];
    let output = |eta: f64| -> Result<MixedState> {
        let k = Arc::new(ChannelKernel::new(eta, varphi, n_b, da, tail_tolerance, false)?);
        k.apply(input)?.reduced_state()
    };
    let rho0 = output(0.0)?;
    let central = |h: f64| -> Result<DMatrix<C64>> {
        Ok((output(h)?.into_matrix() - output(-h)?.into_matrix()) / C64::new(2.0 * h, 0.0))
    };
    let coarse = central(step)?;
    let fine = central(step / 2.0)?;
    let drho = (&fine * C64::new(4.0, 0.0) - &coarse) / C64::new(3.0, 0.0);
    let scale = drho.norm();
    let richardson_residual = if scale > 0.0 {
        (&fine - &coarse).norm() / scale
    } else {
        0.0
    };
    if richardson_residual > 1e-2 {
        return Err(Error::Numerical(format!(
            "finite-difference step {step} too coarse (Richardson residual {richardson_residual:.2e})"
        )));
    }
    Ok(FiniteDifference {
        rho0,
        drho,
        richardson_residual,
    })
}

/// Spectral QFI of the channel output at `eta` with the exact derivative.
pub fn qfi_exact(input: &PureState, eta: f64, varphi: f64, n_b: f64, tail_tolerance: f64) -> Result<QfiResult> {
    check_two_modes(input)?;
    let k = Arc::new(ChannelKernel::new(eta, varphi, n_b, input.dims()[0], tail_tolerance, true)?);
    let out = k.apply(input)?;
    let rho = out.reduced_state()?;
    let drho = out.reduced_derivative()?;
    Ok(qfi_mixed_spectral(&rho, &drho, None)?.with_mode(DerivativeMode::Exact))
}

/// Channel QFI about `η = 0` with the chosen derivative.
pub fn qfi_channel(
    input: &PureState,
    n_b: f64,
    varphi: f64,
    mode: DerivativeMode,
    tail_tolerance: f64,
) -> Result<QfiResult> {
    match mode {
        DerivativeMode::FirstOrder => qfi_first_order_product(input, n_b, tail_tolerance),
        DerivativeMode::FiniteDiff => {
            let fd = drho_finite_difference(input, n_b, varphi, DEFAULT_FD_STEP, tail_tolerance)?;
            Ok(qfi_mixed_spectral(&fd.rho0, &fd.drho, None)?.with_mode(mode))
        }
        DerivativeMode::Exact => Err(Error::Config(
            "the exact derivative needs a nonzero reflectivity; use qfi_exact".into(),
        )),
    }
}

/// Pure-loss QFI (vacuum background, transmitted port discarded).
pub fn qfi_loss_scenario(input: &PureState) -> Result<QfiResult> {
    qfi_exact(input, LOSS_ETA, DEFAULT_VARPHI, 0.0, crate::fock::DEFAULT_TAIL_TOLERANCE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{coherent_state, squeezed_vacuum};
    use crate::states::{build_coherent_pair, build_nphoton, build_tmsv_for_budget, EnergyBudget};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(dims: [usize; 2], rng: &mut ChaCha8Rng) -> PureState {
        let amps = (0..dims[0] * dims[1])
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        PureState::new(dims.to_vec(), amps).unwrap().normalized()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn pure_reflectivity_anchors() {
        let vac = PureState::vacuum(vec![2, 2]).unwrap();
        assert_eq!(qfi_pure_reflectivity(&vac, FRAC_PI_2).unwrap().value, 0.0);
        let one = PureState::fock(vec![2, 1], &[1, 0]).unwrap();
        assert!((qfi_pure_reflectivity(&one, FRAC_PI_2).unwrap().value - 4.0).abs() < 1e-14);
        let alpha = C64::new(0.8, 0.6);
        let coh = coherent_state(alpha, 30, 1e-10)
            .unwrap()
            .tensor(&PureState::vacuum(vec![1]).unwrap());
        let h = qfi_pure_reflectivity(&coh, 0.3).unwrap().value;
        assert!((h - 4.0 * alpha.norm_sqr()).abs() < 1e-8);
    }

    #[test]
    fn interferometer_matches_reflectivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let s = random_state([5, 4], &mut rng);
            let varphi = rng.gen_range(0.0..6.0);
            let a = qfi_pure_reflectivity(&s, varphi).unwrap().value;
            let b = qfi_phase_mzi(&s, varphi).unwrap().value;
            assert!(rel(b, a) < 1e-7, "{a} vs {b}");
        }
        let one = PureState::fock(vec![2, 1], &[1, 0]).unwrap();
        assert!((qfi_phase_mzi(&one, FRAC_PI_2).unwrap().value - 4.0).abs() < 1e-9);
    }

    #[test]
    fn coherent_closed_form() {
        let alpha = C64::from_polar(1.1, 0.4);
        let varphi = 0.9;
        let vac = PureState::vacuum(vec![3]).unwrap();
        let h = qfi_coherent_analytic(alpha, &vac, varphi).unwrap().value;
        assert!((h - 4.0 * 1.21).abs() < 1e-12);
        let params = CoherentSqueezedParams::antisqueezed(alpha, 0.5, varphi);
        let sq = squeezed_vacuum(0.5, params.chi, 60, 1e-12).unwrap();
        let from_moments = qfi_coherent_analytic(alpha, &sq, varphi).unwrap().value;
        let expected = 4.0 * (0.5f64.sinh().powi(2) + 1.21 * 1.0f64.exp());
        assert!(rel(from_moments, expected) < 1e-9);
        assert!(rel(qfi_coherent_squeezed(&params, varphi).value, expected) < 1e-12);
        let joint = coherent_state(alpha, 30, 1e-10).unwrap().tensor(&sq);
        let generic = qfi_pure_reflectivity(&joint, varphi).unwrap().value;
        assert!(rel(generic, expected) < 1e-7);
        let zero = qfi_coherent_analytic(C64::new(0.0, 0.0), &sq, varphi).unwrap().value;
        assert!((zero - 4.0 * 0.5f64.sinh().powi(2)).abs() < 1e-9);
    }

    #[test]
    fn nphoton_closed_form_anchors() {
        let h = 0.5f64.sqrt();
        let st = NPhotonState::new(vec![h, h]).unwrap();
        assert!((qfi_nphoton_analytic(&st, 0.0).value - 2.0).abs() < 1e-15);
        let four = NPhotonState::all_signal(4).unwrap();
        assert_eq!(qfi_nphoton_analytic(&four, 0.0).value, 16.0);
        assert_eq!(qfi_nphoton_analytic(&four, 0.5).value, 0.0);
        let st = NPhotonState::from_unnormalized(&[0.7, 0.5, 0.3, 0.2, 0.1]).unwrap();
        let mut last = f64::INFINITY;
        for nb in [0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 50.0, 5000.0] {
            let v = qfi_nphoton_analytic(&st, nb).value;
            assert!(v < last);
            last = v;
        }
        assert!(last < 1e-2);
    }

    #[test]
    fn spectral_pure_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_state([3, 3], &mut rng);
        let k = apply_generator(&s, 0.7).unwrap();
        let s = s.embed(k.dims()).unwrap();
        let v = nalgebra::DVector::from_column_slice(s.amplitudes());
        let dv = nalgebra::DVector::from_column_slice(k.amplitudes());
        let drho = &dv * v.adjoint() + &v * dv.adjoint();
        let h = qfi_mixed_spectral(&s.to_mixed(), &drho, None).unwrap().value;
        let expected = qfi_pure_reflectivity(&s, 0.7).unwrap().value;
        assert!(rel(h, expected) < 1e-7);
        let zero = DMatrix::<C64>::zeros(drho.nrows(), drho.ncols());
        assert_eq!(qfi_mixed_spectral(&s.to_mixed(), &zero, None).unwrap().value, 0.0);
    }

    #[test]
    fn first_order_derivative_properties() {
        // |1,0⟩ alone has no first-order response: the lost port separates the terms.
        let one = build_nphoton(&NPhotonState::new(vec![1.0, 0.0]).unwrap()).unwrap();
        let (_, d) = drho_first_order(&one, 0.0, FRAC_PI_2, 1e-10).unwrap();
        assert_eq!(d.norm(), 0.0);
        let h = 0.5f64.sqrt();
        let split = build_nphoton(&NPhotonState::new(vec![h, h]).unwrap()).unwrap();
        let (_, d) = drho_first_order(&split, 0.0, FRAC_PI_2, 1e-10).unwrap();
        assert!(d.trace().norm() < 1e-15);
        let nonzero = d.iter().filter(|z| z.norm() > 0.0).count();
        assert_eq!(nonzero, 2);
        let rank = SymmetricEigen::new(d.clone())
            .eigenvalues
            .iter()
            .filter(|x| x.abs() > 1e-12)
            .count();
        assert_eq!(rank, 2);
        let vac = PureState::vacuum(vec![2, 2]).unwrap();
        let (_, d) = drho_first_order(&vac, 0.0, FRAC_PI_2, 1e-10).unwrap();
        assert_eq!(d.norm(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_state([3, 3], &mut rng);
        let (_, d) = drho_first_order(&s, 0.7, 0.2, 1e-10).unwrap();
        assert!(d.trace().norm() < 1e-12);
    }

    #[test]
    fn first_order_matches_exact_derivative_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = random_state([3, 2], &mut rng);
        let (rho0, d) = drho_first_order(&s, 0.4, 0.3, 1e-8).unwrap();
        let k = Arc::new(ChannelKernel::new(0.0, 0.3, 0.4, 3, 1e-8, true).unwrap());
        let out = k.apply(&s).unwrap();
        let exact = out.reduced_derivative().unwrap();
        let h1 = qfi_mixed_spectral(&rho0, &d, None).unwrap().value;
        let h2 = qfi_mixed_spectral(&out.reduced_state().unwrap(), &exact, None)
            .unwrap()
            .value;
        assert!(rel(h2, h1) < 1e-9);
    }

    #[test]
    fn structured_first_order_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for nb in [0.0, 0.3, 1.5] {
            let s = random_state([4, 3], &mut rng);
            let (rho0, d) = drho_first_order(&s, nb, FRAC_PI_2, 1e-10).unwrap();
            let dense = qfi_mixed_spectral(&rho0, &d, None).unwrap().value;
            let fast = qfi_first_order_product(&s, nb, 1e-10).unwrap().value;
            assert!(rel(fast, dense) < 1e-9, "{nb}: {fast} vs {dense}");
        }
    }

    #[test]
    fn nphoton_spectral_uses_signal_count_ordering() {
        let st = NPhotonState::from_unnormalized(&[0.2, 0.9, 0.4]).unwrap();
        let s = build_nphoton(&st).unwrap();
        for nb in [0.0, 0.5, 2.0] {
            let (rho0, d) = drho_first_order(&s, nb, FRAC_PI_2, 1e-12).unwrap();
            let spectral = qfi_mixed_spectral(&rho0, &d, None).unwrap().value;
            let analytic = qfi_nphoton_analytic(&st, nb).value;
            assert!(rel(spectral, analytic) < 1e-6, "{nb}: {spectral} vs {analytic}");
        }
    }

    #[test]
    fn closed_forms_for_reference_states() {
        for nb in [0.0, 0.5, 2.0] {
            let (tmsv, _) = build_tmsv_for_budget(EnergyBudget::total(4.0), 1e-12).unwrap();
            let h = qfi_first_order_product(&tmsv, nb, 1e-12).unwrap().value;
            assert!(rel(h, 24.0 / (3.0 + 5.0 * nb)) < 1e-6, "tmsv {nb}: {h}");
            let coh = build_coherent_pair(EnergyBudget::total(4.0), 1e-12).unwrap();
            let h = qfi_first_order_product(&coh, nb, 1e-12).unwrap().value;
            assert!(rel(h, 8.0 / (1.0 + 2.0 * nb)) < 1e-6, "coherent {nb}: {h}");
        }
    }

    #[test]
    fn finite_difference_agrees_with_first_order() {
        let coh = coherent_state(C64::new(0.6, 0.0), 10, 1e-6)
            .unwrap()
            .tensor(&coherent_state(C64::new(0.6, 0.0), 10, 1e-6).unwrap());
        let fd = drho_finite_difference(&coh, 0.2, FRAC_PI_2, 1e-3, 1e-8).unwrap();
        let (_, d1) = drho_first_order(&coh, 0.2, FRAC_PI_2, 1e-8).unwrap();
        let db = fd.rho0.dims()[0];
        let dc = fd.rho0.dims()[1];
        // First-order operator has one padding level; compare on the overlap.
        let n1 = d1.nrows() / dc;
        let rows = db.min(n1) * dc;
        let diff = (fd.drho.view((0, 0), (rows, rows)) - d1.view((0, 0), (rows, rows))).norm();
        assert!(diff < 1e-7, "{diff}");
        assert!(drho_finite_difference(&coh, 0.2, FRAC_PI_2, 1e-6, 1e-8).is_err());
        assert!(fd.drho.trace().norm() < 1e-10);
    }

    #[test]
    fn loss_scenario_anchors() {
        for n in [1usize, 2] {
            let s = build_nphoton(&NPhotonState::all_signal(n).unwrap()).unwrap();
            let h = qfi_loss_scenario(&s).unwrap().value;
            assert!(rel(h, 4.0 * n as f64) < 1e-6, "{n}: {h}");
        }
        let vac = PureState::vacuum(vec![2, 2]).unwrap();
        assert!(qfi_loss_scenario(&vac).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn derivative_mode_names() {
        for m in [DerivativeMode::FirstOrder, DerivativeMode::FiniteDiff, DerivativeMode::Exact] {
            assert_eq!(m.name().parse::<DerivativeMode>().unwrap(), m);
        }
        assert!("second-order".parse::<DerivativeMode>().is_err());
    }
}

#[cfg(test)]
mod properties {
    use super::*;
    use crate::fock::ModeTransform;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn signal_phase_shifts_the_splitter_phase(
            parts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 16)
                .prop_filter("state needs weight", |v| v.iter().any(|(re, im)| re.abs() + im.abs() > 1e-3)),
            varphi in 0.0f64..6.3,
            chi in -3.2f64..3.2,
        ) {
            let amps = parts.iter().map(|&(re, im)| C64::new(re, im)).collect();
            let s = PureState::new(vec![4, 4], amps).unwrap().normalized();
            let h = qfi_pure_reflectivity(&s.phase_shift(0, chi).unwrap(), varphi).unwrap().value;
            let shifted = qfi_pure_reflectivity(&s, varphi - chi).unwrap().value;
            prop_assert!(h >= 0.0);
            prop_assert!((h - shifted).abs() <= 1e-10 * h.max(1.0));
        }

        #[test]
        fn noise_only_lowers_the_closed_form(w in prop::collection::vec(0.0f64..1.0, 5), n_b in 0.0f64..5.0) {
            prop_assume!(w.iter().any(|x| *x > 1e-3));
            let st = NPhotonState::from_unnormalized(&w).unwrap();
            let h = qfi_nphoton_analytic(&st, n_b).value;
            prop_assert!(h >= 0.0);
            prop_assert!(h <= 4.0 * st.mean_signal() / (1.0 + n_b) + 1e-12);
            prop_assert!(qfi_nphoton_analytic(&st, n_b + 0.25).value <= h + 1e-12);
        }
    }
}
