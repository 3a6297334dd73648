//! Two-mode beam splitters built exactly per total-photon-number block.
//!
//! On the block of total photon number `n` the generator
//! `(θ/2)(a†b e^{iφ} − a b† e^{−iφ})` is tridiagonal in the basis
//! `|k, n−k⟩`. Conjugating by `diag(e^{ikφ} i^k)` turns it into `−i(θ/2)S`
//! with `S` real symmetric tridiagonal, so the block unitary is
//! `D V e^{−iθΛ/2} Vᵀ D†` from one real eigendecomposition of `S` per block.

use nalgebra::{DMatrix, SymmetricEigen};

use super::{flat_index, occupation, MixedState, PureState};
use crate::error::{Error, Result};
use crate::C64;

/// θ-independent eigensystems of the per-block symmetric generators.
#[derive(Debug, Clone)]
pub struct SplitterBlocks {
    blocks: Vec<(Vec<f64>, DMatrix<f64>)>,
}

impl SplitterBlocks {
    /// Eigensystems for every total photon number `0..=max_total`.
    pub fn new(max_total: usize) -> Self {
        let blocks = (0..=max_total)
            .map(|n| {
                let dim = n + 1;
                let mut s = DMatrix::<f64>::zeros(dim, dim);
                for k in 0..n {
                    let v = (((k + 1) * (n - k)) as f64).sqrt();
                    s[(k, k + 1)] = v;
                    s[(k + 1, k)] = v;
                }
                let eig = SymmetricEigen::new(s);
                (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
            })
            .collect();
        Self { blocks }
    }

    pub fn max_total(&self) -> usize {
        self.blocks.len() - 1
    }

    /// Block unitary on `|k, n−k⟩`, `k` counting photons in the first mode.
    pub fn unitary(&self, n: usize, theta: f64, varphi: f64) -> DMatrix<C64> {
        self.block(n, theta, varphi, n + 1, false)
    }

    /// The first `ncols` columns of the block unitary.
    pub fn columns(&self, n: usize, theta: f64, varphi: f64, ncols: usize) -> DMatrix<C64> {
        self.block(n, theta, varphi, ncols.min(n + 1), false)
    }

    /// `∂/∂θ` of [`SplitterBlocks::columns`].
    pub fn column_derivatives(&self, n: usize, theta: f64, varphi: f64, ncols: usize) -> DMatrix<C64> {
        self.block(n, theta, varphi, ncols.min(n + 1), true)
    }

    fn block(&self, n: usize, theta: f64, varphi: f64, ncols: usize, deriv: bool) -> DMatrix<C64> {
        let (lambda, v) = &self.blocks[n];
        let dim = n + 1;
        let phases: Vec<C64> = lambda
            .iter()
            .map(|l| {
                let p = C64::from_polar(1.0, -0.5 * theta * l);
                if deriv {
                    p * C64::new(0.0, -0.5 * l)
                } else {
                    p
                }
            })
            .collect();
        let mut u = DMatrix::<C64>::zeros(dim, ncols);
        for k in 0..dim {
            for l in 0..ncols {
                let mut acc = C64::new(0.0, 0.0);
                for m in 0..dim {
                    acc += phases[m] * (v[(k, m)] * v[(l, m)]);
                }
                let d = k as i64 - l as i64;
                let gauge = C64::from_polar(1.0, d as f64 * varphi) * i_pow(d);
                u[(k, l)] = gauge * acc;
            }
        }
        u
    }

    /// All block unitaries `0..=max_total` for one `(θ, φ)`.
    pub fn unitaries(&self, theta: f64, varphi: f64) -> Vec<DMatrix<C64>> {
        (0..self.blocks.len())
            .map(|n| self.unitary(n, theta, varphi))
            .collect()
    }
}

fn i_pow(d: i64) -> C64 {
    match d.rem_euclid(4) {
        0 => C64::new(1.0, 0.0),
        1 => C64::new(0.0, 1.0),
        2 => C64::new(-1.0, 0.0),
        _ => C64::new(0.0, -1.0),
    }
}

/// Unitary mode transformations shared by pure and mixed states.
pub trait ModeTransform: Sized {
    /// Applies `exp[(θ/2)(a_i† a_j e^{iφ} − a_i a_j† e^{−iφ})]`.
    ///
    /// Modes `i` and `j` are enlarged to hold every photon-number block
    /// the input touches, so the map is exactly unitary.
    fn beam_splitter(&self, modes: (usize, usize), theta: f64, varphi: f64) -> Result<Self>;

    /// Applies `e^{iφ n̂}` on `mode`.
    fn phase_shift(&self, mode: usize, phi: f64) -> Result<Self>;
}

pub fn beam_splitter<S: ModeTransform>(
    state: &S,
    modes: (usize, usize),
    theta: f64,
    varphi: f64,
) -> Result<S> {
    state.beam_splitter(modes, theta, varphi)
}

pub fn phase_shift<S: ModeTransform>(state: &S, mode: usize, phi: f64) -> Result<S> {
    state.phase_shift(mode, phi)
}

fn check_pair(dims: &[usize], (i, j): (usize, usize)) -> Result<()> {
    if i == j || i >= dims.len() || j >= dims.len() {
        return Err(Error::Dimension(format!(
            "beam splitter on modes ({i},{j}) of a {}-mode state",
            dims.len()
        )));
    }
    Ok(())
}

fn output_dims(dims: &[usize], (i, j): (usize, usize)) -> Vec<usize> {
    let mut out = dims.to_vec();
    let d = dims[i] + dims[j] - 1;
    out[i] = d;
    out[j] = d;
    out
}

/// Applies the block unitaries to one amplitude vector.
fn apply_pair(
    amps: &[C64],
    dims: &[usize],
    out_dims: &[usize],
    (i, j): (usize, usize),
    blocks: &[DMatrix<C64>],
) -> Vec<C64> {
    let total: usize = out_dims.iter().product();
    let mut out = vec![C64::new(0.0, 0.0); total];
    let mut occ = vec![0; dims.len()];
    for (idx, z) in amps.iter().enumerate() {
        if z.norm_sqr() == 0.0 {
            continue;
        }
        occupation(dims, idx, &mut occ);
        let (ni, nj) = (occ[i], occ[j]);
        let n = ni + nj;
        let u = &blocks[n];
        for k in 0..=n {
            occ[i] = k;
            occ[j] = n - k;
            let o = flat_index(out_dims, &occ).expect("output dims hold the block");
            out[o] += u[(k, ni)] * z;
        }
    }
    out
}

fn pair_blocks(dims: &[usize], (i, j): (usize, usize), theta: f64, varphi: f64) -> Vec<DMatrix<C64>> {
    SplitterBlocks::new(dims[i] + dims[j] - 2).unitaries(theta, varphi)
}

impl ModeTransform for PureState {
    fn beam_splitter(&self, modes: (usize, usize), theta: f64, varphi: f64) -> Result<Self> {
        check_pair(self.dims(), modes)?;
        let out_dims = output_dims(self.dims(), modes);
        let blocks = pair_blocks(self.dims(), modes, theta, varphi);
        let amps = apply_pair(self.amplitudes(), self.dims(), &out_dims, modes, &blocks);
        Ok(PureState::new(out_dims, amps)?.with_tail_mass(self.tail_mass()))
    }

    fn phase_shift(&self, mode: usize, phi: f64) -> Result<Self> {
        if mode >= self.num_modes() {
            return Err(Error::Dimension(format!("phase shift on mode {mode}")));
        }
        let dims = self.dims().to_vec();
        let mut occ = vec![0; dims.len()];
        let amps = self
            .amplitudes()
            .iter()
            .enumerate()
            .map(|(i, z)| {
                occupation(&dims, i, &mut occ);
                z * C64::from_polar(1.0, phi * occ[mode] as f64)
            })
            .collect();
        Ok(PureState::new(dims, amps)?.with_tail_mass(self.tail_mass()))
    }
}

impl ModeTransform for MixedState {
    fn beam_splitter(&self, modes: (usize, usize), theta: f64, varphi: f64) -> Result<Self> {
        let dims = self.dims().to_vec();
        check_pair(&dims, modes)?;
        let out_dims = output_dims(&dims, modes);
        let blocks = pair_blocks(&dims, modes, theta, varphi);
        let rho = self.matrix();
        let d_in = rho.nrows();
        let d_out: usize = out_dims.iter().product();
        // U ρ U† = (U (U ρ)†)†, applying U column by column.
        let mut left = DMatrix::<C64>::zeros(d_out, d_in);
        for c in 0..d_in {
            let col: Vec<C64> = rho.column(c).iter().copied().collect();
            let img = apply_pair(&col, &dims, &out_dims, modes, &blocks);
            left.column_mut(c).copy_from_slice(&img);
        }
        let left_adj = left.adjoint();
        let mut right = DMatrix::<C64>::zeros(d_out, d_out);
        for c in 0..d_out {
            let col: Vec<C64> = left_adj.column(c).iter().copied().collect();
            let img = apply_pair(&col, &dims, &out_dims, modes, &blocks);
            right.column_mut(c).copy_from_slice(&img);
        }
        Ok(MixedState::new(out_dims, right.adjoint())?.with_tail_mass(self.tail_mass()))
    }

    fn phase_shift(&self, mode: usize, phi: f64) -> Result<Self> {
        if mode >= self.num_modes() {
            return Err(Error::Dimension(format!("phase shift on mode {mode}")));
        }
        let dims = self.dims().to_vec();
        let n = self.matrix().nrows();
        let mut occ = vec![0; dims.len()];
        let photons: Vec<f64> = (0..n)
            .map(|i| {
                occupation(&dims, i, &mut occ);
                occ[mode] as f64
            })
            .collect();
        let mut op = self.matrix().clone();
        for r in 0..n {
            for c in 0..n {
                op[(r, c)] *= C64::from_polar(1.0, phi * (photons[r] - photons[c]));
            }
        }
        Ok(MixedState::new(dims, op)?.with_tail_mass(self.tail_mass()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{coherent_state, thermal_state, Expectation, ModeOperator, Observable};
    use std::f64::consts::{FRAC_PI_2, PI};

    /// Taylor-series exponential of the block generator, as an independent oracle.
    fn block_by_series(n: usize, theta: f64, varphi: f64) -> DMatrix<C64> {
        let dim = n + 1;
        let mut g = DMatrix::<C64>::zeros(dim, dim);
        for k in 0..n {
            let s = (((k + 1) * (n - k)) as f64).sqrt() * theta / 2.0;
            g[(k + 1, k)] = C64::from_polar(s, varphi);
            g[(k, k + 1)] = -C64::from_polar(s, -varphi);
        }
        let mut term = DMatrix::<C64>::identity(dim, dim);
        let mut sum = term.clone();
        for m in 1..80 {
            term = &term * &g / C64::new(m as f64, 0.0);
            sum += &term;
        }
        sum
    }

    #[test]
    fn blocks_match_series_exponential() {
        let blocks = SplitterBlocks::new(7);
        for n in 0..=7 {
            for &(theta, varphi) in &[(0.3, 0.0), (1.1, FRAC_PI_2), (2.9, -0.7)] {
                let diff = blocks.unitary(n, theta, varphi) - block_by_series(n, theta, varphi);
                assert!(diff.norm() < 1e-12, "n={n} θ={theta}: {}", diff.norm());
            }
        }
    }

    #[test]
    fn column_derivative_matches_difference() {
        let blocks = SplitterBlocks::new(9);
        let (theta, varphi, h) = (0.37, 0.8, 1e-5);
        let d = blocks.column_derivatives(9, theta, varphi, 4);
        let fd = (blocks.columns(9, theta + h, varphi, 4) - blocks.columns(9, theta - h, varphi, 4))
            / C64::new(2.0 * h, 0.0);
        assert_eq!(d.ncols(), 4);
        let err = (d - fd).norm();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn large_blocks_are_unitary() {
        let blocks = SplitterBlocks::new(160);
        for &n in &[40, 100, 160] {
            let u = blocks.unitary(n, 2e-3, FRAC_PI_2);
            let err = (&u * u.adjoint() - DMatrix::<C64>::identity(n + 1, n + 1)).norm();
            assert!(err < 1e-12, "n={n}: {err}");
        }
    }

    #[test]
    fn zero_angle_is_identity() {
        let psi = coherent_state(C64::new(0.7, 0.2), 20, 1e-10)
            .unwrap()
            .tensor(&PureState::fock(vec![3], &[2]).unwrap());
        let out = psi.beam_splitter((0, 1), 0.0, 0.4).unwrap();
        let back = psi.embed(out.dims()).unwrap();
        let err: f64 = out
            .amplitudes()
            .iter()
            .zip(back.amplitudes())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-14);
    }

    #[test]
    fn single_photon_rotations() {
        let one = PureState::fock(vec![2, 2], &[1, 0]).unwrap();
        let full = one.beam_splitter((0, 1), PI, FRAC_PI_2).unwrap();
        assert!((full.amplitude(&[0, 1]).norm() - 1.0).abs() < 1e-14);
        let half = one.beam_splitter((0, 1), FRAC_PI_2, 0.0).unwrap();
        assert!((half.amplitude(&[1, 0]).norm_sqr() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn reflectivity_is_sine_of_half_angle() {
        let eta: f64 = 0.3;
        let theta = 2.0 * eta.asin();
        let out = PureState::fock(vec![2, 1], &[1, 0])
            .unwrap()
            .beam_splitter((0, 1), theta, 0.9)
            .unwrap();
        assert!((out.amplitude(&[0, 1]).norm() - eta).abs() < 1e-14);
    }

    #[test]
    fn photon_number_and_norm_conserved() {
        let psi = coherent_state(C64::new(1.0, 0.5), 25, 1e-10)
            .unwrap()
            .tensor(&coherent_state(C64::new(-0.4, 0.9), 25, 1e-10).unwrap());
        let out = psi.beam_splitter((0, 1), 1.3, 0.25).unwrap();
        assert!((out.norm_sqr() - psi.norm_sqr()).abs() < 1e-12);
        let total = Observable::new()
            .term(C64::new(1.0, 0.0), vec![ModeOperator::number(0)])
            .term(C64::new(1.0, 0.0), vec![ModeOperator::number(1)]);
        let before = psi.expectation(&total).unwrap();
        let after = out.expectation(&total).unwrap();
        assert!((before - after).norm() < 1e-11);
    }

    #[test]
    fn phase_shift_rotates_coherent_state() {
        let alpha = C64::new(0.9, 0.4);
        let phi = 0.77;
        let s = coherent_state(alpha, 30, 1e-10).unwrap();
        let rotated = s.phase_shift(0, phi).unwrap();
        let target = coherent_state(alpha * C64::from_polar(1.0, phi), 30, 1e-10).unwrap();
        assert!((rotated.fidelity(&target).unwrap() - 1.0).abs() < 1e-10);
        let one = PureState::fock(vec![2], &[1]).unwrap().phase_shift(0, PI).unwrap();
        assert!((one.amplitude(&[1]) - C64::new(-1.0, 0.0)).norm() < 1e-15);
        assert_eq!(s.phase_shift(0, 0.0).unwrap(), s);
    }

    #[test]
    fn mixed_evolution_matches_pure() {
        let psi = coherent_state(C64::new(0.5, 0.1), 12, 1e-6)
            .unwrap()
            .tensor(&PureState::fock(vec![3], &[1]).unwrap());
        let via_pure = psi.beam_splitter((1, 0), 0.8, 0.3).unwrap().to_mixed();
        let via_mixed = psi.to_mixed().beam_splitter((1, 0), 0.8, 0.3).unwrap();
        assert!((via_pure.matrix() - via_mixed.matrix()).norm() < 1e-13);
        let th = thermal_state(0.3, 10, 1e-5).unwrap().tensor(&thermal_state(0.1, 6, 1e-5).unwrap());
        let out = th.beam_splitter((0, 1), 0.4, 0.0).unwrap();
        assert!((out.trace() - th.trace()).norm() < 1e-13);
        assert!(out.hermiticity_error() < 1e-14);
    }

    #[test]
    fn invalid_mode_pairs() {
        let psi = PureState::vacuum(vec![2, 2]).unwrap();
        assert!(psi.beam_splitter((0, 0), 0.1, 0.0).is_err());
        assert!(psi.beam_splitter((0, 2), 0.1, 0.0).is_err());
        assert!(psi.phase_shift(2, 0.1).is_err());
    }
}
