//! Truncated multimode Fock-space states.
//!
//! Amplitude tensors and density operators are stored row-major over the
//! tensor-product Fock basis: mode 0 is the slowest index and the last mode
//! the fastest. A mode of dimension `d` holds photon numbers `0..d`, so its
//! cutoff (maximum photon number) is `d - 1`.

pub(crate) mod constructors;
mod observable;
mod splitter;

pub use constructors::{
    coherent_cutoff, coherent_state, squeezed_vacuum, thermal_cutoff, thermal_state, tmsv_cutoff,
    tmsv_state,
};
pub use observable::{Expectation, ModeOperator, Observable, OpKind};
pub use splitter::{beam_splitter, phase_shift, ModeTransform, SplitterBlocks};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::C64;

/// Default admissible probability mass lost to truncation.
pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-10;

/// Per-mode cutoffs together with the admissible truncation tail.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationConfig {
    pub per_mode_cutoffs: Vec<usize>,
    pub tail_tolerance: f64,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self {
            per_mode_cutoffs: Vec::new(),
            tail_tolerance: DEFAULT_TAIL_TOLERANCE,
        }
    }
}

impl TruncationConfig {
    pub fn new(per_mode_cutoffs: Vec<usize>, tail_tolerance: f64) -> Result<Self> {
        let cfg = Self {
            per_mode_cutoffs,
            tail_tolerance,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tail_tolerance > 0.0 && self.tail_tolerance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "tail tolerance must be positive, got {}",
                self.tail_tolerance
            )));
        }
        if self.per_mode_cutoffs.iter().any(|&c| c < 1) {
            return Err(Error::InvalidParameter(
                "every interacting mode needs a cutoff of at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Mode dimensions implied by the cutoffs.
    pub fn dims(&self) -> Vec<usize> {
        self.per_mode_cutoffs.iter().map(|c| c + 1).collect()
    }
}

/// Row-major strides for a list of mode dimensions.
pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

pub(crate) fn flat_index(dims: &[usize], occ: &[usize]) -> Option<usize> {
    let mut idx = 0;
    for (&d, &n) in dims.iter().zip(occ) {
        if n >= d {
            return None;
        }
        idx = idx * d + n;
    }
    Some(idx)
}

pub(crate) fn occupation(dims: &[usize], mut idx: usize, out: &mut [usize]) {
    for k in (0..dims.len()).rev() {
        out[k] = idx % dims[k];
        idx /= dims[k];
    }
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::Dimension(format!("invalid mode dimensions {dims:?}")));
    }
    Ok(dims.iter().product())
}

/// A pure state on a truncated multimode Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    dims: Vec<usize>,
    amps: Vec<C64>,
    tail_mass: f64,
}

impl PureState {
    pub fn new(dims: Vec<usize>, amps: Vec<C64>) -> Result<Self> {
        let total = check_dims(&dims)?;
        if amps.len() != total {
            return Err(Error::Dimension(format!(
                "{} amplitudes for dimensions {dims:?}",
                amps.len()
            )));
        }
        if amps.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidParameter("non-finite amplitude".into()));
        }
        Ok(Self {
            dims,
            amps,
            tail_mass: 0.0,
        })
    }

    /// Attach the probability mass known to be lost beyond the cutoffs.
    pub fn with_tail_mass(mut self, tail_mass: f64) -> Self {
        self.tail_mass = tail_mass;
        self
    }

    pub fn vacuum(dims: Vec<usize>) -> Result<Self> {
        Self::fock(dims.clone(), &vec![0; dims.len()])
    }

    /// The number state `|n_0, n_1, ...⟩`.
    pub fn fock(dims: Vec<usize>, occ: &[usize]) -> Result<Self> {
        let total = check_dims(&dims)?;
        if occ.len() != dims.len() {
            return Err(Error::Dimension(format!("occupation {occ:?} for {dims:?}")));
        }
        let idx = flat_index(&dims, occ)
            .ok_or_else(|| Error::Dimension(format!("occupation {occ:?} exceeds {dims:?}")))?;
        let mut amps = vec![C64::new(0.0, 0.0); total];
        amps[idx] = C64::new(1.0, 0.0);
        Self::new(dims, amps)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_modes(&self) -> usize {
        self.dims.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    /// Amplitude of a basis state; zero outside the truncated space.
    pub fn amplitude(&self, occ: &[usize]) -> C64 {
        flat_index(&self.dims, occ)
            .map(|i| self.amps[i])
            .unwrap_or_default()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self {
            dims: self.dims.clone(),
            amps: self.amps.iter().map(|z| z * factor).collect(),
            tail_mass: self.tail_mass,
        }
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm_sqr().sqrt();
        self.scaled(C64::new(1.0 / n, 0.0))
    }

    pub fn tensor(&self, other: &PureState) -> PureState {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        let mut amps = Vec::with_capacity(self.amps.len() * other.amps.len());
        for a in &self.amps {
            amps.extend(other.amps.iter().map(|b| a * b));
        }
        PureState {
            dims,
            amps,
            tail_mass: 1.0 - (1.0 - self.tail_mass) * (1.0 - other.tail_mass),
        }
    }

    /// Zero-pad into larger per-mode dimensions.
    pub fn embed(&self, dims: &[usize]) -> Result<PureState> {
        if dims.len() != self.dims.len() || dims.iter().zip(&self.dims).any(|(a, b)| a < b) {
            return Err(Error::Dimension(format!(
                "cannot embed {:?} into {dims:?}",
                self.dims
            )));
        }
        let total = check_dims(dims)?;
        let mut amps = vec![C64::new(0.0, 0.0); total];
        let mut occ = vec![0; dims.len()];
        for (i, z) in self.amps.iter().enumerate() {
            occupation(&self.dims, i, &mut occ);
            amps[flat_index(dims, &occ).expect("embedding fits")] = *z;
        }
        Ok(PureState {
            dims: dims.to_vec(),
            amps,
            tail_mass: self.tail_mass,
        })
    }

    /// `⟨self|other⟩`, padding both to common dimensions.
    pub fn inner(&self, other: &PureState) -> Result<C64> {
        if self.dims.len() != other.dims.len() {
            return Err(Error::Dimension("mode count differs".into()));
        }
        let dims: Vec<usize> = self
            .dims
            .iter()
            .zip(&other.dims)
            .map(|(a, b)| *a.max(b))
            .collect();
        let a = self.embed(&dims)?;
        let b = other.embed(&dims)?;
        Ok(a.amps.iter().zip(&b.amps).map(|(x, y)| x.conj() * y).sum())
    }

    pub fn fidelity(&self, other: &PureState) -> Result<f64> {
        Ok(self.inner(other)?.norm_sqr())
    }

    pub fn to_mixed(&self) -> MixedState {
        let v = nalgebra::DVector::from_column_slice(&self.amps);
        MixedState {
            dims: self.dims.clone(),
            op: &v * v.adjoint(),
            tail_mass: self.tail_mass,
        }
    }

    /// Reduced density operator on the modes in `keep` (order preserved).
    pub fn reduced(&self, keep: &[usize]) -> Result<MixedState> {
        let (kept_dims, traced) = split_modes(&self.dims, keep)?;
        let kd: usize = kept_dims.iter().product();
        let traced_dims: Vec<usize> = traced.iter().map(|&m| self.dims[m]).collect();
        let td: usize = traced_dims.iter().product();
        // Reshape amplitudes as a (kept × traced) matrix.
        let mut psi = DMatrix::<C64>::zeros(kd, td);
        let mut occ = vec![0; self.dims.len()];
        let mut kocc = vec![0; keep.len()];
        let mut tocc = vec![0; traced.len()];
        for (i, z) in self.amps.iter().enumerate() {
            occupation(&self.dims, i, &mut occ);
            for (slot, &m) in kocc.iter_mut().zip(keep) {
                *slot = occ[m];
            }
            for (slot, &m) in tocc.iter_mut().zip(&traced) {
                *slot = occ[m];
            }
            let r = flat_index(&kept_dims, &kocc).unwrap();
            let c = if traced.is_empty() {
                0
            } else {
                flat_index(&traced_dims, &tocc).unwrap()
            };
            psi[(r, c)] = *z;
        }
        Ok(MixedState {
            dims: kept_dims,
            op: &psi * psi.adjoint(),
            tail_mass: self.tail_mass,
        })
    }
}

fn split_modes(dims: &[usize], keep: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    if keep.is_empty() {
        return Err(Error::InvalidParameter("keep set is empty".into()));
    }
    let mut seen = vec![false; dims.len()];
    for &m in keep {
        if m >= dims.len() || seen[m] {
            return Err(Error::InvalidParameter(format!(
                "keep set {keep:?} invalid for {} modes",
                dims.len()
            )));
        }
        seen[m] = true;
    }
    let kept_dims = keep.iter().map(|&m| dims[m]).collect();
    let traced = (0..dims.len()).filter(|m| !seen[*m]).collect();
    Ok((kept_dims, traced))
}

/// A density operator on a truncated multimode Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedState {
    dims: Vec<usize>,
    op: DMatrix<C64>,
    tail_mass: f64,
}

impl MixedState {
    pub fn new(dims: Vec<usize>, op: DMatrix<C64>) -> Result<Self> {
        let total = check_dims(&dims)?;
        if op.nrows() != total || op.ncols() != total {
            return Err(Error::Dimension(format!(
                "{}x{} operator for dimensions {dims:?}",
                op.nrows(),
                op.ncols()
            )));
        }
        Ok(Self {
            dims,
            op,
            tail_mass: 0.0,
        })
    }

    pub fn with_tail_mass(mut self, tail_mass: f64) -> Self {
        self.tail_mass = tail_mass;
        self
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_modes(&self) -> usize {
        self.dims.len()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.op
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.op
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn trace(&self) -> C64 {
        self.op.trace()
    }

    /// Largest entrywise deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.op.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.op[(i, j)] - self.op[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Checks the density-operator invariants against `tolerance` on trace loss.
    pub fn validate(&self, tail_tolerance: f64) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > 1e-12 {
            return Err(Error::Numerical(format!("operator not Hermitian ({herm:.2e})")));
        }
        let tr = self.trace().re;
        if tr < 1.0 - tail_tolerance || tr > 1.0 + 1e-12 {
            return Err(Error::Numerical(format!("trace {tr} outside admissible band")));
        }
        let min = self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        if min < -1e-10 {
            return Err(Error::Numerical(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(())
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        nalgebra::SymmetricEigen::new(self.op.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect()
    }

    /// Element `⟨occ_row|ρ|occ_col⟩`; zero outside the truncated space.
    pub fn element(&self, row: &[usize], col: &[usize]) -> C64 {
        match (flat_index(&self.dims, row), flat_index(&self.dims, col)) {
            (Some(r), Some(c)) => self.op[(r, c)],
            _ => C64::new(0.0, 0.0),
        }
    }

    pub fn tensor(&self, other: &MixedState) -> MixedState {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        MixedState {
            dims,
            op: self.op.kronecker(&other.op),
            tail_mass: 1.0 - (1.0 - self.tail_mass) * (1.0 - other.tail_mass),
        }
    }

    pub fn embed(&self, dims: &[usize]) -> Result<MixedState> {
        if dims.len() != self.dims.len() || dims.iter().zip(&self.dims).any(|(a, b)| a < b) {
            return Err(Error::Dimension(format!(
                "cannot embed {:?} into {dims:?}",
                self.dims
            )));
        }
        let total = check_dims(dims)?;
        let map: Vec<usize> = {
            let mut occ = vec![0; dims.len()];
            (0..self.op.nrows())
                .map(|i| {
                    occupation(&self.dims, i, &mut occ);
                    flat_index(dims, &occ).unwrap()
                })
                .collect()
        };
        let mut op = DMatrix::zeros(total, total);
        for (i, &ri) in map.iter().enumerate() {
            for (j, &cj) in map.iter().enumerate() {
                op[(ri, cj)] = self.op[(i, j)];
            }
        }
        Ok(MixedState {
            dims: dims.to_vec(),
            op,
            tail_mass: self.tail_mass,
        })
    }

    /// Trace distance `½‖ρ − σ‖₁` after padding to common dimensions.
    pub fn trace_distance(&self, other: &MixedState) -> Result<f64> {
        if self.dims.len() != other.dims.len() {
            return Err(Error::Dimension("mode count differs".into()));
        }
        let dims: Vec<usize> = self
            .dims
            .iter()
            .zip(&other.dims)
            .map(|(a, b)| *a.max(b))
            .collect();
        let diff = self.embed(&dims)?.op - other.embed(&dims)?.op;
        let eig = nalgebra::SymmetricEigen::new(diff);
        Ok(0.5 * eig.eigenvalues.iter().map(|x| x.abs()).sum::<f64>())
    }

    pub fn partial_trace(&self, keep: &[usize]) -> Result<MixedState> {
        partial_trace(self, keep)
    }
}

/// Trace out every mode not listed in `keep`; kept modes retain their order.
pub fn partial_trace(state: &MixedState, keep: &[usize]) -> Result<MixedState> {
    let (kept_dims, traced) = split_modes(&state.dims, keep)?;
    let kd: usize = kept_dims.iter().product();
    let traced_dims: Vec<usize> = traced.iter().map(|&m| state.dims[m]).collect();
    let td: usize = traced_dims.iter().product();
    let nmodes = state.dims.len();
    let st = strides(&state.dims);

    // Flat offsets contributed by kept and traced multi-indices.
    let offsets = |modes: &[usize], sub_dims: &[usize], count: usize| -> Vec<usize> {
        let mut occ = vec![0; modes.len()];
        (0..count)
            .map(|i| {
                occupation(sub_dims, i, &mut occ);
                modes.iter().zip(&occ).map(|(&m, &n)| n * st[m]).sum()
            })
            .collect()
    };
    let kept_off = offsets(keep, &kept_dims, kd);
    let traced_off = if traced.is_empty() {
        vec![0]
    } else {
        offsets(&traced, &traced_dims, td)
    };
    debug_assert!(nmodes >= keep.len());

    let mut op = DMatrix::<C64>::zeros(kd, kd);
    for (r, &ro) in kept_off.iter().enumerate() {
        for (c, &co) in kept_off.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for &t in &traced_off {
                acc += state.op[(ro + t, co + t)];
            }
            op[(r, c)] = acc;
        }
    }
    Ok(MixedState {
        dims: kept_dims,
        op,
        tail_mass: state.tail_mass,
    })
}

/// Truncated annihilation operator matrix on a single mode of dimension `dim`.
pub fn annihilation_matrix(dim: usize) -> DMatrix<C64> {
    let mut a = DMatrix::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    a
}
