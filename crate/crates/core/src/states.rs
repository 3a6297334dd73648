//! Input-state families on the signal (a) and idler (c) modes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{coherent_cutoff, coherent_state, tmsv_cutoff, tmsv_state, PureState};
use crate::C64;

/// `Σ_n a_n |N−n, n⟩` on (signal, idler) with real nonnegative `a_n`.
///
/// `coeffs[n]` multiplies the basis state with `N − n` signal photons.
/// [`NPhotonState::signal_major`] gives the reversed view, indexed by the
/// signal photon count, which is the ordering the closed-form thermal QFI uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NPhotonState {
    coeffs: Vec<f64>,
}

impl NPhotonState {
    /// Accepts coefficients normalized to within `1e-9`.
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() < 2 {
            return Err(Error::InvalidParameter("N-photon state needs N >= 1".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("non-finite coefficient".into()));
        }
        let norm: f64 = coeffs.iter().map(|c| c * c).sum();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "coefficients have squared norm {norm}, expected 1"
            )));
        }
        Ok(Self { coeffs })
    }

    /// Normalizes `weights` first; fails on an all-zero vector.
    pub fn from_unnormalized(weights: &[f64]) -> Result<Self> {
        let norm = weights.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidParameter("zero coefficient vector".into()));
        }
        Self::new(weights.iter().map(|c| c / norm).collect())
    }

    /// All photons in the signal mode, `|N, 0⟩`.
    pub fn all_signal(n: usize) -> Result<Self> {
        let mut c = vec![0.0; n + 1];
        c[0] = 1.0;
        Self::new(c)
    }

    /// Builds from amplitudes indexed by signal photon count.
    pub fn from_signal_major(b: &[f64]) -> Result<Self> {
        Self::new(b.iter().rev().copied().collect())
    }

    pub fn n(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Amplitudes `b_k` of `|k, N−k⟩`, i.e. `b_k = a_{N−k}`.
    pub fn signal_major(&self) -> Vec<f64> {
        self.coeffs.iter().rev().copied().collect()
    }

    pub fn mean_signal(&self) -> f64 {
        let n = self.n();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, a)| (n - k) as f64 * a * a)
            .sum()
    }

    pub fn mean_idler(&self) -> f64 {
        self.n() as f64 - self.mean_signal()
    }

    /// The state on modes (a, c) with the given per-mode cutoffs.
    pub fn build(&self, cutoffs: (usize, usize)) -> Result<PureState> {
        let n = self.n();
        if cutoffs.0 < n || cutoffs.1 < n {
            return Err(Error::Dimension(format!(
                "cutoffs {cutoffs:?} cannot hold {n} photons"
            )));
        }
        let (da, dc) = (cutoffs.0 + 1, cutoffs.1 + 1);
        let mut amps = vec![C64::new(0.0, 0.0); da * dc];
        for (k, a) in self.coeffs.iter().enumerate() {
            amps[(n - k) * dc + k] = C64::new(*a, 0.0);
        }
        PureState::new(vec![da, dc], amps)
    }
}

/// `Σ_n a_n |N−n, n⟩` with minimal cutoffs `(N, N)`.
pub fn build_nphoton(state: &NPhotonState) -> Result<PureState> {
    state.build((state.n(), state.n()))
}

/// Mean photon-number constraint on the probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBudget {
    /// `⟨n_a + n_c⟩`, or `⟨n_a⟩` alone when `signal_only` is set.
    pub total_mean_photons: f64,
    pub signal_only: bool,
}

impl EnergyBudget {
    pub fn total(e: f64) -> Self {
        Self {
            total_mean_photons: e,
            signal_only: false,
        }
    }

    pub fn signal(e: f64) -> Self {
        Self {
            total_mean_photons: e,
            signal_only: true,
        }
    }

    fn check(&self) -> Result<()> {
        let e = self.total_mean_photons;
        if e >= 0.0 && e.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("energy budget {e}")))
        }
    }

    /// Mean photon number carried by each mode of a symmetric two-mode probe.
    pub fn per_mode(&self) -> f64 {
        if self.signal_only {
            self.total_mean_photons
        } else {
            self.total_mean_photons / 2.0
        }
    }
}

/// Two-mode squeezed vacuum meeting the budget; returns the state and `r`.
pub fn build_tmsv_for_budget(budget: EnergyBudget, tail_tolerance: f64) -> Result<(PureState, f64)> {
    budget.check()?;
    let r = budget.per_mode().sqrt().asinh();
    let cutoff = tmsv_cutoff(r, tail_tolerance.min(1e-12));
    Ok((tmsv_state(r, cutoff, tail_tolerance)?, r))
}

/// Equal real amplitude on both modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherentPairParams {
    pub alpha: C64,
}

impl CoherentPairParams {
    pub fn for_budget(budget: EnergyBudget) -> Result<Self> {
        budget.check()?;
        Ok(Self {
            alpha: C64::new(budget.per_mode().sqrt(), 0.0),
        })
    }
}

/// `|α⟩_a |α⟩_c`, each mode at the default coherent cutoff.
pub fn build_coherent_pair(budget: EnergyBudget, tail_tolerance: f64) -> Result<PureState> {
    let alpha = CoherentPairParams::for_budget(budget)?.alpha;
    let single = coherent_state(alpha, coherent_cutoff(alpha), tail_tolerance)?;
    Ok(single.tensor(&single))
}

/// Coherent signal against a squeezed vacuum `S(r e^{iχ})|0⟩` in the other port.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherentSqueezedParams {
    pub alpha: C64,
    pub r: f64,
    pub chi: f64,
}

impl CoherentSqueezedParams {
    /// Phase of the coherent amplitude.
    pub fn theta_alpha(&self) -> f64 {
        self.alpha.arg()
    }

    /// `Θ = θ_α − φ` for splitter phase `varphi`.
    pub fn big_theta(&self, varphi: f64) -> f64 {
        self.theta_alpha() - varphi
    }

    /// Squeezing oriented so that `X_{Θ+π/2}` is the antisqueezed quadrature.
    pub fn antisqueezed(alpha: C64, r: f64, varphi: f64) -> Self {
        Self {
            alpha,
            r,
            chi: 2.0 * (alpha.arg() - varphi),
        }
    }
}

/// Probe families addressable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateFamily {
    #[serde(rename = "nphoton")]
    NPhoton,
    Tmsv,
    CoherentPair,
}

impl StateFamily {
    pub fn name(&self) -> &'static str {
        match self {
            StateFamily::NPhoton => "nphoton",
            StateFamily::Tmsv => "tmsv",
            StateFamily::CoherentPair => "coherent-pair",
        }
    }
}

impl fmt::Display for StateFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StateFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nphoton" => Ok(StateFamily::NPhoton),
            "tmsv" => Ok(StateFamily::Tmsv),
            "coherent-pair" => Ok(StateFamily::CoherentPair),
            other => Err(Error::Config(format!(
                "unknown state family '{other}' (expected nphoton, tmsv or coherent-pair)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{Expectation, ModeOperator, Observable};

    fn mean_n(s: &PureState, mode: usize) -> f64 {
        s.expectation(&Observable::monomial(vec![ModeOperator::number(mode)]))
            .unwrap()
            .re
    }

    #[test]
    fn nphoton_basis_placement() {
        let s = build_nphoton(&NPhotonState::new(vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(s.amplitude(&[1, 0]), C64::new(1.0, 0.0));
        let four = NPhotonState::all_signal(4).unwrap();
        let s = build_nphoton(&four).unwrap();
        assert!((mean_n(&s, 0) - 4.0).abs() < 1e-15);
        assert_eq!(four.mean_signal(), 4.0);
        let h = 0.5f64.sqrt();
        let two = NPhotonState::new(vec![h, 0.0, h]).unwrap();
        let s = build_nphoton(&two).unwrap();
        assert!((mean_n(&s, 0) - 1.0).abs() < 1e-12);
        assert!((two.mean_signal() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nphoton_stays_in_fixed_number_subspace() {
        let st = NPhotonState::from_unnormalized(&[0.3, 0.5, 0.1, 0.7]).unwrap();
        let s = st.build((5, 6)).unwrap();
        let mut in_sector = 0.0;
        for na in 0..6 {
            for nc in 0..7 {
                if na + nc == 3 {
                    in_sector += s.amplitude(&[na, nc]).norm_sqr();
                }
            }
        }
        assert!((in_sector - 1.0).abs() < 1e-14);
        assert!((mean_n(&s, 0) + mean_n(&s, 1) - 3.0).abs() < 1e-12);
        assert!((mean_n(&s, 1) - st.mean_idler()).abs() < 1e-12);
    }

    #[test]
    fn signal_major_is_reversed() {
        let st = NPhotonState::from_unnormalized(&[1.0, 2.0, 3.0]).unwrap();
        let b = st.signal_major();
        assert_eq!(b[0], st.coeffs()[2]);
        assert_eq!(NPhotonState::from_signal_major(&b).unwrap(), st);
    }

    #[test]
    fn nphoton_rejects_bad_input() {
        assert!(NPhotonState::new(vec![1.0, 0.1]).is_err());
        assert!(NPhotonState::new(vec![1.0]).is_err());
        assert!(NPhotonState::from_unnormalized(&[0.0, 0.0]).is_err());
        let st = NPhotonState::all_signal(3).unwrap();
        assert!(st.build((2, 3)).is_err());
    }

    #[test]
    fn tmsv_budget() {
        let (s, r) = build_tmsv_for_budget(EnergyBudget::total(4.0), 1e-10).unwrap();
        assert!((r - 1.14622).abs() < 1e-5);
        assert!((mean_n(&s, 0) + mean_n(&s, 1) - 4.0).abs() < 1e-8);
        let (s, _) = build_tmsv_for_budget(EnergyBudget::total(2.0), 1e-10).unwrap();
        assert!((mean_n(&s, 0) - 1.0).abs() < 1e-8);
        let (s, r) = build_tmsv_for_budget(EnergyBudget::total(0.0), 1e-10).unwrap();
        assert_eq!(r, 0.0);
        assert_eq!(s.amplitude(&[0, 0]), C64::new(1.0, 0.0));
    }

    #[test]
    fn coherent_pair_budgets() {
        let p = CoherentPairParams::for_budget(EnergyBudget::total(4.0)).unwrap();
        assert!((p.alpha.norm_sqr() - 2.0).abs() < 1e-14);
        let s = build_coherent_pair(EnergyBudget::total(4.0), 1e-10).unwrap();
        assert!((mean_n(&s, 0) - 2.0).abs() < 1e-8);
        assert!((mean_n(&s, 1) - 2.0).abs() < 1e-8);
        let s = build_coherent_pair(EnergyBudget::signal(4.0), 1e-10).unwrap();
        assert!((mean_n(&s, 0) - 4.0).abs() < 1e-8);
        let v = build_coherent_pair(EnergyBudget::total(0.0), 1e-10).unwrap();
        assert_eq!(v.amplitude(&[0, 0]), C64::new(1.0, 0.0));
        assert!(build_coherent_pair(EnergyBudget::total(-1.0), 1e-10).is_err());
    }

    #[test]
    fn family_names_round_trip() {
        for f in [StateFamily::NPhoton, StateFamily::Tmsv, StateFamily::CoherentPair] {
            assert_eq!(f.name().parse::<StateFamily>().unwrap(), f);
        }
        assert!(matches!("noon".parse::<StateFamily>(), Err(Error::Config(_))));
    }
}
