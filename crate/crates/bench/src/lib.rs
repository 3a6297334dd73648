//! Fixed inputs shared by the benchmarks.

use qillum_core::fock::PureState;
use qillum_core::states::{build_coherent_pair, build_nphoton, EnergyBudget, NPhotonState};

/// Four-photon probe close to the noisy-background optimum.
pub fn nphoton_probe() -> PureState {
    let st = NPhotonState::from_unnormalized(&[0.62, 0.61, 0.43, 0.22, 0.04]).expect("valid coefficients");
    build_nphoton(&st).expect("fits its own cutoff")
}

/// Coherent pair with four signal photons.
pub fn coherent_probe() -> PureState {
    build_coherent_pair(EnergyBudget::signal(4.0), 1e-10).expect("default cutoff suffices")
}
