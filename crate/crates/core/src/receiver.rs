//! Photon-number-difference receiver.
//!
//! The returned mode `b` and the idler `c` are combined on a 50:50 splitter and
//! the output counts are subtracted. In terms of the inputs this measures
//! `M = e^{−iφ_c} b†c + e^{iφ_c} c†b`.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelKernel, ChannelOutput, TargetScenario};
use crate::error::{Error, Result};
use crate::fock::{Expectation, MixedState, ModeOperator, ModeTransform, Observable, PureState};
use crate::C64;

/// Slopes below this magnitude leave the sensitivity undefined.
pub const MIN_SLOPE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReceiverConfig {
    /// Combiner phase `φ_c`; `None` follows the target splitter phase.
    pub combiner_phase: Option<f64>,
    /// Step in `η` for the slope; `None` uses `1e-4 · max(1, η/1e-3)`.
    pub fd_step: Option<f64>,
}

impl ReceiverConfig {
    pub fn phase(&self, scenario: &TargetScenario) -> f64 {
        self.combiner_phase.unwrap_or(scenario.varphi)
    }

    pub fn step(&self, eta: f64) -> f64 {
        self.fd_step.unwrap_or(1e-4 * (eta / 1e-3).max(1.0))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(h) = self.fd_step {
            if !(1e-5..=1e-2).contains(&h) {
                return Err(Error::InvalidParameter(format!(
                    "receiver step {h} outside [1e-5, 1e-2]"
                )));
            }
        }
        if self.combiner_phase.is_some_and(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter("non-finite combiner phase".into()));
        }
        Ok(())
    }
}

/// Receiver statistics with the target present (`1`) and absent (`0`).
///
/// `delta_eta`, `snr` and `snr_e` are `None` when their denominators vanish.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverStats {
    pub m: f64,
    pub var_m: f64,
    pub dm_deta: f64,
    pub delta_eta: Option<f64>,
    pub snr: Option<f64>,
    pub snr_e: Option<f64>,
    pub n1_mean: f64,
    pub sigma1: f64,
    pub n0_mean: f64,
    pub sigma0: f64,
    pub combiner_phase: f64,
}

impl ReceiverStats {
    /// `|snr · Δη · |∂M/∂η| − |M||`, when all three are defined.
    pub fn identity_residual(&self) -> Option<f64> {
        Some((self.snr? * self.delta_eta? * self.dm_deta.abs() - self.m.abs()).abs())
    }
}

/// `M = e^{−iφ_c} b†c + e^{iφ_c} c†b` on modes (0, 1).
pub fn difference_observable(combiner_phase: f64) -> Observable {
    Observable::new()
        .term(
            C64::from_polar(1.0, -combiner_phase),
            vec![ModeOperator::create(0), ModeOperator::annihilate(1)],
        )
        .term(
            C64::from_polar(1.0, combiner_phase),
            vec![ModeOperator::create(1), ModeOperator::annihilate(0)],
        )
}

fn mean_and_variance(first: f64, second: f64) -> (f64, f64) {
    (first, (second - first * first).max(0.0))
}

/// `(⟨M⟩, ΔM²)` from the sector ensemble.
pub fn receiver_stats(output: &ChannelOutput, combiner_phase: f64) -> (f64, f64) {
    let (first, second) = output.receiver_moments(combiner_phase);
    mean_and_variance(first, second)
}

/// `(⟨M⟩, ΔM²)` of a dense (returned, idler) state through the transformed observable.
pub fn receiver_stats_dense(state: &MixedState, combiner_phase: f64) -> Result<(f64, f64)> {
    let m = difference_observable(combiner_phase);
    let first = state.expectation(&m)?.re;
    let mut squared = Observable::new();
    for (ca, wa) in m.terms() {
        for (cb, wb) in m.terms() {
            let mut word = wa.clone();
            word.extend_from_slice(wb);
            squared = squared.term(ca * cb, word);
        }
    }
    let second = state.expectation(&squared)?.re;
    Ok(mean_and_variance(first, second))
}

/// `(⟨n_d − n_e⟩, Δ²)` after an explicit 50:50 combiner on a dense state.
///
/// `B(π/2, −φ_c)` maps `n_0 − n_1` onto `M` with combiner phase `φ_c`.
pub fn receiver_stats_combiner(state: &MixedState, combiner_phase: f64) -> Result<(f64, f64)> {
    let out = state.beam_splitter((0, 1), FRAC_PI_2, -combiner_phase)?;
    let one = C64::new(1.0, 0.0);
    let diff = Observable::new()
        .term(one, vec![ModeOperator::number(0)])
        .term(-one, vec![ModeOperator::number(1)]);
    let sq = Observable::new()
        .term(one, vec![ModeOperator::number(0), ModeOperator::number(0)])
        .term(-2.0 * one, vec![ModeOperator::number(0), ModeOperator::number(1)])
        .term(one, vec![ModeOperator::number(1), ModeOperator::number(1)]);
    let first = out.expectation(&diff)?.re;
    let second = out.expectation(&sq)?.re;
    Ok(mean_and_variance(first, second))
}

/// Channel kernels for one scenario, reusable across inputs of equal signal dimension.
#[derive(Debug, Clone)]
pub struct ReceiverEvaluator {
    scenario: TargetScenario,
    phase: f64,
    step: f64,
    at: Arc<ChannelKernel>,
    /// Kernels at `η ± h` and `η ± h/2`.
    shifted: [Arc<ChannelKernel>; 4],
    absent: Arc<ChannelKernel>,
}

impl ReceiverEvaluator {
    pub fn new(
        scenario: &TargetScenario,
        config: &ReceiverConfig,
        signal_dim: usize,
        tail_tolerance: f64,
    ) -> Result<Self> {
        scenario.validate()?;
        config.validate()?;
        if scenario.eta <= 0.0 {
            return Err(Error::InvalidParameter(
                "receiver sensitivity needs a positive reflectivity".into(),
            ));
        }
        let step = config.step(scenario.eta);
        if step >= scenario.eta.min(1.0 - scenario.eta) {
            return Err(Error::InvalidParameter(format!(
                "step {step} does not fit around eta = {}",
                scenario.eta
            )));
        }
        let kernel = |eta: f64| -> Result<Arc<ChannelKernel>> {
            Ok(Arc::new(ChannelKernel::new(
                eta,
                scenario.varphi,
                scenario.n_b,
                signal_dim,
                tail_tolerance,
                false,
            )?))
        };
        let eta = scenario.eta;
        Ok(Self {
            scenario: *scenario,
            phase: config.phase(scenario),
            step,
            at: kernel(eta)?,
            shifted: [
                kernel(eta + step)?,
                kernel(eta - step)?,
                kernel(eta + step / 2.0)?,
                kernel(eta - step / 2.0)?,
            ],
            absent: kernel(0.0)?,
        })
    }

    pub fn scenario(&self) -> &TargetScenario {
        &self.scenario
    }

    pub fn evaluate(&self, input: &PureState) -> Result<ReceiverStats> {
        let (m, var_m) = receiver_stats(&self.at.apply(input)?, self.phase);
        let mean = |k: &Arc<ChannelKernel>| -> Result<f64> { Ok(k.apply(input)?.receiver_moments(self.phase).0) };
        let h = self.step;
        let coarse = (mean(&self.shifted[0])? - mean(&self.shifted[1])?) / (2.0 * h);
        let fine = (mean(&self.shifted[2])? - mean(&self.shifted[3])?) / h;
        let dm_deta = (4.0 * fine - coarse) / 3.0;
        let (n0_mean, var0) = receiver_stats(&self.absent.apply(input)?, self.phase);
        let sigma1 = var_m.sqrt();
        let sigma0 = var0.sqrt();
        let delta_eta = (dm_deta.abs() >= MIN_SLOPE).then(|| sigma1 / dm_deta.abs());
        let snr = (sigma1 > 0.0).then(|| m.abs() / sigma1);
        let snr_e = (sigma0 + sigma1 > 0.0).then(|| (m - n0_mean).abs() / (sigma0 + sigma1));
        Ok(ReceiverStats {
            m,
            var_m,
            dm_deta,
            delta_eta,
            snr,
            snr_e,
            n1_mean: m,
            sigma1,
            n0_mean,
            sigma0,
            combiner_phase: self.phase,
        })
    }
}

/// Present/absent receiver statistics, slope and derived figures of merit.
pub fn sensitivity_and_snr(
    input: &PureState,
    scenario: &TargetScenario,
    config: &ReceiverConfig,
    tail_tolerance: f64,
) -> Result<ReceiverStats> {
    let signal_dim = input.dims().first().copied().unwrap_or(1);
    ReceiverEvaluator::new(scenario, config, signal_dim, tail_tolerance)?.evaluate(input)
}

/// `R = (n̄₁ − n̄₀)² / (σ₀ + σ₁)²`, the square of the effective SNR.
pub fn error_exponent(stats: &ReceiverStats) -> Result<f64> {
    let den = stats.sigma0 + stats.sigma1;
    if den <= 0.0 {
        return Err(Error::Numerical("error exponent with zero spread".into()));
    }
    Ok((stats.n1_mean - stats.n0_mean).powi(2) / (den * den))
}

/// Gaussian counterpart of [`error_exponent`], half its value.
pub fn gaussian_error_exponent(stats: &ReceiverStats) -> Result<f64> {
    Ok(error_exponent(stats)? / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{apply_absent, apply_present};
    use crate::fock::coherent_state;
    use crate::states::{build_coherent_pair, build_nphoton, EnergyBudget, NPhotonState};
    use rand::{Rng, SeedableRng};

    fn random_input(da: usize, dc: usize, seed: u64) -> PureState {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let amps = (0..da * dc)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        PureState::new(vec![da, dc], amps).unwrap().normalized()
    }

    #[test]
    fn evaluation_paths_agree() {
        let input = random_input(3, 3, 4);
        let scen = TargetScenario::present(0.3, 0.4).with_varphi(0.6);
        let out = apply_present(&input, &scen, 1e-10).unwrap();
        let rho = out.reduced_state().unwrap();
        for phase in [0.0, FRAC_PI_2, 1.3] {
            let (m1, v1) = receiver_stats(&out, phase);
            let (m2, v2) = receiver_stats_dense(&rho, phase).unwrap();
            let (m3, v3) = receiver_stats_combiner(&rho, phase).unwrap();
            assert!((m1 - m2).abs() < 1e-10 && (v1 - v2).abs() < 1e-10);
            assert!((m1 - m3).abs() < 1e-10 && (v1 - v3).abs() < 1e-10, "{m1} {m3} {v1} {v3}");
        }
    }

    #[test]
    fn coherent_product_mean() {
        let beta = C64::new(0.7, -0.2);
        let gamma = C64::new(0.3, 0.5);
        let state = coherent_state(beta, 20, 1e-8)
            .unwrap()
            .tensor(&coherent_state(gamma, 20, 1e-8).unwrap())
            .to_mixed();
        let (m, _) = receiver_stats_combiner(&state, 0.0).unwrap();
        assert!((m - 2.0 * (beta.conj() * gamma).re).abs() < 1e-7);
    }

    #[test]
    fn vacuum_and_absent_target_have_zero_mean() {
        let vac = PureState::vacuum(vec![2, 2]).unwrap();
        let out = apply_present(&vac, &TargetScenario::present(0.2, 0.0), 1e-10).unwrap();
        assert_eq!(receiver_stats(&out, 0.0), (0.0, 0.0));
        let input = random_input(4, 4, 9);
        let out = apply_absent(&input, &TargetScenario::absent(1.5), 1e-10).unwrap();
        for phase in [0.0, 0.4, FRAC_PI_2] {
            assert!(receiver_stats(&out, phase).0.abs() < 1e-12);
        }
    }

    #[test]
    fn identity_and_absent_mean() {
        let st = NPhotonState::from_unnormalized(&[0.6, 0.6, 0.4, 0.3, 0.1]).unwrap();
        let input = build_nphoton(&st).unwrap();
        for nb in [0.0, 0.5, 2.0] {
            let stats = sensitivity_and_snr(
                &input,
                &TargetScenario::present(1e-3, nb),
                &ReceiverConfig::default(),
                1e-10,
            )
            .unwrap();
            assert!(stats.n0_mean.abs() < 1e-12);
            assert!(stats.identity_residual().unwrap() < 1e-9);
            let r = error_exponent(&stats).unwrap();
            assert!((r - stats.snr_e.unwrap().powi(2)).abs() < 1e-12);
            assert_eq!(gaussian_error_exponent(&stats).unwrap(), r / 2.0);
        }
    }

    #[test]
    fn slope_matches_linear_response() {
        // ⟨M⟩ is linear in η: −2η Re(e^{i(φ−φ_c)} ⟨a†c⟩).
        let st = NPhotonState::from_unnormalized(&[0.5, 0.7, 0.5]).unwrap();
        let input = build_nphoton(&st).unwrap();
        let stats = sensitivity_and_snr(
            &input,
            &TargetScenario::present(2e-3, 0.3),
            &ReceiverConfig::default(),
            1e-10,
        )
        .unwrap();
        let a = st.signal_major();
        let x: f64 = (0..a.len() - 1)
            .map(|m| a[m] * a[m + 1] * (((m + 1) * (a.len() - 1 - m)) as f64).sqrt())
            .sum();
        assert!((stats.dm_deta.abs() - 2.0 * x).abs() < 1e-9);
        assert!((stats.m.abs() - 2e-3 * 2.0 * x).abs() < 1e-12);
    }

    #[test]
    fn zero_slope_leaves_sensitivity_undefined() {
        let input = build_nphoton(&NPhotonState::all_signal(2).unwrap()).unwrap();
        let stats = sensitivity_and_snr(
            &input,
            &TargetScenario::present(1e-3, 0.5),
            &ReceiverConfig::default(),
            1e-10,
        )
        .unwrap();
        assert!(stats.delta_eta.is_none());
        assert_eq!(stats.m, 0.0);
    }

    #[test]
    fn coherent_signal_degrades_with_noise() {
        let input = build_coherent_pair(EnergyBudget::signal(1.0), 1e-10).unwrap();
        let mut last: Option<ReceiverStats> = None;
        for nb in [0.0, 0.5, 1.0, 2.0] {
            let s = sensitivity_and_snr(
                &input,
                &TargetScenario::present(1e-3, nb),
                &ReceiverConfig::default(),
                1e-10,
            )
            .unwrap();
            if let Some(prev) = &last {
                assert!(s.snr.unwrap() < prev.snr.unwrap());
                assert!(s.delta_eta.unwrap() > prev.delta_eta.unwrap());
            }
            last = Some(s);
        }
    }

    #[test]
    fn config_validation() {
        let bad = ReceiverConfig {
            fd_step: Some(0.5),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let input = PureState::vacuum(vec![2, 2]).unwrap();
        let r = sensitivity_and_snr(&input, &TargetScenario::present(0.0, 1.0), &ReceiverConfig::default(), 1e-10);
        assert!(r.is_err());
        assert_eq!(ReceiverConfig::default().step(1e-3), 1e-4);
        assert!((ReceiverConfig::default().step(5e-3) - 5e-4).abs() < 1e-18);
    }
}

#[cfg(test)]
mod properties {
    use super::*;
    use crate::states::{build_nphoton, NPhotonState};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn absent_target_mean_vanishes(w in prop::collection::vec(0.0f64..1.0, 4), n_b in 0.0f64..1.5) {
            prop_assume!(w.iter().any(|x| *x > 1e-3));
            let input = build_nphoton(&NPhotonState::from_unnormalized(&w).unwrap()).unwrap();
            let scenario = TargetScenario::present(1e-3, n_b);
            let stats = ReceiverEvaluator::new(&scenario, &ReceiverConfig::default(), input.dims()[0], 1e-10)
                .unwrap()
                .evaluate(&input)
                .unwrap();
            prop_assert!(stats.n0_mean.abs() <= 1e-12);
            prop_assert!(stats.identity_residual().unwrap_or(0.0) < 1e-9);
        }
    }
}
