use nalgebra::DMatrix;

use super::{MixedState, PureState};
use crate::error::{Error, Result};
use crate::C64;

fn truncation(what: &str, cutoff: usize, tail: f64, tolerance: f64) -> Error {
    Error::Truncation {
        what: what.to_string(),
        cutoff,
        tail,
        tolerance,
    }
}

fn check_tolerance(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("tail tolerance {tol}")))
    }
}

/// Smallest cutoff whose geometric tail `x^(K+1)` stays below `tol`.
pub fn thermal_cutoff(n_mean: f64, tol: f64) -> usize {
    if n_mean <= 0.0 {
        return 1;
    }
    let x = n_mean / (1.0 + n_mean);
    let k = (tol.ln() / x.ln()).ceil() as usize;
    k.saturating_sub(1).max(1)
}

/// Default coherent-state cutoff, `4|α|² + 25`.
pub fn coherent_cutoff(alpha: C64) -> usize {
    (4.0 * alpha.norm_sqr()).ceil() as usize + 25
}

/// Smallest per-mode cutoff with `tanh(r)^(2(K+1)) < tol`.
pub fn tmsv_cutoff(r: f64, tol: f64) -> usize {
    let t2 = r.tanh().powi(2);
    if t2 == 0.0 {
        return 1;
    }
    ((tol.ln() / t2.ln()).ceil() as usize).max(1)
}

/// Single-mode coherent state `|α⟩` truncated at `cutoff` photons.
///
/// Amplitudes are the exact Poisson amplitudes; the state is not renormalized
/// and the discarded Poisson tail is attached as the state's tail mass.
pub fn coherent_state(alpha: C64, cutoff: usize, tol: f64) -> Result<PureState> {
    check_tolerance(tol)?;
    let mean = alpha.norm_sqr();
    if mean > cutoff as f64 / 4.0 {
        return Err(truncation("coherent state (|α|² > cutoff/4)", cutoff, f64::NAN, tol));
    }
    let mut amps = Vec::with_capacity(cutoff + 1);
    let mut c = C64::new((-mean / 2.0).exp(), 0.0);
    amps.push(c);
    for n in 1..=cutoff {
        c = c * alpha / (n as f64).sqrt();
        amps.push(c);
    }
    // Poisson tail beyond the cutoff, summed directly to avoid cancellation.
    let mut p = c.norm_sqr();
    let mut tail = 0.0;
    let mut n = cutoff;
    loop {
        n += 1;
        p *= mean / n as f64;
        tail += p;
        if p <= tail * 1e-17 || p == 0.0 {
            break;
        }
    }
    if tail > tol {
        return Err(truncation("coherent state", cutoff, tail, tol));
    }
    Ok(PureState::new(vec![cutoff + 1], amps)?.with_tail_mass(tail))
}

/// Thermal state with mean photon number `n_mean`, truncated at `cutoff`.
pub fn thermal_state(n_mean: f64, cutoff: usize, tol: f64) -> Result<MixedState> {
    check_tolerance(tol)?;
    if !(n_mean >= 0.0 && n_mean.is_finite()) {
        return Err(Error::InvalidParameter(format!("thermal mean {n_mean}")));
    }
    let probs = thermal_weights(n_mean, cutoff);
    let tail = thermal_tail(n_mean, cutoff);
    if tail > tol {
        return Err(truncation("thermal state", cutoff, tail, tol));
    }
    let mut op = DMatrix::zeros(cutoff + 1, cutoff + 1);
    for (n, p) in probs.iter().enumerate() {
        op[(n, n)] = C64::new(*p, 0.0);
    }
    Ok(MixedState::new(vec![cutoff + 1], op)?.with_tail_mass(tail))
}

/// Geometric photon-number law `n^k/(1+n)^(k+1)` for `k = 0..=cutoff`.
pub(crate) fn thermal_weights(n_mean: f64, cutoff: usize) -> Vec<f64> {
    if n_mean == 0.0 {
        let mut p = vec![0.0; cutoff + 1];
        p[0] = 1.0;
        return p;
    }
    let x = n_mean / (1.0 + n_mean);
    let mut p = 1.0 / (1.0 + n_mean);
    (0..=cutoff)
        .map(|_| {
            let v = p;
            p *= x;
            v
        })
        .collect()
}

pub(crate) fn thermal_tail(n_mean: f64, cutoff: usize) -> f64 {
    if n_mean == 0.0 {
        0.0
    } else {
        (n_mean / (1.0 + n_mean)).powi(cutoff as i32 + 1)
    }
}

/// Two-mode squeezed vacuum `Σ tanhⁿr / cosh r |n,n⟩`, `cutoff` photons per mode.
pub fn tmsv_state(r: f64, cutoff: usize, tol: f64) -> Result<PureState> {
    check_tolerance(tol)?;
    if !r.is_finite() {
        return Err(Error::InvalidParameter(format!("squeezing {r}")));
    }
    let t = r.tanh();
    let tail = (t * t).powi(cutoff as i32 + 1);
    if tail >= tol {
        return Err(truncation("two-mode squeezed vacuum", cutoff, tail, tol));
    }
    let d = cutoff + 1;
    let mut amps = vec![C64::new(0.0, 0.0); d * d];
    let mut c = 1.0 / r.cosh();
    for n in 0..d {
        amps[n * d + n] = C64::new(c, 0.0);
        c *= t;
    }
    Ok(PureState::new(vec![d, d], amps)?.with_tail_mass(tail))
}

/// Single-mode squeezed vacuum `exp[(ξ* b² − ξ b†²)/2]|0⟩` with `ξ = r e^{iχ}`.
///
/// With this convention the quadrature `X_ϑ` has variance
/// `(cosh 2r − sinh 2r cos(2ϑ − χ))/2`, so the antisqueezed axis sits at
/// `ϑ = (χ + π)/2`.
pub fn squeezed_vacuum(r: f64, chi: f64, cutoff: usize, tol: f64) -> Result<PureState> {
    check_tolerance(tol)?;
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!("squeezing {r}")));
    }
    let ratio = -C64::from_polar(r.tanh(), chi);
    let mut amps = vec![C64::new(0.0, 0.0); cutoff + 1];
    let mut c = C64::new(1.0 / r.cosh().sqrt(), 0.0);
    let mut m = 0usize;
    while 2 * m <= cutoff {
        amps[2 * m] = c;
        m += 1;
        c = c * ratio * ((2 * m - 1) as f64 / (2 * m) as f64).sqrt();
    }
    let mut tail = 0.0;
    loop {
        let p = c.norm_sqr();
        tail += p;
        if p <= tail * 1e-17 || p == 0.0 {
            break;
        }
        m += 1;
        c = c * ratio * ((2 * m - 1) as f64 / (2 * m) as f64).sqrt();
    }
    if tail > tol {
        return Err(truncation("squeezed vacuum", cutoff, tail, tol));
    }
    Ok(PureState::new(vec![cutoff + 1], amps)?.with_tail_mass(tail))
}
