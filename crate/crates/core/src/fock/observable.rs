use std::f64::consts::FRAC_1_SQRT_2;

use super::{flat_index, occupation, MixedState, PureState};
use crate::error::{Error, Result};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    Annihilate,
    Create,
    Number,
    /// `X_Θ = (b e^{−iΘ} + b† e^{iΘ})/√2`, vacuum variance ½.
    Quadrature(f64),
}

/// A single-mode operator acting on `mode`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeOperator {
    pub kind: OpKind,
    pub mode: usize,
}

impl ModeOperator {
    pub fn annihilate(mode: usize) -> Self {
        Self {
            kind: OpKind::Annihilate,
            mode,
        }
    }

    pub fn create(mode: usize) -> Self {
        Self {
            kind: OpKind::Create,
            mode,
        }
    }

    pub fn number(mode: usize) -> Self {
        Self {
            kind: OpKind::Number,
            mode,
        }
    }

    pub fn quadrature(mode: usize, angle: f64) -> Self {
        Self {
            kind: OpKind::Quadrature(angle),
            mode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ladder {
    Lower,
    Raise,
    Count,
}

/// A polynomial in mode operators: `Σ c_k Π_j O_{kj}`, products read left to right.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Observable {
    terms: Vec<(C64, Vec<ModeOperator>)>,
}

impl Observable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn monomial(ops: Vec<ModeOperator>) -> Self {
        Self::new().term(C64::new(1.0, 0.0), ops)
    }

    pub fn term(mut self, coeff: C64, ops: Vec<ModeOperator>) -> Self {
        self.terms.push((coeff, ops));
        self
    }

    pub fn terms(&self) -> &[(C64, Vec<ModeOperator>)] {
        &self.terms
    }

    fn max_mode(&self) -> Option<usize> {
        self.terms.iter().flat_map(|(_, ops)| ops.iter().map(|o| o.mode)).max()
    }

    /// Expand quadratures into ladder words with scalar weights.
    fn ladder_words(&self) -> Vec<(C64, Vec<(Ladder, usize)>)> {
        let mut out = Vec::new();
        for (coeff, ops) in &self.terms {
            let mut words: Vec<(C64, Vec<(Ladder, usize)>)> = vec![(*coeff, Vec::new())];
            for op in ops {
                let choices: Vec<(C64, Ladder)> = match op.kind {
                    OpKind::Annihilate => vec![(C64::new(1.0, 0.0), Ladder::Lower)],
                    OpKind::Create => vec![(C64::new(1.0, 0.0), Ladder::Raise)],
                    OpKind::Number => vec![(C64::new(1.0, 0.0), Ladder::Count)],
                    OpKind::Quadrature(theta) => vec![
                        (C64::from_polar(FRAC_1_SQRT_2, -theta), Ladder::Lower),
                        (C64::from_polar(FRAC_1_SQRT_2, theta), Ladder::Raise),
                    ],
                };
                words = words
                    .into_iter()
                    .flat_map(|(w, word)| {
                        choices.iter().map(move |(c, l)| {
                            let mut next = word.clone();
                            next.push((*l, op.mode));
                            (w * c, next)
                        })
                    })
                    .collect();
            }
            out.extend(words);
        }
        out
    }
}

/// Applies a ladder word (rightmost first) to a basis state in the untruncated
/// space; returns the scalar factor, leaving the image occupation in `occ`.
fn apply_word(word: &[(Ladder, usize)], occ: &mut [usize]) -> f64 {
    let mut coeff = 1.0;
    for &(l, m) in word.iter().rev() {
        match l {
            Ladder::Lower => {
                if occ[m] == 0 {
                    return 0.0;
                }
                coeff *= (occ[m] as f64).sqrt();
                occ[m] -= 1;
            }
            Ladder::Raise => {
                occ[m] += 1;
                coeff *= (occ[m] as f64).sqrt();
            }
            Ladder::Count => coeff *= occ[m] as f64,
        }
    }
    coeff
}

/// Expectation values `⟨ψ|O|ψ⟩` or `tr(ρO)`.
///
/// Ladder words act on the state embedded in the untruncated Fock space, so
/// no boundary leakage occurs at the cutoff.
pub trait Expectation {
    fn expectation(&self, obs: &Observable) -> Result<C64>;
}

fn check_modes(obs: &Observable, modes: usize) -> Result<()> {
    match obs.max_mode() {
        Some(m) if m >= modes => Err(Error::Dimension(format!(
            "operator acts on mode {m} of a {modes}-mode state"
        ))),
        _ => Ok(()),
    }
}

impl Expectation for PureState {
    fn expectation(&self, obs: &Observable) -> Result<C64> {
        check_modes(obs, self.num_modes())?;
        let dims = self.dims();
        let amps = self.amplitudes();
        let mut occ = vec![0; dims.len()];
        let mut total = C64::new(0.0, 0.0);
        for (w, word) in obs.ladder_words() {
            let mut acc = C64::new(0.0, 0.0);
            for (i, z) in amps.iter().enumerate() {
                if z.norm_sqr() == 0.0 {
                    continue;
                }
                occupation(dims, i, &mut occ);
                let c = apply_word(&word, &mut occ);
                if c == 0.0 {
                    continue;
                }
                if let Some(j) = flat_index(dims, &occ) {
                    acc += amps[j].conj() * z * c;
                }
            }
            total += w * acc;
        }
        Ok(total)
    }
}

impl Expectation for MixedState {
    fn expectation(&self, obs: &Observable) -> Result<C64> {
        check_modes(obs, self.num_modes())?;
        let dims = self.dims();
        let rho = self.matrix();
        let mut occ = vec![0; dims.len()];
        let mut total = C64::new(0.0, 0.0);
        for (w, word) in obs.ladder_words() {
            let mut acc = C64::new(0.0, 0.0);
            // tr(ρW) = Σ_n ⟨n|ρ W|n⟩ with W|n⟩ = c|n'⟩.
            for n in 0..rho.nrows() {
                occupation(dims, n, &mut occ);
                let c = apply_word(&word, &mut occ);
                if c == 0.0 {
                    continue;
                }
                if let Some(np) = flat_index(dims, &occ) {
                    acc += rho[(n, np)] * c;
                }
            }
            total += w * acc;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{coherent_state, thermal_state};

    #[test]
    fn vacuum_number_is_zero() {
        let v = PureState::vacuum(vec![4]).unwrap();
        let n = v
            .expectation(&Observable::monomial(vec![ModeOperator::number(0)]))
            .unwrap();
        assert_eq!(n, C64::new(0.0, 0.0));
    }

    #[test]
    fn thermal_number_expectation() {
        let t = thermal_state(1.0, 60, 1e-10).unwrap();
        let n = t
            .expectation(&Observable::monomial(vec![ModeOperator::number(0)]))
            .unwrap();
        assert!((n.re - 1.0).abs() < 1e-10);
        assert!(n.im.abs() < 1e-15);
    }

    #[test]
    fn coherent_quadrature_convention() {
        let s = coherent_state(C64::new(1.0, 0.0), 30, 1e-10).unwrap();
        let x = s
            .expectation(&Observable::monomial(vec![ModeOperator::quadrature(0, 0.0)]))
            .unwrap();
        assert!((x.re - 2f64.sqrt()).abs() < 1e-9);
        assert!(x.im.abs() < 1e-10);
    }

    #[test]
    fn number_equals_create_annihilate() {
        let s = coherent_state(C64::new(0.8, -0.3), 30, 1e-10).unwrap();
        let n = s
            .expectation(&Observable::monomial(vec![ModeOperator::number(0)]))
            .unwrap();
        let ada = s
            .expectation(&Observable::monomial(vec![
                ModeOperator::create(0),
                ModeOperator::annihilate(0),
            ]))
            .unwrap();
        assert!((n - ada).norm() < 1e-14);
    }

    #[test]
    fn ladder_at_cutoff_uses_untruncated_algebra() {
        // a a† on |3⟩ (dimension 4) is 4, not the truncated-matrix value 0.
        let s = PureState::fock(vec![4], &[3]).unwrap();
        let aad = s
            .expectation(&Observable::monomial(vec![
                ModeOperator::annihilate(0),
                ModeOperator::create(0),
            ]))
            .unwrap();
        assert!((aad.re - 4.0).abs() < 1e-14);
    }

    #[test]
    fn pure_and_mixed_agree() {
        let s = coherent_state(C64::new(0.5, 0.5), 30, 1e-10)
            .unwrap()
            .tensor(&PureState::fock(vec![3], &[1]).unwrap());
        let obs = Observable::new()
            .term(
                C64::new(1.0, 0.0),
                vec![ModeOperator::create(0), ModeOperator::annihilate(1)],
            )
            .term(C64::new(0.0, 2.0), vec![ModeOperator::quadrature(0, 0.3)]);
        let a = s.expectation(&obs).unwrap();
        let b = s.to_mixed().expectation(&obs).unwrap();
        assert!((a - b).norm() < 1e-13);
    }

    #[test]
    fn out_of_range_mode_is_an_error() {
        let s = PureState::vacuum(vec![2]).unwrap();
        assert!(s
            .expectation(&Observable::monomial(vec![ModeOperator::number(1)]))
            .is_err());
    }
}
