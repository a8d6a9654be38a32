use std::collections::HashMap;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_DIM: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Statistics {
    Bose,
    Fermi,
}

/// Truncation of the Fock space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Truncation {
    /// Occupation cap per mode; forced to 1 for fermions.
    pub per_mode: u8,
    /// Cap on the total particle number.
    pub total: usize,
    /// Hard limit on the basis dimension.
    pub max_dim: usize,
}

impl Truncation {
    pub fn new(per_mode: u8, total: usize) -> Self {
        Self {
            per_mode,
            total,
            max_dim: DEFAULT_MAX_DIM,
        }
    }
}

/// Occupation-number basis of a truncated Fock space.
///
/// States are ordered by mixed-radix counting with mode 0 as the least
/// significant digit, so the vacuum comes first and, for two fermionic
/// modes, the order is `(0,0), (1,0), (0,1), (1,1)`.
#[derive(Debug, Clone)]
pub struct FockBasis {
    statistics: Statistics,
    n_modes: usize,
    cap: u8,
    n_max: usize,
    states: Vec<Box<[u8]>>,
    index: HashMap<Box<[u8]>, usize>,
}

/// Number of occupation vectors with every entry `≤ cap` and sum `≤ n_max`.
fn count_states(n_modes: usize, cap: usize, n_max: usize) -> u128 {
    // ways[s] = vectors over the modes seen so far with sum exactly s
    let mut ways = vec![0u128; n_max + 1];
    ways[0] = 1;
    for _ in 0..n_modes {
        let mut next = vec![0u128; n_max + 1];
        for (s, &w) in ways.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for k in 0..=cap.min(n_max - s) {
                next[s + k] = next[s + k].saturating_add(w);
            }
        }
        ways = next;
    }
    ways.iter().fold(0u128, |a, &b| a.saturating_add(b))
}

impl FockBasis {
    pub fn enumerate(n_modes: usize, statistics: Statistics, truncation: Truncation) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::invalid("a Fock basis needs at least one mode"));
        }
        let cap = match statistics {
            Statistics::Fermi => 1,
            Statistics::Bose => truncation.per_mode,
        };
        let n_max = truncation.total;
        let dim = count_states(n_modes, cap as usize, n_max);
        if dim > truncation.max_dim as u128 {
            return Err(Error::CapacityExceeded {
                dim: usize::try_from(dim).unwrap_or(usize::MAX),
                limit: truncation.max_dim,
            });
        }

        let mut states = Vec::with_capacity(dim as usize);
        let mut occ = vec![0u8; n_modes];
        fill(&mut states, &mut occ, n_modes, cap, n_max);
        debug_assert_eq!(states.len() as u128, dim);
        let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Self {
            statistics,
            n_modes,
            cap,
            n_max,
            states,
            index,
        })
    }

    pub fn statistics(&self) -> Statistics {
        self.statistics
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn cap(&self) -> u8 {
        self.cap
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, i: usize) -> &[u8] {
        &self.states[i]
    }

    pub fn states(&self) -> impl Iterator<Item = &[u8]> {
        self.states.iter().map(|s| &s[..])
    }

    pub fn index_of(&self, occupations: &[u8]) -> Option<usize> {
        self.index.get(occupations).copied()
    }

    pub fn vacuum_index(&self) -> usize {
        0
    }

    /// `a†_r` on an occupation vector: the new vector and its amplitude
    /// (Bose `√(n_r+1)`, Fermi Jordan-Wigner sign), `None` when truncated
    /// or Pauli-blocked.
    pub fn create(&self, occupations: &[u8], r: usize) -> Option<(Box<[u8]>, f64)> {
        let n_r = occupations[r];
        let total: usize = occupations.iter().map(|&n| n as usize).sum();
        if n_r >= self.cap || total >= self.n_max {
            return None;
        }
        let amplitude = match self.statistics {
            Statistics::Bose => (n_r as f64 + 1.0).sqrt(),
            Statistics::Fermi => jordan_wigner_sign(occupations, r),
        };
        let mut out: Box<[u8]> = occupations.into();
        out[r] += 1;
        Some((out, amplitude))
    }

    /// `a_r` on an occupation vector.
    pub fn annihilate(&self, occupations: &[u8], r: usize) -> Option<(Box<[u8]>, f64)> {
        let n_r = occupations[r];
        if n_r == 0 {
            return None;
        }
        let amplitude = match self.statistics {
            Statistics::Bose => (n_r as f64).sqrt(),
            Statistics::Fermi => jordan_wigner_sign(occupations, r),
        };
        let mut out: Box<[u8]> = occupations.into();
        out[r] -= 1;
        Some((out, amplitude))
    }

    /// Total occupation of the modes in `subset`.
    pub fn occupation(&self, i: usize, subset: &[usize]) -> usize {
        subset.iter().map(|&r| self.states[i][r] as usize).sum()
    }

    pub fn check_modes(&self, subset: &[usize]) -> Result<()> {
        if let Some(&bad) = subset.iter().find(|&&r| r >= self.n_modes) {
            return Err(Error::invalid(format!("mode {bad} is outside a basis of {} modes", self.n_modes)));
        }
        let mut seen = subset.to_vec();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("mode subset lists a mode twice"));
        }
        Ok(())
    }
}

fn jordan_wigner_sign(occupations: &[u8], r: usize) -> f64 {
    let parity: usize = occupations[..r].iter().map(|&n| n as usize).sum();
    if parity.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Emit states with the highest mode as the outermost (most significant)
/// loop.
fn fill(states: &mut Vec<Box<[u8]>>, occ: &mut [u8], remaining_modes: usize, cap: u8, budget: usize) {
    if remaining_modes == 0 {
        states.push(occ.to_vec().into_boxed_slice());
        return;
    }
    let mode = remaining_modes - 1;
    for k in 0..=(cap as usize).min(budget) {
        occ[mode] = k as u8;
        fill(states, occ, mode, cap, budget - k);
    }
    occ[mode] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(m: usize, s: Statistics, cap: u8, n: usize) -> FockBasis {
        FockBasis::enumerate(m, s, Truncation::new(cap, n)).unwrap()
    }

    #[test]
    fn two_fermi_modes() {
        let b = basis(2, Statistics::Fermi, 5, 2);
        let states: Vec<&[u8]> = b.states().collect();
        assert_eq!(states, vec![&[0, 0][..], &[1, 0], &[0, 1], &[1, 1]]);
        assert_eq!(b.cap(), 1);
    }

    #[test]
    fn two_bose_modes_capped() {
        let b = basis(2, Statistics::Bose, 2, 2);
        assert_eq!(b.dim(), 6);
        assert_eq!(b.state(0), &[0, 0]);
        for (i, s) in b.states().enumerate() {
            assert_eq!(b.index_of(s), Some(i));
            assert!(s.iter().map(|&n| n as usize).sum::<usize>() <= 2);
        }
    }

    #[test]
    fn empty_system_is_vacuum() {
        for s in [Statistics::Bose, Statistics::Fermi] {
            let b = basis(1, s, 3, 0);
            assert_eq!(b.dim(), 1);
            assert_eq!(b.state(0), &[0]);
        }
    }

    #[test]
    fn capacity_is_enforced() {
        let t = Truncation {
            per_mode: 3,
            total: 6,
            max_dim: 100,
        };
        let err = FockBasis::enumerate(8, Statistics::Bose, t).unwrap_err();
        assert!(matches!(err, Error::CapacityExceeded { limit: 100, .. }));
    }

    #[test]
    fn counting_matches_enumeration() {
        for (m, cap, n) in [(3, 2, 4), (5, 1, 3), (4, 3, 2), (2, 2, 2)] {
            let b = basis(m, Statistics::Bose, cap, n);
            assert_eq!(b.dim() as u128, count_states(m, cap as usize, n));
        }
    }

    #[test]
    fn jordan_wigner_sign_counts_lower_modes() {
        let b = basis(2, Statistics::Fermi, 1, 2);
        let (out, amp) = b.create(&[1, 0], 1).unwrap();
        assert_eq!(&*out, &[1, 1]);
        assert_eq!(amp, -1.0);
        assert!(b.create(&[1, 0], 0).is_none());
    }
}
