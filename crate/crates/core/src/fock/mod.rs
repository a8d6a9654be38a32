//! Truncated Fock space: basis enumeration, ladder operators with Bose or
//! Fermi statistics, and the second-quantized Hamiltonian
//! `H = Σ W_n a†_n a_n + (g/2) Σ V_{nmkl} a†_n a†_m a_k a_l`.

mod basis;
mod density;
mod hamiltonian;
mod operator;

pub use basis::{FockBasis, Statistics, Truncation, DEFAULT_MAX_DIM};
pub use density::{DensityOperator, STATE_TOLERANCE};
pub use hamiltonian::{assemble_hamiltonian, ASSEMBLY_TOLERANCE};
pub use operator::{Operator, DENSE_LIMIT, HERMITIAN_TOLERANCE};

use num_complex::Complex64;

use crate::error::Result;
use crate::linalg::CMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LadderKind {
    Create,
    Annihilate,
}

/// `a†_r` or `a_r` as a matrix on `basis`.
pub fn ladder(basis: &FockBasis, r: usize, kind: LadderKind) -> Result<Operator> {
    basis.check_modes(&[r])?;
    let mut entries = Vec::new();
    for (j, occ) in basis.states().enumerate() {
        if let Some((out, amp)) = basis.create(occ, r) {
            let i = basis.index_of(&out).expect("created state is in the basis");
            entries.push((i, j, Complex64::new(amp, 0.0)));
        }
    }
    let create = Operator::from_triplets(basis.dim(), entries);
    Ok(match kind {
        LadderKind::Create => create,
        LadderKind::Annihilate => create.adjoint(),
    })
}

/// `(a†_r, a_r)` for every mode, built once.
#[derive(Debug, Clone)]
pub struct Ladders {
    pub create: Vec<Operator>,
    pub annihilate: Vec<Operator>,
}

impl Ladders {
    pub fn new(basis: &FockBasis) -> Self {
        let create: Vec<Operator> = (0..basis.n_modes())
            .map(|r| ladder(basis, r, LadderKind::Create).expect("mode in range"))
            .collect();
        let annihilate = create.iter().map(Operator::adjoint).collect();
        Self { create, annihilate }
    }
}

/// `N̂_M = Σ_{r∈M} a†_r a_r`, diagonal.
pub fn number_operator(basis: &FockBasis, subset: &[usize]) -> Result<Operator> {
    basis.check_modes(subset)?;
    let entries = (0..basis.dim()).filter_map(|i| {
        let n = basis.occupation(i, subset);
        (n > 0).then(|| (i, i, Complex64::new(n as f64, 0.0)))
    });
    Ok(Operator::from_triplets(basis.dim(), entries).with_hermitian_flag(true))
}

/// `Σ_{nm} c_{nm} a†_n a_m` built by direct action on occupation vectors.
pub fn one_body_operator(basis: &FockBasis, coefficients: &CMatrix) -> Result<Operator> {
    let m = basis.n_modes();
    if coefficients.nrows() != m || coefficients.ncols() != m {
        return Err(crate::Error::invalid(format!(
            "one-body coefficients are {}x{} for {m} modes",
            coefficients.nrows(),
            coefficients.ncols()
        )));
    }
    let mut entries = Vec::new();
    for (j, occ) in basis.states().enumerate() {
        for a in 0..m {
            let Some((mid, amp_a)) = basis.annihilate(occ, a) else { continue };
            for c in 0..m {
                let coeff = coefficients[(c, a)];
                if coeff == crate::linalg::ZERO {
                    continue;
                }
                let Some((out, amp_c)) = basis.create(&mid, c) else { continue };
                let i = basis.index_of(&out).expect("state in basis");
                entries.push((i, j, coeff * amp_a * amp_c));
            }
        }
    }
    let op = Operator::from_triplets(basis.dim(), entries);
    let hermitian = crate::linalg::hermiticity_defect(coefficients) == 0.0;
    Ok(op.with_hermitian_flag(hermitian))
}
