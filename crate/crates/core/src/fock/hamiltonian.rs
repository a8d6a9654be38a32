use num_complex::Complex64;

use super::{FockBasis, Operator};
use crate::error::{Error, Result};
use crate::lattice::TwoBodyTensor;

/// Largest tolerated `‖H − H†‖_max` before assembly is rejected.
pub const ASSEMBLY_TOLERANCE: f64 = 1e-10;

/// `H = Σ W_n a†_n a_n + (g_int/2) Σ V_{nmkl} a†_n a†_m a_k a_l`.
///
/// Matrix elements are produced by acting on each occupation vector in the
/// normal order written above (`a_l` first), so per-mode truncation is
/// applied exactly as in a product of truncated ladder matrices.
pub fn assemble_hamiltonian(basis: &FockBasis, energies: &[f64], tensor: &TwoBodyTensor, g_int: f64) -> Result<Operator> {
    let m = basis.n_modes();
    if energies.len() != m || tensor.n_modes() != m {
        return Err(Error::invalid(format!(
            "basis has {m} modes, energies {} and tensor {}",
            energies.len(),
            tensor.n_modes()
        )));
    }
    let half_g = 0.5 * g_int;
    let mut entries = Vec::new();
    for (j, occ) in basis.states().enumerate() {
        let free: f64 = occ.iter().zip(energies).map(|(&n, w)| n as f64 * w).sum();
        if free != 0.0 {
            entries.push((j, j, Complex64::new(free, 0.0)));
        }
        if half_g == 0.0 {
            continue;
        }
        for l in 0..m {
            let Some((s1, a1)) = basis.annihilate(occ, l) else { continue };
            for k in 0..m {
                let Some((s2, a2)) = basis.annihilate(&s1, k) else { continue };
                for mm in 0..m {
                    let Some((s3, a3)) = basis.create(&s2, mm) else { continue };
                    for n in 0..m {
                        let v = tensor.get(n, mm, k, l);
                        if v == 0.0 {
                            continue;
                        }
                        let Some((s4, a4)) = basis.create(&s3, n) else { continue };
                        let i = basis.index_of(&s4).expect("number-conserving image stays in the basis");
                        entries.push((i, j, Complex64::new(half_g * v * a1 * a2 * a3 * a4, 0.0)));
                    }
                }
            }
        }
    }
    let h = Operator::from_triplets(basis.dim(), entries);
    let defect = h.hermiticity_defect();
    if defect > ASSEMBLY_TOLERANCE {
        return Err(Error::AssemblyFailure { defect });
    }
    Ok(h.with_hermitian_flag(true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{number_operator, Ladders, Statistics, Truncation};
    use crate::lattice::{solve_modes, two_body_elements, PotentialSpec, SpatialGrid, TwoBodyKernel};

    fn bose(m: usize, cap: u8, n: usize) -> FockBasis {
        FockBasis::enumerate(m, Statistics::Bose, Truncation::new(cap, n)).unwrap()
    }

    /// Sum of products of ladder matrices over every index tuple.
    fn ladder_product_oracle(basis: &FockBasis, w: &[f64], v: &TwoBodyTensor, g: f64) -> Operator {
        let l = Ladders::new(basis);
        let m = basis.n_modes();
        let mut h = Operator::zero(basis.dim());
        for n in 0..m {
            h = h.add(&l.create[n].matmul(&l.annihilate[n]).scale(w[n].into()));
        }
        for n in 0..m {
            for mm in 0..m {
                for k in 0..m {
                    for ll in 0..m {
                        let term = l.create[n]
                            .matmul(&l.create[mm])
                            .matmul(&l.annihilate[k])
                            .matmul(&l.annihilate[ll]);
                        h = h.add(&term.scale((0.5 * g * v.get(n, mm, k, ll)).into()));
                    }
                }
            }
        }
        h
    }

    #[test]
    fn single_mode_contact() {
        let b = bose(1, 2, 2);
        let mut v = TwoBodyTensor::zeros(1);
        v.set(0, 0, 0, 0, 0.7);
        let h = assemble_hamiltonian(&b, &[2.0], &v, 1.0).unwrap().to_dense();
        let expected = [0.0, 2.0, 4.7];
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { expected[i] } else { 0.0 };
                assert!((h[(i, j)].re - target).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn free_field_is_diagonal() {
        let b = bose(3, 2, 2);
        let grid = SpatialGrid::new(1.0, 50).unwrap();
        let modes = solve_modes(&grid, &PotentialSpec::Zero, 3).unwrap();
        let v = two_body_elements(&modes, &TwoBodyKernel::Contact { g: 1.0 }, &[0, 1, 2]).unwrap();
        let h = assemble_hamiltonian(&b, &modes.energies, &v, 0.0).unwrap();
        for i in 0..b.dim() {
            for j in 0..b.dim() {
                let expected: f64 = if i == j {
                    b.state(i).iter().zip(&modes.energies).map(|(&n, w)| n as f64 * w).sum()
                } else {
                    0.0
                };
                assert!((h.get(i, j).re - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_two_mode_matches_ladder_products() {
        let grid = SpatialGrid::new(1.0, 80).unwrap();
        let modes = solve_modes(&grid, &PotentialSpec::Zero, 2).unwrap();
        let v = two_body_elements(&modes, &TwoBodyKernel::Gaussian { g: 3.0, range: 0.15 }, &[0, 1]).unwrap();
        for (cap, n) in [(2, 2), (3, 3), (1, 2)] {
            let b = bose(2, cap, n);
            let h = assemble_hamiltonian(&b, &modes.energies, &v, 0.8).unwrap();
            let oracle = ladder_product_oracle(&b, &modes.energies, &v, 0.8);
            assert!(h.sub(&oracle).max_abs() < 1e-12, "cap {cap} n {n}");
            assert!(h.to_dense().iter().all(|z| z.im == 0.0));
        }
    }

    #[test]
    fn fermi_hamiltonian_matches_ladder_products_and_conserves_number() {
        let grid = SpatialGrid::new(1.0, 60).unwrap();
        let modes = solve_modes(&grid, &PotentialSpec::Zero, 4).unwrap();
        let v = two_body_elements(&modes, &TwoBodyKernel::Gaussian { g: 2.0, range: 0.2 }, &[0, 1, 2, 3]).unwrap();
        let b = FockBasis::enumerate(4, Statistics::Fermi, Truncation::new(1, 3)).unwrap();
        let h = assemble_hamiltonian(&b, &modes.energies, &v, 1.0).unwrap();
        let oracle = ladder_product_oracle(&b, &modes.energies, &v, 1.0);
        assert!(h.sub(&oracle).max_abs() < 1e-12);
        let n = number_operator(&b, &[0, 1, 2, 3]).unwrap();
        assert!(h.commutator(&n).max_abs() < 1e-10);
    }

    #[test]
    fn asymmetric_tensor_is_rejected() {
        let b = bose(2, 2, 2);
        let mut v = TwoBodyTensor::zeros(2);
        v.set(1, 1, 0, 0, 1.0);
        let err = assemble_hamiltonian(&b, &[1.0, 2.0], &v, 1.0).unwrap_err();
        assert!(matches!(err, Error::AssemblyFailure { .. }));
    }

    #[test]
    fn shape_mismatch_is_invalid() {
        let b = bose(2, 2, 2);
        assert!(assemble_hamiltonian(&b, &[1.0], &TwoBodyTensor::zeros(2), 1.0).is_err());
    }
}
