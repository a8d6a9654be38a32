//! Small dense complex linear-algebra helpers shared across modules.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type CMatrix = DMatrix<Complex64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
pub const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn new(m: &CMatrix) -> Self {
        assert!(m.is_square(), "eigen-decomposition needs a square matrix");
        let n = m.nrows();
        // symmetrize so that rounding noise does not leak into the solver
        let sym = (m + m.adjoint()).scale(0.5);
        let eig = sym.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[a]
                .partial_cmp(&eig.eigenvalues[b])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors = CMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Self { values, vectors }
    }

    /// Rebuild `V f(D) V†` for a real spectral function.
    pub fn apply(&self, f: impl Fn(f64) -> Complex64) -> CMatrix {
        let mut scaled = self.vectors.clone();
        for (j, &v) in self.values.iter().enumerate() {
            let c = f(v);
            for x in scaled.column_mut(j).iter_mut() {
                *x *= c;
            }
        }
        scaled * self.vectors.adjoint()
    }

    pub fn reconstruction_residual(&self, m: &CMatrix) -> f64 {
        max_abs(&(self.apply(Complex64::from) - m))
    }
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// `Tr(a b)` without forming the product.
pub fn trace_of_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    assert_eq!(a.ncols(), b.nrows());
    assert_eq!(a.nrows(), b.ncols());
    let mut acc = ZERO;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn trace(m: &CMatrix) -> Complex64 {
    m.diagonal().iter().copied().sum()
}

pub fn purity(rho: &CMatrix) -> f64 {
    trace_of_product(rho, rho).re
}

/// Sum of singular values.
pub fn trace_norm(m: &CMatrix) -> f64 {
    m.clone().svd(false, false).singular_values.iter().sum()
}

/// `½‖a − b‖₁`
pub fn trace_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    0.5 * trace_norm(&(a - b))
}

pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    HermitianEigen::new(m).values[0]
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn real_matrix(rows: &[&[f64]]) -> CMatrix {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    CMatrix::from_fn(n, m, |i, j| Complex64::new(rows[i][j], 0.0))
}

fn gaussian_complex<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Random Hermitian matrix with Gaussian entries (GUE up to scale).
pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMatrix {
    let g = CMatrix::from_fn(n, n, |_, _| gaussian_complex(rng));
    (&g + g.adjoint()).scale(0.5)
}

/// Random density matrix `G G† / Tr(G G†)` with Ginibre `G`.
pub fn random_density<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMatrix {
    let g = CMatrix::from_fn(n, n, |_, _| gaussian_complex(rng));
    let p = &g * g.adjoint();
    let t = trace(&p).re;
    p.unscale(t)
}

pub fn random_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> nalgebra::DVector<Complex64> {
    nalgebra::DVector::from_fn(n, |_, _| gaussian_complex(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eigen_reconstructs_random_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_hermitian(&mut rng, 7);
        let eig = HermitianEigen::new(&h);
        assert!(eig.reconstruction_residual(&h) < 1e-12);
        assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn random_density_is_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rho = random_density(&mut rng, 5);
        assert!((trace(&rho).re - 1.0).abs() < 1e-12);
        assert!(min_eigenvalue(&rho) > -1e-12);
        assert!(hermiticity_defect(&rho) < 1e-12);
    }

    #[test]
    fn trace_distance_of_orthogonal_pure_states_is_one() {
        let a = real_matrix(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let b = real_matrix(&[&[0.0, 0.0], &[0.0, 1.0]]);
        assert!((trace_distance(&a, &b) - 1.0).abs() < 1e-14);
    }
}
