use nalgebra_sparse::{CooMatrix, CsrMatrix};
use num_complex::Complex64;

use crate::cache::{self, PayloadKind, Reader};
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, ZERO};

/// Dimensions at or above this are stored sparse.
pub const DENSE_LIMIT: usize = 512;

pub const HERMITIAN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Storage {
    Dense(CMatrix),
    Sparse(CsrMatrix<Complex64>),
}

/// Square complex matrix on a Fock basis.
#[derive(Debug, Clone)]
pub struct Operator {
    storage: Storage,
    hermitian: bool,
}

impl Operator {
    /// Build from `(row, col, value)` entries; duplicates are summed.
    pub fn from_triplets(dim: usize, entries: impl IntoIterator<Item = (usize, usize, Complex64)>) -> Self {
        if dim < DENSE_LIMIT {
            let mut m = CMatrix::zeros(dim, dim);
            for (i, j, v) in entries {
                m[(i, j)] += v;
            }
            Self::from_dense(m)
        } else {
            let mut coo = CooMatrix::new(dim, dim);
            for (i, j, v) in entries {
                coo.push(i, j, v);
            }
            Self {
                storage: Storage::Sparse(CsrMatrix::from(&coo)),
                hermitian: false,
            }
        }
    }

    pub fn from_dense(m: CMatrix) -> Self {
        assert!(m.is_square(), "operators are square");
        Self {
            storage: Storage::Dense(m),
            hermitian: false,
        }
    }

    /// Dense Hermitian operator; fails if `‖A − A†‖_max ≥ 1e-12`.
    pub fn hermitian(m: CMatrix) -> Result<Self> {
        Self::from_dense(m).into_hermitian()
    }

    /// Set the hermitian flag after checking it.
    pub fn into_hermitian(mut self) -> Result<Self> {
        let defect = self.hermiticity_defect();
        if defect >= HERMITIAN_TOLERANCE {
            return Err(Error::invalid(format!("operator is not Hermitian (defect {defect:e})")));
        }
        self.hermitian = true;
        Ok(self)
    }

    pub(crate) fn with_hermitian_flag(mut self, flag: bool) -> Self {
        self.hermitian = flag;
        self
    }

    pub fn zero(dim: usize) -> Self {
        Self::from_triplets(dim, std::iter::empty()).with_hermitian_flag(true)
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_triplets(dim, (0..dim).map(|i| (i, i, linalg::ONE))).with_hermitian_flag(true)
    }

    pub fn dim(&self) -> usize {
        match &self.storage {
            Storage::Dense(m) => m.nrows(),
            Storage::Sparse(m) => m.nrows(),
        }
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse(_))
    }

    pub fn triplets(&self) -> Vec<(usize, usize, Complex64)> {
        match &self.storage {
            Storage::Dense(m) => {
                let mut out = Vec::new();
                for j in 0..m.ncols() {
                    for i in 0..m.nrows() {
                        let v = m[(i, j)];
                        if v != ZERO {
                            out.push((i, j, v));
                        }
                    }
                }
                out
            }
            Storage::Sparse(m) => m.triplet_iter().map(|(i, j, v)| (i, j, *v)).collect(),
        }
    }

    pub fn to_dense(&self) -> CMatrix {
        match &self.storage {
            Storage::Dense(m) => m.clone(),
            Storage::Sparse(m) => {
                let mut d = CMatrix::zeros(m.nrows(), m.ncols());
                for (i, j, v) in m.triplet_iter() {
                    d[(i, j)] += *v;
                }
                d
            }
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        match &self.storage {
            Storage::Dense(m) => m[(i, j)],
            Storage::Sparse(m) => m.get_entry(i, j).map_or(ZERO, |e| e.into_value()),
        }
    }

    pub fn adjoint(&self) -> Self {
        let storage = match &self.storage {
            Storage::Dense(m) => Storage::Dense(m.adjoint()),
            Storage::Sparse(m) => {
                let mut t = m.transpose();
                t.values_mut().iter_mut().for_each(|v| *v = v.conj());
                Storage::Sparse(t)
            }
        };
        Self {
            storage,
            hermitian: self.hermitian,
        }
    }

    pub fn hermiticity_defect(&self) -> f64 {
        match &self.storage {
            Storage::Dense(m) => linalg::hermiticity_defect(m),
            Storage::Sparse(_) => self.sub(&self.adjoint()).max_abs(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        match &self.storage {
            Storage::Dense(m) => linalg::max_abs(m),
            Storage::Sparse(m) => m.values().iter().fold(0.0, |a, v| a.max(v.norm())),
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim(), other.dim(), "operator dimensions differ");
        let storage = match (&self.storage, &other.storage) {
            (Storage::Sparse(a), Storage::Sparse(b)) => Storage::Sparse(a * b),
            (Storage::Dense(a), Storage::Dense(b)) => Storage::Dense(a * b),
            (_, Storage::Dense(b)) => Storage::Dense(self.mul_dense(b)),
            (Storage::Dense(a), _) => Storage::Dense(other.left_mul_dense(a)),
        };
        Self {
            storage,
            hermitian: false,
        }
    }

    fn combine(&self, other: &Self, sign: f64) -> Self {
        assert_eq!(self.dim(), other.dim(), "operator dimensions differ");
        let storage = match (&self.storage, &other.storage) {
            (Storage::Sparse(a), Storage::Sparse(b)) => {
                let mut scaled = b.clone();
                scaled.values_mut().iter_mut().for_each(|v| *v *= sign);
                Storage::Sparse(a + &scaled)
            }
            _ => Storage::Dense(self.to_dense() + other.to_dense().scale(sign)),
        };
        Self {
            storage,
            hermitian: self.hermitian && other.hermitian,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.combine(other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.combine(other, -1.0)
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let storage = match &self.storage {
            Storage::Dense(m) => Storage::Dense(m * c),
            Storage::Sparse(m) => {
                let mut s = m.clone();
                s.values_mut().iter_mut().for_each(|v| *v *= c);
                Storage::Sparse(s)
            }
        };
        Self {
            storage,
            hermitian: self.hermitian && c.im == 0.0,
        }
    }

    pub fn commutator(&self, other: &Self) -> Self {
        self.matmul(other).sub(&other.matmul(self))
    }

    /// `A · X` for a dense `X`.
    pub fn mul_dense(&self, x: &CMatrix) -> CMatrix {
        match &self.storage {
            Storage::Dense(m) => m * x,
            Storage::Sparse(m) => {
                let mut out = CMatrix::zeros(m.nrows(), x.ncols());
                for (i, k, v) in m.triplet_iter() {
                    for j in 0..x.ncols() {
                        out[(i, j)] += *v * x[(k, j)];
                    }
                }
                out
            }
        }
    }

    /// `X · A` for a dense `X`.
    pub fn left_mul_dense(&self, x: &CMatrix) -> CMatrix {
        match &self.storage {
            Storage::Dense(m) => x * m,
            Storage::Sparse(m) => {
                let mut out = CMatrix::zeros(x.nrows(), m.ncols());
                for (k, j, v) in m.triplet_iter() {
                    for i in 0..x.nrows() {
                        out[(i, j)] += x[(i, k)] * *v;
                    }
                }
                out
            }
        }
    }

    /// `Tr(A ρ)`
    pub fn expectation(&self, rho: &CMatrix) -> Complex64 {
        match &self.storage {
            Storage::Dense(m) => linalg::trace_of_product(m, rho),
            Storage::Sparse(m) => m.triplet_iter().map(|(i, k, v)| *v * rho[(k, i)]).sum(),
        }
    }

    /// Serialize into the versioned binary container (dense payload).
    pub fn to_bytes(&self, key: &[u8; 32]) -> Vec<u8> {
        let d = self.to_dense();
        let mut payload = Vec::with_capacity(9 + 16 * d.len());
        payload.extend((self.dim() as u64).to_le_bytes());
        payload.push(self.hermitian as u8);
        for j in 0..d.ncols() {
            for i in 0..d.nrows() {
                payload.extend(d[(i, j)].re.to_le_bytes());
                payload.extend(d[(i, j)].im.to_le_bytes());
            }
        }
        cache::encode(PayloadKind::Operator, key, &payload)
    }

    pub fn from_bytes(bytes: &[u8], key: &[u8; 32]) -> Result<Option<Self>> {
        let Some(payload) = cache::decode(bytes, PayloadKind::Operator, key)? else {
            return Ok(None);
        };
        let mut r = Reader::new(payload);
        let dim = r.u64()? as usize;
        let hermitian = r.u8()? != 0;
        let mut d = CMatrix::zeros(dim, dim);
        for j in 0..dim {
            for i in 0..dim {
                let re = r.f64()?;
                let im = r.f64()?;
                d[(i, j)] = Complex64::new(re, im);
            }
        }
        r.finish()?;
        let op = Self::from_triplets(dim, (0..dim).flat_map(|j| (0..dim).map(move |i| (i, j))).filter_map(|(i, j)| {
            let v = d[(i, j)];
            (v != ZERO).then_some((i, j, v))
        }));
        Ok(Some(op.with_hermitian_flag(hermitian)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_hermitian, I, ONE};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sparse_pair(dim: usize) -> (Operator, Operator) {
        let a = Operator::from_triplets(dim, (0..dim - 1).map(|i| (i + 1, i, Complex64::new(i as f64, 1.0))));
        let b = Operator::from_triplets(dim, (0..dim).map(|i| (i, (i * 7) % dim, I * (i as f64))));
        (a, b)
    }

    #[test]
    fn storage_follows_dimension() {
        assert!(!Operator::identity(DENSE_LIMIT - 1).is_sparse());
        assert!(Operator::identity(DENSE_LIMIT).is_sparse());
    }

    #[test]
    fn sparse_and_dense_algebra_agree() {
        let dim = DENSE_LIMIT + 3;
        let (a, b) = sparse_pair(dim);
        assert!(a.is_sparse());
        let (da, db) = (a.to_dense(), b.to_dense());
        let dense_a = Operator::from_dense(da.clone());
        assert!(linalg::max_abs(&(a.matmul(&b).to_dense() - &da * &db)) < 1e-12);
        assert!(linalg::max_abs(&(dense_a.matmul(&b).to_dense() - &da * &db)) < 1e-12);
        assert!(linalg::max_abs(&(a.sub(&b).to_dense() - (&da - &db))) < 1e-12);
        assert!(linalg::max_abs(&(a.adjoint().to_dense() - da.adjoint())) == 0.0);
        assert_eq!(a.get(1, 0), Complex64::new(0.0, 1.0));
        let rho = CMatrix::from_fn(dim, dim, |i, j| Complex64::new((i + 2 * j) as f64, 0.0));
        let expect = linalg::trace_of_product(&da, &rho);
        assert!((a.expectation(&rho) - expect).norm() < 1e-9);
        assert!(linalg::max_abs(&(a.left_mul_dense(&rho) - &rho * &da)) < 1e-9);
    }

    #[test]
    fn hermitian_flag_is_verified() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_hermitian(&mut rng, 4);
        assert!(Operator::hermitian(h.clone()).unwrap().is_hermitian());
        let mut bad = h;
        bad[(0, 1)] += ONE;
        assert!(Operator::hermitian(bad).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let op = Operator::hermitian(random_hermitian(&mut rng, 5)).unwrap();
        let key = [1u8; 32];
        let bytes = op.to_bytes(&key);
        let back = Operator::from_bytes(&bytes, &key).unwrap().unwrap();
        assert_eq!(back.to_dense(), op.to_dense());
        assert!(back.is_hermitian());
        assert!(Operator::from_bytes(&bytes, &[0u8; 32]).unwrap().is_none());
    }
}
