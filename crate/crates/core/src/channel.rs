//! Microchannel states and the reduction of Fock-space observables to the
//! one-particle space spanned by the channel modes `M`.
//!
//! * unfed state `ρ⁰` with `a_r ρ⁰ = 0` for every `r ∈ M`,
//! * fed state `ρ⁽¹⁾ = Σ w_{rr'} a†_r ρ⁰ a_{r'}`,
//! * mixture `(1−λ) ρ⁰ + λ ρ⁽¹⁾`,
//! * reduced observables `A⁽¹⁾_{r'r} = Tr(a_{r'} Â a†_r ρ⁰)` and effects
//!   `F⁽¹⁾(S)` obtained the same way from a projection-valued measure.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{ladder, number_operator, DensityOperator, FockBasis, LadderKind, Operator};
use crate::linalg::{self, CMatrix, HermitianEigen, ZERO};

/// Algebraic identities.
pub const ALGEBRAIC_TOLERANCE: f64 = 1e-12;
/// Accumulated sums (completeness, trace of fed states).
pub const SUM_TOLERANCE: f64 = 1e-8;

/// Channel mode set, channel matrix and feeding probability.
#[derive(Debug, Clone)]
pub struct ChannelSpec {
    modes: Vec<usize>,
    w: CMatrix,
    lambda: f64,
    bandwidth: f64,
}

impl ChannelSpec {
    /// `energies` are the single-particle energies of every mode; only the
    /// channel entries are used, to derive the bandwidth `ΔW`.
    pub fn new(modes: Vec<usize>, w: CMatrix, lambda: f64, energies: &[f64]) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::invalid("channel needs at least one mode"));
        }
        if let Some(&bad) = modes.iter().find(|&&r| r >= energies.len()) {
            return Err(Error::invalid(format!("channel mode {bad} has no energy")));
        }
        if w.nrows() != modes.len() || w.ncols() != modes.len() {
            return Err(Error::invalid(format!(
                "channel matrix is {}x{} for {} modes",
                w.nrows(),
                w.ncols(),
                modes.len()
            )));
        }
        validate_channel_matrix(&w)?;
        check_lambda(lambda)?;
        let ws = modes.iter().map(|&r| energies[r]);
        let hi = ws.clone().fold(f64::NEG_INFINITY, f64::max);
        let lo = ws.fold(f64::INFINITY, f64::min);
        Ok(Self {
            modes,
            w,
            lambda,
            bandwidth: hi - lo,
        })
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.w
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `ΔW = max W_r − min W_r` over the channel.
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// `τ ≈ ħ/ΔW`; infinite for a single-energy channel.
    pub fn timescale(&self) -> f64 {
        if self.bandwidth > 0.0 {
            1.0 / self.bandwidth
        } else {
            f64::INFINITY
        }
    }

    pub fn one_particle_state(&self, energies: &[f64]) -> OneParticleState {
        let h0 = CMatrix::from_fn(self.modes.len(), self.modes.len(), |i, j| {
            if i == j {
                Complex64::new(energies[self.modes[i]], 0.0)
            } else {
                ZERO
            }
        });
        OneParticleState {
            w1: self.w.clone(),
            h0,
        }
    }
}

/// Hermitian, positive, unit trace.
pub fn validate_channel_matrix(w: &CMatrix) -> Result<()> {
    if !w.is_square() || w.nrows() == 0 {
        return Err(Error::invalid("channel matrix must be square and non-empty"));
    }
    let defect = linalg::hermiticity_defect(w);
    if defect > ALGEBRAIC_TOLERANCE {
        return Err(Error::invalid(format!("channel matrix is not Hermitian (defect {defect:e})")));
    }
    let trace = linalg::trace(w).re;
    if (trace - 1.0).abs() > 1e-10 {
        return Err(Error::invalid(format!("channel matrix has trace {trace}")));
    }
    let min = linalg::min_eigenvalue(w);
    if min < -ALGEBRAIC_TOLERANCE {
        return Err(Error::invalid(format!("channel matrix has eigenvalue {min:e}")));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("feeding probability must lie in (0, 1), got {lambda}")))
    }
}

/// `W⁽¹⁾` with its free Hamiltonian `H⁽¹⁾₀ = diag(W_r)`.
#[derive(Debug, Clone)]
pub struct OneParticleState {
    pub w1: CMatrix,
    pub h0: CMatrix,
}

/// Wire format `{"dim": k, "re": [[...]], "im": [[...]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ChannelMatrixJson {
    pub dim: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl ChannelMatrixJson {
    pub fn from_matrix(m: &CMatrix) -> Self {
        let rows = |f: fn(&Complex64) -> f64| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| f(&m[(i, j)])).collect()).collect()
        };
        Self {
            dim: m.nrows(),
            re: rows(|z| z.re),
            im: rows(|z| z.im),
        }
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        let k = self.dim;
        let shaped = |rows: &Vec<Vec<f64>>| rows.len() == k && rows.iter().all(|r| r.len() == k);
        if !shaped(&self.re) || !shaped(&self.im) {
            return Err(Error::invalid(format!("channel matrix JSON is not {k}x{k}")));
        }
        Ok(DMatrix::from_fn(k, k, |i, j| Complex64::new(self.re[i][j], self.im[i][j])))
    }
}

/// Largest `|ρ_ij|` touching a state with some occupation in `modes`.
fn support_on(basis: &FockBasis, rho: &CMatrix, modes: &[usize]) -> f64 {
    let occupied: Vec<bool> = (0..basis.dim()).map(|i| basis.occupation(i, modes) > 0).collect();
    let mut worst: f64 = 0.0;
    for j in 0..basis.dim() {
        for i in 0..basis.dim() {
            if occupied[i] || occupied[j] {
                worst = worst.max(rho[(i, j)].norm());
            }
        }
    }
    worst
}

/// `max_r ‖a_r ρ‖_max` over the channel modes.
pub fn kernel_defect(basis: &FockBasis, rho: &CMatrix, modes: &[usize]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &r in modes {
        let a = ladder(basis, r, LadderKind::Annihilate)?;
        worst = worst.max(linalg::max_abs(&a.mul_dense(rho)));
    }
    Ok(worst)
}

/// Unfed state `ρ⁰`: the bath state, which must have no support on states
/// occupying a channel mode.
pub fn make_unfed_state(basis: &FockBasis, modes: &[usize], bath_state: &DensityOperator) -> Result<DensityOperator> {
    basis.check_modes(modes)?;
    if bath_state.dim() != basis.dim() {
        return Err(Error::invalid("bath state dimension differs from the basis"));
    }
    let leak = support_on(basis, bath_state.matrix(), modes);
    if leak > ALGEBRAIC_TOLERANCE {
        return Err(Error::PreconditionViolation(format!(
            "bath state has weight {leak:e} on channel-occupied states"
        )));
    }
    let rho0 = bath_state.clone();
    let defect = kernel_defect(basis, rho0.matrix(), modes)?;
    debug_assert!(defect < ALGEBRAIC_TOLERANCE);
    Ok(rho0)
}

/// Lift a state on a bath-only basis (over `complement` modes, in that
/// order) into `basis`, with every other mode empty.
pub fn embed_bath(
    basis: &FockBasis,
    complement: &[usize],
    bath_basis: &FockBasis,
    bath_state: &DensityOperator,
) -> Result<DensityOperator> {
    basis.check_modes(complement)?;
    if bath_basis.n_modes() != complement.len() || bath_state.dim() != bath_basis.dim() {
        return Err(Error::invalid("bath basis does not match the complement modes"));
    }
    let mut map = Vec::with_capacity(bath_basis.dim());
    for occ in bath_basis.states() {
        let mut full = vec![0u8; basis.n_modes()];
        for (k, &s) in complement.iter().enumerate() {
            full[s] = occ[k];
        }
        let idx = basis
            .index_of(&full)
            .ok_or_else(|| Error::invalid(format!("bath configuration {occ:?} does not fit the truncated basis")))?;
        map.push(idx);
    }
    let src = bath_state.matrix();
    let mut m = CMatrix::zeros(basis.dim(), basis.dim());
    for (a, &i) in map.iter().enumerate() {
        for (b, &j) in map.iter().enumerate() {
            m[(i, j)] = src[(a, b)];
        }
    }
    DensityOperator::new(m)
}

/// Fed state `ρ⁽¹⁾ = Σ_{rr'} w_{rr'} a†_r ρ⁰ a_{r'}`.
pub fn make_fed_state(basis: &FockBasis, rho0: &DensityOperator, spec: &ChannelSpec) -> Result<DensityOperator> {
    basis.check_modes(spec.modes())?;
    let dim = basis.dim();
    let created: Vec<CMatrix> = spec
        .modes()
        .iter()
        .map(|&r| ladder(basis, r, LadderKind::Create).map(|c| c.mul_dense(rho0.matrix())))
        .collect::<Result<_>>()?;
    let annihilators: Vec<Operator> = spec
        .modes()
        .iter()
        .map(|&r| ladder(basis, r, LadderKind::Annihilate))
        .collect::<Result<_>>()?;
    let w = spec.matrix();
    let mut rho1 = CMatrix::zeros(dim, dim);
    for (i, x) in created.iter().enumerate() {
        for (j, a) in annihilators.iter().enumerate() {
            if w[(i, j)] != ZERO {
                rho1 += a.left_mul_dense(x) * w[(i, j)];
            }
        }
    }
    let trace = linalg::trace(&rho1).re;
    if (trace - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::NormalizationFailure {
            defect: (trace - 1.0).abs(),
        });
    }
    rho1.unscale_mut(trace);
    // remove rounding-level anti-Hermitian noise
    let rho1 = (&rho1 + rho1.adjoint()).scale(0.5);
    DensityOperator::new(rho1)
}

/// `(1−λ) ρ⁰ + λ ρ⁽¹⁾`.
pub fn mix_channel(rho0: &DensityOperator, rho1: &DensityOperator, lambda: f64) -> Result<DensityOperator> {
    check_lambda(lambda)?;
    if rho0.dim() != rho1.dim() {
        return Err(Error::invalid("states have different dimensions"));
    }
    DensityOperator::new(rho0.matrix().scale(1.0 - lambda) + rho1.matrix().scale(lambda))
}

/// `A⁽¹⁾_{r'r} = Tr(a_{r'} Â a†_r ρ⁰)`, indexed by position in `modes`.
pub fn reduce_observable(basis: &FockBasis, observable: &Operator, rho0: &DensityOperator, modes: &[usize]) -> Result<CMatrix> {
    basis.check_modes(modes)?;
    if observable.dim() != basis.dim() {
        return Err(Error::invalid("observable dimension differs from the basis"));
    }
    let k = modes.len();
    let mut out = CMatrix::zeros(k, k);
    let annihilators: Vec<Operator> = modes
        .iter()
        .map(|&r| ladder(basis, r, LadderKind::Annihilate))
        .collect::<Result<_>>()?;
    for (col, &r) in modes.iter().enumerate() {
        let created = ladder(basis, r, LadderKind::Create)?.mul_dense(rho0.matrix());
        let z = observable.mul_dense(&created);
        for (row, a) in annihilators.iter().enumerate() {
            out[(row, col)] = a.expectation(&z);
        }
    }
    Ok(out)
}

/// Projection-valued measure given by its cells.
#[derive(Debug, Clone)]
pub struct Pvm {
    cells: Vec<Operator>,
}

impl Pvm {
    /// Check that the cells are orthogonal projections summing to identity.
    pub fn from_projectors(cells: Vec<Operator>) -> Result<Self> {
        let Some(first) = cells.first() else {
            return Err(Error::invalid("a measure needs at least one cell"));
        };
        let dim = first.dim();
        let mut sum = Operator::zero(dim);
        for (i, p) in cells.iter().enumerate() {
            if p.dim() != dim {
                return Err(Error::invalid("measure cells have different dimensions"));
            }
            let idempotence = p.matmul(p).sub(p).max_abs();
            let hermiticity = p.hermiticity_defect();
            if idempotence > 1e-10 || hermiticity > 1e-10 {
                return Err(Error::invalid(format!("cell {i} is not an orthogonal projection")));
            }
            sum = sum.add(p);
        }
        let completeness = sum.sub(&Operator::identity(dim)).max_abs();
        if completeness > 1e-10 {
            return Err(Error::invalid(format!(
                "cells do not resolve the identity (defect {completeness:e})"
            )));
        }
        Ok(Self { cells })
    }

    /// Eigenprojections of a Hermitian operator; eigenvalues closer than
    /// `tolerance` share a cell.
    pub fn from_hermitian(op: &Operator, tolerance: f64) -> Result<Self> {
        if op.hermiticity_defect() > 1e-10 {
            return Err(Error::invalid("spectral measure needs a Hermitian operator"));
        }
        let eig = HermitianEigen::new(&op.to_dense());
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, &v) in eig.values.iter().enumerate() {
            match groups.last_mut() {
                Some(g) if v - eig.values[*g.last().unwrap()] <= tolerance => g.push(i),
                _ => groups.push(vec![i]),
            }
        }
        let cells = groups
            .into_iter()
            .map(|g| {
                let cols = eig.vectors.select_columns(&g);
                Operator::from_dense(&cols * cols.adjoint())
            })
            .collect();
        Self::from_projectors(cells)
    }

    /// Merge eigen-cells into `n` coarser cells by cyclic assignment.
    pub fn coarsen(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.cells.len() {
            return Err(Error::invalid(format!("cannot coarsen {} cells into {n}", self.cells.len())));
        }
        let dim = self.cells[0].dim();
        let mut merged = vec![Operator::zero(dim); n];
        for (i, p) in self.cells.iter().enumerate() {
            merged[i % n] = merged[i % n].add(p);
        }
        Self::from_projectors(merged)
    }

    pub fn cells(&self) -> &[Operator] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// One reduced effect `F⁽¹⁾(S_i)` per cell.
#[derive(Debug, Clone)]
pub struct EffectMatrix {
    pub cells: Vec<CMatrix>,
}

impl EffectMatrix {
    /// `‖Σ_i F(S_i) − 1‖_max`
    pub fn completeness_defect(&self) -> f64 {
        let k = self.cells[0].nrows();
        let sum = self.cells.iter().fold(CMatrix::zeros(k, k), |acc, f| acc + f);
        linalg::max_abs(&(sum - linalg::identity(k)))
    }

    /// Smallest and largest eigenvalue over every cell.
    pub fn spectrum_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for f in &self.cells {
            let v = HermitianEigen::new(f).values;
            lo = lo.min(v[0]);
            hi = hi.max(*v.last().unwrap());
        }
        (lo, hi)
    }
}

/// `F⁽¹⁾(S_i)_{r'r} = Tr(a_{r'} Ê(S_i) a†_r ρ⁰)` for every cell.
pub fn reduce_effect(basis: &FockBasis, pvm: &Pvm, rho0: &DensityOperator, modes: &[usize]) -> Result<EffectMatrix> {
    let cells = pvm
        .cells()
        .iter()
        .map(|e| reduce_observable(basis, e, rho0, modes))
        .collect::<Result<Vec<_>>>()?;
    Ok(EffectMatrix { cells })
}

/// How far one reduced cell is from a projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellDefect {
    /// `‖F² − F‖_max`
    pub projection: f64,
    /// `‖[Ê(S), N̂_M]‖_max`
    pub commutator: f64,
    /// `‖F² − G‖_max` with `G_{r₁r₂} = Tr(a_{r₁} Ê N̂_M Ê a†_{r₂} ρ⁰)`, the
    /// factorized chain that turns `F` into a projection when `Ê`
    /// commutes with `N̂_M`.
    pub factorization_gap: f64,
}

pub fn projection_defect(
    basis: &FockBasis,
    effect: &EffectMatrix,
    pvm: &Pvm,
    rho0: &DensityOperator,
    modes: &[usize],
) -> Result<Vec<CellDefect>> {
    if effect.cells.len() != pvm.len() {
        return Err(Error::invalid("effect and measure have different cell counts"));
    }
    let n_m = number_operator(basis, modes)?;
    effect
        .cells
        .iter()
        .zip(pvm.cells())
        .map(|(f, e)| {
            let f2 = f * f;
            let chain = reduce_observable(basis, &e.matmul(&n_m).matmul(e), rho0, modes)?;
            Ok(CellDefect {
                projection: linalg::max_abs(&(&f2 - f)),
                commutator: e.commutator(&n_m).max_abs(),
                factorization_gap: linalg::max_abs(&(&f2 - chain)),
            })
        })
        .collect()
}

/// `|Tr(Â ρ_t) − (1−λ) Tr(Â ρ⁰) − λ Tr(W⁽¹⁾ A⁽¹⁾)|` with `ρ_t` the mixed
/// channel state.
pub fn expectation_identity_residual(
    basis: &FockBasis,
    observable: &Operator,
    rho0: &DensityOperator,
    spec: &ChannelSpec,
) -> Result<f64> {
    let rho1 = make_fed_state(basis, rho0, spec)?;
    let rho_t = mix_channel(rho0, &rho1, spec.lambda())?;
    let lhs = observable.expectation(rho_t.matrix());
    let reduced = reduce_observable(basis, observable, rho0, spec.modes())?;
    let lambda = spec.lambda();
    let rhs = observable.expectation(rho0.matrix()) * (1.0 - lambda)
        + linalg::trace_of_product(spec.matrix(), &reduced) * lambda;
    Ok((lhs - rhs).norm())
}
