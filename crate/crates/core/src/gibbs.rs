//! Generalized Gibbs states, their fitting to prescribed expectations,
//! Kubo correlations, the first-order evolution rates with a memory term,
//! and the feeding matrix built from bath source operators.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{kernel_defect, validate_channel_matrix, ALGEBRAIC_TOLERANCE};
use crate::error::{Error, Result};
use crate::evolver::PropagatorCache;
use crate::fock::{ladder, DensityOperator, FockBasis, LadderKind, Operator};
use crate::linalg::{self, CMatrix, HermitianEigen, I};

pub const DEFAULT_FIT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITERATIONS: usize = 100;
pub const MAX_HALVINGS: usize = 30;
/// Smallest `λ_min/λ_max` of the Kubo covariance accepted by the Newton solve.
pub const DEPENDENCE_THRESHOLD: f64 = 1e-12;
pub const EMPTY_FEED_TRACE: f64 = 1e-14;

/// Eigenvalues `p_i` and eigenvectors of a state.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub probabilities: Vec<f64>,
    pub vectors: CMatrix,
}

impl Spectrum {
    /// Eigenvalues at the roundoff floor `d·ε` count as exact zeros.
    pub fn of(rho: &DensityOperator) -> Self {
        let eig = HermitianEigen::new(rho.matrix());
        let floor = rho.dim() as f64 * f64::EPSILON;
        Self {
            probabilities: eig.values.iter().map(|&p| if p > floor { p } else { 0.0 }).collect(),
            vectors: eig.vectors,
        }
    }

    pub fn matrix(&self) -> CMatrix {
        let d = CMatrix::from_diagonal(&DVector::from_iterator(
            self.probabilities.len(),
            self.probabilities.iter().map(|&p| Complex64::new(p, 0.0)),
        ));
        &self.vectors * d * self.vectors.adjoint()
    }

    fn expectation(&self, a_eig: &CMatrix) -> Complex64 {
        self.probabilities.iter().enumerate().map(|(i, &p)| a_eig[(i, i)] * p).sum()
    }

    fn rotate(&self, a: &CMatrix) -> CMatrix {
        self.vectors.adjoint() * a * &self.vectors
    }
}

/// `∫₀¹ p^λ q^{1−λ} dλ`, zero when either weight vanishes.
pub fn log_mean(p: f64, q: f64) -> f64 {
    if p <= 0.0 || q <= 0.0 {
        return 0.0;
    }
    let d = p.ln() - q.ln();
    if d == 0.0 {
        q
    } else {
        q * d.exp_m1() / d
    }
}

fn kubo_in_spectrum(s: &Spectrum, a: &CMatrix, b: &CMatrix) -> Complex64 {
    let a = s.rotate(a);
    let b = s.rotate(b);
    let p = &s.probabilities;
    let mut sum = Complex64::new(0.0, 0.0);
    for i in 0..p.len() {
        for j in 0..p.len() {
            let k = log_mean(p[i], p[j]);
            if k != 0.0 {
                sum += a[(i, j)] * b[(j, i)] * k;
            }
        }
    }
    sum - s.expectation(&a) * s.expectation(&b)
}

/// `⟨A,B⟩_w = ∫₀¹ Tr(w^λ A w^{1−λ} B) dλ − Tr(wA) Tr(wB)`.
pub fn kubo_correlation(w: &DensityOperator, a: &Operator, b: &Operator) -> Result<Complex64> {
    if a.dim() != w.dim() || b.dim() != w.dim() {
        return Err(Error::invalid("Kubo correlation operands differ in dimension from the state"));
    }
    Ok(kubo_in_spectrum(&Spectrum::of(w), &a.to_dense(), &b.to_dense()))
}

pub fn von_neumann_entropy(rho: &DensityOperator) -> f64 {
    entropy_of(&Spectrum::of(rho).probabilities)
}

fn entropy_of(p: &[f64]) -> f64 {
    -p.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// `w = exp(−ζ₀ − Σ_j ζ_j A_j)` with `ζ₀ = ln Z`.
#[derive(Debug, Clone)]
pub struct GibbsModel {
    pub names: Vec<String>,
    pub observables: Vec<Operator>,
    pub zeta: Vec<f64>,
    pub zeta0: f64,
}

/// A Gibbs state with the spectrum it was built from.
#[derive(Debug, Clone)]
pub struct GibbsState {
    pub state: DensityOperator,
    pub spectrum: Spectrum,
    pub zeta0: f64,
}

impl GibbsState {
    pub fn entropy(&self) -> f64 {
        entropy_of(&self.spectrum.probabilities)
    }

    pub fn kubo(&self, a: &CMatrix, b: &CMatrix) -> Complex64 {
        kubo_in_spectrum(&self.spectrum, a, b)
    }

    pub fn expectation(&self, a: &CMatrix) -> f64 {
        self.spectrum.expectation(&self.spectrum.rotate(a)).re
    }
}

impl GibbsModel {
    pub fn new(names: Vec<String>, observables: Vec<Operator>, zeta: Vec<f64>) -> Result<Self> {
        if observables.is_empty() {
            return Err(Error::invalid("a Gibbs model needs at least one observable"));
        }
        if names.len() != observables.len() || zeta.len() != observables.len() {
            return Err(Error::invalid("one name and one multiplier per observable are required"));
        }
        let dim = observables[0].dim();
        for (name, a) in names.iter().zip(&observables) {
            if a.dim() != dim {
                return Err(Error::invalid(format!("observable {name} differs in dimension")));
            }
            if a.hermiticity_defect() > crate::fock::HERMITIAN_TOLERANCE {
                return Err(Error::PreconditionViolation(format!("observable {name} is not Hermitian")));
            }
        }
        if zeta.iter().any(|z| !z.is_finite()) {
            return Err(Error::invalid("multipliers must be finite"));
        }
        Ok(Self {
            names,
            observables,
            zeta,
            zeta0: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.observables[0].dim()
    }

    fn dense_observables(&self) -> Vec<CMatrix> {
        self.observables.iter().map(Operator::to_dense).collect()
    }

    /// Builds the state and stores `ζ₀ = ln Z` in the model.
    pub fn state(&mut self) -> Result<GibbsState> {
        let dense = self.dense_observables();
        let s = gibbs_from_dense(&dense, &self.zeta)?;
        self.zeta0 = s.zeta0;
        Ok(s)
    }

    pub fn to_json(&self, residuals: &[f64]) -> GibbsModelJson {
        GibbsModelJson {
            names: self.names.clone(),
            zeta: self.zeta.clone(),
            zeta0: self.zeta0,
            residuals: residuals.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsModelJson {
    pub names: Vec<String>,
    pub zeta: Vec<f64>,
    pub zeta0: f64,
    pub residuals: Vec<f64>,
}

fn gibbs_from_dense(observables: &[CMatrix], zeta: &[f64]) -> Result<GibbsState> {
    let dim = observables[0].nrows();
    let mut exponent = CMatrix::zeros(dim, dim);
    for (a, &z) in observables.iter().zip(zeta) {
        exponent += a.scale(z);
    }
    let eig = HermitianEigen::new(&exponent);
    let x = &eig.values;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "Gibbs exponent has non-finite eigenvalues; rescale the observables or multipliers",
            f64::INFINITY,
        ));
    }
    // eigenvalues ascending, so x[0] is the largest weight
    let shifted: Vec<f64> = x.iter().map(|&v| (-(v - x[0])).exp()).collect();
    let z: f64 = shifted.iter().sum();
    let zeta0 = z.ln() - x[0];
    if !zeta0.is_finite() {
        return Err(Error::numerical("Gibbs partition function overflows; rescale the multipliers", zeta0));
    }
    let spectrum = Spectrum {
        probabilities: shifted.iter().map(|&w| w / z).collect(),
        vectors: eig.vectors,
    };
    let state = DensityOperator::new(spectrum.matrix())?;
    Ok(GibbsState { state, spectrum, zeta0 })
}

/// `exp(−Σ ζ_j A_j)/Z`; the returned model carries `ζ₀`.
pub fn gibbs_state(model: &GibbsModel) -> Result<(DensityOperator, f64)> {
    let s = gibbs_from_dense(&model.dense_observables(), &model.zeta)?;
    Ok((s.state, s.zeta0))
}

#[derive(Debug, Clone)]
pub struct GibbsFit {
    pub model: GibbsModel,
    pub state: GibbsState,
    /// `Tr(A_j w) − target_j`
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_FIT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

fn residuals(state: &GibbsState, observables: &[CMatrix], targets: &[f64]) -> Vec<f64> {
    observables.iter().zip(targets).map(|(a, t)| state.expectation(a) - t).collect()
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Kubo covariance `C_{jk} = ⟨A_j, A_k⟩_w`; `∂⟨A_j⟩/∂ζ_k = −C_{jk}`.
pub fn kubo_covariance(state: &GibbsState, observables: &[CMatrix]) -> DMatrix<f64> {
    let n = observables.len();
    let mut c = DMatrix::zeros(n, n);
    for j in 0..n {
        for k in j..n {
            let v = state.kubo(&observables[j], &observables[k]).re;
            c[(j, k)] = v;
            c[(k, j)] = v;
        }
    }
    c
}

/// Newton iteration for `Tr(A_j w[ζ]) = target_j` from `model.zeta`.
pub fn fit_gibbs(mut model: GibbsModel, targets: &[f64], options: FitOptions) -> Result<GibbsFit> {
    if targets.len() != model.observables.len() {
        return Err(Error::invalid("one target per observable is required"));
    }
    let dense = model.dense_observables();
    let mut state = gibbs_from_dense(&dense, &model.zeta)?;
    let mut r = residuals(&state, &dense, targets);
    let mut norm = max_norm(&r);
    let mut iterations = 0;
    while norm > options.tolerance {
        if iterations == options.max_iterations {
            return Err(Error::NonConvergence {
                iterations,
                residual: norm,
            });
        }
        iterations += 1;
        let c = kubo_covariance(&state, &dense);
        let eig = c.clone().symmetric_eigen();
        let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
        if !(lo > DEPENDENCE_THRESHOLD * hi) {
            return Err(Error::DependentObservables { min_eigenvalue: lo });
        }
        let step = eig.eigenvectors.transpose() * DVector::from_column_slice(&r);
        let step = &eig.eigenvectors * step.component_div(&eig.eigenvalues);

        let mut scale = 1.0;
        let mut halvings = 0;
        loop {
            let trial: Vec<f64> = model.zeta.iter().zip(step.iter()).map(|(z, d)| z + scale * d).collect();
            let candidate = gibbs_from_dense(&dense, &trial);
            if let Ok(s) = candidate {
                let rt = residuals(&s, &dense, targets);
                let nt = max_norm(&rt);
                if nt < norm || halvings == MAX_HALVINGS {
                    model.zeta = trial;
                    state = s;
                    r = rt;
                    norm = nt;
                    break;
                }
            } else if halvings == MAX_HALVINGS {
                return Err(Error::NonConvergence {
                    iterations,
                    residual: norm,
                });
            }
            scale *= 0.5;
            halvings += 1;
        }
    }
    model.zeta0 = state.zeta0;
    Ok(GibbsFit {
        model,
        state,
        residuals: r,
        iterations,
    })
}

/// Discretized history `Σ_k c_k S_k`.
#[derive(Debug, Clone, Default)]
pub struct HistoryTerm {
    pub terms: Vec<(f64, Operator)>,
}

/// `rate_j = Tr(Ȧ_j w) + Σ_k c_k ⟨Ȧ_j, S_k⟩_w` with `Ȧ_j = i[H, A_j]`.
pub fn evolution_rhs(state: &GibbsState, hamiltonian: &Operator, observables: &[Operator], history: &HistoryTerm) -> Result<Vec<f64>> {
    let dim = state.state.dim();
    if hamiltonian.dim() != dim
        || observables.iter().any(|a| a.dim() != dim)
        || history.terms.iter().any(|(_, s)| s.dim() != dim)
    {
        return Err(Error::invalid("evolution operands differ in dimension from the state"));
    }
    if history.terms.iter().any(|(c, _)| !c.is_finite()) {
        return Err(Error::invalid("history weights must be finite"));
    }
    let h = hamiltonian.to_dense();
    let memory: Vec<(f64, CMatrix)> = history.terms.iter().map(|(c, s)| (*c, s.to_dense())).collect();
    Ok(observables
        .iter()
        .map(|a| {
            let rate = linalg::commutator(&h, &a.to_dense()) * I;
            let mut value = state.expectation(&rate);
            for (c, s) in &memory {
                value += c * state.kubo(&rate, s).re;
            }
            value
        })
        .collect())
}

/// Source kernel `K_{rs}(t'_k)`: one `|M| × |bath|` matrix per sample.
#[derive(Debug, Clone)]
pub struct SourceKernel {
    pub bath_modes: Vec<usize>,
    pub samples: Vec<CMatrix>,
}

impl SourceKernel {
    /// Time-independent kernel repeated over `n_s` samples.
    pub fn constant(bath_modes: Vec<usize>, k: CMatrix, n_s: usize) -> Self {
        Self {
            bath_modes,
            samples: vec![k; n_s],
        }
    }
}

/// Source operators `B_r` for each channel mode.
#[derive(Debug, Clone)]
pub struct SourceSpec {
    pub channel_modes: Vec<usize>,
    pub bath_modes: Vec<usize>,
    pub window: f64,
    pub operators: Vec<Operator>,
}

/// Lags `u_k = t₁ − t'_k` and quadrature weights over the window `τ`.
/// A single sample sits at `u = 0` with unit weight.
pub fn source_quadrature(window: f64, n_s: usize) -> Vec<(f64, f64)> {
    if n_s == 1 {
        return vec![(0.0, 1.0)];
    }
    let dt = window / (n_s - 1) as f64;
    (0..n_s)
        .map(|k| {
            let weight = if k == 0 || k == n_s - 1 { 0.5 * dt } else { dt };
            (window - k as f64 * dt, weight)
        })
        .collect()
}

/// `B_r = Σ_k Δt_k Σ_s K_{rs}(t'_k) e^{−iHu_k} a_s e^{+iHu_k}`.
pub fn build_source_ops(
    cache: &PropagatorCache,
    basis: &FockBasis,
    channel_modes: &[usize],
    kernel: &SourceKernel,
    window: f64,
) -> Result<SourceSpec> {
    basis.check_modes(channel_modes)?;
    basis.check_modes(&kernel.bath_modes)?;
    if let Some(s) = kernel.bath_modes.iter().find(|s| channel_modes.contains(s)) {
        return Err(Error::invalid(format!("source kernel touches channel mode {s}")));
    }
    if kernel.samples.is_empty() {
        return Err(Error::invalid("source kernel needs at least one sample"));
    }
    if !(window.is_finite() && window >= 0.0) || (kernel.samples.len() > 1 && window == 0.0) {
        return Err(Error::invalid("source window must be finite and positive"));
    }
    if cache.dim() != basis.dim() {
        return Err(Error::invalid("propagator and basis dimensions differ"));
    }
    let shape = (channel_modes.len(), kernel.bath_modes.len());
    if kernel.samples.iter().any(|k| k.shape() != shape) {
        return Err(Error::invalid(format!("each kernel sample must be {}×{}", shape.0, shape.1)));
    }
    let annihilators: Vec<CMatrix> = kernel
        .bath_modes
        .iter()
        .map(|&s| ladder(basis, s, LadderKind::Annihilate).map(|a| a.to_dense()))
        .collect::<Result<_>>()?;
    let dim = basis.dim();
    let mut b = vec![CMatrix::zeros(dim, dim); channel_modes.len()];
    for ((u, weight), k) in source_quadrature(window, kernel.samples.len()).into_iter().zip(&kernel.samples) {
        // a_s(−u) = e^{−iHu} a_s e^{+iHu}
        let evolved: Vec<CMatrix> = annihilators.iter().map(|a| cache.conjugate(a, u)).collect();
        for (r, br) in b.iter_mut().enumerate() {
            for (s, a) in evolved.iter().enumerate() {
                let c = k[(r, s)] * weight;
                if c != Complex64::new(0.0, 0.0) {
                    *br += a * c;
                }
            }
        }
    }
    Ok(SourceSpec {
        channel_modes: channel_modes.to_vec(),
        bath_modes: kernel.bath_modes.clone(),
        window,
        operators: b.into_iter().map(Operator::from_dense).collect(),
    })
}

#[derive(Debug, Clone)]
pub struct Feeding {
    pub sigma: CMatrix,
    pub w0: CMatrix,
}

/// `σ_{r'r} = Tr(B_r ρ B_{r'}†)` and `w(t₀) = σ / Tr σ`.
pub fn feeding_matrix(spec: &SourceSpec, basis: &FockBasis, rho: &DensityOperator) -> Result<Feeding> {
    if rho.dim() != basis.dim() {
        return Err(Error::invalid("source state and basis dimensions differ"));
    }
    let defect = kernel_defect(basis, rho.matrix(), &spec.channel_modes)?;
    if defect > ALGEBRAIC_TOLERANCE {
        return Err(Error::PreconditionViolation(format!(
            "source state carries channel excitations (‖a_r ρ‖ = {defect:e})"
        )));
    }
    let fed: Vec<CMatrix> = spec.operators.iter().map(|b| b.mul_dense(rho.matrix())).collect();
    let n = spec.operators.len();
    let mut sigma = CMatrix::zeros(n, n);
    for rp in 0..n {
        let b_dag = spec.operators[rp].adjoint();
        for r in 0..n {
            sigma[(rp, r)] = b_dag.expectation(&fed[r]);
        }
    }
    let sigma = (&sigma + sigma.adjoint()).scale(0.5);
    let trace = linalg::trace(&sigma).re;
    if trace <= EMPTY_FEED_TRACE {
        return Err(Error::EmptyFeed { trace });
    }
    let w0 = sigma.unscale(trace);
    validate_channel_matrix(&w0)?;
    Ok(Feeding { sigma, w0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::embed_bath;
    use crate::fock::{assemble_hamiltonian, number_operator, Statistics, Truncation};
    use crate::lattice::TwoBodyTensor;
    use crate::linalg::{random_density, random_hermitian, random_vector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    fn single(stat: Statistics, cap: u8) -> FockBasis {
        FockBasis::enumerate(1, stat, Truncation::new(cap, cap as usize)).unwrap()
    }

    fn model(ops: Vec<Operator>, zeta: Vec<f64>) -> GibbsModel {
        let names = (0..ops.len()).map(|j| format!("A{j}")).collect();
        GibbsModel::new(names, ops, zeta).unwrap()
    }

    #[test]
    fn zero_multipliers_give_maximally_mixed() {
        let b = single(Statistics::Fermi, 1);
        let (w, z0) = gibbs_state(&model(vec![number_operator(&b, &[0]).unwrap()], vec![0.0])).unwrap();
        assert!(linalg::max_abs(&(w.matrix() - linalg::identity(2).scale(0.5))) < 1e-15);
        assert!((z0 - LN_2).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Operator::hermitian(random_hermitian(&mut rng, 5)).unwrap();
        let (w, _) = gibbs_state(&model(vec![a], vec![0.0])).unwrap();
        assert!((von_neumann_entropy(&w) - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn commuting_observables_factorize() {
        let b = FockBasis::enumerate(2, Statistics::Fermi, Truncation::new(1, 2)).unwrap();
        let (z1, z2) = (0.7, -1.3);
        let m = model(vec![number_operator(&b, &[0]).unwrap(), number_operator(&b, &[1]).unwrap()], vec![z1, z2]);
        let (w, z0) = gibbs_state(&m).unwrap();
        let f = |z: f64| [1.0 / (1.0 + (-z).exp()), (-z).exp() / (1.0 + (-z).exp())];
        let (f1, f2) = (f(z1), f(z2));
        for (i, occ) in b.states().enumerate() {
            let expected = f1[occ[0] as usize] * f2[occ[1] as usize];
            assert!((w.matrix()[(i, i)].re - expected).abs() < 1e-14);
        }
        let z = (1.0 + (-z1).exp()) * (1.0 + (-z2).exp());
        assert!((z0 - z.ln()).abs() < 1e-14);
    }

    #[test]
    fn fermi_and_two_level_fits() {
        for (stat, cap) in [(Statistics::Fermi, 1), (Statistics::Bose, 1)] {
            let b = single(stat, cap);
            let fit = fit_gibbs(model(vec![number_operator(&b, &[0]).unwrap()], vec![2.0]), &[0.5], FitOptions::default()).unwrap();
            assert!(fit.model.zeta[0].abs() < 1e-8);
        }
    }

    /// Bisection on the truncated geometric mean `Σ n e^{−ζn} / Σ e^{−ζn}`.
    fn bisect_truncated_bose(cap: u32, target: f64) -> f64 {
        let mean = |z: f64| {
            let (mut num, mut den) = (0.0, 0.0);
            for n in 0..=cap {
                let w = (-z * n as f64).exp();
                num += n as f64 * w;
                den += w;
            }
            num / den
        };
        let (mut lo, mut hi) = (-20.0, 20.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mean(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn truncated_bose_matches_bisection() {
        let b = single(Statistics::Bose, 10);
        let fit = fit_gibbs(model(vec![number_operator(&b, &[0]).unwrap()], vec![0.0]), &[1.0], FitOptions::default()).unwrap();
        assert!((fit.model.zeta[0] - bisect_truncated_bose(10, 1.0)).abs() < 1e-8);
        assert!(fit.residuals[0].abs() < 1e-8);
    }

    #[test]
    fn dependent_observables_are_diagnosed() {
        let b = single(Statistics::Bose, 3);
        let n = number_operator(&b, &[0]).unwrap();
        let err = fit_gibbs(model(vec![n.clone(), n.scale(2.0.into())], vec![0.0, 0.0]), &[1.0, 2.0], FitOptions::default()).unwrap_err();
        assert!(matches!(err, Error::DependentObservables { .. }));
    }

    #[test]
    fn unreachable_tolerance_reports_non_convergence() {
        let b = single(Statistics::Bose, 10);
        let opts = FitOptions {
            tolerance: 1e-8,
            max_iterations: 1,
        };
        let err = fit_gibbs(model(vec![number_operator(&b, &[0]).unwrap()], vec![0.0]), &[0.01], opts).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { iterations: 1, .. }));
    }

    fn random_observables(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Vec<Operator> {
        (0..n).map(|_| Operator::hermitian(random_hermitian(rng, dim)).unwrap()).collect()
    }

    #[test]
    fn fit_on_two_modes_and_jacobian_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = FockBasis::enumerate(2, Statistics::Bose, Truncation::new(2, 2)).unwrap();
        let ops = random_observables(&mut rng, b.dim(), 3);
        // targets from a reference state keep them attainable
        let truth = model(ops.clone(), vec![0.4, -0.3, 0.2]);
        let (w, _) = gibbs_state(&truth).unwrap();
        let targets: Vec<f64> = ops.iter().map(|a| a.expectation(w.matrix()).re).collect();
        let fit = fit_gibbs(model(ops, vec![0.0; 3]), &targets, FitOptions::default()).unwrap();
        assert!(max_norm(&fit.residuals) < 1e-8);
        let dense = fit.model.dense_observables();
        let c = kubo_covariance(&fit.state, &dense);
        assert!((&c - c.transpose()).amax() < 1e-10);
        assert!(c.symmetric_eigen().eigenvalues.min() > -1e-10);
        assert!((fit.state.zeta0 - fit.model.zeta0).abs() == 0.0);
    }

    #[test]
    fn gibbs_state_has_maximal_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 4;
        let ops = random_observables(&mut rng, dim, 2);
        let targets: Vec<f64> = {
            let (w, _) = gibbs_state(&model(ops.clone(), vec![0.5, -0.2])).unwrap();
            ops.iter().map(|a| a.expectation(w.matrix()).re).collect()
        };
        let fit = fit_gibbs(model(ops.clone(), vec![0.0; 2]), &targets, FitOptions::default()).unwrap();
        let s_max = fit.state.entropy();
        for _ in 0..20 {
            let extra = Operator::hermitian(random_hermitian(&mut rng, dim)).unwrap();
            let shift = rng.random_range(-0.05..0.05);
            let mut enlarged = ops.clone();
            enlarged.push(extra.clone());
            let mut t = targets.clone();
            t.push(extra.expectation(fit.state.state.matrix()).re + shift);
            let other = fit_gibbs(model(enlarged, vec![0.0; 3]), &t, FitOptions::default()).unwrap();
            for (a, target) in ops.iter().zip(&targets) {
                assert!((a.expectation(other.state.state.matrix()).re - target).abs() < 1e-8);
            }
            assert!(other.state.entropy() <= s_max + 1e-12);
        }
    }

    #[test]
    fn kubo_simple_cases() {
        let w = DensityOperator::new(linalg::identity(2).scale(0.5)).unwrap();
        let z = Operator::hermitian(linalg::real_matrix(&[&[1.0, 0.0], &[0.0, -1.0]])).unwrap();
        assert!((kubo_correlation(&w, &z, &z).unwrap() - 1.0).norm() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pure = DensityOperator::pure(&random_vector(&mut rng, 3).normalize()).unwrap();
        let a = Operator::hermitian(random_hermitian(&mut rng, 3)).unwrap();
        assert!(kubo_correlation(&pure, &a, &a).unwrap().norm() < 1e-12);
    }

    #[test]
    fn kubo_matches_lambda_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = DensityOperator::new(random_density(&mut rng, 3)).unwrap();
        let a = random_hermitian(&mut rng, 3);
        let b = random_hermitian(&mut rng, 3);
        let closed = kubo_correlation(&w, &Operator::from_dense(a.clone()), &Operator::from_dense(b.clone())).unwrap();
        let eig = HermitianEigen::new(w.matrix());
        let power = |l: f64| eig.apply(|p| Complex64::new(p.max(0.0).powf(l), 0.0));
        let n = 10_000;
        let mut integral = Complex64::new(0.0, 0.0);
        for k in 0..=n {
            let l = k as f64 / n as f64;
            let f = linalg::trace(&(power(l) * &a * power(1.0 - l) * &b));
            let weight = if k == 0 || k == n { 0.5 } else { 1.0 };
            integral += f * weight / n as f64;
        }
        let oracle = integral - linalg::trace(&(w.matrix() * &a)) * linalg::trace(&(w.matrix() * &b));
        assert!((closed - oracle).norm() < 1e-8, "{closed} vs {oracle}");
        let back = kubo_correlation(&w, &Operator::from_dense(b), &Operator::from_dense(a)).unwrap();
        assert!((closed - back.conj()).norm() < 1e-12);
    }

    #[test]
    fn kubo_is_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = DensityOperator::new(random_density(&mut rng, 4)).unwrap();
        for _ in 0..100 {
            let a = Operator::from_dense(random_hermitian(&mut rng, 4));
            assert!(kubo_correlation(&w, &a, &a).unwrap().re >= -1e-12);
        }
    }

    #[test]
    fn log_mean_limits() {
        assert_eq!(log_mean(0.0, 0.3), 0.0);
        assert_eq!(log_mean(0.25, 0.25), 0.25);
        let (p, q) = (0.3, 0.3 * (1.0 + 1e-12));
        assert!((log_mean(p, q) - 0.5 * (p + q)).abs() < 1e-16);
        assert!((log_mean(0.5, 0.2) - 0.3 / (0.5f64 / 0.2).ln()).abs() < 1e-15);
    }

    #[test]
    fn entropy_of_simple_states() {
        assert_eq!(von_neumann_entropy(&DensityOperator::basis_state(3, 1)), 0.0);
        let mixed = DensityOperator::new(linalg::identity(2).scale(0.5)).unwrap();
        assert!((von_neumann_entropy(&mixed) - LN_2).abs() < 1e-15);
    }

    fn interacting(b: &FockBasis) -> Operator {
        let mut v = TwoBodyTensor::zeros(b.n_modes());
        for (x, y) in [(0, 1), (1, 2), (0, 2)] {
            v.set(x, y, y, x, 0.4);
            v.set(y, x, x, y, 0.4);
            v.set(x, x, y, y, 0.25);
            v.set(y, y, x, x, 0.25);
        }
        assemble_hamiltonian(b, &[1.0, 1.7, 2.9], &v, 1.0).unwrap()
    }

    #[test]
    fn conserved_observables_have_zero_rate() {
        let b = FockBasis::enumerate(3, Statistics::Bose, Truncation::new(2, 2)).unwrap();
        let h = interacting(&b);
        let n = number_operator(&b, &[0, 1, 2]).unwrap();
        let mut m = model(vec![n.clone(), h.clone()], vec![0.3, 0.5]);
        let state = m.state().unwrap();
        let rates = evolution_rhs(&state, &h, &[n, h.clone()], &HistoryTerm::default()).unwrap();
        assert!(rates.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn memory_term_is_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = FockBasis::enumerate(3, Statistics::Bose, Truncation::new(2, 2)).unwrap();
        let h = interacting(&b);
        let a = number_operator(&b, &[0]).unwrap();
        let x = Operator::hermitian(random_hermitian(&mut rng, b.dim())).unwrap();
        let mut m = model(vec![a.clone(), x], vec![0.4, 0.3]);
        let state = m.state().unwrap();
        let adot = Operator::from_dense(linalg::commutator(&h.to_dense(), &a.to_dense()) * I);
        let bare = evolution_rhs(&state, &h, std::slice::from_ref(&a), &HistoryTerm::default()).unwrap()[0];
        let history = HistoryTerm {
            terms: vec![(0.8, adot.scale(2.0.into()))],
        };
        let with = evolution_rhs(&state, &h, &[a], &history).unwrap()[0];
        let expected = 0.8 * 2.0 * state.kubo(&adot.to_dense(), &adot.to_dense()).re;
        assert!(expected > 0.0);
        assert!((with - bare - expected).abs() < 1e-12);
    }

    fn channel_bath_basis() -> FockBasis {
        FockBasis::enumerate(4, Statistics::Bose, Truncation::new(2, 2)).unwrap()
    }

    #[test]
    fn single_sample_source_is_the_annihilator() {
        let b = channel_basis_free();
        let (basis, cache) = (&b.0, &b.1);
        let k = SourceKernel::constant(vec![2], linalg::real_matrix(&[&[1.0]]), 1);
        let spec = build_source_ops(cache, basis, &[0], &k, 0.0).unwrap();
        let a = ladder(basis, 2, LadderKind::Annihilate).unwrap();
        assert!(spec.operators[0].sub(&a).max_abs() < 1e-12);
        let one = DensityOperator::basis_state(basis.dim(), basis.index_of(&[0, 0, 1, 0]).unwrap());
        let f = feeding_matrix(&spec, basis, &one).unwrap();
        assert!((f.sigma[(0, 0)].re - 1.0).abs() < 1e-12);
        let vac = DensityOperator::basis_state(basis.dim(), 0);
        assert!(matches!(feeding_matrix(&spec, basis, &vac), Err(Error::EmptyFeed { .. })));
    }

    fn channel_basis_free() -> (FockBasis, PropagatorCache, Vec<f64>) {
        let b = channel_bath_basis();
        let w = vec![1.0, 1.5, 2.2, 3.1];
        let h = assemble_hamiltonian(&b, &w, &TwoBodyTensor::zeros(4), 0.0).unwrap();
        (b, PropagatorCache::new(&h).unwrap(), w)
    }

    #[test]
    fn free_bath_source_picks_up_phases() {
        let (b, cache, w) = channel_basis_free();
        let tau = 1.3;
        for n_s in [2, 5] {
            let k = SourceKernel::constant(vec![2], linalg::real_matrix(&[&[1.0]]), n_s);
            let spec = build_source_ops(&cache, &b, &[0], &k, tau).unwrap();
            let oracle: Complex64 = source_quadrature(tau, n_s)
                .into_iter()
                .map(|(u, dt)| Complex64::from_polar(dt, w[2] * u))
                .sum();
            let a = ladder(&b, 2, LadderKind::Annihilate).unwrap().to_dense();
            assert!(linalg::max_abs(&(spec.operators[0].to_dense() - a * oracle)) < 1e-12);
        }
        let k = SourceKernel::constant(vec![1], linalg::real_matrix(&[&[1.0]]), 1);
        assert!(build_source_ops(&cache, &b, &[0, 1], &SourceKernel { bath_modes: vec![1], ..k.clone() }, 1.0).is_err());
    }

    #[test]
    fn interacting_source_matches_per_sample_conjugation() {
        let b = FockBasis::enumerate(3, Statistics::Bose, Truncation::new(2, 2)).unwrap();
        let h = interacting(&b);
        let cache = PropagatorCache::new(&h).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let samples: Vec<CMatrix> = (0..4).map(|_| CMatrix::from_fn(1, 2, |_, _| Complex64::new(rng.random(), rng.random()))).collect();
        let k = SourceKernel {
            bath_modes: vec![1, 2],
            samples: samples.clone(),
        };
        let tau = 0.9;
        let spec = build_source_ops(&cache, &b, &[0], &k, tau).unwrap();
        let hd = h.to_dense();
        let mut oracle = CMatrix::zeros(b.dim(), b.dim());
        for ((u, dt), ks) in source_quadrature(tau, 4).into_iter().zip(&samples) {
            let u_minus = HermitianEigen::new(&hd).apply(|e| Complex64::from_polar(1.0, -e * u));
            for (j, &s) in [1usize, 2].iter().enumerate() {
                let a = ladder(&b, s, LadderKind::Annihilate).unwrap().to_dense();
                oracle += (&u_minus * a * u_minus.adjoint()) * (ks[(0, j)] * dt);
            }
        }
        assert!(linalg::max_abs(&(spec.operators[0].to_dense() - oracle)) < 1e-12);
    }

    #[test]
    fn feeding_from_gibbs_bath_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = channel_bath_basis();
        let channel = [0, 1];
        let bath_modes = vec![2, 3];
        let bath = FockBasis::enumerate(2, Statistics::Bose, Truncation::new(2, 1)).unwrap();
        let mut m = model(vec![number_operator(&bath, &[0, 1]).unwrap()], vec![0.5]);
        let bath_state = m.state().unwrap().state;
        let rho = embed_bath(&b, &bath_modes, &bath, &bath_state).unwrap();
        let h = assemble_hamiltonian(&b, &[1.0, 1.5, 2.2, 3.1], &TwoBodyTensor::zeros(4), 0.0).unwrap();
        let cache = PropagatorCache::new(&h).unwrap();
        for _ in 0..20 {
            let samples = (0..3).map(|_| CMatrix::from_fn(2, 2, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))).collect();
            let k = SourceKernel {
                bath_modes: bath_modes.clone(),
                samples,
            };
            let spec = build_source_ops(&cache, &b, &channel, &k, 0.7).unwrap();
            let f = feeding_matrix(&spec, &b, &rho).unwrap();
            assert!(linalg::min_eigenvalue(&f.sigma) >= -1e-12);
            for _ in 0..5 {
                let x = random_vector(&mut rng, 2);
                let mut combo = CMatrix::zeros(b.dim(), b.dim());
                for r in 0..2 {
                    combo += spec.operators[r].to_dense() * x[r];
                }
                let direct = linalg::trace(&(&combo * rho.matrix() * combo.adjoint())).re;
                let quad = (x.adjoint() * &f.sigma * &x)[(0, 0)];
                assert!(direct >= -1e-12);
                assert!((quad.re - direct).abs() < 1e-10);
            }
            validate_channel_matrix(&f.w0).unwrap();
        }
    }

    #[test]
    fn source_preserves_unfed_sector() {
        let (b, cache, _) = channel_basis_free();
        let k = SourceKernel::constant(vec![2, 3], linalg::real_matrix(&[&[0.5, 1.0], &[1.0, -0.3]]), 3);
        let spec = build_source_ops(&cache, &b, &[0, 1], &k, 0.5).unwrap();
        for op in &spec.operators {
            for (i, j, _) in op.triplets().into_iter().filter(|t| t.2.norm() > 1e-14) {
                let (si, sj) = (b.state(i), b.state(j));
                if sj[0] == 0 && sj[1] == 0 {
                    assert_eq!((si[0], si[1]), (0, 0));
                    assert_eq!(b.occupation(i, &[2, 3]) + 1, b.occupation(j, &[2, 3]));
                }
            }
        }
    }
}
