//! Exact Liouville–von Neumann propagation through the eigen-decomposition
//! of the Hamiltonian, extraction of the channel matrix from evolved states
//! and the metrics that measure its departure from the free phase law
//! `w_{rr'}(t) = e^{−i(W_r − W_{r'})(t−t₀)} w_{rr'}(t₀)`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::{ladder, DensityOperator, FockBasis, LadderKind, Operator};
use crate::linalg::{self, CMatrix, HermitianEigen};

/// Largest tolerated `‖U D U† − H‖_max`.
pub const CACHE_RESIDUAL_LIMIT: f64 = 1e-9;
/// Below this fed weight the channel counts as empty.
pub const EMPTY_CHANNEL_WEIGHT: f64 = 1e-12;

/// Uniform samples of `[t₀, t₁]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub t1: f64,
    pub samples: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t1: f64, samples: usize) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return Err(Error::invalid(format!("time grid needs t1 > t0, got [{t0}, {t1}]")));
        }
        if samples < 2 {
            return Err(Error::invalid("time grid needs at least two samples"));
        }
        Ok(Self { t0, t1, samples })
    }

    pub fn times(&self) -> Vec<f64> {
        let dt = (self.t1 - self.t0) / (self.samples - 1) as f64;
        (0..self.samples).map(|k| self.t0 + k as f64 * dt).collect()
    }
}

/// Spectral decomposition of `H`, reused for every propagation.
#[derive(Debug, Clone)]
pub struct PropagatorCache {
    eig: HermitianEigen,
    residual: f64,
}

impl PropagatorCache {
    pub fn new(hamiltonian: &Operator) -> Result<Self> {
        let h = hamiltonian.to_dense();
        let eig = HermitianEigen::new(&h);
        let residual = eig.reconstruction_residual(&h);
        if !(residual < CACHE_RESIDUAL_LIMIT) {
            return Err(Error::numerical("spectral decomposition of H does not reconstruct it", residual));
        }
        Ok(Self { eig, residual })
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn energies(&self) -> &[f64] {
        &self.eig.values
    }

    pub fn dim(&self) -> usize {
        self.eig.values.len()
    }

    /// `V† X V`
    pub fn to_eigenbasis(&self, x: &CMatrix) -> CMatrix {
        self.eig.vectors.adjoint() * x * &self.eig.vectors
    }

    /// `V X V†`
    pub fn from_eigenbasis(&self, x: &CMatrix) -> CMatrix {
        &self.eig.vectors * x * self.eig.vectors.adjoint()
    }

    /// Conjugation `e^{−iHt} · e^{+iHt}` of a matrix already expressed in the
    /// eigenbasis.
    pub fn evolve_in_eigenbasis(&self, x: &CMatrix, t: f64) -> CMatrix {
        let e = &self.eig.values;
        CMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            x[(i, j)] * Complex64::from_polar(1.0, -(e[i] - e[j]) * t)
        })
    }

    /// `e^{−iHt} X e^{+iHt}`
    pub fn conjugate(&self, x: &CMatrix, t: f64) -> CMatrix {
        self.from_eigenbasis(&self.evolve_in_eigenbasis(&self.to_eigenbasis(x), t))
    }

    /// `e^{−iHt}`
    pub fn unitary(&self, t: f64) -> CMatrix {
        self.eig.apply(|e| Complex64::from_polar(1.0, -e * t))
    }
}

/// `ρ_t = e^{−iHt} ρ e^{+iHt}`, `t` measured from the reference time.
pub fn propagate(rho: &DensityOperator, cache: &PropagatorCache, t: f64) -> Result<DensityOperator> {
    if rho.dim() != cache.dim() {
        return Err(Error::invalid("state and Hamiltonian dimensions differ"));
    }
    if !(cache.residual() < CACHE_RESIDUAL_LIMIT) {
        return Err(Error::numerical("propagator cache residual too large", cache.residual()));
    }
    let evolved = cache.conjugate(rho.matrix(), t);
    DensityOperator::new((&evolved + evolved.adjoint()).scale(0.5))
}

/// Closed-form free channel law on `grid`; `energies` are `W_r` for the
/// channel modes in the order of `w0`.
pub fn free_channel_series(w0: &CMatrix, energies: &[f64], grid: &TimeGrid) -> Result<Vec<CMatrix>> {
    crate::channel::validate_channel_matrix(w0)?;
    if energies.len() != w0.nrows() {
        return Err(Error::invalid("one energy per channel mode is required"));
    }
    Ok(grid
        .times()
        .into_iter()
        .map(|t| {
            let dt = t - grid.t0;
            CMatrix::from_fn(w0.nrows(), w0.ncols(), |r, rp| {
                w0[(r, rp)] * Complex64::from_polar(1.0, -(energies[r] - energies[rp]) * dt)
            })
        })
        .collect())
}

/// `G_{s's} = Tr(a†_s a_{s'} ρ)` over `subset` (row `s'`, column `s`).
pub fn one_body_matrix(rho: &CMatrix, basis: &FockBasis, subset: &[usize]) -> Result<CMatrix> {
    basis.check_modes(subset)?;
    if rho.nrows() != basis.dim() {
        return Err(Error::invalid("state dimension differs from the basis"));
    }
    let k = subset.len();
    // a_{s'} ρ a†_s has trace Tr(a†_s a_{s'} ρ)
    let lowered: Vec<CMatrix> = subset
        .iter()
        .map(|&s| ladder(basis, s, LadderKind::Annihilate).map(|a| a.mul_dense(rho)))
        .collect::<Result<_>>()?;
    let creators: Vec<Operator> = subset
        .iter()
        .map(|&s| ladder(basis, s, LadderKind::Create))
        .collect::<Result<_>>()?;
    let mut g = CMatrix::zeros(k, k);
    for (row, x) in lowered.iter().enumerate() {
        for (col, c) in creators.iter().enumerate() {
            g[(row, col)] = c.expectation(x);
        }
    }
    Ok(g)
}

/// Channel matrix `w̃ = G_M / p_M` and fed weight `p_M = Tr G_M`.
#[derive(Debug, Clone)]
pub enum Extraction {
    Fed { w: CMatrix, weight: f64 },
    Empty { weight: f64 },
}

impl Extraction {
    pub fn weight(&self) -> f64 {
        match self {
            Extraction::Fed { weight, .. } | Extraction::Empty { weight } => *weight,
        }
    }

    pub fn into_fed(self) -> Result<(CMatrix, f64)> {
        match self {
            Extraction::Fed { w, weight } => Ok((w, weight)),
            Extraction::Empty { weight } => Err(Error::EmptyChannel { weight }),
        }
    }
}

pub fn extract_channel_matrix(rho: &CMatrix, modes: &[usize], basis: &FockBasis) -> Result<Extraction> {
    let g = one_body_matrix(rho, basis, modes)?;
    let weight = linalg::trace(&g).re;
    if weight <= EMPTY_CHANNEL_WEIGHT {
        return Ok(Extraction::Empty { weight });
    }
    let w = g.unscale(weight);
    Ok(Extraction::Fed {
        w: (&w + w.adjoint()).scale(0.5),
        weight,
    })
}

#[derive(Debug, Clone)]
pub struct DecoherenceRecord {
    pub t: f64,
    pub purity: f64,
    pub coherence_l1: f64,
    pub trace_distance: f64,
    pub leakage: f64,
    pub w: CMatrix,
}

/// Per-sample metrics of `(w̃, p_M)` against the free series.
pub fn decoherence_metrics(times: &[f64], extracted: &[(CMatrix, f64)], free: &[CMatrix]) -> Result<Vec<DecoherenceRecord>> {
    if times.len() != extracted.len() || times.len() != free.len() || times.is_empty() {
        return Err(Error::invalid(format!(
            "series lengths differ: {} times, {} extracted, {} free",
            times.len(),
            extracted.len(),
            free.len()
        )));
    }
    let p0 = extracted[0].1;
    times
        .iter()
        .zip(extracted)
        .zip(free)
        .map(|((&t, (w, p)), wf)| {
            if w.shape() != wf.shape() {
                return Err(Error::invalid("extracted and free matrices differ in shape"));
            }
            let mut coherence = 0.0;
            for i in 0..w.nrows() {
                for j in 0..w.ncols() {
                    if i != j {
                        coherence += w[(i, j)].norm();
                    }
                }
            }
            Ok(DecoherenceRecord {
                t,
                purity: linalg::purity(w),
                coherence_l1: coherence,
                trace_distance: linalg::trace_distance(w, wf),
                leakage: 1.0 - p / p0,
                w: w.clone(),
            })
        })
        .collect()
}

/// Everything recorded while evolving a channel state over a grid.
#[derive(Debug, Clone)]
pub struct ChannelRun {
    pub times: Vec<f64>,
    pub extracted: Vec<(CMatrix, f64)>,
    pub max_trace_drift: f64,
    pub max_purity_drift: f64,
    pub max_spectrum_drift: f64,
}

/// Propagate `rho` (given at `grid.t0`) and extract the channel matrix at
/// every sample.
pub fn run_channel(
    basis: &FockBasis,
    cache: &PropagatorCache,
    rho: &DensityOperator,
    modes: &[usize],
    grid: &TimeGrid,
) -> Result<ChannelRun> {
    let times = grid.times();
    let rho_eig = cache.to_eigenbasis(rho.matrix());
    let purity0 = rho.purity();
    let spectrum0 = HermitianEigen::new(rho.matrix()).values;
    let mut run = ChannelRun {
        times: times.clone(),
        extracted: Vec::with_capacity(times.len()),
        max_trace_drift: 0.0,
        max_purity_drift: 0.0,
        max_spectrum_drift: 0.0,
    };
    for &t in &times {
        let evolved = cache.from_eigenbasis(&cache.evolve_in_eigenbasis(&rho_eig, t - grid.t0));
        let trace = linalg::trace(&evolved).re;
        run.max_trace_drift = run.max_trace_drift.max((trace - rho.trace()).abs());
        run.max_purity_drift = run.max_purity_drift.max((linalg::purity(&evolved) - purity0).abs());
        let spectrum = HermitianEigen::new(&evolved).values;
        let drift = spectrum.iter().zip(&spectrum0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        run.max_spectrum_drift = run.max_spectrum_drift.max(drift);
        run.extracted.push(extract_channel_matrix(&evolved, modes, basis)?.into_fed()?);
    }
    Ok(run)
}

/// `D_r(t) = e^{−iHt} a†_r e^{+iHt}` and `δ_r(t) = ‖D_r(t) − e^{−iW_r t} a†_r‖_max`.
pub fn dressed_creation(
    cache: &PropagatorCache,
    basis: &FockBasis,
    energies: &[f64],
    r: usize,
    t: f64,
) -> Result<(Operator, f64)> {
    basis.check_modes(&[r])?;
    let w_r = *energies
        .get(r)
        .ok_or_else(|| Error::invalid(format!("no energy for mode {r}")))?;
    let create = ladder(basis, r, LadderKind::Create)?.to_dense();
    let dressed = cache.conjugate(&create, t);
    let free = create * Complex64::from_polar(1.0, -w_r * t);
    let deviation = linalg::max_abs(&(&dressed - free));
    Ok((Operator::from_dense(dressed), deviation))
}
