//! Normal modes of the confined one-body problem and the two-body matrix
//! elements that enter the many-body Hamiltonian.
//!
//! The continuum problem `−½ u'' + 𝒱 u = W u` on `[0, L]` with Dirichlet
//! ends is discretized with second-order central differences on `N_g`
//! interior points. Mode vectors are normalized under the quadrature weight
//! `h`, so `h Σ_g u_i(g) u_j(g) = δ_ij`.

use std::path::Path;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cache::{self, PayloadKind};
use crate::error::{Error, Result};

pub const MIN_GRID_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SpatialGrid {
    /// Box length `L`.
    pub length: f64,
    /// Number of interior points `N_g`.
    pub points: usize,
}

impl SpatialGrid {
    pub fn new(length: f64, points: usize) -> Result<Self> {
        let grid = Self { length, points };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(Error::invalid(format!(
                "grid length must be positive, got {}",
                self.length
            )));
        }
        if self.points < MIN_GRID_POINTS {
            return Err(Error::invalid(format!(
                "grid needs at least {MIN_GRID_POINTS} interior points, got {}",
                self.points
            )));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        self.length / (self.points as f64 + 1.0)
    }

    /// Interior node positions `x_g = (g + 1) h`.
    pub fn positions(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.points).map(|g| (g as f64 + 1.0) * h).collect()
    }
}

/// One-body potential `𝒱(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Zero,
    /// `½ k (x − L/2)²`
    Harmonic { k: f64 },
    /// `height` on `[a, b]`, zero elsewhere.
    Barrier { height: f64, a: f64, b: f64 },
    /// One value per interior grid point.
    Tabulated { values: Vec<f64> },
}

impl PotentialSpec {
    pub fn sample(&self, grid: &SpatialGrid) -> Result<Vec<f64>> {
        let xs = grid.positions();
        let values = match self {
            PotentialSpec::Zero => vec![0.0; xs.len()],
            PotentialSpec::Harmonic { k } => {
                let c = 0.5 * grid.length;
                xs.iter().map(|x| 0.5 * k * (x - c) * (x - c)).collect()
            }
            PotentialSpec::Barrier { height, a, b } => {
                if a > b {
                    return Err(Error::invalid(format!("barrier interval [{a}, {b}] is reversed")));
                }
                xs.iter()
                    .map(|x| if (*a..=*b).contains(x) { *height } else { 0.0 })
                    .collect()
            }
            PotentialSpec::Tabulated { values } => {
                if values.len() != grid.points {
                    return Err(Error::invalid(format!(
                        "tabulated potential has {} values for {} grid points",
                        values.len(),
                        grid.points
                    )));
                }
                values.clone()
            }
        };
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("potential is not finite at grid point {bad}")));
        }
        Ok(values)
    }
}

/// Symmetric tridiagonal matrix, diagonal plus one off-diagonal.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Tridiagonal {
    /// `−½ Δ₂ + 𝒱` with Dirichlet ends.
    pub fn schrodinger(grid: &SpatialGrid, potential: &[f64]) -> Self {
        let h2 = grid.spacing().powi(2);
        Self {
            diag: potential.iter().map(|v| 1.0 / h2 + v).collect(),
            off: vec![-0.5 / h2; grid.points - 1],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Infinity norm.
    pub fn norm(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|i| {
                let left = if i > 0 { self.off[i - 1].abs() } else { 0.0 };
                let right = if i + 1 < n { self.off[i].abs() } else { 0.0 };
                self.diag[i].abs() + left + right
            })
            .fold(0.0, f64::max)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut y = self.diag[i] * x[i];
                if i > 0 {
                    y += self.off[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    y += self.off[i] * x[i + 1];
                }
                y
            })
            .collect()
    }

    /// Number of eigenvalues strictly below `x` (Sturm sequence).
    pub fn count_below(&self, x: f64) -> usize {
        let tiny = f64::MIN_POSITIVE.sqrt();
        let mut count = 0;
        let mut q = self.diag[0] - x;
        for i in 0..self.len() {
            if i > 0 {
                q = self.diag[i] - x - self.off[i - 1] * self.off[i - 1] / q;
            }
            if q == 0.0 {
                q = -tiny;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let mut r = 0.0;
            if i > 0 {
                r += self.off[i - 1].abs();
            }
            if i + 1 < n {
                r += self.off[i].abs();
            }
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    /// The `k`-th smallest eigenvalue (0-based) by bisection.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let (mut lo, mut hi) = self.gershgorin();
        let pad = f64::EPSILON * self.norm().max(1.0);
        lo -= pad;
        hi += pad;
        for _ in 0..256 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Solve `(T − shift) y = b` in place, Gaussian elimination with
    /// partial pivoting.
    fn shifted_solve(&self, shift: f64, b: &mut [f64]) {
        let n = self.len();
        let guard = f64::EPSILON * self.norm().max(1.0);
        let mut d: Vec<f64> = self.diag.iter().map(|v| v - shift).collect();
        let mut dl = self.off.clone();
        let mut du = self.off.clone();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n - 1 {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == 0.0 {
                    d[i] = guard;
                }
                let fact = dl[i] / d[i];
                dl[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let tmp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = tmp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] *= -fact;
                }
                swapped[i] = true;
            }
        }
        if d[n - 1] == 0.0 {
            d[n - 1] = guard;
        }
        for i in 0..n - 1 {
            if swapped[i] {
                let tmp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = tmp - dl[i] * b[i];
            } else {
                b[i + 1] -= dl[i] * b[i];
            }
        }
        b[n - 1] /= d[n - 1];
        if n >= 2 {
            b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - du[i] * b[i + 1] - du2[i] * b[i + 2]) / d[i];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn euclid(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Eigenpairs `(W_n, u_n)` of the discretized one-body operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeBasis {
    pub grid: SpatialGrid,
    /// Ascending.
    pub energies: Vec<f64>,
    /// `vectors[n][g] = u_n(x_g)`, quadrature-normalized.
    pub vectors: Vec<Vec<f64>>,
}

impl ModeBasis {
    pub fn n_modes(&self) -> usize {
        self.energies.len()
    }

    /// `max |h Σ u_i u_j − δ_ij|`
    pub fn gram_defect(&self) -> f64 {
        let h = self.grid.spacing();
        let mut worst: f64 = 0.0;
        for i in 0..self.n_modes() {
            for j in 0..self.n_modes() {
                let g = h * dot(&self.vectors[i], &self.vectors[j]);
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    /// Per-mode `‖Hu − Wu‖ / ‖u‖` against the discrete operator.
    pub fn residuals(&self, potential: &PotentialSpec) -> Result<Vec<f64>> {
        let t = Tridiagonal::schrodinger(&self.grid, &potential.sample(&self.grid)?);
        Ok(self
            .energies
            .iter()
            .zip(&self.vectors)
            .map(|(&w, u)| eigen_residual(&t, w, u))
            .collect())
    }
}

fn eigen_residual(t: &Tridiagonal, w: f64, u: &[f64]) -> f64 {
    let hu = t.apply(u);
    let r: Vec<f64> = hu.iter().zip(u).map(|(a, b)| a - w * b).collect();
    euclid(&r) / euclid(u)
}

/// Deterministic start vector for inverse iteration, not orthogonal to any
/// parity class.
fn start_vector(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let x = i as f64;
            1.0 + 0.5 * (0.7 * x + 0.3).sin() + 0.25 * (1.9 * x).cos()
        })
        .collect()
}

const INVERSE_ITERATIONS: usize = 8;

/// Lowest `n_modes` eigenpairs of `−½ Δ₂ + 𝒱` with Dirichlet boundary.
pub fn solve_modes(grid: &SpatialGrid, potential: &PotentialSpec, n_modes: usize) -> Result<ModeBasis> {
    grid.validate()?;
    if n_modes > grid.points {
        return Err(Error::invalid(format!(
            "requested {n_modes} modes from a grid with {} points",
            grid.points
        )));
    }
    let t = Tridiagonal::schrodinger(grid, &potential.sample(grid)?);
    let norm = t.norm();
    let cluster_gap = 1e-3 * norm;
    let accept = 1e3 * f64::EPSILON * norm.max(1.0);
    let h = grid.spacing();

    let mut energies = Vec::with_capacity(n_modes);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(n_modes);
    for k in 0..n_modes {
        let w = t.eigenvalue(k);
        let cluster_start = energies
            .iter()
            .rposition(|&prev: &f64| w - prev > cluster_gap)
            .map_or(0, |i| i + 1);

        let mut y = start_vector(t.len());
        let mut residual = f64::INFINITY;
        for _ in 0..INVERSE_ITERATIONS {
            t.shifted_solve(w, &mut y);
            // keep the vector orthogonal to earlier members of its cluster
            for prev in &vectors[cluster_start..] {
                let c = dot(&y, prev) / dot(prev, prev);
                y.iter_mut().zip(prev).for_each(|(a, b)| *a -= c * b);
            }
            let n = euclid(&y);
            if !(n.is_finite() && n > 0.0) {
                return Err(Error::numerical(format!("inverse iteration collapsed for mode {k}"), residual));
            }
            y.iter_mut().for_each(|v| *v /= n);
            residual = eigen_residual(&t, w, &y);
            if residual <= accept * 1e-3 {
                break;
            }
        }
        if residual > accept {
            return Err(Error::numerical(format!("mode {k} did not converge"), residual));
        }

        let scale = 1.0 / (h * dot(&y, &y)).sqrt();
        let peak = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let first = y.iter().find(|v| v.abs() > 1e-12 * peak).copied().unwrap_or(1.0);
        let sign = if first < 0.0 { -1.0 } else { 1.0 };
        y.iter_mut().for_each(|v| *v *= sign * scale);

        energies.push(w);
        vectors.push(y);
    }
    Ok(ModeBasis {
        grid: *grid,
        energies,
        vectors,
    })
}

/// Closed-form square-well level `n²π²/(2L²)`, `n ≥ 1`.
pub fn square_well_level(length: f64, n: usize) -> f64 {
    let k = n as f64 * std::f64::consts::PI / length;
    0.5 * k * k
}

/// Two-body interaction `V(|x − y|)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TwoBodyKernel {
    /// `g δ(x − y)`
    Contact { g: f64 },
    /// `g exp(−r² / 2σ²)`
    Gaussian { g: f64, range: f64 },
    /// Piecewise-linear `V(r)` through `(r, v)` points, clamped at the ends.
    Tabulated { r: Vec<f64>, v: Vec<f64> },
}

impl TwoBodyKernel {
    pub fn validate(&self) -> Result<()> {
        match self {
            TwoBodyKernel::Contact { g } => finite("contact strength", *g),
            TwoBodyKernel::Gaussian { g, range } => {
                finite("gaussian strength", *g)?;
                if !(range.is_finite() && *range > 0.0) {
                    return Err(Error::invalid(format!("gaussian range must be positive, got {range}")));
                }
                Ok(())
            }
            TwoBodyKernel::Tabulated { r, v } => {
                if r.len() != v.len() || r.len() < 2 {
                    return Err(Error::invalid("tabulated kernel needs matching r/v lists of length >= 2"));
                }
                if r.iter().chain(v).any(|x| !x.is_finite()) {
                    return Err(Error::invalid("tabulated kernel has non-finite entries"));
                }
                if r[0] < 0.0 || r.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::invalid("tabulated kernel r must be non-negative and increasing"));
                }
                Ok(())
            }
        }
    }

    /// `V(r)` for the non-contact kinds; contact has no pointwise value.
    pub fn value(&self, r: f64) -> Option<f64> {
        match self {
            TwoBodyKernel::Contact { .. } => None,
            TwoBodyKernel::Gaussian { g, range } => Some(g * (-r * r / (2.0 * range * range)).exp()),
            TwoBodyKernel::Tabulated { r: rs, v } => {
                if r <= rs[0] {
                    return Some(v[0]);
                }
                let last = rs.len() - 1;
                if r >= rs[last] {
                    return Some(v[last]);
                }
                let i = rs.partition_point(|&x| x <= r) - 1;
                let f = (r - rs[i]) / (rs[i + 1] - rs[i]);
                Some(v[i] + f * (v[i + 1] - v[i]))
            }
        }
    }
}

fn finite(what: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} is not finite")))
    }
}

/// Dense rank-4 tensor `V_{nmkl}` over a mode subset (local indices).
#[derive(Debug, Clone, PartialEq)]
pub struct TwoBodyTensor {
    n: usize,
    data: Vec<f64>,
}

impl TwoBodyTensor {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n.pow(4)],
        }
    }

    pub fn n_modes(&self) -> usize {
        self.n
    }

    #[inline]
    fn offset(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        ((a * self.n + b) * self.n + c) * self.n + d
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.data[self.offset(a, b, c, d)]
    }

    pub fn set(&mut self, a: usize, b: usize, c: usize, d: usize, v: f64) {
        let o = self.offset(a, b, c, d);
        self.data[o] = v;
    }

    /// Multiply every element by `f(n, m, k, l)`.
    pub fn scaled_by(&self, f: impl Fn(usize, usize, usize, usize) -> f64) -> Self {
        let mut out = self.clone();
        let n = self.n;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let o = out.offset(a, b, c, d);
                        out.data[o] *= f(a, b, c, d);
                    }
                }
            }
        }
        out
    }

    /// Largest violation of `V_{nmkl} = V_{mnlk} = V_{lkmn}`.
    pub fn symmetry_residual(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let v = self.get(a, b, c, d);
                        worst = worst.max((v - self.get(b, a, d, c)).abs());
                        worst = worst.max((v - self.get(d, c, b, a)).abs());
                    }
                }
            }
        }
        worst
    }
}

/// `V_{nmkl} = ∬ u_n(x) u_m(y) V(|x−y|) u_k(y) u_l(x) dx dy` over `subset`.
///
/// The integrand only depends on the unordered pairs `{n, l}` (at `x`) and
/// `{m, k}` (at `y`), so each pair-of-pairs is computed once and shared by
/// every index tuple that maps onto it.
pub fn two_body_elements(basis: &ModeBasis, kernel: &TwoBodyKernel, subset: &[usize]) -> Result<TwoBodyTensor> {
    kernel.validate()?;
    if let Some(&bad) = subset.iter().find(|&&i| i >= basis.n_modes()) {
        return Err(Error::invalid(format!(
            "mode {bad} is outside the basis of {} modes",
            basis.n_modes()
        )));
    }
    let n = subset.len();
    let grid = &basis.grid;
    let h = grid.spacing();
    let ng = grid.points;

    let mut pairs = Vec::new();
    let mut pair_index = vec![0usize; n * n];
    for a in 0..n {
        for b in a..n {
            pair_index[a * n + b] = pairs.len();
            pair_index[b * n + a] = pairs.len();
            let (ua, ub) = (&basis.vectors[subset[a]], &basis.vectors[subset[b]]);
            pairs.push(ua.iter().zip(ub).map(|(x, y)| x * y).collect::<Vec<f64>>());
        }
    }

    // convolved[q] = h Σ_y K(|x−y|) P_q(y); for contact this collapses to g P_q(x)
    let convolved: Vec<Vec<f64>> = match kernel {
        TwoBodyKernel::Contact { g } => pairs.iter().map(|p| p.iter().map(|v| g * v).collect()).collect(),
        _ => {
            let toeplitz: Vec<f64> = (0..ng)
                .map(|d| kernel.value(d as f64 * h).expect("pointwise kernel"))
                .collect();
            pairs
                .iter()
                .map(|p| {
                    (0..ng)
                        .map(|x| {
                            let mut acc = 0.0;
                            for (y, py) in p.iter().enumerate() {
                                acc += toeplitz[x.abs_diff(y)] * py;
                            }
                            h * acc
                        })
                        .collect()
                })
                .collect()
        }
    };

    let np = pairs.len();
    let mut pair_values = vec![0.0; np * np];
    for p in 0..np {
        for q in p..np {
            let v = h * dot(&pairs[p], &convolved[q]);
            pair_values[p * np + q] = v;
            pair_values[q * np + p] = v;
        }
    }

    let mut tensor = TwoBodyTensor::zeros(n);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let x_pair = pair_index[a * n + d];
                    let y_pair = pair_index[b * n + c];
                    tensor.set(a, b, c, d, pair_values[x_pair * np + y_pair]);
                }
            }
        }
    }
    Ok(tensor)
}

/// Content hash identifying a `(grid, potential, n_modes)` solve.
pub fn mode_cache_key(grid: &SpatialGrid, potential: &PotentialSpec, n_modes: usize) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(grid.length.to_le_bytes());
    hasher.update((grid.points as u64).to_le_bytes());
    hasher.update((n_modes as u64).to_le_bytes());
    hasher.update(serde_json::to_vec(potential).expect("potential serializes"));
    hasher.finalize().into()
}

pub fn write_mode_cache(path: &Path, key: &[u8; 32], basis: &ModeBasis) -> Result<()> {
    let mut payload = Vec::new();
    payload.extend((basis.grid.points as u64).to_le_bytes());
    payload.extend((basis.n_modes() as u64).to_le_bytes());
    payload.extend(basis.grid.length.to_le_bytes());
    for w in &basis.energies {
        payload.extend(w.to_le_bytes());
    }
    for u in &basis.vectors {
        for v in u {
            payload.extend(v.to_le_bytes());
        }
    }
    cache::write(path, PayloadKind::ModeBasis, key, &payload)
}

/// Returns `None` when the file is absent or was written for another key.
pub fn read_mode_cache(path: &Path, key: &[u8; 32]) -> Result<Option<ModeBasis>> {
    let Some(payload) = cache::read(path, PayloadKind::ModeBasis, key)? else {
        return Ok(None);
    };
    let mut r = cache::Reader::new(&payload);
    let points = r.u64()? as usize;
    let n_modes = r.u64()? as usize;
    let length = r.f64()?;
    let energies = r.f64s(n_modes)?;
    let vectors = (0..n_modes).map(|_| r.f64s(points)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(Some(ModeBasis {
        grid: SpatialGrid { length, points },
        energies,
        vectors,
    }))
}

/// `solve_modes` behind an on-disk cache in `dir`.
pub fn solve_modes_cached(
    dir: &Path,
    grid: &SpatialGrid,
    potential: &PotentialSpec,
    n_modes: usize,
) -> Result<ModeBasis> {
    let key = mode_cache_key(grid, potential, n_modes);
    let path = dir.join(format!("{}.modes", cache::hex(&key)));
    if let Some(basis) = read_mode_cache(&path, &key)? {
        return Ok(basis);
    }
    let basis = solve_modes(grid, potential, n_modes)?;
    std::fs::create_dir_all(dir)?;
    write_mode_cache(&path, &key, &basis)?;
    Ok(basis)
}
