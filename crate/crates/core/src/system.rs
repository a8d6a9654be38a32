//! A confined many-body system split into channel modes `M` and bath modes
//! `M^C`, with block-wise interaction dials.

use std::path::Path;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::channel::embed_bath;
use crate::error::{Error, Result};
use crate::fock::{assemble_hamiltonian, number_operator, one_body_operator, DensityOperator, FockBasis, Operator, Statistics, Truncation};
use crate::gibbs::GibbsModel;
use crate::lattice::{solve_modes, solve_modes_cached, two_body_elements, ModeBasis, PotentialSpec, SpatialGrid, TwoBodyKernel, TwoBodyTensor};
use crate::linalg::CMatrix;

fn one() -> f64 {
    1.0
}

/// Interaction dials. Elements with only bath indices carry `g_int`, mixed
/// channel/bath elements `g_int·g_mb`, all-channel elements `g_int·g_mm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CouplingScales {
    pub g_int: f64,
    #[serde(default = "one")]
    pub g_mb: f64,
    #[serde(default = "one")]
    pub g_mm: f64,
}

impl CouplingScales {
    pub fn new(g_int: f64, g_mb: f64) -> Self {
        Self { g_int, g_mb, g_mm: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.g_int, self.g_mb, self.g_mm].iter().all(|g| g.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("coupling scales must be finite"))
        }
    }

    /// Block factor for an element whose indices hit the channel `hits` times.
    pub fn block_factor(&self, hits: usize) -> f64 {
        match hits {
            0 => 1.0,
            4 => self.g_mm,
            _ => self.g_mb,
        }
    }
}

/// Static description of the system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub grid: SpatialGrid,
    pub potential: PotentialSpec,
    pub kernel: TwoBodyKernel,
    pub n_modes: usize,
    pub statistics: Statistics,
    pub truncation: Truncation,
    pub channel: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct System {
    pub modes: ModeBasis,
    pub tensor: TwoBodyTensor,
    pub basis: FockBasis,
    pub channel: Vec<usize>,
    pub complement: Vec<usize>,
}

impl System {
    pub fn build(spec: &SystemSpec, cache_dir: Option<&Path>) -> Result<Self> {
        spec.grid.validate()?;
        let modes = match cache_dir {
            Some(dir) => solve_modes_cached(dir, &spec.grid, &spec.potential, spec.n_modes)?,
            None => solve_modes(&spec.grid, &spec.potential, spec.n_modes)?,
        };
        let all: Vec<usize> = (0..spec.n_modes).collect();
        let tensor = two_body_elements(&modes, &spec.kernel, &all)?;
        let basis = FockBasis::enumerate(spec.n_modes, spec.statistics, spec.truncation)?;
        basis.check_modes(&spec.channel)?;
        if spec.channel.is_empty() {
            return Err(Error::invalid("the channel needs at least one mode"));
        }
        let complement = all.into_iter().filter(|r| !spec.channel.contains(r)).collect();
        Ok(Self {
            modes,
            tensor,
            basis,
            channel: spec.channel.clone(),
            complement,
        })
    }

    pub fn energies(&self) -> &[f64] {
        &self.modes.energies
    }

    pub fn channel_energies(&self) -> Vec<f64> {
        self.channel.iter().map(|&r| self.modes.energies[r]).collect()
    }

    pub fn scaled_tensor(&self, scales: &CouplingScales) -> TwoBodyTensor {
        let in_channel: Vec<bool> = (0..self.basis.n_modes()).map(|r| self.channel.contains(&r)).collect();
        self.tensor.scaled_by(|a, b, c, d| {
            let hits = [a, b, c, d].iter().filter(|&&i| in_channel[i]).count();
            scales.block_factor(hits)
        })
    }

    pub fn hamiltonian(&self, scales: &CouplingScales) -> Result<Operator> {
        scales.validate()?;
        assemble_hamiltonian(&self.basis, &self.modes.energies, &self.scaled_tensor(scales), scales.g_int)
    }

    /// Interaction part `H − Σ W n`.
    pub fn interaction(&self, scales: &CouplingScales) -> Result<Operator> {
        let zeros = vec![0.0; self.basis.n_modes()];
        assemble_hamiltonian(&self.basis, &zeros, &self.scaled_tensor(scales), scales.g_int)
    }

    /// Bath state embedded with every channel mode empty.
    pub fn bath_state(&self, bath: &BathSpec) -> Result<DensityOperator> {
        match bath {
            BathSpec::Vacuum => Ok(DensityOperator::basis_state(self.basis.dim(), self.basis.vacuum_index())),
            BathSpec::Particle { mode } => {
                if !self.complement.contains(mode) {
                    return Err(Error::invalid(format!("bath particle mode {mode} is not a bath mode")));
                }
                let mut occ = vec![0u8; self.basis.n_modes()];
                occ[*mode] = 1;
                let i = self
                    .basis
                    .index_of(&occ)
                    .ok_or_else(|| Error::invalid("a bath particle does not fit the truncation"))?;
                Ok(DensityOperator::basis_state(self.basis.dim(), i))
            }
            BathSpec::Gibbs { beta, mu } => {
                let (bath_basis, state) = self.bath_gibbs(*beta, *mu)?;
                embed_bath(&self.basis, &self.complement, &bath_basis, &state)
            }
        }
    }

    /// `exp(−β(H_B − μN_B))/Z` for the free bath, restricted to at most
    /// `N_max − 1` particles so a channel excitation always fits.
    pub fn bath_gibbs(&self, beta: f64, mu: f64) -> Result<(FockBasis, DensityOperator)> {
        if !(beta.is_finite() && beta >= 0.0 && mu.is_finite()) {
            return Err(Error::invalid("bath Gibbs state needs finite β ≥ 0 and finite μ"));
        }
        if self.complement.is_empty() {
            return Err(Error::invalid("there are no bath modes"));
        }
        if self.basis.n_max() == 0 {
            return Err(Error::invalid("a channel excitation needs N_max ≥ 1"));
        }
        let truncation = Truncation {
            per_mode: self.basis.cap(),
            total: self.basis.n_max() - 1,
            max_dim: usize::MAX,
        };
        let bath_basis = FockBasis::enumerate(self.complement.len(), self.basis.statistics(), truncation)?;
        let energies: Vec<f64> = self.complement.iter().map(|&s| self.modes.energies[s]).collect();
        let h_bath = one_body_operator(
            &bath_basis,
            &CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                energies.len(),
                energies.iter().map(|&w| crate::Complex64::new(w, 0.0)),
            )),
        )?
        .into_hermitian()?;
        let all: Vec<usize> = (0..self.complement.len()).collect();
        let n_bath = number_operator(&bath_basis, &all)?;
        let model = GibbsModel::new(vec!["H_bath".into(), "N_bath".into()], vec![h_bath, n_bath], vec![beta, -beta * mu])?;
        let (state, _) = crate::gibbs::gibbs_state(&model)?;
        Ok((bath_basis, state))
    }
}

/// Bath preparation on `M^C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BathSpec {
    Vacuum,
    Particle { mode: usize },
    Gibbs { beta: f64, mu: f64 },
}
