//! Strict JSON run configuration.

use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelMatrixJson;
use crate::error::{Error, Result};
use crate::fock::{Statistics, Truncation, DEFAULT_MAX_DIM};
use crate::lattice::{PotentialSpec, SpatialGrid, TwoBodyKernel};
use crate::system::{BathSpec, CouplingScales, SystemSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Modes,
    FreeChannel,
    ReductionCheck,
    DecoherenceSweep,
    GibbsFit,
    Feeding,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Modes => "modes",
            Experiment::FreeChannel => "free-channel",
            Experiment::ReductionCheck => "reduction-check",
            Experiment::DecoherenceSweep => "decoherence-sweep",
            Experiment::GibbsFit => "gibbs-fit",
            Experiment::Feeding => "feeding",
        }
    }
}

fn default_max_dim() -> usize {
    DEFAULT_MAX_DIM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FockSection {
    pub statistics: Statistics,
    /// Occupation cap per mode; ignored for fermions.
    pub per_mode_cap: u8,
    pub n_max: usize,
    #[serde(default = "default_max_dim")]
    pub max_dim: usize,
}

/// Source of the channel matrix `w(t₀)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelMatrixSource {
    Explicit { matrix: ChannelMatrixJson },
    Diagonal { populations: Vec<f64> },
    /// Random density matrix drawn from the run seed.
    Random,
    /// Normalized feeding matrix from the `feeding` section.
    FromFeeding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub lambda: f64,
    pub matrix: ChannelMatrixSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t0: f64,
    pub t1: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub g_mb: Vec<f64>,
}

fn default_observable_count() -> usize {
    20
}

fn default_pvm_cells() -> usize {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ReductionSection {
    /// Random Hermitian observables checked against the reduction identity.
    #[serde(default = "default_observable_count")]
    pub observables: usize,
    /// Cells of the random projection-valued measure.
    #[serde(default = "default_pvm_cells")]
    pub pvm_cells: usize,
}

impl Default for ReductionSection {
    fn default() -> Self {
        Self {
            observables: default_observable_count(),
            pvm_cells: default_pvm_cells(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableSpec {
    /// `Σ_{r∈modes} n_r`
    ModeNumber { modes: Vec<usize> },
    /// The system Hamiltonian at the configured coupling.
    Hamiltonian,
    /// Random Hermitian matrix drawn from the run seed.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GibbsTargets {
    Explicit { values: Vec<f64> },
    /// Expectations in the Gibbs state with these multipliers.
    Reference { zeta: Vec<f64> },
}

fn default_tolerance() -> f64 {
    crate::gibbs::DEFAULT_FIT_TOLERANCE
}

fn default_iterations() -> usize {
    crate::gibbs::DEFAULT_MAX_ITERATIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GibbsSection {
    pub observables: Vec<ObservableSpec>,
    pub targets: GibbsTargets,
    #[serde(default)]
    pub initial_zeta: Option<Vec<f64>>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceKernelSpec {
    /// Time-independent `K_{rs}`, rows over channel modes.
    Constant { bath_modes: Vec<usize>, re: Vec<Vec<f64>>, im: Vec<Vec<f64>> },
    /// Independent uniform entries in `[−1, 1]` per sample, drawn from the seed.
    Random { bath_modes: Vec<usize> },
}

fn default_kernel_draws() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FeedingSection {
    /// Window `τ` of the source integral.
    pub window: f64,
    pub samples: usize,
    pub kernel: SourceKernelSpec,
    /// Random kernels drawn in the feeding experiment; the first seeds `w(t₀)`.
    #[serde(default = "default_kernel_draws")]
    pub kernel_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub mode_cache_dir: Option<PathBuf>,
    pub grid: SpatialGrid,
    #[serde(default = "zero_potential")]
    pub potential: PotentialSpec,
    pub n_modes: usize,
    #[serde(default)]
    pub kernel: Option<TwoBodyKernel>,
    #[serde(default)]
    pub fock: Option<FockSection>,
    #[serde(default)]
    pub channel_modes: Option<Vec<usize>>,
    #[serde(default)]
    pub coupling: Option<CouplingScales>,
    #[serde(default)]
    pub bath: Option<BathSpec>,
    #[serde(default)]
    pub channel: Option<ChannelSection>,
    #[serde(default)]
    pub time: Option<TimeSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub reduction: Option<ReductionSection>,
    #[serde(default)]
    pub gibbs: Option<GibbsSection>,
    #[serde(default)]
    pub feeding: Option<FeedingSection>,
}

fn zero_potential() -> PotentialSpec {
    PotentialSpec::Zero
}

fn missing(section: &str, experiment: Experiment) -> Error {
    Error::Config(format!("experiment {} requires the `{section}` section", experiment.name()))
}

pub fn require<'a, T>(value: &'a Option<T>, section: &str, experiment: Experiment) -> Result<&'a T> {
    value.as_ref().ok_or_else(|| missing(section, experiment))
}

impl ExperimentConfig {
    /// Parse with serde's line/column diagnostics.
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("{origin}:{}:{}: {e}", e.line(), e.column())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Config(format!("{}: not UTF-8: {e}", path.display())))?;
        Ok((Self::from_json(text, &path.display().to_string())?, bytes))
    }

    pub fn schema() -> String {
        serde_json::to_string_pretty(&schemars::schema_for!(ExperimentConfig)).expect("schema serializes")
    }

    fn needs_system(&self) -> bool {
        self.experiment != Experiment::Modes
    }

    pub fn system_spec(&self) -> Result<SystemSpec> {
        let e = self.experiment;
        let fock = require(&self.fock, "fock", e)?;
        Ok(SystemSpec {
            grid: self.grid,
            potential: self.potential.clone(),
            kernel: require(&self.kernel, "kernel", e)?.clone(),
            n_modes: self.n_modes,
            statistics: fock.statistics,
            truncation: Truncation {
                per_mode: fock.per_mode_cap,
                total: fock.n_max,
                max_dim: fock.max_dim,
            },
            channel: require(&self.channel_modes, "channel_modes", e)?.clone(),
        })
    }

    /// Semantic checks that need no numerics.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let cfg = |e: Error| Error::Config(e.to_string());
        self.grid.validate().map_err(cfg)?;
        self.potential.sample(&self.grid).map_err(cfg)?;
        if self.n_modes == 0 || self.n_modes > self.grid.points {
            return Err(Error::Config(format!(
                "n_modes must lie in 1..={} for this grid",
                self.grid.points
            )));
        }
        if !self.needs_system() {
            return Ok(());
        }
        let e = self.experiment;
        require(&self.kernel, "kernel", e)?.validate().map_err(cfg)?;
        let fock = require(&self.fock, "fock", e)?;
        if fock.statistics == Statistics::Bose && fock.per_mode_cap == 0 {
            return Err(Error::Config("per_mode_cap must be at least 1".into()));
        }
        let channel = require(&self.channel_modes, "channel_modes", e)?;
        if channel.is_empty() {
            return Err(Error::Config("channel_modes must not be empty".into()));
        }
        let mut sorted = channel.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != channel.len() || sorted.last().is_some_and(|&r| r >= self.n_modes) {
            return Err(Error::Config(format!(
                "channel_modes must be distinct indices below n_modes = {}",
                self.n_modes
            )));
        }
        let in_range = |modes: &[usize], what: &str| -> Result<()> {
            if modes.iter().any(|&r| r >= self.n_modes) {
                return Err(Error::Config(format!("{what} lists a mode outside 0..{}", self.n_modes)));
            }
            Ok(())
        };
        if let Some(c) = &self.coupling {
            c.validate().map_err(cfg)?;
        }
        if let Some(BathSpec::Particle { mode }) = &self.bath {
            if channel.contains(mode) || *mode >= self.n_modes {
                return Err(Error::Config(format!("bath particle mode {mode} must be a bath mode")));
            }
        }
        if let Some(f) = &self.feeding {
            let bath_modes = match &f.kernel {
                SourceKernelSpec::Constant { bath_modes, re, im } => {
                    let shape_ok = |m: &Vec<Vec<f64>>| m.len() == channel.len() && m.iter().all(|r| r.len() == bath_modes.len());
                    if !shape_ok(re) || !shape_ok(im) {
                        return Err(Error::Config(format!(
                            "feeding kernel must be {}×{}",
                            channel.len(),
                            bath_modes.len()
                        )));
                    }
                    bath_modes
                }
                SourceKernelSpec::Random { bath_modes } => bath_modes,
            };
            in_range(bath_modes, "feeding kernel")?;
            if bath_modes.iter().any(|s| channel.contains(s)) {
                return Err(Error::Config("feeding kernel must only touch bath modes".into()));
            }
            if f.samples == 0 || f.kernel_draws == 0 || !(f.window.is_finite() && f.window >= 0.0) {
                return Err(Error::Config("feeding needs samples ≥ 1, kernel_draws ≥ 1 and a finite window ≥ 0".into()));
            }
        }
        if let Some(g) = &self.gibbs {
            for o in &g.observables {
                if let ObservableSpec::ModeNumber { modes } = o {
                    in_range(modes, "gibbs observable")?;
                }
            }
            let n = g.observables.len();
            let targets = match &g.targets {
                GibbsTargets::Explicit { values } => values.len(),
                GibbsTargets::Reference { zeta } => zeta.len(),
            };
            if n == 0 || targets != n || g.initial_zeta.as_ref().is_some_and(|z| z.len() != n) {
                return Err(Error::Config("gibbs needs one target and one initial multiplier per observable".into()));
            }
        }
        match e {
            Experiment::Modes => {}
            Experiment::FreeChannel | Experiment::DecoherenceSweep => {
                require(&self.coupling, "coupling", e)?;
                require(&self.bath, "bath", e)?;
                self.check_channel(channel.len())?;
                require(&self.time, "time", e)?;
                if e == Experiment::DecoherenceSweep && require(&self.sweep, "sweep", e)?.g_mb.is_empty() {
                    return Err(Error::Config("sweep.g_mb must not be empty".into()));
                }
            }
            Experiment::ReductionCheck => {
                require(&self.bath, "bath", e)?;
                self.check_channel(channel.len())?;
            }
            Experiment::GibbsFit => {
                let g = require(&self.gibbs, "gibbs", e)?;
                if g.observables.contains(&ObservableSpec::Hamiltonian) {
                    require(&self.coupling, "coupling", e)?;
                }
            }
            Experiment::Feeding => {
                require(&self.coupling, "coupling", e)?;
                require(&self.bath, "bath", e)?;
                require(&self.feeding, "feeding", e)?;
                require(&self.time, "time", e)?;
            }
        }
        Ok(())
    }

    fn check_channel(&self, k: usize) -> Result<()> {
        let c = require(&self.channel, "channel", self.experiment)?;
        if !(c.lambda > 0.0 && c.lambda < 1.0) {
            return Err(Error::Config("channel.lambda must lie in (0, 1)".into()));
        }
        match &c.matrix {
            ChannelMatrixSource::Explicit { matrix } if matrix.dim != k => {
                Err(Error::Config(format!("channel matrix must be {k}×{k}")))
            }
            ChannelMatrixSource::Diagonal { populations } if populations.len() != k => {
                Err(Error::Config(format!("channel populations need {k} entries")))
            }
            ChannelMatrixSource::FromFeeding if self.feeding.is_none() => Err(missing("feeding", self.experiment)),
            ChannelMatrixSource::FromFeeding if self.coupling.is_none() => Err(missing("coupling", self.experiment)),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FREE: &str = r#"{
        "schema_version": 1,
        "experiment": "free-channel",
        "grid": {"length": 1.0, "points": 40},
        "n_modes": 4,
        "kernel": {"kind": "contact", "g": 1.0},
        "fock": {"statistics": "bose", "per_mode_cap": 2, "n_max": 2},
        "channel_modes": [0, 1],
        "coupling": {"g_int": 0.0, "g_mb": 0.0},
        "bath": {"kind": "particle", "mode": 2},
        "channel": {"lambda": 0.3, "matrix": {"kind": "random"}},
        "time": {"t0": 0.0, "t1": 1.0, "samples": 10}
    }"#;

    #[test]
    fn parses_and_fills_defaults() {
        let c = ExperimentConfig::from_json(FREE, "free.json").unwrap();
        assert_eq!(c.experiment, Experiment::FreeChannel);
        assert_eq!(c.fock.as_ref().unwrap().max_dim, DEFAULT_MAX_DIM);
        assert_eq!(c.coupling.unwrap().g_mm, 1.0);
        assert_eq!(c.potential, PotentialSpec::Zero);
    }

    #[test]
    fn unknown_keys_report_line_and_column() {
        let text = FREE.replace("\"n_modes\": 4,", "\"n_modes\": 4,\n        \"bogus\": 1,");
        let err = ExperimentConfig::from_json(&text, "free.json").unwrap_err().to_string();
        assert!(err.contains("free.json:6:"), "{err}");
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn missing_section_is_a_config_error() {
        let text = FREE.replace(",\n        \"time\": {\"t0\": 0.0, \"t1\": 1.0, \"samples\": 10}", "");
        let err = ExperimentConfig::from_json(&text, "x").unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("time")), "{err}");
    }

    #[test]
    fn semantic_errors() {
        for (from, to) in [
            ("\"schema_version\": 1", "\"schema_version\": 9"),
            ("\"channel_modes\": [0, 1]", "\"channel_modes\": [0, 7]"),
            ("\"lambda\": 0.3", "\"lambda\": 1.0"),
            ("\"mode\": 2", "\"mode\": 1"),
        ] {
            let err = ExperimentConfig::from_json(&FREE.replace(from, to), "x").unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{from}: {err}");
        }
    }

    #[test]
    fn schema_lists_experiments() {
        let s = ExperimentConfig::schema();
        assert!(s.contains("decoherence-sweep") && s.contains("schema_version"));
    }
}
