//! Experiment presets driven by an [`ExperimentConfig`].

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{
    expectation_identity_residual, make_fed_state, mix_channel, projection_defect, reduce_effect, validate_channel_matrix,
    ChannelMatrixJson, ChannelSpec, Pvm,
};
use crate::config::{require, ChannelMatrixSource, Experiment, ExperimentConfig, GibbsTargets, ObservableSpec, SourceKernelSpec};
use crate::error::{Error, Result};
use crate::evolver::{decoherence_metrics, free_channel_series, run_channel, PropagatorCache, TimeGrid};
use crate::fock::{number_operator, DensityOperator, Operator};
use crate::gibbs::{build_source_ops, feeding_matrix, fit_gibbs, gibbs_state, kubo_covariance, Feeding, FitOptions, GibbsModel, SourceKernel};
use crate::lattice::{solve_modes, solve_modes_cached, square_well_level, PotentialSpec, Tridiagonal};
use crate::linalg::{self, random_density, random_hermitian, CMatrix};
use crate::output::{decoherence_csv, write_json, Check, Csv, Summary};
use crate::system::{CouplingScales, System};

/// Unitarity drift tolerated along any propagation.
pub const UNITARITY_TOLERANCE: f64 = 1e-10;
/// Agreement with the free phase law when the channel is decoupled.
pub const FREE_LAW_TOLERANCE: f64 = 1e-8;
pub const REDUCTION_TOLERANCE: f64 = 1e-10;
pub const EFFECT_SPECTRUM_SLACK: f64 = 1e-10;
pub const COMPLETENESS_TOLERANCE: f64 = 1e-8;
pub const PSD_TOLERANCE: f64 = 1e-12;
/// Accepted band for the log-log slope of decoherence against `g_MB`.
pub const SLOPE_BAND: (f64, f64) = (1.7, 2.3);

#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub summary: Summary,
}

/// Run the configured experiment and write its artifacts into `out_dir`.
pub fn run(config: &ExperimentConfig, config_bytes: &[u8], out_dir: &Path, seed: u64) -> Result<RunReport> {
    std::fs::create_dir_all(out_dir)?;
    let mut ctx = Context {
        config,
        out_dir,
        rng: ChaCha8Rng::seed_from_u64(seed),
        summary: Summary::new(config.experiment.name(), config_bytes, seed),
    };
    match config.experiment {
        Experiment::Modes => ctx.modes()?,
        Experiment::FreeChannel => ctx.free_channel()?,
        Experiment::ReductionCheck => ctx.reduction_check()?,
        Experiment::DecoherenceSweep => ctx.decoherence_sweep()?,
        Experiment::GibbsFit => ctx.gibbs_fit()?,
        Experiment::Feeding => ctx.feeding()?,
    }
    let Context { mut summary, .. } = ctx;
    summary.files.push("summary.json".into());
    summary.files.sort();
    summary.write(&out_dir.join("summary.json"))?;
    Ok(RunReport {
        out_dir: out_dir.to_path_buf(),
        summary,
    })
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    out_dir: &'a Path,
    rng: ChaCha8Rng,
    summary: Summary,
}

/// Channel state and the bookkeeping needed to evolve it.
struct Prepared {
    rho: DensityOperator,
    w0: CMatrix,
    lambda: f64,
}

struct ChannelOutcome {
    max_deviation: f64,
    max_trace_distance: f64,
    max_leakage: f64,
}

impl Context<'_> {
    fn experiment(&self) -> Experiment {
        self.config.experiment
    }

    fn write_csv(&mut self, name: &str, csv: &Csv) -> Result<()> {
        csv.write(&self.out_dir.join(name))?;
        self.summary.files.push(name.into());
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl serde::Serialize) -> Result<()> {
        write_json(&self.out_dir.join(name), value)?;
        self.summary.files.push(name.into());
        Ok(())
    }

    fn system(&mut self) -> Result<System> {
        let system = System::build(&self.config.system_spec()?, self.config.mode_cache_dir.as_deref())?;
        self.summary.scalar("fock_dim", system.basis.dim());
        self.summary.scalar("channel_modes", &system.channel);
        self.summary.scalar("bath_modes", &system.complement);
        self.summary.scalar("mode_energies", system.energies());
        Ok(system)
    }

    fn coupling(&self) -> Result<CouplingScales> {
        require(&self.config.coupling, "coupling", self.experiment()).copied()
    }

    fn propagator(&self, system: &System, scales: &CouplingScales) -> Result<PropagatorCache> {
        let h = system.hamiltonian(scales)?;
        PropagatorCache::new(&h)
    }

    fn time_grid(&self) -> Result<TimeGrid> {
        let t = require(&self.config.time, "time", self.experiment())?;
        TimeGrid::new(t.t0, t.t1, t.samples).map_err(|e| Error::Config(e.to_string()))
    }

    /// Feeding matrices for every configured kernel draw.
    fn feedings(&mut self, system: &System, cache: &PropagatorCache) -> Result<Vec<Feeding>> {
        let f = require(&self.config.feeding, "feeding", self.experiment())?.clone();
        let rho_s = system.bath_state(require(&self.config.bath, "bath", self.experiment())?)?;
        let k = system.channel.len();
        let mut out = Vec::with_capacity(f.kernel_draws);
        for _ in 0..f.kernel_draws {
            let kernel = match &f.kernel {
                SourceKernelSpec::Constant { bath_modes, re, im } => {
                    let m = CMatrix::from_fn(k, bath_modes.len(), |r, s| Complex64::new(re[r][s], im[r][s]));
                    SourceKernel::constant(bath_modes.clone(), m, f.samples)
                }
                SourceKernelSpec::Random { bath_modes } => SourceKernel {
                    bath_modes: bath_modes.clone(),
                    samples: (0..f.samples)
                        .map(|_| {
                            CMatrix::from_fn(k, bath_modes.len(), |_, _| {
                                Complex64::new(self.rng.random_range(-1.0..=1.0), self.rng.random_range(-1.0..=1.0))
                            })
                        })
                        .collect(),
                },
            };
            let spec = build_source_ops(cache, &system.basis, &system.channel, &kernel, f.window)?;
            out.push(feeding_matrix(&spec, &system.basis, &rho_s)?);
        }
        Ok(out)
    }

    /// `cache` is reused for a feeding-seeded matrix; without it one is
    /// built from the configured coupling.
    fn channel_matrix(&mut self, system: &System, cache: Option<&PropagatorCache>) -> Result<CMatrix> {
        let c = require(&self.config.channel, "channel", self.experiment())?.clone();
        let k = system.channel.len();
        match &c.matrix {
            ChannelMatrixSource::Explicit { matrix } => matrix.to_matrix(),
            ChannelMatrixSource::Diagonal { populations } => Ok(CMatrix::from_fn(k, k, |i, j| {
                Complex64::new(if i == j { populations[i] } else { 0.0 }, 0.0)
            })),
            ChannelMatrixSource::Random => Ok(random_density(&mut self.rng, k)),
            ChannelMatrixSource::FromFeeding => {
                let owned;
                let cache = match cache {
                    Some(c) => c,
                    None => {
                        owned = self.propagator(system, &self.coupling()?)?;
                        &owned
                    }
                };
                Ok(self.feedings(system, cache)?.swap_remove(0).w0)
            }
        }
    }

    fn prepare(&mut self, system: &System, w0: CMatrix, lambda: f64) -> Result<Prepared> {
        let rho0 = system.bath_state(require(&self.config.bath, "bath", self.experiment())?)?;
        let spec = ChannelSpec::new(system.channel.clone(), w0.clone(), lambda, system.energies())?;
        self.summary.scalar("channel_bandwidth", spec.bandwidth());
        self.summary.scalar("channel_timescale", spec.timescale());
        let rho1 = make_fed_state(&system.basis, &rho0, &spec)?;
        Ok(Prepared {
            rho: mix_channel(&rho0, &rho1, lambda)?,
            w0,
            lambda,
        })
    }

    /// Evolve a prepared channel state, write its CSV and record checks
    /// under `prefix`.
    fn evolve(
        &mut self,
        system: &System,
        cache: &PropagatorCache,
        prepared: &Prepared,
        csv_name: &str,
        prefix: &str,
    ) -> Result<ChannelOutcome> {
        let grid = self.time_grid()?;
        let run = run_channel(&system.basis, cache, &prepared.rho, &system.channel, &grid)?;
        let free = free_channel_series(&prepared.w0, &system.channel_energies(), &grid)?;
        let records = decoherence_metrics(&run.times, &run.extracted, &free)?;
        self.write_csv(csv_name, &decoherence_csv(&records))?;
        let max_deviation = run
            .extracted
            .iter()
            .zip(&free)
            .map(|((w, _), wf)| linalg::max_abs(&(w - wf)))
            .fold(0.0, f64::max);
        let outcome = ChannelOutcome {
            max_deviation,
            max_trace_distance: records.iter().map(|r| r.trace_distance).fold(0.0, f64::max),
            max_leakage: records.iter().map(|r| r.leakage.abs()).fold(0.0, f64::max),
        };
        self.summary.scalar(&format!("{prefix}cache_residual"), cache.residual());
        self.summary.scalar(&format!("{prefix}max_deviation_from_free"), outcome.max_deviation);
        self.summary.scalar(&format!("{prefix}max_trace_distance"), outcome.max_trace_distance);
        self.summary.scalar(&format!("{prefix}max_leakage"), outcome.max_leakage);
        self.summary.scalar(&format!("{prefix}fed_weight_t0"), run.extracted[0].1);
        self.summary.check(Check::at_most(format!("{prefix}purity_drift"), run.max_purity_drift, UNITARITY_TOLERANCE));
        self.summary.check(Check::at_most(format!("{prefix}trace_drift"), run.max_trace_drift, UNITARITY_TOLERANCE));
        self.summary.check(Check::at_most(format!("{prefix}spectrum_drift"), run.max_spectrum_drift, UNITARITY_TOLERANCE));
        Ok(outcome)
    }

    fn modes(&mut self) -> Result<()> {
        let c = self.config;
        let modes = match &c.mode_cache_dir {
            Some(dir) => solve_modes_cached(dir, &c.grid, &c.potential, c.n_modes)?,
            None => solve_modes(&c.grid, &c.potential, c.n_modes)?,
        };
        let analytic = |n: usize| match &c.potential {
            PotentialSpec::Zero => square_well_level(c.grid.length, n),
            PotentialSpec::Harmonic { k } => k.sqrt() * (n as f64 - 0.5),
            _ => f64::NAN,
        };
        let mut csv = Csv::new(vec!["n".into(), "energy".into(), "analytic".into(), "relative_error".into()]);
        let mut worst = 0.0f64;
        for (i, &e) in modes.energies.iter().enumerate() {
            let a = analytic(i + 1);
            let rel = (e - a).abs() / a.abs();
            if i < 5 {
                worst = worst.max(rel);
            }
            csv.push(vec![(i + 1) as f64, e, a, rel]);
        }
        self.write_csv("modes.csv", &csv)?;
        let residual = modes.residuals(&c.potential)?.into_iter().fold(0.0, f64::max);
        let floor = f64::EPSILON * Tridiagonal::schrodinger(&c.grid, &c.potential.sample(&c.grid)?).norm();
        self.summary.scalar("grid_spacing", c.grid.spacing());
        self.summary.scalar("eigen_residual_roundoff_floor", floor);
        self.summary.scalar("energies", &modes.energies);
        self.summary.check(Check::at_most("gram_defect", modes.gram_defect(), 1e-10));
        self.summary.check(Check::at_most("eigen_residual", residual, 1e-10));
        if c.potential == PotentialSpec::Zero {
            self.summary.check(Check::at_most("square_well_relative_error", worst, 1e-3));
        }
        Ok(())
    }

    fn free_channel(&mut self) -> Result<()> {
        let system = self.system()?;
        let scales = self.coupling()?;
        let cache = self.propagator(&system, &scales)?;
        let w0 = self.channel_matrix(&system, Some(&cache))?;
        let lambda = require(&self.config.channel, "channel", self.experiment())?.lambda;
        let prepared = self.prepare(&system, w0, lambda)?;
        self.write_json("w0.json", &ChannelMatrixJson::from_matrix(&prepared.w0))?;
        let outcome = self.evolve(&system, &cache, &prepared, "channel.csv", "")?;
        self.summary.scalar("lambda", prepared.lambda);
        if scales.g_int == 0.0 || scales.g_mb == 0.0 {
            self.summary.check(Check::at_most("free_law_deviation", outcome.max_deviation, FREE_LAW_TOLERANCE));
        }
        Ok(())
    }

    fn decoherence_sweep(&mut self) -> Result<()> {
        let system = self.system()?;
        let base = self.coupling()?;
        let sweep = require(&self.config.sweep, "sweep", self.experiment())?.g_mb.clone();
        // the channel state is shared by every point so the sweep is coherent
        let reference = self.propagator(&system, &base)?;
        let w0 = self.channel_matrix(&system, Some(&reference))?;
        let lambda = require(&self.config.channel, "channel", self.experiment())?.lambda;
        let prepared = self.prepare(&system, w0, lambda)?;
        self.write_json("w0.json", &ChannelMatrixJson::from_matrix(&prepared.w0))?;
        let mut distances = Vec::with_capacity(sweep.len());
        for (i, &g) in sweep.iter().enumerate() {
            let scales = CouplingScales { g_mb: g, ..base };
            let cache = self.propagator(&system, &scales)?;
            let outcome = self.evolve(&system, &cache, &prepared, &format!("decoherence_{i:02}.csv"), &format!("point_{i:02}_"))?;
            if g == 0.0 || base.g_int == 0.0 {
                self.summary
                    .check(Check::at_most(format!("point_{i:02}_free_law_deviation"), outcome.max_deviation, FREE_LAW_TOLERANCE));
            }
            distances.push(outcome.max_trace_distance);
        }
        let slopes = log_log_slopes(&sweep, &distances);
        for &(i, s) in &slopes {
            self.summary
                .check(Check::within(format!("slope_{i:02}_{:02}", i + 1), s, Some(SLOPE_BAND.0), Some(SLOPE_BAND.1)));
        }
        self.summary.scalar("g_mb", &sweep);
        self.summary.scalar("max_trace_distance", &distances);
        self.summary.scalar("slopes", slopes.iter().map(|&(_, s)| s).collect::<Vec<_>>());
        Ok(())
    }

    fn reduction_check(&mut self) -> Result<()> {
        let system = self.system()?;
        let w0 = self.channel_matrix(&system, None)?;
        let lambda = require(&self.config.channel, "channel", self.experiment())?.lambda;
        let rho0 = system.bath_state(require(&self.config.bath, "bath", self.experiment())?)?;
        let spec = ChannelSpec::new(system.channel.clone(), w0, lambda, system.energies())?;
        let settings = self.config.reduction.unwrap_or_default();
        let dim = system.basis.dim();

        let mut worst = 0.0f64;
        for _ in 0..settings.observables {
            let a = Operator::hermitian(random_hermitian(&mut self.rng, dim))?;
            worst = worst.max(expectation_identity_residual(&system.basis, &a, &rho0, &spec)?);
        }
        self.summary.scalar("observables_checked", settings.observables);
        self.summary.check(Check::at_most("reduction_identity_residual", worst, REDUCTION_TOLERANCE));

        let generator = Operator::hermitian(random_hermitian(&mut self.rng, dim))?;
        let pvm = Pvm::from_hermitian(&generator, 1e-9)?.coarsen(settings.pvm_cells.min(dim))?;
        let effect = reduce_effect(&system.basis, &pvm, &rho0, &system.channel)?;
        let (lo, hi) = effect.spectrum_bounds();
        self.summary.scalar("pvm_cells", pvm.len());
        self.summary.check(Check::at_least("effect_min_eigenvalue", lo, -EFFECT_SPECTRUM_SLACK));
        self.summary.check(Check::at_most("effect_max_eigenvalue", hi, 1.0 + EFFECT_SPECTRUM_SLACK));
        self.summary
            .check(Check::at_most("effect_completeness_defect", effect.completeness_defect(), COMPLETENESS_TOLERANCE));
        let defects = projection_defect(&system.basis, &effect, &pvm, &rho0, &system.channel)?;
        self.summary.scalar("random_pvm_defects", &defects);

        let trivial = Pvm::from_projectors(vec![Operator::identity(dim)])?;
        let effect = reduce_effect(&system.basis, &trivial, &rho0, &system.channel)?;
        let d = projection_defect(&system.basis, &effect, &trivial, &rho0, &system.channel)?[0];
        self.summary.check(Check::at_most("trivial_projection_defect", d.projection, REDUCTION_TOLERANCE));
        self.summary.check(Check::at_most("trivial_factorization_gap", d.factorization_gap, REDUCTION_TOLERANCE));
        Ok(())
    }

    fn gibbs_fit(&mut self) -> Result<()> {
        let system = self.system()?;
        let g = require(&self.config.gibbs, "gibbs", self.experiment())?.clone();
        let mut names = Vec::new();
        let mut ops = Vec::new();
        for (j, o) in g.observables.iter().enumerate() {
            let (name, op) = match o {
                ObservableSpec::ModeNumber { modes } => (
                    format!("N{modes:?}").replace(' ', ""),
                    number_operator(&system.basis, modes)?.into_hermitian()?,
                ),
                ObservableSpec::Hamiltonian => ("H".to_string(), system.hamiltonian(&self.coupling()?)?),
                ObservableSpec::Random => (
                    format!("random_{j}"),
                    Operator::hermitian(random_hermitian(&mut self.rng, system.basis.dim()))?,
                ),
            };
            names.push(name);
            ops.push(op);
        }
        let n = ops.len();
        let targets = match &g.targets {
            GibbsTargets::Explicit { values } => values.clone(),
            GibbsTargets::Reference { zeta } => {
                let (w, _) = gibbs_state(&GibbsModel::new(names.clone(), ops.clone(), zeta.clone())?)?;
                ops.iter().map(|a| a.expectation(w.matrix()).re).collect()
            }
        };
        let init = g.initial_zeta.clone().unwrap_or_else(|| vec![0.0; n]);
        let options = FitOptions {
            tolerance: g.tolerance,
            max_iterations: g.max_iterations,
        };
        let fit = fit_gibbs(GibbsModel::new(names, ops, init)?, &targets, options)?;
        self.write_json("gibbs_model.json", &fit.model.to_json(&fit.residuals))?;
        let dense: Vec<CMatrix> = fit.model.observables.iter().map(Operator::to_dense).collect();
        let cov = kubo_covariance(&fit.state, &dense);
        let asym = (&cov - cov.transpose()).amax();
        let min_eig = cov.symmetric_eigen().eigenvalues.min();
        self.summary.scalar("targets", &targets);
        self.summary.scalar("zeta", &fit.model.zeta);
        self.summary.scalar("zeta0", fit.model.zeta0);
        self.summary.scalar("entropy", fit.state.entropy());
        self.summary.scalar("iterations", fit.iterations);
        let worst = fit.residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        self.summary.check(Check::at_most("constraint_residual", worst, g.tolerance));
        self.summary.check(Check::at_most("kubo_covariance_asymmetry", asym, 1e-10));
        self.summary.check(Check::at_least("kubo_covariance_min_eigenvalue", min_eig, -1e-10));
        Ok(())
    }

    fn feeding(&mut self) -> Result<()> {
        let system = self.system()?;
        let scales = self.coupling()?;
        let cache = self.propagator(&system, &scales)?;
        let feedings = self.feedings(&system, &cache)?;
        let min_eig = feedings
            .iter()
            .map(|f| linalg::min_eigenvalue(&f.sigma))
            .fold(f64::INFINITY, f64::min);
        self.summary.scalar("kernel_draws", feedings.len());
        self.summary.check(Check::at_least("sigma_min_eigenvalue", min_eig, -PSD_TOLERANCE));
        let first = &feedings[0];
        self.write_json("sigma.json", &ChannelMatrixJson::from_matrix(&first.sigma))?;
        self.write_json("w0.json", &ChannelMatrixJson::from_matrix(&first.w0))?;
        let valid = validate_channel_matrix(&first.w0).is_ok();
        self.summary.check(Check::at_least("w0_valid", if valid { 1.0 } else { 0.0 }, 1.0));
        self.summary.scalar("sigma_trace", linalg::trace(&first.sigma).re);

        let lambda = self.config.channel.as_ref().map_or(0.5, |c| c.lambda);
        let prepared = self.prepare(&system, first.w0.clone(), lambda)?;
        let outcome = self.evolve(&system, &cache, &prepared, "channel.csv", "")?;
        if scales.g_int == 0.0 || scales.g_mb == 0.0 {
            self.summary.check(Check::at_most("free_law_deviation", outcome.max_deviation, FREE_LAW_TOLERANCE));
        }
        Ok(())
    }
}

/// Slopes `Δ log d / Δ log g` between consecutive positive points.
pub fn log_log_slopes(g: &[f64], d: &[f64]) -> Vec<(usize, f64)> {
    (0..g.len().saturating_sub(1))
        .filter(|&i| g[i] > 0.0 && g[i + 1] > 0.0 && d[i] > 0.0 && d[i + 1] > 0.0)
        .map(|i| (i, (d[i + 1] / d[i]).ln() / (g[i + 1] / g[i]).ln()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slopes_skip_zero_points() {
        let s = log_log_slopes(&[0.0, 1e-3, 1e-2], &[0.0, 1e-8, 1e-6]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].0, 1);
        assert!((s[0].1 - 2.0).abs() < 1e-12);
    }
}
