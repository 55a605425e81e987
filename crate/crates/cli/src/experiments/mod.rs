//! Registered experiments. Each one resolves its settings from the config
//! over its own defaults, runs against the core library and returns a table
//! plus named checks.

use std::sync::Arc;
use std::time::Instant;

use pathctrl_core::benchmark;
use pathctrl_core::bsde::BasisSpec;
use pathctrl_core::control::grid_dp::uniform_levels;
use pathctrl_core::control::GridDpSpec;
use pathctrl_core::model::zoo::{ModelInstance, ModelZoo};
use pathctrl_core::TimeGrid;

use crate::config::{DpConfig, ExperimentConfig, GridConfig, ModelConfig};
use crate::error::{CliError, Result};
use crate::report::{write_outputs, Manifest, Outcome};

mod lift;
mod penalty;
mod perturbation;
mod regularity;
mod simulation;
mod units;

pub const THREADS_ENV: &str = "PATHCTRL_THREADS";

pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;
    fn summary(&self) -> &'static str;
    /// The mathematical statement the experiment checks.
    fn anchor(&self) -> &'static str;
    fn defaults(&self) -> Defaults {
        Defaults::default()
    }
    /// Accepted model keys; empty accepts any zoo model.
    fn models(&self) -> &'static [&'static str] {
        &[]
    }
    fn run(&self, ctx: &Context) -> Result<Outcome>;
}

/// Desk-scale settings used when the config leaves a field out.
#[derive(Debug, Clone)]
pub struct Defaults {
    pub model: &'static str,
    pub n_steps: usize,
    pub paths: usize,
    pub replicates: usize,
    pub penalty_ladder: Vec<f64>,
    pub p_ladder: Vec<f64>,
    pub bound_ladder: Vec<f64>,
    pub basis_bins: usize,
    pub space_points: usize,
    pub quad_nodes: usize,
    pub level_step: f64,
}

impl Default for Defaults {
    fn default() -> Self {
        Self {
            model: "toy1d",
            n_steps: 25,
            paths: 20_000,
            replicates: 3,
            penalty_ladder: vec![0.0, 1.0, 2.0, 4.0, 8.0, 16.0],
            p_ladder: vec![2.0, 4.0, 8.0, 16.0],
            bound_ladder: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            basis_bins: 16,
            space_points: 101,
            quad_nodes: 7,
            level_step: 0.25,
        }
    }
}

/// Fully resolved settings handed to [`Experiment::run`].
#[derive(Debug)]
pub struct Context {
    pub config: ExperimentConfig,
    pub model: ModelInstance,
    pub grid: TimeGrid,
    pub paths: usize,
    pub seed: u64,
    pub replicates: usize,
    pub penalty_ladder: Vec<f64>,
    pub p_ladder: Vec<f64>,
    pub bound_ladder: Vec<f64>,
    pub basis_bins: usize,
    pub space_points: usize,
    pub quad_nodes: usize,
    pub level_step: f64,
}

impl Context {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.replicates as u64).map(|i| self.seed + i).collect()
    }

    pub fn basis(&self) -> BasisSpec {
        BasisSpec::local_bins(self.basis_bins)
    }

    pub fn param(&self, key: &str) -> f64 {
        self.model.params[key]
    }

    /// Box for one-dimensional DP: 4.5 standard deviations below the
    /// uncontrolled mean and above the larger of mean and peak.
    pub fn toy_box(&self) -> Vec<(f64, f64)> {
        let span = self.grid.span();
        let s = self.param("sigma").abs() * span.sqrt();
        let mean = self.param("x0") + self.param("mu") * span;
        vec![(mean - 4.5 * s, mean.max(self.param("peak")) + 4.5 * s)]
    }

    pub fn dp_spec(&self, n: f64) -> Result<GridDpSpec> {
        Ok(GridDpSpec::new(self.toy_box(), self.space_points, uniform_levels(n, self.level_step, 1))?.with_quad_nodes(self.quad_nodes))
    }

    /// Singular-limit value of the toy model: `E[ĝ(X_T)]` for the
    /// uncontrolled Gaussian terminal state, with `ĝ` the lifted payoff.
    pub fn toy_oracle(&self) -> f64 {
        let span = self.grid.span();
        let shift = benchmark::PEAK - self.param("peak");
        let mean = self.param("x0") + self.param("mu") * span + shift;
        benchmark::lifted_value(mean, self.param("sigma").powi(2) * span, 1e-12)
    }

    pub fn dynamics(&self) -> Arc<dyn pathctrl_core::model::Dynamics> {
        self.model.dynamics.clone()
    }
}

pub struct Registry {
    experiments: Vec<Box<dyn Experiment>>,
    zoo: ModelZoo,
}

impl Default for Registry {
    fn default() -> Self {
        Self::with_builtin()
    }
}

impl Registry {
    pub fn empty(zoo: ModelZoo) -> Self {
        Self {
            experiments: Vec::new(),
            zoo,
        }
    }

    pub fn with_builtin() -> Self {
        let mut r = Self::empty(ModelZoo::with_builtin());
        r.register(Box::new(simulation::Simulate));
        r.register(Box::new(simulation::WeakStrong));
        r.register(Box::new(penalty::PenaltyLadder));
        r.register(Box::new(penalty::GridDp));
        r.register(Box::new(penalty::DppResidual));
        r.register(Box::new(perturbation::ConvexOrder));
        r.register(Box::new(perturbation::DegenerateLadder));
        r.register(Box::new(lift::Facelift));
        r.register(Box::new(lift::ShiftProperty));
        r.register(Box::new(regularity::Regularity));
        r.register(Box::new(perturbation::TransactionDemo));
        r.register(Box::new(units::UnitExactness));
        r
    }

    /// Adds an experiment; a later registration under the same name wins.
    pub fn register(&mut self, e: Box<dyn Experiment>) {
        self.experiments.retain(|x| x.name() != e.name());
        self.experiments.push(e);
    }

    pub fn zoo(&self) -> &ModelZoo {
        &self.zoo
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.experiments.iter().map(|e| e.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn Experiment> {
        self.experiments.iter().map(|e| e.as_ref())
    }

    pub fn get(&self, name: &str) -> Result<&dyn Experiment> {
        self.iter().find(|e| e.name() == name).ok_or_else(|| CliError::UnknownExperiment {
            name: name.to_string(),
            known: self.names().join(", "),
        })
    }

    /// Validates `cfg` and fills every optional field from the defaults.
    pub fn resolve(&self, cfg: &ExperimentConfig) -> Result<Context> {
        cfg.validate()?;
        let exp = self.get(&cfg.experiment)?;
        let d = exp.defaults();
        let model_cfg = cfg.model.clone().unwrap_or_else(|| ModelConfig::named(d.model));
        if self.zoo.get(&model_cfg.key).is_none() {
            return Err(CliError::config(
                "model.key",
                format!("unknown model `{}` (known: {})", model_cfg.key, self.zoo.keys().join(", ")),
            ));
        }
        let allowed = exp.models();
        if !allowed.is_empty() && !allowed.contains(&model_cfg.key.as_str()) {
            return Err(CliError::config(
                "model.key",
                format!("`{}` runs on {}, not `{}`", exp.name(), allowed.join(" or "), model_cfg.key),
            ));
        }
        let model = self
            .zoo
            .build(&model_cfg.key, &model_cfg.params, model_cfg.preset.as_deref())
            .map_err(|e| match e {
                pathctrl_core::Error::InvalidParameter { name, reason } => CliError::config(name, reason),
                other => CliError::Core(other),
            })?;
        let grid_cfg = cfg.grid.unwrap_or(GridConfig {
            t_start: 0.0,
            t_end: 1.0,
            n_steps: d.n_steps,
        });
        let grid = TimeGrid::new(grid_cfg.t_start, grid_cfg.t_end, grid_cfg.n_steps).map_err(|e| CliError::config("grid", e.to_string()))?;
        let dp = DpConfig {
            space_points: Some(cfg.dp.space_points.unwrap_or(d.space_points)),
            quad_nodes: Some(cfg.dp.quad_nodes.unwrap_or(d.quad_nodes)),
            level_step: Some(cfg.dp.level_step.unwrap_or(d.level_step)),
        };
        let resolved = ExperimentConfig {
            experiment: cfg.experiment.clone(),
            model: Some(ModelConfig {
                key: model_cfg.key.clone(),
                preset: model_cfg.preset.clone(),
                params: model.params.clone(),
            }),
            grid: Some(grid_cfg),
            paths: Some(cfg.paths.unwrap_or(d.paths)),
            seed: cfg.seed,
            replicates: Some(cfg.replicates.unwrap_or(d.replicates)),
            penalty_ladder: Some(cfg.penalty_ladder.clone().unwrap_or(d.penalty_ladder)),
            p_ladder: Some(cfg.p_ladder.clone().unwrap_or(d.p_ladder)),
            bound_ladder: Some(cfg.bound_ladder.clone().unwrap_or(d.bound_ladder)),
            basis_bins: Some(cfg.basis_bins.unwrap_or(d.basis_bins)),
            dp,
            threads: cfg.threads,
            output: cfg.output.clone(),
            format: cfg.format,
        };
        // Defaults pass the same checks as user values.
        resolved.validate()?;
        Ok(Context {
            model,
            grid,
            paths: resolved.paths.unwrap(),
            seed: resolved.seed,
            replicates: resolved.replicates.unwrap(),
            penalty_ladder: resolved.penalty_ladder.clone().unwrap(),
            p_ladder: resolved.p_ladder.clone().unwrap(),
            bound_ladder: resolved.bound_ladder.clone().unwrap(),
            basis_bins: resolved.basis_bins.unwrap(),
            space_points: dp.space_points.unwrap(),
            quad_nodes: dp.quad_nodes.unwrap(),
            level_step: dp.level_step.unwrap(),
            config: resolved,
        })
    }

    /// Resolves, runs on a pool of the configured size and writes outputs.
    pub fn run(&self, cfg: &ExperimentConfig) -> Result<RunReport> {
        let ctx = self.resolve(cfg)?;
        let exp = self.get(&cfg.experiment)?;
        let pool = thread_pool(cfg.threads)?;
        let start = Instant::now();
        let outcome = match &pool {
            Some(p) => p.install(|| exp.run(&ctx))?,
            None => exp.run(&ctx)?,
        };
        let wall = start.elapsed().as_secs_f64();
        let threads = pool.as_ref().map_or_else(rayon::current_num_threads, |p| p.current_num_threads());
        let manifest = Manifest {
            experiment: exp.name().to_string(),
            anchor: exp.anchor().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: ctx.config.clone(),
            threads,
            wall_time_s: wall,
            passed: outcome.passed(),
            checks: outcome.checks.clone(),
            results: results_name(&ctx.config),
        };
        let path = write_outputs(&ctx.config.output, &ctx.config, &outcome, &manifest)?;
        Ok(RunReport {
            outcome,
            manifest,
            results_path: path,
        })
    }
}

fn results_name(cfg: &ExperimentConfig) -> String {
    match cfg.format {
        crate::config::Format::Csv => "results.csv".into(),
        crate::config::Format::Json => "results.json".into(),
    }
}

/// Config value first, then the environment; `None` keeps the global pool.
fn thread_pool(configured: Option<usize>) -> Result<Option<rayon::ThreadPool>> {
    let n = match configured {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&n| n > 0)
                    .ok_or_else(|| CliError::config(THREADS_ENV, format!("expected a positive integer, got `{v}`")))?,
            ),
            Err(_) => None,
        },
    };
    n.map(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(CliError::from))
        .transpose()
}

#[derive(Debug)]
pub struct RunReport {
    pub outcome: Outcome,
    pub manifest: Manifest,
    pub results_path: std::path::PathBuf,
}

/// `|a − b| ≤ tol` as a displayable detail string.
pub(crate) fn detail_within(a: f64, b: f64, tol: f64) -> String {
    format!("|{a:.6} - {b:.6}| = {:.3e} vs tolerance {tol:.3e}", (a - b).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_has_twelve_named_experiments() {
        let r = Registry::with_builtin();
        assert_eq!(r.names().len(), 12);
        for e in r.iter() {
            assert!(!e.anchor().is_empty() && !e.summary().is_empty(), "{}", e.name());
        }
    }

    #[test]
    fn resolve_fills_defaults_and_names_bad_model() {
        let r = Registry::with_builtin();
        let ctx = r.resolve(&ExperimentConfig::new("grid_dp")).unwrap();
        assert_eq!(ctx.model.key, "toy1d");
        assert_eq!(ctx.toy_box(), vec![(-4.5, 5.5)]);
        assert!((ctx.toy_oracle() - benchmark::oracle_value()).abs() < 1e-10);
        let mut cfg = ExperimentConfig::new("grid_dp");
        cfg.model = Some(ModelConfig::named("nope"));
        let err = r.resolve(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("model.key"), "{err}");
    }

    #[test]
    fn unknown_model_parameter_is_a_config_error() {
        let r = Registry::with_builtin();
        let mut cfg = ExperimentConfig::new("simulate");
        cfg.model = Some(ModelConfig {
            key: "toy1d".into(),
            preset: None,
            params: [("gamma".to_string(), 1.0)].into_iter().collect(),
        });
        let err = r.resolve(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("gamma"), "{err}");
    }
}
