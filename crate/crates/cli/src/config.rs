//! Experiment configuration: one JSON document, optional fields filled from
//! the experiment's defaults, then overridden by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl ModelConfig {
    pub fn named(key: &str) -> Self {
        Self {
            key: key.to_string(),
            preset: None,
            params: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t_start: f64,
    pub t_end: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quad_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_step: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Independent seeds `seed, seed + 1, …` for experiments that repeat.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty_ladder: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_ladder: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_ladder: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis_bins: Option<usize>,
    #[serde(default)]
    pub dp: DpConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub format: Format,
}

fn default_seed() -> u64 {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("pathctrl-out")
}

impl ExperimentConfig {
    pub fn new(experiment: &str) -> Self {
        Self {
            experiment: experiment.to_string(),
            model: None,
            grid: None,
            paths: None,
            seed: default_seed(),
            replicates: None,
            penalty_ladder: None,
            p_ladder: None,
            bound_ladder: None,
            basis_bins: None,
            dp: DpConfig::default(),
            threads: None,
            output: default_output(),
            format: Format::Csv,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }

    /// Shape checks that need no experiment defaults.
    pub fn validate(&self) -> Result<()> {
        if let Some(g) = &self.grid {
            if !(g.t_start.is_finite() && g.t_end.is_finite() && g.t_start < g.t_end) {
                return Err(CliError::config("grid", "need finite t_start < t_end"));
            }
            positive("grid.n_steps", g.n_steps)?;
        }
        for (field, v) in [
            ("paths", self.paths),
            ("replicates", self.replicates),
            ("basis_bins", self.basis_bins),
            ("threads", self.threads),
            ("dp.space_points", self.dp.space_points),
            ("dp.quad_nodes", self.dp.quad_nodes),
        ] {
            if let Some(v) = v {
                positive(field, v)?;
            }
        }
        if let Some(n) = self.dp.space_points {
            if n < 3 {
                return Err(CliError::config("dp.space_points", "need at least 3 points"));
            }
        }
        if let Some(s) = self.dp.level_step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(CliError::config("dp.level_step", "must be positive"));
            }
        }
        ascending("penalty_ladder", self.penalty_ladder.as_deref(), 0.0)?;
        ascending("p_ladder", self.p_ladder.as_deref(), f64::MIN_POSITIVE)?;
        ascending("bound_ladder", self.bound_ladder.as_deref(), f64::MIN_POSITIVE)?;
        if let Some(b) = &self.bound_ladder {
            if b.windows(2).any(|w| w[1] != 2.0 * w[0]) {
                return Err(CliError::config("bound_ladder", "each bound must double the previous one"));
            }
        }
        Ok(())
    }
}

fn positive(field: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(CliError::config(field, "must be positive"));
    }
    Ok(())
}

fn ascending(field: &str, ladder: Option<&[f64]>, min: f64) -> Result<()> {
    let Some(l) = ladder else { return Ok(()) };
    if l.is_empty() {
        return Err(CliError::config(field, "must not be empty"));
    }
    if l.iter().any(|v| !v.is_finite() || *v < min) {
        return Err(CliError::config(field, format!("entries must be finite and at least {min}")));
    }
    if l.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::config(field, "must be strictly ascending"));
    }
    Ok(())
}

/// Command-line overrides; `None` leaves the config value alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub experiment: Option<String>,
    pub model: Option<String>,
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
}

impl Overrides {
    pub fn apply(&self, base: Option<ExperimentConfig>) -> Result<ExperimentConfig> {
        let mut cfg = match (base, &self.experiment) {
            (Some(mut c), Some(e)) => {
                c.experiment = e.clone();
                c
            }
            (Some(c), None) => c,
            (None, Some(e)) => ExperimentConfig::new(e),
            (None, None) => return Err(CliError::config("experiment", "give --experiment or --config")),
        };
        if let Some(m) = &self.model {
            // A new key drops parameters meant for the old model.
            match &mut cfg.model {
                Some(mc) if mc.key == *m => {}
                slot => *slot = Some(ModelConfig::named(m)),
            }
        }
        if let Some(p) = &self.preset {
            cfg.model.get_or_insert_with(|| ModelConfig::named("transaction")).preset = Some(p.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = self.paths {
            cfg.paths = Some(p);
        }
        if let Some(k) = self.steps {
            let g = cfg.grid.get_or_insert(GridConfig {
                t_start: 0.0,
                t_end: 1.0,
                n_steps: k,
            });
            g.n_steps = k;
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if let Some(f) = self.format {
            cfg.format = f;
        }
        Ok(cfg)
    }
}
