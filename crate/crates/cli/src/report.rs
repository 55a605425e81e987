use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::config::{ExperimentConfig, Format};
use crate::error::{CliError, Result};

/// Plot-ready rows with a fixed column order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.columns)?;
        for row in &self.rows {
            out.write_record(row.iter().map(cell))?;
        }
        out.flush().map_err(|e| CliError::io("writing csv", e))?;
        Ok(())
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// One named pass/fail assertion of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub table: Table,
    pub checks: Vec<Check>,
    /// Experiment-specific extras, echoed into `results.json`.
    pub summary: Value,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub anchor: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub threads: usize,
    pub wall_time_s: f64,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub results: String,
}

/// Writes `results.{csv,json}` and `manifest.json`; returns the results path.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, outcome: &Outcome, manifest: &Manifest) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    let results = match cfg.format {
        Format::Csv => {
            let p = dir.join("results.csv");
            let f = fs::File::create(&p).map_err(|e| CliError::io(format!("creating {}", p.display()), e))?;
            outcome.table.write_csv(std::io::BufWriter::new(f))?;
            p
        }
        Format::Json => {
            let p = dir.join("results.json");
            let doc = serde_json::json!({
                "experiment": cfg.experiment,
                "columns": outcome.table.columns,
                "rows": outcome.table.rows,
                "checks": outcome.checks,
                "summary": outcome.summary,
            });
            write_json(&p, &doc)?;
            p
        }
    };
    write_json(&dir.join("manifest.json"), manifest)?;
    Ok(results)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}
