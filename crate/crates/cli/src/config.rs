//! Experiment configuration: TOML or JSON, chosen by file extension.

use std::fmt;
use std::path::{Path, PathBuf};

use etlqg::simulation::DEFAULT_BURN_IN;
use etlqg::SystemModel;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// A config file that could not be read, parsed, or made sense of.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub w: Matrix,
    pub v: Matrix,
    pub q: Matrix,
    /// Defaults to `q`.
    #[serde(default)]
    pub qf: Option<Matrix>,
    pub r: Matrix,
    /// Defaults to zero.
    #[serde(default)]
    pub x0_mean: Option<Vec<f64>>,
    /// Defaults to `w`.
    #[serde(default)]
    pub x0_cov: Option<Matrix>,
}

/// Explicit λ values, or `count` values log-spaced from `min` to `max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaGrid {
    List(Vec<f64>),
    LogSpaced { min: f64, max: f64, count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerBlock {
    pub timeout: usize,
    pub lambda_grid: LambdaGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    #[serde(default)]
    pub runs: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

fn default_horizon() -> usize {
    2_000
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

impl Default for SimulationBlock {
    fn default() -> Self {
        Self { runs: 0, horizon: default_horizon(), seed: 0, burn_in: default_burn_in() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default)]
    pub directory: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    #[serde(default)]
    pub emit_plot_data: bool,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { directory: None, formats: default_formats(), emit_plot_data: false }
    }
}

/// Tool name and version, present in manifests and ignored on input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
    /// Subcommand that produced the manifest.
    pub command: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<ToolInfo>,
    pub model: ModelBlock,
    pub scheduler: SchedulerBlock,
    #[serde(default)]
    pub simulation: SimulationBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("<file>", format!("cannot read {}: {e}", path.display())))?;
        let cfg = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&text)?,
            _ => Self::from_toml(&text)?,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::new(toml_field(&e), e.message().to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::new(json_field(&e.to_string()), e.to_string()))
    }

    /// Semantic checks the schema cannot express.
    pub fn check(&self) -> Result<(), ConfigError> {
        if self.scheduler.timeout == 0 {
            return Err(ConfigError::new("scheduler.timeout", "must be at least 1"));
        }
        self.lambdas()?;
        let sim = &self.simulation;
        if sim.runs > 0 {
            if sim.horizon == 0 {
                return Err(ConfigError::new("simulation.horizon", "must be at least 1"));
            }
            if sim.burn_in >= sim.horizon {
                return Err(ConfigError::new(
                    "simulation.burn_in",
                    format!("burn-in {} leaves no steps of a {}-step run", sim.burn_in, sim.horizon),
                ));
            }
        }
        if self.output.formats.is_empty() {
            return Err(ConfigError::new("output.formats", "must name at least one of csv, json"));
        }
        Ok(())
    }

    /// The expanded λ grid: nonempty, positive, strictly increasing.
    pub fn lambdas(&self) -> Result<Vec<f64>, ConfigError> {
        const FIELD: &str = "scheduler.lambda_grid";
        let grid = match &self.scheduler.lambda_grid {
            LambdaGrid::List(xs) => xs.clone(),
            LambdaGrid::LogSpaced { min, max, count } => log_spaced(*min, *max, *count)?,
        };
        if grid.is_empty() {
            return Err(ConfigError::new(FIELD, "must contain at least one value"));
        }
        if let Some(x) = grid.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
            return Err(ConfigError::new(FIELD, format!("values must be finite and > 0, got {x}")));
        }
        if let Some(w) = grid.windows(2).find(|w| w[1] <= w[0]) {
            return Err(ConfigError::new(FIELD, format!("must be strictly increasing, got {} then {}", w[0], w[1])));
        }
        Ok(grid)
    }

    pub fn system_model(&self) -> Result<SystemModel, ConfigError> {
        let m = &self.model;
        let a = matrix("model.a", &m.a)?;
        let n = a.nrows();
        let w = matrix("model.w", &m.w)?;
        let q = matrix("model.q", &m.q)?;
        let qf = match &m.qf {
            Some(x) => matrix("model.qf", x)?,
            None => q.clone(),
        };
        let x0_mean = match &m.x0_mean {
            Some(x) => vector("model.x0_mean", x)?,
            None => DVector::zeros(n),
        };
        let x0_cov = match &m.x0_cov {
            Some(x) => matrix("model.x0_cov", x)?,
            None => w.clone(),
        };
        SystemModel::new(
            a,
            matrix("model.b", &m.b)?,
            matrix("model.c", &m.c)?,
            w,
            matrix("model.v", &m.v)?,
            q,
            qf,
            matrix("model.r", &m.r)?,
            x0_mean,
            x0_cov,
        )
        .map_err(|e| ConfigError::new("model", e.to_string()))
    }

    /// The config as it was executed: defaults filled in and the grid expanded.
    pub fn resolved(&self, directory: PathBuf, command: &str) -> Result<Self, ConfigError> {
        let mut out = self.clone();
        out.tool = Some(ToolInfo {
            name: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
        });
        let model = self.system_model()?;
        out.model.qf = Some(rows(&model.qf));
        out.model.x0_mean = Some(model.x0_mean.iter().copied().collect());
        out.model.x0_cov = Some(rows(&model.x0_cov));
        out.scheduler.lambda_grid = LambdaGrid::List(self.lambdas()?);
        out.output.directory = Some(directory);
        Ok(out)
    }
}

fn log_spaced(min: f64, max: f64, count: usize) -> Result<Vec<f64>, ConfigError> {
    const FIELD: &str = "scheduler.lambda_grid";
    if count == 0 {
        return Err(ConfigError::new(FIELD, "count must be at least 1"));
    }
    if !(min > 0.0 && max.is_finite() && min <= max) {
        return Err(ConfigError::new(FIELD, format!("need 0 < min <= max, got min={min}, max={max}")));
    }
    if count == 1 {
        return Ok(vec![min]);
    }
    let (lo, hi) = (min.log10(), max.log10());
    let step = (hi - lo) / (count - 1) as f64;
    let mut grid: Vec<f64> = (0..count).map(|i| 10f64.powf(lo + step * i as f64)).collect();
    grid[0] = min;
    grid[count - 1] = max;
    Ok(grid)
}

fn matrix(field: &str, rows: &Matrix) -> Result<DMatrix<f64>, ConfigError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(ConfigError::new(field, "matrix must have at least one row and one column"));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(ConfigError::new(field, format!("row {i} has {} entries, expected {ncols}", row.len())));
        }
        if let Some(j) = row.iter().position(|x| !x.is_finite()) {
            return Err(ConfigError::new(field, format!("entry [{i}][{j}] is not finite")));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn vector(field: &str, xs: &[f64]) -> Result<DVector<f64>, ConfigError> {
    if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
        return Err(ConfigError::new(field, format!("entry [{i}] is not finite")));
    }
    Ok(DVector::from_column_slice(xs))
}

fn rows(m: &DMatrix<f64>) -> Matrix {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Dotted key path of a TOML error, recovered from its span.
fn toml_field(e: &toml::de::Error) -> String {
    let msg = e.message();
    if let Some(name) = msg.strip_prefix("missing field `").and_then(|r| r.split('`').next()) {
        return name.to_string();
    }
    if let Some(name) = msg.strip_prefix("unknown field `").and_then(|r| r.split('`').next()) {
        return name.to_string();
    }
    "<document>".to_string()
}

fn json_field(msg: &str) -> String {
    for prefix in ["missing field `", "unknown field `"] {
        if let Some(name) = msg.find(prefix).and_then(|i| msg[i + prefix.len()..].split('`').next()) {
            return name.to_string();
        }
    }
    "<document>".to_string()
}
