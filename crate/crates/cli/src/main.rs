//! `etlqg`: analytic trade-off sweeps and Monte Carlo validation from a
//! config file.

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use etlqg::simulation::{run_experiment_with, SimConfig};
use etlqg::{analyze_with, validate_model, Gains, SchedulerParams, SystemModel, ValidationReport};

use config::{ConfigError, ExperimentConfig, Format};
use output::GridPoint;

/// Output directory used when neither the flag, the config, nor the
/// environment names one.
const FALLBACK_OUT_DIR: &str = "etlqg-out";
const OUT_DIR_ENV: &str = "ETLQG_OUT_DIR";

#[derive(Parser)]
#[command(name = "etlqg", version, about = "Stochastic event-triggered LQG experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic sweep plus Monte Carlo validation.
    Run(RunArgs),
    /// Analytic sweep only.
    AnalyzeOnly(RunArgs),
    /// Check the config and the model, print the validation report.
    Validate {
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config, or JSON if the extension is `.json` (a manifest works too).
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Overrides the config; the default comes from ETLQG_OUT_DIR.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

enum Failure {
    Config(ConfigError),
    Validation(ValidationReport),
    Numerical(etlqg::Error),
    Io(anyhow::Error),
}

impl Failure {
    fn report(&self) -> ExitCode {
        match self {
            Failure::Config(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
            Failure::Validation(r) => {
                eprintln!("error: model failed validation");
                for c in r.failures() {
                    eprintln!("  {}: {}", c.name, c.detail);
                }
                eprintln!("{}", serde_json::to_string_pretty(r).unwrap_or_default());
                ExitCode::from(2)
            }
            Failure::Numerical(e) => {
                eprintln!("error: {e}");
                ExitCode::from(3)
            }
            Failure::Io(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(4)
            }
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<etlqg::Error> for Failure {
    fn from(e: etlqg::Error) -> Self {
        Failure::Numerical(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Io(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => sweep(&args, true),
        Command::AnalyzeOnly(args) => sweep(&args, false),
        Command::Validate { config } => validate(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}

fn validated_model(cfg: &ExperimentConfig) -> Result<SystemModel, Failure> {
    let model = cfg.system_model()?;
    let report = validate_model(&model)?;
    if !report.is_accepted() {
        return Err(Failure::Validation(report));
    }
    Ok(model)
}

fn validate(path: &Path) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(path)?;
    let model = cfg.system_model()?;
    let report = validate_model(&model)?;
    println!("{}", serde_json::to_string_pretty(&report).context("serializing report")?);
    if report.is_accepted() {
        Ok(())
    } else {
        Err(Failure::Validation(report))
    }
}

fn out_dir(args: &RunArgs, cfg: &ExperimentConfig) -> PathBuf {
    args.out_dir
        .clone()
        .or_else(|| cfg.output.directory.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT_DIR))
}

fn sweep(args: &RunArgs, simulate: bool) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.simulation.seed = seed;
    }
    if let Some(runs) = args.runs {
        cfg.simulation.runs = runs;
    }
    if let Some(horizon) = args.horizon {
        cfg.simulation.horizon = horizon;
    }
    cfg.check()?;
    let dir = out_dir(args, &cfg);
    let command = if simulate { "run" } else { "analyze-only" };
    let resolved = cfg.resolved(dir.clone(), command)?;
    let model = validated_model(&cfg)?;
    let gains = Gains::new(&model)?;
    let sim = &cfg.simulation;

    let mut points = Vec::new();
    for lambda in cfg.lambdas()? {
        let params = SchedulerParams::new(lambda, cfg.scheduler.timeout)?;
        let analysis = analyze_with(&model, &gains, &params)?;
        let experiment = if simulate && sim.runs > 0 {
            let sc = SimConfig {
                model: model.clone(),
                params,
                horizon: sim.horizon,
                runs: sim.runs,
                seed: sim.seed,
                burn_in: sim.burn_in,
                record_trace: false,
            };
            sc.check()?;
            Some(run_experiment_with(&sc, &gains)?)
        } else {
            None
        };
        println!("{}", summary_line(&analysis, experiment.as_ref()));
        points.push(GridPoint { analysis, experiment });
    }

    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    if cfg.output.formats.contains(&Format::Csv) {
        output::write_atomic(&dir, "tradeoff.csv", output::tradeoff_csv(&points).as_bytes())?;
    }
    if cfg.output.formats.contains(&Format::Json) {
        for p in &points {
            output::write_json(&dir, &output::analysis_file_name(p.analysis.lambda), p)?;
        }
    }
    if cfg.output.emit_plot_data {
        output::write_atomic(&dir, "tradeoff.gp", output::GNUPLOT_SCRIPT.as_bytes())?;
    }
    output::write_json(&dir, "manifest.json", &resolved)?;
    println!("wrote artifacts to {}", dir.display());
    Ok(())
}

fn summary_line(a: &etlqg::AnalyticResult, e: Option<&etlqg::ExperimentResult>) -> String {
    let mut line = format!("lambda={:<11.5e} rate={:.6} cost={:.6}", a.lambda, a.rate(), a.total_cost());
    if let Some(e) = e {
        line += &format!("  empirical rate={:.6} cost={:.6}", e.empirical_rate.mean, e.empirical_cost.mean);
    }
    line
}
