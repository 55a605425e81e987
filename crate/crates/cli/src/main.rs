use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pathctrl_cli::{CliError, ExperimentConfig, Format, Overrides, Registry};

#[derive(Parser)]
#[command(name = "pathctrl", version, about = "Run path-dependent control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write results plus a manifest.
    Run(RunArgs),
    /// List registered experiments.
    List,
    /// Check a config without running it.
    Validate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<String>,
    /// Model key from the zoo.
    #[arg(long)]
    model: Option<String>,
    /// Named parameter preset of the model.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    /// Number of time steps on [0, 1] unless the config sets the grid.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig, CliError> {
        let base = self.config.as_deref().map(ExperimentConfig::load).transpose()?;
        Overrides {
            experiment: self.experiment.clone(),
            model: self.model.clone(),
            preset: self.preset.clone(),
            seed: self.seed,
            paths: self.paths,
            steps: self.steps,
            threads: self.threads,
            output: self.output.clone(),
            format: self.format,
        }
        .apply(base)
    }
}

fn run(args: &RunArgs, registry: &Registry) -> Result<bool, CliError> {
    let cfg = args.config()?;
    log::info!("running `{}` with seed {}", cfg.experiment, cfg.seed);
    let report = registry.run(&cfg)?;
    for c in &report.outcome.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!(
        "{} in {:.2} s on {} threads; results in {}",
        report.manifest.experiment,
        report.manifest.wall_time_s,
        report.manifest.threads,
        report.results_path.display()
    );
    Ok(report.outcome.passed())
}

fn validate(args: &RunArgs, registry: &Registry) -> Result<(), CliError> {
    let ctx = registry.resolve(&args.config()?)?;
    println!("{}", serde_json::to_string_pretty(&ctx.config)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let registry = Registry::with_builtin();
    let result = match &cli.command {
        Command::List => {
            for e in registry.iter() {
                println!("{:<18} {}\n{:<18} checks: {}", e.name(), e.summary(), "", e.anchor());
            }
            Ok(true)
        }
        Command::Validate(args) => validate(args, &registry).map(|_| true),
        Command::Run(args) => run(args, &registry),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
