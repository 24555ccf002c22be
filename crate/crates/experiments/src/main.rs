use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowlab_experiments::{run, ExperimentConfig, ExperimentError, Scenario};

/// Reproducible property checks for the dual-branch flow sampler.
///
/// Exit status: 0 when every verdict passes, 1 when a verdict fails,
/// 2 on an invalid configuration or a runtime error.
#[derive(Parser)]
#[command(name = "flowlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Relaxed estimators against band-limited truth with high-frequency noise.
    ErrorReduction(RunArgs),
    /// Trajectory divergence against the stability bound on affine fields.
    Stability(RunArgs),
    /// W2 to the clean flow: relaxed prior against corrupted standard flow.
    Wasserstein(RunArgs),
    /// Two priors resolving an ambiguous observation.
    Ambiguous(RunArgs),
    /// Visibility-gated sampling on a voxel scene.
    Visibility(RunArgs),
    /// Sweep over relaxation strength, gate cutoff and prior count.
    Ablation(RunArgs),
    /// Print a scenario's default configuration as JSON.
    Defaults { scenario: String },
}

#[derive(Args)]
struct RunArgs {
    /// JSON config document; omitted fields keep the scenario defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of seeds (overrides `seed_count`).
    #[arg(long)]
    seed_count: Option<usize>,
    /// `key=value` with a dotted key, e.g. `lattice.extent=32` or
    /// `sigmas=[0.5,1]`. Values parse as JSON, otherwise as strings.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn load(scenario: Scenario, args: &RunArgs) -> Result<ExperimentConfig, ExperimentError> {
    let mut overrides = args.overrides.clone();
    if let Some(n) = args.seed_count {
        overrides.push(format!("seed_count={n}"));
    }
    if let Some(out) = &args.out {
        overrides.push(format!("output={}", serde_json::Value::String(out.display().to_string())));
    }
    Ok(ExperimentConfig::load_path(scenario, args.config.as_deref(), &overrides)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (scenario, args) = match cli.command {
        Command::ErrorReduction(a) => (Scenario::ErrorReduction, a),
        Command::Stability(a) => (Scenario::Stability, a),
        Command::Wasserstein(a) => (Scenario::Wasserstein, a),
        Command::Ambiguous(a) => (Scenario::Ambiguous, a),
        Command::Visibility(a) => (Scenario::Visibility, a),
        Command::Ablation(a) => (Scenario::Ablation, a),
        Command::Defaults { scenario } => {
            let parsed: Result<Scenario, _> = serde_json::from_value(serde_json::Value::String(scenario.replace('-', "_")));
            return match parsed {
                Ok(s) => {
                    println!("{}", serde_json::to_string_pretty(&ExperimentConfig::defaults(s)).expect("serializes"));
                    ExitCode::SUCCESS
                }
                Err(_) => {
                    eprintln!("unknown scenario `{scenario}`");
                    ExitCode::from(2)
                }
            };
        }
    };
    let result = load(scenario, &args).and_then(|config| run(&config).map(|r| (config, r)));
    match result {
        Ok((config, report)) => {
            for v in &report.verdicts {
                let status = if v.passed { "PASS" } else { "FAIL" };
                println!("{status} {} ({}/{} seeds, need {})", v.name, v.satisfied, v.total, v.required);
            }
            println!("{} -> {}", report.experiment_id, config.output.join("report.json").display());
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
