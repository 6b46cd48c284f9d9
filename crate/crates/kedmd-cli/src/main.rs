use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kedmd_cli::commands::{
    abort_to_error, cmd_analyze, cmd_fit, cmd_mpc, cmd_reproduce, CliError, Figure,
};
use kedmd_cli::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "kedmd",
    about = "Kernel-EDMD surrogate fitting and surrogate-based MPC experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the cluster grid and dataset, fit the surrogate, write model
    /// and diagnostics.
    Fit {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the receding-horizon closed loop and write the trace.
    Mpc {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fitted model file; omit with `exact_plant = true`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Growth bounds, horizon-degradation and perturbed-bound tables,
    /// modulus estimate and convergence study.
    Analyze {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Reproduce the closed-loop experiment figures (fig1 or fig2).
    Reproduce {
        figure: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit { config, out, seed } => {
            let cfg = load_config(config.as_ref(), seed)?;
            let outcome = cmd_fit(&cfg, &out)?;
            println!(
                "fitted surrogate from {} samples -> {}",
                outcome.total_samples,
                outcome.model_path.display()
            );
            println!("{}", outcome.constants);
            Ok(())
        }
        Command::Mpc {
            config,
            model,
            out,
            seed,
        } => {
            let cfg = load_config(config.as_ref(), seed)?;
            let outcome = cmd_mpc(&cfg, model.as_deref(), &out)?;
            print!("{}", outcome.summary.to_text());
            println!("trace -> {}", outcome.trace_path.display());
            abort_to_error(&outcome.summary)
        }
        Command::Analyze {
            config,
            model,
            out,
            seed,
        } => {
            let cfg = load_config(config.as_ref(), seed)?;
            cmd_analyze(&cfg, &model, &out)?;
            println!("analysis report -> {}", out.join("report.txt").display());
            Ok(())
        }
        Command::Reproduce {
            figure,
            config,
            out,
            seed,
        } => {
            let cfg = load_config(config.as_ref(), seed)?;
            let figure = Figure::parse(&figure)?;
            let outcomes = cmd_reproduce(&cfg, figure, &out)?;
            for outcome in &outcomes {
                println!(
                    "[{}] final |x| = {:.3e}, plateau = {:.3e}, decay slope = {:.3e}",
                    outcome.spec.label,
                    outcome.summary.final_norm,
                    outcome.summary.plateau,
                    outcome.summary.decay_slope
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
