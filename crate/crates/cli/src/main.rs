use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use epialloc_cli::{configure_threads, CliError, ExperimentConfig, Mode, Pipeline, PolicyRef};

#[derive(Parser)]
#[command(name = "epialloc", version, about = "Epidemic inference, scenario reduction and vaccine allocation")]
struct Cli {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `outdir`).
    #[arg(long, global = true)]
    outdir: Option<String>,
    /// Master seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for scenario evaluation.
    #[arg(long, global = true, env = "EPIALLOC_THREADS")]
    threads: Option<usize>,
    /// Dotted-key override such as `ga.generations=10`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Nominal,
    Stochastic,
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved configuration as TOML.
    Config,
    /// Simulate the ground truth and the zero-policy baseline.
    Simulate,
    /// Draw noisy observations from the ground truth.
    Synth,
    /// Fit GP hyperparameters per observed state.
    FitGp,
    /// Least-squares parameter estimate.
    FitNlls,
    /// Run the gradient-matching sampler.
    Sample,
    /// Reduce the chain to weighted scenarios.
    Reduce,
    /// Cross the reduced scenarios with the onset grid.
    Augment,
    /// Search for a dose allocation.
    Optimize {
        #[arg(long, value_enum)]
        mode: ModeArg,
    },
    /// Score a policy on a scenario set.
    Evaluate {
        /// `zero`, `nominal`, `stochastic` or a policy JSON file.
        #[arg(long)]
        policy: String,
        /// Scenario set JSON; defaults to the augmented set.
        #[arg(long)]
        scenarios: Option<PathBuf>,
    },
    /// Compare the zero, nominal and stochastic policies.
    Report,
    /// Run every stage in order.
    Run,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut overrides = cli.set;
    if let Some(o) = &cli.outdir {
        overrides.push(format!("outdir={}", toml::Value::String(o.clone())));
    }
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(n) = cli.threads {
        overrides.push(format!("threads={n}"));
    }
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    configure_threads(cfg.threads);
    let pipeline = Pipeline::new(cfg);
    match cli.command {
        Command::Config => print!("{}", pipeline.config.to_toml()),
        Command::Simulate => pipeline.simulate()?,
        Command::Synth => pipeline.synth()?,
        Command::FitGp => pipeline.fit_gp()?,
        Command::FitNlls => pipeline.fit_nlls()?,
        Command::Sample => pipeline.sample()?,
        Command::Reduce => pipeline.reduce()?,
        Command::Augment => pipeline.augment()?,
        Command::Optimize { mode } => pipeline.optimize(match mode {
            ModeArg::Nominal => Mode::Nominal,
            ModeArg::Stochastic => Mode::Stochastic,
        })?,
        Command::Evaluate { policy, scenarios } => {
            let r = pipeline.evaluate(&PolicyRef::parse(&policy), scenarios.as_deref())?;
            println!("{} expected peak {:.6e} (violation {:.3e})", r.policy, r.objective, r.violation);
        }
        Command::Report => {
            for row in pipeline.report()?.rows {
                println!(
                    "{:<10} expected peak {:.6e}  reduction {:+.4}  vss {:+.4}",
                    row.policy, row.expected_peak, row.reduction_vs_zero, row.vss_vs_nominal
                );
            }
        }
        Command::Run => {
            pipeline.run()?;
            println!("artifacts written to {}", pipeline.store.root().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
