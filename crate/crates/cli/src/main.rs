//! `sgalab`: predict, simulate, compare and tune fixed-step stochastic gradient samplers.
//!
//! Exit codes: 0 ok, 1 usage or configuration error, 2 invalid scaling regime,
//! 3 no stationary law, 4 artifact mismatch, 5 divergence.

mod commands;
mod config;
mod experiment;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sgalab::Error;

use config::RunConfig;
use setup::{Problem, Setup};

#[derive(Parser)]
#[command(name = "sgalab", version, about = "Large-sample predictions and simulations for SGD-type samplers")]
struct Cli {
    /// Worker threads for replicate runs (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML, or JSON by extension).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `execution.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `execution.replicates`.
    #[arg(long)]
    replicates: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the limiting-process predictions to predictions.json.
    Predict(Common),
    /// Run the configured chains, writing trace_*.csv and manifests.
    Simulate(Common),
    /// Compare predictions.json with the runs in the output directory.
    Compare(Common),
    /// Recommend a tuning for the [tune] target.
    Tune(Common),
    /// Run every method of a built-in experiment.
    Experiment {
        #[arg(value_enum)]
        name: experiment::Experiment,
        /// Multiplies the sample size and the epoch budget.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Base seed; method k uses seed + k.
        #[arg(long)]
        seed: Option<u64>,
        /// Replicates for iterate-average methods.
        #[arg(long)]
        replicates: Option<u64>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Regime(_) => 2,
        Error::NotHurwitz(_) | Error::TransientDirection(_) => 3,
        Error::Mismatch(_) => 4,
        Error::Diverged { .. } => 5,
        _ => 1,
    }
}

fn load(c: &Common) -> sgalab::Result<RunConfig> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.execution.seed = s;
    }
    if let Some(r) = c.replicates {
        cfg.execution.replicates = r;
    }
    Ok(cfg)
}

fn execute(command: Command) -> sgalab::Result<()> {
    match command {
        Command::Predict(c) => {
            let cfg = load(&c)?;
            let out = commands::out_dir(c.out, &cfg);
            let problem = Problem::new(&cfg)?;
            let setup = Setup::new(&problem, &cfg)?;
            let a = commands::predict(&setup, &out, true)?;
            let r = &a.body.report;
            println!("config {}  n {}  w {}  a {}", a.config_hash, r.n, r.law.frak_w, r.law.frak_a);
            if let Some(m) = &r.mixing {
                println!("predicted IACT {:.4} epochs ({:.4} iterations)", m.epochs_iact, m.iterations);
            }
            println!("wrote {}", out.join(commands::PREDICTIONS).display());
        }
        Command::Simulate(c) => {
            let cfg = load(&c)?;
            let out = commands::out_dir(c.out, &cfg);
            let problem = Problem::new(&cfg)?;
            let setup = Setup::new(&problem, &cfg)?;
            let sim = commands::simulate(&setup, &out)?;
            println!(
                "config {}  {} replicates x {} steps  wrote {}",
                sim.index.config_hash,
                sim.records.len(),
                sim.index.body.steps,
                out.join(commands::MANIFEST).display()
            );
            if let Some(&(r, step)) = sim.diverged.first() {
                eprintln!("{} replicate(s) diverged; partial traces kept", sim.diverged.len());
                let partial = sim.records.into_iter().find(|x| x.manifest.replicate == r).expect("diverged record");
                return Err(Error::Diverged { step, partial: Box::new(partial) });
            }
        }
        Command::Compare(c) => {
            let cfg = load(&c)?;
            let out = commands::out_dir(c.out, &cfg);
            let problem = Problem::new(&cfg)?;
            let setup = Setup::new(&problem, &cfg)?;
            let a = commands::compare(&setup, &out)?;
            print!("{}", commands::table(&a));
        }
        Command::Tune(c) => {
            let cfg = load(&c)?;
            let out = commands::out_dir(c.out, &cfg);
            let problem = Problem::new(&cfg)?;
            let a = commands::tune(&problem, &cfg, &out)?;
            let r = &a.body.recommendation;
            println!(
                "closure error {:.3e}  predicted IACT {:.4} epochs  wrote {}",
                r.closure_error,
                r.mixing.epochs_iact,
                out.join(commands::RECOMMENDATION).display()
            );
        }
        Command::Experiment { name, scale, out, seed, replicates } => {
            let s = experiment::run(name, scale, &out, experiment::Overrides { seed, replicates })?;
            print!("{}", experiment::summary_table(&s));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
