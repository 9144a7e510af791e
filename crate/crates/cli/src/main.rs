use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qcavity_core::scenario::{config_reference, parse_config, run, RunOptions, Task};
use qcavity_core::Error;

const DEFAULT_OUT: &str = "qcavity-out";

#[derive(Parser)]
#[command(name = "qcavity", version, about = "Cavity-mediated two-ion phase gate simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the model Hamiltonian and jump operators
    Dump(RunArgs),
    /// Integrate one initial state and write a trajectory CSV
    Simulate(RunArgs),
    /// Extract the two-qubit gate and score it against diag(1, 1, -1, 1)
    Gate(RunArgs),
    /// Gate fidelity across a parameter axis
    Scan(RunArgs),
    /// Adiabatic loop of the geometric gate and its Berry phase
    Berry(RunArgs),
    /// Print every config key with its default
    ConfigReference,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `output`)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// RK4 step (overrides the config's `dt`)
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    quiet: bool,
}

fn execute(task: Task, args: &RunArgs) -> Result<(), Error> {
    let text = fs::read_to_string(&args.config).map_err(|source| Error::Io {
        path: args.config.clone(),
        source,
    })?;
    let mut cfg = parse_config(&text)?;
    if cfg.task != task {
        return Err(Error::Config {
            path: "task".into(),
            reason: format!("config is for task {}, command is {}", cfg.task.name(), task.name()),
        });
    }
    if let Some(dt) = args.dt {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("--dt must be positive, got {dt}")));
        }
        cfg.dt = Some(dt);
    }
    if args.workers == 0 {
        return Err(Error::InvalidArgument("--workers must be at least 1".into()));
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let outcome = run(
        &cfg,
        &RunOptions {
            out_dir: out_dir.clone(),
            workers: args.workers,
        },
    )?;
    if !args.quiet {
        println!("{}", outcome.summary);
        for f in &outcome.files {
            println!("wrote {}", out_dir.join(&f.name).display());
        }
        println!("wrote {}", out_dir.join("manifest.json").display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (task, args) = match &cli.command {
        Command::ConfigReference => {
            print!("{}", config_reference());
            return ExitCode::SUCCESS;
        }
        Command::Dump(a) => (Task::Dump, a),
        Command::Simulate(a) => (Task::Simulate, a),
        Command::Gate(a) => (Task::Gate, a),
        Command::Scan(a) => (Task::Scan, a),
        Command::Berry(a) => (Task::Berry, a),
    };
    match execute(task, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
