use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use gridbid::network::check_feasible;
use gridbid::runner::{load_config, run_experiment, validate_experiment, ExperimentConfig, Mode};

#[derive(Parser)]
#[command(name = "gridbid", version, about = "Bid adjustment market dynamics over DC optimal power flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the cost-minimizing dispatch and report the efficient bids.
    Opf(RunArgs),
    /// Run the bid adjustment algorithm.
    Baa(RunArgs),
    /// Run the dynamics under a disturbance.
    Perturb(RunArgs),
    /// Run the dynamics with one deviating generator.
    Deviate(RunArgs),
    /// Run the dynamics with a colluding coalition.
    Collude(RunArgs),
    /// Check a config and its network without running anything.
    Validate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON). Repeat to run several experiments in parallel.
    #[arg(long = "config", required = true)]
    configs: Vec<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Output directory; with several configs each gets a subdirectory named after its file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn expected_mode(command: &Command) -> Option<Mode> {
    match command {
        Command::Opf(_) => Some(Mode::OpfOnly),
        Command::Baa(_) => Some(Mode::Baa),
        Command::Perturb(_) => Some(Mode::Perturbed),
        Command::Deviate(_) => Some(Mode::Deviation),
        Command::Collude(_) => Some(Mode::Collusion),
        Command::Validate(_) => None,
    }
}

fn prepare(path: &Path, args: &RunArgs, expected: Option<Mode>, many: bool) -> anyhow::Result<ExperimentConfig> {
    let mut config = load_config(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(mode) = expected {
        if config.mode != mode {
            bail!(
                "{}: config mode is {:?} but the subcommand runs {:?}",
                path.display(),
                config.mode,
                mode
            );
        }
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.max_iters {
        config.stop.max_iters = n;
    }
    if let Some(out) = &args.out {
        config.output.dir = Some(if many {
            out.join(path.file_stem().unwrap_or_default())
        } else {
            out.clone()
        });
    }
    Ok(config)
}

/// Returns whether the experiment passed all its checks.
fn run_one(path: &Path, args: &RunArgs, expected: Option<Mode>, many: bool) -> anyhow::Result<bool> {
    let config = prepare(path, args, expected, many)?;
    if expected.is_none() {
        let (case, report) = validate_experiment(&config)?;
        println!("{}: {} buses, {} lines, {} generators, total load {}", path.display(), case.n_buses(), case.n_lines(), case.n_generators(), report.total_load);
        for e in &report.structural_errors {
            println!("error: {e}");
        }
        for w in report.warnings() {
            println!("warning: {w}");
        }
        if !report.is_sound() {
            return Ok(false);
        }
        if let Err(e) = check_feasible(&case) {
            println!("error: {e}");
            return Ok(false);
        }
        println!("ok");
        return Ok(true);
    }

    let outcome = run_experiment(&config).with_context(|| format!("running {}", path.display()))?;
    println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
    for file in &outcome.written {
        log::info!("wrote {}", file.display());
    }
    let v = &outcome.summary.violations;
    if let Some(k) = v.first_offending {
        eprintln!("{}: {} invariant violations, first at iteration {k}", path.display(), v.total());
    }
    Ok(outcome.summary.passed())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let expected = expected_mode(&cli.command);
    let args = match &cli.command {
        Command::Opf(a)
        | Command::Baa(a)
        | Command::Perturb(a)
        | Command::Deviate(a)
        | Command::Collude(a)
        | Command::Validate(a) => a,
    };
    let many = args.configs.len() > 1;

    let results: Vec<anyhow::Result<bool>> = std::thread::scope(|s| {
        let handles: Vec<_> = args
            .configs
            .iter()
            .map(|path| s.spawn(move || run_one(path, args, expected, many)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("experiment thread panicked")).collect()
    });

    let mut code = ExitCode::SUCCESS;
    for result in results {
        match result {
            Ok(true) => {}
            Ok(false) => code = ExitCode::from(1),
            Err(e) => {
                eprintln!("error: {e:#}");
                return ExitCode::from(2);
            }
        }
    }
    code
}
