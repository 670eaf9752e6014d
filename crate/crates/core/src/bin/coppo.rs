#[cfg(test)]
use std::ffi::OsString;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coppo::env::list_games;
use coppo::harness::stats::mean_ci95;
use coppo::harness::{emit_plot_data, run_experiment, ExperimentConfig};
use coppo::verifier::run_all;
use coppo::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_VIOLATION: u8 = 2;

#[derive(Parser)]
#[command(name = "coppo", version, about = "Coordinated PPO experiments and exact theory checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the exact theory checks on the enumerable fixtures.
    Verify {
        #[arg(long)]
        fixture: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write tidy per-panel CSVs for a results directory.
    EmitPlots { results_dir: PathBuf },
    /// List the built-in matrix games.
    ListGames,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(run(cli.command, &mut io::stdout().lock()))
}

/// Runs one command and maps the outcome to a process exit code.
fn run(command: Command, out: &mut impl Write) -> u8 {
    match dispatch(command, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

/// Parses arguments the way `main` does, for in-process use.
#[cfg(test)]
fn run_args<I: IntoIterator<Item = T>, T: Into<OsString> + Clone>(args: I, out: &mut impl Write) -> u8 {
    match Cli::try_parse_from(std::iter::once(OsString::from("coppo")).chain(args.into_iter().map(Into::into))) {
        Ok(cli) => run(cli.command, out),
        Err(_) => EXIT_CONFIG,
    }
}

fn dispatch(command: Command, out: &mut impl Write) -> Result<u8, Error> {
    match command {
        Command::Run {
            config,
            seeds,
            workers,
            out: out_dir,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(o) = out_dir {
                cfg.output_dir = o;
            }
            let res = run_experiment(&cfg)?;
            for game in &cfg.games {
                for v in &cfg.variants {
                    let (m, lo, hi) = mean_ci95(&res.final_rewards(game, &v.label));
                    writeln!(out, "{game} {}: final reward {m:.3} [{lo:.3}, {hi:.3}]", v.label)?;
                }
            }
            writeln!(out, "results in {}", res.dir.display())?;
            Ok(0)
        }
        Command::Verify { fixture, trials, seed } => {
            let reports = run_all(fixture.as_deref(), trials, seed)?;
            let mut ok = true;
            for r in &reports {
                ok &= r.passed();
                writeln!(out, 
                    "{:<8} {:<20} {:<18} trials {:>6} max residual {:.3e} violations {}",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.check,
                    r.fixture,
                    r.trials,
                    r.max_residual,
                    r.violations
                )?;
            }
            Ok(if ok { 0 } else { EXIT_VIOLATION })
        }
        Command::EmitPlots { results_dir } => {
            let bundle = emit_plot_data(&results_dir)?;
            for f in &bundle.files {
                writeln!(out, "{}", f.display())?;
            }
            for w in &bundle.warnings {
                eprintln!("warning: {w}");
            }
            Ok(0)
        }
        Command::ListGames => {
            for g in list_games() {
                writeln!(out, "{:<20} {} agents x {} actions", g.name(), g.n_agents(), g.n_actions())?;
            }
            Ok(0)
        }
    }
}
