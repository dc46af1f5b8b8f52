//! Command-line driver.
//!
//! Exit status is 0 when every checker verdict passes, 1 when some verdict
//! fails and 2 when the input could not be processed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nearpm::checker::check_trace;
use nearpm::config::ExperimentConfig;
use nearpm::cost::CostModel;
use nearpm::harness::{copy_sweep, emit_report, run_experiment, run_scenario};
use nearpm::oracle::tally;
use nearpm::scenario::Scenario;
use nearpm::trace::Trace;
use nearpm::Result;

#[derive(Parser)]
#[command(name = "nearpm", version, about = "NDP persistent memory crash-consistency simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment matrix described by a TOML configuration.
    Run {
        config: PathBuf,
        /// Write the CSV table here instead of the configured path.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Write the text summary here instead of the configured path.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Check persist-ordering invariants on a trace file.
    Check { trace: PathBuf },
    /// Enumerate every crash of a scenario and classify recovered images.
    Oracle { scenario: PathBuf },
    /// Run a scenario without crashing and write its trace.
    Trace {
        scenario: PathBuf,
        /// Output file; standard output when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Tabulate NDP over CPU copy speedup across copy sizes.
    SweepCopy {
        #[arg(long, default_value_t = 64)]
        min: u64,
        #[arg(long, default_value_t = 16384)]
        max: u64,
        /// Take cost parameters from an experiment configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn verdict(pass: bool) -> ExitCode {
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn execute(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Run { config, table, summary } => {
            let mut cfg = ExperimentConfig::<f64>::load(&config)?;
            cfg.output.table = table.or(cfg.output.table);
            cfg.output.summary = summary.or(cfg.output.summary);
            let report = run_experiment(&cfg)?;
            print!("{}", report.to_summary());
            for p in emit_report(&report, &cfg.output)? {
                eprintln!("wrote {}", p.display());
            }
            Ok(verdict(report.passed()))
        }
        Command::Check { trace } => {
            let text = std::fs::read_to_string(&trace).map_err(|e| nearpm::Error::Io(format!("{}: {e}", trace.display())))?;
            let report = check_trace(&Trace::parse(&text)?)?;
            println!("{report}");
            Ok(verdict(report.passed()))
        }
        Command::Oracle { scenario } => {
            let outcome = run_scenario(&scenario)?;
            println!("{}", outcome.report.summary());
            for (k, n) in tally(&outcome.report) {
                println!("  {k}: {n}");
            }
            println!("{}", outcome.report.checker);
            Ok(verdict(outcome.report.checker.passed() && outcome.report.recoverable()))
        }
        Command::Trace { scenario, output } => {
            let run = Scenario::load(&scenario)?.run()?;
            let (trace, _) = run.engine.into_parts();
            let text = trace.to_text();
            match output {
                Some(p) => std::fs::write(&p, text).map_err(|e| nearpm::Error::Io(format!("{}: {e}", p.display())))?,
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::SweepCopy { min, max, config } => {
            let cost = match config {
                Some(p) => ExperimentConfig::<f64>::load(&p)?.cost,
                None => CostModel::default(),
            };
            if min == 0 || max < min {
                return Err(nearpm::Error::Config {
                    path: "--min/--max".into(),
                    msg: format!("need 0 < min <= max, got {min} and {max}"),
                });
            }
            println!("# calibration: {}", cost.calibration_note());
            println!("{:>8} {:>12} {:>12} {:>8}", "bytes", "cpu_ns", "ndp_ns", "speedup");
            for p in copy_sweep(&cost, min, max) {
                println!("{:>8} {:>12.1} {:>12.1} {:>8.3}", p.bytes, p.cpu_ns, p.ndp_ns, p.speedup);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
