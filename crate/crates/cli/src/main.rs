use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use greenhouse_core::config::load_scenario;
use greenhouse_core::sim::report::write_report;
use greenhouse_core::sim::tables::{validate_tables, TableError};
use greenhouse_core::sim::{run, RunLog, RunOptions, SimError};
use greenhouse_core::telemetry::DEFAULT_PORT;

#[derive(Parser)]
#[command(name = "greenhouse", version, about = "Greenhouse control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its logs and report.
    Run {
        scenario: PathBuf,
        /// Override the scenario's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: out/<scenario name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Send telemetry over TCP to a gateway on localhost.
        #[arg(long)]
        live_gateway: bool,
        #[arg(long, env = "GWT_PORT", default_value_t = DEFAULT_PORT)]
        port: u16,
    },
    /// Compare a readings table against a reference table.
    Validate {
        system: PathBuf,
        reference: PathBuf,
        /// Fail when a channel's max abs difference exceeds a limit, e.g. `air_temp=1.1`.
        #[arg(long = "max", value_parser = parse_limit)]
        limits: Vec<(String, f64)>,
    },
    /// Rebuild report files from a run log.
    Report { runlog: PathBuf, dir: PathBuf },
}

fn parse_limit(s: &str) -> Result<(String, f64), String> {
    let (ch, v) = s.split_once('=').ok_or("expected CHANNEL=VALUE")?;
    let v: f64 = v.parse().map_err(|e| format!("{v}: {e}"))?;
    Ok((ch.to_string(), v))
}

const FAILURE: u8 = 2;

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            scenario,
            seed,
            out,
            live_gateway,
            port,
        } => {
            let mut cfg = match load_scenario(&scenario) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(FAILURE);
                }
            };
            if let Some(s) = seed {
                cfg.rng_seed = s;
            }
            let out = out.unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
            let opts = RunOptions {
                out_dir: Some(out.clone()),
                live_gateway,
                port,
            };
            let log = match run(&cfg, &opts) {
                Ok(l) => l,
                Err(e) => {
                    eprintln!("error: {e}");
                    let code = match e {
                        SimError::Config(_) | SimError::Setup { .. } | SimError::Tick { .. } => {
                            FAILURE
                        }
                        SimError::Io(_) => 1,
                    };
                    return ExitCode::from(code);
                }
            };
            match write_report(&log, &out) {
                Ok(s) => {
                    print!("{}", s.to_text());
                    println!("output: {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: writing report: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Validate {
            system,
            reference,
            limits,
        } => match validate_tables(&system, &reference) {
            Ok(report) => {
                print!("{report}");
                let mut ok = true;
                for (ch, lim) in &limits {
                    match report.channel(ch) {
                        Some(d) if d.max_abs <= *lim => {
                            println!("{ch}: max {} within {lim}", d.max_abs)
                        }
                        Some(d) => {
                            println!("{ch}: max {} exceeds {lim}", d.max_abs);
                            ok = false;
                        }
                        None => {
                            println!("{ch}: no such column");
                            ok = false;
                        }
                    }
                }
                if ok {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(FAILURE)
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                match e {
                    TableError::Read { .. } => ExitCode::from(1),
                    _ => ExitCode::from(FAILURE),
                }
            }
        },
        Command::Report { runlog, dir } => {
            let log = match RunLog::read_jsonl(&runlog) {
                Ok(l) => l,
                Err(e) => {
                    eprintln!("error: {}: {e}", runlog.display());
                    return ExitCode::from(FAILURE);
                }
            };
            match write_report(&log, &dir) {
                Ok(s) => {
                    print!("{}", s.to_text());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
