use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::mpsc;
use std::time::Duration;

use aerovac_gateway::headless::{self, Report};
use aerovac_gateway::server::{serve, ServeOptions};
use aerovac_gateway::GatewayError;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aerovac", version, about = "Shared-control drone simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Config override, e.g. `--set field.horizon=2.0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a live session for networked clients.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Newline-delimited JSON port.
        #[arg(long, default_value_t = 7878)]
        port: u16,
        /// Optional WebSocket port for browser clients.
        #[arg(long)]
        ws_port: Option<u16>,
        /// Save the session trace here on exit.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Stop after this many seconds of simulated time.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Replay a trace and write a metrics report; fails on any digest mismatch.
    Replay {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the scenario's script headless.
    Run {
        #[command(flatten)]
        common: Common,
        /// Save the recorded trace.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                GatewayError::Diverged { .. } => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn execute(command: Command) -> Result<(), GatewayError> {
    match command {
        Command::Serve { common, port, ws_port, record, duration } => {
            let scenario = headless::load_scenario(&common.scenario)?;
            let setup = headless::setup_with(&scenario, &common.overrides)?;
            let max_ticks = duration.map(|d| (d / setup.config.dt).round() as u64);
            let opts = ServeOptions { port, ws_port, record, max_ticks, ..ServeOptions::default() };
            let handle = serve(setup, opts)?;

            let (stop_tx, stop_rx) = mpsc::channel();
            ctrlc::set_handler(move || {
                let _ = stop_tx.send(());
            })
            .map_err(|e| GatewayError::Io(std::io::Error::other(e)))?;
            while !handle.is_finished() {
                if stop_rx.recv_timeout(Duration::from_millis(50)).is_ok() {
                    break;
                }
            }
            print_report(&Report { scenario: scenario.name, metrics: handle.shutdown()? });
        }
        Command::Replay { common, trace, report } => {
            let out = headless::replay_with(&common.scenario, &trace, &report, &common.overrides)?;
            log::info!("replay matched; report written to {}", report.display());
            print_report(&out);
        }
        Command::Run { common, trace_out, report } => {
            print_report(&headless::record(&common.scenario, trace_out.as_deref(), report.as_deref(), &common.overrides)?);
        }
    }
    Ok(())
}

fn print_report(report: &Report) {
    println!("{}", serde_json::to_string_pretty(report).expect("reports serialize"));
}
