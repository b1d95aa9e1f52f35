use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qx_core::incentive_sim::{run_simulation_with, BuyerStrategy, Execution, SimConfig};
use qx_core::protocol::{digest_hex, Terms};
use qx_core::Money;
use qx_exchange::demo::{demo_config, run_demo};
use qx_exchange::events::read_log;
use qx_exchange::{ExchangeState, Service, ServiceConfig};

#[derive(Parser)]
#[command(name = "qx", version, about = "Escrow-brokered question and answer exchange")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Rebuild state from an event log and print a summary.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Also print the full serialized state.
        #[arg(long)]
        dump: bool,
    },
    /// Monte Carlo estimate of seller payoffs over a grid of accuracies.
    Simulate {
        /// JSON file holding the Terms.
        #[arg(long)]
        terms: PathBuf,
        /// Comma-separated seller accuracies, e.g. 0.0,0.5,1.0
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Buyer's cost of producing evidence, in cents.
        #[arg(long, default_value_t = 0)]
        evidence_cost: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run trials on one thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Run the five-question, ten-day scenario and print the settlement summary.
    Demo {
        /// Keep the scenario's event log here instead of in memory.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type BoxError = Box<dyn std::error::Error>;

fn run(command: Command) -> Result<ExitCode, BoxError> {
    match command {
        Command::Serve { config } => {
            let config = match config {
                Some(path) => ServiceConfig::load(&path)?,
                None => ServiceConfig::default(),
            };
            serve(config)?;
        }
        Command::Replay { log, dump } => {
            let events = read_log(&log)?;
            let state = ExchangeState::replay(&events)?;
            let mut by_state: BTreeMap<String, usize> = BTreeMap::new();
            for t in state.transactions.values() {
                *by_state.entry(t.state.to_string()).or_default() += 1;
            }
            let serialized = state.serialize();
            println!("events        {}", events.len());
            println!("parties       {}", state.parties.len());
            println!("transactions  {}", state.transactions.len());
            for (s, n) in &by_state {
                println!("  {s:<20} {n}");
            }
            println!("clock         {}", state.clock.0);
            println!("issued        {}", state.ledger.total_issued());
            println!("supply        {}", state.ledger.total_supply());
            println!("conserved     {}", state.conserved());
            println!("state sha256  {}", digest_hex(serialized.as_bytes()));
            if dump {
                println!("{serialized}");
            }
            if !state.conserved() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Simulate { terms, grid, trials, seed, evidence_cost, out, sequential } => {
            let terms: Terms = serde_json::from_slice(&std::fs::read(&terms)?)?;
            let config = SimConfig { terms, grid, buyer: BuyerStrategy { evidence_cost: Money(evidence_cost) }, trials, seed };
            let exec = if sequential { Execution::Sequential } else { Execution::default() };
            let report = run_simulation_with(&config, exec)?;
            let json = report.to_json();
            match out {
                Some(path) => std::fs::write(path, format!("{json}\n"))?,
                None => println!("{json}"),
            }
            eprintln!("break-even (closed form) {:.4}", report.break_even_closed_form);
            match report.break_even_estimate {
                Some(b) => eprintln!("break-even (simulated)   {b:.4}"),
                None => eprintln!("break-even (simulated)   not bracketed by the grid"),
            }
        }
        Command::Demo { data_dir } => {
            let config = ServiceConfig { data_dir, ..demo_config() };
            let mut service = Service::open(config)?;
            let summary = run_demo(&mut service)?;
            println!("{summary}");
            if !summary.reconciles() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(config: ServiceConfig) -> Result<(), BoxError> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(config.listen).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        let service = Service::open(config)?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        qx_exchange::http::serve_until(listener, service, shutdown).await?;
        Ok(())
    })
}
