use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use tracing_subscriber::EnvFilter;
use waku_core::node::parse_config;
use waku_core::simnet::{metrics, Scenario};

const USAGE: &str = "\
usage: wakunode [--flag:value ...]
       wakunode sim --scenario <file> --seed <n> [--metrics-out <csv>] [--transcript-out <jsonl>]

Node flags use the form --name:value, e.g. --relay:true --topics:/waku/2/default-waku/proto.
See README.md for the full list.";

/// Run a scenario in the deterministic simulator.
#[derive(Debug, Parser)]
#[command(name = "wakunode sim")]
struct SimArgs {
    /// Scenario TOML file.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-digest metrics as CSV.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    /// Transcript as one JSON record per line.
    #[arg(long)]
    transcript_out: Option<PathBuf>,
}

fn run_sim(args: SimArgs) -> anyhow::Result<bool> {
    let text = std::fs::read_to_string(&args.scenario)
        .with_context(|| format!("reading {}", args.scenario.display()))?;
    let scenario = Scenario::parse(&text)?;
    let (sim, report) = scenario.execute(args.seed)?;
    for s in &report.steps {
        println!("{:>3} {:<17} {} {}", s.index, s.action, if s.ok { "ok  " } else { "FAIL" }, s.detail);
    }
    let m = metrics(sim.transcript());
    println!(
        "scenario {}: {} ({} events, {} digests)",
        report.name,
        if report.success { "success" } else { "failed" },
        sim.transcript().events.len(),
        m.per_digest.len()
    );
    if let Some(path) = &args.transcript_out {
        let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        sim.transcript().write_jsonl(&mut w)?;
        w.flush()?;
    }
    if let Some(path) = &args.metrics_out {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        m.write_csv(BufWriter::new(f))?;
    }
    Ok(report.success)
}

async fn run_node(argv: &[String]) -> anyhow::Result<()> {
    let config = parse_config(argv)?;
    let handle = wakunode::start(config).await?;
    println!("{}", handle.multiaddr());
    tokio::signal::ctrl_c().await.context("waiting for ctrl-c")?;
    handle.stop().await
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let result = match argv.first().map(String::as_str) {
        Some("-h" | "--help" | "help") => {
            println!("{USAGE}");
            return ExitCode::SUCCESS;
        }
        Some("sim") => {
            let args = SimArgs::parse_from(std::iter::once("wakunode sim".to_owned()).chain(argv[1..].iter().cloned()));
            match run_sim(args) {
                Ok(true) => Ok(()),
                Ok(false) => return ExitCode::from(1),
                Err(e) => Err(e),
            }
        }
        _ => tokio::runtime::Runtime::new()
            .context("starting runtime")
            .and_then(|rt| rt.block_on(run_node(&argv))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wakunode: {e:#}");
            ExitCode::from(2)
        }
    }
}
