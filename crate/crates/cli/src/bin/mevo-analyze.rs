use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, ValueEnum};
use mevo_cli::{analyze, init_tracing, AnalyzeOptions, Command};

/// Offline analysis of telemetry CSV logs.
#[derive(Parser)]
#[command(name = "mevo-analyze", version)]
struct Cli {
    cmd: Cmd,
    /// Telemetry logs; repeat for several peers.
    #[arg(long, required = true, num_args = 1..)]
    log: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    bin_ms: f64,
    #[arg(long, default_value_t = 59.0)]
    threshold_ms: f64,
    /// Audio driver and sound card latency.
    #[arg(long, default_value_t = 5.0)]
    driver_ms: f64,
    #[arg(long, default_value_t = 44_100)]
    sample_rate: u32,
    /// Also write gnuplot data files.
    #[arg(long)]
    gnuplot: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Cmd {
    RttHist,
    CumulativeLoss,
    LossRatio,
    M2e,
    Summary,
    All,
}

fn main() -> Result<()> {
    init_tracing();
    let cli = Cli::parse();
    let cmd = match cli.cmd {
        Cmd::RttHist => Command::RttHist,
        Cmd::CumulativeLoss => Command::CumulativeLoss,
        Cmd::LossRatio => Command::LossRatio,
        Cmd::M2e => Command::M2e,
        Cmd::Summary => Command::Summary,
        Cmd::All => Command::All,
    };
    let opts = AnalyzeOptions {
        bin_ms: cli.bin_ms,
        threshold_ms: cli.threshold_ms,
        driver_ms: cli.driver_ms,
        sample_rate: cli.sample_rate,
        gnuplot: cli.gnuplot,
    };
    print!("{}", analyze(cmd, &cli.log, &opts, &cli.out)?);
    Ok(())
}
