use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use mevo_cli::{init_tracing, load_scenario, simulate};
use tracing::info;

/// Deterministic network simulator for multi-peer sessions.
#[derive(Parser)]
#[command(name = "mevo-sim", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write telemetry and ground-truth logs.
    Run {
        /// `replication`, `replication-300` or a scenario TOML file.
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario length in seconds.
        #[arg(long)]
        duration: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also log every datagram.
        #[arg(long)]
        record_datagrams: bool,
    },
}

fn main() -> Result<()> {
    init_tracing();
    let Cmd::Run { scenario, out, duration, seed, record_datagrams } = Cli::parse().cmd;
    let mut sc = load_scenario(&scenario)?;
    if let Some(d) = duration {
        sc.duration_s = d;
    }
    if let Some(s) = seed {
        sc.seed = s;
    }
    sc.record_datagrams |= record_datagrams;
    info!(name = %sc.name, duration_s = sc.duration_s, seed = sc.seed, "running scenario");
    let started = std::time::Instant::now();
    let (output, files) = simulate(&sc, &out)?;
    info!(elapsed = ?started.elapsed(), "done");
    for s in &output.streams {
        println!(
            "{} <- {} stream {}: played {} lost {} late {} skipped {} conserved {}",
            s.receiver,
            s.sender,
            s.stream_id,
            s.counters.frames_played,
            s.counters.frames_lost,
            s.counters.frames_late,
            s.counters.frames_skipped,
            s.is_conserved()
        );
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
