use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::Parser;
use mevo_core::device::{SignalSource, VirtualDevice};
use mevo_core::session::SessionConfig;
use mevo_peer::{serve, SessionHandle, SessionOptions, SessionState};
use tracing::info;

/// Networked music performance peer.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// Session file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Virtual input: silence, sine[:hz], noise[:seed] or file:<raw s16le>.
    #[arg(long, default_value = "sine")]
    virtual_audio: String,
    /// Loopback port of the control API; 0 picks a free one.
    #[arg(long, default_value_t = 8787)]
    control_port: u16,
    /// CSV telemetry log, one row per remote stream per second.
    #[arg(long)]
    telemetry_log: Option<PathBuf>,
}

fn main() -> Result<()> {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    let args = Args::parse();

    let config = SessionConfig::from_file(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    let source: SignalSource = args.virtual_audio.parse()?;
    let device = VirtualDevice::new(source, config.stream.sample_rate, config.stream.channels);
    let opts = SessionOptions { telemetry_log: args.telemetry_log, ..SessionOptions::default() };
    let session = Arc::new(SessionHandle::start(&config, Box::new(device), opts).context("starting session")?);

    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", args.control_port))
            .await
            .with_context(|| format!("binding control port {}", args.control_port))?;
        println!("peer {} on udp {}", config.local_peer_id, session.local_addr());
        println!("control api on http://{}", listener.local_addr()?);
        let ctrl_c = {
            let session = session.clone();
            async move {
                if tokio::signal::ctrl_c().await.is_ok() {
                    info!("interrupted");
                    session.stop();
                }
            }
        };
        tokio::spawn(ctrl_c);
        serve(listener, session.clone()).await.context("control api")
    })?;
    session.join();
    if session.state() == SessionState::Failed {
        bail!("session failed");
    }
    Ok(())
}
