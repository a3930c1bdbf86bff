//! Real-time session: an audio cycle thread, a UDP receive thread and a
//! telemetry thread around one [`PeerCore`].
//!
//! The audio thread owns the engine. The receive thread timestamps
//! datagrams and queues them; it answers probes itself so that reply
//! latency does not include a wait for the next audio cycle. Control
//! requests arrive through a mailbox drained at cycle boundaries.

use std::fs::File;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};
use mevo_core::device::AudioDevice;
use mevo_core::engine::{Control, DatagramCounters, MetronomeState, PeerCore, RouteStatus, Status, StreamStatus};
use mevo_core::jitter::JitterBufferConfig;
use mevo_core::session::{PeerEntry, SessionConfig};
use mevo_core::telemetry::{CsvLog, TelemetrySample};
use mevo_core::wire::{self, AudioPacket, StreamConfig};
use serde::Serialize;
use tokio::sync::{broadcast, oneshot, watch};
use tracing::{debug, error, info, warn};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] mevo_core::Error),
    #[error("binding {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("peer {peer:?}: {msg}")]
    Address { peer: String, msg: String },
    /// A control change failed validation and was not applied.
    #[error("rejected: {0}")]
    Rejected(mevo_core::Error),
    #[error("session is not running")]
    Stopped,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct SessionOptions {
    /// CSV file receiving one row per remote stream per telemetry period.
    pub telemetry_log: Option<PathBuf>,
    pub telemetry_period: Duration,
    pub probe_period: Duration,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self { telemetry_log: None, telemetry_period: Duration::from_secs(1), probe_period: Duration::from_secs(1) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Running,
    Stopping,
    Stopped,
    Failed,
}

/// One telemetry period: a row per remote stream plus the settings in force,
/// so that control changes show up in the telemetry feed.
#[derive(Debug, Clone, Serialize)]
pub struct TelemetryFrame {
    pub t_s: f64,
    pub rows: Vec<TelemetrySample>,
    pub metronome: MetronomeState,
    pub jitter: JitterBufferConfig,
    pub routing: Vec<RouteStatus>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PeerInfo {
    pub id: String,
    pub addr: Option<String>,
    pub stream_id: u8,
    pub local: bool,
    pub rtt_min_ms: Option<f64>,
    pub probes_sent: u64,
    pub probes_answered: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionStatus {
    pub state: SessionState,
    pub uptime_s: f64,
    pub local_peer_id: String,
    pub local_stream_id: u8,
    pub local_addr: SocketAddr,
    /// Every session member, the local peer included.
    pub peers: Vec<PeerInfo>,
    pub streams: Vec<StreamStatus>,
    pub metronome: MetronomeState,
    pub metronome_owner: bool,
    pub jitter: JitterBufferConfig,
    pub routing: Vec<RouteStatus>,
    pub datagrams: DatagramCounters,
}

enum Request {
    Apply(Control, oneshot::Sender<mevo_core::Result<()>>),
    Status(oneshot::Sender<Status>),
}

enum Inbound {
    Datagram { bytes: Vec<u8>, at_us: i64 },
    ProbeAnswered,
}

#[derive(Clone, Copy)]
struct Clock(Instant);

impl Clock {
    fn now_us(self) -> i64 {
        self.0.elapsed().as_micros() as i64
    }
}

/// A running session. Dropping it stops the threads.
pub struct SessionHandle {
    peers: Vec<PeerEntry>,
    local_id: String,
    local_addr: SocketAddr,
    started: Instant,
    stop: Arc<AtomicBool>,
    state: Arc<watch::Sender<SessionState>>,
    mailbox: Sender<Request>,
    latest: Arc<Mutex<Option<TelemetryFrame>>>,
    events: Mutex<Option<broadcast::Sender<TelemetryFrame>>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl SessionHandle {
    /// Binds the local peer's address (any port if unset) and starts.
    pub fn start(
        config: &SessionConfig,
        device: Box<dyn AudioDevice>,
        opts: SessionOptions,
    ) -> Result<Self, SessionError> {
        config.validate()?;
        let addr = config.local().addr.clone().unwrap_or_else(|| "0.0.0.0:0".into());
        let socket = UdpSocket::bind(&addr).map_err(|source| SessionError::Bind { addr, source })?;
        Self::start_with_socket(config, socket, device, opts)
    }

    /// Starts on an already bound socket.
    pub fn start_with_socket(
        config: &SessionConfig,
        socket: UdpSocket,
        device: Box<dyn AudioDevice>,
        opts: SessionOptions,
    ) -> Result<Self, SessionError> {
        let core = PeerCore::new(config)?;
        let remotes = core
            .peers()
            .iter()
            .map(|p| {
                let err = |msg: String| SessionError::Address { peer: p.id.clone(), msg };
                let addr = p.addr.as_deref().ok_or_else(|| err("no address".into()))?;
                addr.to_socket_addrs()
                    .map_err(|e| err(format!("{addr}: {e}")))?
                    .next()
                    .ok_or_else(|| err(format!("{addr}: no address found")))
            })
            .collect::<Result<Vec<SocketAddr>, _>>()?;
        let log = match &opts.telemetry_log {
            Some(path) => CsvLog::create(path)?,
            None => CsvLog::<File>::memory_only(),
        };
        let local_addr = socket.local_addr()?;
        socket.set_read_timeout(Some(Duration::from_millis(50)))?;
        let recv_socket = socket.try_clone()?;

        let clock = Clock(Instant::now());
        let stop = Arc::new(AtomicBool::new(false));
        let (state, _) = watch::channel(SessionState::Running);
        let state = Arc::new(state);
        let (mailbox, requests) = unbounded();
        let (inbound_tx, inbound_rx) = unbounded();
        let (frames_tx, frames_rx) = unbounded();
        let (events, _) = broadcast::channel(64);
        let latest = Arc::new(Mutex::new(None));

        let net = {
            let stop = stop.clone();
            let local_stream = core.local_stream_id();
            let stream = *core.stream_config();
            thread::Builder::new()
                .name("mevo-net".into())
                .spawn(move || receive_loop(recv_socket, stream, local_stream, clock, inbound_tx, stop))?
        };
        let tel = {
            let latest = latest.clone();
            let events = events.clone();
            thread::Builder::new()
                .name("mevo-telemetry".into())
                .spawn(move || telemetry_loop(log, frames_rx, latest, events))?
        };
        let audio = {
            let cycle = AudioCycle {
                core,
                device,
                socket,
                remotes,
                clock,
                opts,
                inbound: inbound_rx,
                requests,
                frames: frames_tx,
                stop: stop.clone(),
            };
            let state = state.clone();
            thread::Builder::new().name("mevo-audio".into()).spawn(move || {
                if let Err(e) = cycle.run() {
                    error!("audio cycle stopped: {e}");
                    state.send_replace(SessionState::Failed);
                }
            })?
        };
        info!(%local_addr, peers = config.peers.len(), "session started");
        Ok(Self {
            peers: config.peers.clone(),
            local_id: config.local_peer_id.clone(),
            local_addr,
            started: clock.0,
            stop,
            state,
            mailbox,
            latest,
            events: Mutex::new(Some(events)),
            threads: Mutex::new(vec![audio, net, tel]),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn state(&self) -> SessionState {
        *self.state.borrow()
    }

    /// Applies a control change at the next cycle boundary.
    pub async fn apply(&self, control: Control) -> Result<(), SessionError> {
        let (tx, rx) = oneshot::channel();
        self.send(Request::Apply(control, tx))?;
        rx.await.map_err(|_| SessionError::Stopped)?.map_err(SessionError::Rejected)
    }

    pub async fn status(&self) -> Result<SessionStatus, SessionError> {
        let (tx, rx) = oneshot::channel();
        self.send(Request::Status(tx))?;
        let engine = rx.await.map_err(|_| SessionError::Stopped)?;
        Ok(self.session_status(engine))
    }

    fn send(&self, req: Request) -> Result<(), SessionError> {
        if self.state() != SessionState::Running {
            return Err(SessionError::Stopped);
        }
        self.mailbox.send(req).map_err(|_| SessionError::Stopped)
    }

    fn session_status(&self, engine: Status) -> SessionStatus {
        let peers = self
            .peers
            .iter()
            .map(|p| match engine.peers.iter().find(|r| r.id == p.id) {
                Some(r) => PeerInfo {
                    id: r.id.clone(),
                    addr: r.addr.clone(),
                    stream_id: r.stream_id,
                    local: false,
                    rtt_min_ms: r.rtt_min_ms,
                    probes_sent: r.probes_sent,
                    probes_answered: r.probes_answered,
                },
                None => PeerInfo {
                    id: p.id.clone(),
                    addr: Some(self.local_addr.to_string()),
                    stream_id: p.stream_id,
                    local: p.id == self.local_id,
                    rtt_min_ms: None,
                    probes_sent: 0,
                    probes_answered: 0,
                },
            })
            .collect();
        SessionStatus {
            state: self.state(),
            uptime_s: self.started.elapsed().as_secs_f64(),
            local_peer_id: engine.local_peer_id,
            local_stream_id: engine.local_stream_id,
            local_addr: self.local_addr,
            peers,
            streams: engine.streams,
            metronome: engine.metronome,
            metronome_owner: engine.metronome_owner,
            jitter: engine.jitter,
            routing: engine.routing,
            datagrams: engine.datagrams,
        }
    }

    /// The most recent telemetry period, if one has completed.
    pub fn latest(&self) -> Option<TelemetryFrame> {
        self.latest.lock().expect("latest lock").clone()
    }

    /// Telemetry frames as they are produced. The feed closes once the
    /// session has stopped.
    pub fn subscribe(&self) -> Option<broadcast::Receiver<TelemetryFrame>> {
        self.events.lock().expect("events lock").as_ref().map(|e| e.subscribe())
    }

    /// Asks the threads to finish; returns immediately.
    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
        self.events.lock().expect("events lock").take();
        self.state.send_if_modified(|s| {
            let running = *s == SessionState::Running;
            if running {
                *s = SessionState::Stopping;
            }
            running
        });
    }

    /// Resolves once the session is no longer running.
    pub async fn stopping(&self) {
        let mut rx = self.state.subscribe();
        let _ = rx.wait_for(|s| *s != SessionState::Running).await;
    }

    /// Stops the session and waits for its threads.
    pub fn join(&self) {
        self.stop();
        let threads = std::mem::take(&mut *self.threads.lock().expect("threads lock"));
        for t in threads {
            if t.join().is_err() {
                error!("session thread panicked");
                self.state.send_replace(SessionState::Failed);
            }
        }
        self.state.send_if_modified(|s| {
            let stopping = *s == SessionState::Stopping;
            if stopping {
                *s = SessionState::Stopped;
            }
            stopping
        });
    }
}

impl Drop for SessionHandle {
    fn drop(&mut self) {
        self.join();
    }
}

fn receive_loop(
    socket: UdpSocket,
    stream: StreamConfig,
    local_stream: u8,
    clock: Clock,
    inbound: Sender<Inbound>,
    stop: Arc<AtomicBool>,
) {
    let mut buf = vec![0u8; 65_536];
    while !stop.load(Ordering::Relaxed) {
        let (n, from) = match socket.recv_from(&mut buf) {
            Ok(r) => r,
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => continue,
            Err(e) => {
                debug!("receive: {e}");
                continue;
            }
        };
        let at_us = clock.now_us();
        let bytes = &buf[..n];
        if n == wire::HEADER_LEN {
            if let Ok(h) = wire::decode_header(bytes) {
                if h.is_probe() && !h.is_probe_reply() {
                    let reply = wire::encode(&AudioPacket::probe_reply(&h, local_stream), &stream)
                        .expect("probe has no payload");
                    if let Err(e) = socket.send_to(&reply, from) {
                        debug!("probe reply to {from}: {e}");
                    }
                    if inbound.send(Inbound::ProbeAnswered).is_err() {
                        return;
                    }
                    continue;
                }
            }
        }
        if inbound.send(Inbound::Datagram { bytes: bytes.to_vec(), at_us }).is_err() {
            return;
        }
    }
}

fn telemetry_loop(
    mut log: CsvLog<File>,
    frames: Receiver<TelemetryFrame>,
    latest: Arc<Mutex<Option<TelemetryFrame>>>,
    events: broadcast::Sender<TelemetryFrame>,
) {
    let mut reported = false;
    for frame in frames {
        log.append(&frame.rows);
        if let (Some(e), false) = (log.error(), reported) {
            warn!("telemetry log abandoned: {e}");
            reported = true;
        }
        *latest.lock().expect("latest lock") = Some(frame.clone());
        // no subscribers is fine
        let _ = events.send(frame);
    }
}

struct AudioCycle {
    core: PeerCore,
    device: Box<dyn AudioDevice>,
    socket: UdpSocket,
    remotes: Vec<SocketAddr>,
    clock: Clock,
    opts: SessionOptions,
    inbound: Receiver<Inbound>,
    requests: Receiver<Request>,
    frames: Sender<TelemetryFrame>,
    stop: Arc<AtomicBool>,
}

impl AudioCycle {
    fn run(mut self) -> Result<(), SessionError> {
        let stream = *self.core.stream_config();
        let sr = stream.sample_rate as u64;
        let fpp = stream.frames_per_packet as u64;
        let tel_frames = (self.opts.telemetry_period.as_secs_f64() * sr as f64).round().max(1.0) as u64;
        let probe_us = self.opts.probe_period.as_micros() as i64;
        let mut block = vec![0.0f32; stream.samples_per_packet()];
        let mut next_tel = tel_frames;
        let mut next_probe = probe_us / 2;
        let mut last_now = 0i64;
        let mut frames = 0u64;

        while !self.stop.load(Ordering::Relaxed) {
            for msg in self.inbound.try_iter() {
                match msg {
                    Inbound::Datagram { bytes, at_us } => {
                        // keep buffer time monotonic across the queue hand-off
                        if let mevo_core::engine::Received::Reply(reply) =
                            self.core.receive(&bytes, at_us.max(last_now))
                        {
                            warn!("unexpected probe left for the audio cycle: {} bytes", reply.len());
                        }
                    }
                    Inbound::ProbeAnswered => self.core.note_probe_answered(),
                }
            }
            for req in self.requests.try_iter() {
                match req {
                    Request::Apply(c, reply) => {
                        let res = self.core.apply(&c);
                        match &res {
                            Ok(()) => info!(?c, "control applied"),
                            Err(e) => debug!(?c, "control rejected: {e}"),
                        }
                        let _ = reply.send(res);
                    }
                    Request::Status(reply) => {
                        let _ = reply.send(self.core.status());
                    }
                }
            }

            let now = self.clock.now_us();
            last_now = now;
            self.device.read_block(&mut block)?;
            for d in self.core.capture(&block, now)? {
                for addr in &self.remotes {
                    if let Err(e) = self.socket.send_to(&d, addr) {
                        debug!("send to {addr}: {e}");
                    }
                }
            }
            let [monitor, audience] = self.core.playout(now);
            self.device.write_block(&monitor, &audience)?;

            if now >= next_probe {
                for (i, bytes) in self.core.probe_tick(now) {
                    if let Err(e) = self.socket.send_to(&bytes, self.remotes[i]) {
                        debug!("probe to {}: {e}", self.remotes[i]);
                    }
                }
                next_probe += probe_us;
            }

            frames += fpp;
            if frames >= next_tel {
                let t_s = next_tel as f64 / sr as f64;
                let rows = self.core.sample(t_s, now);
                let status = self.core.status();
                let frame =
                    TelemetryFrame { t_s, rows, metronome: status.metronome, jitter: status.jitter, routing: status.routing };
                if self.frames.send(frame).is_err() {
                    break;
                }
                next_tel += tel_frames;
            }

            let deadline = self.clock.0 + Duration::from_nanos((frames as u128 * 1_000_000_000 / sr as u128) as u64);
            if let Some(wait) = deadline.checked_duration_since(Instant::now()) {
                thread::sleep(wait);
            }
        }
        Ok(())
    }
}
