#![allow(dead_code)]

use std::net::{SocketAddr, UdpSocket};
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use mevo_core::device::{AudioDevice, SignalSource, VirtualDevice};
use mevo_core::session::SessionConfig;
use mevo_peer::{SessionHandle, SessionOptions};
use tower::ServiceExt;

/// Virtual device that keeps what it captured and what it was asked to play.
pub struct Recorder {
    inner: VirtualDevice,
    pub captured: Arc<Mutex<Vec<f32>>>,
    pub monitor: Arc<Mutex<Vec<f32>>>,
}

impl Recorder {
    pub fn new(source: &str) -> Self {
        let source: SignalSource = source.parse().unwrap();
        Self { inner: VirtualDevice::new(source, 44_100, 1), captured: Arc::default(), monitor: Arc::default() }
    }
}

impl AudioDevice for Recorder {
    fn read_block(&mut self, out: &mut [f32]) -> mevo_core::Result<()> {
        self.inner.read_block(out)?;
        self.captured.lock().unwrap().extend_from_slice(out);
        Ok(())
    }

    fn write_block(&mut self, monitor: &[f32], _audience: &[f32]) -> mevo_core::Result<()> {
        self.monitor.lock().unwrap().extend_from_slice(monitor);
        Ok(())
    }
}

pub fn loopback_socket() -> UdpSocket {
    UdpSocket::bind("127.0.0.1:0").unwrap()
}

/// Session file text for `local` among `peers` (id, address, stream id),
/// followed by `extra` TOML tables.
pub fn config(local: &str, peers: &[(&str, SocketAddr, u8)], extra: &str) -> SessionConfig {
    let mut s = format!("local_peer_id = \"{local}\"\n");
    for (id, addr, stream) in peers {
        s += &format!("[[peers]]\nid = \"{id}\"\naddr = \"{addr}\"\nstream_id = {stream}\n");
    }
    s += extra;
    SessionConfig::from_toml_str(&s).unwrap()
}

pub fn start(cfg: &SessionConfig, socket: UdpSocket, device: Recorder) -> Arc<SessionHandle> {
    Arc::new(SessionHandle::start_with_socket(cfg, socket, Box::new(device), SessionOptions::default()).unwrap())
}

/// One request against the router; the body is parsed as JSON when present.
pub async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, serde_json::Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let json = if bytes.is_empty() { serde_json::Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, json)
}
