use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, UdpSocket};
use std::process::{Command, Stdio};
use std::time::Duration;

/// Minimal HTTP/1.1 exchange; returns the status line and the body.
fn http(addr: &str, method: &str, path: &str, body: &str) -> (String, String) {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nhost: {addr}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut text = String::new();
    s.read_to_string(&mut text).unwrap();
    let (head, body) = text.split_once("\r\n\r\n").unwrap();
    (head.lines().next().unwrap().to_string(), body.to_string())
}

#[test]
fn peer_binary_serves_status_and_stops_on_request() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let other = UdpSocket::bind("127.0.0.1:0").unwrap();
    let config = dir.join("session.toml");
    std::fs::write(
        &config,
        format!(
            "local_peer_id = \"turin\"\n\
             [[peers]]\nid = \"turin\"\naddr = \"127.0.0.1:0\"\nstream_id = 1\n\
             [[peers]]\nid = \"wroclaw\"\naddr = \"{}\"\nstream_id = 2\n",
            other.local_addr().unwrap()
        ),
    )
    .unwrap();
    let log = dir.join("turin.csv");
    let mut child = Command::new(env!("CARGO_BIN_EXE_mevo-peer"))
        .arg("--config")
        .arg(&config)
        .args(["--virtual-audio", "sine:220", "--control-port", "0", "--telemetry-log"])
        .arg(&log)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let addr = loop {
        let line = lines.next().expect("control address line").unwrap();
        if let Some(a) = line.strip_prefix("control api on http://") {
            break a.to_string();
        }
    };

    let (status, body) = http(&addr, "GET", "/status", "");
    assert!(status.ends_with("200 OK"), "{status}: {body}");
    assert!(body.contains("\"wroclaw\"") && body.contains("\"running\""), "{body}");
    std::thread::sleep(Duration::from_millis(1200));
    let (status, body) = http(&addr, "POST", "/session/stop", "");
    assert!(status.ends_with("200 OK"), "{status}: {body}");

    let code = child.wait().unwrap();
    assert!(code.success());
    let csv = std::fs::read_to_string(&log).unwrap();
    assert!(csv.starts_with("# mevo-telemetry v1"));
    assert!(csv.lines().count() >= 3, "{csv}");
}
