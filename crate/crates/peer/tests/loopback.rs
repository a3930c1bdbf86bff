mod common;

use std::time::Duration;

use common::{config, loopback_socket, start, Recorder};

/// Pearson correlation of two equally long slices.
fn correlation(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().map(|&x| x as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&x| x as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64 - ma, y as f64 - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    sab / (saa * sbb).sqrt()
}

#[test]
fn receiver_plays_the_sender_sine_at_a_constant_delay() {
    let (sa, sb) = (loopback_socket(), loopback_socket());
    let peers = [("a", sa.local_addr().unwrap(), 1), ("b", sb.local_addr().unwrap(), 2)];
    // a generous floor keeps scheduler noise from moving the target
    let jitter = "[jitter]\nmin_target_frames = 1024\nmax_target_frames = 2048\n";
    let a_dev = Recorder::new("sine:440");
    let sent = a_dev.captured.clone();
    let b_dev = Recorder::new("silence");
    let heard = b_dev.monitor.clone();
    let a = start(&config("a", &peers, jitter), sa, a_dev);
    let b = start(&config("b", &peers, jitter), sb, b_dev);
    std::thread::sleep(Duration::from_secs(4));
    b.join();
    a.join();

    let sent = sent.lock().unwrap().clone();
    let heard = heard.lock().unwrap().clone();
    let sr = 44_100;
    assert!(heard.len() > 3 * sr, "only {} frames played", heard.len());
    // lag from a 0.25 s window one second in, searched over half a second
    let probe = &heard[sr..sr + sr / 4];
    let lag = (0..sr / 2)
        .map(|d| (d, correlation(probe, &sent[sr - d..sr - d + probe.len()])))
        .max_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap()
        .0;
    let end = heard.len().min(sent.len() + lag);
    let r = correlation(&heard[sr..end], &sent[sr - lag..end - lag]);
    assert!(r > 0.999, "correlation {r} at lag {lag}");
    assert_eq!(b.state(), mevo_peer::SessionState::Stopped);
}
