use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{SampleRing, TelemetrySample};
use crate::error::{Error, Result};

pub const SCHEMA_LINE: &str = "# mevo-telemetry v1";

pub const HEADER: [&str; 14] = [
    "t_s",
    "peer_id",
    "stream_id",
    "rtt_ms",
    "buffer_target_ms",
    "buffer_occupancy_ms",
    "frames_played",
    "frames_lost",
    "frames_late",
    "frames_concealed",
    "frames_skipped",
    "dgrams_sent",
    "dgrams_recv",
    "dgrams_malformed",
];

fn record(r: &TelemetrySample) -> [String; 14] {
    [
        format!("{:.3}", r.t_s),
        r.peer_id.clone(),
        r.stream_id.to_string(),
        r.rtt_ms.map(|v| format!("{v:.3}")).unwrap_or_default(),
        format!("{:.3}", r.buffer_target_ms),
        format!("{:.3}", r.buffer_occupancy_ms),
        r.frames_played.to_string(),
        r.frames_lost.to_string(),
        r.frames_late.to_string(),
        r.frames_concealed.to_string(),
        r.frames_skipped.to_string(),
        r.dgrams_sent.to_string(),
        r.dgrams_recv.to_string(),
        r.dgrams_malformed.to_string(),
    ]
}

/// Writes a complete log: schema line, header, rows.
pub fn write_csv<W: Write>(mut out: W, rows: &[TelemetrySample]) -> Result<()> {
    writeln!(out, "{SCHEMA_LINE}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record(record(r))?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(field: &str, name: &str, line: u64) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::analysis(format!("line {line}: bad {name} {field:?}")))
}

fn parse_u64(field: &str, name: &str, line: u64) -> Result<u64> {
    field
        .parse()
        .map_err(|_| Error::analysis(format!("line {line}: bad {name} {field:?}")))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<TelemetrySample>> {
    let mut input = BufReader::new(input);
    let mut first = String::new();
    input.read_line(&mut first)?;
    if first.trim_end() != SCHEMA_LINE {
        return Err(Error::analysis(format!("unsupported telemetry schema line {:?}", first.trim_end())));
    }
    let mut rdr = csv::ReaderBuilder::new().from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(HEADER) {
        return Err(Error::analysis("unexpected telemetry header"));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() + 1);
        if rec.len() != HEADER.len() {
            return Err(Error::analysis(format!("line {line}: expected {} fields", HEADER.len())));
        }
        let u = |i: usize| parse_u64(&rec[i], HEADER[i], line);
        let f = |i: usize| parse_f64(&rec[i], HEADER[i], line);
        rows.push(TelemetrySample {
            t_s: f(0)?,
            peer_id: rec[1].to_string(),
            stream_id: u8::try_from(u(2)?).map_err(|_| Error::analysis(format!("line {line}: bad stream_id")))?,
            rtt_ms: if rec[3].is_empty() { None } else { Some(f(3)?) },
            buffer_target_ms: f(4)?,
            buffer_occupancy_ms: f(5)?,
            frames_played: u(6)?,
            frames_lost: u(7)?,
            frames_late: u(8)?,
            frames_concealed: u(9)?,
            frames_skipped: u(10)?,
            dgrams_sent: u(11)?,
            dgrams_recv: u(12)?,
            dgrams_malformed: u(13)?,
        });
    }
    Ok(rows)
}

pub fn read_csv_file(path: &Path) -> Result<Vec<TelemetrySample>> {
    read_csv(File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?)
}

/// Append-only log with an in-memory ring.
///
/// Rows always land in the ring. A failed write is remembered and the file
/// is abandoned; the ring keeps collecting.
pub struct CsvLog<W: Write> {
    writer: Option<csv::Writer<W>>,
    ring: SampleRing,
    error: Option<String>,
}

impl CsvLog<File> {
    pub fn create(path: &Path) -> Result<Self> {
        Self::new(File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?)
    }
}

impl<W: Write> CsvLog<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{SCHEMA_LINE}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(HEADER)?;
        w.flush()?;
        Ok(Self { writer: Some(w), ring: SampleRing::default(), error: None })
    }

    /// A log with no backing file.
    pub fn memory_only() -> Self {
        Self { writer: None, ring: SampleRing::default(), error: None }
    }

    pub fn append(&mut self, rows: &[TelemetrySample]) {
        for r in rows {
            self.ring.push(r.clone());
        }
        if let Some(w) = self.writer.as_mut() {
            let res = rows
                .iter()
                .try_for_each(|r| w.write_record(record(r)))
                .and_then(|_| w.flush().map_err(csv::Error::from));
            if let Err(e) = res {
                self.error = Some(e.to_string());
                self.writer = None;
            }
        }
    }

    pub fn ring(&self) -> &SampleRing {
        &self.ring
    }

    pub fn error(&self) -> Option<&str> {
        self.error.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::row;

    fn sample_rows() -> Vec<TelemetrySample> {
        let mut a = row(1.0, 2);
        a.peer_id = "wro,claw \"x\"".into();
        a.rtt_ms = Some(52.0114);
        a.buffer_target_ms = 5.805;
        a.frames_played = 44_100;
        let mut b = row(2.0, 2);
        b.frames_lost = 128;
        b.frames_concealed = 128;
        vec![a, b]
    }

    #[test]
    fn exact_text() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &sample_rows()[1..]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "# mevo-telemetry v1\n\
             t_s,peer_id,stream_id,rtt_ms,buffer_target_ms,buffer_occupancy_ms,frames_played,frames_lost,frames_late,frames_concealed,frames_skipped,dgrams_sent,dgrams_recv,dgrams_malformed\n\
             2.000,p2,2,,0.000,0.000,0,128,0,128,0,0,0,0\n"
        );
    }

    #[test]
    fn round_trip_with_quoting_and_nulls() {
        let rows = sample_rows();
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let back = read_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].peer_id, rows[0].peer_id);
        assert_eq!(back[0].rtt_ms, Some(52.011));
        assert_eq!(back[1].rtt_ms, None);
        assert_eq!(back[1].frames_lost, 128);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(read_csv(&b"t_s,peer_id\n"[..]).is_err());
        assert!(read_csv(&b"# mevo-telemetry v1\na,b\n"[..]).is_err());
    }

    #[test]
    fn log_matches_batch_writer() {
        let rows = sample_rows();
        let mut log = CsvLog::new(Vec::new()).unwrap();
        log.append(&rows[..1]);
        log.append(&rows[1..]);
        let streamed = log.writer.take().unwrap().into_inner().unwrap();
        let mut batch = Vec::new();
        write_csv(&mut batch, &rows).unwrap();
        assert_eq!(streamed, batch);
        assert_eq!(log.ring().len(), 2);
    }

    struct Failing;

    impl Write for Failing {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            if buf.len() > 200 {
                Err(std::io::Error::other("disk full"))
            } else {
                Ok(buf.len())
            }
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn write_failure_keeps_ring() {
        let mut log = CsvLog::new(Failing).unwrap();
        assert!(log.error().is_none());
        let rows: Vec<_> = (1..=10).map(|t| row(t as f64, 1)).collect();
        log.append(&rows);
        assert!(log.error().is_some());
        log.append(&rows[..1]);
        assert_eq!(log.ring().len(), 11);
    }
}
