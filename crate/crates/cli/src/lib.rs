//! Shared logic of the `mevo-sim` and `mevo-analyze` binaries.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mevo_core::analysis::{
    cumulative_loss, loss_ratio, m2e_budget, pooled_envelope, rtt_histogram, split_streams, write_cumulative_loss_csv,
    write_dat, write_histogram_csv, write_records_csv, M2EBudget,
};
use mevo_core::netsim::{replication_scenario, replication_scenario_300, run, Scenario, SimOutput};
use mevo_core::telemetry::{read_csv_file, summarize, TelemetrySample};

/// Resolves a built-in scenario name or a TOML path.
pub fn load_scenario(name: &str) -> Result<Scenario> {
    match name {
        "replication" => Ok(replication_scenario()),
        "replication-300" => Ok(replication_scenario_300()),
        path => Scenario::from_file(Path::new(path)).with_context(|| format!("loading scenario {path}")),
    }
}

/// Runs a scenario and writes its logs into `out`.
pub fn simulate(scenario: &Scenario, out: &Path) -> Result<(SimOutput, Vec<PathBuf>)> {
    let output = run(scenario).with_context(|| format!("running scenario {}", scenario.name))?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let files = output.write_dir(out).with_context(|| format!("writing logs to {}", out.display()))?;
    Ok((output, files))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    RttHist,
    CumulativeLoss,
    LossRatio,
    M2e,
    Summary,
    All,
}

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub bin_ms: f64,
    pub threshold_ms: f64,
    pub driver_ms: f64,
    pub sample_rate: u32,
    pub gnuplot: bool,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self { bin_ms: 0.5, threshold_ms: 59.0, driver_ms: 5.0, sample_rate: 44_100, gnuplot: false }
    }
}

/// One stream of one log. `log` names the receiving peer's log file and
/// `peer_id` the sender of the stream.
struct Side {
    log: String,
    peer_id: String,
    stream_id: u8,
    rows: Vec<TelemetrySample>,
}

impl Side {
    fn stem(&self) -> String {
        format!("{}.{}", self.log, self.stream_id)
    }
}

fn log_name(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let name = name.strip_suffix(".csv").unwrap_or(&name);
    name.strip_suffix(".telemetry").unwrap_or(name).to_string()
}

fn load_sides(logs: &[PathBuf]) -> Result<Vec<Side>> {
    if logs.is_empty() {
        bail!("no telemetry logs given");
    }
    let mut sides = Vec::new();
    for path in logs {
        let rows = read_csv_file(path).with_context(|| format!("reading {}", path.display()))?;
        if rows.is_empty() {
            bail!("{}: no telemetry rows", path.display());
        }
        for ((peer_id, stream_id), rows) in split_streams(&rows) {
            sides.push(Side { log: log_name(path), peer_id, stream_id, rows });
        }
    }
    Ok(sides)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Runs one analysis over the logs, writes result files into `out` and
/// returns the text report.
pub fn analyze(cmd: Command, logs: &[PathBuf], opts: &AnalyzeOptions, out: &Path) -> Result<String> {
    let sides = load_sides(logs)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut report = String::new();
    let all = cmd == Command::All;
    if all || cmd == Command::Summary {
        let mut rows = Vec::new();
        for s in &sides {
            let sum = summarize(&s.rows, opts.sample_rate, opts.threshold_ms)?;
            report += &format!(
                "summary {}: rows {} min_rtt {} below_{} {} loss_ratio {:.6} lost_audio_s {:.2} buffer_mean_ms {:.2} buffer_95_ms [{:.2}, {:.2}]\n",
                s.stem(),
                sum.rows,
                fmt_opt(sum.rtt_min_ms),
                opts.threshold_ms,
                fmt_opt(sum.rtt_below_threshold),
                sum.loss_ratio,
                sum.lost_audio_s,
                sum.buffer_mean_ms,
                sum.buffer_p2_5_ms,
                sum.buffer_p97_5_ms,
            );
            rows.push(sum);
        }
        write_records_csv(create(out, "summary.csv")?, &rows)?;
    }
    if all || cmd == Command::RttHist {
        for s in &sides {
            let h = rtt_histogram(&s.rows, opts.bin_ms, opts.threshold_ms).with_context(|| s.stem())?;
            write_histogram_csv(create(out, &format!("rtt_hist.{}.csv", s.stem()))?, &h)?;
            if opts.gnuplot {
                let data: Vec<Vec<f64>> =
                    h.bins.iter().map(|b| vec![(b.lo_ms + b.hi_ms) / 2.0, b.count as f64]).collect();
                write_dat(create(out, &format!("rtt_hist.{}.dat", s.stem()))?, &["center_ms", "count"], &data)?;
            }
            report += &format!(
                "rtt {}: samples {} min {:.3} median {:.3} p99 {:.3} max {:.3} below_{} {:.6}\n",
                s.stem(),
                h.samples,
                h.min_ms,
                h.median_ms,
                h.p99_ms,
                h.max_ms,
                opts.threshold_ms,
                h.fraction_below
            );
        }
    }
    if all || cmd == Command::CumulativeLoss {
        for s in &sides {
            let series = cumulative_loss(&s.rows);
            write_cumulative_loss_csv(create(out, &format!("cumulative_loss.{}.csv", s.stem()))?, &series, opts.sample_rate)?;
            if opts.gnuplot {
                let data: Vec<Vec<f64>> = series.iter().map(|&(t, f)| vec![t, f as f64]).collect();
                write_dat(create(out, &format!("cumulative_loss.{}.dat", s.stem()))?, &["t_s", "frames_lost"], &data)?;
            }
            let last = series.last().map_or(0, |p| p.1);
            report += &format!(
                "cumulative_loss {}: final {} frames ({:.2} s)\n",
                s.stem(),
                last,
                last as f64 / opts.sample_rate as f64
            );
        }
    }
    if all || cmd == Command::LossRatio {
        let mut w = create(out, "loss_ratio.csv")?;
        writeln!(w, "log,peer_id,stream_id,duration_s,frames_lost,loss_ratio")?;
        for s in &sides {
            let ratio = loss_ratio(&s.rows, opts.sample_rate).with_context(|| s.stem())?;
            let last = s.rows.last().expect("non-empty side");
            writeln!(w, "{},{},{},{:.3},{},{:.6}", s.log, s.peer_id, s.stream_id, last.t_s, last.frames_lost, ratio)?;
            report += &format!("loss_ratio {}: {:.6}\n", s.stem(), ratio);
        }
        w.flush()?;
    }
    if all || cmd == Command::M2e {
        let budgets: Vec<M2EBudget> = sides
            .iter()
            .map(|s| m2e_budget(&s.rows, opts.driver_ms).with_context(|| s.stem()))
            .collect::<Result<_>>()?;
        write_records_csv(create(out, "m2e.csv")?, &budgets)?;
        for (s, b) in sides.iter().zip(&budgets) {
            report += &format!(
                "m2e {}: {:.2} + {:.3} + buffer -> mean {:.2} interval [{:.2}, {:.2}] ms\n",
                s.stem(), b.driver_ms, b.network_ms, b.total_mean_ms, b.total_lo_ms, b.total_hi_ms
            );
        }
        let (lo, hi) = pooled_envelope(&budgets).expect("at least one side");
        report += &format!("m2e pooled: [{lo:.2}, {hi:.2}] ms\n");
    }
    fs::write(out.join("report.txt"), &report)?;
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
}

/// Sets up logging to stderr, filtered by `RUST_LOG` (default `info`).
pub fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}
