//! On-disk artifacts of a run: `trace.csv`, `rounds.csv`, `summary.json`.
//!
//! Numbers are written with Rust's shortest round-trip decimal formatting.
//! Values a policy does not define (queues, CSI, arrivals under a
//! queue-free policy; `phi` for unscored clients) are written as empty cells.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedsim::experiment::{ExperimentTrace, RoundRecord};
use crate::harness::config::ExperimentConfig;
use crate::metrics::MetricsReport;

pub const TRACE_FILE: &str = "trace.csv";
pub const ROUNDS_FILE: &str = "rounds.csv";
pub const SUMMARY_FILE: &str = "summary.json";

pub const TRACE_HEADER: [&str; 11] = [
    "round", "client_id", "selected", "reputation", "a", "b", "q", "csi", "phi", "c", "x",
];
pub const ROUNDS_HEADER: [&str; 5] = ["round", "test_accuracy", "test_loss", "utility", "lyapunov"];

pub fn fmt_num(x: f64) -> String {
    format!("{x}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

fn client_changed(prev: &RoundRecord, cur: &RoundRecord, i: usize) -> bool {
    prev.reputation[i].to_bits() != cur.reputation[i].to_bits()
        || prev.positive[i] != cur.positive[i]
        || prev.negative[i] != cur.negative[i]
        || match (&prev.queues, &cur.queues) {
            (Some(p), Some(c)) => p[i].to_bits() != c[i].to_bits(),
            _ => false,
        }
}

/// Trace rows. Round 0 lists every client; later rounds list a client when it
/// is selected, was selected the round before, or its state moved. Row
/// `round = T` is a full snapshot of the post-run state, with the per-round
/// columns (`csi`, `phi`, `c`, `x`) empty. With `full` every client appears
/// in every round.
pub fn trace_rows(trace: &ExperimentTrace, full: bool) -> Vec<[String; 11]> {
    let n = trace.config.n_clients;
    let mut rows = Vec::new();
    for (t, rec) in trace.rounds.iter().enumerate() {
        let prev = t.checked_sub(1).map(|p| &trace.rounds[p]);
        for i in 0..n {
            let selected = rec.is_selected(i);
            let emit = full
                || match prev {
                    None => true,
                    Some(p) => selected || p.is_selected(i) || client_changed(p, rec, i),
                };
            if !emit {
                continue;
            }
            rows.push([
                rec.round.to_string(),
                i.to_string(),
                u8::from(selected).to_string(),
                fmt_num(rec.reputation[i]),
                rec.positive[i].to_string(),
                rec.negative[i].to_string(),
                fmt_opt(rec.queues.as_ref().map(|q| q[i])),
                fmt_opt(rec.csi.as_ref().map(|c| c[i])),
                fmt_opt(rec.phi_for(i)),
                fmt_opt(rec.arrivals.as_ref().map(|c| c[i])),
                u8::from(selected).to_string(),
            ]);
        }
    }
    let end = trace.rounds_executed().to_string();
    for (i, rep) in trace.final_reputation.iter().enumerate() {
        rows.push([
            end.clone(),
            i.to_string(),
            "0".into(),
            fmt_num(rep.value()),
            rep.positive_count.to_string(),
            rep.negative_count.to_string(),
            fmt_opt(trace.final_queues.as_ref().map(|q| q[i])),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ]);
    }
    rows
}

pub fn round_rows(trace: &ExperimentTrace) -> Vec<[String; 5]> {
    trace
        .rounds
        .iter()
        .map(|r| {
            [
                r.round.to_string(),
                fmt_num(r.test_accuracy),
                fmt_num(r.test_loss),
                fmt_num(r.utility),
                fmt_opt(r.lyapunov),
            ]
        })
        .collect()
}

/// Contents of `summary.json`: the metrics report with the configuration
/// that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(flatten)]
    pub report: MetricsReport,
    pub config: ExperimentConfig,
}

pub fn write_csv<const W: usize>(path: &Path, header: [&str; W], rows: &[[String; W]]) -> Result<()> {
    let io = |e: csv::Error| Error::io(format!("writing {}", path.display()), e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row).map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Writes the three run artifacts into `dir`, which must exist.
pub fn write_run(dir: &Path, trace: &ExperimentTrace, summary: &RunSummary, full_trace: bool) -> Result<()> {
    write_csv(&dir.join(TRACE_FILE), TRACE_HEADER, &trace_rows(trace, full_trace))?;
    write_csv(&dir.join(ROUNDS_FILE), ROUNDS_HEADER, &round_rows(trace))?;
    let path = dir.join(SUMMARY_FILE);
    let mut json = serde_json::to_string_pretty(summary).expect("summary serialises");
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Reads a CSV file, checking the header, and returns its records as strings.
pub fn read_csv(path: &Path, header: &[&str]) -> Result<Vec<Vec<String>>> {
    let io = |e: csv::Error| Error::io(format!("reading {}", path.display()), e.into());
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    let found: Vec<String> = r.headers().map_err(io)?.iter().map(str::to_string).collect();
    if found != header {
        return Err(Error::Config(format!(
            "{}: expected columns {}, found {}",
            path.display(),
            header.join(","),
            found.join(",")
        )));
    }
    r.records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()).map_err(io))
        .collect()
}

pub fn parse_num(field: &str, path: &Path) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::Config(format!("{}: `{field}` is not a number", path.display())))
}

/// Test accuracy per round from `rounds.csv`.
pub fn read_accuracy_curve(dir: &Path) -> Result<Vec<f64>> {
    let path = dir.join(ROUNDS_FILE);
    read_csv(&path, &ROUNDS_HEADER)?
        .iter()
        .map(|r| parse_num(&r[1], &path))
        .collect()
}

/// Rebuilds `Q(0), ..., Q(T)` from a sparse or full `trace.csv` by carrying
/// each client's last recorded queue forward. `None` when the policy keeps
/// no queues.
pub fn read_queue_history(dir: &Path, n_clients: usize) -> Result<Option<Vec<Vec<f64>>>> {
    let path = dir.join(TRACE_FILE);
    let rows = read_csv(&path, &TRACE_HEADER)?;
    if rows.first().is_some_and(|r| r[6].is_empty()) {
        return Ok(None);
    }
    let mut history: Vec<Vec<f64>> = Vec::new();
    let mut current = vec![0.0; n_clients];
    for row in &rows {
        let round: usize = row[0]
            .parse()
            .map_err(|_| Error::Config(format!("{}: bad round `{}`", path.display(), row[0])))?;
        let client: usize = row[1]
            .parse()
            .ok()
            .filter(|&c| c < n_clients)
            .ok_or_else(|| Error::Config(format!("{}: bad client `{}`", path.display(), row[1])))?;
        while history.len() < round {
            history.push(current.clone());
        }
        current[client] = parse_num(&row[6], &path)?;
    }
    history.push(current);
    Ok(Some(history))
}
