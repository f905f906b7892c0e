//! `run`, `sweep` and `report`.
//!
//! Each command returns a process exit code: 0 on success, 2 when the
//! configuration or arguments are rejected, 3 when execution or I/O fails.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fedsim::{build_federation, run_on_federation};
use crate::harness::config::{parse_with_overrides, ExperimentConfig, Policy};
use crate::harness::output::{
    self, fmt_num, read_accuracy_curve, read_csv, read_queue_history, read_summary, write_csv, RunSummary,
};
use crate::metrics::{quality_profile, summarize, MetricsReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_CONFIG_FILE: &str = "sweep_config.toml";
pub const SWEEP_HEADER: [&str; 10] = [
    "policy",
    "seed",
    "jfi",
    "final_accuracy",
    "rounds_executed",
    "minority_class_accuracy",
    "jfi_std",
    "final_accuracy_std",
    "rounds_executed_std",
    "minority_class_accuracy_std",
];
/// `seed` value marking a per-policy aggregate row in `sweep.csv`.
pub const AGGREGATE_SEED: &str = "mean";

#[derive(Debug)]
pub struct CommandError {
    pub code: i32,
    pub message: String,
}

impl CommandError {
    fn config(e: impl std::fmt::Display) -> Self {
        CommandError { code: EXIT_CONFIG, message: e.to_string() }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        CommandError { code: EXIT_RUNTIME, message: e.to_string() }
    }
}

fn exit_code(result: std::result::Result<(), CommandError>) -> i32 {
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn read_config_text(path: &Path) -> std::result::Result<String, CommandError> {
    fs::read_to_string(path)
        .map_err(|e| CommandError::config(format!("cannot read config {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

/// Runs one experiment and writes its artifacts into `out_dir`.
pub fn execute_run(cfg: &ExperimentConfig, out_dir: &Path, full_trace: bool) -> Result<MetricsReport> {
    create_dir(out_dir)?;
    let federation = build_federation(cfg)?;
    let trace = run_on_federation(cfg, &federation)?;
    let report = summarize(&trace, &quality_profile(&federation.profiles))?;
    let summary = RunSummary { report, config: cfg.clone() };
    output::write_run(out_dir, &trace, &summary, full_trace)?;
    Ok(summary.report)
}

pub fn cmd_run(config_path: &Path, out_dir: &Path, full_trace: bool) -> i32 {
    exit_code((|| {
        let text = read_config_text(config_path)?;
        let cfg = crate::harness::config::parse_and_validate(&text).map_err(CommandError::config)?;
        execute_run(&cfg, out_dir, full_trace).map_err(CommandError::runtime)?;
        Ok(())
    })())
}

/// One cell of a sweep: a policy, optionally at a forced sigma, and a seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub label: String,
    pub config: ExperimentConfig,
}

impl SweepCell {
    pub fn dir(&self, root: &Path) -> PathBuf {
        cell_dir(root, &self.label, self.config.seed)
    }
}

/// Label with everything but `[A-Za-z0-9.-]` mapped to `_`.
pub fn safe_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

pub fn cell_dir(root: &Path, label: &str, seed: u64) -> PathBuf {
    root.join("cells").join(safe_label(label)).join(format!("seed-{seed}"))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepOptions {
    pub sigmas: Option<Vec<f64>>,
    pub jobs: Option<usize>,
    pub full_trace: bool,
}

/// Expands policies × (sigmas) × seeds into validated cells. Sigma only
/// varies for policies that rank by CSI; the others get one cell per seed.
pub fn plan_sweep(
    config_text: &str,
    policies: &[Policy],
    seeds: &[u64],
    sigmas: Option<&[f64]>,
) -> Result<Vec<SweepCell>> {
    if policies.is_empty() {
        return Err(Error::invalid("sweep needs at least one policy"));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("sweep needs at least one seed"));
    }
    if sigmas.is_some_and(|s| s.is_empty()) {
        return Err(Error::invalid("sigma list is empty"));
    }
    let mut cells = Vec::new();
    for &policy in policies {
        let variants: Vec<(String, Option<f64>)> = match sigmas {
            Some(list) if policy.uses_queues() => list
                .iter()
                .map(|&s| (format!("{}@sigma={}", policy.name(), fmt_num(s)), Some(s)))
                .collect(),
            _ => vec![(policy.name().to_string(), None)],
        };
        for (label, sigma) in variants {
            for &seed in seeds {
                let seed_value = i64::try_from(seed)
                    .map_err(|_| Error::invalid(format!("seed {seed} exceeds the configuration range")))?;
                let mut overrides = vec![
                    ("policy", toml::Value::String(policy.name().into())),
                    ("seed", toml::Value::Integer(seed_value)),
                ];
                if let Some(s) = sigma {
                    overrides.push(("sigma", toml::Value::Float(s)));
                }
                let config = parse_with_overrides(config_text, &overrides)?;
                cells.push(SweepCell { label: label.clone(), config });
            }
        }
    }
    Ok(cells)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `sweep.csv` rows: one per cell in plan order, then one aggregate row per
/// label holding the mean in the value columns and the sample standard
/// deviation in the `_std` columns.
pub fn sweep_rows(cells: &[SweepCell], reports: &[MetricsReport]) -> Vec<[String; 10]> {
    let mut rows = Vec::new();
    let mut labels: Vec<&str> = Vec::new();
    for (cell, rep) in cells.iter().zip(reports) {
        if !labels.contains(&cell.label.as_str()) {
            labels.push(&cell.label);
        }
        rows.push([
            cell.label.clone(),
            cell.config.seed.to_string(),
            fmt_num(rep.jfi),
            fmt_num(rep.final_accuracy),
            rep.rounds_executed.to_string(),
            rep.minority_class_accuracy.map(fmt_num).unwrap_or_default(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ]);
    }
    for label in labels {
        let group: Vec<&MetricsReport> = cells
            .iter()
            .zip(reports)
            .filter(|(c, _)| c.label == label)
            .map(|(_, r)| r)
            .collect();
        let col = |f: &dyn Fn(&MetricsReport) -> f64| mean_std(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
        let (jm, js) = col(&|r| r.jfi);
        let (am, acc_sd) = col(&|r| r.final_accuracy);
        let (rm, rs) = col(&|r| r.rounds_executed as f64);
        let minority: Option<Vec<f64>> = group.iter().map(|r| r.minority_class_accuracy).collect();
        let (mm, ms) = match minority {
            Some(v) => {
                let (m, s) = mean_std(&v);
                (fmt_num(m), fmt_num(s))
            }
            None => (String::new(), String::new()),
        };
        rows.push([
            label.to_string(),
            AGGREGATE_SEED.into(),
            fmt_num(jm),
            fmt_num(am),
            fmt_num(rm),
            mm,
            fmt_num(js),
            fmt_num(acc_sd),
            fmt_num(rs),
            ms,
        ]);
    }
    rows
}

/// Runs every cell (in parallel, on `jobs` threads when given) and writes
/// per-cell artifacts plus `sweep.csv`. Output is independent of scheduling.
pub fn execute_sweep(
    config_text: &str,
    policies: &[Policy],
    seeds: &[u64],
    out_dir: &Path,
    opts: &SweepOptions,
) -> std::result::Result<Vec<MetricsReport>, CommandError> {
    let cells = plan_sweep(config_text, policies, seeds, opts.sigmas.as_deref()).map_err(CommandError::config)?;
    create_dir(out_dir).map_err(CommandError::runtime)?;
    let config_copy = out_dir.join(SWEEP_CONFIG_FILE);
    fs::write(&config_copy, config_text)
        .map_err(|e| CommandError::runtime(format!("writing {}: {e}", config_copy.display())))?;
    let run_all = || -> Result<Vec<MetricsReport>> {
        cells
            .par_iter()
            .map(|cell| execute_run(&cell.config, &cell.dir(out_dir), opts.full_trace))
            .collect()
    };
    let reports = match opts.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(CommandError::runtime)?
            .install(run_all),
        None => run_all(),
    }
    .map_err(CommandError::runtime)?;
    write_csv(&out_dir.join(SWEEP_FILE), SWEEP_HEADER, &sweep_rows(&cells, &reports)).map_err(CommandError::runtime)?;
    Ok(reports)
}

pub fn cmd_sweep(config_path: &Path, policies: &[Policy], seeds: &[u64], out_dir: &Path, opts: &SweepOptions) -> i32 {
    exit_code((|| {
        let text = read_config_text(config_path)?;
        execute_sweep(&text, policies, seeds, out_dir, opts)?;
        Ok(())
    })())
}

/// Label, per-seed summaries and cell directories.
type CellGroup = (String, Vec<RunSummary>, Vec<PathBuf>);

/// Cells of a finished sweep grouped by label, in `sweep.csv` order.
fn sweep_cells(sweep_dir: &Path) -> Result<Vec<CellGroup>> {
    let path = sweep_dir.join(SWEEP_FILE);
    let rows = read_csv(&path, &SWEEP_HEADER)?;
    let mut groups: Vec<CellGroup> = Vec::new();
    for row in rows.iter().filter(|r| r[1] != AGGREGATE_SEED) {
        let seed: u64 = row[1]
            .parse()
            .map_err(|_| Error::Config(format!("{}: bad seed `{}`", path.display(), row[1])))?;
        let dir = cell_dir(sweep_dir, &row[0], seed);
        let summary = read_summary(&dir)?;
        match groups.iter_mut().find(|g| g.0 == row[0]) {
            Some(g) => {
                g.1.push(summary);
                g.2.push(dir);
            }
            None => groups.push((row[0].clone(), vec![summary], vec![dir])),
        }
    }
    if groups.is_empty() {
        return Err(Error::Config(format!("{} lists no cells", path.display())));
    }
    Ok(groups)
}

fn display_label(label: &str) -> String {
    let (name, suffix) = label.split_once('@').map_or((label, None), |(n, s)| (n, Some(s)));
    let base = name.parse::<Policy>().map_or(name, |p| p.label()).to_string();
    match suffix {
        Some(s) => format!("{base} ({s})"),
        None => base,
    }
}

/// Mean over the seeds still running at each index.
fn ragged_mean(series: &[Vec<f64>]) -> Vec<f64> {
    let len = series.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|t| {
            let live: Vec<f64> = series.iter().filter_map(|s| s.get(t).copied()).collect();
            live.iter().sum::<f64>() / live.len() as f64
        })
        .collect()
}

fn results_table(groups: &[CellGroup]) -> String {
    let mut scenarios: Vec<u8> = groups.iter().flat_map(|g| g.1.iter().map(|s| s.config.scenario)).collect();
    scenarios.sort_unstable();
    scenarios.dedup();
    let mut out = String::new();
    let _ = write!(out, "{:<28}", "Policy");
    for s in &scenarios {
        let _ = write!(out, " {:>9} {:>9}", format!("S{s} JFI"), format!("S{s} Acc"));
    }
    out.push('\n');
    for (label, summaries, _) in groups {
        let _ = write!(out, "{:<28}", display_label(label));
        for s in &scenarios {
            let cell: Vec<&RunSummary> = summaries.iter().filter(|r| r.config.scenario == *s).collect();
            if cell.is_empty() {
                let _ = write!(out, " {:>9} {:>9}", "-", "-");
                continue;
            }
            let n = cell.len() as f64;
            let jfi = cell.iter().map(|r| r.report.jfi).sum::<f64>() / n;
            let acc = cell.iter().map(|r| r.report.final_accuracy).sum::<f64>() / n;
            let _ = write!(out, " {:>9.3} {:>8.2}%", jfi, 100.0 * acc);
        }
        out.push('\n');
    }
    out
}

fn accuracy_svg(curves: &[(String, Vec<f64>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 48.0;
    const COLOURS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
    let max_t = curves.iter().map(|c| c.1.len()).max().unwrap_or(1).max(2) - 1;
    let x = |t: usize| PAD + (W - 2.0 * PAD) * t as f64 / max_t as f64;
    let y = |a: f64| H - PAD - (H - 2.0 * PAD) * a.clamp(0.0, 1.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{tb}\" font-size=\"12\" text-anchor=\"middle\">round (0 to {max_t})</text>\n\
         <text x=\"14\" y=\"{cy}\" font-size=\"12\" transform=\"rotate(-90 14 {cy})\" text-anchor=\"middle\">mean test accuracy (0 to 1)</text>\n",
        b = H - PAD,
        r = W - PAD,
        cx = W / 2.0,
        tb = H - 12.0,
        cy = H / 2.0,
    );
    for (k, (label, curve)) in curves.iter().enumerate() {
        let colour = COLOURS[k % COLOURS.len()];
        let points: Vec<String> = curve
            .iter()
            .enumerate()
            .map(|(t, &a)| format!("{:.2},{:.2}", x(t), y(a)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.join(" ")
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"{colour}\">{}</text>",
            W - PAD - 150.0,
            PAD + 16.0 * (k as f64 + 1.0),
            display_label(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes the results table and plot data for a finished sweep.
pub fn execute_report(sweep_dir: &Path, out_dir: &Path) -> Result<String> {
    let groups = sweep_cells(sweep_dir)?;
    create_dir(out_dir)?;
    let table = results_table(&groups);
    let write = |name: &str, text: &str| {
        let path = out_dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    };
    write("table.txt", &table)?;

    let mut curve_rows = Vec::new();
    let mut hist_rows = Vec::new();
    let mut curves = Vec::new();
    for (label, summaries, dirs) in &groups {
        let series: Vec<Vec<f64>> = dirs.iter().map(|d| read_accuracy_curve(d)).collect::<Result<_>>()?;
        let mean = ragged_mean(&series);
        for (t, a) in mean.iter().enumerate() {
            curve_rows.push([t.to_string(), label.clone(), fmt_num(*a)]);
        }
        curves.push((label.clone(), mean));

        let n = summaries[0].config.n_clients;
        let mut counts = vec![0.0; n];
        for s in summaries {
            for (c, &y) in counts.iter_mut().zip(&s.report.participation) {
                *c += y as f64;
            }
        }
        for (i, c) in counts.iter().enumerate() {
            hist_rows.push([label.clone(), i.to_string(), fmt_num(c / summaries.len() as f64)]);
        }

        if summaries[0].config.policy.uses_queues() {
            let mut per_client: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
            for d in dirs {
                if let Some(history) = read_queue_history(d, n)? {
                    for i in 0..n {
                        per_client.entry(i).or_default().push(history.iter().map(|q| q[i]).collect());
                    }
                }
            }
            let means: Vec<Vec<f64>> = per_client.values().map(|s| ragged_mean(s)).collect();
            let rounds = means.first().map_or(0, Vec::len);
            let rows: Vec<[String; 3]> = (0..rounds)
                .flat_map(|t| means.iter().enumerate().map(move |(i, m)| [t.to_string(), i.to_string(), fmt_num(m[t])]))
                .collect();
            let name = format!("queue_heatmap_{}.csv", safe_label(label));
            write_csv(&out_dir.join(name), ["round", "client_id", "q"], &rows)?;
        }
    }
    write_csv(&out_dir.join("accuracy_curves.csv"), ["round", "policy", "mean_accuracy"], &curve_rows)?;
    write_csv(&out_dir.join("participation_hist.csv"), ["policy", "client_id", "count"], &hist_rows)?;
    write("accuracy_curves.svg", &accuracy_svg(&curves))?;
    Ok(table)
}

pub fn cmd_report(sweep_dir: &Path, out_dir: &Path) -> i32 {
    exit_code(match execute_report(sweep_dir, out_dir) {
        Ok(table) => {
            print!("{table}");
            Ok(())
        }
        Err(e) => Err(CommandError::runtime(e)),
    })
}

/// Parses `a,b,c`, `lo..hi` (exclusive) or `lo..=hi`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::invalid(format!("cannot parse seed list `{text}`"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    if let Some((lo, hi)) = text.split_once("..=") {
        let (lo, hi) = (num(lo)?, num(hi)?);
        return if lo <= hi { Ok((lo..=hi).collect()) } else { Err(bad()) };
    }
    if let Some((lo, hi)) = text.split_once("..") {
        let (lo, hi) = (num(lo)?, num(hi)?);
        return if lo < hi { Ok((lo..hi).collect()) } else { Err(bad()) };
    }
    text.split(',').filter(|s| !s.trim().is_empty()).map(num).collect::<Result<Vec<_>>>().and_then(|v| {
        if v.is_empty() {
            Err(bad())
        } else {
            Ok(v)
        }
    })
}

pub fn parse_policies(text: &str) -> Result<Vec<Policy>> {
    let list: Vec<Policy> = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse())
        .collect::<Result<_>>()?;
    if list.is_empty() {
        return Err(Error::invalid("policy list is empty"));
    }
    Ok(list)
}

pub fn parse_sigmas(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v > 0.0)
                .ok_or_else(|| Error::invalid(format!("sigma `{s}` must be a positive number")))
        })
        .collect()
}
