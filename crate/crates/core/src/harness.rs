//! Multi-seed experiment runner: curve binning and smoothing, per-run
//! persistence, summary tables, SVG plots, and the batch-size ablation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::optim::OptimizerKind;
use crate::trainer::{self, AgentConfig, BatchMode, EpisodePoint, IterationLog, RunRecord, RunStatus};

pub const N_BINS: usize = 100;
pub const SMOOTHING: f64 = 0.1;

/// Means of `(timestep, value)` points over `n_bins` equal-width bins
/// covering `(0, total]`. A point at timestep `t` belongs to bin
/// `ceil(t·n/total) − 1` (clamped). Empty bins repeat the previous bin;
/// leading empty bins take the first non-empty value.
pub fn bin_curve(points: &[(f64, f64)], n_bins: usize, total: f64) -> Result<Vec<(f64, f64)>> {
    if points.is_empty() {
        return Err(Error::Empty("bin_curve points"));
    }
    if n_bins == 0 {
        return Err(Error::InvalidArgument("n_bins must be >= 1".into()));
    }
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::InvalidArgument(format!("bin range must be > 0, got {total}")));
    }
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for &(t, v) in points {
        let idx = ((t * n_bins as f64 / total).ceil() as i64 - 1).clamp(0, n_bins as i64 - 1) as usize;
        sums[idx] += v;
        counts[idx] += 1;
    }
    let first = counts.iter().position(|&c| c > 0).expect("at least one point");
    let mut carry = sums[first] / counts[first] as f64;
    let width = total / n_bins as f64;
    Ok((0..n_bins)
        .map(|i| {
            if counts[i] > 0 {
                carry = sums[i] / counts[i] as f64;
            }
            ((i as f64 + 0.5) * width, carry)
        })
        .collect())
}

/// `y₀ = x₀`, `yₜ = f·xₜ + (1 − f)·yₜ₋₁`
pub fn ewm_smooth(curve: &[f64], factor: f64) -> Result<Vec<f64>> {
    if curve.is_empty() {
        return Err(Error::Empty("ewm_smooth curve"));
    }
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::InvalidArgument(format!("smoothing factor must lie in (0, 1], got {factor}")));
    }
    let mut out = Vec::with_capacity(curve.len());
    let mut prev = curve[0];
    out.push(prev);
    for &x in &curve[1..] {
        prev = factor * x + (1.0 - factor) * prev;
        out.push(prev);
    }
    Ok(out)
}

fn smooth_points(points: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    let values: Vec<f64> = points.iter().map(|p| p.1).collect();
    let smoothed = ewm_smooth(&values, SMOOTHING)?;
    Ok(points.iter().zip(smoothed).map(|(p, s)| (p.0, s)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedCurves {
    pub returns: Vec<(f64, f64)>,
    pub smoothed_returns: Vec<(f64, f64)>,
    pub log_probs: Vec<(f64, f64)>,
    pub smoothed_log_probs: Vec<(f64, f64)>,
}

/// Binned and smoothed episode-return and log-probability curves of one run.
pub fn curves_for_run(config: &AgentConfig, logs: &[IterationLog], episodes: &[EpisodePoint]) -> Result<BinnedCurves> {
    let total = config.total_timesteps as f64;
    let ret_points: Vec<(f64, f64)> = episodes.iter().map(|e| (e.timestep as f64, e.episode_return)).collect();
    let lp_points: Vec<(f64, f64)> = logs.iter().map(|l| (l.timestep as f64, l.mean_action_log_prob)).collect();
    let returns = bin_curve(&ret_points, N_BINS, total)?;
    let log_probs = bin_curve(&lp_points, N_BINS, total)?;
    Ok(BinnedCurves {
        smoothed_returns: smooth_points(&returns)?,
        smoothed_log_probs: smooth_points(&log_probs)?,
        returns,
        log_probs,
    })
}

/// First bin position at which `curve` reaches `threshold` (upward when
/// `threshold` exceeds the first value, otherwise downward).
pub fn first_crossing(curve: &[(f64, f64)], threshold: f64) -> Option<f64> {
    let start = curve.first()?.1;
    let rising = threshold >= start;
    curve
        .iter()
        .find(|(_, v)| if rising { *v >= threshold } else { *v <= threshold })
        .map(|p| p.0)
}

/// Pointwise mean and population standard deviation of equally-binned curves.
pub fn mean_std_curve(curves: &[&[(f64, f64)]]) -> Option<Vec<(f64, f64, f64)>> {
    let n = curves.first()?.len();
    if curves.iter().any(|c| c.len() != n) {
        return None;
    }
    let k = curves.len() as f64;
    Some(
        (0..n)
            .map(|i| {
                let mean = curves.iter().map(|c| c[i].1).sum::<f64>() / k;
                let var = curves.iter().map(|c| (c[i].1 - mean).powi(2)).sum::<f64>() / k;
                (curves[0][i].0, mean, var.sqrt())
            })
            .collect(),
    )
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Label of the algorithm a config runs, e.g. `smac` or `smac_persample`.
pub fn algorithm_label(config: &AgentConfig) -> String {
    match config.batch_mode {
        BatchMode::BatchMean => config.optimizer_id.id().to_string(),
        BatchMode::PerSample => format!("{}_persample", config.optimizer_id.id()),
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub configs: Vec<AgentConfig>,
    pub out_dir: PathBuf,
    pub jobs: usize,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.configs.is_empty() {
            return Err(Error::Config("experiment has no runs".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.configs {
            c.validate()?;
            if !seen.insert(c.run_name()) {
                return Err(Error::Config(format!("duplicate run {} (seeds must be distinct)", c.run_name())));
            }
        }
        Ok(())
    }
}

/// JSON experiment description. Every field is optional; missing ones fall
/// back to the full classic-control grid with five seeds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentFile {
    pub envs: Option<Vec<EnvKind>>,
    pub algorithms: Option<Vec<OptimizerKind>>,
    pub seeds: Option<Vec<u64>>,
    pub total_timesteps: Option<usize>,
    pub eta: Option<f64>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub steps_per_update: Option<usize>,
    pub gamma: Option<f64>,
    pub lambda_gae: Option<f64>,
    pub batch_mode: Option<BatchMode>,
    pub hidden: Option<Vec<usize>>,
    pub critic_epochs: Option<usize>,
    pub checkpoint_every: Option<usize>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl ExperimentFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Expands the grid `envs × algorithms × seeds` over the per-task defaults.
    pub fn to_spec(&self) -> ExperimentSpec {
        let envs = self.envs.clone().unwrap_or_else(|| EnvKind::ALL.to_vec());
        let algs = self.algorithms.clone().unwrap_or_else(|| OptimizerKind::ALL.to_vec());
        let seeds = self.seeds.clone().unwrap_or_else(|| (0..5).collect());
        let mut configs = Vec::new();
        for &env in &envs {
            for &alg in &algs {
                for &seed in &seeds {
                    let mut c = AgentConfig::defaults_for(env, alg, seed);
                    macro_rules! apply {
                        ($($field:ident => $target:ident),*) => {
                            $(if let Some(v) = self.$field.clone() { c.$target = v; })*
                        };
                    }
                    apply!(total_timesteps => total_timesteps, eta => eta, lambda => lambda, alpha => alpha,
                        steps_per_update => steps_per_update, gamma => gamma, lambda_gae => lambda_gae,
                        batch_mode => batch_mode, hidden => hidden, critic_epochs => critic_epochs,
                        checkpoint_every => checkpoint_every);
                    configs.push(c);
                }
            }
        }
        ExperimentSpec {
            configs,
            out_dir: self.out.clone().unwrap_or_else(|| PathBuf::from("results")),
            jobs: self.jobs.unwrap_or(1).max(1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub env: String,
    pub algorithm: String,
    pub mean_final_return: f64,
    pub std_final_return: f64,
    pub n_seeds: usize,
}

pub const SUMMARY_CSV_HEADER: &str = "env,algorithm,mean_final_return,std_final_return,n_seeds";

/// Groups `(env, algorithm, final_return)` triples into summary rows.
pub fn summarize<I>(finals: I) -> Vec<SummaryRow>
where
    I: IntoIterator<Item = (String, String, f64)>,
{
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for (env, alg, v) in finals {
        groups.entry((env, alg)).or_default().push(v);
    }
    groups
        .into_iter()
        .map(|((env, algorithm), values)| {
            let (mean, std) = mean_std(&values);
            SummaryRow { env, algorithm, mean_final_return: mean, std_final_return: std, n_seeds: values.len() }
        })
        .collect()
}

pub fn summarize_records(records: &[RunRecord]) -> Vec<SummaryRow> {
    summarize(records.iter().filter_map(|r| {
        r.final_return().map(|f| (r.config.env_id.id().to_string(), algorithm_label(&r.config), f))
    }))
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{SUMMARY_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.env, r.algorithm, r.mean_final_return, r.std_final_return, r.n_seeds)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let text = fs::read_to_string(path)?;
    let bad = |line: &str| Error::Config(format!("malformed summary row {line:?}"));
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(line));
            }
            Ok(SummaryRow {
                env: f[0].to_string(),
                algorithm: f[1].to_string(),
                mean_final_return: f[2].parse().map_err(|_| bad(line))?,
                std_final_return: f[3].parse().map_err(|_| bad(line))?,
                n_seeds: f[4].parse().map_err(|_| bad(line))?,
            })
        })
        .collect()
}

/// Aligned plain-text rendering of the summary table.
pub fn summary_text(rows: &[SummaryRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:<16} {:>24} {:>7}", "env", "algorithm", "final return", "seeds");
    for r in rows {
        let cell = format!("{:.1} ± {:.1}", r.mean_final_return, r.std_final_return);
        let _ = writeln!(s, "{:<10} {:<16} {:>24} {:>7}", r.env, r.algorithm, cell, r.n_seeds);
    }
    s
}

pub const CURVE_CSV_HEADER: &str = "bin,timestep,mean_return,smoothed_return,mean_logprob,smoothed_logprob";

/// One row of a persisted per-run curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub bin: usize,
    pub timestep: f64,
    pub mean_return: f64,
    pub smoothed_return: f64,
    pub mean_logprob: f64,
    pub smoothed_logprob: f64,
}

/// A run as reloaded from disk.
#[derive(Clone, Debug)]
pub struct StoredRun {
    pub config: AgentConfig,
    pub curve: Vec<CurveRow>,
}

impl StoredRun {
    pub fn from_record(record: &RunRecord) -> Option<Self> {
        let c = record.curves.as_ref()?;
        let curve = (0..c.returns.len())
            .map(|i| CurveRow {
                bin: i,
                timestep: c.returns[i].0,
                mean_return: c.returns[i].1,
                smoothed_return: c.smoothed_returns[i].1,
                mean_logprob: c.log_probs[i].1,
                smoothed_logprob: c.smoothed_log_probs[i].1,
            })
            .collect();
        Some(StoredRun { config: record.config.clone(), curve })
    }

    pub fn final_return(&self) -> Option<f64> {
        self.curve.last().map(|r| r.smoothed_return)
    }

    fn smoothed_returns(&self) -> Vec<(f64, f64)> {
        self.curve.iter().map(|r| (r.timestep, r.smoothed_return)).collect()
    }

    fn smoothed_logprobs(&self) -> Vec<(f64, f64)> {
        self.curve.iter().map(|r| (r.timestep, r.smoothed_logprob)).collect()
    }
}

/// Writes `config.json`, `record.json`, `episodes.csv` and `curve.csv` for a
/// run (`iterations.csv` is streamed by the trainer).
pub fn persist_run(dir: &Path, record: &RunRecord) -> Result<()> {
    fs::create_dir_all(dir)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("config.json"))?), &record.config)?;
    serde_json::to_writer(BufWriter::new(File::create(dir.join("record.json"))?), record)?;

    let mut w = BufWriter::new(File::create(dir.join("episodes.csv"))?);
    writeln!(w, "timestep,episode_return,length")?;
    for e in &record.episodes {
        writeln!(w, "{},{},{}", e.timestep, e.episode_return, e.length)?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(dir.join("curve.csv"))?);
    writeln!(w, "{CURVE_CSV_HEADER}")?;
    if let Some(stored) = StoredRun::from_record(record) {
        for r in &stored.curve {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.bin, r.timestep, r.mean_return, r.smoothed_return, r.mean_logprob, r.smoothed_logprob
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_run(dir: &Path) -> Result<StoredRun> {
    let config: AgentConfig = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
    let text = fs::read_to_string(dir.join("curve.csv"))?;
    let bad = |line: &str| Error::Config(format!("malformed curve row {line:?} in {}", dir.display()));
    let curve = text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(line));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(line));
            Ok(CurveRow {
                bin: f[0].parse().map_err(|_| bad(line))?,
                timestep: num(1)?,
                mean_return: num(2)?,
                smoothed_return: num(3)?,
                mean_logprob: num(4)?,
                smoothed_logprob: num(5)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StoredRun { config, curve })
}

/// Loads every run under `root/runs/`.
pub fn load_runs(root: &Path) -> Result<Vec<StoredRun>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root.join("runs"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("config.json").is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_run(d)).collect()
}

pub fn summarize_stored(runs: &[StoredRun]) -> Vec<SummaryRow> {
    summarize(runs.iter().filter_map(|r| {
        r.final_return().map(|f| (r.config.env_id.id().to_string(), algorithm_label(&r.config), f))
    }))
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentOutcome {
    pub fn any_failed(&self) -> bool {
        self.records.iter().any(|r| !r.succeeded())
    }
}

/// Runs every config (in parallel across runs), persists per-run outputs,
/// then writes `summary.csv`, `summary.txt` and plots under `out_dir`.
/// Only an invalid spec is an error; failed runs are recorded and the rest continue.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let runs_dir = spec.out_dir.join("runs");
    fs::create_dir_all(&runs_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let records: Vec<RunRecord> = pool.install(|| {
        spec.configs
            .par_iter()
            .map(|config| {
                let dir = runs_dir.join(config.run_name());
                let mut record = trainer::train_with_output(config.clone(), Some(&dir));
                if let Err(e) = persist_run(&dir, &record) {
                    record.status = RunStatus::Failed { message: format!("persisting outputs: {e}") };
                }
                record
            })
            .collect()
    });
    let summary = summarize_records(&records);
    write_summary_csv(&spec.out_dir.join("summary.csv"), &summary)?;
    fs::write(spec.out_dir.join("summary.txt"), summary_text(&summary))?;
    let stored: Vec<StoredRun> = records.iter().filter_map(StoredRun::from_record).collect();
    if let Err(e) = emit_plots(&stored, &spec.out_dir.join("plots")) {
        eprintln!("warning: plot emission failed: {e}");
    }
    Ok(ExperimentOutcome { records, summary })
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Series {
    label: String,
    points: Vec<(f64, f64, f64)>,
}

fn render_svg(title: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (820.0, 500.0);
    let (ml, mr, mt, mb) = (80.0, 170.0, 40.0, 60.0);
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, m, sd) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(m - sd);
        y1 = y1.max(m + sd);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{title}</text>"#, (ml + w - mr) / 2.0);
    let _ = writeln!(
        s,
        r#"<line x1="{ml}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{ml}" y1="{mt}" x2="{ml}" y2="{b}" stroke="black"/>"#,
        b = h - mb,
        r = w - mr
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{:.0}</text>"#, px(fx), h - mb + 18.0, fx);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.1}</text>"#, ml - 6.0, py(fy) + 4.0, fy);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">timesteps</text>"#, (ml + w - mr) / 2.0, h - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{y_label}</text>"#,
        (mt + h - mb) / 2.0,
        (mt + h - mb) / 2.0
    );
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let upper: Vec<String> = ser.points.iter().map(|&(x, m, sd)| format!("{:.2},{:.2}", px(x), py(m + sd))).collect();
        let lower: Vec<String> = ser.points.iter().rev().map(|&(x, m, sd)| format!("{:.2},{:.2}", px(x), py(m - sd))).collect();
        let _ = writeln!(s, r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, upper.join(" "), lower.join(" "));
        let line: Vec<String> = ser.points.iter().map(|&(x, m, _)| format!("{:.2},{:.2}", px(x), py(m))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        let ly = mt + 20.0 * k as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{a}" y1="{ly}" x2="{b}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{c}" y="{t}">{}</text>"#,
            ser.label,
            a = w - mr + 15.0,
            b = w - mr + 40.0,
            c = w - mr + 46.0,
            t = ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

pub const SERIES_CSV_HEADER: &str = "env,algorithm,metric,bin,timestep,mean,std,n_seeds";

/// Per-env SVGs of the smoothed return and log-probability curves (mean
/// across seeds, ±1 std band), plus the plotted series as CSV.
pub fn emit_plots(runs: &[StoredRun], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut by_env: BTreeMap<EnvKind, BTreeMap<String, Vec<&StoredRun>>> = BTreeMap::new();
    for r in runs {
        by_env.entry(r.config.env_id).or_default().entry(algorithm_label(&r.config)).or_default().push(r);
    }
    let mut written = Vec::new();
    for (env, algs) in &by_env {
        let mut csv = String::new();
        let _ = writeln!(csv, "{SERIES_CSV_HEADER}");
        for (metric, y_label) in [("return", "average return"), ("logprob", "average log-probability")] {
            let mut series = Vec::new();
            for (alg, group) in algs {
                let curves: Vec<Vec<(f64, f64)>> = group
                    .iter()
                    .map(|r| if metric == "return" { r.smoothed_returns() } else { r.smoothed_logprobs() })
                    .collect();
                let refs: Vec<&[(f64, f64)]> = curves.iter().map(|c| c.as_slice()).collect();
                let Some(points) = mean_std_curve(&refs) else { continue };
                for (i, (t, m, sd)) in points.iter().enumerate() {
                    let _ = writeln!(csv, "{env},{alg},{metric},{i},{t},{m},{sd},{}", group.len());
                }
                series.push(Series { label: alg.clone(), points });
            }
            if series.is_empty() {
                continue;
            }
            let path = out_dir.join(format!("{env}_{metric}.svg"));
            fs::write(&path, render_svg(&format!("{env}: {y_label}"), y_label, &series))?;
            written.push(path);
        }
        let path = out_dir.join(format!("{env}_series.csv"));
        fs::write(&path, csv)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub batch_size: usize,
    pub mode: BatchMode,
    pub final_return: Option<f64>,
    pub actor_update_ms: f64,
    pub actor_updates: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub env: EnvKind,
    pub total_timesteps: usize,
    pub rows: Vec<AblationRow>,
    #[serde(skip)]
    pub records: Vec<RunRecord>,
}

impl AblationReport {
    /// Actor-update wall time of batch size `b` divided by that of `a`.
    pub fn time_ratio(&self, b: usize, a: usize) -> Option<f64> {
        let find = |n| self.rows.iter().find(|r| r.batch_size == n).map(|r| r.actor_update_ms);
        Some(find(b)? / find(a)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "batch-size ablation on {} ({} timesteps)", self.env, self.total_timesteps);
        let _ = writeln!(s, "{:>6} {:>11} {:>14} {:>16} {:>9}", "B", "mode", "final return", "actor time ms", "updates");
        for r in &self.rows {
            let fr = r.final_return.map(|v| format!("{v:.1}")).unwrap_or_else(|| "n/a".into());
            let mode = match r.mode {
                BatchMode::BatchMean => "batch_mean",
                BatchMode::PerSample => "per_sample",
            };
            let _ = writeln!(s, "{:>6} {:>11} {:>14} {:>16.1} {:>9}", r.batch_size, mode, fr, r.actor_update_ms, r.actor_updates);
        }
        if let (Some(small), Some(large)) = (self.rows.iter().map(|r| r.batch_size).min(), self.rows.iter().map(|r| r.batch_size).max()) {
            if let Some(ratio) = self.time_ratio(large, small) {
                let _ = writeln!(s, "actor time ratio B={large} / B={small}: {ratio:.3}");
            }
        }
        s
    }
}

/// Runs the rank-1 method on `base.env_id` once per batch size. `B = 1`
/// replays every transition as its own update; `B = T` takes one update
/// from the batch-mean score. Runs execute sequentially so wall times are
/// comparable.
pub fn ablation_batch_size(base: &AgentConfig, sizes: &[usize], out_dir: Option<&Path>) -> Result<AblationReport> {
    if sizes.is_empty() {
        return Err(Error::Empty("ablation batch sizes"));
    }
    let t = base.steps_per_update;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for &b in sizes {
        let mode = if b == t {
            BatchMode::BatchMean
        } else if b == 1 {
            BatchMode::PerSample
        } else {
            return Err(Error::Config(format!("batch size {b} must be 1 or steps_per_update ({t})")));
        };
        let config = AgentConfig { optimizer_id: OptimizerKind::Smac, batch_mode: mode, ..base.clone() };
        config.validate()?;
        let dir = out_dir.map(|d| d.join("runs").join(config.run_name()));
        let record = trainer::train_with_output(config, dir.as_deref());
        if let Some(d) = &dir {
            persist_run(d, &record)?;
        }
        if let RunStatus::Failed { message } = &record.status {
            return Err(Error::Config(format!("ablation run with B={b} failed: {message}")));
        }
        let updates_per_iter = if mode == BatchMode::PerSample { t } else { 1 };
        rows.push(AblationRow {
            batch_size: b,
            mode,
            final_return: record.final_return(),
            actor_update_ms: record.actor_update_ms,
            actor_updates: record.logs.len() * updates_per_iter,
        });
        records.push(record);
    }
    let report = AblationReport { env: base.env_id, total_timesteps: base.total_timesteps, rows, records };
    if let Some(d) = out_dir {
        fs::create_dir_all(d)?;
        fs::write(d.join("ablation.txt"), report.to_text())?;
        serde_json::to_writer_pretty(BufWriter::new(File::create(d.join("ablation.json"))?), &report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_single_bin_is_global_mean() {
        let pts = [(1.0, 2.0), (5.0, 4.0), (9.0, 9.0)];
        assert_eq!(bin_curve(&pts, 1, 10.0).unwrap(), vec![(5.0, 5.0)]);
    }

    #[test]
    fn bin_identity_on_uniform_grid() {
        let pts: Vec<(f64, f64)> = (1..=100).map(|t| (t as f64, (t * t) as f64)).collect();
        let binned = bin_curve(&pts, 100, 100.0).unwrap();
        for (b, p) in binned.iter().zip(&pts) {
            assert_eq!(b.1, p.1);
        }
    }

    #[test]
    fn bin_pairwise_means() {
        let pts = [(1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (4.0, 4.0)];
        let v: Vec<f64> = bin_curve(&pts, 2, 4.0).unwrap().iter().map(|p| p.1).collect();
        assert_eq!(v, vec![1.5, 3.5]);
    }

    #[test]
    fn bin_carries_forward_and_backfills() {
        let pts = [(35.0, 7.0), (75.0, 3.0)];
        let v: Vec<f64> = bin_curve(&pts, 10, 100.0).unwrap().iter().map(|p| p.1).collect();
        assert_eq!(v, vec![7.0, 7.0, 7.0, 7.0, 7.0, 7.0, 7.0, 3.0, 3.0, 3.0]);
        assert!(bin_curve(&[], 3, 1.0).is_err());
        assert!(bin_curve(&pts, 0, 1.0).is_err());
    }

    #[test]
    fn smoothing_cases() {
        let x = [3.0, -1.0, 4.0];
        assert_eq!(ewm_smooth(&x, 1.0).unwrap(), x.to_vec());
        assert_eq!(ewm_smooth(&[2.5; 6], 0.1).unwrap(), vec![2.5; 6]);
        let y = ewm_smooth(&[0.0, 1.0], 0.1).unwrap();
        assert_eq!(y[0], 0.0);
        assert!((y[1] - 0.1).abs() < 1e-15);
        assert!(ewm_smooth(&[], 0.1).is_err());
        assert!(ewm_smooth(&x, 0.0).is_err());
    }

    #[test]
    fn crossing_and_aggregation() {
        let c = [(1.0, 0.0), (2.0, 5.0), (3.0, 10.0)];
        assert_eq!(first_crossing(&c, 4.0), Some(2.0));
        assert_eq!(first_crossing(&c, 11.0), None);
        let d = [(1.0, -500.0), (2.0, -450.0), (3.0, -90.0)];
        assert_eq!(first_crossing(&d, -400.0), Some(3.0));

        let a = [(1.0, 1.0), (2.0, 3.0)];
        let b = [(1.0, 3.0), (2.0, 3.0)];
        let m = mean_std_curve(&[&a, &b]).unwrap();
        assert_eq!(m, vec![(1.0, 2.0, 1.0), (2.0, 3.0, 0.0)]);
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn summary_groups_and_roundtrips() {
        let rows = summarize(vec![
            ("cartpole".to_string(), "smac".to_string(), 900.0),
            ("cartpole".to_string(), "smac".to_string(), 1000.0),
            ("acrobot".to_string(), "sgd".to_string(), -100.0),
        ]);
        assert_eq!(rows.len(), 2);
        let cp = rows.iter().find(|r| r.env == "cartpole").unwrap();
        assert_eq!((cp.mean_final_return, cp.std_final_return, cp.n_seeds), (950.0, 50.0, 2));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.csv");
        write_summary_csv(&path, &rows).unwrap();
        assert_eq!(read_summary_csv(&path).unwrap(), rows);
        assert!(summary_text(&rows).contains("950.0 ± 50.0"));
    }

    #[test]
    fn experiment_file_expands_grid() {
        let file: ExperimentFile = serde_json::from_str(
            r#"{"envs":["cartpole"],"algorithms":["smac","sgd"],"seeds":[1,2,3],"total_timesteps":2000,"jobs":2}"#,
        )
        .unwrap();
        let spec = file.to_spec();
        assert_eq!(spec.configs.len(), 6);
        assert_eq!(spec.jobs, 2);
        assert!(spec.configs.iter().all(|c| c.total_timesteps == 2000));
        spec.validate().unwrap();

        let dup = ExperimentSpec { configs: vec![spec.configs[0].clone(), spec.configs[0].clone()], ..spec.clone() };
        assert!(dup.validate().is_err());
        assert!(serde_json::from_str::<ExperimentFile>(r#"{"bogus":1}"#).is_err());
        assert_eq!(ExperimentFile::default().to_spec().configs.len(), 60);
    }

    #[test]
    fn svg_has_one_series_per_algorithm() {
        let pts: Vec<(f64, f64, f64)> = (0..100).map(|i| (i as f64, i as f64, 0.0)).collect();
        let svg = render_svg(
            "t",
            "y",
            &[Series { label: "smac".into(), points: pts.clone() }, Series { label: "sgd".into(), points: pts }],
        );
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(">smac<") && svg.contains(">sgd<"));
    }
}
