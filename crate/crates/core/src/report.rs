//! Run directories and aggregate reports.
//!
//! Layout written by `train`:
//!
//! ```text
//! <out>/config.json          resolved config
//! <out>/seed-<n>/metrics.csv one row per optimization step
//! <out>/seed-<n>/terminal.json
//! <out>/seed-<n>/policy.json
//! <out>/seed-<n>/calibrator.json
//! <out>/seed-<n>/trace.jsonl  calibrator checkpoint entering each step and the factors it used
//! <out>/seed-<n>/last_step.jsonl
//! <out>/report.json
//! <out>/plots/{accuracy_vs_step,zoom_ratio_vs_step,per_emotion}.csv
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{config_hash, ExperimentConfig, Variant};
use crate::log::serialize_trajectory;
use crate::train::{metrics_header, write_metrics_csv, RunArtifact, TerminalMetrics};
use crate::types::Emotion;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{0}: no seed-<n> run directories")]
    Empty(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn corrupt(path: &Path, message: impl ToString) -> ReportError {
    ReportError::Corrupt {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, ReportError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ReportError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| corrupt(path, e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ReportError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| corrupt(path, e))
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

pub fn write_config(out: &Path, cfg: &ExperimentConfig) -> Result<(), ReportError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_json(&out.join("config.json"), cfg)
}

/// Writes every per-seed artifact of one run.
pub fn write_run(out: &Path, run: &RunArtifact) -> Result<(), ReportError> {
    let dir = seed_dir(out, run.seed);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let path = dir.join("metrics.csv");
    let w = create(&path)?;
    write_metrics_csv(&run.metrics, w).map_err(|e| corrupt(&path, e))?;

    write_json(&dir.join("terminal.json"), &run.terminal)?;
    write_json(&dir.join("policy.json"), &run.policy)?;
    write_json(&dir.join("calibrator.json"), &run.calibrator.to_checkpoint())?;

    let path = dir.join("trace.jsonl");
    let mut w = create(&path)?;
    for t in &run.trace {
        let line = serde_json::to_string(t).map_err(|e| corrupt(&path, e))?;
        writeln!(w, "{line}").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join("last_step.jsonl");
    let mut w = create(&path)?;
    for r in &run.last_step {
        writeln!(w, "{}", serialize_trajectory(r)).map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return MeanStd { mean: f64::NAN, std: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedTerminal {
    pub seed: u64,
    pub accuracy: f64,
    pub au_f1: f64,
    pub zoom_ratio: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionAggregate {
    pub zoom_ratio: MeanStd,
    pub accuracy: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    pub config_hash: String,
    pub seeds: Vec<SeedTerminal>,
    pub accuracy: MeanStd,
    pub au_f1: MeanStd,
    pub zoom_ratio: MeanStd,
    pub mean_reward: MeanStd,
    pub per_emotion: BTreeMap<Emotion, EmotionAggregate>,
}

impl RunReport {
    pub fn new(cfg: &ExperimentConfig, terminals: &[(u64, TerminalMetrics)]) -> Self {
        let col = |f: fn(&TerminalMetrics) -> f64| MeanStd::of(&terminals.iter().map(|(_, t)| f(t)).collect::<Vec<_>>());
        let mut per_emotion = BTreeMap::new();
        for e in Emotion::ALL {
            let stats: Vec<_> = terminals.iter().filter_map(|(_, t)| t.per_emotion.get(&e)).collect();
            if stats.is_empty() {
                continue;
            }
            per_emotion.insert(
                e,
                EmotionAggregate {
                    zoom_ratio: MeanStd::of(&stats.iter().map(|s| s.zoom_ratio).collect::<Vec<_>>()),
                    accuracy: MeanStd::of(&stats.iter().map(|s| s.accuracy).collect::<Vec<_>>()),
                },
            );
        }
        RunReport {
            variant: cfg.variant,
            config_hash: config_hash(cfg),
            seeds: terminals
                .iter()
                .map(|(seed, t)| SeedTerminal {
                    seed: *seed,
                    accuracy: t.accuracy,
                    au_f1: t.au_f1,
                    zoom_ratio: t.zoom_ratio,
                    mean_reward: t.mean_reward,
                })
                .collect(),
            accuracy: col(|t| t.accuracy),
            au_f1: col(|t| t.au_f1),
            zoom_ratio: col(|t| t.zoom_ratio),
            mean_reward: col(|t| t.mean_reward),
            per_emotion,
        }
    }
}

/// Seeds with a `seed-<n>` directory under `out`, ascending.
fn list_seeds(out: &Path) -> Result<Vec<u64>, ReportError> {
    let mut seeds = Vec::new();
    for entry in fs::read_dir(out).map_err(io_err(out))? {
        let entry = entry.map_err(io_err(out))?;
        let name = entry.file_name();
        if let Some(n) = name.to_str().and_then(|s| s.strip_prefix("seed-")).and_then(|s| s.parse().ok()) {
            if entry.path().is_dir() {
                seeds.push(n);
            }
        }
    }
    seeds.sort_unstable();
    Ok(seeds)
}

/// `(step, accuracy, zoom_ratio)` per row; the header must match the current schema.
fn read_curves(path: &Path) -> Result<Vec<(usize, String, String)>, ReportError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(file);
    let header: Vec<String> = r.headers().map_err(|e| corrupt(path, e))?.iter().map(String::from).collect();
    if header != metrics_header() {
        return Err(corrupt(path, "unexpected metrics header"));
    }
    let col = |name: &str| header.iter().position(|h| h == name).expect("schema column");
    let (step, acc, zoom) = (col("step"), col("accuracy"), col("zoom_ratio"));
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| corrupt(path, e))?;
        let s: usize = rec[step]
            .parse()
            .map_err(|_| corrupt(path, format!("row {}: bad step", i + 1)))?;
        for c in [acc, zoom] {
            rec[c]
                .parse::<f64>()
                .map_err(|_| corrupt(path, format!("row {}: bad value in column {}", i + 1, header[c])))?;
        }
        rows.push((s, rec[acc].to_string(), rec[zoom].to_string()));
    }
    if rows.is_empty() {
        return Err(corrupt(path, "no metrics rows"));
    }
    Ok(rows)
}

/// Rebuilds the aggregate report and plot tables from the files under `out`.
pub fn report_dir(out: &Path) -> Result<RunReport, ReportError> {
    let cfg: ExperimentConfig = read_json(&out.join("config.json"))?;
    let seeds = list_seeds(out)?;
    if seeds.is_empty() {
        return Err(ReportError::Empty(out.to_path_buf()));
    }
    let mut terminals = Vec::new();
    let mut curves = Vec::new();
    for &seed in &seeds {
        let dir = seed_dir(out, seed);
        terminals.push((seed, read_json::<TerminalMetrics>(&dir.join("terminal.json"))?));
        curves.push((seed, read_curves(&dir.join("metrics.csv"))?));
    }
    let report = RunReport::new(&cfg, &terminals);

    write_json(&out.join("report.json"), &report)?;
    let plots = out.join("plots");
    fs::create_dir_all(&plots).map_err(io_err(&plots))?;
    for (name, pick) in [("accuracy", 1), ("zoom_ratio", 2)] {
        let path = plots.join(format!("{name}_vs_step.csv"));
        let mut w = csv::Writer::from_writer(create(&path)?);
        let mut write = || -> csv::Result<()> {
            w.write_record(["seed", "step", name])?;
            for (seed, rows) in &curves {
                for (step, acc, zoom) in rows {
                    let v = if pick == 1 { acc } else { zoom };
                    w.write_record([seed.to_string(), step.to_string(), v.clone()])?;
                }
            }
            w.flush()?;
            Ok(())
        };
        write().map_err(|e| corrupt(&path, e))?;
    }
    let path = plots.join("per_emotion.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let mut write = || -> csv::Result<()> {
        w.write_record(["emotion", "zoom_ratio_mean", "zoom_ratio_std", "accuracy_mean", "accuracy_std"])?;
        for (e, a) in &report.per_emotion {
            w.write_record([
                e.name().to_string(),
                a.zoom_ratio.mean.to_string(),
                a.zoom_ratio.std.to_string(),
                a.accuracy.mean.to_string(),
                a.accuracy.std.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| corrupt(&path, e))?;
    Ok(report)
}
