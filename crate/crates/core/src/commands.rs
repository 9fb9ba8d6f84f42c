//! Subcommand bodies. `main` only parses arguments and maps errors to exit codes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::calibration::{CalibratorCheckpoint, CalibratorView, EmaCalibrator};
use crate::config::{load_config, resolve_variant, train_spec, ExperimentConfig};
use crate::log::{read_log, TrajectoryRecord};
use crate::protocol::validate;
use crate::report::{report_dir, write_config, write_run, RunReport};
use crate::reward::{RewardBreakdown, RolloutGroup};
use crate::sim::world_table;
use crate::train::run_training;

/// Exit status 1: the inputs were fine but the domain check failed.
pub const EXIT_DOMAIN: i32 = 1;
/// Exit status 2: unreadable or unparsable input.
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl ToString) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: message.to_string(),
        }
    }

    pub fn domain(message: impl ToString) -> Self {
        Failure {
            code: EXIT_DOMAIN,
            message: message.to_string(),
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))
}

/// Loads `path` (if any) and applies `overrides` on top.
pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig, Failure> {
    let text = path.map(read_text).transpose()?;
    load_config(text.as_deref(), overrides).map_err(|e| match path {
        Some(p) => Failure::input(format!("{}: {e}", p.display())),
        None => Failure::input(e),
    })
}

/// Pairs up trailing `--dotted.key value` arguments.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, Failure> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(k) = it.next() {
        let key = k
            .strip_prefix("--")
            .filter(|k| !k.is_empty())
            .ok_or_else(|| Failure::input(format!("expected `--key value` override, got `{k}`")))?;
        let value = it
            .next()
            .ok_or_else(|| Failure::input(format!("override `--{key}` has no value")))?;
        out.push((key.to_string(), value.clone()));
    }
    Ok(out)
}

pub fn train(cfg: &ExperimentConfig, out: &Path, parallel: bool) -> Result<RunReport, Failure> {
    let spec = train_spec(cfg);
    write_config(out, cfg).map_err(Failure::domain)?;
    for &seed in &cfg.seeds {
        let run = run_training(&spec, seed, parallel).map_err(|e| Failure::domain(format!("seed {seed}: {e}")))?;
        write_run(out, &run).map_err(Failure::domain)?;
    }
    report_dir(out).map_err(Failure::domain)
}

pub fn report(dir: &Path) -> Result<RunReport, Failure> {
    if !dir.is_dir() {
        return Err(Failure::input(format!("{}: not a directory", dir.display())));
    }
    report_dir(dir).map_err(Failure::domain)
}

fn open_log(path: &Path) -> Result<Vec<TrajectoryRecord>, Failure> {
    let file = fs::File::open(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    let (records, errors) =
        read_log(BufReader::new(file)).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    if !errors.is_empty() {
        let lines: Vec<String> = errors.iter().map(|e| format!("{}: {e}", path.display())).collect();
        return Err(Failure::input(lines.join("\n")));
    }
    Ok(records)
}

/// Verdict lines plus a summary; fails with exit 1 if any trajectory has a violation.
pub fn validate_log(path: &Path, budget: usize) -> Result<String, Failure> {
    let records = open_log(path)?;
    let mut out = String::new();
    let mut bad = 0;
    for r in &records {
        let v = validate(&r.trajectory, budget);
        if v.legal {
            let _ = writeln!(out, "{}\tok", r.id);
        } else {
            bad += 1;
            let names: Vec<String> = v.violations.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "{}\tviolation\t{}", r.id, names.join(","));
        }
    }
    let _ = writeln!(out, "{} trajectories, {} legal, {} with violations", records.len(), records.len() - bad, bad);
    if bad > 0 {
        Err(Failure {
            code: EXIT_DOMAIN,
            message: out,
        })
    } else {
        Ok(out)
    }
}

#[derive(Debug, Serialize)]
struct ScoreLine<'a> {
    id: &'a str,
    group_id: &'a str,
    delta: Option<f64>,
    phi_lazy: f64,
    phi_unnec: f64,
    #[serde(flatten)]
    breakdown: &'a RewardBreakdown,
}

/// Scores every group of a log and returns JSONL breakdowns in log order.
///
/// Groups must hold exactly `optimizer.group_size` records. Without a
/// calibrator checkpoint every emotion is pre-activation, so φ = (1, 1).
pub fn score_log(log: &Path, cfg: &ExperimentConfig, calibrator: Option<&Path>) -> Result<String, Failure> {
    let records = open_log(log)?;
    let view: CalibratorView = match calibrator {
        Some(p) => {
            let ckpt: CalibratorCheckpoint = serde_json::from_str(&read_text(p)?)
                .map_err(|e| Failure::input(format!("{}: {e}", p.display())))?;
            EmaCalibrator::from_checkpoint(&ckpt).snapshot()
        }
        None => EmaCalibrator::new().snapshot(),
    };
    let engine = resolve_variant(cfg);

    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&TrajectoryRecord>> = BTreeMap::new();
    for r in &records {
        let g = groups.entry(&r.group_id).or_default();
        if g.is_empty() {
            order.push(&r.group_id);
        }
        g.push(r);
    }
    let g_size = cfg.optimizer.group_size;
    for id in &order {
        let members = &groups[id];
        if members.len() != g_size {
            return Err(Failure::domain(format!(
                "group `{id}` has {} trajectories, expected {g_size}",
                members.len()
            )));
        }
        if members.iter().any(|m| m.labels != members[0].labels) {
            return Err(Failure::domain(format!("group `{id}` mixes ground-truth labels")));
        }
    }

    let mut out = String::new();
    for id in &order {
        let members = &groups[id];
        let group = RolloutGroup {
            query_id: id.to_string(),
            labels: members[0].labels.clone(),
            trajectories: members.iter().map(|m| m.trajectory.clone()).collect(),
        };
        let score = engine.score_group(&group, &view);
        for (m, b) in members.iter().zip(&score.breakdowns) {
            let line = ScoreLine {
                id: &m.id,
                group_id: id,
                delta: score.utility.delta,
                phi_lazy: score.modulation.lazy,
                phi_unnec: score.modulation.unnec,
                breakdown: b,
            };
            out.push_str(&serde_json::to_string(&line).expect("score lines serialize"));
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn dump_world(cfg: &ExperimentConfig) -> String {
    world_table(&cfg.world)
}

/// Output directory: explicit flag, then the config, then `$ZOOMLAB_OUT/<variant>`, then `runs/<variant>`.
pub fn output_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig, env_root: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| env_root.unwrap_or_else(|| PathBuf::from("runs")).join(cfg.variant.name()))
}
