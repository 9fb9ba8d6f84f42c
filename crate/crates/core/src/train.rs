//! Training loop.
//!
//! Each step: sample a batch of queries, roll out G trajectories per query,
//! score every group against the calibrator snapshot taken at the start of the
//! step, update the policy, then feed the step's Δ(q) values to the calibrator.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{CalibratorCheckpoint, EmaCalibrator, Modulation};
use crate::grpo::{update_step, OptimizerConfig, OptimizerError, PolicyGroup};
use crate::log::TrajectoryRecord;
use crate::policy::PolicyParams;
use crate::reward::{GroupScore, RewardEngine, RolloutGroup};
use crate::sim::{rollout, sample_query, QueryKey, Rollout, SampleSpec, Split, WorldParams};
use crate::types::Emotion;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub engine: RewardEngine,
    pub optimizer: OptimizerConfig,
    pub world: WorldParams,
    pub steps: usize,
    /// Held-out queries scored once after the last step.
    pub eval_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("step {step}: {source}")]
    Optimizer {
        step: usize,
        #[source]
        source: OptimizerError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_r_acc: f64,
    pub accuracy: f64,
    pub au_f1: f64,
    pub zoom_ratio: f64,
    pub mean_abs_advantage: f64,
    pub kl: f64,
    pub entropy: f64,
    /// Share of trajectories that took an adaptive utility branch.
    pub adaptive_share: f64,
    /// Calibrator state after this step's update.
    pub delta_bar: [f64; Emotion::COUNT],
}

pub fn metrics_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "step",
        "mean_reward",
        "mean_r_acc",
        "accuracy",
        "au_f1",
        "zoom_ratio",
        "mean_abs_advantage",
        "kl",
        "entropy",
        "adaptive_share",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend(Emotion::ALL.iter().map(|e| format!("delta_bar_{}", e.name())));
    h
}

impl MetricsRow {
    fn fields(&self) -> Vec<String> {
        let mut v = vec![
            self.step.to_string(),
            self.mean_reward.to_string(),
            self.mean_r_acc.to_string(),
            self.accuracy.to_string(),
            self.au_f1.to_string(),
            self.zoom_ratio.to_string(),
            self.mean_abs_advantage.to_string(),
            self.kl.to_string(),
            self.entropy.to_string(),
            self.adaptive_share.to_string(),
        ];
        v.extend(self.delta_bar.iter().map(|d| d.to_string()));
        v
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(metrics_header())?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Factors applied to one group's adaptive penalties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiUse {
    pub emotion: Emotion,
    pub lazy: f64,
    pub unnec: f64,
}

/// Calibrator state entering a step and the factors that step used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub checkpoint: CalibratorCheckpoint,
    pub phi: Vec<PhiUse>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EmotionTerminal {
    pub queries: usize,
    pub accuracy: f64,
    pub zoom_ratio: f64,
}

/// Held-out evaluation of the final policy.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TerminalMetrics {
    pub queries: usize,
    pub accuracy: f64,
    pub au_f1: f64,
    pub zoom_ratio: f64,
    /// Mean training reward over the last ten steps.
    pub mean_reward: f64,
    pub per_emotion: BTreeMap<Emotion, EmotionTerminal>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifact {
    pub seed: u64,
    pub metrics: Vec<MetricsRow>,
    pub policy: PolicyParams,
    pub calibrator: EmaCalibrator,
    pub trace: Vec<StepTrace>,
    pub terminal: TerminalMetrics,
    /// Rollouts of the final step, in log form.
    pub last_step: Vec<TrajectoryRecord>,
}

struct ScoredGroup {
    sample: SampleSpec,
    rollouts: Vec<Rollout>,
    group: RolloutGroup,
    score: GroupScore,
}

fn map_indices<T: Send, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync + Send,
{
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

pub fn run_training(spec: &TrainSpec, seed: u64, parallel: bool) -> Result<RunArtifact, TrainError> {
    let opt = &spec.optimizer;
    let engine = &spec.engine;
    let reference = PolicyParams::initial(opt.init_zoom_prob);
    let mut policy = reference.clone();
    let mut cal = EmaCalibrator::new();
    let mut metrics = Vec::with_capacity(spec.steps);
    let mut trace = Vec::with_capacity(spec.steps);
    let mut last_step = Vec::new();

    for step in 0..spec.steps {
        let view = cal.snapshot();
        let checkpoint = cal.to_checkpoint();
        let scored: Vec<ScoredGroup> = map_indices(opt.batch_groups, parallel, |b| {
            let key = QueryKey {
                run_seed: seed,
                split: Split::Train,
                step: step as u64,
                index: b as u64,
            };
            let sample = sample_query(&spec.world, &key);
            let rollouts: Vec<Rollout> = (0..opt.group_size as u64)
                .map(|i| rollout(&policy, &sample, &spec.world, opt.turn_budget, &key, i))
                .collect();
            let group = RolloutGroup {
                query_id: sample.query_id.clone(),
                labels: spec.world.labels(sample.emotion),
                trajectories: rollouts.iter().map(|r| r.trajectory.clone()).collect(),
            };
            let score = engine.score_group(&group, &view);
            ScoredGroup {
                sample,
                rollouts,
                group,
                score,
            }
        });

        let policy_groups: Vec<PolicyGroup> = scored
            .iter()
            .map(|g| PolicyGroup {
                features: g.sample.features,
                decisions: g.rollouts.iter().map(|r| r.decision.clone()).collect(),
                rewards: g.score.totals(),
            })
            .collect();
        let (next, step_metrics) =
            update_step(&policy, &policy_groups, &reference, opt).map_err(|source| TrainError::Optimizer { step, source })?;
        policy = next;

        let mut deltas: BTreeMap<Emotion, Vec<f64>> = BTreeMap::new();
        for g in &scored {
            if let Some(d) = g.score.utility.delta {
                deltas.entry(g.sample.emotion).or_default().push(d);
            }
        }
        cal.update(&deltas, &engine.calibration);

        let n = (opt.batch_groups * opt.group_size) as f64;
        let all = || scored.iter().flat_map(|g| g.rollouts.iter());
        let breakdowns = || scored.iter().flat_map(|g| g.score.breakdowns.iter());
        let after = cal.snapshot();
        metrics.push(MetricsRow {
            step,
            mean_reward: step_metrics.mean_reward,
            mean_r_acc: breakdowns().map(|b| b.r_acc).sum::<f64>() / n,
            accuracy: all().filter(|r| r.correct).count() as f64 / n,
            au_f1: all().map(|r| r.au_f1).sum::<f64>() / n,
            zoom_ratio: step_metrics.zoom_ratio,
            mean_abs_advantage: step_metrics.mean_abs_advantage,
            kl: step_metrics.kl,
            entropy: step_metrics.entropy,
            adaptive_share: breakdowns().filter(|b| b.util_branch.is_adaptive()).count() as f64 / n,
            delta_bar: std::array::from_fn(|i| after.delta_bar(Emotion::ALL[i])),
        });
        trace.push(StepTrace {
            step,
            checkpoint,
            phi: scored
                .iter()
                .map(|g| {
                    let Modulation { lazy, unnec } = g.score.modulation;
                    PhiUse {
                        emotion: g.sample.emotion,
                        lazy,
                        unnec,
                    }
                })
                .collect(),
        });

        if step + 1 == spec.steps {
            last_step = scored
                .iter()
                .flat_map(|g| {
                    g.group.trajectories.iter().enumerate().map(|(i, t)| TrajectoryRecord {
                        id: format!("{}-{i}", g.group.query_id),
                        group_id: g.group.query_id.clone(),
                        labels: g.group.labels.clone(),
                        trajectory: t.clone(),
                    })
                })
                .collect();
        }
    }

    let mut terminal = evaluate(&policy, &spec.world, opt.turn_budget, seed, spec.eval_queries, parallel);
    let tail = metrics.len().clamp(1, 10);
    terminal.mean_reward = metrics.iter().rev().take(tail).map(|m| m.mean_reward).sum::<f64>() / tail as f64;
    Ok(RunArtifact {
        seed,
        metrics,
        policy,
        calibrator: cal,
        trace,
        terminal,
        last_step,
    })
}

/// One rollout per held-out query. Query and outcome streams depend only on the
/// seed and the query index, so different policies are compared on common draws.
pub fn evaluate(
    policy: &PolicyParams,
    world: &WorldParams,
    budget: usize,
    seed: u64,
    queries: usize,
    parallel: bool,
) -> TerminalMetrics {
    let results: Vec<(Emotion, Rollout)> = map_indices(queries, parallel, |i| {
        let key = QueryKey {
            run_seed: seed,
            split: Split::Eval,
            step: 0,
            index: i as u64,
        };
        let sample = sample_query(world, &key);
        (sample.emotion, rollout(policy, &sample, world, budget, &key, 0))
    });
    let mut t = TerminalMetrics {
        queries,
        ..Default::default()
    };
    for (e, r) in &results {
        let zoomed = r.trajectory.zoom_used();
        t.accuracy += r.correct as u8 as f64;
        t.au_f1 += r.au_f1;
        t.zoom_ratio += zoomed as u8 as f64;
        let pe = t.per_emotion.entry(*e).or_default();
        pe.queries += 1;
        pe.accuracy += r.correct as u8 as f64;
        pe.zoom_ratio += zoomed as u8 as f64;
    }
    let n = queries.max(1) as f64;
    t.accuracy /= n;
    t.au_f1 /= n;
    t.zoom_ratio /= n;
    for pe in t.per_emotion.values_mut() {
        pe.accuracy /= pe.queries as f64;
        pe.zoom_ratio /= pe.queries as f64;
    }
    t
}
