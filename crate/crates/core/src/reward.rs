//! Reward terms for one rollout group.
//!
//! ```text
//! R      = λ·R_acc + (1-λ)·R_tool + R_qual
//! R_tool = R_fsm + R_util
//! ```
//!
//! Scoring runs in two passes. Pass 1 computes the per-trajectory terms
//! (`R_acc`, `R_fsm`, `R_qual`, zoom and detection flags). Pass 2 estimates
//! the group's utility gap Δ(q) and injects either the adaptive or the
//! fallback utility reward, using modulation factors read from a calibrator
//! snapshot taken before the current step's EMA update.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{modulation_factors, CalibrationParams, CalibratorView, Modulation};
use crate::protocol::{validate_with, FsmVerdict, StructuralPenalty, Trajectory, Violation};
use crate::types::{au_set_f1, AuSet, Prediction, TaskLabels};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    /// Weight of the task reward against the tool reward.
    pub lambda: f64,
    /// AU weight inside the task reward; the emotion weight is `1 - w_au`.
    pub w_au: f64,
    pub r_wrong: f64,
    /// Half-width of the neutral band around Δ = 0.
    pub epsilon: f64,
    pub r_pos: f64,
    pub r_neg: f64,
    /// Performance gate of the fallback reward.
    pub s_high: f64,
    pub h_scale: f64,
    pub h_slope: f64,
    pub kappa_fsm: f64,
    pub r_fsm_min: f64,
    pub r_qual_min: f64,
    /// Penalty per quality flag before clamping at `r_qual_min`.
    pub qual_flag_penalty: f64,
    /// Longest thought (in characters) that is not flagged.
    pub thought_len_cap: usize,
    /// Constant utility reward for zooming when the zoom-bonus wiring is active.
    pub zoom_bonus: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            lambda: 0.7,
            w_au: 0.5,
            r_wrong: -0.5,
            epsilon: 0.05,
            r_pos: 0.3,
            r_neg: -0.3,
            s_high: 0.8,
            h_scale: 1.0,
            h_slope: 2.0,
            kappa_fsm: 0.2,
            r_fsm_min: -1.0,
            r_qual_min: -0.3,
            qual_flag_penalty: 0.2,
            thought_len_cap: 2048,
            zoom_bonus: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("reward.{field}: {reason}")]
pub struct RewardParamsError {
    pub field: &'static str,
    pub reason: &'static str,
}

impl RewardParams {
    pub fn w_y(&self) -> f64 {
        1.0 - self.w_au
    }

    pub fn structural_penalty(&self) -> StructuralPenalty {
        StructuralPenalty {
            kappa: self.kappa_fsm,
            floor: self.r_fsm_min,
        }
    }

    pub fn check(&self) -> Result<(), RewardParamsError> {
        let err = |field, reason| Err(RewardParamsError { field, reason });
        let all = [
            self.lambda,
            self.w_au,
            self.r_wrong,
            self.epsilon,
            self.r_pos,
            self.r_neg,
            self.s_high,
            self.h_scale,
            self.h_slope,
            self.kappa_fsm,
            self.r_fsm_min,
            self.r_qual_min,
            self.qual_flag_penalty,
            self.zoom_bonus,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return err("*", "all parameters must be finite");
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return err("lambda", "must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.w_au) {
            return err("w_au", "must lie in [0, 1]");
        }
        if self.w_au == 1.0 {
            return err("w_au", "emotion weight 1 - w_au must stay positive");
        }
        if self.r_wrong >= 0.0 {
            return err("r_wrong", "must be negative");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return err("epsilon", "must lie in (0, 1)");
        }
        if self.r_pos <= 0.0 {
            return err("r_pos", "must be positive");
        }
        if self.r_neg >= 0.0 {
            return err("r_neg", "must be negative");
        }
        if !(self.s_high > 0.0 && self.s_high <= 1.0) {
            return err("s_high", "must lie in (0, 1]");
        }
        if self.h_scale <= 0.0 || self.h_slope <= 0.0 {
            return err("h_scale", "penalty curve constants must be positive");
        }
        if self.kappa_fsm < 0.0 || self.r_fsm_min > 0.0 {
            return err("kappa_fsm", "structural penalty must be non-positive");
        }
        if self.r_qual_min > 0.0 || self.qual_flag_penalty < 0.0 {
            return err("r_qual_min", "quality reward must be non-positive");
        }
        Ok(())
    }
}

/// Which utility term a trajectory received.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UtilBranch {
    AdaptiveConsistent,
    AdaptiveLazyPenalty,
    AdaptiveUnnecPenalty,
    AdaptiveNeutral,
    FallbackHigh,
    FallbackLow,
    /// Constant zoom bonus (zoom-biased ablation); replaces both other families.
    ZoomBonus,
}

impl UtilBranch {
    pub fn is_adaptive(self) -> bool {
        matches!(
            self,
            UtilBranch::AdaptiveConsistent
                | UtilBranch::AdaptiveLazyPenalty
                | UtilBranch::AdaptiveUnnecPenalty
                | UtilBranch::AdaptiveNeutral
        )
    }

    pub fn is_fallback(self) -> bool {
        matches!(self, UtilBranch::FallbackHigh | UtilBranch::FallbackLow)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub r_fsm: f64,
    pub r_util: f64,
    pub r_tool: f64,
    pub r_qual: f64,
    pub total: f64,
    pub util_branch: UtilBranch,
    /// Δ(q) seen by this trajectory when it took an adaptive branch.
    pub delta_used: Option<f64>,
}

/// G rollouts of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub query_id: String,
    pub labels: TaskLabels,
    pub trajectories: Vec<Trajectory>,
}

/// Contrastive partition of a group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupUtility {
    pub z_plus: Vec<usize>,
    pub z_minus: Vec<usize>,
    /// Detection failures, left out of the estimate.
    pub excluded: Vec<usize>,
    pub delta: Option<f64>,
}

impl GroupUtility {
    pub fn is_excluded(&self, i: usize) -> bool {
        self.excluded.contains(&i)
    }
}

/// Dense task reward. A missing prediction counts as a wrong emotion with an empty AU set.
pub fn task_reward(pred: Option<&Prediction>, labels: &TaskLabels, params: &RewardParams) -> f64 {
    let empty = AuSet::new();
    let (correct, aus) = match pred {
        Some(p) => (p.emotion == labels.emotion, &p.aus),
        None => (false, &empty),
    };
    let f1 = au_set_f1(aus, &labels.aus);
    if correct {
        params.w_y() + params.w_au * f1
    } else {
        params.r_wrong + 0.5 * params.w_au * f1
    }
}

/// Δ(q) from per-trajectory task rewards; detection failures are excluded.
pub fn utility_from_flags(zoomed: &[bool], detected: &[bool], r_acc: &[f64]) -> GroupUtility {
    let mut u = GroupUtility {
        z_plus: Vec::new(),
        z_minus: Vec::new(),
        excluded: Vec::new(),
        delta: None,
    };
    for i in 0..r_acc.len() {
        if !detected[i] {
            u.excluded.push(i);
        } else if zoomed[i] {
            u.z_plus.push(i);
        } else {
            u.z_minus.push(i);
        }
    }
    if !u.z_plus.is_empty() && !u.z_minus.is_empty() {
        let mean = |idx: &[usize]| idx.iter().map(|&i| r_acc[i]).sum::<f64>() / idx.len() as f64;
        u.delta = Some(mean(&u.z_plus) - mean(&u.z_minus));
    }
    u
}

pub fn group_utility(group: &RolloutGroup, params: &RewardParams) -> GroupUtility {
    let r_acc: Vec<f64> = group
        .trajectories
        .iter()
        .map(|t| task_reward(t.prediction(), &group.labels, params))
        .collect();
    let zoomed: Vec<bool> = group.trajectories.iter().map(Trajectory::zoom_used).collect();
    let detected: Vec<bool> = group.trajectories.iter().map(Trajectory::detection_ok).collect();
    utility_from_flags(&zoomed, &detected, &r_acc)
}

/// Bounded increasing penalty magnitude `h(d) = h_scale · tanh(h_slope · d)`.
pub fn penalty_magnitude(abs_delta: f64, params: &RewardParams) -> f64 {
    debug_assert!(abs_delta >= 0.0);
    params.h_scale * (params.h_slope * abs_delta).tanh()
}

pub fn adaptive_utility_reward(
    zoomed: bool,
    delta: f64,
    phi: Modulation,
    params: &RewardParams,
) -> (f64, UtilBranch) {
    if delta.abs() < params.epsilon {
        return (params.r_pos, UtilBranch::AdaptiveNeutral);
    }
    let beneficial = delta >= params.epsilon;
    match (beneficial, zoomed) {
        (true, true) | (false, false) => (params.r_pos, UtilBranch::AdaptiveConsistent),
        (true, false) => (
            -penalty_magnitude(delta.abs(), params) * phi.lazy,
            UtilBranch::AdaptiveLazyPenalty,
        ),
        (false, true) => (
            -penalty_magnitude(delta.abs(), params) * phi.unnec,
            UtilBranch::AdaptiveUnnecPenalty,
        ),
    }
}

/// Coarse task-performance indicator `s = max(1[ŷ = y*], F1)`.
pub fn performance_indicator(pred: Option<&Prediction>, labels: &TaskLabels) -> f64 {
    match pred {
        Some(p) if p.emotion == labels.emotion => 1.0,
        Some(p) => au_set_f1(&p.aus, &labels.aus),
        None => au_set_f1(&AuSet::new(), &labels.aus),
    }
}

/// Performance-gated fallback; ignores the zoom decision entirely.
pub fn fallback_utility_reward(traj: &Trajectory, labels: &TaskLabels, params: &RewardParams) -> (f64, UtilBranch) {
    if performance_indicator(traj.prediction(), labels) >= params.s_high {
        (params.r_pos, UtilBranch::FallbackHigh)
    } else {
        (params.r_neg, UtilBranch::FallbackLow)
    }
}

/// Utility cascade for trajectory `index` of its group: adaptive when Δ(q) is
/// defined and the trajectory took part in estimating it, fallback otherwise.
pub fn utility_reward(
    traj: &Trajectory,
    index: usize,
    group_util: &GroupUtility,
    phi: Modulation,
    labels: &TaskLabels,
    params: &RewardParams,
) -> (f64, UtilBranch) {
    match group_util.delta {
        Some(delta) if !group_util.is_excluded(index) => {
            adaptive_utility_reward(traj.zoom_used(), delta, phi, params)
        }
        _ => fallback_utility_reward(traj, labels, params),
    }
}

/// Bounded structural quality penalty. Flags: more than one answer, an empty AU
/// prediction claimed with high confidence, an oversized thought, and
/// malformed events.
pub fn quality_reward(traj: &Trajectory, verdict: &FsmVerdict, params: &RewardParams) -> f64 {
    let mut flags = 0usize;
    if traj.answer_count() > 1 {
        flags += 1;
    }
    if let Some((pred, true)) = traj.first_answer() {
        if pred.aus.is_empty() {
            flags += 1;
        }
    }
    if traj
        .events
        .iter()
        .filter_map(|e| e.thought.as_deref())
        .any(|t| t.chars().count() > params.thought_len_cap)
    {
        flags += 1;
    }
    if verdict.has(Violation::MalformedEvent) {
        flags += 1;
    }
    if flags == 0 {
        0.0
    } else {
        (-params.qual_flag_penalty * flags as f64).max(params.r_qual_min)
    }
}

/// Which parts of the utility reward are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardWiring {
    /// Use the contrastive (adaptive) branch when Δ(q) is defined.
    pub contrastive: bool,
    /// Read modulation factors from the calibrator; otherwise pin them to (1, 1).
    pub calibrated: bool,
    /// Replace the whole utility term by `zoom_bonus · z_i`.
    pub zoom_bonus: bool,
}

impl Default for RewardWiring {
    fn default() -> Self {
        Self {
            contrastive: true,
            calibrated: true,
            zoom_bonus: false,
        }
    }
}

/// Pass-1 terms of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTerms {
    pub r_acc: f64,
    pub verdict: FsmVerdict,
    pub r_qual: f64,
    pub zoomed: bool,
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupScore {
    pub utility: GroupUtility,
    /// Factors applied to this group's adaptive penalties.
    pub modulation: Modulation,
    pub breakdowns: Vec<RewardBreakdown>,
}

impl GroupScore {
    pub fn totals(&self) -> Vec<f64> {
        self.breakdowns.iter().map(|b| b.total).collect()
    }
}

/// Scores rollout groups under one parameter set and wiring.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardEngine {
    pub params: RewardParams,
    pub wiring: RewardWiring,
    pub calibration: CalibrationParams,
    pub budget: usize,
}

impl RewardEngine {
    pub fn new(params: RewardParams, wiring: RewardWiring, calibration: CalibrationParams, budget: usize) -> Self {
        Self {
            params,
            wiring,
            calibration,
            budget,
        }
    }

    pub fn terms(&self, traj: &Trajectory, labels: &TaskLabels) -> TrajectoryTerms {
        let verdict = validate_with(traj, self.budget, &self.params.structural_penalty());
        let r_qual = quality_reward(traj, &verdict, &self.params);
        TrajectoryTerms {
            r_acc: task_reward(traj.prediction(), labels, &self.params),
            verdict,
            r_qual,
            zoomed: traj.zoom_used(),
            detected: traj.detection_ok(),
        }
    }

    pub fn modulation(&self, view: &CalibratorView, labels: &TaskLabels) -> Modulation {
        if self.wiring.calibrated {
            modulation_factors(view, labels.emotion, &self.calibration)
        } else {
            Modulation::NEUTRAL
        }
    }

    pub fn score_group(&self, group: &RolloutGroup, view: &CalibratorView) -> GroupScore {
        let p = &self.params;
        let terms: Vec<TrajectoryTerms> = group
            .trajectories
            .iter()
            .map(|t| self.terms(t, &group.labels))
            .collect();

        let zoomed: Vec<bool> = terms.iter().map(|t| t.zoomed).collect();
        let detected: Vec<bool> = terms.iter().map(|t| t.detected).collect();
        let r_acc: Vec<f64> = terms.iter().map(|t| t.r_acc).collect();
        let utility = utility_from_flags(&zoomed, &detected, &r_acc);
        let modulation = self.modulation(view, &group.labels);

        let breakdowns = group
            .trajectories
            .iter()
            .zip(&terms)
            .enumerate()
            .map(|(i, (traj, t))| {
                let (r_util, util_branch) = if self.wiring.zoom_bonus {
                    (if t.zoomed { p.zoom_bonus } else { 0.0 }, UtilBranch::ZoomBonus)
                } else if self.wiring.contrastive {
                    utility_reward(traj, i, &utility, modulation, &group.labels, p)
                } else {
                    fallback_utility_reward(traj, &group.labels, p)
                };
                let delta_used = if util_branch.is_adaptive() { utility.delta } else { None };
                let r_tool = t.verdict.r_fsm + r_util;
                RewardBreakdown {
                    r_acc: t.r_acc,
                    r_fsm: t.verdict.r_fsm,
                    r_util,
                    r_tool,
                    r_qual: t.r_qual,
                    total: p.lambda * t.r_acc + (1.0 - p.lambda) * r_tool + t.r_qual,
                    util_branch,
                    delta_used,
                }
            })
            .collect();

        GroupScore {
            utility,
            modulation,
            breakdowns,
        }
    }
}
