//! Group-relative advantages and the regularized policy-gradient step.
//!
//! The surrogate maximized per step is
//!
//! ```text
//! J(θ) = 1/B · Σ_groups [ Σ_i A_i · log π_θ(d_i | x_g) − kl_coef · KL(π_θ ‖ π_ref)(x_g) + ent_coef · H(π_θ)(x_g) ]
//! ```
//!
//! where `x_g` are the query's features and `d_i` the decision of rollout `i`.
//! Rollouts whose detection failed made no decision and contribute no log-probability.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{add_logprob_grad, decision_logprob, decision_stats, Decision, Features, Gradient, PolicyParams, N_PARAMS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub kl_coef: f64,
    pub ent_coef: f64,
    /// Rollouts per query (G).
    pub group_size: usize,
    /// Event budget per trajectory (T).
    pub turn_budget: usize,
    pub std_floor: f64,
    /// Query groups per optimization step.
    pub batch_groups: usize,
    /// Zoom probability of the initial (and reference) policy.
    pub init_zoom_prob: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            kl_coef: 0.1,
            ent_coef: 0.01,
            group_size: 5,
            turn_budget: 4,
            std_floor: 1e-6,
            batch_groups: 32,
            init_zoom_prob: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("optimizer.{field}: {reason}")]
pub struct OptimizerConfigError {
    pub field: &'static str,
    pub reason: &'static str,
}

impl OptimizerConfig {
    pub fn check(&self) -> Result<(), OptimizerConfigError> {
        let err = |field, reason| Err(OptimizerConfigError { field, reason });
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err("learning_rate", "must be positive");
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return err("kl_coef", "must be non-negative");
        }
        if !(self.ent_coef >= 0.0 && self.ent_coef.is_finite()) {
            return err("ent_coef", "must be non-negative");
        }
        if self.group_size < 2 {
            return err("group_size", "must be at least 2");
        }
        if self.turn_budget < 2 {
            return err("turn_budget", "must be at least 2");
        }
        if !(self.std_floor > 0.0) {
            return err("std_floor", "must be positive");
        }
        if self.batch_groups < 1 {
            return err("batch_groups", "must be at least 1");
        }
        if !(self.init_zoom_prob > 0.0 && self.init_zoom_prob < 1.0) {
            return err("init_zoom_prob", "must lie in (0, 1)");
        }
        Ok(())
    }
}

/// `(R_i − μ) / max(σ, std_floor)` with the population standard deviation.
pub fn group_advantages(rewards: &[f64], std_floor: f64) -> Vec<f64> {
    // The rounded mean of equal values can miss them by an ulp, so equality is
    // tested on the inputs rather than through σ.
    if rewards.iter().all(|r| *r == rewards[0]) {
        return vec![0.0; rewards.len()];
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let denom = var.sqrt().max(std_floor);
    rewards.iter().map(|r| (r - mean) / denom).collect()
}

/// One query group as the optimizer sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGroup {
    pub features: Features,
    /// `None` where detection failed and no decision was taken.
    pub decisions: Vec<Option<Decision>>,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("non-finite gradient component {index}")]
    NonFiniteGradient { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StepMetrics {
    pub mean_reward: f64,
    pub mean_abs_advantage: f64,
    pub zoom_ratio: f64,
    pub kl: f64,
    pub entropy: f64,
}

fn advantages_of(groups: &[PolicyGroup], cfg: &OptimizerConfig) -> Vec<Vec<f64>> {
    groups.iter().map(|g| group_advantages(&g.rewards, cfg.std_floor)).collect()
}

/// Surrogate value at `params` with advantages computed from the groups' rewards.
pub fn surrogate(params: &PolicyParams, reference: &PolicyParams, groups: &[PolicyGroup], cfg: &OptimizerConfig) -> f64 {
    let advs = advantages_of(groups, cfg);
    let mut total = 0.0;
    for (g, adv) in groups.iter().zip(&advs) {
        let pg: f64 = g
            .decisions
            .iter()
            .zip(adv)
            .filter_map(|(d, a)| d.as_ref().map(|d| a * decision_logprob(params, &g.features, d)))
            .sum();
        let s = decision_stats(params, reference, &g.features);
        total += pg - cfg.kl_coef * s.kl + cfg.ent_coef * s.entropy;
    }
    total / groups.len() as f64
}

pub fn surrogate_gradient(
    params: &PolicyParams,
    reference: &PolicyParams,
    groups: &[PolicyGroup],
    cfg: &OptimizerConfig,
) -> Gradient {
    gradient_and_metrics(params, reference, groups, cfg).0
}

fn gradient_and_metrics(
    params: &PolicyParams,
    reference: &PolicyParams,
    groups: &[PolicyGroup],
    cfg: &OptimizerConfig,
) -> (Gradient, StepMetrics) {
    let advs = advantages_of(groups, cfg);
    let mut grad = [0.0; N_PARAMS];
    let mut m = StepMetrics::default();
    let mut rollouts = 0usize;
    let mut zoomed = 0usize;
    for (g, adv) in groups.iter().zip(&advs) {
        for (d, a) in g.decisions.iter().zip(adv) {
            if let Some(d) = d {
                add_logprob_grad(&mut grad, params, &g.features, d, *a);
                zoomed += d.zoom as usize;
            }
            rollouts += 1;
        }
        let s = decision_stats(params, reference, &g.features);
        for k in 0..N_PARAMS {
            grad[k] += cfg.ent_coef * s.entropy_grad[k] - cfg.kl_coef * s.kl_grad[k];
        }
        m.mean_reward += g.rewards.iter().sum::<f64>();
        m.mean_abs_advantage += adv.iter().map(|a| a.abs()).sum::<f64>();
        m.kl += s.kl;
        m.entropy += s.entropy;
    }
    let b = groups.len() as f64;
    for v in grad.iter_mut() {
        *v /= b;
    }
    let n = rollouts.max(1) as f64;
    m.mean_reward /= n;
    m.mean_abs_advantage /= n;
    m.zoom_ratio = zoomed as f64 / n;
    m.kl /= b;
    m.entropy /= b;
    (grad, m)
}

/// One gradient-ascent step on the surrogate.
pub fn update_step(
    params: &PolicyParams,
    groups: &[PolicyGroup],
    reference: &PolicyParams,
    cfg: &OptimizerConfig,
) -> Result<(PolicyParams, StepMetrics), OptimizerError> {
    let (grad, metrics) = gradient_and_metrics(params, reference, groups, cfg);
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(OptimizerError::NonFiniteGradient { index });
    }
    let mut v = params.to_vec();
    for (p, g) in v.iter_mut().zip(&grad) {
        *p += cfg.learning_rate * g;
    }
    Ok((PolicyParams::from_slice(&v), metrics))
}
