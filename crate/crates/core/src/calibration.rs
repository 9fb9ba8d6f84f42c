//! Emotion-wise EMA of zoom utility and the modulation factors derived from it.
//!
//! The calibrator has a single writer (the training loop). Scoring reads only
//! [`CalibratorView`] snapshots taken before the step's update.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Emotion;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationParams {
    /// EMA rate in (0, 1].
    pub rho: f64,
    /// Updates an emotion must receive before its factors leave (1, 1).
    pub activation_min_updates: u64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub phi_slope: f64,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        Self {
            rho: 0.1,
            activation_min_updates: 10,
            phi_min: 0.5,
            phi_max: 1.5,
            phi_slope: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("calibration.{field}: {reason}")]
pub struct CalibrationParamsError {
    pub field: &'static str,
    pub reason: &'static str,
}

impl CalibrationParams {
    pub fn check(&self) -> Result<(), CalibrationParamsError> {
        let err = |field, reason| Err(CalibrationParamsError { field, reason });
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return err("rho", "must lie in (0, 1]");
        }
        if self.activation_min_updates < 1 {
            return err("activation_min_updates", "must be at least 1");
        }
        if !(self.phi_min > 0.0 && self.phi_min <= 1.0) {
            return err("phi_min", "must lie in (0, 1]");
        }
        if !(self.phi_max >= 1.0 && self.phi_max.is_finite()) {
            return err("phi_max", "must be finite and at least 1");
        }
        if !(self.phi_slope > 0.0 && self.phi_slope.is_finite()) {
            return err("phi_slope", "must be positive");
        }
        Ok(())
    }
}

/// Penalty multipliers for a missed beneficial zoom (`lazy`) and an unnecessary zoom (`unnec`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    pub lazy: f64,
    pub unnec: f64,
}

impl Modulation {
    pub const NEUTRAL: Modulation = Modulation {
        lazy: 1.0,
        unnec: 1.0,
    };
}

/// Immutable copy of the calibrator state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibratorView {
    delta_bar: [f64; Emotion::COUNT],
    counts: [u64; Emotion::COUNT],
    step: u64,
}

impl CalibratorView {
    pub fn delta_bar(&self, e: Emotion) -> f64 {
        self.delta_bar[e.index()]
    }

    pub fn count(&self, e: Emotion) -> u64 {
        self.counts[e.index()]
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps the running utility of emotion `e` to `(φ_lazy, φ_unnec)`.
///
/// Before activation both factors are exactly 1. Afterwards
/// `φ_lazy = φ_min + (φ_max-φ_min)·σ(k·Δ̄)` and `φ_unnec` uses `σ(-k·Δ̄)`.
pub fn modulation_factors(view: &CalibratorView, e: Emotion, params: &CalibrationParams) -> Modulation {
    if view.count(e) < params.activation_min_updates {
        return Modulation::NEUTRAL;
    }
    let span = params.phi_max - params.phi_min;
    let x = params.phi_slope * view.delta_bar(e);
    Modulation {
        lazy: params.phi_min + span * logistic(x),
        unnec: params.phi_min + span * logistic(-x),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmaCalibrator {
    state: CalibratorView,
}

impl Default for EmaCalibrator {
    fn default() -> Self {
        Self::new()
    }
}

impl EmaCalibrator {
    pub fn new() -> Self {
        Self {
            state: CalibratorView {
                delta_bar: [0.0; Emotion::COUNT],
                counts: [0; Emotion::COUNT],
                step: 0,
            },
        }
    }

    pub fn snapshot(&self) -> CalibratorView {
        self.state
    }

    /// One EMA step: each emotion with a nonempty batch moves towards its batch mean.
    pub fn update(&mut self, batch: &BTreeMap<Emotion, Vec<f64>>, params: &CalibrationParams) {
        for (&e, deltas) in batch {
            if deltas.is_empty() {
                continue;
            }
            let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
            let i = e.index();
            self.state.delta_bar[i] = params.rho * mean + (1.0 - params.rho) * self.state.delta_bar[i];
            self.state.counts[i] += 1;
        }
        self.state.step += 1;
    }

    pub fn to_checkpoint(&self) -> CalibratorCheckpoint {
        CalibratorCheckpoint {
            step: self.state.step,
            emotions: Emotion::ALL
                .into_iter()
                .map(|e| {
                    (
                        e,
                        EmotionStat {
                            delta_bar: self.state.delta_bar(e),
                            count: self.state.count(e),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &CalibratorCheckpoint) -> Self {
        let mut cal = Self::new();
        cal.state.step = ckpt.step;
        for (e, stat) in &ckpt.emotions {
            cal.state.delta_bar[e.index()] = stat.delta_bar;
            cal.state.counts[e.index()] = stat.count;
        }
        cal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmotionStat {
    pub delta_bar: f64,
    pub count: u64,
}

/// JSON checkpoint of the calibrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibratorCheckpoint {
    pub step: u64,
    pub emotions: BTreeMap<Emotion, EmotionStat>,
}
