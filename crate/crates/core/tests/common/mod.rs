#![allow(dead_code)]

pub mod calibration_checks;
pub mod fsm_oracle;
pub mod optimizer_cases;
pub mod reward_cases;
pub mod reward_oracle;
pub mod sim_checks;
pub mod training_checks;

use zoomlab::protocol::{canonical_boxes, ActionKind, ObservationKind, Region, Trajectory, TrajectoryEvent};
use zoomlab::types::{AuSet, Emotion, Prediction};

pub fn detect(step: u32, ok: bool) -> TrajectoryEvent {
    TrajectoryEvent {
        step,
        thought: None,
        action: ActionKind::DetectAlign,
        observation: if ok {
            ObservationKind::AlignedFace { boxes: canonical_boxes() }
        } else {
            ObservationKind::DetectionFailed
        },
    }
}

pub fn zoom(step: u32, regions: &[Region]) -> TrajectoryEvent {
    TrajectoryEvent {
        step,
        thought: None,
        action: ActionKind::ZoomIn { regions: regions.to_vec() },
        observation: ObservationKind::RoiCrops { regions: regions.to_vec() },
    }
}

pub fn answer(step: u32, emotion: Emotion, aus: &AuSet, high_confidence: bool) -> TrajectoryEvent {
    TrajectoryEvent {
        step,
        thought: None,
        action: ActionKind::Answer {
            prediction: Prediction {
                emotion,
                aus: aus.clone(),
            },
            high_confidence,
        },
        observation: ObservationKind::None,
    }
}

pub fn aus(ids: &[u16]) -> AuSet {
    AuSet::from_ids(ids.iter().copied()).unwrap()
}

/// detect, optional zoom, answer.
pub fn simple(detected: bool, zoomed: bool, emotion: Emotion, pred_aus: &[u16]) -> Trajectory {
    let mut ev = vec![detect(1, detected)];
    if zoomed {
        ev.push(zoom(2, &[Region::MouthChin]));
    }
    let n = ev.len() as u32 + 1;
    ev.push(answer(n, emotion, &aus(pred_aus), false));
    Trajectory::new(ev)
}
