//! Tool-use trajectory grammar and its structural validator.
//!
//! A trajectory is a sequence of thought/action/observation events. The agent
//! may run face detection-alignment, zoom into facial regions, and must finish
//! with exactly one answer. [`validate`] reports every rule violation together
//! with the structural reward `r_fsm`; [`ProtocolState::step`] is the
//! incremental form and folding it over a trajectory gives the same verdict.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::types::Prediction;

/// Facial regions exposed by the alignment tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    ForeheadEyebrow,
    EyePeriorbital,
    Nose,
    MouthChin,
}

impl Region {
    pub const ALL: [Region; 4] = [
        Region::ForeheadEyebrow,
        Region::EyePeriorbital,
        Region::Nose,
        Region::MouthChin,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::ForeheadEyebrow => "forehead_eyebrow",
            Region::EyePeriorbital => "eye_periorbital",
            Region::Nose => "nose",
            Region::MouthChin => "mouth_chin",
        }
    }
}

/// A bounding box `(x1, y1, x2, y2)`.
pub type BoxCoords = [f64; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", from = "ActionWire")]
pub enum ActionKind {
    DetectAlign,
    ZoomIn {
        regions: Vec<Region>,
    },
    Answer {
        prediction: Prediction,
        /// Model claims a confident answer.
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        high_confidence: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", from = "ObservationWire")]
pub enum ObservationKind {
    AlignedFace { boxes: BTreeMap<Region, BoxCoords> },
    DetectionFailed,
    RoiCrops { regions: Vec<Region> },
    None,
}

// Input mirrors. serde ignores extra keys on unit variants of internally
// tagged enums, so unit variants are read as empty struct variants here.
#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ActionWire {
    DetectAlign {},
    ZoomIn {
        regions: Vec<Region>,
    },
    Answer {
        prediction: Prediction,
        #[serde(default)]
        high_confidence: bool,
    },
}

impl From<ActionWire> for ActionKind {
    fn from(w: ActionWire) -> Self {
        match w {
            ActionWire::DetectAlign {} => ActionKind::DetectAlign,
            ActionWire::ZoomIn { regions } => ActionKind::ZoomIn { regions },
            ActionWire::Answer {
                prediction,
                high_confidence,
            } => ActionKind::Answer {
                prediction,
                high_confidence,
            },
        }
    }
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ObservationWire {
    AlignedFace { boxes: BTreeMap<Region, BoxCoords> },
    DetectionFailed {},
    RoiCrops { regions: Vec<Region> },
    None {},
}

impl From<ObservationWire> for ObservationKind {
    fn from(w: ObservationWire) -> Self {
        match w {
            ObservationWire::AlignedFace { boxes } => ObservationKind::AlignedFace { boxes },
            ObservationWire::DetectionFailed {} => ObservationKind::DetectionFailed,
            ObservationWire::RoiCrops { regions } => ObservationKind::RoiCrops { regions },
            ObservationWire::None {} => ObservationKind::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryEvent {
    pub step: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
    pub action: ActionKind,
    pub observation: ObservationKind,
}

impl TrajectoryEvent {
    /// Field-level invariants that do not depend on the surrounding events.
    fn is_well_formed(&self) -> bool {
        match (&self.action, &self.observation) {
            (ActionKind::DetectAlign, ObservationKind::AlignedFace { boxes }) => {
                boxes.len() == Region::ALL.len()
                    && boxes.values().all(|b| {
                        b.iter().all(|v| v.is_finite()) && b[0] < b[2] && b[1] < b[3]
                    })
            }
            (ActionKind::DetectAlign, ObservationKind::DetectionFailed) => true,
            (ActionKind::ZoomIn { regions }, ObservationKind::RoiCrops { regions: crops }) => {
                !regions.is_empty()
                    && !has_duplicates(regions)
                    && !has_duplicates(crops)
                    && sorted(regions) == sorted(crops)
            }
            (ActionKind::Answer { .. }, ObservationKind::None) => true,
            _ => false,
        }
    }
}

fn has_duplicates(regions: &[Region]) -> bool {
    let mut seen = [false; 4];
    for r in regions {
        if std::mem::replace(&mut seen[r.index()], true) {
            return true;
        }
    }
    false
}

fn sorted(regions: &[Region]) -> Vec<Region> {
    let mut v = regions.to_vec();
    v.sort();
    v
}

/// One rollout. Derived facts (zoom usage, detection status, prediction) are
/// always computed from the events.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub events: Vec<TrajectoryEvent>,
}

impl Trajectory {
    pub fn new(events: Vec<TrajectoryEvent>) -> Self {
        Self { events }
    }

    /// `z_i`: true iff some event zooms.
    pub fn zoom_used(&self) -> bool {
        self.events
            .iter()
            .any(|e| matches!(e.action, ActionKind::ZoomIn { .. }))
    }

    /// Outcome of the last detection call; false if detection never ran.
    pub fn detection_ok(&self) -> bool {
        self.events
            .iter()
            .rev()
            .find(|e| matches!(e.action, ActionKind::DetectAlign))
            .is_some_and(|e| matches!(e.observation, ObservationKind::AlignedFace { .. }))
    }

    /// The prediction carried by the first answer, which terminates the episode.
    pub fn prediction(&self) -> Option<&Prediction> {
        self.first_answer().map(|(p, _)| p)
    }

    pub fn first_answer(&self) -> Option<(&Prediction, bool)> {
        self.events.iter().find_map(|e| match &e.action {
            ActionKind::Answer {
                prediction,
                high_confidence,
            } => Some((prediction, *high_confidence)),
            _ => None,
        })
    }

    pub fn answer_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.action, ActionKind::Answer { .. }))
            .count()
    }
}

/// Structural rule violations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Violation {
    MissingAnswer,
    AnswerNotLast,
    ZoomBeforeDetect,
    ZoomAfterFailedDetect,
    RepeatedDetect,
    RepeatedZoomRegion,
    BudgetExceeded,
    MalformedEvent,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Penalty constants for the structural reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralPenalty {
    /// Penalty per violation.
    pub kappa: f64,
    /// Floor of `r_fsm`.
    pub floor: f64,
}

impl Default for StructuralPenalty {
    fn default() -> Self {
        Self {
            kappa: 0.2,
            floor: -1.0,
        }
    }
}

impl StructuralPenalty {
    pub fn reward(&self, violations: usize) -> f64 {
        if violations == 0 {
            0.0
        } else {
            (-self.kappa * violations as f64).max(self.floor)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FsmVerdict {
    pub violations: Vec<Violation>,
    pub legal: bool,
    pub r_fsm: f64,
}

impl FsmVerdict {
    fn from_violations(violations: Vec<Violation>, penalty: &StructuralPenalty) -> Self {
        let legal = violations.is_empty();
        let r_fsm = penalty.reward(violations.len());
        Self {
            violations,
            legal,
            r_fsm,
        }
    }

    pub fn has(&self, v: Violation) -> bool {
        self.violations.contains(&v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DetectStatus {
    NotRun,
    Ok,
    Failed,
}

/// Incremental validator state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolState {
    budget: usize,
    events_seen: usize,
    detect: DetectStatus,
    detect_calls: usize,
    zoomed: [bool; 4],
    answers: usize,
    answer_not_last_reported: bool,
    budget_reported: bool,
}

impl ProtocolState {
    pub fn new(budget: usize) -> Self {
        assert!(budget >= 1, "turn budget must be at least 1");
        Self {
            budget,
            events_seen: 0,
            detect: DetectStatus::NotRun,
            detect_calls: 0,
            zoomed: [false; 4],
            answers: 0,
            answer_not_last_reported: false,
            budget_reported: false,
        }
    }

    /// A face is available for zooming.
    pub fn face_available(&self) -> bool {
        self.detect == DetectStatus::Ok
    }

    pub fn answered(&self) -> bool {
        self.answers > 0
    }

    pub fn zoomed_regions(&self) -> impl Iterator<Item = Region> + '_ {
        Region::ALL.into_iter().filter(|r| self.zoomed[r.index()])
    }

    /// Consumes one event and returns the violations it triggers.
    pub fn step(mut self, event: &TrajectoryEvent) -> (ProtocolState, Vec<Violation>) {
        let mut out = Vec::new();
        let expected_step = self.events_seen + 1;
        if event.step as usize != expected_step || !event.is_well_formed() {
            out.push(Violation::MalformedEvent);
        }
        if self.answers > 0 && !self.answer_not_last_reported {
            self.answer_not_last_reported = true;
            out.push(Violation::AnswerNotLast);
        }
        self.events_seen += 1;
        if self.events_seen > self.budget && !self.budget_reported {
            self.budget_reported = true;
            out.push(Violation::BudgetExceeded);
        }
        match &event.action {
            ActionKind::DetectAlign => {
                if self.detect_calls > 0 {
                    out.push(Violation::RepeatedDetect);
                }
                self.detect_calls += 1;
                self.detect = match event.observation {
                    ObservationKind::AlignedFace { .. } => DetectStatus::Ok,
                    _ => DetectStatus::Failed,
                };
            }
            ActionKind::ZoomIn { regions } => {
                match self.detect {
                    DetectStatus::NotRun => out.push(Violation::ZoomBeforeDetect),
                    DetectStatus::Failed => out.push(Violation::ZoomAfterFailedDetect),
                    DetectStatus::Ok => {}
                }
                let mut this_event = [false; 4];
                for r in regions {
                    let i = r.index();
                    if this_event[i] {
                        // duplicate inside one call is a malformed event, already reported
                        continue;
                    }
                    this_event[i] = true;
                    if self.zoomed[i] {
                        out.push(Violation::RepeatedZoomRegion);
                    }
                }
                for (seen, now) in self.zoomed.iter_mut().zip(this_event) {
                    *seen |= now;
                }
            }
            ActionKind::Answer { .. } => self.answers += 1,
        }
        (self, out)
    }

    /// End-of-trajectory checks.
    pub fn finish(&self) -> Vec<Violation> {
        if self.answers == 0 {
            vec![Violation::MissingAnswer]
        } else {
            Vec::new()
        }
    }
}

/// Validates a trajectory with the default penalty constants.
pub fn validate(traj: &Trajectory, budget: usize) -> FsmVerdict {
    validate_with(traj, budget, &StructuralPenalty::default())
}

pub fn validate_with(traj: &Trajectory, budget: usize, penalty: &StructuralPenalty) -> FsmVerdict {
    let mut state = ProtocolState::new(budget);
    let mut violations = Vec::new();
    for event in &traj.events {
        let (next, v) = state.step(event);
        state = next;
        violations.extend(v);
    }
    violations.extend(state.finish());
    FsmVerdict::from_violations(violations, penalty)
}

/// Canonical synthetic region boxes on a 112x112 aligned face.
pub fn canonical_boxes() -> BTreeMap<Region, BoxCoords> {
    BTreeMap::from([
        (Region::ForeheadEyebrow, [20.0, 8.0, 92.0, 38.0]),
        (Region::EyePeriorbital, [16.0, 32.0, 96.0, 58.0]),
        (Region::Nose, [38.0, 48.0, 74.0, 80.0]),
        (Region::MouthChin, [28.0, 76.0, 84.0, 108.0]),
    ])
}
