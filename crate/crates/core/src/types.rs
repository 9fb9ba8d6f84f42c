//! Shared domain vocabulary: emotion categories, action-unit sets, predictions
//! and the instance-level AU-set F1 metric.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// The eight expression categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Neutral,
    Happiness,
    Sad,
    Surprise,
    Fear,
    Disgust,
    Anger,
    Contempt,
}

impl Emotion {
    pub const COUNT: usize = 8;

    pub const ALL: [Emotion; Emotion::COUNT] = [
        Emotion::Neutral,
        Emotion::Happiness,
        Emotion::Sad,
        Emotion::Surprise,
        Emotion::Fear,
        Emotion::Disgust,
        Emotion::Anger,
        Emotion::Contempt,
    ];

    /// Dense index in `0..8`, stable across releases (used for per-emotion arrays and CSV columns).
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Emotion> {
        Emotion::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Neutral => "neutral",
            Emotion::Happiness => "happiness",
            Emotion::Sad => "sad",
            Emotion::Surprise => "surprise",
            Emotion::Fear => "fear",
            Emotion::Disgust => "disgust",
            Emotion::Anger => "anger",
            Emotion::Contempt => "contempt",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown emotion `{0}`")]
pub struct UnknownEmotion(pub String);

impl FromStr for Emotion {
    type Err = UnknownEmotion;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Emotion::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| UnknownEmotion(s.to_string()))
    }
}

/// Action-unit identifier from the FACS catalog.
pub type AuId = u16;

/// The eight AUs used by the simulator.
pub const PROTOCOL_AUS: [AuId; 8] = [1, 2, 4, 6, 9, 12, 25, 26];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuSetError {
    #[error("AU identifier `{0}` is not a positive integer")]
    BadId(String),
    #[error("AU {0} listed twice")]
    Duplicate(AuId),
}

/// A set of action units. Serializes as comma-separated ascending integers, e.g. `"1,4,12"`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct AuSet(BTreeSet<AuId>);

impl AuSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set, rejecting zero identifiers and duplicates.
    pub fn from_ids<I: IntoIterator<Item = AuId>>(ids: I) -> Result<Self, AuSetError> {
        let mut set = BTreeSet::new();
        for id in ids {
            if id == 0 {
                return Err(AuSetError::BadId("0".into()));
            }
            if !set.insert(id) {
                return Err(AuSetError::Duplicate(id));
            }
        }
        Ok(AuSet(set))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: AuId) -> bool {
        self.0.contains(&id)
    }

    pub fn insert(&mut self, id: AuId) -> bool {
        assert!(id >= 1, "AU identifiers are positive");
        self.0.insert(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = AuId> + '_ {
        self.0.iter().copied()
    }

    pub fn intersection_len(&self, other: &AuSet) -> usize {
        self.0.intersection(&other.0).count()
    }

    pub fn is_subset(&self, other: &AuSet) -> bool {
        self.0.is_subset(&other.0)
    }
}

impl fmt::Display for AuSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for id in &self.0 {
            if !first {
                f.write_str(",")?;
            }
            write!(f, "{id}")?;
            first = false;
        }
        Ok(())
    }
}

impl FromStr for AuSet {
    type Err = AuSetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(AuSet::new());
        }
        let ids = s
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                match tok.parse::<AuId>() {
                    Ok(id) if id >= 1 => Ok(id),
                    _ => Err(AuSetError::BadId(tok.to_string())),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        AuSet::from_ids(ids)
    }
}

impl FromIterator<AuId> for AuSet {
    fn from_iter<T: IntoIterator<Item = AuId>>(iter: T) -> Self {
        let mut set = AuSet::new();
        for id in iter {
            set.insert(id);
        }
        set
    }
}

impl Serialize for AuSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AuSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Terminal structured prediction of a trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub emotion: Emotion,
    pub aus: AuSet,
}

/// Ground truth for one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskLabels {
    pub emotion: Emotion,
    pub aus: AuSet,
}

/// Instance-level AU-set F1, `2|P∩T| / (|P|+|T|)`.
///
/// Two empty sets match perfectly (1.0); one empty set scores 0.0.
pub fn au_set_f1(pred: &AuSet, target: &AuSet) -> f64 {
    let denom = pred.len() + target.len();
    if denom == 0 {
        return 1.0;
    }
    2.0 * pred.intersection_len(target) as f64 / denom as f64
}
