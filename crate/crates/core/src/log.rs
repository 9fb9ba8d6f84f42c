//! Line-delimited JSON trajectory log.
//!
//! One record per line:
//!
//! ```text
//! {"id":"q7-0","group_id":"q7","emotion_label":"contempt","au_label":"12",
//!  "zoom_used":true,"detection_ok":true,
//!  "events":[{"step":1,"action":{"kind":"detect_align"},"observation":{"kind":"aligned_face","boxes":{...}}}, ...]}
//! ```
//!
//! `zoom_used` and `detection_ok` are written for readers' convenience and are
//! ignored on input; both are recomputed from `events`. Unknown fields are
//! rejected. The full schema is documented in `docs/trajectory-log.md`.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Trajectory, TrajectoryEvent};
use crate::types::{AuSet, Emotion, TaskLabels};

/// A trajectory together with its identifiers and the ground truth of its query.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub id: String,
    pub group_id: String,
    pub labels: TaskLabels,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("byte {offset}, field `{field}`: {message}")]
pub struct ParseError {
    /// Byte offset within the record where parsing stopped.
    pub offset: usize,
    /// Dotted path of the offending field (`.` for the record itself).
    pub field: String,
    pub message: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    id: String,
    group_id: String,
    emotion_label: Emotion,
    au_label: AuSet,
    #[serde(default)]
    zoom_used: Option<bool>,
    #[serde(default)]
    detection_ok: Option<bool>,
    events: Vec<TrajectoryEvent>,
}

pub fn parse_trajectory(line: &str) -> Result<TrajectoryRecord, ParseError> {
    let mut de = serde_json::Deserializer::from_str(line);
    let wire: WireRecord = serde_path_to_error::deserialize(&mut de).map_err(|err| {
        let field = err.path().to_string();
        let inner = err.into_inner();
        ParseError {
            offset: offset_of(line, inner.line(), inner.column()),
            field,
            message: inner.to_string(),
        }
    })?;
    de.end().map_err(|err| ParseError {
        offset: offset_of(line, err.line(), err.column()),
        field: ".".into(),
        message: err.to_string(),
    })?;
    Ok(TrajectoryRecord {
        id: wire.id,
        group_id: wire.group_id,
        labels: TaskLabels {
            emotion: wire.emotion_label,
            aus: wire.au_label,
        },
        trajectory: Trajectory::new(wire.events),
    })
}

/// Converts serde_json's 1-based (line, column) into a byte offset.
fn offset_of(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

pub fn serialize_trajectory(record: &TrajectoryRecord) -> String {
    let wire = WireRecord {
        id: record.id.clone(),
        group_id: record.group_id.clone(),
        emotion_label: record.labels.emotion,
        au_label: record.labels.aus.clone(),
        zoom_used: Some(record.trajectory.zoom_used()),
        detection_ok: Some(record.trajectory.detection_ok()),
        events: record.trajectory.events.clone(),
    };
    serde_json::to_string(&wire).expect("trajectory records always serialize")
}

/// A parse failure tagged with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {error}")]
pub struct LineError {
    pub line: usize,
    pub error: ParseError,
}

/// Reads every non-blank line. Parse failures are collected, not fatal.
pub fn read_log<R: BufRead>(reader: R) -> std::io::Result<(Vec<TrajectoryRecord>, Vec<LineError>)> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_trajectory(&line) {
            Ok(r) => records.push(r),
            Err(error) => errors.push(LineError { line: i + 1, error }),
        }
    }
    Ok((records, errors))
}
