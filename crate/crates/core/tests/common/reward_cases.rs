//! Hand-worked and random reward groups, and the engine-vs-oracle comparison.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::reward_oracle::{score, Expected, Row};
use zoomlab::calibration::{CalibrationParams, CalibratorCheckpoint, CalibratorView, EmaCalibrator, EmotionStat};
use zoomlab::config::Variant;
use zoomlab::reward::{RewardEngine, RewardParams, RolloutGroup};
use zoomlab::types::{AuSet, Emotion, TaskLabels, PROTOCOL_AUS};

pub const TOL: f64 = 1e-12;

pub fn row(detected: bool, zoomed: bool, pred: Option<(Emotion, &[u16])>) -> Row {
    Row {
        detected,
        zoomed,
        pred: pred.map(|(e, a)| (e, a.to_vec())),
        high_confidence: false,
        long_thought: false,
        duplicate_answer: false,
    }
}

pub fn engine(params: RewardParams) -> RewardEngine {
    RewardEngine::new(params, Variant::FullUcGrpo.wiring(), CalibrationParams::default(), 4)
}

pub fn view_with(e: Emotion, delta_bar: f64, count: u64) -> CalibratorView {
    let ckpt = CalibratorCheckpoint {
        step: count,
        emotions: BTreeMap::from([(e, EmotionStat { delta_bar, count })]),
    };
    EmaCalibrator::from_checkpoint(&ckpt).snapshot()
}

pub fn labels(e: Emotion, a: &[u16]) -> TaskLabels {
    TaskLabels {
        emotion: e,
        aus: AuSet::from_ids(a.iter().copied()).unwrap(),
    }
}

/// Scores with both implementations; `Err` names the first field that differs.
pub fn compare(rows: &[Row], labels: &TaskLabels, view: &CalibratorView, eng: &RewardEngine) -> Result<Vec<Expected>, String> {
    let group = RolloutGroup {
        query_id: "q".into(),
        labels: labels.clone(),
        trajectories: rows.iter().map(Row::trajectory).collect(),
    };
    let got = eng.score_group(&group, view);
    let m = got.modulation;
    let want = score(rows, labels.emotion, &labels.aus, (m.lazy, m.unnec), &eng.params);
    for (i, (g, w)) in got.breakdowns.iter().zip(&want).enumerate() {
        let ctx = || format!("trajectory {i}: {rows:?}\n got {g:?}\nwant {w:?}");
        for (name, a, b) in [
            ("r_acc", g.r_acc, w.r_acc),
            ("r_fsm", g.r_fsm, w.r_fsm),
            ("r_util", g.r_util, w.r_util),
            ("r_qual", g.r_qual, w.r_qual),
            ("total", g.total, w.total),
        ] {
            if !((a - b).abs() <= TOL) {
                return Err(format!("{name} {}", ctx()));
            }
        }
        if format!("{:?}", g.util_branch) != w.branch {
            return Err(format!("branch {}", ctx()));
        }
        match (g.delta_used, w.delta) {
            (None, None) => {}
            (Some(a), Some(b)) if (a - b).abs() <= TOL => {}
            _ => return Err(format!("delta {}", ctx())),
        }
    }
    Ok(want)
}

pub struct Fixture {
    pub name: &'static str,
    pub rows: Vec<Row>,
    pub labels: TaskLabels,
    pub view: CalibratorView,
    /// Worked by hand, cross-checked in a short script.
    pub totals: [f64; 5],
}

pub fn fixtures() -> Vec<Fixture> {
    use Emotion::*;
    let fresh = EmaCalibrator::new().snapshot();

    let mut mixed = vec![
        row(true, true, Some((Fear, &[1, 2, 4, 25]))),
        row(true, true, Some((Fear, &[1, 4]))),
        row(true, false, Some((Surprise, &[1, 2, 25, 26]))),
        row(true, false, Some((Fear, &[]))),
        row(false, false, Some((Sad, &[1, 4]))),
    ];
    mixed[3].high_confidence = true;

    let all_zoomed = vec![
        row(true, true, Some((Happiness, &[6, 12]))),
        row(true, true, Some((Happiness, &[6, 12, 25]))),
        row(true, true, Some((Contempt, &[12]))),
        row(true, true, Some((Neutral, &[6, 12, 25]))),
        row(true, true, None),
    ];

    let mut neutral = vec![
        row(true, true, Some((Neutral, &[]))),
        row(true, false, Some((Neutral, &[]))),
        row(true, true, Some((Sad, &[]))),
        row(true, false, Some((Sad, &[]))),
        row(true, false, Some((Neutral, &[1]))),
    ];
    neutral[4].long_thought = true;

    let mut unnec = vec![
        row(true, true, Some((Disgust, &[4]))),
        row(true, true, Some((Anger, &[4, 26]))),
        row(true, false, Some((Anger, &[4, 26]))),
        row(true, false, Some((Anger, &[4]))),
        row(false, true, Some((Anger, &[4, 26]))),
    ];
    unnec[3].high_confidence = true;
    unnec[4].duplicate_answer = true;

    let mut failed = vec![
        row(false, false, Some((Contempt, &[]))),
        row(false, true, None),
        row(false, false, Some((Happiness, &[12]))),
        row(false, true, Some((Contempt, &[12]))),
        row(false, false, Some((Sad, &[1, 4]))),
    ];
    failed[0].high_confidence = true;
    failed[0].long_thought = true;
    failed[2].duplicate_answer = true;
    failed[3].high_confidence = true;

    vec![
        Fixture {
            name: "mixed",
            rows: mixed,
            labels: labels(Fear, &[1, 2, 4, 25]),
            view: fresh,
            totals: [0.79, 0.6733333333333332, -0.4972350915987192, -0.12848509159871924, -0.32333333333333336],
        },
        Fixture {
            name: "all zoomed",
            rows: all_zoomed,
            labels: labels(Happiness, &[6, 12, 25]),
            view: fresh,
            totals: [0.72, 0.79, -0.3525, -0.085, -0.5],
        },
        Fixture {
            name: "neutral band",
            rows: neutral,
            labels: labels(Neutral, &[]),
            view: fresh,
            totals: [0.79, 0.79, -0.085, -0.085, 0.24],
        },
        Fixture {
            name: "calibrated unnecessary zoom",
            rows: unnec,
            labels: labels(Anger, &[4, 26]),
            view: view_with(Anger, -0.5, 10),
            totals: [-0.5743352471376815, 0.35899808619565177, 0.79, 0.6733333333333332, 0.47],
        },
        Fixture {
            name: "all detections failed",
            rows: failed,
            labels: labels(Contempt, &[12]),
            view: fresh,
            totals: [0.14, -0.56, -0.345, 0.73, -0.44],
        },
    ]
}

/// Engine vs oracle on a fixture, plus the hand-worked totals.
pub fn check_fixture(f: &Fixture) -> Result<Vec<Expected>, String> {
    let out = compare(&f.rows, &f.labels, &f.view, &engine(RewardParams::default()))?;
    for (i, (g, w)) in out.iter().zip(&f.totals).enumerate() {
        if !((g.total - w).abs() <= TOL) {
            return Err(format!("{}: trajectory {i} total {} vs hand-worked {w}", f.name, g.total));
        }
    }
    Ok(out)
}

fn random_aus(rng: &mut ChaCha8Rng) -> Vec<u16> {
    PROTOCOL_AUS.iter().copied().filter(|_| rng.random_bool(0.35)).collect()
}

fn random_params(rng: &mut ChaCha8Rng) -> RewardParams {
    if rng.random_bool(0.5) {
        return RewardParams::default();
    }
    RewardParams {
        lambda: rng.random_range(0.05..0.95),
        w_au: rng.random_range(0.05..1.0),
        r_wrong: rng.random_range(-1.0..-0.05),
        epsilon: rng.random_range(0.01..0.3),
        r_pos: rng.random_range(0.05..1.0),
        r_neg: rng.random_range(-1.0..-0.05),
        s_high: rng.random_range(0.3..1.0),
        h_scale: rng.random_range(0.2..2.0),
        h_slope: rng.random_range(0.5..5.0),
        ..RewardParams::default()
    }
}

/// A G=5 group with random detection, zoom, predictions and calibrator state.
pub fn random_case(rng: &mut ChaCha8Rng) -> (Vec<Row>, TaskLabels, CalibratorView, RewardEngine) {
    let label = Emotion::ALL[rng.random_range(0..8)];
    let target = random_aus(rng);
    let rows = (0..5)
        .map(|_| Row {
            detected: rng.random_bool(0.8),
            zoomed: rng.random_bool(0.5),
            pred: if rng.random_bool(0.95) {
                let e = if rng.random_bool(0.5) { label } else { Emotion::ALL[rng.random_range(0..8)] };
                // copy the target sometimes so F1 = 1 and the high fallback gate is exercised
                let a = if rng.random_bool(0.2) { target.clone() } else { random_aus(rng) };
                Some((e, a))
            } else {
                None
            },
            high_confidence: rng.random_bool(0.2),
            long_thought: rng.random_bool(0.05),
            duplicate_answer: rng.random_bool(0.05),
        })
        .collect();
    let view = view_with(label, rng.random_range(-1.0..1.0), rng.random_range(0..20));
    (rows, labels(label, &target), view, engine(random_params(rng)))
}
