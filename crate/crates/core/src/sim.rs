//! Synthetic expression-recognition world.
//!
//! Each query has a latent emotion, an image quality `g` and a subtlety `s`.
//! The policy sees only noisy transforms of `g` and `s`. Zooming changes the
//! probability of a correct emotion by `zoom_gain[e] − quality_penalty·(1−g)`,
//! so it pays off for subtle emotions on clean images and hurts on poor ones.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{policy_decision, Decision, Features, PolicyParams};
use crate::protocol::{canonical_boxes, ActionKind, ObservationKind, Region, Trajectory, TrajectoryEvent};
use crate::rng::{purpose, stream};
use crate::types::{au_set_f1, AuId, AuSet, Emotion, Prediction, TaskLabels, PROTOCOL_AUS};

pub type EmotionTable<T> = BTreeMap<Emotion, T>;

fn table<T: Clone>(values: [T; Emotion::COUNT]) -> EmotionTable<T> {
    Emotion::ALL.into_iter().zip(values).collect()
}

fn aus(ids: &[AuId]) -> AuSet {
    ids.iter().copied().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldParams {
    /// Seed of every query and rollout stream.
    pub seed: u64,
    pub emotion_probs: EmotionTable<f64>,
    pub base_acc: EmotionTable<f64>,
    /// Change in correct-emotion probability from zooming on a perfect-quality image.
    pub zoom_gain: EmotionTable<f64>,
    pub quality_penalty: f64,
    /// Quality is drawn uniformly from this range.
    pub quality_range: [f64; 2],
    pub subtlety_mean: EmotionTable<f64>,
    /// Subtlety is `subtlety_mean[e]` plus uniform noise of this half-width.
    pub subtlety_spread: f64,
    /// Half-width of the uniform noise on observed features.
    pub feature_noise: f64,
    pub detect_floor: f64,
    pub detect_slope: f64,
    /// Accuracy lost when answering from the holistic view after a failed detection.
    pub detect_fail_penalty: f64,
    pub au_base: f64,
    pub au_correct_bonus: f64,
    /// AU F1 bonus for zooming on an emotion with positive zoom gain.
    pub au_zoom_bonus: f64,
    pub au_beta_sharpness: f64,
    pub target_au_sets: EmotionTable<AuSet>,
    /// Scale zoom gain by the share of informative regions inspected.
    pub region_sensitive_world: bool,
    pub informative_regions: EmotionTable<Vec<Region>>,
}

impl Default for WorldParams {
    fn default() -> Self {
        use Region::*;
        Self {
            seed: 0x5EED,
            emotion_probs: table([0.125; 8]),
            //             neu   hap   sad   sur   fear  dis   ang   con
            base_acc: table([0.70, 0.80, 0.60, 0.75, 0.50, 0.55, 0.60, 0.45]),
            zoom_gain: table([0.04, 0.04, 0.00, 0.04, 0.15, 0.13, 0.00, 0.20]),
            quality_penalty: 0.05,
            quality_range: [0.5, 1.0],
            subtlety_mean: table([0.30, 0.10, 0.50, 0.20, 0.75, 0.70, 0.45, 0.90]),
            subtlety_spread: 0.1,
            feature_noise: 0.25,
            detect_floor: 0.85,
            detect_slope: 0.25,
            detect_fail_penalty: 0.25,
            au_base: 0.45,
            au_correct_bonus: 0.25,
            au_zoom_bonus: 0.10,
            au_beta_sharpness: 12.0,
            target_au_sets: table([
                aus(&[]),
                aus(&[6, 12, 25]),
                aus(&[1, 4]),
                aus(&[1, 2, 25, 26]),
                aus(&[1, 2, 4, 25]),
                aus(&[4, 9, 25]),
                aus(&[4, 26]),
                aus(&[12]),
            ]),
            region_sensitive_world: false,
            informative_regions: table([
                vec![MouthChin],
                vec![EyePeriorbital, MouthChin],
                vec![ForeheadEyebrow],
                vec![ForeheadEyebrow, MouthChin],
                vec![ForeheadEyebrow, EyePeriorbital],
                vec![Nose, MouthChin],
                vec![ForeheadEyebrow, MouthChin],
                vec![MouthChin],
            ]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("world.{field}: {reason}")]
pub struct WorldParamsError {
    pub field: String,
    pub reason: &'static str,
}

fn unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl WorldParams {
    pub fn check(&self) -> Result<(), WorldParamsError> {
        let err = |field: &str, reason| {
            Err(WorldParamsError {
                field: field.to_string(),
                reason,
            })
        };
        for (name, t) in [
            ("emotion_probs", &self.emotion_probs),
            ("base_acc", &self.base_acc),
            ("zoom_gain", &self.zoom_gain),
            ("subtlety_mean", &self.subtlety_mean),
        ] {
            if t.len() != Emotion::COUNT {
                return err(name, "must list all eight emotions");
            }
            if t.values().any(|v| !v.is_finite()) {
                return err(name, "values must be finite");
            }
        }
        if self.target_au_sets.len() != Emotion::COUNT || self.informative_regions.len() != Emotion::COUNT {
            return err("target_au_sets", "must list all eight emotions");
        }
        if self.emotion_probs.values().any(|p| !unit(*p)) {
            return err("emotion_probs", "probabilities must lie in [0, 1]");
        }
        if (self.emotion_probs.values().sum::<f64>() - 1.0).abs() > 1e-9 {
            return err("emotion_probs", "must sum to 1");
        }
        if self.base_acc.values().any(|p| !unit(*p)) {
            return err("base_acc", "probabilities must lie in [0, 1]");
        }
        if self.subtlety_mean.values().any(|p| !unit(*p)) {
            return err("subtlety_mean", "must lie in [0, 1]");
        }
        let [lo, hi] = self.quality_range;
        if !(unit(lo) && unit(hi) && lo <= hi) {
            return err("quality_range", "must be an ordered pair inside [0, 1]");
        }
        if !(self.quality_penalty >= 0.0) {
            return err("quality_penalty", "must be non-negative");
        }
        for (name, v) in [
            ("subtlety_spread", self.subtlety_spread),
            ("feature_noise", self.feature_noise),
            ("detect_floor", self.detect_floor),
            ("detect_slope", self.detect_slope),
            ("detect_fail_penalty", self.detect_fail_penalty),
            ("au_base", self.au_base),
            ("au_correct_bonus", self.au_correct_bonus),
            ("au_zoom_bonus", self.au_zoom_bonus),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(name, "must be finite and non-negative");
            }
        }
        if !(self.au_beta_sharpness > 0.0 && self.au_beta_sharpness.is_finite()) {
            return err("au_beta_sharpness", "must be positive");
        }
        let protocol = aus(&PROTOCOL_AUS);
        if self.target_au_sets.values().any(|s| !s.is_subset(&protocol)) {
            return err("target_au_sets", "must be subsets of the 8-AU protocol set");
        }
        Ok(())
    }

    pub fn detect_probability(&self, quality: f64) -> f64 {
        (self.detect_floor + self.detect_slope * quality).clamp(0.0, 1.0)
    }

    /// Expected zoom effect on correct-emotion probability, before clamping.
    pub fn zoom_effect(&self, e: Emotion, quality: f64) -> f64 {
        self.zoom_gain[&e] - self.quality_penalty * (1.0 - quality)
    }

    pub fn labels(&self, e: Emotion) -> TaskLabels {
        TaskLabels {
            emotion: e,
            aus: self.target_au_sets[&e].clone(),
        }
    }
}

/// Emotions commonly mistaken for each one.
pub fn confusion_neighbors(e: Emotion) -> [Emotion; 2] {
    use Emotion::*;
    match e {
        Neutral => [Sad, Contempt],
        Happiness => [Contempt, Surprise],
        Sad => [Neutral, Fear],
        Surprise => [Fear, Happiness],
        Fear => [Surprise, Sad],
        Disgust => [Anger, Sad],
        Anger => [Disgust, Contempt],
        Contempt => [Happiness, Neutral],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

/// Identifies one query; together with the world seed it fixes the sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QueryKey {
    pub run_seed: u64,
    pub split: Split,
    pub step: u64,
    pub index: u64,
}

impl QueryKey {
    fn path(&self, purpose: u64) -> [u64; 5] {
        [purpose, self.run_seed, self.split as u64, self.step, self.index]
    }

    pub fn id(&self) -> String {
        let split = match self.split {
            Split::Train => "t",
            Split::Eval => "e",
        };
        format!("s{}-{split}{}-q{}", self.run_seed, self.step, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSpec {
    pub query_id: String,
    pub emotion: Emotion,
    pub quality: f64,
    pub subtlety: f64,
    pub detect_prob: f64,
    /// `zoom_gain[e] − quality_penalty·(1−g)`.
    pub zoom_effect: f64,
    pub features: Features,
}

fn draw_emotion<R: Rng + ?Sized>(probs: &EmotionTable<f64>, rng: &mut R) -> Emotion {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = Emotion::Neutral;
    for (&e, &p) in probs {
        if p > 0.0 {
            last = e;
            acc += p;
            if u < acc {
                return e;
            }
        }
    }
    last
}

fn noisy<R: Rng + ?Sized>(v: f64, half_width: f64, rng: &mut R) -> f64 {
    let n = if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    };
    (v + n).clamp(0.0, 1.0)
}

/// Policy features from observed quality and subtlety, centred on 0.
pub fn features_from(observed_quality: f64, observed_subtlety: f64) -> Features {
    let a = 2.0 * observed_quality - 1.0;
    let b = 2.0 * observed_subtlety - 1.0;
    [a, b, a * b]
}

pub fn sample_query(world: &WorldParams, key: &QueryKey) -> SampleSpec {
    let mut rng = stream(world.seed, &key.path(purpose::QUERY));
    let emotion = draw_emotion(&world.emotion_probs, &mut rng);
    let [lo, hi] = world.quality_range;
    let quality = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let subtlety = noisy(world.subtlety_mean[&emotion], world.subtlety_spread, &mut rng);
    let gq = noisy(quality, world.feature_noise, &mut rng);
    let gs = noisy(subtlety, world.feature_noise, &mut rng);
    SampleSpec {
        query_id: key.id(),
        emotion,
        quality,
        subtlety,
        detect_prob: world.detect_probability(quality),
        zoom_effect: world.zoom_effect(emotion, quality),
        features: features_from(gq, gs),
    }
}

/// Set sizes `(hits, extras)` whose F1 against a target of `target_len` is closest to `f1`.
pub fn nearest_au_shape(f1: f64, target_len: usize, universe: usize) -> (usize, usize) {
    let mut best = (0, 0);
    let mut best_err = f64::INFINITY;
    for k in (0..=target_len).rev() {
        for m in 0..=universe - target_len {
            let denom = target_len + k + m;
            let v = if denom == 0 { 1.0 } else { 2.0 * k as f64 / denom as f64 };
            let e = (v - f1).abs();
            if e < best_err {
                best_err = e;
                best = (k, m);
            }
        }
    }
    best
}

/// A protocol AU set whose F1 against `target` is as close to `f1` as set sizes allow.
pub fn realize_au_set<R: Rng + ?Sized>(f1: f64, target: &AuSet, rng: &mut R) -> AuSet {
    let hits: Vec<AuId> = target.iter().collect();
    let others: Vec<AuId> = PROTOCOL_AUS.iter().copied().filter(|a| !target.contains(*a)).collect();
    let (k, m) = nearest_au_shape(f1, hits.len(), hits.len() + others.len());
    let mut set = AuSet::new();
    for i in sample_indices(rng, hits.len(), k) {
        set.insert(hits[i]);
    }
    for i in sample_indices(rng, others.len(), m) {
        set.insert(others[i]);
    }
    set
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub prediction: Prediction,
    pub correct: bool,
    pub au_f1: f64,
}

pub fn correct_probability(sample: &SampleSpec, zoomed: bool, regions: &[Region], detected: bool, world: &WorldParams) -> f64 {
    let e = sample.emotion;
    let mut p = world.base_acc[&e];
    if zoomed {
        let mut gain = world.zoom_gain[&e];
        if world.region_sensitive_world {
            let informative = &world.informative_regions[&e];
            if !informative.is_empty() {
                let seen = informative.iter().filter(|r| regions.contains(r)).count();
                gain *= seen as f64 / informative.len() as f64;
            }
        }
        p += gain - world.quality_penalty * (1.0 - sample.quality);
    }
    if !detected {
        p -= world.detect_fail_penalty;
    }
    p.clamp(0.0, 1.0)
}

/// Draws the answer. Consumes the same number of uniforms whatever the inputs,
/// so rollouts that share a stream stay coupled across policies.
pub fn outcome<R: Rng + ?Sized>(
    sample: &SampleSpec,
    zoomed: bool,
    regions: &[Region],
    detected: bool,
    world: &WorldParams,
    rng: &mut R,
) -> Outcome {
    let e = sample.emotion;
    let u_correct: f64 = rng.random();
    let u_neighbor: f64 = rng.random();
    let correct = u_correct < correct_probability(sample, zoomed, regions, detected, world);
    let emotion = if correct {
        e
    } else {
        confusion_neighbors(e)[(u_neighbor * 2.0) as usize % 2]
    };

    let zoom_bonus = if zoomed && world.zoom_gain[&e] > 0.0 { world.au_zoom_bonus } else { 0.0 };
    let correct_bonus = if correct { world.au_correct_bonus } else { 0.0 };
    let mean = (world.au_base + correct_bonus + zoom_bonus).clamp(0.02, 0.98);
    let k = world.au_beta_sharpness;
    let beta = Beta::new(mean * k, (1.0 - mean) * k).expect("beta shape is positive");
    let f1_draw = beta.sample(rng);
    let target = &world.target_au_sets[&e];
    let aus = realize_au_set(f1_draw, target, rng);
    let au_f1 = au_set_f1(&aus, target);
    Outcome {
        prediction: Prediction { emotion, aus },
        correct,
        au_f1,
    }
}

/// A generated trajectory with the information the optimizer and metrics need.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub decision: Option<Decision>,
    pub correct: bool,
    pub au_f1: f64,
}

/// Runs one episode: detect and align, optionally zoom, answer.
pub fn rollout(
    policy: &PolicyParams,
    sample: &SampleSpec,
    world: &WorldParams,
    budget: usize,
    key: &QueryKey,
    rollout_index: u64,
) -> Rollout {
    assert!(budget >= 2, "a rollout needs room to detect and answer");
    let path = |p: u64| {
        let mut v = key.path(p).to_vec();
        v.push(rollout_index);
        v
    };
    let detected = stream(world.seed, &path(purpose::DETECT)).random::<f64>() < sample.detect_prob;
    let mut events = vec![TrajectoryEvent {
        step: 1,
        thought: Some("align the face before reading it".into()),
        action: ActionKind::DetectAlign,
        observation: if detected {
            ObservationKind::AlignedFace {
                boxes: canonical_boxes(),
            }
        } else {
            ObservationKind::DetectionFailed
        },
    }];

    // with fewer than three events there is no room to zoom, so nothing to decide
    let decision = (detected && budget >= 3)
        .then(|| policy_decision(policy, &sample.features, &mut stream(world.seed, &path(purpose::DECIDE))));
    let regions: &[Region] = decision.as_ref().map_or(&[], |d| &d.regions);
    let zoomed = !regions.is_empty();
    if zoomed {
        let names: Vec<&str> = regions.iter().map(|r| r.name()).collect();
        events.push(TrajectoryEvent {
            step: 2,
            thought: Some(format!("local evidence needed: {}", names.join(", "))),
            action: ActionKind::ZoomIn {
                regions: regions.to_vec(),
            },
            observation: ObservationKind::RoiCrops {
                regions: regions.to_vec(),
            },
        });
    }

    let out = outcome(
        sample,
        zoomed,
        regions,
        detected,
        world,
        &mut stream(world.seed, &path(purpose::OUTCOME)),
    );
    events.push(TrajectoryEvent {
        step: events.len() as u32 + 1,
        thought: None,
        action: ActionKind::Answer {
            prediction: out.prediction,
            high_confidence: false,
        },
        observation: ObservationKind::None,
    });
    Rollout {
        trajectory: Trajectory::new(events),
        decision,
        correct: out.correct,
        au_f1: out.au_f1,
    }
}

/// Human-readable table of the resolved world.
pub fn world_table(world: &WorldParams) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed {}", world.seed);
    let _ = writeln!(
        s,
        "quality ~ U({}, {}), quality_penalty {}, detect p = clamp({} + {}·g), detect_fail_penalty {}",
        world.quality_range[0],
        world.quality_range[1],
        world.quality_penalty,
        world.detect_floor,
        world.detect_slope,
        world.detect_fail_penalty
    );
    let _ = writeln!(
        s,
        "au f1 ~ Beta(mean = {} + {}·correct + {}·zoom·[gain>0], sharpness {}), region_sensitive_world {}",
        world.au_base, world.au_correct_bonus, world.au_zoom_bonus, world.au_beta_sharpness, world.region_sensitive_world
    );
    let mean_q = 0.5 * (world.quality_range[0] + world.quality_range[1]);
    let _ = writeln!(
        s,
        "{:<10} {:>6} {:>8} {:>9} {:>11} {:>9}  {:<12} regions",
        "emotion", "prob", "base_acc", "zoom_gain", "mean_effect", "subtlety", "target_aus"
    );
    for e in Emotion::ALL {
        let regions: Vec<&str> = world.informative_regions[&e].iter().map(|r| r.name()).collect();
        let _ = writeln!(
            s,
            "{:<10} {:>6.3} {:>8.3} {:>9.3} {:>11.3} {:>9.3}  {:<12} {}",
            e.name(),
            world.emotion_probs[&e],
            world.base_acc[&e],
            world.zoom_gain[&e],
            world.zoom_effect(e, mean_q),
            world.subtlety_mean[&e],
            format!("{{{}}}", world.target_au_sets[&e]),
            regions.join(",")
        );
    }
    s
}
