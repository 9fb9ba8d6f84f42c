//! Monte Carlo checks of the synthetic world.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use zoomlab::policy::PolicyParams;
use zoomlab::protocol::Region;
use zoomlab::reward::{group_utility, RewardParams, RolloutGroup};
use zoomlab::sim::{outcome, rollout, sample_query, QueryKey, Split, WorldParams};
use zoomlab::types::Emotion;

pub fn key(index: u64) -> QueryKey {
    QueryKey {
        run_seed: 1,
        split: Split::Train,
        step: 0,
        index,
    }
}

/// A world that only ever draws `e`.
pub fn only(world: &WorldParams, e: Emotion) -> WorldParams {
    let mut w = world.clone();
    for (k, p) in w.emotion_probs.iter_mut() {
        *p = if *k == e { 1.0 } else { 0.0 };
    }
    w
}

/// Empirical accuracy at z=0 and z=1 for perfect-quality, detected samples of `e`.
pub fn accuracy_gap(world: &WorldParams, e: Emotion, draws: usize) -> (f64, f64) {
    let mut w = only(world, e);
    w.quality_range = [1.0, 1.0];
    let sample = sample_query(&w, &key(0));
    assert_eq!(sample.quality, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut hits = [0usize; 2];
    for z in [false, true] {
        for _ in 0..draws {
            hits[z as usize] += outcome(&sample, z, &Region::ALL, true, &w, &mut rng).correct as usize;
        }
    }
    (hits[0] as f64 / draws as f64, hits[1] as f64 / draws as f64)
}

pub struct DeltaEstimate {
    pub emotion: Emotion,
    /// zoom_gain[e] − quality_penalty·E[1−g].
    pub predicted: f64,
    pub mean: f64,
    pub half_width: f64,
    pub groups: usize,
}

impl DeltaEstimate {
    /// The 95% interval excludes zero on the predicted side.
    pub fn sign_confirmed(&self) -> bool {
        if self.predicted > 0.0 {
            self.mean - self.half_width > 0.0
        } else {
            self.mean + self.half_width < 0.0
        }
    }
}

/// Estimates E[Δ(q) | e] under the initial policy, with a normal 95% interval.
pub fn delta_by_emotion(world: &WorldParams, e: Emotion, queries: u64) -> DeltaEstimate {
    let w = only(world, e);
    let policy = PolicyParams::initial(0.5);
    let params = RewardParams::default();
    let mut ds = Vec::new();
    for i in 0..queries {
        let k = key(i);
        let sample = sample_query(&w, &k);
        let group = RolloutGroup {
            query_id: sample.query_id.clone(),
            labels: w.labels(e),
            trajectories: (0..5).map(|r| rollout(&policy, &sample, &w, 4, &k, r).trajectory).collect(),
        };
        if let Some(d) = group_utility(&group, &params).delta {
            ds.push(d);
        }
    }
    let n = ds.len() as f64;
    let mean = ds.iter().sum::<f64>() / n;
    let var = ds.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let [lo, hi] = world.quality_range;
    DeltaEstimate {
        emotion: e,
        predicted: world.zoom_gain[&e] - world.quality_penalty * (1.0 - (lo + hi) / 2.0),
        mean,
        half_width: 1.96 * (var / n).sqrt(),
        groups: ds.len(),
    }
}
