//! Parametric zoom policy.
//!
//! A zoom head decides whether to inspect regions after alignment; answering
//! straight away is its complement. Given a zoom, a region head picks a nonempty
//! subset of the four regions: each region is drawn independently from its own
//! logistic, conditioned on the subset being nonempty. All probabilities are
//! computed exactly by enumerating the 15 nonempty subsets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::protocol::Region;

pub const N_FEATURES: usize = 3;
pub type Features = [f64; N_FEATURES];

const N_REGIONS: usize = 4;
/// Nonempty region subsets, as bit masks over `Region::ALL`.
const N_MASKS: usize = 1 << N_REGIONS;

/// Flat parameter count: zoom head then one block per region, each `N_FEATURES` weights and a bias.
pub const N_PARAMS: usize = (N_FEATURES + 1) * (1 + N_REGIONS);
pub type Gradient = [f64; N_PARAMS];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyParams {
    pub zoom_weights: [f64; N_FEATURES],
    pub zoom_bias: f64,
    pub region_weights: [[f64; N_FEATURES]; N_REGIONS],
    pub region_bias: [f64; N_REGIONS],
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log σ(x)`, stable for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

pub fn sigmoid(x: f64) -> f64 {
    crate::calibration::logistic(x)
}

fn dot(w: &[f64; N_FEATURES], x: &Features) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

impl PolicyParams {
    /// Feature-blind policy that zooms with probability `zoom_prob` and favours no region.
    pub fn initial(zoom_prob: f64) -> Self {
        assert!(zoom_prob > 0.0 && zoom_prob < 1.0);
        Self {
            zoom_weights: [0.0; N_FEATURES],
            zoom_bias: (zoom_prob / (1.0 - zoom_prob)).ln(),
            region_weights: [[0.0; N_FEATURES]; N_REGIONS],
            region_bias: [0.0; N_REGIONS],
        }
    }

    pub fn zoom_logit(&self, x: &Features) -> f64 {
        dot(&self.zoom_weights, x) + self.zoom_bias
    }

    pub fn zoom_probability(&self, x: &Features) -> f64 {
        sigmoid(self.zoom_logit(x))
    }

    pub fn region_logits(&self, x: &Features) -> [f64; N_REGIONS] {
        std::array::from_fn(|r| dot(&self.region_weights[r], x) + self.region_bias[r])
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(N_PARAMS);
        v.extend_from_slice(&self.zoom_weights);
        v.push(self.zoom_bias);
        for r in 0..N_REGIONS {
            v.extend_from_slice(&self.region_weights[r]);
            v.push(self.region_bias[r]);
        }
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), N_PARAMS);
        let block = N_FEATURES + 1;
        let head = |b: usize| -> ([f64; N_FEATURES], f64) {
            let s = &v[b * block..(b + 1) * block];
            (std::array::from_fn(|j| s[j]), s[N_FEATURES])
        };
        let (zoom_weights, zoom_bias) = head(0);
        let regions: Vec<_> = (0..N_REGIONS).map(|r| head(r + 1)).collect();
        Self {
            zoom_weights,
            zoom_bias,
            region_weights: std::array::from_fn(|r| regions[r].0),
            region_bias: std::array::from_fn(|r| regions[r].1),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

/// A sampled compound decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub zoom: bool,
    /// Regions in `Region::ALL` order; empty iff `zoom` is false.
    pub regions: Vec<Region>,
    pub logprob: f64,
}

impl Decision {
    fn mask(&self) -> usize {
        self.regions.iter().fold(0, |m, r| m | (1 << r.index()))
    }
}

fn regions_of(mask: usize) -> Vec<Region> {
    Region::ALL.into_iter().filter(|r| mask & (1 << r.index()) != 0).collect()
}

/// Conditional distribution of the region subset given a zoom.
struct RegionDist {
    log_q: [f64; N_MASKS],
    q: [f64; N_REGIONS],
    /// `P0 / (1 - P0)` with `P0` the probability of the (excluded) empty draw.
    empty_odds: f64,
}

impl RegionDist {
    fn new(m: &[f64; N_REGIONS]) -> Self {
        let log_on: [f64; N_REGIONS] = std::array::from_fn(|r| log_sigmoid(m[r]));
        let log_off: [f64; N_REGIONS] = std::array::from_fn(|r| log_sigmoid(-m[r]));
        let log_p0: f64 = log_off.iter().sum();
        let log_norm = (-log_p0.exp_m1()).ln();
        let mut log_q = [f64::NEG_INFINITY; N_MASKS];
        for (mask, lq) in log_q.iter_mut().enumerate().skip(1) {
            *lq = (0..N_REGIONS)
                .map(|r| if mask & (1 << r) != 0 { log_on[r] } else { log_off[r] })
                .sum::<f64>()
                - log_norm;
        }
        Self {
            log_q,
            q: std::array::from_fn(|r| sigmoid(m[r])),
            empty_odds: (log_p0 - log_norm).exp(),
        }
    }

    /// `∂ log Q(mask) / ∂ m_r`.
    fn score(&self, mask: usize, r: usize) -> f64 {
        let s = if mask & (1 << r) != 0 { 1.0 } else { 0.0 };
        s - self.q[r] - self.q[r] * self.empty_odds
    }

    fn masks(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        (1..N_MASKS).map(move |m| (m, self.log_q[m].exp(), self.log_q[m]))
    }
}

/// Samples a decision. Always consumes exactly two uniforms so that coupled
/// streams stay aligned whatever the outcome.
pub fn policy_decision<R: Rng + ?Sized>(params: &PolicyParams, x: &Features, rng: &mut R) -> Decision {
    let u_zoom: f64 = rng.random();
    let u_region: f64 = rng.random();
    let l = params.zoom_logit(x);
    if u_zoom >= sigmoid(l) {
        return Decision {
            zoom: false,
            regions: Vec::new(),
            logprob: log_sigmoid(-l),
        };
    }
    let dist = RegionDist::new(&params.region_logits(x));
    let mut acc = 0.0;
    let mut chosen = N_MASKS - 1;
    for (mask, q, _) in dist.masks() {
        acc += q;
        if u_region < acc {
            chosen = mask;
            break;
        }
    }
    Decision {
        zoom: true,
        regions: regions_of(chosen),
        logprob: log_sigmoid(l) + dist.log_q[chosen],
    }
}

/// Exact log-probability of a decision under `params`.
pub fn decision_logprob(params: &PolicyParams, x: &Features, d: &Decision) -> f64 {
    let l = params.zoom_logit(x);
    if !d.zoom {
        return log_sigmoid(-l);
    }
    log_sigmoid(l) + RegionDist::new(&params.region_logits(x)).log_q[d.mask()]
}

fn accumulate(grad: &mut Gradient, x: &Features, d_zoom: f64, d_region: &[f64; N_REGIONS]) {
    let block = N_FEATURES + 1;
    for j in 0..N_FEATURES {
        grad[j] += d_zoom * x[j];
    }
    grad[N_FEATURES] += d_zoom;
    for r in 0..N_REGIONS {
        let b = (r + 1) * block;
        for j in 0..N_FEATURES {
            grad[b + j] += d_region[r] * x[j];
        }
        grad[b + N_FEATURES] += d_region[r];
    }
}

/// Adds `scale · ∇ log π(d | x)` to `grad`.
pub fn add_logprob_grad(grad: &mut Gradient, params: &PolicyParams, x: &Features, d: &Decision, scale: f64) {
    let p = params.zoom_probability(x);
    if !d.zoom {
        accumulate(grad, x, -p * scale, &[0.0; N_REGIONS]);
        return;
    }
    let dist = RegionDist::new(&params.region_logits(x));
    let mask = d.mask();
    let d_region = std::array::from_fn(|r| dist.score(mask, r) * scale);
    accumulate(grad, x, (1.0 - p) * scale, &d_region);
}

/// KL divergence to a reference policy and entropy of the compound decision at `x`,
/// with gradients with respect to `params`.
#[derive(Debug, Clone)]
pub struct DecisionStats {
    pub kl: f64,
    pub entropy: f64,
    pub kl_grad: Gradient,
    pub entropy_grad: Gradient,
}

/// Entropy ceiling: no-zoom plus 15 region subsets, equally likely.
pub fn max_entropy() -> f64 {
    (N_MASKS as f64).ln()
}

pub fn decision_stats(params: &PolicyParams, reference: &PolicyParams, x: &Features) -> DecisionStats {
    let l = params.zoom_logit(x);
    let l0 = reference.zoom_logit(x);
    let p = sigmoid(l);
    let dp = p * (1.0 - p);
    let (lp, lq) = (log_sigmoid(l), log_sigmoid(-l));
    let (lp0, lq0) = (log_sigmoid(l0), log_sigmoid(-l0));

    let kl_bern = p * (lp - lp0) + (1.0 - p) * (lq - lq0);
    let h_bern = -(p * lp + (1.0 - p) * lq);

    let dist = RegionDist::new(&params.region_logits(x));
    let dist0 = RegionDist::new(&reference.region_logits(x));
    let mut kl_r = 0.0;
    let mut h_r = 0.0;
    let mut d_kl_r = [0.0; N_REGIONS];
    let mut d_h_r = [0.0; N_REGIONS];
    for (mask, q, log_q) in dist.masks() {
        let log_ratio = log_q - dist0.log_q[mask];
        kl_r += q * log_ratio;
        h_r -= q * log_q;
        for r in 0..N_REGIONS {
            let g = q * dist.score(mask, r);
            d_kl_r[r] += g * log_ratio;
            d_h_r[r] -= g * log_q;
        }
    }

    let mut kl_grad = [0.0; N_PARAMS];
    let mut entropy_grad = [0.0; N_PARAMS];
    accumulate(
        &mut kl_grad,
        x,
        dp * ((l - l0) + kl_r),
        &std::array::from_fn(|r| p * d_kl_r[r]),
    );
    accumulate(
        &mut entropy_grad,
        x,
        dp * (-l + h_r),
        &std::array::from_fn(|r| p * d_h_r[r]),
    );
    DecisionStats {
        kl: kl_bern + p * kl_r,
        entropy: h_bern + p * h_r,
        kl_grad,
        entropy_grad,
    }
}
