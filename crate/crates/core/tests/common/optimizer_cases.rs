//! Random reward groups and policy points for the optimizer checks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use zoomlab::grpo::{group_advantages, surrogate, surrogate_gradient, OptimizerConfig, PolicyGroup};
use zoomlab::policy::{policy_decision, PolicyParams, N_PARAMS};

/// Population mean and standard deviation.
pub fn mean_sd(a: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let m = a.iter().sum::<f64>() / n;
    (m, (a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

pub fn random_rewards(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let g = rng.random_range(2..9);
    match rng.random_range(0..4) {
        // all equal
        0 => vec![rng.random_range(-1.0..1.0); g],
        // a few distinct reward levels, as the engine produces
        1 => (0..g).map(|_| [-0.5, 0.09, 0.72][rng.random_range(0..3)]).collect(),
        _ => (0..g).map(|_| rng.random_range(-2.0..2.0)).collect(),
    }
}

/// Mean, unit-sd, zero-variance and shift checks on one group.
pub fn check_advantages(r: &[f64], shift: f64, floor: f64) -> Result<(), String> {
    let adv = group_advantages(r, floor);
    let (m, sd) = mean_sd(&adv);
    if !(m.abs() <= 1e-9) {
        return Err(format!("mean {m:e} on {r:?}"));
    }
    let (_, sigma) = mean_sd(r);
    if sigma > floor && !((sd - 1.0).abs() <= 1e-9) {
        return Err(format!("sd {sd} on {r:?}"));
    }
    if r.iter().all(|x| *x == r[0]) && !adv.iter().all(|a| *a == 0.0) {
        return Err(format!("nonzero advantages for equal rewards {r:?}"));
    }
    let shifted: Vec<f64> = r.iter().map(|x| x + shift).collect();
    for (a, b) in adv.iter().zip(group_advantages(&shifted, floor)) {
        if !((a - b).abs() <= 1e-12) {
            return Err(format!("shift {shift} on {r:?}: {a} vs {b}"));
        }
    }
    Ok(())
}

pub fn random_point(rng: &mut ChaCha8Rng) -> (PolicyParams, PolicyParams, Vec<PolicyGroup>) {
    let params = PolicyParams::from_slice(&(0..N_PARAMS).map(|_| rng.random_range(-1.5..1.5)).collect::<Vec<_>>());
    let reference = PolicyParams::from_slice(&(0..N_PARAMS).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
    let groups = (0..4)
        .map(|_| {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0];
            let x = [x[0], x[1], x[0] * x[1]];
            let decisions = (0..5)
                .map(|_| rng.random_bool(0.85).then(|| policy_decision(&params, &x, rng)))
                .collect();
            PolicyGroup {
                features: x,
                decisions,
                rewards: (0..5).map(|_| rng.random_range(-0.6..1.0)).collect(),
            }
        })
        .collect();
    (params, reference, groups)
}

/// Worst relative error between the analytic gradient and central differences.
pub fn gradient_error(params: &PolicyParams, reference: &PolicyParams, groups: &[PolicyGroup], h: f64) -> f64 {
    let cfg = OptimizerConfig::default();
    let analytic = surrogate_gradient(params, reference, groups, &cfg);
    let base = params.to_vec();
    let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut worst: f64 = 0.0;
    for k in 0..N_PARAMS {
        let mut up = base.clone();
        let mut down = base.clone();
        up[k] += h;
        down[k] -= h;
        let fd = (surrogate(&PolicyParams::from_slice(&up), reference, groups, &cfg)
            - surrogate(&PolicyParams::from_slice(&down), reference, groups, &cfg))
            / (2.0 * h);
        // relative to the component, or to the gradient's scale for components near zero
        let rel = (analytic[k] - fd).abs() / analytic[k].abs().max(fd.abs()).max(1e-3 * scale);
        worst = worst.max(rel);
    }
    worst
}
