//! EMA Monte Carlo and calibration-map grid checks.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::reward_cases::view_with;
use zoomlab::calibration::{modulation_factors, CalibrationParams, EmaCalibrator, Modulation};
use zoomlab::types::Emotion;

pub struct EmaRun {
    /// EMA after each update, per trial.
    pub paths: Vec<Vec<f64>>,
}

/// Feeds `updates` i.i.d. N(mu, s²) batch means to a fresh calibrator, `trials` times.
pub fn ema_trials(trials: u64, updates: usize, mu: f64, s: f64, rho: f64) -> EmaRun {
    let params = CalibrationParams {
        rho,
        ..CalibrationParams::default()
    };
    let normal = Normal::new(mu, s).unwrap();
    let paths = (0..trials)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + t);
            let mut cal = EmaCalibrator::new();
            (0..updates)
                .map(|_| {
                    let batch = BTreeMap::from([(Emotion::Fear, vec![normal.sample(&mut rng)])]);
                    cal.update(&batch, &params);
                    cal.snapshot().delta_bar(Emotion::Fear)
                })
                .collect()
        })
        .collect();
    EmaRun { paths }
}

impl EmaRun {
    pub fn final_within(&self, mu: f64, tol: f64) -> usize {
        self.paths.iter().filter(|p| (p.last().unwrap() - mu).abs() < tol).count()
    }

    /// Variance of all values after `burn_in` updates, pooled over trials and steps.
    pub fn stationary_variance(&self, burn_in: usize) -> f64 {
        let xs: Vec<f64> = self.paths.iter().flat_map(|p| p[burn_in..].iter().copied()).collect();
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    }
}

/// Monotonicity, range, complementarity and pre-activation checks on a grid over [-1, 1].
pub fn check_map(params: &CalibrationParams, points: usize) -> Result<(), String> {
    let e = Emotion::Contempt;
    let mut prev: Option<Modulation> = None;
    for i in 0..points {
        let d = -1.0 + 2.0 * i as f64 / (points - 1) as f64;
        let m = modulation_factors(&view_with(e, d, params.activation_min_updates), e, params);
        for v in [m.lazy, m.unnec] {
            if !(params.phi_min..=params.phi_max).contains(&v) {
                return Err(format!("Δ̄={d}: factor {v} outside [{}, {}]", params.phi_min, params.phi_max));
            }
        }
        if (m.lazy + m.unnec - (params.phi_min + params.phi_max)).abs() > 1e-12 {
            return Err(format!("Δ̄={d}: φ_lazy + φ_unnec = {}", m.lazy + m.unnec));
        }
        if let Some(p) = prev {
            if !(m.lazy > p.lazy && m.unnec < p.unnec) {
                return Err(format!("Δ̄={d}: not strictly monotone ({p:?} -> {m:?})"));
            }
        }
        prev = Some(m);

        let cold = modulation_factors(&view_with(e, d, params.activation_min_updates - 1), e, params);
        if cold != Modulation::NEUTRAL {
            return Err(format!("Δ̄={d}: pre-activation factors {cold:?}"));
        }
    }
    Ok(())
}
