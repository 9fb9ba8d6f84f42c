//! Short training runs and the checks made on their artifacts.

use zoomlab::calibration::{modulation_factors, CalibrationParams, EmaCalibrator};
use zoomlab::config::{load_config, train_spec, Variant};
use zoomlab::train::{write_metrics_csv, RunArtifact, StepTrace, TrainSpec};

pub fn spec(variant: Variant, steps: usize) -> TrainSpec {
    let ov = [("variant".to_string(), variant.name().to_string()), ("steps".to_string(), steps.to_string())];
    train_spec(&load_config(None, &ov).unwrap())
}

pub fn metrics_bytes(run: &RunArtifact) -> Vec<u8> {
    let mut buf = Vec::new();
    write_metrics_csv(&run.metrics, &mut buf).unwrap();
    buf
}

/// Rebuilds the calibrator from each step's checkpoint and recomputes every φ
/// that step used. Returns how many factors were compared bit for bit.
pub fn replay_phi(trace: &[StepTrace], params: &CalibrationParams) -> Result<usize, String> {
    let mut compared = 0;
    for t in trace {
        let view = EmaCalibrator::from_checkpoint(&t.checkpoint).snapshot();
        for (i, used) in t.phi.iter().enumerate() {
            let m = modulation_factors(&view, used.emotion, params);
            if m.lazy.to_bits() != used.lazy.to_bits() || m.unnec.to_bits() != used.unnec.to_bits() {
                return Err(format!("step {} group {i} ({:?}): replayed {m:?}, used {used:?}", t.step, used.emotion));
            }
            compared += 2;
        }
    }
    Ok(compared)
}
