//! Straight-line transcription of the reward equations, kept independent of
//! the engine: no shared helpers beyond plain data.

use zoomlab::protocol::{Region, Trajectory, TrajectoryEvent};
use zoomlab::reward::RewardParams;
use zoomlab::types::{AuSet, Emotion};

use super::{answer, aus, detect, zoom};

/// One row of a scoring worksheet.
#[derive(Debug, Clone)]
pub struct Row {
    pub detected: bool,
    pub zoomed: bool,
    /// `None`: the episode ran out of budget without answering.
    pub pred: Option<(Emotion, Vec<u16>)>,
    pub high_confidence: bool,
    pub long_thought: bool,
    pub duplicate_answer: bool,
}

impl Row {
    pub fn trajectory(&self) -> Trajectory {
        let mut ev: Vec<TrajectoryEvent> = vec![detect(1, self.detected)];
        if self.long_thought {
            ev[0].thought = Some("x".repeat(3000));
        }
        if self.zoomed {
            ev.push(zoom(2, &[Region::EyePeriorbital, Region::Nose]));
        }
        if let Some((e, a)) = &self.pred {
            let s = ev.len() as u32 + 1;
            ev.push(answer(s, *e, &aus(a), self.high_confidence));
            if self.duplicate_answer {
                ev.push(answer(s + 1, *e, &aus(a), false));
            }
        }
        Trajectory::new(ev)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expected {
    pub r_acc: f64,
    pub r_fsm: f64,
    pub r_util: f64,
    pub r_qual: f64,
    pub total: f64,
    pub branch: &'static str,
    pub delta: Option<f64>,
}

fn f1(p: &[u16], t: &AuSet) -> f64 {
    let tp = p.iter().filter(|a| t.contains(**a)).count() as f64;
    let n = (p.len() + t.len()) as f64;
    if n == 0.0 {
        1.0
    } else {
        2.0 * tp / n
    }
}

/// Scores a worksheet. `phi` is `(φ_lazy, φ_unnec)` for the group's emotion.
pub fn score(rows: &[Row], label: Emotion, target: &AuSet, phi: (f64, f64), p: &RewardParams) -> Vec<Expected> {
    let g = rows.len();
    let mut r_acc = vec![0.0; g];
    let mut perf = vec![0.0; g];
    for i in 0..g {
        let (ok, f) = match &rows[i].pred {
            Some((e, a)) => (*e == label, f1(a, target)),
            None => (false, f1(&[], target)),
        };
        r_acc[i] = if ok { (1.0 - p.w_au) + p.w_au * f } else { p.r_wrong + 0.5 * p.w_au * f };
        perf[i] = if ok { 1.0 } else { f };
    }

    let mut sp = 0.0;
    let mut np = 0.0;
    let mut sm = 0.0;
    let mut nm = 0.0;
    for i in 0..g {
        if rows[i].detected && rows[i].zoomed {
            sp += r_acc[i];
            np += 1.0;
        }
        if rows[i].detected && !rows[i].zoomed {
            sm += r_acc[i];
            nm += 1.0;
        }
    }
    let delta = if np > 0.0 && nm > 0.0 { Some(sp / np - sm / nm) } else { None };

    let mut out = Vec::new();
    for i in 0..g {
        let r = &rows[i];
        // with no answer at all there is nothing to duplicate
        let dup = r.duplicate_answer && r.pred.is_some();
        let violations = (!r.detected && r.zoomed) as usize + r.pred.is_none() as usize + dup as usize;
        let r_fsm = if violations == 0 { 0.0 } else { (-p.kappa_fsm * violations as f64).max(p.r_fsm_min) };

        let (r_util, branch) = match delta {
            Some(d) if r.detected => {
                let h = p.h_scale * (p.h_slope * d.abs()).tanh();
                if d.abs() < p.epsilon {
                    (p.r_pos, "AdaptiveNeutral")
                } else if d >= p.epsilon && r.zoomed {
                    (p.r_pos, "AdaptiveConsistent")
                } else if d <= -p.epsilon && !r.zoomed {
                    (p.r_pos, "AdaptiveConsistent")
                } else if d >= p.epsilon {
                    (-h * phi.0, "AdaptiveLazyPenalty")
                } else {
                    (-h * phi.1, "AdaptiveUnnecPenalty")
                }
            }
            _ => {
                if perf[i] >= p.s_high {
                    (p.r_pos, "FallbackHigh")
                } else {
                    (p.r_neg, "FallbackLow")
                }
            }
        };

        let empty_claim = matches!(&r.pred, Some((_, a)) if a.is_empty()) && r.high_confidence;
        let flags = dup as usize + empty_claim as usize + r.long_thought as usize;
        let r_qual = if flags == 0 { 0.0 } else { (-p.qual_flag_penalty * flags as f64).max(p.r_qual_min) };

        let total = p.lambda * r_acc[i] + (1.0 - p.lambda) * (r_fsm + r_util) + r_qual;
        out.push(Expected {
            r_acc: r_acc[i],
            r_fsm,
            r_util,
            r_qual,
            total,
            branch,
            delta: if branch.starts_with("Adaptive") { delta } else { None },
        });
    }
    out
}
