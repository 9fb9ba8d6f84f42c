//! Declarative FSM legality oracle over a 7-symbol action alphabet.

use zoomlab::protocol::{validate, Region, Trajectory, Violation};
use zoomlab::types::Emotion;

use super::{answer, aus, detect, zoom};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sym {
    DetectOk,
    DetectFail,
    Zoom(Region),
    Answer,
}

pub const ALPHABET: [Sym; 7] = [
    Sym::DetectOk,
    Sym::DetectFail,
    Sym::Zoom(Region::ForeheadEyebrow),
    Sym::Zoom(Region::EyePeriorbital),
    Sym::Zoom(Region::Nose),
    Sym::Zoom(Region::MouthChin),
    Sym::Answer,
];

pub fn build(seq: &[Sym]) -> Trajectory {
    let events = seq
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let step = i as u32 + 1;
            match s {
                Sym::DetectOk => detect(step, true),
                Sym::DetectFail => detect(step, false),
                Sym::Zoom(r) => zoom(step, &[*r]),
                Sym::Answer => answer(step, Emotion::Fear, &aus(&[1, 4]), false),
            }
        })
        .collect();
    Trajectory::new(events)
}

/// The legality rules stated position by position over the whole sequence.
pub fn oracle(seq: &[Sym], budget: usize) -> Vec<Violation> {
    let mut v = Vec::new();
    if !seq.contains(&Sym::Answer) {
        v.push(Violation::MissingAnswer);
    }
    if let Some(first) = seq.iter().position(|s| *s == Sym::Answer) {
        if first + 1 < seq.len() {
            v.push(Violation::AnswerNotLast);
        }
    }
    if seq.len() > budget {
        v.push(Violation::BudgetExceeded);
    }
    let is_detect = |s: &Sym| matches!(s, Sym::DetectOk | Sym::DetectFail);
    let detects = seq.iter().filter(|s| is_detect(s)).count();
    for _ in 1..detects.max(1) {
        v.push(Violation::RepeatedDetect);
    }
    for (i, s) in seq.iter().enumerate() {
        let Sym::Zoom(r) = s else { continue };
        match seq[..i].iter().rev().find(|p| is_detect(p)) {
            None => v.push(Violation::ZoomBeforeDetect),
            Some(Sym::DetectFail) => v.push(Violation::ZoomAfterFailedDetect),
            _ => {}
        }
        if seq[..i].contains(&Sym::Zoom(*r)) {
            v.push(Violation::RepeatedZoomRegion);
        }
    }
    v.sort();
    v
}

pub fn sequences(max_len: usize) -> Vec<Vec<Sym>> {
    let mut all = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for a in ALPHABET {
                let mut t: Vec<Sym> = s.clone();
                t.push(a);
                next.push(t);
            }
        }
        all.extend(next.iter().cloned());
        frontier = next;
    }
    all
}

/// `validate` against the oracle on every sequence; `Err` describes the first mismatch.
pub fn check_exhaustive(seqs: &[Vec<Sym>], budget: usize) -> Result<(), String> {
    for seq in seqs {
        let verdict = validate(&build(seq), budget);
        let mut got = verdict.violations.clone();
        got.sort();
        let want = oracle(seq, budget);
        if got != want || verdict.legal != want.is_empty() {
            return Err(format!("{seq:?} budget {budget}: got {got:?}, want {want:?}"));
        }
        if !(verdict.r_fsm <= 0.0) || (verdict.r_fsm == 0.0) != verdict.legal {
            return Err(format!("{seq:?} budget {budget}: r_fsm {} inconsistent with legality", verdict.r_fsm));
        }
    }
    Ok(())
}
