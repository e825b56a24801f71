use crate::error::{Error, Result};
use crate::synth::Segment;
use crate::tensor::{Tape, Var, Vec1};

/// Binary start/end targets with a ±1 tolerance around each boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTargets {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

pub fn boundary_targets(segments: &[Segment], t: usize) -> BoundaryTargets {
    let mark = |points: &mut Vec<f64>, at: usize| {
        for i in at.saturating_sub(1)..=(at + 1).min(t - 1) {
            points[i] = 1.0;
        }
    };
    let mut start = vec![0.0; t];
    let mut end = vec![0.0; t];
    for s in segments {
        mark(&mut start, s.start);
        mark(&mut end, s.end);
    }
    BoundaryTargets { start, end }
}

/// Positives and negatives each carry half the weight. A head without
/// positives (or without negatives) falls back to the plain mean.
fn balanced_weights(targets: &[f64]) -> Vec<f64> {
    let pos = targets.iter().filter(|&&y| y > 0.5).count();
    let neg = targets.len() - pos;
    if pos == 0 || neg == 0 {
        return vec![1.0 / targets.len() as f64; targets.len()];
    }
    let (wp, wn) = (0.5 / pos as f64, 0.5 / neg as f64);
    targets.iter().map(|&y| if y > 0.5 { wp } else { wn }).collect()
}

/// Sum of the balanced BCE of both heads, recorded on `tape`.
pub fn record_boundary_loss(tape: &mut Tape, p_start: Var, p_end: Var, segments: &[Segment]) -> Result<Var> {
    let t = tape.shape(p_start).iter().product::<usize>();
    if tape.shape(p_end).iter().product::<usize>() != t || t == 0 {
        return Err(Error::shape("start and end predictions must have the same positive length"));
    }
    let targets = boundary_targets(segments, t);
    let ws = balanced_weights(&targets.start);
    let we = balanced_weights(&targets.end);
    let ls = tape.bce(p_start, targets.start, ws)?;
    let le = tape.bce(p_end, targets.end, we)?;
    tape.add(ls, le)
}

pub fn boundary_loss(p_start: &Vec1, p_end: &Vec1, segments: &[Segment]) -> Result<f64> {
    let mut tape = Tape::new();
    let ps = tape.input_vec(p_start);
    let pe = tape.input_vec(p_end);
    let loss = record_boundary_loss(&mut tape, ps, pe, segments)?;
    Ok(tape.scalar(loss))
}
