use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::tiou;
use crate::tensor::Vec1;

/// Proposals whose tIoU with a higher-scored one exceeds this are dropped.
pub const NMS_TIOU: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

/// Strict local maxima plus every point above half the peak, minus points with
/// a strictly higher immediate neighbour. The last rule keeps one point per
/// ±1 plateau, which is what the boundary targets train the heads to emit.
fn candidates(p: &[f64]) -> Vec<usize> {
    let peak = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..p.len())
        .filter(|&t| {
            let left = t == 0 || p[t] > p[t - 1];
            let right = t + 1 == p.len() || p[t] > p[t + 1];
            let shadowed = (t > 0 && p[t - 1] > p[t]) || (t + 1 < p.len() && p[t + 1] > p[t]);
            ((left && right) || p[t] > 0.5 * peak) && !shadowed
        })
        .collect()
}

/// Pairs start and end candidates into scored proposals, sorted by score and
/// thinned by NMS. `d_max` bounds `end - start`.
pub fn decode_proposals(p_start: &Vec1, p_end: &Vec1, max_proposals: usize, d_max: usize) -> Result<Vec<Proposal>> {
    if p_start.len() != p_end.len() {
        return Err(Error::shape(format!(
            "start head has {} points, end head has {}",
            p_start.len(),
            p_end.len()
        )));
    }
    let (ps, pe) = (p_start.values(), p_end.values());
    if ps.iter().chain(pe).any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Domain("boundary probabilities must lie in [0, 1]".into()));
    }
    let ends = candidates(pe);
    let mut pairs = Vec::new();
    for s in candidates(ps) {
        for &e in ends.iter().filter(|&&e| e > s && e - s <= d_max) {
            let score = ps[s] * pe[e];
            if score > 0.0 {
                pairs.push(Proposal { start: s, end: e, score });
            }
        }
    }
    pairs.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.start.cmp(&b.start)).then(a.end.cmp(&b.end)));

    let mut kept: Vec<Proposal> = Vec::new();
    for p in pairs {
        if kept.len() >= max_proposals {
            break;
        }
        let span = (p.start as f64, p.end as f64);
        let mut suppressed = false;
        for k in &kept {
            if tiou(span, (k.start as f64, k.end as f64))? > NMS_TIOU {
                suppressed = true;
                break;
            }
        }
        if !suppressed {
            kept.push(p);
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_hot(t: usize, at: usize, v: f64) -> Vec1 {
        let mut x = Vec1::zeros(t);
        x.values_mut()[at] = v;
        x
    }

    #[test]
    fn one_hot_heads_give_one_proposal() {
        let props = decode_proposals(&one_hot(20, 3, 0.9), &one_hot(20, 10, 0.8), 100, 10).unwrap();
        assert_eq!(props.len(), 1);
        assert_eq!((props[0].start, props[0].end), (3, 10));
        assert!((props[0].score - 0.72).abs() < 1e-12);
    }

    #[test]
    fn too_long_pair_is_dropped() {
        let props = decode_proposals(&one_hot(20, 3, 0.9), &one_hot(20, 15, 0.8), 100, 10).unwrap();
        assert!(props.is_empty());
    }

    #[test]
    fn end_before_start_is_dropped() {
        let props = decode_proposals(&one_hot(20, 10, 0.9), &one_hot(20, 3, 0.8), 100, 20).unwrap();
        assert!(props.is_empty());
    }

    #[test]
    fn uniform_heads_enumerate_every_pair() {
        let p = Vec1::filled(5, 0.5);
        let props = decode_proposals(&p, &p, 100, 4).unwrap();
        let spans: Vec<(usize, usize)> = props.iter().map(|q| (q.start, q.end)).collect();
        let expected: Vec<(usize, usize)> = (0..5).flat_map(|s| (s + 1..5).map(move |e| (s, e))).collect();
        assert_eq!(spans, expected);
        assert!(props.iter().all(|q| q.score == 0.25));
    }

    #[test]
    fn plateau_keeps_only_its_top() {
        let mut ps = Vec1::zeros(20);
        ps.values_mut()[2..5].copy_from_slice(&[0.97, 0.99, 0.98]);
        let pe = one_hot(20, 12, 0.9);
        let props = decode_proposals(&ps, &pe, 100, 20).unwrap();
        assert_eq!(props.iter().map(|p| p.start).collect::<Vec<_>>(), vec![3]);
    }

    #[test]
    fn nms_drops_near_duplicates() {
        let mut ps = Vec1::zeros(40);
        ps.values_mut()[0] = 0.9;
        ps.values_mut()[1] = 0.85;
        let pe = one_hot(40, 30, 0.9);
        let props = decode_proposals(&ps, &pe, 100, 40).unwrap();
        // [1,30] overlaps [0,30] with tIoU 29/30 > 0.9
        assert_eq!(props.len(), 1);
        assert_eq!(props[0].start, 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(decode_proposals(&Vec1::zeros(5), &Vec1::zeros(6), 10, 5).is_err());
        assert!(decode_proposals(&Vec1::filled(5, 1.5), &Vec1::zeros(5), 10, 5).is_err());
    }

    proptest! {
        #[test]
        fn proposal_invariants(ps in prop::collection::vec(0.0f64..=1.0, 2..30), seed in any::<u64>(), max in 1usize..20, d in 1usize..30) {
            let t = ps.len();
            let pe: Vec<f64> = (0..t).map(|i| ((seed.wrapping_mul(i as u64 + 7) >> 11) % 1000) as f64 / 1000.0).collect();
            let props = decode_proposals(&Vec1::new(ps), &Vec1::new(pe), max, d).unwrap();
            prop_assert!(props.len() <= max);
            for p in &props {
                prop_assert!(p.start < p.end && p.end < t && p.end - p.start <= d);
                prop_assert!(p.score > 0.0 && p.score <= 1.0);
            }
            prop_assert!(props.windows(2).all(|w| w[0].score >= w[1].score));
        }
    }
}
