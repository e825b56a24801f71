//! Seeded synthetic class-semantics sequences.
//!
//! Each class has a fixed unit-norm prototype vector, as does the background.
//! A video is a `C_in × T` grid whose column `t` is the prototype of the class
//! active at `t` plus isotropic Gaussian noise, so class semantics change along
//! the temporal axis exactly at the ground-truth boundaries.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Grid;

const MAX_PACKING_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub num_videos: usize,
    /// Temporal points per video.
    pub t: usize,
    /// Feature channels per temporal point.
    pub c_in: usize,
    pub num_classes: usize,
    /// Inclusive `[min, max]` number of segments per video.
    pub segments_per_video: [usize; 2],
    pub min_segment_len: usize,
    pub max_segment_len: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            num_videos: 250,
            t: 50,
            c_in: 32,
            num_classes: 3,
            segments_per_video: [1, 4],
            min_segment_len: 4,
            max_segment_len: 15,
            noise_sigma: 0.25,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.segments_per_video;
        let checks = [
            (self.num_videos >= 1, "gen_spec.num_videos must be at least 1"),
            (self.t >= 2, "gen_spec.t must be at least 2"),
            (self.c_in >= 1, "gen_spec.c_in must be at least 1"),
            (self.num_classes >= 1, "gen_spec.num_classes must be at least 1"),
            (lo <= hi, "gen_spec.segments_per_video must be [min, max] with min <= max"),
            (self.min_segment_len >= 1, "gen_spec.min_segment_len must be at least 1"),
            (self.min_segment_len <= self.max_segment_len, "gen_spec.min_segment_len exceeds max_segment_len"),
            (self.max_segment_len < self.t, "gen_spec.max_segment_len must be below t"),
            (self.noise_sigma.is_finite() && self.noise_sigma >= 0.0, "gen_spec.noise_sigma must be finite and >= 0"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::config(*msg)),
            None => Ok(()),
        }
    }
}

/// Ground-truth action instance in index units. Class `class_id` is active at
/// every temporal point `start <= t < end`; `end <= T - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticVideo {
    pub id: usize,
    #[serde(rename = "R")]
    pub features: Grid,
    pub segments: Vec<Segment>,
}

/// Unit-norm class and background prototypes shared by every video of a spec.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub background: Vec<f64>,
    pub classes: Vec<Vec<f64>>,
}

fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn prototypes(spec: &GenSpec) -> Prototypes {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // separate stream so prototypes never share draws with video 0
    rng.set_stream(1);
    let background = unit_vector(spec.c_in, &mut rng);
    let classes = (0..spec.num_classes).map(|_| unit_vector(spec.c_in, &mut rng)).collect();
    Prototypes { background, classes }
}

/// Draws disjoint, sorted segments (closed intervals `[start, end]` never touch).
fn draw_segments(spec: &GenSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Segment>> {
    let [lo, hi] = spec.segments_per_video;
    let span = spec.t - 1;
    for _ in 0..MAX_PACKING_ATTEMPTS {
        let n = rng.random_range(lo..=hi);
        let lengths: Vec<usize> =
            (0..n).map(|_| rng.random_range(spec.min_segment_len..=spec.max_segment_len)).collect();
        let needed = lengths.iter().sum::<usize>() + n.saturating_sub(1);
        if needed > span {
            continue;
        }
        let slack = span - needed;
        let mut offsets: Vec<usize> = (0..n).map(|_| rng.random_range(0..=slack)).collect();
        offsets.sort_unstable();
        let mut segments = Vec::with_capacity(n);
        let mut cursor = 0;
        for (len, offset) in lengths.iter().zip(offsets) {
            let start = cursor + offset;
            segments.push(Segment { start, end: start + len, class_id: rng.random_range(0..spec.num_classes) });
            cursor += len + 1;
        }
        return Ok(segments);
    }
    Err(Error::Generation(format!(
        "could not pack {lo}..={hi} segments of length {}..={} into T={} after {MAX_PACKING_ATTEMPTS} draws",
        spec.min_segment_len, spec.max_segment_len, spec.t
    )))
}

/// Generates one video; `index` derives its seed as `spec.seed + index`.
pub fn generate_video(spec: &GenSpec, protos: &Prototypes, index: usize) -> Result<SyntheticVideo> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(index as u64));
    let segments = draw_segments(spec, &mut rng)?;
    let mut labels: Vec<Option<usize>> = vec![None; spec.t];
    for seg in &segments {
        labels[seg.start..seg.end].iter_mut().for_each(|l| *l = Some(seg.class_id));
    }
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::config(e.to_string()))?;
    let mut features = Grid::zeros(spec.c_in, spec.t);
    for (t, label) in labels.iter().enumerate() {
        let proto = label.map_or(&protos.background, |c| &protos.classes[c]);
        for (c, &p) in proto.iter().enumerate() {
            let eps = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            features.set(c, t, p + eps);
        }
    }
    Ok(SyntheticVideo { id: index, features, segments })
}

pub fn generate(spec: &GenSpec) -> Result<Vec<SyntheticVideo>> {
    spec.validate()?;
    let protos = prototypes(spec);
    (0..spec.num_videos).map(|i| generate_video(spec, &protos, i)).collect()
}

/// Deterministic shuffle-then-split into `(train, val)`.
pub fn split(
    videos: &[SyntheticVideo],
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<SyntheticVideo>, Vec<SyntheticVideo>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::config(format!("train_frac must be in (0, 1), got {train_frac}")));
    }
    let mut order: Vec<usize> = (0..videos.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_frac * videos.len() as f64).round() as usize;
    if n_train == 0 || n_train == videos.len() {
        return Err(Error::config(format!(
            "split of {} videos at train_frac={train_frac} leaves one side empty",
            videos.len()
        )));
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| videos[i].clone()).collect();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

/// A generated dataset as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub spec: GenSpec,
    pub videos: Vec<SyntheticVideo>,
}

impl Dataset {
    pub fn generate(spec: GenSpec) -> Result<Self> {
        let videos = generate(&spec)?;
        Ok(Self { spec, videos })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn zero_noise_columns_equal_prototypes() {
        let spec = GenSpec { num_videos: 10, noise_sigma: 0.0, seed: 3, ..Default::default() };
        let protos = prototypes(&spec);
        for video in generate(&spec).unwrap() {
            for seg in &video.segments {
                let p = &protos.classes[seg.class_id];
                for t in seg.start..seg.end {
                    let col = video.features.column(t);
                    assert_eq!(&col, p);
                    let cos = dot(&col, p) / (dot(&col, &col).sqrt() * dot(p, p).sqrt());
                    assert!((cos - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_output() {
        let spec = GenSpec { num_videos: 5, seed: 42, ..Default::default() };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = GenSpec { seed: 43, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn segment_contract_holds() {
        let spec = GenSpec { num_videos: 100, seed: 9, ..Default::default() };
        for video in generate(&spec).unwrap() {
            assert!((1..=4).contains(&video.segments.len()));
            for seg in &video.segments {
                assert!(seg.start < seg.end && seg.end < 50);
                assert!((4..=15).contains(&(seg.end - seg.start)));
                assert!(seg.class_id < 3);
            }
            for pair in video.segments.windows(2) {
                assert!(pair[0].end < pair[1].start, "segments must be sorted and disjoint");
            }
            assert!(video.features.is_finite());
        }
    }

    #[test]
    fn noise_variance_matches_sigma() {
        let spec = GenSpec { num_videos: 20, seed: 1, ..Default::default() };
        let protos = prototypes(&spec);
        let mut sum_sq = 0.0;
        let mut n = 0usize;
        for video in generate(&spec).unwrap() {
            for t in 0..spec.t {
                let proto = video
                    .segments
                    .iter()
                    .find(|s| (s.start..s.end).contains(&t))
                    .map_or(&protos.background, |s| &protos.classes[s.class_id]);
                for (c, p) in proto.iter().enumerate() {
                    let e = video.features.get(c, t) - p;
                    sum_sq += e * e;
                    n += 1;
                }
            }
        }
        assert!(n >= 10_000);
        let var = sum_sq / n as f64;
        let target = spec.noise_sigma * spec.noise_sigma;
        assert!((var - target).abs() < 0.2 * target, "empirical variance {var}");
    }

    #[test]
    fn linear_probe_separates_foreground_at_zero_noise() {
        // projecting onto the background prototype gives exactly 1 on background
        // and <P_c, P_0> < 1 inside segments
        let spec = GenSpec { num_videos: 30, noise_sigma: 0.0, seed: 5, ..Default::default() };
        let protos = prototypes(&spec);
        let margin = protos.classes.iter().map(|p| dot(p, &protos.background)).fold(f64::MIN, f64::max);
        assert!(margin < 1.0 - 1e-9);
        let threshold = 0.5 * (1.0 + margin);
        for video in generate(&spec).unwrap() {
            for t in 0..spec.t {
                let foreground = video.segments.iter().any(|s| (s.start..s.end).contains(&t));
                let score = dot(&video.features.column(t), &protos.background);
                assert_eq!(score < threshold, foreground);
            }
        }
    }

    #[test]
    fn infeasible_packing_is_a_generation_error() {
        let spec = GenSpec {
            num_videos: 1,
            t: 10,
            segments_per_video: [3, 3],
            min_segment_len: 4,
            max_segment_len: 5,
            ..Default::default()
        };
        assert!(matches!(generate(&spec), Err(Error::Generation(_))));
    }

    #[test]
    fn invalid_gen_spec_is_config_error() {
        let spec = GenSpec { max_segment_len: 60, ..Default::default() };
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn split_contract() {
        let videos = generate(&GenSpec { num_videos: 100, t: 20, max_segment_len: 6, ..Default::default() }).unwrap();
        let (train, val) = split(&videos, 0.8, 7).unwrap();
        assert_eq!((train.len(), val.len()), (80, 20));
        let mut ids: Vec<usize> = train.iter().chain(&val).map(|v| v.id).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..100).collect::<Vec<_>>());
        assert_eq!(split(&videos, 0.8, 7).unwrap(), (train, val));
        assert!(split(&videos, 1.0, 7).is_err());
        assert!(split(&videos[..1], 0.5, 7).is_err());
    }

    #[test]
    fn dataset_json_round_trip() {
        let ds = Dataset::generate(GenSpec { num_videos: 3, t: 12, c_in: 4, max_segment_len: 5, ..Default::default() })
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.json");
        ds.save(&path).unwrap();
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(json["videos"][0]["R"]["shape"], serde_json::json!([4, 12]));
        assert_eq!(Dataset::load(&path).unwrap(), ds);
    }
}
