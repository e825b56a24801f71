//! Temporal detection metrics: tIoU, AP, mAP over tIoU thresholds, AR@AN and AUC.
//!
//! AP is the exact area under the stepwise precision/recall curve (no
//! interpolation). AR@AN keeps the top-AN proposals per video and counts a
//! ground-truth instance as recalled when any kept proposal reaches the tIoU
//! threshold. AUC is the trapezoidal area under AR(AN), normalised by the AN
//! range and expressed as a percentage.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtSegment {
    pub video_id: String,
    pub start: f64,
    pub end: f64,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub video_id: String,
    pub start: f64,
    pub end: f64,
    pub score: f64,
    pub class_id: usize,
}

/// THUMOS-style mAP thresholds.
pub const THUMOS_TIOUS: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];
/// ActivityNet-style reported thresholds.
pub const ACTIVITYNET_TIOUS: [f64; 3] = [0.5, 0.75, 0.95];

/// `{0.5, 0.55, …, 0.95}`, the ActivityNet averaging grid; also the default AR grid.
pub fn activitynet_average_tious() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// AN values `1..=100`.
pub fn default_an_values() -> Vec<usize> {
    (1..=100).collect()
}

fn check_interval(a: (f64, f64)) -> Result<()> {
    if !(a.0.is_finite() && a.1.is_finite() && a.0 < a.1) {
        return Err(Error::Domain(format!("interval [{}, {}] is empty or invalid", a.0, a.1)));
    }
    Ok(())
}

/// Intersection over union of two temporal intervals.
pub fn tiou(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    check_interval(a)?;
    check_interval(b)?;
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    Ok(inter / union)
}

/// Ranking order: score descending, then earlier start, then video, then end.
pub(crate) fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.start.total_cmp(&b.start))
        .then_with(|| a.video_id.cmp(&b.video_id))
        .then(a.end.total_cmp(&b.end))
}

fn validate(dets: &[Detection], gts: &[GtSegment]) -> Result<()> {
    for d in dets {
        check_interval((d.start, d.end))?;
        if !d.score.is_finite() {
            return Err(Error::Domain(format!("non-finite detection score in video {}", d.video_id)));
        }
    }
    gts.iter().try_for_each(|g| check_interval((g.start, g.end)))
}

/// AP of one class at one tIoU threshold; `None` when there is no ground truth.
pub fn average_precision(dets: &[Detection], gts: &[GtSegment], threshold: f64) -> Result<Option<f64>> {
    validate(dets, gts)?;
    if gts.is_empty() {
        return Ok(None);
    }
    let mut by_video: HashMap<&str, Vec<(f64, f64)>> = HashMap::new();
    for g in gts {
        by_video.entry(g.video_id.as_str()).or_default().push((g.start, g.end));
    }
    let mut matched: HashMap<&str, Vec<bool>> = by_video.iter().map(|(k, v)| (*k, vec![false; v.len()])).collect();

    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| rank_order(a, b));

    let mut tp = 0usize;
    let mut sum = 0.0;
    for (rank, det) in order.iter().enumerate() {
        let Some(candidates) = by_video.get(det.video_id.as_str()) else { continue };
        let used = matched.get_mut(det.video_id.as_str()).expect("matched mirrors by_video");
        let mut best: Option<(usize, f64)> = None;
        for (i, &seg) in candidates.iter().enumerate() {
            if used[i] {
                continue;
            }
            let overlap = tiou((det.start, det.end), seg)?;
            if overlap >= threshold && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((i, overlap));
            }
        }
        if let Some((i, _)) = best {
            used[i] = true;
            tp += 1;
            sum += tp as f64 / (rank + 1) as f64;
        }
    }
    Ok(Some(sum / gts.len() as f64))
}

/// mAP per threshold plus the average over thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapTable {
    pub thresholds: Vec<f64>,
    pub map: Vec<f64>,
    pub average: f64,
    /// Classes with at least one ground-truth instance; the others are excluded.
    pub classes_evaluated: Vec<usize>,
}

impl MapTable {
    pub fn at(&self, threshold: f64) -> Option<f64> {
        self.thresholds.iter().position(|&t| (t - threshold).abs() < 1e-12).map(|i| self.map[i])
    }
}

pub fn map_at_tious(dets: &[Detection], gts: &[GtSegment], thresholds: &[f64]) -> Result<MapTable> {
    if thresholds.is_empty() {
        return Err(Error::Domain("at least one tIoU threshold is required".into()));
    }
    let classes: BTreeSet<usize> = gts.iter().map(|g| g.class_id).collect();
    let mut map = Vec::with_capacity(thresholds.len());
    for &thr in thresholds {
        let mut total = 0.0;
        for &c in &classes {
            let class_dets: Vec<Detection> = dets.iter().filter(|d| d.class_id == c).cloned().collect();
            let class_gts: Vec<GtSegment> = gts.iter().filter(|g| g.class_id == c).cloned().collect();
            total += average_precision(&class_dets, &class_gts, thr)?.unwrap_or(0.0);
        }
        map.push(if classes.is_empty() { 0.0 } else { total / classes.len() as f64 });
    }
    let average = map.iter().sum::<f64>() / map.len() as f64;
    Ok(MapTable { thresholds: thresholds.to_vec(), map, average, classes_evaluated: classes.into_iter().collect() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArCurve {
    pub an: Vec<usize>,
    pub ar: Vec<f64>,
    /// Percentage in `[0, 100]`.
    pub auc: f64,
}

impl ArCurve {
    pub fn at(&self, an: usize) -> Option<f64> {
        self.an.iter().position(|&a| a == an).map(|i| self.ar[i])
    }
}

/// Trapezoidal area under `ar(an)` divided by the AN span, in percent. A single
/// point degenerates to `100 · ar`.
pub fn auc_percent(an: &[usize], ar: &[f64]) -> f64 {
    match an.len() {
        0 => 0.0,
        1 => 100.0 * ar[0],
        _ => {
            let area: f64 = an
                .windows(2)
                .zip(ar.windows(2))
                .map(|(x, y)| (x[1] - x[0]) as f64 * (y[0] + y[1]) / 2.0)
                .sum();
            100.0 * area / (an[an.len() - 1] - an[0]) as f64
        }
    }
}

/// Average recall at each AN (top-AN proposals kept per video), averaged over `tiou_set`.
pub fn ar_at_an(proposals: &[Detection], gts: &[GtSegment], an_values: &[usize], tiou_set: &[f64]) -> Result<ArCurve> {
    validate(proposals, gts)?;
    if an_values.is_empty() || an_values.contains(&0) {
        return Err(Error::Domain("AN values must be at least 1".into()));
    }
    if tiou_set.is_empty() {
        return Err(Error::Domain("AR needs at least one tIoU threshold".into()));
    }
    let mut an: Vec<usize> = an_values.to_vec();
    an.sort_unstable();
    an.dedup();

    let mut per_video: HashMap<&str, Vec<&Detection>> = HashMap::new();
    for p in proposals {
        per_video.entry(p.video_id.as_str()).or_default().push(p);
    }
    per_video.values_mut().for_each(|v| v.sort_by(|a, b| rank_order(a, b)));

    // first_hit[g][k]: smallest rank whose proposal covers gt g at tiou_set[k]
    let mut first_hit: Vec<Vec<Option<usize>>> = Vec::with_capacity(gts.len());
    for g in gts {
        let ranked = per_video.get(g.video_id.as_str()).map_or(&[][..], Vec::as_slice);
        let mut hits = vec![None; tiou_set.len()];
        for (rank, p) in ranked.iter().enumerate() {
            let overlap = tiou((p.start, p.end), (g.start, g.end))?;
            for (k, &thr) in tiou_set.iter().enumerate() {
                if hits[k].is_none() && overlap >= thr {
                    hits[k] = Some(rank);
                }
            }
            if hits.iter().all(Option::is_some) {
                break;
            }
        }
        first_hit.push(hits);
    }

    let ar: Vec<f64> = an
        .iter()
        .map(|&budget| {
            if gts.is_empty() {
                return 0.0;
            }
            let recall_sum: f64 = (0..tiou_set.len())
                .map(|k| {
                    let found = first_hit.iter().filter(|h| h[k].is_some_and(|r| r < budget)).count();
                    found as f64 / gts.len() as f64
                })
                .sum();
            recall_sum / tiou_set.len() as f64
        })
        .collect();
    let auc = auc_percent(&an, &ar);
    Ok(ArCurve { an, ar, auc })
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GtSegment>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// One row of a metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    /// Values for the key columns (method name, toggles, …).
    pub keys: Vec<String>,
    pub map: MapTable,
    pub auc: Option<f64>,
}

/// Formats a threshold as a column header (`0.5`, `0.75`).
pub fn threshold_label(t: f64) -> String {
    format!("{t}")
}

/// Writes rows as CSV: key columns, one column per threshold, `Avg mAP`, and
/// `AUC` when any row carries one. All rows must share thresholds.
pub fn write_table_csv<W: Write>(out: W, key_columns: &[&str], rows: &[TableRow]) -> Result<()> {
    let thresholds = rows.first().map(|r| r.map.thresholds.clone()).unwrap_or_default();
    if rows.iter().any(|r| r.map.thresholds != thresholds) {
        return Err(Error::Comparison("rows use different tIoU thresholds".into()));
    }
    if rows.iter().any(|r| r.keys.len() != key_columns.len()) {
        return Err(Error::Comparison("row key count differs from key columns".into()));
    }
    let with_auc = rows.iter().any(|r| r.auc.is_some());
    let mut writer = csv::Writer::from_writer(out);
    let mut header: Vec<String> = key_columns.iter().map(|s| s.to_string()).collect();
    header.extend(thresholds.iter().map(|&t| threshold_label(t)));
    header.push("Avg mAP".into());
    if with_auc {
        header.push("AUC".into());
    }
    writer.write_record(&header)?;
    for row in rows {
        let mut record = row.keys.clone();
        record.extend(row.map.map.iter().map(|v| format!("{v:.6}")));
        record.push(format!("{:.6}", row.map.average));
        if with_auc {
            record.push(row.auc.map_or_else(String::new, |a| format!("{a:.4}")));
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(video: &str, start: f64, end: f64) -> GtSegment {
        GtSegment { video_id: video.into(), start, end, class_id: 0 }
    }

    fn det(video: &str, start: f64, end: f64, score: f64) -> Detection {
        Detection { video_id: video.into(), start, end, score, class_id: 0 }
    }

    #[test]
    fn tiou_examples() {
        assert_eq!(tiou((2.0, 5.0), (2.0, 5.0)).unwrap(), 1.0);
        assert_eq!(tiou((0.0, 1.0), (3.0, 4.0)).unwrap(), 0.0);
        assert!((tiou((0.0, 10.0), (5.0, 15.0)).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(matches!(tiou((1.0, 1.0), (0.0, 2.0)), Err(Error::Domain(_))));
        assert!(matches!(tiou((0.0, 2.0), (3.0, 1.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn perfect_detector_has_unit_ap() {
        let gts = vec![gt("a", 0.0, 5.0), gt("a", 10.0, 12.0), gt("b", 3.0, 9.0)];
        let dets: Vec<Detection> = gts.iter().map(|g| det(&g.video_id, g.start, g.end, 0.9)).collect();
        assert_eq!(average_precision(&dets, &gts, 0.5).unwrap(), Some(1.0));
    }

    #[test]
    fn misses_have_zero_ap() {
        let gts = vec![gt("a", 0.0, 5.0)];
        let dets = vec![det("a", 4.0, 9.0, 0.9), det("b", 0.0, 5.0, 0.8)];
        assert_eq!(average_precision(&dets, &gts, 0.5).unwrap(), Some(0.0));
        assert_eq!(average_precision(&dets, &[], 0.5).unwrap(), None);
    }

    #[test]
    fn tp_fp_tp_fixture() {
        let gts = vec![gt("a", 0.0, 10.0), gt("a", 20.0, 30.0)];
        let dets = vec![det("a", 0.0, 10.0, 0.9), det("a", 40.0, 45.0, 0.8), det("a", 20.0, 30.0, 0.7)];
        let ap = average_precision(&dets, &gts, 0.5).unwrap().unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        let gts = vec![gt("a", 0.0, 10.0)];
        let dets = vec![det("a", 0.0, 10.0, 0.9), det("a", 0.0, 9.0, 0.8)];
        assert_eq!(average_precision(&dets, &gts, 0.5).unwrap(), Some(1.0));
        let reversed = vec![det("a", 0.0, 10.0, 0.5), det("a", 0.0, 9.0, 0.8)];
        // the weaker-overlap detection ranks first and takes the match
        assert_eq!(average_precision(&reversed, &gts, 0.5).unwrap(), Some(1.0));
        assert_eq!(average_precision(&reversed, &gts, 0.95).unwrap(), Some(0.5));
    }

    #[test]
    fn map_perfect_and_consistency() {
        let mut gts = vec![gt("a", 0.0, 5.0), gt("b", 1.0, 3.0)];
        gts[1].class_id = 2;
        let dets: Vec<Detection> = gts
            .iter()
            .map(|g| Detection { video_id: g.video_id.clone(), start: g.start, end: g.end, score: 0.5, class_id: g.class_id })
            .collect();
        let table = map_at_tious(&dets, &gts, &THUMOS_TIOUS).unwrap();
        assert!(table.map.iter().all(|&v| v == 1.0));
        assert_eq!(table.average, 1.0);
        assert_eq!(table.classes_evaluated, vec![0, 2]);

        let single = map_at_tious(&dets[..1], &gts[..1], &[0.5]).unwrap();
        assert_eq!(single.map[0], average_precision(&dets[..1], &gts[..1], 0.5).unwrap().unwrap());
        assert_eq!(map_at_tious(&[], &gts, &[0.5]).unwrap().map, vec![0.0]);
    }

    #[test]
    fn ar_examples() {
        let gts = vec![gt("v", 0.0, 10.0), gt("v", 20.0, 30.0)];
        let props = vec![det("v", 0.0, 10.0, 0.9), det("v", 20.0, 30.0, 0.5)];
        let curve = ar_at_an(&props, &gts, &[1, 2, 3], &activitynet_average_tious()).unwrap();
        assert_eq!(curve.ar, vec![0.5, 1.0, 1.0]);

        let empty = ar_at_an(&[], &gts, &default_an_values(), &activitynet_average_tious()).unwrap();
        assert!(empty.ar.iter().all(|&v| v == 0.0));
        assert_eq!(empty.auc, 0.0);

        assert!(matches!(ar_at_an(&props, &gts, &[0, 1], &[0.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn exact_proposals_saturate_auc() {
        let gts = vec![gt("v", 0.0, 10.0), gt("v", 20.0, 30.0), gt("w", 5.0, 6.0)];
        let props: Vec<Detection> = gts.iter().map(|g| det(&g.video_id, g.start, g.end, 0.3)).collect();
        let curve = ar_at_an(&props, &gts, &default_an_values(), &activitynet_average_tious()).unwrap();
        assert!(curve.ar[1..].iter().all(|&v| v == 1.0));
        // AR@1 = 2/3, trapezoid loses (1 - 2/3)/2 over a span of 99
        let expected = 100.0 * (99.0 - (1.0 / 3.0) / 2.0) / 99.0;
        assert!((curve.auc - expected).abs() < 1e-9);
    }

    #[test]
    fn csv_layout() {
        let table = MapTable { thresholds: vec![0.3, 0.5], map: vec![0.25, 0.125], average: 0.1875, classes_evaluated: vec![0] };
        let rows = vec![
            TableRow { keys: vec!["k=1".into()], map: table.clone(), auc: None },
            TableRow { keys: vec!["k=3".into()], map: table, auc: Some(55.5) },
        ];
        let mut buf = Vec::new();
        write_table_csv(&mut buf, &["Module"], &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "Module,0.3,0.5,Avg mAP,AUC");
        assert_eq!(lines[1], "k=1,0.250000,0.125000,0.187500,");
        assert_eq!(lines[2], "k=3,0.250000,0.125000,0.187500,55.5000");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn fixture() -> impl Strategy<Value = (Vec<Detection>, Vec<GtSegment>)> {
            let interval = (0u32..40, 1u32..15).prop_map(|(s, l)| (s as f64, (s + l) as f64));
            let dets = prop::collection::vec((0usize..3, interval.clone(), 1u32..1000), 0..12).prop_map(|v| {
                v.into_iter()
                    .map(|(vid, (s, e), score)| det(&format!("v{vid}"), s, e, score as f64 / 1000.0))
                    .collect::<Vec<_>>()
            });
            let gts = prop::collection::vec((0usize..3, interval), 1..6)
                .prop_map(|v| v.into_iter().map(|(vid, (s, e))| gt(&format!("v{vid}"), s, e)).collect::<Vec<_>>());
            (dets, gts)
        }

        proptest! {
            #[test]
            fn tiou_symmetric(a in 0.0f64..50.0, la in 0.1f64..20.0, b in 0.0f64..50.0, lb in 0.1f64..20.0) {
                let x = tiou((a, a + la), (b, b + lb)).unwrap();
                prop_assert_eq!(x, tiou((b, b + lb), (a, a + la)).unwrap());
                prop_assert!((0.0..=1.0).contains(&x));
            }

            #[test]
            fn ap_invariant_to_score_scale((dets, gts) in fixture(), scale in 0.01f64..100.0) {
                let scaled: Vec<Detection> = dets.iter().map(|d| Detection { score: d.score * scale, ..d.clone() }).collect();
                for thr in [0.3, 0.5, 0.7] {
                    prop_assert_eq!(average_precision(&dets, &gts, thr).unwrap(), average_precision(&scaled, &gts, thr).unwrap());
                }
            }

            #[test]
            fn ar_monotone_in_an((dets, gts) in fixture()) {
                let curve = ar_at_an(&dets, &gts, &default_an_values(), &activitynet_average_tious()).unwrap();
                prop_assert!(curve.ar.windows(2).all(|w| w[0] <= w[1]));
                prop_assert!((0.0..=100.0).contains(&curve.auc));
            }

            #[test]
            fn map_non_increasing_in_threshold((dets, gts) in fixture()) {
                let thresholds = activitynet_average_tious();
                let table = map_at_tious(&dets, &gts, &thresholds).unwrap();
                prop_assert!(table.map.windows(2).all(|w| w[0] >= w[1] - 1e-12), "{:?}", table.map);
            }
        }
    }
}
