//! Object-level recall, ego-excluded IoU, and object size statistics for
//! moving object segmentation.
//!
//! Ground-truth `UnknownMotion` points never count toward any metric. Counts
//! are pooled over all scans before ratios are formed; per-object recalls are
//! computed per scan and instance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mos::{MotionClass, OrientedBox};
use crate::par::{self, Execution};
use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("scan {scan}: {field} has {got} entries, expected {expected}")]
    LengthMismatch {
        scan: usize,
        field: &'static str,
        got: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalObject {
    pub instance_id: String,
    pub bbox: OrientedBox,
}

/// One scan's predictions and ground truth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalScan {
    pub points: Vec<Vec3>,
    pub predicted_moving: Vec<bool>,
    pub ground_truth: Vec<MotionClass>,
    pub ego_mask: Vec<bool>,
    /// Ground-truth boxes of moving objects, in the scan frame.
    pub moving_objects: Vec<EvalObject>,
}

impl EvalScan {
    fn check(&self, scan: usize) -> Result<(), EvalError> {
        let n = self.points.len();
        for (field, got) in [
            ("predicted_moving", self.predicted_moving.len()),
            ("ground_truth", self.ground_truth.len()),
            ("ego_mask", self.ego_mask.len()),
        ] {
            if got != n {
                return Err(EvalError::LengthMismatch {
                    scan,
                    field,
                    got,
                    expected: n,
                });
            }
        }
        Ok(())
    }
}

pub type EvalInput = [EvalScan];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    pub fn merge(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }

    pub fn iou(&self) -> Metric {
        let denom = self.tp + self.fp + self.fn_;
        if denom == 0 {
            Metric::empty()
        } else {
            Metric::percent(self.tp as f64 / denom as f64)
        }
    }
}

/// A percentage with a flag for undefined (empty) denominators, in which case
/// `percent` is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub percent: f64,
    pub empty: bool,
}

impl Metric {
    fn percent(fraction: f64) -> Metric {
        Metric {
            percent: 100.0 * fraction,
            empty: false,
        }
    }

    fn empty() -> Metric {
        Metric {
            percent: 0.0,
            empty: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecall {
    pub scan: usize,
    pub instance_id: String,
    pub tp: u64,
    pub fn_: u64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_obj: Metric,
    pub iou_wo_ego: Metric,
    pub iou_conventional: Metric,
    pub per_object: Vec<ObjectRecall>,
    pub counts_wo_ego: Counts,
    pub counts_with_ego: Counts,
    pub scans: usize,
}

struct ScanTally {
    wo_ego: Counts,
    with_ego: Counts,
    objects: Vec<ObjectRecall>,
}

fn tally_scan(index: usize, s: &EvalScan) -> ScanTally {
    let mut wo_ego = Counts::default();
    let mut with_ego = Counts::default();
    for k in 0..s.points.len() {
        let gt = s.ground_truth[k];
        if gt == MotionClass::UnknownMotion {
            continue;
        }
        let c = match (gt == MotionClass::Moving, s.predicted_moving[k]) {
            (true, true) => Counts { tp: 1, ..Default::default() },
            (false, true) => Counts { fp: 1, ..Default::default() },
            (true, false) => Counts { fn_: 1, ..Default::default() },
            (false, false) => continue,
        };
        with_ego = with_ego.merge(c);
        if !s.ego_mask[k] {
            wo_ego = wo_ego.merge(c);
        }
    }
    let objects = s
        .moving_objects
        .iter()
        .filter_map(|o| {
            let (mut tp, mut fn_) = (0u64, 0u64);
            for k in 0..s.points.len() {
                if s.ego_mask[k] || s.ground_truth[k] != MotionClass::Moving {
                    continue;
                }
                if !o.bbox.contains(&s.points[k], 0.0) {
                    continue;
                }
                if s.predicted_moving[k] {
                    tp += 1;
                } else {
                    fn_ += 1;
                }
            }
            (tp + fn_ > 0).then(|| ObjectRecall {
                scan: index,
                instance_id: o.instance_id.clone(),
                tp,
                fn_,
                recall: tp as f64 / (tp + fn_) as f64,
            })
        })
        .collect();
    ScanTally {
        wo_ego,
        with_ego,
        objects,
    }
}

pub fn evaluate(input: &EvalInput) -> Result<EvalReport, EvalError> {
    evaluate_with(input, Execution::default())
}

pub fn evaluate_with(input: &EvalInput, exec: Execution) -> Result<EvalReport, EvalError> {
    for (k, s) in input.iter().enumerate() {
        s.check(k)?;
    }
    let scans: Vec<(usize, &EvalScan)> = input.iter().enumerate().collect();
    let tallies = par::map_slice(&scans, exec, |(k, s)| tally_scan(*k, s));
    let mut wo_ego = Counts::default();
    let mut with_ego = Counts::default();
    let mut per_object = Vec::new();
    for t in tallies {
        wo_ego = wo_ego.merge(t.wo_ego);
        with_ego = with_ego.merge(t.with_ego);
        per_object.extend(t.objects);
    }
    let recall_obj = if per_object.is_empty() {
        Metric::empty()
    } else {
        let sum: f64 = per_object.iter().map(|o| o.recall).sum();
        Metric::percent(sum / per_object.len() as f64)
    };
    Ok(EvalReport {
        recall_obj,
        iou_wo_ego: wo_ego.iou(),
        iou_conventional: with_ego.iou(),
        per_object,
        counts_wo_ego: wo_ego,
        counts_with_ego: with_ego,
        scans: input.len(),
    })
}

/// Mean per-object recall over moving objects with at least one scanned
/// ground-truth moving point.
pub fn recall_obj(input: &EvalInput) -> Result<Metric, EvalError> {
    Ok(evaluate(input)?.recall_obj)
}

/// Moving-class IoU over non-ego points.
pub fn iou_excluding_ego(input: &EvalInput) -> Result<Metric, EvalError> {
    Ok(evaluate(input)?.iou_wo_ego)
}

/// Moving-class IoU over all points, ego points included.
pub fn iou_conventional(input: &EvalInput) -> Result<Metric, EvalError> {
    Ok(evaluate(input)?.iou_conventional)
}

/// Number of non-ego ground-truth moving points inside each moving object
/// box, per scan and object, skipping empty objects.
pub fn moving_object_point_counts(input: &EvalInput) -> Vec<u64> {
    input
        .iter()
        .enumerate()
        .flat_map(|(k, s)| tally_scan(k, s).objects.into_iter().map(|o| o.tp + o.fn_))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    /// Object size in points.
    pub size: u64,
    /// Fraction of objects with at most `size` points.
    pub object_fraction: f64,
    /// Fraction of all points held by those objects.
    pub point_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeCdf {
    pub curve: Vec<CdfPoint>,
    pub total_objects: u64,
    pub total_points: u64,
    sorted_counts: Vec<u64>,
}

impl SizeCdf {
    /// Share of all points held by the smallest `object_fraction` of objects.
    pub fn point_share_of_smallest(&self, object_fraction: f64) -> f64 {
        if self.total_points == 0 {
            return 0.0;
        }
        let m = self.sorted_counts.len() as f64;
        let k = ((object_fraction.clamp(0.0, 1.0) * m) + 1e-9).floor() as usize;
        let pts: u64 = self.sorted_counts[..k.min(self.sorted_counts.len())].iter().sum();
        pts as f64 / self.total_points as f64
    }

    /// `"<p>% objects → <q>% points"` for each requested object percentile.
    pub fn quantile_lines(&self, percentiles: &[f64]) -> Vec<String> {
        percentiles
            .iter()
            .map(|&p| {
                let q = 100.0 * self.point_share_of_smallest(p / 100.0);
                format!("{}% objects → {}% points", round4(p), round4(q))
            })
            .collect()
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Cumulative distributions of objects and of their points as functions of
/// per-object point count.
pub fn object_size_cdf(counts: &[u64]) -> SizeCdf {
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let total_objects = sorted.len() as u64;
    let total_points: u64 = sorted.iter().sum();
    let mut curve = Vec::new();
    let mut seen = 0u64;
    let mut pts = 0u64;
    let mut k = 0;
    while k < sorted.len() {
        let size = sorted[k];
        while k < sorted.len() && sorted[k] == size {
            seen += 1;
            pts += size;
            k += 1;
        }
        curve.push(CdfPoint {
            size,
            object_fraction: seen as f64 / total_objects as f64,
            point_fraction: if total_points == 0 {
                0.0
            } else {
                pts as f64 / total_points as f64
            },
        });
    }
    SizeCdf {
        curve,
        total_objects,
        total_points,
        sorted_counts: sorted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use MotionClass::*;

    /// Builds a scan of points on the x-axis at 1 m spacing.
    fn scan_of(gt: &[MotionClass], pred: &[bool], ego: &[bool], objects: Vec<EvalObject>) -> EvalScan {
        EvalScan {
            points: (0..gt.len()).map(|k| Vec3::new(k as f64, 0.0, 0.0)).collect(),
            predicted_moving: pred.to_vec(),
            ground_truth: gt.to_vec(),
            ego_mask: ego.to_vec(),
            moving_objects: objects,
        }
    }

    fn object(id: &str, from: usize, to: usize) -> EvalObject {
        let c = (from + to) as f64 / 2.0;
        EvalObject {
            instance_id: id.into(),
            bbox: OrientedBox {
                center: Vec3::new(c, 0.0, 0.0),
                size: Vec3::new((to - from) as f64 + 0.5, 1.0, 1.0),
                yaw: 0.0,
            },
        }
    }

    #[test]
    fn recall_obj_examples() {
        // Object A: points 0..=1 all detected. Object B: points 3..=6, one detected.
        let gt = [Moving, Moving, Static, Moving, Moving, Moving, Moving];
        let pred = [true, true, false, true, false, false, false];
        let s = scan_of(&gt, &pred, &[false; 7], vec![object("A", 0, 1), object("B", 3, 6)]);
        let m = recall_obj(std::slice::from_ref(&s)).unwrap();
        assert_eq!(m.percent, 62.5);
        assert!(!m.empty);

        let all = scan_of(&gt, &[true; 7], &[false; 7], vec![object("A", 0, 1), object("B", 3, 6)]);
        assert_eq!(recall_obj(&[all]).unwrap().percent, 100.0);

        let gt10 = [Moving; 10];
        let mut pred10 = [false; 10];
        pred10[..3].fill(true);
        let one = scan_of(&gt10, &pred10, &[false; 10], vec![object("C", 0, 9)]);
        assert_relative_eq!(recall_obj(&[one]).unwrap().percent, 30.0, epsilon = 1e-12);

        let none = scan_of(&[Static], &[false], &[false], vec![object("D", 0, 0)]);
        let m = recall_obj(&[none]).unwrap();
        assert!(m.empty);
        assert_eq!(m.percent, 0.0);
    }

    /// 10 non-ego moving points (5 detected), 5 static false positives, and
    /// `ego` ego moving points all detected.
    fn inflation_scene(ego: usize) -> EvalScan {
        let mut gt = vec![Moving; 10];
        let mut pred = vec![true; 5];
        pred.extend([false; 5]);
        gt.extend([Static; 5]);
        pred.extend([true; 5]);
        let mut mask = vec![false; 15];
        gt.extend(std::iter::repeat_n(Moving, ego));
        pred.extend(std::iter::repeat_n(true, ego));
        mask.extend(std::iter::repeat_n(true, ego));
        scan_of(&gt, &pred, &mask, vec![])
    }

    #[test]
    fn iou_examples() {
        let perfect = scan_of(&[Moving, Static], &[true, false], &[false, false], vec![]);
        assert_eq!(iou_excluding_ego(&[perfect]).unwrap().percent, 100.0);

        let ego_only = scan_of(
            &[Moving, Moving, Static],
            &[true, false, true],
            &[true, false, false],
            vec![],
        );
        assert_eq!(iou_excluding_ego(&[ego_only]).unwrap().percent, 0.0);

        let s = inflation_scene(0);
        assert_relative_eq!(
            iou_excluding_ego(std::slice::from_ref(&s)).unwrap().percent,
            100.0 / 3.0,
            epsilon = 1e-12
        );
        assert_eq!(
            iou_conventional(std::slice::from_ref(&s)).unwrap(),
            iou_excluding_ego(&[s]).unwrap()
        );

        let s = inflation_scene(100);
        let conv = iou_conventional(std::slice::from_ref(&s)).unwrap().percent;
        assert_relative_eq!(conv, 100.0 * 105.0 / 115.0, epsilon = 1e-12);
        assert!(conv > iou_excluding_ego(&[s]).unwrap().percent);

        let empty = scan_of(&[], &[], &[], vec![]);
        assert!(iou_conventional(&[empty]).unwrap().empty);
    }

    #[test]
    fn unknown_ground_truth_is_ignored() {
        let s = scan_of(&[UnknownMotion, Moving], &[true, true], &[false, false], vec![]);
        let r = evaluate(&[s]).unwrap();
        assert_eq!(r.counts_wo_ego, Counts { tp: 1, fp: 0, fn_: 0 });
    }

    #[test]
    fn length_mismatch() {
        let mut s = scan_of(&[Moving, Static], &[true, false], &[false, false], vec![]);
        s.ego_mask.pop();
        assert!(matches!(
            evaluate(&[s]),
            Err(EvalError::LengthMismatch { field: "ego_mask", .. })
        ));
    }

    #[test]
    fn pooling_is_order_independent() {
        let a = inflation_scene(3);
        let b = scan_of(&[Moving, Static, Moving], &[true, true, false], &[false; 3], vec![]);
        let ab = evaluate(&[a.clone(), b.clone()]).unwrap();
        let ba = evaluate(&[b, a]).unwrap();
        assert_eq!(ab.iou_wo_ego, ba.iou_wo_ego);
        assert_eq!(ab.iou_conventional, ba.iou_conventional);
        let seq = evaluate_with(&[inflation_scene(7)], Execution::Sequential).unwrap();
        let par = evaluate_with(&[inflation_scene(7)], Execution::Parallel).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn cdf_examples() {
        let c = object_size_cdf(&[1, 97, 1, 1]);
        assert_relative_eq!(c.point_share_of_smallest(0.75), 0.03, epsilon = 1e-15);
        assert_eq!(c.quantile_lines(&[75.0]), vec!["75% objects → 3% points"]);
        assert_eq!(c.curve.len(), 2);
        assert_eq!(c.curve[0].size, 1);
        assert_relative_eq!(c.curve[0].object_fraction, 0.75);
        assert_relative_eq!(c.curve[0].point_fraction, 0.03);

        let eq = object_size_cdf(&[5, 5, 5]);
        for p in &eq.curve {
            assert_eq!(p.object_fraction, p.point_fraction);
        }

        let single = object_size_cdf(&[42]);
        assert_eq!(single.curve.len(), 1);
        assert_eq!(single.curve[0].object_fraction, 1.0);
        assert_eq!(single.curve[0].point_fraction, 1.0);
        assert_eq!(single.point_share_of_smallest(0.5), 0.0);
    }
}
