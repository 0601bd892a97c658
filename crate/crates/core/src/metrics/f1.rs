//! Max-F1 over score thresholds with greedy score-ordered matching.
//!
//! Matching runs once over the detections in descending score order. Because a
//! threshold only removes a suffix of that order, the matching restricted to
//! any threshold equals the prefix of the full matching, so one pass yields
//! the true/false positive counts at every threshold.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::bev::{bev_iou, BevBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BevBox,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BevBox, score: f64) -> Self {
        Self { bbox, score }
    }
}

fn order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.cx.total_cmp(&b.bbox.cx))
        .then(a.bbox.cy.total_cmp(&b.bbox.cy))
        .then(a.bbox.length.total_cmp(&b.bbox.length))
        .then(a.bbox.width.total_cmp(&b.bbox.width))
        .then(a.bbox.yaw.total_cmp(&b.bbox.yaw))
}

/// Scores in descending order paired with whether each detection is a true
/// positive.
fn match_greedy(dets: &[Detection], gts: &[BevBox], iou_min: f64) -> Vec<(f64, bool)> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(order);
    let mut taken = vec![false; gts.len()];
    sorted
        .iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let iou = bev_iou(&d.bbox, gt);
                if iou >= iou_min && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            (d.score, best.is_some())
        })
        .collect()
}

fn sweep(mut marks: Vec<(f64, bool)>, n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if marks.is_empty() { 1.0 } else { 0.0 };
    }
    marks.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = 0.0f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < marks.len() {
        let s = marks[i].0;
        while i < marks.len() && marks[i].0 == s {
            if marks[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let fn_ = n_gt - tp;
        let f1 = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
        best = best.max(f1);
    }
    best
}

/// Maximum F1 over all score thresholds.
///
/// With no ground truth the result is 1.0 when there are also no detections
/// and 0.0 otherwise.
pub fn max_f1(dets: &[Detection], gts: &[BevBox], iou_min: f64) -> f64 {
    sweep(match_greedy(dets, gts, iou_min), gts.len())
}

/// Dataset-level max-F1: matching happens within each image, the threshold
/// sweep runs over the pooled detections.
pub fn max_f1_pooled<'a, I>(images: I, iou_min: f64) -> f64
where
    I: IntoIterator<Item = (&'a [Detection], &'a [BevBox])>,
{
    let mut marks = Vec::new();
    let mut n_gt = 0;
    for (dets, gts) in images {
        marks.extend(match_greedy(dets, gts, iou_min));
        n_gt += gts.len();
    }
    sweep(marks, n_gt)
}
