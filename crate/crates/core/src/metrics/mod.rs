//! Verification metrics for the misalignment classifier and the estimation
//! error, plus BEV max-F1 for the detection variants.

pub mod bev;
pub mod f1;
pub mod surrogate;

use serde::{Deserialize, Serialize};

use crate::fusion::{exceeds_threshold, DetectionVerdict};
use crate::geometry::EulerMisalignment;

pub use bev::{bev_iou, BevBox};
pub use f1::{max_f1, max_f1_pooled, Detection};
pub use surrogate::{bucketed_detection_eval, BucketF1, DetectionModel, Variant};

/// Confusion counts for the misalignment classifier.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MdaCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl MdaCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn merge(self, other: MdaCounts) -> MdaCounts {
        MdaCounts {
            tp: self.tp + other.tp,
            tn: self.tn + other.tn,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }
}

/// Adds one decision. The injected fault counts as positive under the same
/// strict max-axis rule the classifier uses.
pub fn mda_accumulate(
    counts: MdaCounts,
    verdict: &DetectionVerdict,
    injected: EulerMisalignment,
    threshold: f64,
) -> MdaCounts {
    let truth = exceeds_threshold(injected, threshold);
    let mut c = counts;
    match (verdict.positive, truth) {
        (true, true) => c.tp += 1,
        (false, false) => c.tn += 1,
        (true, false) => c.fp += 1,
        (false, true) => c.fn_ += 1,
    }
    c
}

/// `(precision, recall)`; each is `None` when its denominator is zero.
pub fn precision_recall(c: &MdaCounts) -> (Option<f64>, Option<f64>) {
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    (ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn_))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Roll,
    Pitch,
    Yaw,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Roll, Axis::Pitch, Axis::Yaw];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Roll => "roll",
            Axis::Pitch => "pitch",
            Axis::Yaw => "yaw",
        }
    }
}

/// Error statistics for all results sharing one injected value on one axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSweepRow {
    pub axis: Axis,
    pub injected_deg: f64,
    /// Mean absolute error per axis (roll, pitch, yaw), degrees.
    pub mean_abs_err: [f64; 3],
    /// Population standard deviation of the absolute error per axis.
    pub std: [f64; 3],
    pub n: usize,
}

/// Groups `(injected, estimate)` pairs by the injected value on each axis.
/// Rows come out axis-major, injected value ascending.
pub fn error_sweep(results: &[(EulerMisalignment, EulerMisalignment)]) -> Vec<ErrorSweepRow> {
    let mut rows = Vec::new();
    for axis in Axis::ALL {
        let mut keyed: Vec<(f64, [f64; 3])> = results
            .iter()
            .map(|(inj, est)| {
                let err = (*est - *inj).to_array().map(f64::abs);
                (inj.to_array()[axis.index()], err)
            })
            .collect();
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
        for group in keyed.chunk_by(|a, b| a.0 == b.0) {
            let n = group.len() as f64;
            let mut mean = [0.0; 3];
            let mut std = [0.0; 3];
            for j in 0..3 {
                mean[j] = group.iter().map(|g| g.1[j]).sum::<f64>() / n;
                let var = group.iter().map(|g| (g.1[j] - mean[j]).powi(2)).sum::<f64>() / n;
                std[j] = var.sqrt();
            }
            rows.push(ErrorSweepRow {
                axis,
                injected_deg: group[0].0,
                mean_abs_err: mean,
                std,
                n: group.len(),
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verdict(positive: bool) -> DetectionVerdict {
        DetectionVerdict { positive, threshold: 0.1 }
    }

    #[test]
    fn mda_cells() {
        let z = MdaCounts::default();
        let pos = EulerMisalignment::new(0.0, 0.0, 0.5);
        assert_eq!(mda_accumulate(z, &verdict(true), pos, 0.1).tp, 1);
        assert_eq!(mda_accumulate(z, &verdict(false), EulerMisalignment::ZERO, 0.1).tn, 1);
        assert_eq!(mda_accumulate(z, &verdict(false), pos, 0.1).fn_, 1);
        assert_eq!(mda_accumulate(z, &verdict(true), EulerMisalignment::ZERO, 0.1).fp, 1);
        // Exactly at threshold is negative.
        let edge = EulerMisalignment::new(0.1, -0.1, 0.1);
        assert_eq!(mda_accumulate(z, &verdict(false), edge, 0.1).tn, 1);
    }

    #[test]
    fn precision_recall_examples() {
        let c = MdaCounts { tp: 9, fp: 1, fn_: 0, tn: 0 };
        assert_eq!(precision_recall(&c), (Some(0.9), Some(1.0)));
        assert_eq!(precision_recall(&MdaCounts::default()), (None, None));
        let c = MdaCounts { tp: 0, fp: 0, fn_: 0, tn: 5 };
        assert_eq!(precision_recall(&c), (None, None));
    }

    #[test]
    fn mda_json_uses_fn_key() {
        let s = serde_json::to_string(&MdaCounts { tp: 1, tn: 2, fp: 3, fn_: 4 }).unwrap();
        assert_eq!(s, r#"{"tp":1,"tn":2,"fp":3,"fn":4}"#);
    }

    #[test]
    fn sweep_single_exact_pair() {
        let a = EulerMisalignment::new(0.2, -0.1, 0.0);
        let rows = error_sweep(&[(a, a)]);
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert_eq!(r.n, 1);
            assert_eq!(r.mean_abs_err, [0.0; 3]);
            assert_eq!(r.std, [0.0; 3]);
        }
        assert_eq!(rows[1].axis, Axis::Pitch);
        assert_eq!(rows[1].injected_deg, -0.1);
    }

    #[test]
    fn sweep_population_std() {
        let inj = EulerMisalignment::new(0.5, 0.0, 0.0);
        let rows = error_sweep(&[
            (inj, EulerMisalignment::new(0.52, 0.0, 0.0)),
            (inj, EulerMisalignment::new(0.46, 0.0, 0.0)),
        ]);
        let roll = rows.iter().find(|r| r.axis == Axis::Roll).unwrap();
        assert_eq!(roll.n, 2);
        assert!((roll.mean_abs_err[0] - 0.03).abs() < 1e-12);
        assert!((roll.std[0] - 0.01).abs() < 1e-12);
    }

    #[test]
    fn sweep_groups_are_sorted() {
        let pairs: Vec<_> = [0.3, -0.2, 0.3, 0.0]
            .iter()
            .map(|&v| (EulerMisalignment::new(v, 0.0, 0.0), EulerMisalignment::new(v, 0.0, 0.0)))
            .collect();
        let rows = error_sweep(&pairs);
        let roll: Vec<(f64, usize)> = rows.iter().filter(|r| r.axis == Axis::Roll).map(|r| (r.injected_deg, r.n)).collect();
        assert_eq!(roll, vec![(-0.2, 1), (0.0, 1), (0.3, 2)]);
        assert!(error_sweep(&[]).is_empty());
    }
}
