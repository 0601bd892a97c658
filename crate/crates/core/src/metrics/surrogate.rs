//! Geometric stand-in for a fused LiDAR/camera detector.
//!
//! Every ground-truth box yields one detection. A residual extrinsic rotation
//! moves the LiDAR evidence of a box at centre `c = (cx, 0, cy)` (camera frame)
//! to `R c`. The horizontal part of that motion, `(R c)_x − c_x`, shifts the
//! detection laterally. The vertical part, `(R c)_y − c_y`, misplaces the box
//! against the image evidence along the viewing ray and is applied as a
//! longitudinal shift. Both grow linearly with range, so far buckets degrade
//! first. The shift is scaled by a robustness gain, and detection scores decay
//! with the mean shift of their bucket.

use serde::{Deserialize, Serialize};

use super::bev::BevBox;
use super::f1::{max_f1, Detection};
use crate::error::{Error, Result};
use crate::geometry::{misalignment_from_rotation, rotation_from_misalignment, EulerMisalignment, RigidTransform};
use crate::scene::{RangeBucket, SceneBox, SyntheticScene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionModel {
    /// Fraction of the geometric shift that survives in a detector trained
    /// with perturbed extrinsics. The baseline detector always uses 1.
    pub robustness_factor: f64,
    /// Length scale of the score decay, meters.
    pub score_decay_m: f64,
}

impl Default for DetectionModel {
    fn default() -> Self {
        Self {
            robustness_factor: 0.5,
            score_decay_m: 10.0,
        }
    }
}

impl DetectionModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.robustness_factor >= 0.0 && self.robustness_factor <= 1.0) {
            return Err(Error::Config(format!(
                "metrics: robustness_factor {} outside [0, 1]",
                self.robustness_factor
            )));
        }
        if !(self.score_decay_m > 0.0) {
            return Err(Error::Config("metrics: score_decay_m must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Detector without perturbation training, extrinsics as injected.
    Baseline,
    /// Robust detector, extrinsics as injected.
    Uncorrected,
    /// Robust detector, extrinsics corrected with the fused estimate.
    Corrected,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::Uncorrected, Variant::Corrected];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Uncorrected => "uncorrected",
            Variant::Corrected => "corrected",
        }
    }
}

/// Rotation left over between the extrinsics in use and the true ones.
pub fn residual_rotation(truth: &RigidTransform, used: &RigidTransform) -> EulerMisalignment {
    misalignment_from_rotation(&(truth.rotation.inverse() * used.rotation))
}

/// Residual for each variant given the injected fault and the correction
/// applied (if any).
pub fn variant_residual(variant: Variant, injected: EulerMisalignment, correction: Option<EulerMisalignment>) -> EulerMisalignment {
    match (variant, correction) {
        (Variant::Corrected, Some(c)) => misalignment_from_rotation(
            &(rotation_from_misalignment(injected) * rotation_from_misalignment(c).inverse()),
        ),
        _ => injected,
    }
}

/// BEV displacement `(lateral, longitudinal)` of a box under `residual`.
pub fn residual_shift(b: &BevBox, residual: EulerMisalignment) -> (f64, f64) {
    let c = nalgebra::Vector3::new(b.cx, 0.0, b.cy);
    let moved = rotation_from_misalignment(residual) * c;
    (moved.x - c.x, moved.y - c.y)
}

/// One detection per box, displaced by `gain` times the residual shift.
///
/// The score of every detection in a bucket is scaled by
/// `exp(-d / decay_m)`, with `d` the mean shift over that bucket. A shared
/// factor keeps the score order inside a bucket fixed, so a growing residual
/// can only lose matches there, while across scenes the worse-registered
/// detections still rank lower.
pub fn simulate_detections(boxes: &[SceneBox], residual: EulerMisalignment, gain: f64, decay_m: f64) -> Vec<Detection> {
    let shifts: Vec<(f64, f64)> = boxes
        .iter()
        .map(|sb| {
            let (dx, dy) = residual_shift(&sb.bbox, residual);
            (gain * dx, gain * dy)
        })
        .collect();
    let n_buckets = boxes.iter().map(|b| b.bucket + 1).max().unwrap_or(0);
    let mut sum = vec![0.0; n_buckets];
    let mut count = vec![0usize; n_buckets];
    for (sb, (dx, dy)) in boxes.iter().zip(&shifts) {
        sum[sb.bucket] += dx.hypot(*dy);
        count[sb.bucket] += 1;
    }
    boxes
        .iter()
        .zip(&shifts)
        .map(|(sb, &(dx, dy))| {
            let mean = sum[sb.bucket] / count[sb.bucket] as f64;
            Detection::new(sb.bbox.translated(dx, dy), sb.score * (-mean / decay_m).exp())
        })
        .collect()
}

pub fn variant_detections(
    scene: &SyntheticScene,
    variant: Variant,
    injected: EulerMisalignment,
    correction: Option<EulerMisalignment>,
    model: &DetectionModel,
) -> Vec<Detection> {
    let gain = match variant {
        Variant::Baseline => 1.0,
        _ => model.robustness_factor,
    };
    simulate_detections(&scene.boxes, variant_residual(variant, injected, correction), gain, model.score_decay_m)
}

/// Detections and ground truth of one bucket of one scene.
pub fn bucket_split(boxes: &[SceneBox], dets: &[Detection], bucket: usize) -> (Vec<Detection>, Vec<BevBox>) {
    boxes
        .iter()
        .zip(dets)
        .filter(|(b, _)| b.bucket == bucket)
        .map(|(b, d)| (*d, b.bbox))
        .unzip()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketF1 {
    pub bucket: RangeBucket,
    pub baseline: f64,
    pub uncorrected: f64,
    pub corrected: f64,
}

impl BucketF1 {
    pub fn get(&self, v: Variant) -> f64 {
        match v {
            Variant::Baseline => self.baseline,
            Variant::Uncorrected => self.uncorrected,
            Variant::Corrected => self.corrected,
        }
    }
}

/// Max-F1 of each variant in each bucket for one scene.
///
/// `correction` is the fused estimate used to correct the extrinsics, or
/// `None` when the classifier did not flag the snippet; the corrected variant
/// then coincides with the uncorrected one.
pub fn bucketed_detection_eval(
    scene: &SyntheticScene,
    buckets: &[RangeBucket],
    injected: EulerMisalignment,
    correction: Option<EulerMisalignment>,
    model: &DetectionModel,
    iou_min: f64,
) -> Vec<BucketF1> {
    let per_variant = Variant::ALL.map(|v| variant_detections(scene, v, injected, correction, model));
    buckets
        .iter()
        .enumerate()
        .map(|(i, bucket)| {
            let f = |v: usize| {
                let (d, g) = bucket_split(&scene.boxes, &per_variant[v], i);
                max_f1(&d, &g, iou_min)
            };
            BucketF1 {
                bucket: *bucket,
                baseline: f(0),
                uncorrected: f(1),
                corrected: f(2),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{lateral_error, CameraIntrinsics};
    use crate::perturb::perturb_transform;
    use crate::fusion::{correct_transform, FusedEstimate};
    use crate::scene::{default_buckets, generate_scene, SceneConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene(seed: u64) -> SyntheticScene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        generate_scene(&SceneConfig::default(), &CameraIntrinsics::reference(), &mut rng).unwrap()
    }

    #[test]
    fn zero_residual_is_perfect() {
        let s = scene(1);
        for b in bucketed_detection_eval(&s, &default_buckets(), EulerMisalignment::ZERO, None, &DetectionModel::default(), 0.1) {
            assert_eq!((b.baseline, b.uncorrected, b.corrected), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn horizontal_shift_at_450m() {
        let b = BevBox::new(0.0, 450.0, 4.5, 2.0, 0.0);
        let (dx, dy) = residual_shift(&b, EulerMisalignment::new(0.0, 1.0, 0.0));
        assert!((dx - lateral_error(1f64.to_radians(), 450.0)).abs() < 0.01);
        assert!((dx - 7.85).abs() < 0.01);
        assert!(dy.abs() < 1e-12);
        let moved = b.translated(dx, dy);
        assert_eq!(crate::metrics::bev_iou(&b, &moved), 0.0);
        let gt = [b];
        assert_eq!(max_f1(&[Detection::new(moved, 0.9)], &gt, 0.1), 0.0);
    }

    #[test]
    fn vertical_residual_becomes_longitudinal() {
        let b = BevBox::new(0.0, 400.0, 4.5, 2.0, 0.0);
        let (dx, dy) = residual_shift(&b, EulerMisalignment::new(1.0, 0.0, 0.0));
        assert!(dx.abs() < 1e-12);
        assert!((dy.abs() - 400.0 * 1f64.to_radians().sin()).abs() < 1e-9);
    }

    #[test]
    fn residual_from_extrinsics_matches_variant_residual() {
        let truth = RigidTransform::identity();
        let inj = EulerMisalignment::new(0.4, -0.7, 0.2);
        let est = EulerMisalignment::new(0.35, -0.72, 0.25);
        let used = correct_transform(&perturb_transform(&truth, inj), &FusedEstimate::from_dr(est));
        let a = residual_rotation(&truth, &used);
        let b = variant_residual(Variant::Corrected, inj, Some(est));
        assert!((a - b).max_abs() < 1e-12);
        assert_eq!(variant_residual(Variant::Corrected, inj, None), inj);
        assert_eq!(variant_residual(Variant::Baseline, inj, Some(est)), inj);
    }

    #[test]
    fn f1_non_increasing_in_residual_magnitude() {
        let s = scene(3);
        let model = DetectionModel::default();
        let dir = EulerMisalignment::new(0.5, 1.0, 0.2);
        let mut prev = vec![1.0; 3];
        for k in 0..=20 {
            let res = dir.map(|v| v * k as f64 * 0.1);
            let f = bucketed_detection_eval(&s, &default_buckets(), res, None, &model, 0.1);
            for (i, b) in f.iter().enumerate() {
                assert!(b.baseline <= prev[i] + 1e-12, "bucket {i} step {k}");
                prev[i] = b.baseline;
            }
        }
    }

    #[test]
    fn model_validation() {
        assert!(DetectionModel::default().validate().is_ok());
        assert!(DetectionModel { robustness_factor: 1.5, ..DetectionModel::default() }.validate().is_err());
        assert!(DetectionModel { score_decay_m: 0.0, ..DetectionModel::default() }.validate().is_err());
    }
}
