//! Synthetic scenes with range-bucketed vehicle boxes, and the
//! correspondences a perfect feature matcher would produce from them.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    normalize, project, rotation_from_misalignment, CameraIntrinsics, EulerMisalignment,
    NormalizedPoint, PixelPoint, Point3, RigidTransform,
};
use crate::metrics::bev::BevBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeBucket {
    pub min: f64,
    pub max: f64,
}

impl RangeBucket {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.min && r < self.max
    }
}

/// Three 100 m buckets covering 200 to 500 m.
pub fn default_buckets() -> Vec<RangeBucket> {
    vec![
        RangeBucket::new(200.0, 300.0),
        RangeBucket::new(300.0, 400.0),
        RangeBucket::new(400.0, 500.0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub n_points: usize,
    pub range_min: f64,
    pub range_max: f64,
    pub n_boxes_per_bucket: usize,
    pub buckets: Vec<RangeBucket>,
    /// Correspondence localization noise, pixels.
    pub pixel_noise_sigma: f64,
    /// Side fraction of the centred image window points are drawn from;
    /// 0.5 confines them to the central 25% of the image area.
    pub image_fraction: f64,
    /// Minimum BEV distance between box centroids, meters.
    pub min_box_separation: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_points: 500,
            range_min: 50.0,
            range_max: 500.0,
            n_boxes_per_bucket: 8,
            buckets: default_buckets(),
            pixel_noise_sigma: 2.0,
            image_fraction: 1.0,
            min_box_separation: 25.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("scene: {m}")));
        if self.n_points == 0 {
            return bad("n_points must be positive".into());
        }
        if !(self.range_min > 0.0 && self.range_min < self.range_max) || !self.range_max.is_finite() {
            return bad(format!(
                "need 0 < range_min < range_max, got [{}, {}]",
                self.range_min, self.range_max
            ));
        }
        if !(self.pixel_noise_sigma >= 0.0) {
            return bad(format!("pixel_noise_sigma {} < 0", self.pixel_noise_sigma));
        }
        if !(self.image_fraction > 0.0 && self.image_fraction <= 1.0) {
            return bad(format!("image_fraction {} outside (0, 1]", self.image_fraction));
        }
        for (i, b) in self.buckets.iter().enumerate() {
            if !(b.min >= 0.0 && b.min < b.max) {
                return bad(format!("bucket {i} [{}, {}) is empty", b.min, b.max));
            }
            if i > 0 && b.min < self.buckets[i - 1].max {
                return bad(format!("bucket {i} overlaps or is out of order"));
            }
        }
        if !(self.min_box_separation >= 0.0) {
            return bad("min_box_separation must be non-negative".into());
        }
        Ok(())
    }
}

/// A ground-truth vehicle with its bucket tag and the score a detector
/// assigns it when perfectly registered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    pub bbox: BevBox,
    pub bucket: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    /// Camera-frame points, all inside the frustum.
    pub points: Vec<Point3>,
    pub boxes: Vec<SceneBox>,
    /// The synthetic rig has its LiDAR frame aligned with the camera frame.
    pub truth_extrinsics: RigidTransform,
}

const BOX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Draws a scene. Points are uniform in volume over the (optionally
/// windowed) frustum between `range_min` and `range_max`.
pub fn generate_scene<R: Rng + ?Sized>(
    cfg: &SceneConfig,
    k: &CameraIntrinsics,
    rng: &mut R,
) -> Result<SyntheticScene> {
    cfg.validate()?;
    k.validate()?;

    let (w, h) = (k.width as f64, k.height as f64);
    let f = cfg.image_fraction;
    let (u0, u1) = (w * (1.0 - f) / 2.0, w * (1.0 + f) / 2.0);
    let (v0, v1) = (h * (1.0 - f) / 2.0, h * (1.0 + f) / 2.0);
    // Keep strictly inside so re-projection round-off cannot land on the far edge.
    const EDGE: f64 = 1e-6;
    let z3_lo = cfg.range_min.powi(3);
    let z3_hi = cfg.range_max.powi(3);

    let points = (0..cfg.n_points)
        .map(|_| {
            let u = rng.random_range(u0 + EDGE..u1 - EDGE);
            let v = rng.random_range(v0 + EDGE..v1 - EDGE);
            let z = (z3_lo + rng.random::<f64>() * (z3_hi - z3_lo)).cbrt();
            Point3::new((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z)
        })
        .collect();

    let half_fov = k.hfov_rad() / 2.0;
    let mut boxes: Vec<SceneBox> = Vec::with_capacity(cfg.buckets.len() * cfg.n_boxes_per_bucket);
    for (bi, bucket) in cfg.buckets.iter().enumerate() {
        for _ in 0..cfg.n_boxes_per_bucket {
            let mut placed = None;
            for _ in 0..BOX_PLACEMENT_ATTEMPTS {
                let r = rng.random_range(bucket.min..bucket.max);
                let bearing = rng.random_range(-0.9 * half_fov..0.9 * half_fov);
                let (cx, cy) = (r * bearing.sin(), r * bearing.cos());
                let clear = boxes
                    .iter()
                    .all(|b| (b.bbox.cx - cx).hypot(b.bbox.cy - cy) >= cfg.min_box_separation);
                if clear && bucket.contains(cx.hypot(cy)) {
                    placed = Some((cx, cy));
                    break;
                }
            }
            let Some((cx, cy)) = placed else {
                return Err(Error::Config(format!(
                    "cannot place {} boxes {} m apart in bucket [{}, {})",
                    cfg.n_boxes_per_bucket, cfg.min_box_separation, bucket.min, bucket.max
                )));
            };
            let length = rng.random_range(4.0..16.0);
            let width = rng.random_range(2.0..3.0);
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let score = rng.random_range(0.5..1.0);
            boxes.push(SceneBox {
                bbox: BevBox::new(cx, cy, length, width, yaw),
                bucket: bi,
                score,
            });
        }
    }

    Ok(SyntheticScene {
        points,
        boxes,
        truth_extrinsics: RigidTransform::identity(),
    })
}

/// A matched pair of normalized image points: where a scene point appears in
/// the camera image (`source`) and where its misaligned LiDAR return lands
/// (`target`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub source: NormalizedPoint,
    pub target: NormalizedPoint,
}

/// Builds correspondences for `scene` under fault `dr`.
///
/// Targets are the projections of the exactly rotated points plus Gaussian
/// pixel noise. Noise is drawn for every point, dropped or not, so dropping a
/// pair never shifts the noise of the others.
pub fn make_correspondences<R: Rng + ?Sized>(
    scene: &SyntheticScene,
    k: &CameraIntrinsics,
    dr: EulerMisalignment,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<Vec<Correspondence>> {
    dr.check_envelope()?;
    if !(noise_sigma >= 0.0) {
        return Err(Error::Config(format!("noise sigma {noise_sigma} < 0")));
    }
    let r = rotation_from_misalignment(dr);
    let mut out = Vec::with_capacity(scene.points.len());
    for p in &scene.points {
        let nu: f64 = rng.sample(StandardNormal);
        let nv: f64 = rng.sample(StandardNormal);
        let Ok((src_px, _)) = project(p, k) else {
            continue;
        };
        if !k.contains(src_px) {
            continue;
        }
        let Ok((tgt_px, _)) = project(&(r * p), k) else {
            continue;
        };
        if !k.contains(tgt_px) {
            continue;
        }
        let noisy = PixelPoint::new(tgt_px.u + noise_sigma * nu, tgt_px.v + noise_sigma * nv);
        out.push(Correspondence {
            source: normalize(src_px, k),
            target: normalize(noisy, k),
        });
    }
    if out.len() < 3 {
        return Err(Error::DegenerateScene {
            survived: out.len(),
        });
    }
    Ok(out)
}
