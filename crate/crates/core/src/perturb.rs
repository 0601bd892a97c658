//! Fault injection: controlled rotational misalignments.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    rotation_from_misalignment, EulerMisalignment, Point3, RigidTransform, OPERATING_ENVELOPE_DEG,
};
use crate::rng::{substream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    /// Independent clamped normal draw per axis (training-style augmentation).
    Gaussian,
    /// Uniform draw from a per-axis value grid (verification-style).
    Grid,
    /// The same fault for every snippet.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationConfig {
    pub mode: PerturbationMode,
    /// Per-axis standard deviation, degrees.
    pub sigma: f64,
    /// Per-axis magnitude cap, degrees.
    pub clamp: f64,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_step: f64,
    /// Fault used in `fixed` mode.
    pub fixed: EulerMisalignment,
    pub seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            mode: PerturbationMode::Grid,
            sigma: 0.5,
            clamp: 1.0,
            grid_min: -1.0,
            grid_max: 1.0,
            grid_step: 0.1,
            fixed: EulerMisalignment::ZERO,
            seed: 0,
        }
    }
}

impl PerturbationConfig {
    pub fn gaussian(sigma: f64, clamp: f64, seed: u64) -> Self {
        Self {
            mode: PerturbationMode::Gaussian,
            sigma,
            clamp,
            seed,
            ..Self::default()
        }
    }

    pub fn grid(min: f64, max: f64, step: f64, seed: u64) -> Self {
        Self {
            mode: PerturbationMode::Grid,
            grid_min: min,
            grid_max: max,
            grid_step: step,
            clamp: min.abs().max(max.abs()).max(f64::MIN_POSITIVE),
            seed,
            ..Self::default()
        }
    }

    pub fn fixed(dr: EulerMisalignment) -> Self {
        Self {
            mode: PerturbationMode::Fixed,
            fixed: dr,
            clamp: dr.max_abs().max(f64::MIN_POSITIVE),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("perturbation: {msg}")));
        if !(self.clamp > 0.0) || self.clamp > OPERATING_ENVELOPE_DEG {
            return bad(format!(
                "clamp {} outside (0, {OPERATING_ENVELOPE_DEG}]",
                self.clamp
            ));
        }
        match self.mode {
            PerturbationMode::Gaussian => {
                if !(self.sigma > 0.0) || !self.sigma.is_finite() {
                    return bad(format!("sigma {} must be positive", self.sigma));
                }
            }
            PerturbationMode::Grid => {
                grid_axis_values(self.grid_min, self.grid_max, self.grid_step)?;
                if self.grid_min.abs().max(self.grid_max.abs()) > self.clamp + 1e-12 {
                    return bad(format!(
                        "grid [{}, {}] exceeds clamp {}",
                        self.grid_min, self.grid_max, self.clamp
                    ));
                }
            }
            PerturbationMode::Fixed => {
                self.fixed.check_envelope()?;
                if self.fixed.max_abs() > self.clamp + 1e-12 {
                    return bad(format!("fixed fault exceeds clamp {}", self.clamp));
                }
            }
        }
        Ok(())
    }
}

/// Ground-truth fault assigned to one snippet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectedFault {
    pub id: u64,
    pub dr: EulerMisalignment,
}

pub fn clamp_misalignment(dr: EulerMisalignment, clamp: f64) -> EulerMisalignment {
    dr.map(|v| v.clamp(-clamp, clamp))
}

/// Independent `N(0, sigma²)` draw per axis, clamped to `±clamp`.
pub fn sample_training_perturbation<R: Rng + ?Sized>(
    cfg: &PerturbationConfig,
    rng: &mut R,
) -> Result<EulerMisalignment> {
    if cfg.mode != PerturbationMode::Gaussian {
        return Err(Error::Config(format!(
            "training perturbation requires gaussian mode, got {:?}",
            cfg.mode
        )));
    }
    let mut draw = || -> f64 { rng.sample::<f64, _>(StandardNormal) * cfg.sigma };
    let raw = EulerMisalignment::new(draw(), draw(), draw());
    Ok(clamp_misalignment(raw, cfg.clamp))
}

// Snap to 1e-12 so that grid points equal their decimal literals (0.1, not
// 0.10000000000000009); threshold comparisons at 0.1 depend on it.
fn snap(v: f64) -> f64 {
    let s = (v * 1e12).round() / 1e12;
    if s == 0.0 {
        0.0
    } else {
        s
    }
}

/// Per-axis values `min, min + step, …, max`.
pub fn grid_axis_values(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !min.is_finite() || !max.is_finite() || max < min {
        return Err(Error::Config(format!(
            "grid [{min}, {max}] step {step} is invalid"
        )));
    }
    let span = max - min;
    let n = (span / step).round();
    if (n * step - span).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "grid span {span} is not a multiple of step {step}"
        )));
    }
    Ok((0..=n as usize).map(|k| snap(min + k as f64 * step)).collect())
}

/// Uniform sampler over the cartesian product of the per-axis grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSampler {
    pub values: Vec<f64>,
    pub seed: u64,
}

impl GridSampler {
    /// Fault for one snippet, drawn from its own substream.
    pub fn fault(&self, snippet: u64) -> InjectedFault {
        let mut rng = substream(self.seed, &[tag::FAULT, snippet]);
        let n = self.values.len();
        let mut pick = || self.values[rng.random_range(0..n)];
        let dr = EulerMisalignment::new(pick(), pick(), pick());
        InjectedFault { id: snippet, dr }
    }

    pub fn faults(&self, count: usize) -> Vec<InjectedFault> {
        (0..count as u64).map(|i| self.fault(i)).collect()
    }

    /// Every triple of the grid, roll-major.
    pub fn all_triples(&self) -> Vec<EulerMisalignment> {
        let v = &self.values;
        let mut out = Vec::with_capacity(v.len().pow(3));
        for &r in v {
            for &p in v {
                for &y in v {
                    out.push(EulerMisalignment::new(r, p, y));
                }
            }
        }
        out
    }
}

pub fn grid_faults(cfg: &PerturbationConfig) -> Result<GridSampler> {
    if cfg.mode != PerturbationMode::Grid {
        return Err(Error::Config(format!(
            "grid faults require grid mode, got {:?}",
            cfg.mode
        )));
    }
    cfg.validate()?;
    Ok(GridSampler {
        values: grid_axis_values(cfg.grid_min, cfg.grid_max, cfg.grid_step)?,
        seed: cfg.seed,
    })
}

/// Mode-dispatching fault source: one fault per snippet id.
#[derive(Debug, Clone)]
pub struct FaultInjector {
    cfg: PerturbationConfig,
    grid: Option<GridSampler>,
}

impl FaultInjector {
    pub fn new(cfg: PerturbationConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = match cfg.mode {
            PerturbationMode::Grid => Some(grid_faults(&cfg)?),
            _ => None,
        };
        Ok(Self { cfg, grid })
    }

    pub fn config(&self) -> &PerturbationConfig {
        &self.cfg
    }

    pub fn fault(&self, snippet: u64) -> InjectedFault {
        let dr = match self.cfg.mode {
            PerturbationMode::Grid => return self.grid.as_ref().expect("grid mode").fault(snippet),
            PerturbationMode::Fixed => self.cfg.fixed,
            PerturbationMode::Gaussian => {
                let mut rng = substream(self.cfg.seed, &[tag::FAULT, snippet]);
                sample_training_perturbation(&self.cfg, &mut rng).expect("gaussian mode")
            }
        };
        InjectedFault { id: snippet, dr }
    }
}

/// Rotates camera-frame points by the exact fault rotation.
pub fn perturb_points(points: &[Point3], dr: EulerMisalignment) -> Vec<Point3> {
    let r = rotation_from_misalignment(dr);
    points.iter().map(|p| r * p).collect()
}

/// `t · [R(dr) | 0]`.
pub fn perturb_transform(t: &RigidTransform, dr: EulerMisalignment) -> RigidTransform {
    t.compose(&RigidTransform::from_rotation(rotation_from_misalignment(dr)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{render_depth_image, CameraIntrinsics};
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clamp_example() {
        let c = clamp_misalignment(EulerMisalignment::new(1.7, 0.2, -1.3), 1.0);
        assert_eq!(c, EulerMisalignment::new(1.0, 0.2, -1.0));
    }

    #[test]
    fn vanishing_sigma_gives_zero() {
        let cfg = PerturbationConfig::gaussian(1e-300, 1.0, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dr = sample_training_perturbation(&cfg, &mut rng).unwrap();
        assert!(dr.max_abs() < 1e-290);
    }

    #[test]
    fn gaussian_requires_gaussian_mode() {
        let cfg = PerturbationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_training_perturbation(&cfg, &mut rng).is_err());
    }

    /// Brute-force oracle: the std of a N(0, 0.5²) draw clamped at ±1.0,
    /// computed by simulation with an independent generator.
    fn clamped_normal_std_oracle() -> f64 {
        use rand_distr::{Distribution, Normal};
        let mut rng = rand::rngs::StdRng::seed_from_u64(99);
        let n = Normal::new(0.0f64, 0.5).unwrap();
        let xs: Vec<f64> = (0..400_000)
            .map(|_| n.sample(&mut rng).clamp(-1.0f64, 1.0))
            .collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
    }

    #[test]
    fn clamped_std_lands_in_expected_band() {
        let oracle = clamped_normal_std_oracle();
        assert!((0.46..=0.50).contains(&oracle), "oracle {oracle}");

        let cfg = PerturbationConfig::gaussian(0.5, 1.0, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<_> = (0..100_000)
            .map(|_| sample_training_perturbation(&cfg, &mut rng).unwrap())
            .collect();
        for axis in 0..3 {
            let xs: Vec<f64> = draws.iter().map(|d| d.to_array()[axis]).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
            assert!((0.46..=0.50).contains(&sd), "axis {axis}: {sd}");
            assert!((sd - oracle).abs() < 0.005);
        }
    }

    #[test]
    fn clamp_respected_over_a_million_draws() {
        let cfg = PerturbationConfig::gaussian(0.5, 1.0, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1_000_000 {
            let dr = sample_training_perturbation(&cfg, &mut rng).unwrap();
            assert!(dr.max_abs() <= 1.0);
        }
    }

    #[test]
    fn default_grid_has_21_values() {
        let g = grid_faults(&PerturbationConfig::default()).unwrap();
        assert_eq!(g.values.len(), 21);
        assert_eq!(g.values[0], -1.0);
        assert_eq!(g.values[20], 1.0);
        assert_eq!(g.values[11], 0.1);
        assert_eq!(g.values[9], -0.1);
        assert_eq!(g.values[10], 0.0);
        let mut sorted = g.values.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), 21);
    }

    #[test]
    fn degenerate_grid_is_single_zero() {
        let cfg = PerturbationConfig {
            grid_min: 0.0,
            grid_max: 0.0,
            ..PerturbationConfig::default()
        };
        let g = grid_faults(&cfg).unwrap();
        assert_eq!(g.values, vec![0.0]);
        assert_eq!(g.fault(3).dr, EulerMisalignment::ZERO);
    }

    #[test]
    fn grid_rejects_non_multiple_span() {
        assert!(grid_axis_values(-1.0, 1.0, 0.3).is_err());
        assert!(grid_axis_values(-1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn grid_sampling_is_deterministic() {
        let cfg = PerturbationConfig::grid(-1.0, 1.0, 0.1, 7);
        let a = grid_faults(&cfg).unwrap().faults(1000);
        let b = grid_faults(&cfg).unwrap().faults(1000);
        assert_eq!(a, b);
        let c = grid_faults(&PerturbationConfig::grid(-1.0, 1.0, 0.1, 8))
            .unwrap()
            .faults(1000);
        assert_ne!(a, c);
    }

    #[test]
    fn grid_sampling_covers_all_values() {
        let g = grid_faults(&PerturbationConfig::grid(-1.0, 1.0, 0.1, 1)).unwrap();
        let faults = g.faults(5000);
        for v in &g.values {
            assert!(faults.iter().any(|f| f.dr.roll == *v));
            assert!(faults.iter().any(|f| f.dr.yaw == *v));
        }
    }

    #[test]
    fn fault_injector_modes() {
        let fixed = EulerMisalignment::new(0.2, -0.3, 0.4);
        let inj = FaultInjector::new(PerturbationConfig::fixed(fixed)).unwrap();
        assert_eq!(inj.fault(17).dr, fixed);
        let inj = FaultInjector::new(PerturbationConfig::gaussian(0.5, 1.0, 2)).unwrap();
        assert_eq!(inj.fault(4), inj.fault(4));
        assert!(inj.fault(4).dr.max_abs() <= 1.0);
        assert!(FaultInjector::new(PerturbationConfig::fixed(EulerMisalignment::new(6.0, 0.0, 0.0))).is_err());
    }

    #[test]
    fn perturb_points_examples() {
        let pts = vec![Point3::new(1.0, 2.0, 3.0), Point3::new(-4.0, 0.5, 80.0)];
        assert_eq!(perturb_points(&pts, EulerMisalignment::ZERO), pts);

        let q = perturb_points(&[Point3::new(1.0, 0.0, 0.0)], EulerMisalignment::new(0.0, 0.0, 90.0));
        assert!((q[0] - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-15);

        let dr = EulerMisalignment::new(0.4, -0.9, 0.7);
        let back = perturb_points(&perturb_points(&pts, dr), -dr);
        for (a, b) in back.iter().zip(&pts) {
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn perturb_transform_zero_is_noop() {
        let t = RigidTransform::new(
            rotation_from_misalignment(EulerMisalignment::new(10.0, 20.0, -5.0)),
            Vector3::new(0.3, 0.1, -1.0),
        );
        assert!(perturb_transform(&t, EulerMisalignment::ZERO).max_abs_diff(&t) < 1e-15);
    }

    fn arb_dr(max: f64) -> impl Strategy<Value = EulerMisalignment> {
        (-max..max, -max..max, -max..max).prop_map(|(r, p, y)| EulerMisalignment::new(r, p, y))
    }

    fn arb_point() -> impl Strategy<Value = Point3> {
        (-50.0..50.0, -20.0..20.0, 1.0..500.0).prop_map(|(x, y, z)| Point3::new(x, y, z))
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (arb_dr(5.0), -2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(dr, x, y, z)| {
            RigidTransform::new(rotation_from_misalignment(dr), Vector3::new(x, y, z))
        })
    }

    proptest! {
        #[test]
        fn perturbation_is_an_isometry(dr in arb_dr(5.0), pts in prop::collection::vec(arb_point(), 1..50)) {
            let q = perturb_points(&pts, dr);
            for (a, b) in q.iter().zip(&pts) {
                prop_assert!((a.coords.norm() - b.coords.norm()).abs() <= 1e-9);
            }
        }

        #[test]
        fn perturbed_transform_equals_prerotated_points(
            t in arb_transform(), dr in arb_dr(5.0), pts in prop::collection::vec(arb_point(), 1..50)
        ) {
            let pt = perturb_transform(&t, dr);
            let rotated = perturb_points(&pts, dr);
            for (p, r) in pts.iter().zip(&rotated) {
                prop_assert!((pt.apply(p) - t.apply(r)).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn both_injection_paths_render_identically() {
        let k = CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0, 640, 480).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<Point3> = (0..2000)
            .map(|_| {
                let z: f64 = rng.random_range(5.0..100.0);
                Point3::new(
                    rng.random_range(-0.45..0.45) * z,
                    rng.random_range(-0.35..0.35) * z,
                    z,
                )
            })
            .collect();
        let dr = EulerMisalignment::new(0.8, -0.6, 0.9);

        // Rig with LiDAR frame aligned to the camera: camera-frame perturbation
        // and right-composed extrinsic perturbation coincide.
        let t = RigidTransform::identity();
        let a = render_depth_image(&pts, &perturb_transform(&t, dr), &k);
        let b = render_depth_image(&perturb_points(&pts, dr), &t, &k);
        assert_eq!(a.nonzero_count(), b.nonzero_count());
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-9);
        }

        // General rig: perturbing the extrinsics equals pre-rotating LiDAR points.
        let t = RigidTransform::new(
            rotation_from_misalignment(EulerMisalignment::new(1.0, 2.0, -1.0)),
            Vector3::new(0.1, -0.2, 0.3),
        );
        let a = render_depth_image(&pts, &perturb_transform(&t, dr), &k);
        let b = render_depth_image(&perturb_points(&pts, dr), &t, &k);
        let mismatched = a
            .values
            .iter()
            .zip(&b.values)
            .filter(|(x, y)| (*x - *y).abs() > 1e-9)
            .count();
        assert_eq!(mismatched, 0);
    }
}
