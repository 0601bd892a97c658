//! Temporal fusion of per-frame estimates and the decisions built on it.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::MisalignmentEstimate;
use crate::geometry::{rotation_angle_deg, rotation_from_misalignment, EulerMisalignment, RigidTransform};

pub const DEFAULT_WINDOW_S: f64 = 5.0;
pub const DEFAULT_SIGMA_MAX: f64 = 0.3;
pub const DEFAULT_DETECT_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightRule {
    /// wᵢ = 1/σᵢ²
    #[default]
    InverseVariance,
    /// wᵢ = 1/σᵢ
    InverseSigma,
    /// Plain average, no filtering weight.
    Uniform,
}

impl WeightRule {
    fn weight(self, sigma: f64) -> f64 {
        match self {
            WeightRule::InverseVariance => 1.0 / (sigma * sigma),
            WeightRule::InverseSigma => 1.0 / sigma,
            WeightRule::Uniform => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub window_s: f64,
    pub sigma_max: f64,
    pub detect_threshold: f64,
    pub weight_rule: WeightRule,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            window_s: DEFAULT_WINDOW_S,
            sigma_max: DEFAULT_SIGMA_MAX,
            detect_threshold: DEFAULT_DETECT_THRESHOLD,
            weight_rule: WeightRule::InverseVariance,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_s > 0.0) {
            return Err(Error::Config("fusion: window_s must be positive".into()));
        }
        if !(self.sigma_max > 0.0) {
            return Err(Error::Config("fusion: sigma_max must be positive".into()));
        }
        if !(self.detect_threshold > 0.0) {
            return Err(Error::Config("fusion: detect_threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Sliding window of estimates, evicting anything older than `span` seconds
/// relative to the newest timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateWindow {
    span: f64,
    estimates: VecDeque<MisalignmentEstimate>,
}

impl Default for EstimateWindow {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW_S)
    }
}

impl EstimateWindow {
    pub fn new(span: f64) -> Self {
        Self {
            span,
            estimates: VecDeque::new(),
        }
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    /// Appends an estimate. Out-of-order timestamps are rejected.
    pub fn push(&mut self, e: MisalignmentEstimate) -> Result<()> {
        if let Some(last) = self.estimates.back() {
            if e.timestamp < last.timestamp {
                return Err(Error::Domain(format!(
                    "timestamp {} precedes newest {}",
                    e.timestamp, last.timestamp
                )));
            }
        }
        let newest = e.timestamp;
        self.estimates.push_back(e);
        while let Some(front) = self.estimates.front() {
            if newest - front.timestamp > self.span {
                self.estimates.pop_front();
            } else {
                break;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &MisalignmentEstimate> {
        self.estimates.iter()
    }

    pub fn to_vec(&self) -> Vec<MisalignmentEstimate> {
        self.estimates.iter().copied().collect()
    }
}

/// Keeps the estimates whose every axis sigma is at most `sigma_max`.
pub fn filter_by_uncertainty(estimates: &[MisalignmentEstimate], sigma_max: f64) -> Vec<MisalignmentEstimate> {
    estimates
        .iter()
        .filter(|e| e.sigma.iter().all(|s| *s <= sigma_max))
        .copied()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedEstimate {
    pub dr: EulerMisalignment,
    /// Per-axis sigma (roll, pitch, yaw), degrees.
    pub sigma: [f64; 3],
    pub n_fused: usize,
    pub n_filtered: usize,
}

impl FusedEstimate {
    pub fn from_dr(dr: EulerMisalignment) -> Self {
        Self {
            dr,
            sigma: [0.0; 3],
            n_fused: 1,
            n_filtered: 0,
        }
    }
}

/// Inverse-variance weighted mean per axis.
pub fn fuse(estimates: &[MisalignmentEstimate]) -> Result<FusedEstimate> {
    fuse_with(estimates, WeightRule::InverseVariance)
}

/// Weighted mean per axis under `rule`. The fused sigma is the propagated
/// standard deviation `sqrt(Σ wᵢ² σᵢ²) / Σ wᵢ`, which reduces to
/// `sqrt(1 / Σ wᵢ)` for inverse-variance weights.
pub fn fuse_with(estimates: &[MisalignmentEstimate], rule: WeightRule) -> Result<FusedEstimate> {
    if estimates.is_empty() {
        return Err(Error::NothingToFuse);
    }
    let mut dr = [0.0; 3];
    let mut sigma = [0.0; 3];
    for axis in 0..3 {
        let mut wsum = 0.0;
        let mut acc = 0.0;
        let mut var = 0.0;
        for e in estimates {
            let s = e.sigma[axis];
            let w = rule.weight(s);
            wsum += w;
            acc += w * e.dr.to_array()[axis];
            var += w * w * s * s;
        }
        dr[axis] = acc / wsum;
        sigma[axis] = match rule {
            WeightRule::InverseVariance => inverse_variance_sigma(estimates.iter().map(|e| e.sigma[axis])),
            _ => var.sqrt() / wsum,
        };
    }
    Ok(FusedEstimate {
        dr: EulerMisalignment::from_array(dr),
        sigma,
        n_fused: estimates.len(),
        n_filtered: 0,
    })
}

// sqrt(1 / Σ σᵢ⁻²) evaluated as m / sqrt(Σ (m/σᵢ)²) with m = min σᵢ. The
// minimum contributes exactly 1 to the sum, so the result is never above m
// even after rounding.
fn inverse_variance_sigma(sigmas: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = sigmas.clone().fold(f64::INFINITY, f64::min);
    let s: f64 = sigmas.map(|s| (m / s).powi(2)).sum();
    m / s.sqrt()
}

/// Filter at `cfg.sigma_max`, then fuse with `cfg.weight_rule`.
pub fn fuse_window(estimates: &[MisalignmentEstimate], cfg: &FusionConfig) -> Result<FusedEstimate> {
    let kept = filter_by_uncertainty(estimates, cfg.sigma_max);
    let mut f = fuse_with(&kept, cfg.weight_rule)?;
    f.n_filtered = estimates.len() - kept.len();
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub positive: bool,
    pub threshold: f64,
}

/// True when the largest absolute axis strictly exceeds `threshold`.
pub fn exceeds_threshold(dr: EulerMisalignment, threshold: f64) -> bool {
    dr.max_abs() > threshold
}

pub fn classify_misalignment(f: &FusedEstimate, threshold: f64) -> DetectionVerdict {
    DetectionVerdict {
        positive: exceeds_threshold(f.dr, threshold),
        threshold,
    }
}

/// Undoes a fault injected by [`crate::perturb::perturb_transform`] by
/// right-composing the inverse of the estimated rotation.
pub fn correct_transform(t: &RigidTransform, f: &FusedEstimate) -> RigidTransform {
    let corr = RigidTransform::from_rotation(rotation_from_misalignment(f.dr).inverse());
    t.compose(&corr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    /// Geodesic angle of `R(injected)·R(estimate)⁻¹`, degrees.
    pub angle: f64,
    /// `injected − estimate` per axis, degrees.
    pub per_axis: EulerMisalignment,
}

pub fn residual_misalignment(injected: EulerMisalignment, estimate: EulerMisalignment) -> Residual {
    let r = rotation_from_misalignment(injected) * rotation_from_misalignment(estimate).inverse();
    Residual {
        angle: rotation_angle_deg(&r),
        per_axis: injected - estimate,
    }
}

/// Per-frame fusion state. Holds the last valid fusion when a window filters
/// down to nothing and reports it as stale.
#[derive(Debug, Clone)]
pub struct FusionTracker {
    cfg: FusionConfig,
    window: EstimateWindow,
    last: Option<FusedEstimate>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerOutput {
    /// `None` until a window first survives filtering.
    pub fused: Option<FusedEstimate>,
    pub stale: bool,
}

impl FusionTracker {
    pub fn new(cfg: FusionConfig) -> Self {
        let window = EstimateWindow::new(cfg.window_s);
        Self {
            cfg,
            window,
            last: None,
        }
    }

    pub fn window(&self) -> &EstimateWindow {
        &self.window
    }

    pub fn update(&mut self, e: MisalignmentEstimate) -> Result<TrackerOutput> {
        self.window.push(e)?;
        match fuse_window(&self.window.to_vec(), &self.cfg) {
            Ok(f) => {
                self.last = Some(f);
                Ok(TrackerOutput {
                    fused: Some(f),
                    stale: false,
                })
            }
            Err(Error::NothingToFuse) => Ok(TrackerOutput {
                fused: self.last,
                stale: true,
            }),
            Err(e) => Err(e),
        }
    }
}
