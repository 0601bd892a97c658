use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::fusion::FusionConfig;
use crate::geometry::CameraIntrinsics;
use crate::metrics::DetectionModel;
use crate::perturb::PerturbationConfig;
use crate::scene::SceneConfig;

pub const ENV_SEED: &str = "MISALIGN_SEED";
pub const ENV_OUT: &str = "MISALIGN_OUT";

/// Per-frame pixel noise of the correspondences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    /// Every frame uses `scene.pixel_noise_sigma`.
    #[default]
    Fixed,
    /// Each frame draws its sigma log-uniformly from `[min_px, max_px]`.
    LogUniform { min_px: f64, max_px: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub iou_min: f64,
    pub robustness_factor: f64,
    pub score_decay_m: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        let d = DetectionModel::default();
        Self {
            iou_min: 0.1,
            robustness_factor: d.robustness_factor,
            score_decay_m: d.score_decay_m,
        }
    }
}

impl MetricsConfig {
    pub fn detection_model(&self) -> DetectionModel {
        DetectionModel {
            robustness_factor: self.robustness_factor,
            score_decay_m: self.score_decay_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub snippets: usize,
    pub frames_per_snippet: usize,
    pub snippet_duration_s: f64,
    /// Fresh scenes tried per frame when a draw is numerically degenerate.
    pub max_retries: u32,
    pub intrinsics: CameraIntrinsics,
    pub noise: NoiseModel,
    pub scene: SceneConfig,
    pub perturbation: PerturbationConfig,
    pub estimator: EstimatorConfig,
    pub fusion: FusionConfig,
    pub metrics: MetricsConfig,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            snippets: 1000,
            frames_per_snippet: 10,
            snippet_duration_s: 5.0,
            max_retries: 3,
            intrinsics: CameraIntrinsics::reference(),
            noise: NoiseModel::Fixed,
            scene: SceneConfig::default(),
            perturbation: PerturbationConfig::default(),
            estimator: EstimatorConfig::default(),
            fusion: FusionConfig::default(),
            metrics: MetricsConfig::default(),
            output: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Applies `MISALIGN_SEED` / `MISALIGN_OUT` as returned by `lookup`.
    pub fn apply_env<F>(&mut self, lookup: F) -> Result<()>
    where
        F: Fn(&str) -> Option<String>,
    {
        if let Some(s) = lookup(ENV_SEED) {
            self.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_SEED}={s:?} is not a u64")))?;
        }
        if let Some(o) = lookup(ENV_OUT) {
            self.output = PathBuf::from(o);
        }
        Ok(())
    }

    /// Copies the master seed into the sections that carry their own.
    pub fn resolved(mut self) -> Self {
        self.perturbation.seed = self.seed;
        self.scene.seed = self.seed;
        self
    }

    pub fn frame_time(&self, frame: usize) -> f64 {
        frame as f64 * self.snippet_duration_s / self.frames_per_snippet as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames_per_snippet == 0 {
            return Err(Error::Config("frames_per_snippet must be positive".into()));
        }
        if !(self.snippet_duration_s > 0.0) {
            return Err(Error::Config("snippet_duration_s must be positive".into()));
        }
        self.intrinsics.validate()?;
        if let NoiseModel::LogUniform { min_px, max_px } = self.noise {
            if !(min_px > 0.0 && min_px <= max_px && max_px.is_finite()) {
                return Err(Error::Config(format!(
                    "noise: need 0 < min_px <= max_px, got [{min_px}, {max_px}]"
                )));
            }
        }
        self.scene.validate()?;
        self.perturbation.validate()?;
        self.estimator.validate()?;
        self.fusion.validate()?;
        if !(self.metrics.iou_min > 0.0 && self.metrics.iou_min <= 1.0) {
            return Err(Error::Config(format!("metrics: iou_min {} outside (0, 1]", self.metrics.iou_min)));
        }
        self.metrics.detection_model().validate()?;
        Ok(())
    }
}
