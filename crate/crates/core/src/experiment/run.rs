use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, NoiseModel};
use crate::error::{Error, Result};
use crate::estimator::{estimate_frame, MisalignmentEstimate};
use crate::fusion::{
    classify_misalignment, fuse_window, fuse_with, DetectionVerdict, EstimateWindow, FusedEstimate, FusionConfig,
    FusionTracker, WeightRule,
};
use crate::geometry::EulerMisalignment;
use crate::metrics::surrogate::variant_detections;
use crate::metrics::{bucketed_detection_eval, BucketF1, Detection, Variant};
use crate::perturb::{FaultInjector, InjectedFault};
use crate::rng::{substream, tag};
use crate::scene::{generate_scene, make_correspondences, SceneBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    /// Number of rejected scene draws before this one.
    pub retries: u32,
    pub noise_px: f64,
    pub estimate: MisalignmentEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnippetResult {
    pub id: u64,
    pub injected: EulerMisalignment,
    pub frames: Vec<FrameRecord>,
    /// Filtered, weighted fusion. `None` when no frame survived the filter.
    pub fused: Option<FusedEstimate>,
    /// Plain mean of every frame, no filtering.
    pub unweighted: FusedEstimate,
    pub verdict: DetectionVerdict,
    pub unweighted_verdict: DetectionVerdict,
    pub bucket_f1: Vec<BucketF1>,
    #[serde(skip)]
    pub boxes: Vec<SceneBox>,
    /// Detections of every variant, aligned with `boxes`.
    #[serde(skip)]
    pub detections: [Vec<Detection>; 3],
    #[serde(skip)]
    pub timing: Duration,
}

impl SnippetResult {
    pub fn correction(&self) -> Option<EulerMisalignment> {
        self.fused.filter(|_| self.verdict.positive).map(|f| f.dr)
    }
}

fn frame_noise<R: Rng>(cfg: &ExperimentConfig, rng: &mut R) -> f64 {
    match cfg.noise {
        NoiseModel::Fixed => cfg.scene.pixel_noise_sigma,
        NoiseModel::LogUniform { min_px, max_px } => {
            let (a, b) = (min_px.ln(), max_px.ln());
            if a == b {
                min_px
            } else {
                rng.random_range(a..b).exp()
            }
        }
    }
}

/// One frame: draw a scene, build correspondences under `dr`, estimate.
/// Numerically degenerate draws are replaced by fresh ones up to
/// `cfg.max_retries` times.
pub fn estimate_one_frame(cfg: &ExperimentConfig, id: u64, frame: usize, dr: EulerMisalignment) -> Result<FrameRecord> {
    let mut attempt = 0u32;
    loop {
        let path = [id, frame as u64, attempt as u64];
        let mut scene_rng = substream(cfg.seed, &[tag::SCENE, path[0], path[1], path[2]]);
        let mut noise_rng = substream(cfg.seed, &[tag::NOISE, path[0], path[1], path[2]]);
        let noise_px = frame_noise(cfg, &mut noise_rng);
        let out = generate_scene(&cfg.scene, &cfg.intrinsics, &mut scene_rng)
            .and_then(|scene| make_correspondences(&scene, &cfg.intrinsics, dr, noise_px, &mut noise_rng))
            .and_then(|cs| estimate_frame(&cs, &cfg.estimator, cfg.frame_time(frame)));
        match out {
            Ok(estimate) => {
                return Ok(FrameRecord {
                    frame,
                    retries: attempt,
                    noise_px,
                    estimate,
                })
            }
            Err(e) if e.is_numerical() && attempt < cfg.max_retries => {
                log::debug!("snippet {id} frame {frame}: {e}; redrawing");
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

pub fn estimate_snippet(cfg: &ExperimentConfig, fault: &InjectedFault) -> Result<Vec<FrameRecord>> {
    (0..cfg.frames_per_snippet)
        .map(|f| estimate_one_frame(cfg, fault.id, f, fault.dr))
        .collect()
}

/// Fuses and classifies the frames of one snippet, then scores
/// the detection variants on the snippet's detection scene.
pub fn score_snippet(cfg: &ExperimentConfig, id: u64, injected: EulerMisalignment, frames: Vec<FrameRecord>) -> Result<SnippetResult> {
    let mut window = EstimateWindow::new(cfg.fusion.window_s);
    for f in &frames {
        window.push(f.estimate)?;
    }
    let in_window = window.to_vec();
    let fused = match fuse_window(&in_window, &cfg.fusion) {
        Ok(f) => Some(f),
        Err(Error::NothingToFuse) => None,
        Err(e) => return Err(e),
    };
    let unweighted = fuse_with(&in_window, WeightRule::Uniform)?;
    let threshold = cfg.fusion.detect_threshold;
    let verdict = match &fused {
        Some(f) => classify_misalignment(f, threshold),
        None => DetectionVerdict {
            positive: false,
            threshold,
        },
    };
    let unweighted_verdict = classify_misalignment(&unweighted, threshold);

    let correction = fused.filter(|_| verdict.positive).map(|f| f.dr);
    let mut det_rng = substream(cfg.seed, &[tag::DETECT, id]);
    let scene = generate_scene(&cfg.scene, &cfg.intrinsics, &mut det_rng)?;
    let model = cfg.metrics.detection_model();
    let bucket_f1 = bucketed_detection_eval(&scene, &cfg.scene.buckets, injected, correction, &model, cfg.metrics.iou_min);
    let detections = Variant::ALL.map(|v| variant_detections(&scene, v, injected, correction, &model));

    Ok(SnippetResult {
        id,
        injected,
        frames,
        fused,
        unweighted,
        verdict,
        unweighted_verdict,
        bucket_f1,
        boxes: scene.boxes,
        detections,
        timing: Duration::ZERO,
    })
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs every snippet of `cfg`. Results are ordered by snippet id whatever
/// the thread count. `jobs = None` uses rayon's global pool.
pub fn run_sweep(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<Vec<SnippetResult>> {
    let resolved = cfg.clone().resolved();
    resolved.validate()?;
    let injector = FaultInjector::new(resolved.perturbation.clone())?;
    let faults: Vec<InjectedFault> = (0..cfg.snippets as u64).map(|i| injector.fault(i)).collect();
    run_faults(&resolved, &faults, jobs)
}

/// Runs one snippet per given fault; the fault id is the snippet id.
pub fn run_faults(cfg: &ExperimentConfig, faults: &[InjectedFault], jobs: Option<usize>) -> Result<Vec<SnippetResult>> {
    let cfg = cfg.clone().resolved();
    cfg.validate()?;
    let start = Instant::now();
    let mut results = with_pool(jobs, || {
        faults
            .par_iter()
            .map(|fault| {
                let t0 = Instant::now();
                let frames = estimate_snippet(&cfg, fault)?;
                let mut r = score_snippet(&cfg, fault.id, fault.dr, frames)?;
                r.timing = t0.elapsed();
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    results.sort_by_key(|r| r.id);
    log::info!("{} snippets in {:.2?}", results.len(), start.elapsed());
    Ok(results)
}

/// Re-runs fusion and detection scoring on stored frame
/// estimates, possibly under a different configuration.
pub fn rescore(cfg: &ExperimentConfig, previous: &[SnippetResult], jobs: Option<usize>) -> Result<Vec<SnippetResult>> {
    let cfg = cfg.clone().resolved();
    cfg.validate()?;
    with_pool(jobs, || {
        previous
            .par_iter()
            .map(|s| score_snippet(&cfg, s.id, s.injected, s.frames.clone()))
            .collect::<Result<Vec<_>>>()
    })?
}

/// One row of the fusion trace: a frame, whether the weighted mode kept it,
/// and the running value of every fusion mode after it arrived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub frame: usize,
    pub timestamp: f64,
    pub noise_px: f64,
    pub estimate: MisalignmentEstimate,
    pub kept: bool,
    pub unweighted: EulerMisalignment,
    /// `None` until some frame passes the filter.
    pub weighted: Option<EulerMisalignment>,
    pub weighted_stale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionTrace {
    pub snippet: u64,
    pub injected: EulerMisalignment,
    pub rows: Vec<TraceRow>,
}

/// Frame-by-frame fusion of snippet `snippet` under all three modes.
pub fn demo_fusion(cfg: &ExperimentConfig, snippet: u64) -> Result<FusionTrace> {
    let cfg = cfg.clone().resolved();
    cfg.validate()?;
    let fault = FaultInjector::new(cfg.perturbation.clone())?.fault(snippet);
    let frames = estimate_snippet(&cfg, &fault)?;
    Ok(trace_frames(&cfg.fusion, &fault, &frames))
}

pub fn trace_frames(fusion: &FusionConfig, fault: &InjectedFault, frames: &[FrameRecord]) -> FusionTrace {
    let mut tracker = FusionTracker::new(fusion.clone());
    let mut plain = EstimateWindow::new(fusion.window_s);
    let mut rows = Vec::with_capacity(frames.len());
    for f in frames {
        let e = f.estimate;
        let kept = e.sigma.iter().all(|s| *s <= fusion.sigma_max);
        let out = tracker.update(e).expect("frames are time ordered");
        plain.push(e).expect("frames are time ordered");
        let unweighted = fuse_with(&plain.to_vec(), WeightRule::Uniform).expect("window holds the new frame");
        rows.push(TraceRow {
            frame: f.frame,
            timestamp: e.timestamp,
            noise_px: f.noise_px,
            estimate: e,
            kept,
            unweighted: unweighted.dr,
            weighted: out.fused.map(|x| x.dr),
            weighted_stale: out.stale,
        });
    }
    FusionTrace {
        snippet: fault.id,
        injected: fault.dr,
        rows,
    }
}
