use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{FusionTrace, SnippetResult};
use crate::error::{Error, Result};
use crate::fusion::{exceeds_threshold, DetectionVerdict};
use crate::geometry::EulerMisalignment;
use crate::metrics::surrogate::bucket_split;
use crate::metrics::{error_sweep, max_f1_pooled, mda_accumulate, precision_recall, ErrorSweepRow, MdaCounts, Variant};
use crate::scene::RangeBucket;

pub const MDA_FILE: &str = "mda.csv";
pub const ERROR_SWEEP_FILE: &str = "error_sweep.csv";
pub const BEV_FILE: &str = "bev_f1.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SNIPPETS_FILE: &str = "snippets.json";
pub const TRACE_FILE: &str = "fusion_trace.csv";

pub const MDA_HEADER: [&str; 10] = [
    "mode",
    "tp",
    "tn",
    "fp",
    "fn",
    "precision",
    "recall",
    "mean_err_roll",
    "mean_err_pitch",
    "mean_err_yaw",
];
pub const ERROR_SWEEP_HEADER: [&str; 9] = [
    "injected_axis",
    "injected_deg",
    "mean_abs_err_roll",
    "std_roll",
    "mean_abs_err_pitch",
    "std_pitch",
    "mean_abs_err_yaw",
    "std_yaw",
    "n",
];
pub const BEV_HEADER: [&str; 4] = ["bucket_min_m", "bucket_max_m", "variant", "max_f1"];
pub const TRACE_HEADER: [&str; 18] = [
    "frame",
    "timestamp_s",
    "noise_px",
    "est_roll",
    "est_pitch",
    "est_yaw",
    "sigma_roll",
    "sigma_pitch",
    "sigma_yaw",
    "kept",
    "per_frame_max_abs",
    "unweighted_roll",
    "unweighted_pitch",
    "unweighted_yaw",
    "weighted_roll",
    "weighted_pitch",
    "weighted_yaw",
    "weighted_stale",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    PerFrame,
    SnippetUnweighted,
    SnippetWeighted,
}

impl EvalMode {
    pub const ALL: [EvalMode; 3] = [EvalMode::PerFrame, EvalMode::SnippetUnweighted, EvalMode::SnippetWeighted];

    pub fn name(self) -> &'static str {
        match self {
            EvalMode::PerFrame => "per_frame",
            EvalMode::SnippetUnweighted => "snippet_unweighted",
            EvalMode::SnippetWeighted => "snippet_weighted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdaRow {
    pub mode: EvalMode,
    pub counts: MdaCounts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// Mean absolute estimation error per axis, degrees. `None` when the mode
    /// produced no estimate at all.
    pub mean_err: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BevRow {
    pub bucket: RangeBucket,
    pub variant: Variant,
    pub max_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub mda: Vec<MdaRow>,
    pub error_sweep: Vec<ErrorSweepRow>,
    pub bev: Vec<BevRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub snippets: usize,
    pub frames: usize,
    pub retries: u64,
    /// Snippets whose every frame was filtered out.
    pub unfused_snippets: usize,
    pub detection_model: String,
    pub config: ExperimentConfig,
    pub report: SweepReport,
}

fn mean_abs(errs: &[[f64; 3]]) -> Option<[f64; 3]> {
    if errs.is_empty() {
        return None;
    }
    let n = errs.len() as f64;
    Some([0, 1, 2].map(|j| errs.iter().map(|e| e[j].abs()).sum::<f64>() / n))
}

fn mda_row(mode: EvalMode, decisions: &[(DetectionVerdict, EulerMisalignment)], errs: &[[f64; 3]]) -> MdaRow {
    let counts = decisions
        .iter()
        .fold(MdaCounts::default(), |c, (v, inj)| mda_accumulate(c, v, *inj, v.threshold));
    let (precision, recall) = precision_recall(&counts);
    MdaRow {
        mode,
        counts,
        precision,
        recall,
        mean_err: mean_abs(errs),
    }
}

/// Aggregates snippet results. No results gives an empty report.
pub fn build_report(cfg: &ExperimentConfig, results: &[SnippetResult]) -> SweepReport {
    if results.is_empty() {
        return SweepReport {
            mda: Vec::new(),
            error_sweep: Vec::new(),
            bev: Vec::new(),
        };
    }
    let threshold = cfg.fusion.detect_threshold;
    let mut frame_dec = Vec::new();
    let mut frame_err = Vec::new();
    let mut pairs = Vec::new();
    for s in results {
        for f in &s.frames {
            let v = DetectionVerdict {
                positive: exceeds_threshold(f.estimate.dr, threshold),
                threshold,
            };
            frame_dec.push((v, s.injected));
            frame_err.push((f.estimate.dr - s.injected).to_array());
            pairs.push((s.injected, f.estimate.dr));
        }
    }
    let unw_dec: Vec<_> = results.iter().map(|s| (s.unweighted_verdict, s.injected)).collect();
    let unw_err: Vec<_> = results.iter().map(|s| (s.unweighted.dr - s.injected).to_array()).collect();
    let w_dec: Vec<_> = results.iter().map(|s| (s.verdict, s.injected)).collect();
    let w_err: Vec<_> = results
        .iter()
        .filter_map(|s| s.fused.map(|f| (f.dr - s.injected).to_array()))
        .collect();

    let mda = vec![
        mda_row(EvalMode::PerFrame, &frame_dec, &frame_err),
        mda_row(EvalMode::SnippetUnweighted, &unw_dec, &unw_err),
        mda_row(EvalMode::SnippetWeighted, &w_dec, &w_err),
    ];

    let mut bev = Vec::new();
    for (b, bucket) in cfg.scene.buckets.iter().enumerate() {
        for (vi, variant) in Variant::ALL.iter().enumerate() {
            let split: Vec<_> = results
                .iter()
                .map(|s| bucket_split(&s.boxes, &s.detections[vi], b))
                .collect();
            let f1 = max_f1_pooled(split.iter().map(|(d, g)| (&d[..], &g[..])), cfg.metrics.iou_min);
            bev.push(BevRow {
                bucket: *bucket,
                variant: *variant,
                max_f1: f1,
            });
        }
    }

    SweepReport {
        mda,
        error_sweep: error_sweep(&pairs),
        bev,
    }
}

pub fn summary(cfg: &ExperimentConfig, results: &[SnippetResult], report: &SweepReport) -> Summary {
    Summary {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        snippets: results.len(),
        frames: results.iter().map(|s| s.frames.len()).sum(),
        retries: results
            .iter()
            .flat_map(|s| s.frames.iter().map(|f| f.retries as u64))
            .sum(),
        unfused_snippets: results.iter().filter(|s| s.fused.is_none()).count(),
        detection_model: "geometric surrogate (no learned detector)".to_string(),
        config: cfg.clone().resolved(),
        report: report.clone(),
    }
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_rows<const N: usize>(path: &Path, header: [&str; N], rows: Vec<[String; N]>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(&r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_mda(path: &Path, rows: &[MdaRow]) -> Result<()> {
    let rows = rows
        .iter()
        .map(|r| {
            let e = r.mean_err.map(|e| e.map(fmt)).unwrap_or_default();
            [
                r.mode.name().to_string(),
                r.counts.tp.to_string(),
                r.counts.tn.to_string(),
                r.counts.fp.to_string(),
                r.counts.fn_.to_string(),
                fmt_opt(r.precision),
                fmt_opt(r.recall),
                e[0].clone(),
                e[1].clone(),
                e[2].clone(),
            ]
        })
        .collect();
    write_rows(path, MDA_HEADER, rows)
}

pub fn write_error_sweep(path: &Path, rows: &[ErrorSweepRow]) -> Result<()> {
    let rows = rows
        .iter()
        .map(|r| {
            [
                r.axis.name().to_string(),
                fmt(r.injected_deg),
                fmt(r.mean_abs_err[0]),
                fmt(r.std[0]),
                fmt(r.mean_abs_err[1]),
                fmt(r.std[1]),
                fmt(r.mean_abs_err[2]),
                fmt(r.std[2]),
                r.n.to_string(),
            ]
        })
        .collect();
    write_rows(path, ERROR_SWEEP_HEADER, rows)
}

pub fn write_bev(path: &Path, rows: &[BevRow]) -> Result<()> {
    let rows = rows
        .iter()
        .map(|r| [fmt(r.bucket.min), fmt(r.bucket.max), r.variant.name().to_string(), fmt(r.max_f1)])
        .collect();
    write_rows(path, BEV_HEADER, rows)
}

pub fn write_trace(path: &Path, trace: &FusionTrace) -> Result<()> {
    let rows = trace
        .rows
        .iter()
        .map(|r| {
            let e = r.estimate;
            let w = r.weighted.map(|w| w.to_array().map(fmt)).unwrap_or_default();
            [
                r.frame.to_string(),
                fmt(r.timestamp),
                fmt(r.noise_px),
                fmt(e.dr.roll),
                fmt(e.dr.pitch),
                fmt(e.dr.yaw),
                fmt(e.sigma[0]),
                fmt(e.sigma[1]),
                fmt(e.sigma[2]),
                r.kept.to_string(),
                fmt(e.dr.max_abs()),
                fmt(r.unweighted.roll),
                fmt(r.unweighted.pitch),
                fmt(r.unweighted.yaw),
                w[0].clone(),
                w[1].clone(),
                w[2].clone(),
                r.weighted_stale.to_string(),
            ]
        })
        .collect();
    write_rows(path, TRACE_HEADER, rows)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes every report file into `dir`, creating it if needed. Returns the
/// paths written.
pub fn write_report(dir: &Path, cfg: &ExperimentConfig, results: &[SnippetResult]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let report = build_report(cfg, results);
    let paths: Vec<PathBuf> = [MDA_FILE, ERROR_SWEEP_FILE, BEV_FILE, SUMMARY_FILE, SNIPPETS_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_mda(&paths[0], &report.mda)?;
    write_error_sweep(&paths[1], &report.error_sweep)?;
    write_bev(&paths[2], &report.bev)?;
    write_json(&paths[3], &summary(cfg, results, &report))?;
    write_json(&paths[4], &results)?;
    Ok(paths)
}

pub fn read_summary(dir: &Path) -> Result<Summary> {
    read_json(&dir.join(SUMMARY_FILE))
}

pub fn read_snippets(dir: &Path) -> Result<Vec<SnippetResult>> {
    read_json(&dir.join(SNIPPETS_FILE))
}

/// Human-readable description of every output file.
pub fn schema() -> String {
    let mut s = String::new();
    let mut section = |name: &str, header: &[&str], note: &str| {
        s.push_str(&format!("{name}\n  columns: {}\n  {note}\n\n", header.join(",")));
    };
    section(
        MDA_FILE,
        &MDA_HEADER,
        "one row per mode (per_frame, snippet_unweighted, snippet_weighted); precision/recall empty when undefined; errors in degrees",
    );
    section(
        ERROR_SWEEP_FILE,
        &ERROR_SWEEP_HEADER,
        "per-frame estimates grouped by injected value on injected_axis; population std of the absolute error",
    );
    section(
        BEV_FILE,
        &BEV_HEADER,
        "pooled max-F1 per range bucket; variant is baseline, uncorrected or corrected",
    );
    section(
        TRACE_FILE,
        &TRACE_HEADER,
        "fuse-demo output; running fused value per mode after each frame; weighted columns empty until a frame passes the filter",
    );
    s.push_str(&format!(
        "{SUMMARY_FILE}\n  object: tool, version, seed, snippets, frames, retries, unfused_snippets, detection_model, config (resolved ExperimentConfig), report {{mda, error_sweep, bev}}\n\n"
    ));
    s.push_str(&format!(
        "{SNIPPETS_FILE}\n  array of snippets: id, injected, frames [{{frame, retries, noise_px, estimate}}], fused, unweighted, verdict, unweighted_verdict, bucket_f1\n"
    ));
    s
}

