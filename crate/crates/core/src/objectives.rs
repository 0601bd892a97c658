//! Reference losses for a multi-task detector with Laplacian uncertainty
//! heads, plus their analytic gradients.
//!
//! Natural logarithms throughout. The focal term averages over pixels; the 2-D
//! and 3-D regression terms average over objects.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EulerMisalignment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Domain(format!("focal alpha {} outside (0, 1]", self.alpha)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Domain(format!("focal gamma {} < 0", self.gamma)));
        }
        Ok(())
    }
}

/// A regressed value with its Laplacian diversity `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplacianTerm {
    pub prediction: f64,
    pub target: f64,
    pub diversity_b: f64,
}

impl LaplacianTerm {
    pub const fn new(prediction: f64, target: f64, diversity_b: f64) -> Self {
        Self {
            prediction,
            target,
            diversity_b,
        }
    }

    /// A term with zero residual and unit diversity.
    pub const fn exact(value: f64) -> Self {
        Self::new(value, value, 1.0)
    }

    fn residual(&self) -> f64 {
        self.prediction - self.target
    }

    fn check(&self) -> Result<()> {
        if !(self.diversity_b > 0.0) {
            return Err(Error::Domain(format!("diversity b = {} must be positive", self.diversity_b)));
        }
        Ok(())
    }
}

/// `|pred − target| / b + ln b`.
pub fn laplace_nll_term(t: &LaplacianTerm) -> Result<f64> {
    t.check()?;
    Ok(t.residual().abs() / t.diversity_b + t.diversity_b.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiTaskWeights {
    pub w_o: f64,
    pub w_c: f64,
    pub w_s: f64,
    pub w_o3d: f64,
    pub w_s3d: f64,
    pub w_d: f64,
    pub w_phi: f64,
    pub w_theta: f64,
}

impl Default for MultiTaskWeights {
    fn default() -> Self {
        Self {
            w_o: 1.0,
            w_c: 2.0,
            w_s: 0.1,
            w_o3d: 0.25,
            w_s3d: 1.0,
            w_d: 1.5,
            w_phi: 0.1,
            w_theta: 0.4,
        }
    }
}

impl MultiTaskWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_o, self.w_c, self.w_s, self.w_o3d, self.w_s3d, self.w_d, self.w_phi, self.w_theta,
        ];
        if all.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Domain("multi-task weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Object2d {
    pub offset_x: LaplacianTerm,
    pub offset_y: LaplacianTerm,
    pub width: LaplacianTerm,
    pub height: LaplacianTerm,
}

/// An L1-supervised value without a diversity head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L1Term {
    pub prediction: f64,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Object3d {
    pub offset_x: LaplacianTerm,
    pub offset_y: LaplacianTerm,
    pub width: LaplacianTerm,
    pub length: LaplacianTerm,
    pub height: LaplacianTerm,
    pub range: L1Term,
    pub orientation: L1Term,
}

/// Misalignment head: prediction, target and per-axis diversities, all in
/// degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiscalTerm {
    pub prediction: EulerMisalignment,
    pub target: EulerMisalignment,
    /// (roll, pitch, yaw)
    pub b: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSample {
    /// Predicted probability of the true class at each pixel.
    pub probs: Vec<f64>,
    pub focal: FocalParams,
    pub objects_2d: Vec<Object2d>,
    pub objects_3d: Vec<Object3d>,
    pub miscal: MiscalTerm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub class: f64,
    pub two_d: f64,
    pub three_d: f64,
    pub miscal: f64,
    pub total: f64,
}

pub fn focal_loss(probs: &[f64], params: &FocalParams, w_c: f64) -> Result<f64> {
    params.validate()?;
    if probs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sum = 0.0;
    for &p in probs {
        check_prob(p)?;
        sum += params.alpha * (1.0 - p).powf(params.gamma) * p.ln();
    }
    Ok(-w_c / probs.len() as f64 * sum)
}

fn check_prob(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain(format!("probability {p} outside (0, 1]")));
    }
    Ok(())
}

fn pair(w: f64, a: &LaplacianTerm, b: &LaplacianTerm) -> Result<f64> {
    a.check()?;
    b.check()?;
    Ok(w * (a.residual().abs() / a.diversity_b + b.residual().abs() / b.diversity_b)
        + w * (a.diversity_b * b.diversity_b).ln())
}

pub fn loss_2d(objects: &[Object2d], w: &MultiTaskWeights) -> Result<f64> {
    if objects.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for o in objects {
        sum += pair(w.w_o, &o.offset_x, &o.offset_y)?;
        sum += pair(w.w_s, &o.width, &o.height)?;
    }
    Ok(sum / objects.len() as f64)
}

pub fn loss_3d(objects: &[Object3d], w: &MultiTaskWeights) -> Result<f64> {
    if objects.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for o in objects {
        sum += pair(w.w_o3d, &o.offset_x, &o.offset_y)?;
        let sizes = [o.width, o.length, o.height];
        let mut log_b = 0.0;
        for s in &sizes {
            s.check()?;
            sum += w.w_s3d * s.residual().abs() / s.diversity_b;
            log_b += s.diversity_b.ln();
        }
        sum += w.w_s3d * log_b;
        sum += w.w_d * (o.range.prediction - o.range.target).abs();
        sum += w.w_phi * (o.orientation.prediction - o.orientation.target).abs();
    }
    Ok(sum / objects.len() as f64)
}

pub fn loss_miscal(pred: EulerMisalignment, target: EulerMisalignment, b: [f64; 3], w_theta: f64) -> Result<f64> {
    if b.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Domain(format!("misalignment diversities {b:?} must be positive")));
    }
    let r = (pred - target).to_array();
    let l1: f64 = (0..3).map(|j| r[j].abs() / b[j]).sum();
    Ok(w_theta * (l1 + (b[0] * b[1] * b[2]).ln()))
}

pub fn total_loss(sample: &LossSample, w: &MultiTaskWeights) -> Result<LossBreakdown> {
    w.validate()?;
    let class = focal_loss(&sample.probs, &sample.focal, w.w_c)?;
    let two_d = loss_2d(&sample.objects_2d, w)?;
    let three_d = loss_3d(&sample.objects_3d, w)?;
    let m = &sample.miscal;
    let miscal = loss_miscal(m.prediction, m.target, m.b, w.w_theta)?;
    Ok(LossBreakdown {
        class,
        two_d,
        three_d,
        miscal,
        total: class + two_d + three_d + miscal,
    })
}

impl LossSample {
    // Flat parameter order: probabilities; per 2-D object (pred, b) for
    // offset x, offset y, width, height; per 3-D object (pred, b) for offset
    // x, offset y, width, length, height, then range and orientation
    // predictions; misalignment predictions (roll, pitch, yaw) then their b.
    fn params_mut(&mut self) -> Vec<&mut f64> {
        let mut out: Vec<&mut f64> = self.probs.iter_mut().collect();
        for o in &mut self.objects_2d {
            for t in [&mut o.offset_x, &mut o.offset_y, &mut o.width, &mut o.height] {
                out.push(&mut t.prediction);
                out.push(&mut t.diversity_b);
            }
        }
        for o in &mut self.objects_3d {
            for t in [&mut o.offset_x, &mut o.offset_y, &mut o.width, &mut o.length, &mut o.height] {
                out.push(&mut t.prediction);
                out.push(&mut t.diversity_b);
            }
            out.push(&mut o.range.prediction);
            out.push(&mut o.orientation.prediction);
        }
        let m = &mut self.miscal;
        out.push(&mut m.prediction.roll);
        out.push(&mut m.prediction.pitch);
        out.push(&mut m.prediction.yaw);
        for b in &mut m.b {
            out.push(b);
        }
        out
    }

    /// Every prediction and diversity, in gradient order.
    pub fn parameter_vec(&self) -> Vec<f64> {
        self.clone().params_mut().into_iter().map(|p| *p).collect()
    }

    pub fn set_parameter(&mut self, index: usize, value: f64) {
        *self.params_mut()[index] = value;
    }

    pub fn n_parameters(&self) -> usize {
        self.probs.len() + 8 * self.objects_2d.len() + 12 * self.objects_3d.len() + 6
    }
}

/// Gradient of the total loss in [`LossSample::parameter_vec`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
    /// Parameters whose L1 residual is exactly zero. Their entry uses the
    /// zero subgradient.
    pub ambiguous: Vec<usize>,
}

fn sign_or_flag(r: f64, idx: usize, ambiguous: &mut Vec<usize>) -> f64 {
    if r == 0.0 {
        ambiguous.push(idx);
        0.0
    } else {
        r.signum()
    }
}

/// d/dp of `−α (1−p)^γ ln p`.
fn focal_point_grad(p: f64, f: &FocalParams) -> f64 {
    let q = 1.0 - p;
    if q == 0.0 {
        return if f.gamma > 0.0 { 0.0 } else { -f.alpha };
    }
    -f.alpha * (-f.gamma * q.powf(f.gamma - 1.0) * p.ln() + q.powf(f.gamma) / p)
}

pub fn analytic_gradients(sample: &LossSample, w: &MultiTaskWeights) -> Result<Gradient> {
    // Validates every input on the way.
    total_loss(sample, w)?;
    let mut g = Vec::with_capacity(sample.n_parameters());
    let mut amb = Vec::new();

    let n_pix = sample.probs.len() as f64;
    for &p in &sample.probs {
        g.push(w.w_c / n_pix * focal_point_grad(p, &sample.focal));
    }

    let laplace = |t: &LaplacianTerm, scale: f64, g: &mut Vec<f64>, amb: &mut Vec<usize>| {
        let idx = g.len();
        let r = t.residual();
        let b = t.diversity_b;
        g.push(scale * sign_or_flag(r, idx, amb) / b);
        g.push(scale * (1.0 / b - r.abs() / (b * b)));
    };

    let n2 = sample.objects_2d.len() as f64;
    for o in &sample.objects_2d {
        laplace(&o.offset_x, w.w_o / n2, &mut g, &mut amb);
        laplace(&o.offset_y, w.w_o / n2, &mut g, &mut amb);
        laplace(&o.width, w.w_s / n2, &mut g, &mut amb);
        laplace(&o.height, w.w_s / n2, &mut g, &mut amb);
    }

    let n3 = sample.objects_3d.len() as f64;
    for o in &sample.objects_3d {
        laplace(&o.offset_x, w.w_o3d / n3, &mut g, &mut amb);
        laplace(&o.offset_y, w.w_o3d / n3, &mut g, &mut amb);
        for t in [&o.width, &o.length, &o.height] {
            laplace(t, w.w_s3d / n3, &mut g, &mut amb);
        }
        for (term, wt) in [(&o.range, w.w_d), (&o.orientation, w.w_phi)] {
            let idx = g.len();
            g.push(wt / n3 * sign_or_flag(term.prediction - term.target, idx, &mut amb));
        }
    }

    let m = &sample.miscal;
    let r = (m.prediction - m.target).to_array();
    for j in 0..3 {
        let idx = g.len();
        g.push(w.w_theta * sign_or_flag(r[j], idx, &mut amb) / m.b[j]);
    }
    for j in 0..3 {
        g.push(w.w_theta * (1.0 / m.b[j] - r[j].abs() / (m.b[j] * m.b[j])));
    }

    Ok(Gradient {
        values: g,
        ambiguous: amb,
    })
}

/// Central-difference gradient of the total loss.
pub fn numeric_gradients(sample: &LossSample, w: &MultiTaskWeights, h: f64) -> Result<Vec<f64>> {
    let base = sample.parameter_vec();
    let mut s = sample.clone();
    let mut out = Vec::with_capacity(base.len());
    for (i, &v) in base.iter().enumerate() {
        s.set_parameter(i, v + h);
        let up = total_loss(&s, w)?.total;
        s.set_parameter(i, v - h);
        let down = total_loss(&s, w)?.total;
        s.set_parameter(i, v);
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// `|a − n| / max(1, |a|, |n|)`: relative for large entries, absolute near 0.
pub fn gradient_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lt(p: f64, t: f64, b: f64) -> LaplacianTerm {
        LaplacianTerm::new(p, t, b)
    }

    fn exact_sample() -> LossSample {
        let e = LaplacianTerm::exact(1.0);
        LossSample {
            probs: vec![1.0; 4],
            focal: FocalParams::default(),
            objects_2d: vec![Object2d {
                offset_x: e,
                offset_y: e,
                width: e,
                height: e,
            }],
            objects_3d: vec![Object3d {
                offset_x: e,
                offset_y: e,
                width: e,
                length: e,
                height: e,
                range: L1Term { prediction: 300.0, target: 300.0 },
                orientation: L1Term { prediction: 0.2, target: 0.2 },
            }],
            miscal: MiscalTerm {
                prediction: EulerMisalignment::ZERO,
                target: EulerMisalignment::ZERO,
                b: [1.0; 3],
            },
        }
    }

    #[test]
    fn default_weights_golden() {
        let w = MultiTaskWeights::default();
        let json = serde_json::to_string(&w).unwrap();
        assert_eq!(
            json,
            r#"{"w_o":1.0,"w_c":2.0,"w_s":0.1,"w_o3d":0.25,"w_s3d":1.0,"w_d":1.5,"w_phi":0.1,"w_theta":0.4}"#
        );
    }

    #[test]
    fn focal_examples() {
        let f = FocalParams { alpha: 0.25, gamma: 2.0 };
        assert_eq!(focal_loss(&[1.0, 1.0], &f, 2.0).unwrap(), 0.0);
        let v = focal_loss(&[0.5], &f, 1.0).unwrap();
        assert!((v - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-15);
        assert!((v - 0.043322).abs() < 1e-6);
        assert!(matches!(focal_loss(&[0.0], &f, 1.0), Err(Error::Domain(_))));
        assert!(matches!(focal_loss(&[1.2], &f, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn focal_reduces_to_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = FocalParams { alpha: 1.0, gamma: 0.0 };
        for _ in 0..100 {
            let probs: Vec<f64> = (0..20).map(|_| rng.random_range(0.01..1.0)).collect();
            let ce = -probs.iter().map(|p| p.ln()).sum::<f64>() / probs.len() as f64;
            assert!((focal_loss(&probs, &f, 1.0).unwrap() - ce).abs() < 1e-12);
        }
    }

    #[test]
    fn focal_gradient_at_one() {
        assert_eq!(focal_point_grad(1.0, &FocalParams { alpha: 0.25, gamma: 2.0 }), 0.0);
        assert_eq!(focal_point_grad(1.0, &FocalParams { alpha: 0.25, gamma: 1.0 }), 0.0);
        assert_eq!(focal_point_grad(1.0, &FocalParams { alpha: 0.25, gamma: 0.0 }), -0.25);
        let p = 0.7;
        assert!((focal_point_grad(p, &FocalParams { alpha: 0.5, gamma: 0.0 }) + 0.5 / p).abs() < 1e-15);
    }

    #[test]
    fn laplace_examples() {
        assert_eq!(laplace_nll_term(&lt(1.0, 1.0, 1.0)).unwrap(), 0.0);
        let v = laplace_nll_term(&lt(0.0, 1.0, 0.5)).unwrap();
        assert!((v - (2.0 + 0.5f64.ln())).abs() < 1e-15);
        assert!((v - 1.306853).abs() < 1e-6);
        assert!(laplace_nll_term(&lt(0.0, 1.0, 0.0)).is_err());
        assert!(laplace_nll_term(&lt(0.0, 1.0, -1.0)).is_err());
    }

    fn scan_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> (f64, f64) {
        (0..=n)
            .map(|i| lo * (hi / lo).powf(i as f64 / n as f64))
            .map(|b| (b, f(b)))
            .fold((f64::NAN, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
    }

    #[test]
    fn diversity_minimizer_is_the_residual() {
        for r in [0.01, 0.3, 1.0, 2.5, 40.0] {
            let (b, v) = scan_argmin(|b| laplace_nll_term(&lt(r, 0.0, b)).unwrap(), 1e-4, 1e3, 200_000);
            assert!((b - r).abs() / r < 1e-3, "r {r} b {b}");
            assert!((v - (1.0 + r.ln())).abs() < 1e-6);
            // stationarity of the analytic b-derivative
            assert!((1.0 / r - r / (r * r)).abs() < 1e-12);
        }
    }

    #[test]
    fn miscal_examples_and_per_axis_minimizer() {
        let z = EulerMisalignment::ZERO;
        assert_eq!(loss_miscal(z, z, [1.0; 3], 0.4).unwrap(), 0.0);
        assert_eq!(loss_miscal(z, z, [1.0; 3], 7.0).unwrap(), 0.0);
        let p = EulerMisalignment::new(0.1, 0.2, 0.3);
        assert!((loss_miscal(p, z, [1.0; 3], 0.4).unwrap() - 0.24).abs() < 1e-15);
        for axis in 0..3 {
            let r = p.to_array()[axis];
            let (b, _) = scan_argmin(
                |b| {
                    let mut bs = [1.0; 3];
                    bs[axis] = b;
                    loss_miscal(p, z, bs, 0.4).unwrap()
                },
                1e-3,
                10.0,
                100_000,
            );
            assert!((b - r).abs() / r < 1e-3);
        }
    }

    #[test]
    fn two_d_examples() {
        let w = MultiTaskWeights::default();
        let s = exact_sample();
        assert_eq!(loss_2d(&s.objects_2d, &w).unwrap(), 0.0);
        let mut o = s.objects_2d[0];
        o.offset_x = lt(2.0, 1.0, 1.0);
        o.offset_y = lt(0.0, 1.0, 1.0);
        assert!((loss_2d(&[o], &w).unwrap() - 2.0).abs() < 1e-15);

        o.width = lt(1.5, 1.0, 0.7);
        let base = loss_2d(&[o], &w).unwrap();
        let size_part = base - loss_2d(&[o], &MultiTaskWeights { w_s: 0.0, ..w }).unwrap();
        let doubled = loss_2d(&[o], &MultiTaskWeights { w_s: 2.0 * w.w_s, ..w }).unwrap();
        assert!((doubled - base - size_part).abs() < 1e-12);
    }

    #[test]
    fn three_d_examples() {
        let w = MultiTaskWeights::default();
        let s = exact_sample();
        assert_eq!(loss_3d(&s.objects_3d, &w).unwrap(), 0.0);
        let mut o = s.objects_3d[0];
        o.offset_x = lt(2.0, 1.0, 1.0);
        o.range = L1Term { prediction: 302.0, target: 300.0 };
        o.orientation = L1Term { prediction: 0.0, target: 0.5 };
        // 0.25·1 + 1.5·2 + 0.1·0.5
        assert!((loss_3d(&[o], &w).unwrap() - 3.3).abs() < 1e-12);

        o.length = lt(4.0, 4.5, 0.4);
        let base = loss_3d(&[o], &w).unwrap();
        let size_part = base - loss_3d(&[o], &MultiTaskWeights { w_s3d: 0.0, ..w }).unwrap();
        let doubled = loss_3d(&[o], &MultiTaskWeights { w_s3d: 2.0, ..w }).unwrap();
        assert!((doubled - base - size_part).abs() < 1e-12);
    }

    #[test]
    fn total_examples() {
        let w = MultiTaskWeights::default();
        let t = total_loss(&exact_sample(), &w).unwrap();
        assert_eq!(t.total, 0.0);
        let s = random_sample(&mut ChaCha8Rng::seed_from_u64(8));
        let t = total_loss(&s, &w).unwrap();
        assert!((t.class + t.two_d + t.three_d + t.miscal - t.total).abs() < 1e-12);
        let no_miscal = total_loss(&s, &MultiTaskWeights { w_theta: 0.0, ..w }).unwrap();
        assert!((t.total - t.miscal - no_miscal.total).abs() < 1e-12);
    }

    fn random_sample<R: Rng>(rng: &mut R) -> LossSample {
        let term = |rng: &mut R| {
            let t = rng.random_range(-5.0..5.0);
            let mag = rng.random_range(0.01..3.0);
            let r = if rng.random_bool(0.5) { mag } else { -mag };
            lt(t + r, t, rng.random_range(0.2..3.0))
        };
        let l1 = |rng: &mut R| {
            let t: f64 = rng.random_range(-3.0..3.0);
            let mag = rng.random_range(0.01..2.0);
            L1Term { prediction: t + if rng.random_bool(0.5) { mag } else { -mag }, target: t }
        };
        let n_pix = rng.random_range(1..30);
        let n2 = rng.random_range(0..4);
        let n3 = rng.random_range(0..4);
        LossSample {
            probs: (0..n_pix).map(|_| rng.random_range(0.05..0.95)).collect(),
            focal: FocalParams {
                alpha: rng.random_range(0.1..1.0),
                gamma: rng.random_range(0.0..3.0),
            },
            objects_2d: (0..n2)
                .map(|_| Object2d {
                    offset_x: term(rng),
                    offset_y: term(rng),
                    width: term(rng),
                    height: term(rng),
                })
                .collect(),
            objects_3d: (0..n3)
                .map(|_| Object3d {
                    offset_x: term(rng),
                    offset_y: term(rng),
                    width: term(rng),
                    length: term(rng),
                    height: term(rng),
                    range: l1(rng),
                    orientation: l1(rng),
                })
                .collect(),
            miscal: {
                let a = term(rng);
                let b = term(rng);
                let c = term(rng);
                MiscalTerm {
                    prediction: EulerMisalignment::new(a.prediction, b.prediction, c.prediction),
                    target: EulerMisalignment::new(a.target, b.target, c.target),
                    b: [a.diversity_b, b.diversity_b, c.diversity_b],
                }
            },
        }
    }

    #[test]
    fn parameter_round_trip() {
        let mut s = random_sample(&mut ChaCha8Rng::seed_from_u64(2));
        let v = s.parameter_vec();
        assert_eq!(v.len(), s.n_parameters());
        s.set_parameter(0, 0.123);
        assert_eq!(s.probs[0], 0.123);
        let last = v.len() - 1;
        s.set_parameter(last, 9.0);
        assert_eq!(s.miscal.b[2], 9.0);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = MultiTaskWeights::default();
        for _ in 0..200 {
            let s = random_sample(&mut rng);
            let a = analytic_gradients(&s, &w).unwrap();
            assert!(a.ambiguous.is_empty());
            let n = numeric_gradients(&s, &w, 1e-6).unwrap();
            for (i, (x, y)) in a.values.iter().zip(&n).enumerate() {
                assert!(gradient_error(*x, *y) <= 1e-5, "param {i}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn zero_residual_is_flagged() {
        let s = exact_sample();
        let g = analytic_gradients(&LossSample { probs: vec![0.5], ..s }, &MultiTaskWeights::default()).unwrap();
        // 4 + 5 Laplacian predictions, 2 L1 predictions, 3 misalignment axes.
        assert_eq!(g.ambiguous.len(), 14);
        for i in &g.ambiguous {
            assert_eq!(g.values[*i], 0.0);
        }
    }

    #[test]
    fn losses_bounded_by_diversity_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let r: f64 = rng.random_range(0.001..10.0);
            let b: f64 = rng.random_range(0.001..10.0);
            assert!(laplace_nll_term(&lt(r, 0.0, b)).unwrap() >= 1.0 + r.ln() - 1e-12);
        }
    }
}
