//! Misalignment recovery from point correspondences.
//!
//! Each correspondence `(p̃, p̃′)` contributes three rows to the small-angle
//! system. Writing the unknown rotation vector `θ = (roll, pitch, yaw)` in
//! radians, the rows are
//!
//! ```text
//! ( 0,  z̃, -ỹ) · θ = x̃′ - x̃
//! (-z̃,  0,  x̃) · θ = ỹ′ - ỹ
//! ( ỹ, -x̃,  0) · θ = z̃′ - z̃
//! ```
//!
//! which is the homogeneous system `A [θ 1]ᵀ = 0` with its constant column
//! moved to the right-hand side. The third components are used as given, so
//! targets generated with the small-angle matrix (whose third component is not
//! 1) satisfy the system exactly.
//!
//! The least-squares solve uses a Householder QR of the stacked system. Per-axis
//! uncertainty is the classical linear-model standard error
//! `sqrt(s² [(MᵀM)⁻¹]_jj)` with `s² = RSS / (rows - 3)`.
//!
//! Gauss–Newton refinement removes the second-order bias of the linear model by
//! de-rotating the targets with the current exact-rotation estimate, solving for
//! the small increment, and composing it on the right.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{misalignment_from_rotation, rotation_from_misalignment, EulerMisalignment, NormalizedPoint};
use crate::scene::Correspondence;

/// Reported sigmas never drop below this (degrees), so noiseless fits still
/// carry a finite inverse-variance weight.
pub const SIGMA_FLOOR_DEG: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub max_gn_iterations: usize,
    /// Gauss–Newton stops once an increment's norm drops below this, degrees.
    pub convergence_tol: f64,
    pub min_correspondences: usize,
    /// Normal-matrix condition number above which a warning is logged.
    pub condition_warn_threshold: f64,
    /// Normal-matrix condition number above which the system is rank deficient.
    pub condition_fail_threshold: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            max_gn_iterations: 10,
            convergence_tol: 1e-7,
            min_correspondences: 3,
            condition_warn_threshold: 1e6,
            condition_fail_threshold: 1e8,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.convergence_tol > 0.0) {
            return Err(Error::Config("estimator: convergence_tol must be positive".into()));
        }
        if self.min_correspondences < 3 {
            return Err(Error::Config("estimator: min_correspondences must be at least 3".into()));
        }
        if !(self.condition_warn_threshold > 1.0 && self.condition_fail_threshold > 1.0) {
            return Err(Error::Config("estimator: condition thresholds must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemRow {
    /// Coefficients of `(roll, pitch, yaw)` in radians.
    pub coeffs: [f64; 3],
    pub rhs: f64,
}

/// Stacked small-angle system, three rows per correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub rows: Vec<SystemRow>,
}

impl LinearSystem {
    pub fn n_correspondences(&self) -> usize {
        self.rows.len() / 3
    }
}

fn push_rows(rows: &mut Vec<SystemRow>, s: &NormalizedPoint, t: &NormalizedPoint) {
    rows.push(SystemRow {
        coeffs: [0.0, s.z, -s.y],
        rhs: t.x - s.x,
    });
    rows.push(SystemRow {
        coeffs: [-s.z, 0.0, s.x],
        rhs: t.y - s.y,
    });
    rows.push(SystemRow {
        coeffs: [s.y, -s.x, 0.0],
        rhs: t.z - s.z,
    });
}

pub fn build_linear_system(cs: &[Correspondence]) -> Result<LinearSystem> {
    if cs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rows = Vec::with_capacity(3 * cs.len());
    for c in cs {
        push_rows(&mut rows, &c.source, &c.target);
    }
    Ok(LinearSystem { rows })
}

/// Per-frame misalignment with per-axis uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisalignmentEstimate {
    pub dr: EulerMisalignment,
    /// Standard deviations (roll, pitch, yaw), degrees.
    pub sigma: [f64; 3],
    pub timestamp: f64,
    pub n_used: usize,
    /// Gauss–Newton iterations performed (0 for a single-pass solve).
    pub iterations: usize,
    /// False when refinement hit its iteration cap before converging.
    pub converged: bool,
    /// Condition number of the normal matrix at the final solve.
    pub condition: f64,
}

impl MisalignmentEstimate {
    pub fn max_sigma(&self) -> f64 {
        self.sigma.iter().copied().fold(0.0, f64::max)
    }
}

struct Solution {
    theta_rad: Vector3<f64>,
    sigma_deg: [f64; 3],
    condition: f64,
}

fn solve_rows(rows: &[SystemRow], cfg: &EstimatorConfig) -> Result<Solution> {
    let n = rows.len();
    let need = 3 * cfg.min_correspondences;
    if n < need {
        return Err(Error::TooFewCorrespondences {
            got: n / 3,
            need: cfg.min_correspondences,
        });
    }
    let m = DMatrix::from_fn(n, 3, |i, j| rows[i].coeffs[j]);
    let b = DVector::from_fn(n, |i, _| rows[i].rhs);

    let qr = m.clone().qr();
    let r: Matrix3<f64> = qr.r().fixed_view::<3, 3>(0, 0).into_owned();
    let sv = r.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 { (smax / smin).powi(2) } else { f64::INFINITY };
    if !(condition <= cfg.condition_fail_threshold) {
        return Err(Error::RankDeficient { condition });
    }
    if condition > cfg.condition_warn_threshold {
        log::warn!("ill-conditioned misalignment system (condition {condition:.3e})");
    }

    let mut qtb = b.clone();
    qr.q_tr_mul(&mut qtb);
    let r_inv = r
        .try_inverse()
        .ok_or(Error::RankDeficient { condition })?;
    let theta = r_inv * Vector3::new(qtb[0], qtb[1], qtb[2]);

    let residual = &b - &m * theta;
    let dof = (n - 3).max(1) as f64;
    let s2 = residual.norm_squared() / dof;
    // (MᵀM)⁻¹ = R⁻¹ R⁻ᵀ
    let cov_unit = r_inv * r_inv.transpose();
    let sigma_deg = [0, 1, 2].map(|j| (s2 * cov_unit[(j, j)]).sqrt().to_degrees().max(SIGMA_FLOOR_DEG));

    Ok(Solution {
        theta_rad: theta,
        sigma_deg,
        condition,
    })
}

/// Single-pass least-squares solve of the small-angle system.
pub fn solve_small_angle(sys: &LinearSystem, cfg: &EstimatorConfig) -> Result<MisalignmentEstimate> {
    let sol = solve_rows(&sys.rows, cfg)?;
    Ok(MisalignmentEstimate {
        dr: EulerMisalignment::from_radians(&sol.theta_rad),
        sigma: sol.sigma_deg,
        timestamp: 0.0,
        n_used: sys.n_correspondences(),
        iterations: 0,
        converged: true,
        condition: sol.condition,
    })
}

fn derotated_rows(cs: &[Correspondence], r: &Rotation3<f64>) -> Vec<SystemRow> {
    let r_inv = r.inverse();
    let mut rows = Vec::with_capacity(3 * cs.len());
    for c in cs {
        let q = r_inv * c.target.to_vector();
        if q.z <= 0.0 {
            continue;
        }
        let t = NormalizedPoint::from_vector(&q).renormalized();
        push_rows(&mut rows, &c.source, &t);
    }
    rows
}

/// Iterates the linearization around the current estimate until the
/// increment falls below `cfg.convergence_tol`.
pub fn refine_gauss_newton(
    cs: &[Correspondence],
    init: &MisalignmentEstimate,
    cfg: &EstimatorConfig,
) -> Result<MisalignmentEstimate> {
    if cfg.max_gn_iterations == 0 {
        return Ok(*init);
    }
    if cs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rot = rotation_from_misalignment(init.dr);
    let mut last = None;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_gn_iterations {
        iterations += 1;
        let sol = solve_rows(&derotated_rows(cs, &rot), cfg)?;
        rot *= Rotation3::new(sol.theta_rad);
        let step = sol.theta_rad.norm().to_degrees();
        last = Some(sol);
        if step < cfg.convergence_tol {
            converged = true;
            break;
        }
    }
    let mut sol = last.expect("at least one iteration");
    if !converged {
        log::debug!("Gauss-Newton did not converge in {iterations} iterations");
        sol = solve_rows(&derotated_rows(cs, &rot), cfg)?;
    }
    Ok(MisalignmentEstimate {
        dr: misalignment_from_rotation(&rot),
        sigma: sol.sigma_deg,
        timestamp: init.timestamp,
        n_used: cs.len(),
        iterations,
        converged,
        condition: sol.condition,
    })
}

/// Solve and refine one frame.
pub fn estimate_frame(
    cs: &[Correspondence],
    cfg: &EstimatorConfig,
    timestamp: f64,
) -> Result<MisalignmentEstimate> {
    let sys = build_linear_system(cs)?;
    let mut init = solve_small_angle(&sys, cfg)?;
    init.timestamp = timestamp;
    refine_gauss_newton(cs, &init, cfg)
}
