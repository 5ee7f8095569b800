//! Trajectory accuracy metrics: KITTI-style segment drift, consecutive
//! relative pose error with its signed bias, and aligned absolute error.

use std::fmt::Write as _;

use nalgebra::Vector2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Pose2};
use crate::trajectory::Trajectory;

pub const KITTI_SEGMENT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];
/// Shorter segments for desk-scale synthetic runs.
pub const SHORT_SEGMENT_LENGTHS: [f64; 4] = [25.0, 50.0, 100.0, 200.0];

#[derive(Debug, Clone, PartialEq)]
pub struct LengthDrift {
    pub length: f64,
    /// Percent; `NaN` when no segment of this length fits.
    pub translation_error: f64,
    /// Degrees per meter; `NaN` when no segment of this length fits.
    pub rotation_error: f64,
    pub segments: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    /// Mean over all segments of all lengths, percent.
    pub translation_error: f64,
    /// Mean over all segments of all lengths, degrees per meter.
    pub rotation_error: f64,
    pub per_length: Vec<LengthDrift>,
    pub segment_count: usize,
}

impl DriftReport {
    /// True when the trajectory was too short for every segment length.
    pub fn is_empty(&self) -> bool {
        self.segment_count == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpeReport {
    /// Mean translational norm of the consecutive relative-pose errors, meters.
    pub rpe_mean: f64,
    /// Mean signed error `(longitudinal, lateral)` in the ground-truth body frame, meters.
    pub rpe_bias: Vector2<f64>,
    /// Mean signed heading error per step, radians.
    pub rotation_bias: f64,
}

fn check_lengths(est: &Trajectory, gt: &Trajectory, min: usize) -> Result<()> {
    if est.len() != gt.len() {
        return Err(Error::InvalidInput(format!(
            "trajectory lengths differ: estimate has {} poses, ground truth has {}",
            est.len(),
            gt.len()
        )));
    }
    if est.len() < min {
        return Err(Error::InvalidInput(format!(
            "need at least {min} poses, found {}",
            est.len()
        )));
    }
    Ok(())
}

/// Error of the estimated motion between `i` and `j` relative to the true motion.
fn relative_error(est: &[Pose2], gt: &[Pose2], i: usize, j: usize) -> Pose2 {
    let de = est[i].relative(&est[j]);
    let dg = gt[i].relative(&gt[j]);
    // dg⁻¹ ∘ de, written so that identical inputs give exactly zero.
    let (s, c) = dg.theta.sin_cos();
    let (dx, dy) = (de.x - dg.x, de.y - dg.y);
    Pose2::new(c * dx + s * dy, -s * dx + c * dy, de.theta - dg.theta)
}

/// Segment drift over every start index (stepping by `stride`) and every
/// segment length. A segment ends at the first pose whose ground-truth path
/// length from the start exceeds the segment length.
pub fn kitti_drift(est: &Trajectory, gt: &Trajectory, segment_lengths: &[f64], stride: usize) -> Result<DriftReport> {
    check_lengths(est, gt, 0)?;
    if stride == 0 {
        return Err(Error::InvalidInput("segment stride must be positive".into()));
    }
    if segment_lengths.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidInput("segment lengths must be positive".into()));
    }
    let dist = gt.path_lengths();
    let est = est.pose_list();
    let gt = gt.pose_list();
    let starts: Vec<usize> = (0..gt.len()).step_by(stride).collect();
    // (length index, translation fraction, rotation rad/m), ordered by start then length.
    let errors: Vec<Vec<(usize, f64, f64)>> = starts
        .par_iter()
        .map(|&first| {
            segment_lengths
                .iter()
                .enumerate()
                .filter_map(|(li, &len)| {
                    let last = (first..gt.len()).find(|&k| dist[k] > dist[first] + len)?;
                    let e = relative_error(&est, &gt, first, last);
                    Some((li, e.translation_norm() / len, e.theta.abs() / len))
                })
                .collect()
        })
        .collect();

    let mut sums = vec![(0.0, 0.0, 0usize); segment_lengths.len()];
    let (mut t_all, mut r_all, mut n_all) = (0.0, 0.0, 0usize);
    for (li, t, r) in errors.into_iter().flatten() {
        sums[li].0 += t;
        sums[li].1 += r;
        sums[li].2 += 1;
        t_all += t;
        r_all += r;
        n_all += 1;
    }
    let mean = |sum: f64, n: usize| if n == 0 { f64::NAN } else { sum / n as f64 };
    Ok(DriftReport {
        translation_error: if n_all == 0 { 0.0 } else { 100.0 * t_all / n_all as f64 },
        rotation_error: if n_all == 0 { 0.0 } else { (r_all / n_all as f64).to_degrees() },
        per_length: segment_lengths
            .iter()
            .zip(&sums)
            .map(|(&length, &(t, r, n))| LengthDrift {
                length,
                translation_error: 100.0 * mean(t, n),
                rotation_error: mean(r, n).to_degrees(),
                segments: n,
            })
            .collect(),
        segment_count: n_all,
    })
}

/// Consecutive-pair relative pose error.
pub fn rpe(est: &Trajectory, gt: &Trajectory) -> Result<RpeReport> {
    check_lengths(est, gt, 2)?;
    let est = est.pose_list();
    let gt = gt.pose_list();
    let n = (gt.len() - 1) as f64;
    let mut norm_sum = 0.0;
    let mut bias = Vector2::zeros();
    let mut rot = 0.0;
    for i in 0..gt.len() - 1 {
        let de = est[i].relative(&est[i + 1]);
        let dg = gt[i].relative(&gt[i + 1]);
        let d = Vector2::new(de.x - dg.x, de.y - dg.y);
        norm_sum += d.norm();
        bias += d;
        rot += normalize_angle(de.theta - dg.theta);
    }
    Ok(RpeReport {
        rpe_mean: norm_sum / n,
        rpe_bias: bias / n,
        rotation_bias: rot / n,
    })
}

/// Least-squares rigid transform mapping `src` positions onto `dst` positions.
/// Rotation defaults to identity when the geometry is degenerate.
pub fn align_rigid(src: &[Pose2], dst: &[Pose2]) -> Pose2 {
    let n = src.len().max(1) as f64;
    let centroid = |p: &[Pose2]| {
        p.iter().fold(Vector2::zeros(), |acc, q| acc + Vector2::new(q.x, q.y)) / n
    };
    let (cs, cd) = (centroid(src), centroid(dst));
    let (mut sin_sum, mut cos_sum) = (0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let a = Vector2::new(s.x, s.y) - cs;
        let b = Vector2::new(d.x, d.y) - cd;
        cos_sum += a.dot(&b);
        sin_sum += a.x * b.y - a.y * b.x;
    }
    let theta = if sin_sum == 0.0 && cos_sum == 0.0 { 0.0 } else { sin_sum.atan2(cos_sum) };
    let rot = Pose2::new(0.0, 0.0, theta);
    let t = cd - rot.rotate_vector(&cs);
    Pose2::new(t.x, t.y, theta)
}

fn position_rmse(est: &[Pose2], gt: &[Pose2], align: &Pose2) -> f64 {
    let sum: f64 = est
        .iter()
        .zip(gt)
        .map(|(e, g)| {
            let p = align.transform_point(&crate::geometry::Point2::new(e.x, e.y));
            (p.x - g.x).powi(2) + (p.y - g.y).powi(2)
        })
        .sum();
    (sum / est.len() as f64).sqrt()
}

/// Position RMSE after the best rigid alignment of `est` onto `gt`.
pub fn ate(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    check_lengths(est, gt, 2)?;
    let (e, g) = (est.pose_list(), gt.pose_list());
    Ok(position_rmse(&e, &g, &align_rigid(&e, &g)))
}

/// Position RMSE without alignment.
pub fn unaligned_rmse(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    check_lengths(est, gt, 1)?;
    Ok(position_rmse(&est.pose_list(), &gt.pose_list(), &Pose2::identity()))
}

/// All metrics for one estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub drift: DriftReport,
    pub rpe: RpeReport,
    pub ate: f64,
}

pub fn evaluate(est: &Trajectory, gt: &Trajectory, segment_lengths: &[f64], stride: usize) -> Result<Evaluation> {
    Ok(Evaluation {
        drift: kitti_drift(est, gt, segment_lengths, stride)?,
        rpe: rpe(est, gt)?,
        ate: ate(est, gt)?,
    })
}

pub fn format_report(ev: &Evaluation) -> String {
    let mut out = String::new();
    let d = &ev.drift;
    if d.is_empty() {
        let _ = writeln!(out, "drift: trajectory shorter than every segment length");
    } else {
        let _ = writeln!(
            out,
            "drift: {:.4} % translation, {:.6} deg/m rotation over {} segments",
            d.translation_error, d.rotation_error, d.segment_count
        );
    }
    for l in &d.per_length {
        if l.segments == 0 {
            let _ = writeln!(out, "  {:>7.1} m: no segments", l.length);
        } else {
            let _ = writeln!(
                out,
                "  {:>7.1} m: {:.4} %  {:.6} deg/m  ({} segments)",
                l.length, l.translation_error, l.rotation_error, l.segments
            );
        }
    }
    let r = &ev.rpe;
    let _ = writeln!(out, "rpe: mean {:.6} m", r.rpe_mean);
    let _ = writeln!(
        out,
        "rpe bias: longitudinal {:+.6} m, lateral {:+.6} m, rotation {:+.8} rad",
        r.rpe_bias.x, r.rpe_bias.y, r.rotation_bias
    );
    let _ = writeln!(out, "ate: {:.6} m", ev.ate);
    out
}

/// `metric,name,value` rows.
pub fn format_csv(ev: &Evaluation) -> String {
    let mut out = String::from("metric,name,value\n");
    let d = &ev.drift;
    let _ = writeln!(out, "drift,translation_percent,{}", d.translation_error);
    let _ = writeln!(out, "drift,rotation_deg_per_m,{}", d.rotation_error);
    let _ = writeln!(out, "drift,segments,{}", d.segment_count);
    for l in &d.per_length {
        let _ = writeln!(out, "drift_{},translation_percent,{}", l.length, l.translation_error);
        let _ = writeln!(out, "drift_{},rotation_deg_per_m,{}", l.length, l.rotation_error);
        let _ = writeln!(out, "drift_{},segments,{}", l.length, l.segments);
    }
    let r = &ev.rpe;
    let _ = writeln!(out, "rpe,mean_m,{}", r.rpe_mean);
    let _ = writeln!(out, "rpe,bias_longitudinal_m,{}", r.rpe_bias.x);
    let _ = writeln!(out, "rpe,bias_lateral_m,{}", r.rpe_bias.y);
    let _ = writeln!(out, "rpe,bias_rotation_rad,{}", r.rotation_bias);
    let _ = writeln!(out, "ate,rmse_m,{}", ev.ate);
    out
}
