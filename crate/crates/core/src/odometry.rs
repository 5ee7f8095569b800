//! Incremental scan-to-keyframes odometry.
//!
//! Each scan is filtered, converted to Cartesian points, motion compensated
//! with the previous velocity estimate, summarized as oriented surface points
//! and registered jointly against a sliding window of keyframes.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::features::{compute_surface_points, FeatureConfig, SurfacePointSet};
use crate::filtering::FilterConfig;
use crate::geometry::{Pose2, Velocity2};
use crate::motion::{compensate, predict, DistortionModel};
use crate::radar_io::{to_cartesian, PolarScan};
use crate::registration::{register, RegistrationConfig, RegistrationResult, RegistrationTarget};
use crate::trajectory::{StampedPose, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryConfig {
    pub filter: FilterConfig,
    pub feature: FeatureConfig,
    pub registration: RegistrationConfig,
    /// Sliding window size `s`.
    pub keyframe_count_s: usize,
    pub keyframe_min_dist: f64,
    pub keyframe_min_rot: f64,
    pub motion_compensation: bool,
}

impl OdometryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.keyframe_count_s == 0 {
            return Err(Error::Config("keyframe window must hold at least one keyframe".into()));
        }
        if !(self.keyframe_min_dist >= 0.0) || !(self.keyframe_min_rot >= 0.0) {
            return Err(Error::Config("keyframe thresholds must be non-negative".into()));
        }
        match &self.filter {
            FilterConfig::KStrongest(c) => c.validate()?,
            FilterConfig::CaCfar(c) => {
                if c.window == 0 || !(c.false_alarm_rate > 0.0 && c.false_alarm_rate < 1.0) {
                    return Err(Error::Config("invalid CA-CFAR parameters".into()));
                }
            }
        }
        self.feature.validate()?;
        self.registration.validate()
    }
}

/// A registration target: surface points in the world frame plus the pose they were seen from.
#[derive(Debug, Clone)]
pub struct Keyframe {
    target: RegistrationTarget,
    pub pose: Pose2,
    pub stamp: f64,
}

impl Keyframe {
    fn new(points: SurfacePointSet, pose: Pose2, stamp: f64, cell: f64) -> Self {
        Self {
            target: RegistrationTarget::new(points.transformed(&pose), cell),
            pose,
            stamp,
        }
    }

    pub fn surface_points(&self) -> &SurfacePointSet {
        &self.target.set
    }
}

impl AsRef<RegistrationTarget> for Keyframe {
    fn as_ref(&self) -> &RegistrationTarget {
        &self.target
    }
}

#[derive(Debug, Clone, Default)]
pub struct OdometryState {
    pub pose: Pose2,
    pub velocity: Velocity2,
    /// Oldest first.
    pub keyframes: Vec<Keyframe>,
    pub last_stamp: Option<f64>,
}

impl OdometryState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Wall-clock seconds spent in each stage of one scan.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub filter: f64,
    pub compensate: f64,
    pub features: f64,
    pub register: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.filter + self.compensate + self.features + self.register
    }
}

#[derive(Debug, Clone)]
pub struct ScanReport {
    pub stamp: f64,
    pub pose: Pose2,
    /// `None` for the bootstrap scan.
    pub registration: Option<RegistrationResult>,
    /// Registration failed to converge and increased the cost; the pose is the prediction.
    pub diverged: bool,
    pub keyframe_added: bool,
    pub detections: usize,
    pub surface_points: usize,
    pub timings: StageTimings,
}

fn seconds_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Consumes one scan and advances `state`.
pub fn process_scan(state: &mut OdometryState, scan: &PolarScan, cfg: &OdometryConfig) -> Result<ScanReport> {
    if let Some(last) = state.last_stamp {
        if !(scan.stamp > last) {
            return Err(Error::InvalidInput(format!(
                "scan stamp {} does not follow {last}",
                scan.stamp
            )));
        }
    }
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let detections = cfg.filter.apply(scan)?;
    let cloud = to_cartesian(scan, &detections)?;
    timings.filter = seconds_since(t);

    let t = Instant::now();
    let cloud = if cfg.motion_compensation && state.last_stamp.is_some() {
        compensate(&cloud, &DistortionModel::new(state.velocity, scan.sweep_duration))
    } else {
        cloud
    };
    timings.compensate = seconds_since(t);

    let t = Instant::now();
    let features = compute_surface_points(&cloud, &cfg.feature);
    timings.features = seconds_since(t);

    let cell = cfg.registration.assoc_radius;
    let Some(last_stamp) = state.last_stamp else {
        state.pose = Pose2::identity();
        state.velocity = Velocity2::zero();
        state.keyframes = vec![Keyframe::new(features.clone(), state.pose, scan.stamp, cell)];
        state.last_stamp = Some(scan.stamp);
        return Ok(ScanReport {
            stamp: scan.stamp,
            pose: state.pose,
            registration: None,
            diverged: false,
            keyframe_added: true,
            detections: detections.len(),
            surface_points: features.len(),
            timings,
        });
    };

    let dt = scan.stamp - last_stamp;
    let prediction = predict(&state.pose, &state.velocity, dt);
    let t = Instant::now();
    let result = register(&features, &state.keyframes, &prediction, &cfg.registration);
    timings.register = seconds_since(t);

    let diverged = !result.converged && result.final_cost > result.initial_cost;
    let pose = if diverged { prediction } else { result.pose };
    state.velocity = Velocity2::from_increment(&state.pose.relative(&pose), dt);
    state.pose = pose;
    state.last_stamp = Some(scan.stamp);

    // Gate against the most recent keyframe.
    let last_kf = state.keyframes.last().map(|k| k.pose).unwrap_or(pose);
    let moved = last_kf.relative(&pose);
    let keyframe_added =
        moved.translation_norm() > cfg.keyframe_min_dist || moved.theta.abs() > cfg.keyframe_min_rot;
    if keyframe_added {
        state.keyframes.push(Keyframe::new(features.clone(), pose, scan.stamp, cell));
        if state.keyframes.len() > cfg.keyframe_count_s {
            let excess = state.keyframes.len() - cfg.keyframe_count_s;
            state.keyframes.drain(..excess);
        }
    }

    Ok(ScanReport {
        stamp: scan.stamp,
        pose,
        registration: Some(result),
        diverged,
        keyframe_added,
        detections: detections.len(),
        surface_points: features.len(),
        timings,
    })
}

/// Mean and maximum per-stage latency over a run, seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TimingStats {
    pub scans: usize,
    pub mean: StageTimings,
    pub max: StageTimings,
    pub mean_total: f64,
    pub max_total: f64,
}

impl TimingStats {
    pub fn from_timings(all: &[StageTimings]) -> Self {
        if all.is_empty() {
            return Self::default();
        }
        let n = all.len() as f64;
        let mut mean = StageTimings::default();
        let mut max = StageTimings::default();
        let mut max_total: f64 = 0.0;
        let mut sum_total = 0.0;
        for t in all {
            mean.filter += t.filter / n;
            mean.compensate += t.compensate / n;
            mean.features += t.features / n;
            mean.register += t.register / n;
            max.filter = max.filter.max(t.filter);
            max.compensate = max.compensate.max(t.compensate);
            max.features = max.features.max(t.features);
            max.register = max.register.max(t.register);
            max_total = max_total.max(t.total());
            sum_total += t.total();
        }
        Self {
            scans: all.len(),
            mean,
            max,
            mean_total: sum_total / n,
            max_total,
        }
    }

    pub fn report(&self) -> String {
        let ms = |s: f64| s * 1e3;
        let mut out = format!("scans {}\nstage        mean_ms    max_ms\n", self.scans);
        for (name, mean, max) in [
            ("filter", self.mean.filter, self.max.filter),
            ("compensate", self.mean.compensate, self.max.compensate),
            ("features", self.mean.features, self.max.features),
            ("register", self.mean.register, self.max.register),
            ("total", self.mean_total, self.max_total),
        ] {
            out.push_str(&format!("{name:<12} {:>8.3} {:>9.3}\n", ms(mean), ms(max)));
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct OdometryOutput {
    /// One pose per scan, with the registration covariance where available.
    pub trajectory: Trajectory,
    pub reports: Vec<ScanReport>,
    pub timing: TimingStats,
}

impl OdometryOutput {
    pub fn divergences(&self) -> usize {
        self.reports.iter().filter(|r| r.diverged).count()
    }
}

/// Runs the pipeline over a time-ordered stream of scans.
pub fn run_sequence<I>(scans: I, cfg: &OdometryConfig) -> Result<OdometryOutput>
where
    I: IntoIterator<Item = Result<PolarScan>>,
{
    cfg.validate()?;
    let mut state = OdometryState::new();
    let mut out = OdometryOutput::default();
    for scan in scans {
        let report = process_scan(&mut state, &scan?, cfg)?;
        out.trajectory.poses.push(StampedPose {
            stamp: report.stamp,
            pose: report.pose,
            covariance: report.registration.as_ref().and_then(|r| r.covariance),
        });
        out.reports.push(report);
    }
    let timings: Vec<StageTimings> = out.reports.iter().map(|r| r.timings).collect();
    out.timing = TimingStats::from_timings(&timings);
    Ok(out)
}
