//! Oriented surface points from a motion-compensated point cloud.
//!
//! The cloud is bucketed into a grid of `r/f` cells anchored at the sensor
//! origin. For every occupied cell, all points within `r` of the cell center
//! give a weighted mean and covariance; the eigenvector of the smaller
//! eigenvalue is the surface normal.

use std::collections::HashMap;

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Point2, Pose2};
use crate::radar_io::{PointCloud, RadarPoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    /// Neighborhood radius `r`, meters.
    pub resolution_r: f64,
    /// Grid cells are `r / f` wide.
    pub resample_f: f64,
    pub intensity_weighted: bool,
    pub min_support: usize,
    pub max_condition: f64,
    /// Points closer than this to the sensor are ignored.
    pub min_sensor_dist: f64,
    /// Intensity offset for the weights `z - z_min`.
    pub z_min: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            resolution_r: 3.0,
            resample_f: 1.0,
            intensity_weighted: true,
            min_support: 6,
            max_condition: 1e5,
            min_sensor_dist: 2.5,
            z_min: 60.0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution_r > 0.0) || !(self.resample_f > 0.0) {
            return Err(Error::Config(
                "features: resolution and resample factor must be positive".into(),
            ));
        }
        if self.min_support < 2 {
            return Err(Error::Config("features: min_support must be >= 2".into()));
        }
        if !(self.max_condition >= 1.0) {
            return Err(Error::Config("features: max_condition must be >= 1".into()));
        }
        Ok(())
    }

    pub fn cell_size(&self) -> f64 {
        self.resolution_r / self.resample_f
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub mean: Point2,
    /// Unit normal, oriented toward the capturing sensor.
    pub normal: Vector2<f64>,
    pub covariance: Matrix2<f64>,
    pub planarity: f64,
    /// Number of cloud points the statistics were computed from.
    pub support: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl SurfacePoint {
    /// Same surface seen through `pose`: mean mapped, normal rotated, covariance conjugated.
    pub fn transformed(&self, pose: &Pose2) -> SurfacePoint {
        let r = pose.rotation();
        SurfacePoint {
            mean: pose.transform_point(&self.mean),
            normal: r * self.normal,
            covariance: r * self.covariance * r.transpose(),
            ..*self
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfacePointSet {
    pub points: Vec<SurfacePoint>,
    pub stamp: f64,
    /// Pose of the capturing sensor in the frame the points are expressed in.
    pub origin: Pose2,
}

impl SurfacePointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn means(&self) -> Vec<Point2> {
        self.points.iter().map(|p| p.mean).collect()
    }

    /// Re-expresses the set in the parent frame of `pose`.
    pub fn transformed(&self, pose: &Pose2) -> SurfacePointSet {
        SurfacePointSet {
            points: self.points.iter().map(|p| p.transformed(pose)).collect(),
            stamp: self.stamp,
            origin: pose.compose(&self.origin),
        }
    }
}

/// `ln(1 + |λmax / λmin|)`.
pub fn planarity(lambda_min: f64, lambda_max: f64) -> f64 {
    (lambda_max / lambda_min).abs().ln_1p()
}

/// Eigen-decomposition of a symmetric 2x2 matrix: `(λmin, λmax, unit eigenvector of λmin)`.
pub fn symmetric_eigen2(m: &Matrix2<f64>) -> (f64, f64, Vector2<f64>) {
    let a = m[(0, 0)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let c = m[(1, 1)];
    let half_trace = 0.5 * (a + c);
    let radius = (0.5 * (a - c)).hypot(b);
    let lmin = half_trace - radius;
    let lmax = half_trace + radius;
    // (A - λI) v = 0 from either row; keep the better conditioned one.
    let v1 = Vector2::new(b, lmin - a);
    let v2 = Vector2::new(lmin - c, b);
    let v = if v1.norm_squared() >= v2.norm_squared() { v1 } else { v2 };
    let n = v.norm();
    let v = if n > 0.0 { v / n } else { Vector2::new(1.0, 0.0) };
    (lmin, lmax, v)
}

/// Uniform bucket grid over 2-D points for fixed-radius queries.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cell: f64,
    points: Vec<Point2>,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl GridIndex {
    pub fn new(points: Vec<Point2>, cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell size must be positive");
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key_of(p, cell)).or_default().push(i);
        }
        Self {
            cell,
            points,
            buckets,
        }
    }

    fn key_of(p: &Point2, cell: f64) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    /// Calls `visit(index, squared_distance)` for every point within `radius`,
    /// in no particular order.
    pub fn for_each_within(&self, query: &Point2, radius: f64, mut visit: impl FnMut(usize, f64)) {
        if self.points.is_empty() {
            return;
        }
        let r2 = radius * radius;
        let lo = Self::key_of(&Point2::new(query.x - radius, query.y - radius), self.cell);
        let hi = Self::key_of(&Point2::new(query.x + radius, query.y + radius), self.cell);
        for i in lo.0..=hi.0 {
            for j in lo.1..=hi.1 {
                if let Some(bucket) = self.buckets.get(&(i, j)) {
                    for &idx in bucket {
                        let d2 = (self.points[idx] - query).norm_squared();
                        if d2 <= r2 {
                            visit(idx, d2);
                        }
                    }
                }
            }
        }
    }

    /// Indices within `radius` of `query`, ascending.
    pub fn radius_neighbors(&self, query: &Point2, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(query, radius, |i, _| out.push(i));
        out.sort_unstable();
        out
    }
}

/// Points within `radius` of `query`, ascending indices.
pub fn radius_neighbors(points: &[Point2], query: &Point2, radius: f64) -> Vec<usize> {
    GridIndex::new(points.to_vec(), radius).radius_neighbors(query, radius)
}

/// Weighted moments of a neighborhood. Weights are normalized to sum to one.
pub(crate) fn weighted_moments(points: &[Point2], weights: &[f64]) -> (Point2, Matrix2<f64>) {
    let total: f64 = weights.iter().sum();
    let mut mean = Vector2::zeros();
    for (p, w) in points.iter().zip(weights) {
        mean += p.coords * (w / total);
    }
    let mut cov = Matrix2::zeros();
    for (p, w) in points.iter().zip(weights) {
        let d = p.coords - mean;
        cov += d * d.transpose() * (w / total);
    }
    (Point2::from(mean), cov)
}

/// Why a candidate neighborhood produced no surface point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    TooFewPoints,
    SingleAzimuth,
    IllConditioned,
}

/// Builds a surface point from one neighborhood, or says why it cannot.
pub fn surface_point_from(
    neighborhood: &[RadarPoint],
    cfg: &FeatureConfig,
    sensor: &Point2,
) -> std::result::Result<SurfacePoint, Rejection> {
    if neighborhood.len() < cfg.min_support {
        return Err(Rejection::TooFewPoints);
    }
    let first_az = neighborhood[0].azimuth_index;
    if neighborhood.iter().all(|p| p.azimuth_index == first_az) {
        return Err(Rejection::SingleAzimuth);
    }
    let positions: Vec<Point2> = neighborhood.iter().map(|p| p.pos).collect();
    let mut weights: Vec<f64> = if cfg.intensity_weighted {
        neighborhood
            .iter()
            .map(|p| (p.intensity - cfg.z_min).max(0.0))
            .collect()
    } else {
        vec![1.0; neighborhood.len()]
    };
    if weights.iter().sum::<f64>() <= 0.0 {
        weights.iter_mut().for_each(|w| *w = 1.0);
    }
    let (mean, covariance) = weighted_moments(&positions, &weights);
    let (lambda_min, lambda_max, mut normal) = symmetric_eigen2(&covariance);
    if !(lambda_min > 0.0) || lambda_max / lambda_min > cfg.max_condition {
        return Err(Rejection::IllConditioned);
    }
    if normal.dot(&(mean - sensor)) > 0.0 {
        normal = -normal;
    }
    Ok(SurfacePoint {
        mean,
        normal,
        covariance,
        planarity: planarity(lambda_min, lambda_max),
        support: neighborhood.len(),
        lambda_min,
        lambda_max,
    })
}

/// Oriented surface points of a sensor-frame cloud, ordered by grid cell.
pub fn compute_surface_points(cloud: &PointCloud, cfg: &FeatureConfig) -> SurfacePointSet {
    let kept: Vec<RadarPoint> = cloud
        .points
        .iter()
        .filter(|p| p.pos.coords.norm() >= cfg.min_sensor_dist)
        .copied()
        .collect();
    let cell = cfg.cell_size();
    let mut cells: Vec<(i64, i64)> = kept
        .iter()
        .map(|p| ((p.pos.x / cell).floor() as i64, (p.pos.y / cell).floor() as i64))
        .collect();
    cells.sort_unstable();
    cells.dedup();

    let index = GridIndex::new(kept.iter().map(|p| p.pos).collect(), cfg.resolution_r);
    let sensor = Point2::origin();
    let points: Vec<SurfacePoint> = cells
        .par_iter()
        .filter_map(|&(i, j)| {
            let center = Point2::new((i as f64 + 0.5) * cell, (j as f64 + 0.5) * cell);
            let neighborhood: Vec<RadarPoint> = index
                .radius_neighbors(&center, cfg.resolution_r)
                .into_iter()
                .map(|k| kept[k])
                .collect();
            surface_point_from(&neighborhood, cfg, &sensor).ok()
        })
        .collect();
    SurfacePointSet {
        points,
        stamp: cloud.stamp,
        origin: Pose2::identity(),
    }
}
