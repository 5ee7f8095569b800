//! Alignment of a surface point set against one or more keyframe sets.
//!
//! For a correspondence between source point `i` and target point `j`, the
//! alignment error under pose `x = [x, y, θ]` is `e = μ_j − (R_θ μ_i + t)` and
//! the metric is the quadratic form `g = eᵀ A e`, where `A` is the identity
//! (point-to-point), `n_j n_jᵀ` (point-to-line) or `(Σ_j + λI)⁻¹`
//! (point-to-distribution). The objective sums `w_ij · ρ(√g)` over every
//! correspondence of every keyframe.

mod loss;
mod solver;

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

pub use loss::{irls_weight, robust_loss, LossKind};
pub use solver::{register, RegistrationResult, Termination};

use crate::error::{Error, Result};
use crate::features::{GridIndex, SurfacePoint, SurfacePointSet};
use crate::geometry::Pose2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CostKind {
    P2P,
    P2L,
    P2D,
}

impl CostKind {
    pub const ALL: [CostKind; 3] = [CostKind::P2P, CostKind::P2L, CostKind::P2D];

    pub fn name(&self) -> &'static str {
        match self {
            CostKind::P2P => "p2p",
            CostKind::P2L => "p2l",
            CostKind::P2D => "p2d",
        }
    }
}

impl fmt::Display for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CostKind::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown cost '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightScheme {
    Uniform,
    Plan,
    Det,
    Dir,
    Combined,
}

impl WeightScheme {
    pub const ALL: [WeightScheme; 5] = [
        WeightScheme::Uniform,
        WeightScheme::Plan,
        WeightScheme::Det,
        WeightScheme::Dir,
        WeightScheme::Combined,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            WeightScheme::Uniform => "uniform",
            WeightScheme::Plan => "plan",
            WeightScheme::Det => "det",
            WeightScheme::Dir => "dir",
            WeightScheme::Combined => "combined",
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeightScheme::ALL
            .into_iter()
            .find(|w| w.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown weight scheme '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationConfig {
    pub cost: CostKind,
    pub loss: LossKind,
    pub loss_delta: f64,
    /// Association radius, meters.
    pub assoc_radius: f64,
    /// Largest allowed angle between matched normals, radians.
    pub normal_tolerance: f64,
    pub weight_scheme: WeightScheme,
    /// Added to target covariances for point-to-distribution, m².
    pub covariance_dampening: f64,
    /// Outer (re-association) iterations.
    pub max_iterations: usize,
    pub rel_decrease_eps: f64,
    /// Damped Gauss-Newton steps per outer iteration.
    pub max_inner_iterations: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            cost: CostKind::P2P,
            loss: LossKind::Huber,
            loss_delta: 0.1,
            assoc_radius: 3.0,
            normal_tolerance: 30f64.to_radians(),
            weight_scheme: WeightScheme::Combined,
            covariance_dampening: 0.1,
            max_iterations: 8,
            rel_decrease_eps: 1e-7,
            max_inner_iterations: 30,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.loss_delta > 0.0) {
            return Err(Error::Config("registration: loss delta must be positive".into()));
        }
        if !(self.assoc_radius > 0.0) {
            return Err(Error::Config(
                "registration: association radius must be positive".into(),
            ));
        }
        if !(self.normal_tolerance > 0.0) {
            return Err(Error::Config(
                "registration: normal tolerance must be positive".into(),
            ));
        }
        if !(self.covariance_dampening >= 0.0) {
            return Err(Error::Config("registration: dampening must be >= 0".into()));
        }
        if self.cost == CostKind::P2D && self.covariance_dampening == 0.0 {
            return Err(Error::Config(
                "registration: point-to-distribution needs a positive dampening".into(),
            ));
        }
        if self.max_iterations == 0 || self.max_inner_iterations == 0 {
            return Err(Error::Config("registration: iteration limits must be >= 1".into()));
        }
        Ok(())
    }
}

/// A keyframe surface point set with a spatial index over its means.
#[derive(Debug, Clone)]
pub struct RegistrationTarget {
    pub set: SurfacePointSet,
    index: GridIndex,
}

impl RegistrationTarget {
    /// `cell` should be on the order of the association radius.
    pub fn new(set: SurfacePointSet, cell: f64) -> Self {
        let index = GridIndex::new(set.means(), cell);
        Self { set, index }
    }
}

impl AsRef<RegistrationTarget> for RegistrationTarget {
    fn as_ref(&self) -> &RegistrationTarget {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub keyframe_id: usize,
    /// Index into the keyframe set.
    pub target_index: usize,
    /// Index into the source set.
    pub source_index: usize,
    pub weight: f64,
}

/// `2·min(a, b)/(a + b)`, one when both are zero.
pub fn similarity(a: f64, b: f64) -> f64 {
    let sum = a + b;
    if sum <= 0.0 {
        1.0
    } else {
        2.0 * a.min(b) / sum
    }
}

/// Residual weight of a matched pair. Both points must be in a common frame.
pub fn residual_weight(a: &SurfacePoint, b: &SurfacePoint, scheme: WeightScheme) -> f64 {
    let plan = || similarity(a.planarity, b.planarity);
    let det = || similarity(a.support as f64, b.support as f64);
    let dir = || a.normal.dot(&b.normal).max(0.0);
    match scheme {
        WeightScheme::Uniform => 1.0,
        WeightScheme::Plan => plan(),
        WeightScheme::Det => det(),
        WeightScheme::Dir => dir(),
        WeightScheme::Combined => plan() + det() + dir(),
    }
}

/// For each source point and each keyframe, the nearest target mean within the
/// association radius whose normal agrees to within the tolerance.
///
/// Output is ordered by source index, then keyframe.
pub fn find_correspondences<T: AsRef<RegistrationTarget> + Sync>(
    source: &SurfacePointSet,
    targets: &[T],
    pose: &Pose2,
    cfg: &RegistrationConfig,
) -> Vec<Correspondence> {
    let min_cos = cfg.normal_tolerance.cos();
    let per_source: Vec<Vec<Correspondence>> = source
        .points
        .par_iter()
        .enumerate()
        .map(|(i, sp)| {
            let moved = sp.transformed(pose);
            let mut found = Vec::new();
            for (k, target) in targets.iter().map(AsRef::as_ref).enumerate() {
                let mut best: Option<(f64, usize)> = None;
                target
                    .index
                    .for_each_within(&moved.mean, cfg.assoc_radius, |j, d2| {
                        if target.set.points[j].normal.dot(&moved.normal) <= min_cos {
                            return;
                        }
                        let better = match best {
                            None => true,
                            Some((bd, bj)) => d2 < bd || (d2 == bd && j < bj),
                        };
                        if better {
                            best = Some((d2, j));
                        }
                    });
                if let Some((_, j)) = best {
                    found.push(Correspondence {
                        keyframe_id: k,
                        target_index: j,
                        source_index: i,
                        weight: residual_weight(&moved, &target.set.points[j], cfg.weight_scheme),
                    });
                }
            }
            found
        })
        .collect();
    per_source.into_iter().flatten().collect()
}

/// The quadratic form `A` of the metric for a given target point.
pub fn metric_matrix(target: &SurfacePoint, cost: CostKind, dampening: f64) -> Matrix2<f64> {
    match cost {
        CostKind::P2P => Matrix2::identity(),
        CostKind::P2L => target.normal * target.normal.transpose(),
        CostKind::P2D => {
            let damped = target.covariance + Matrix2::identity() * dampening;
            damped
                .try_inverse()
                .expect("dampened covariance is positive definite")
        }
    }
}

/// Alignment error `e = μ_target − (R μ_source + t)`.
pub fn alignment_error(source: &SurfacePoint, target: &SurfacePoint, pose: &Pose2) -> Vector2<f64> {
    target.mean.coords - pose.transform_point(&source.mean).coords
}

/// Metric value `g` of one matched pair under `pose`.
pub fn cost_residual(
    source: &SurfacePoint,
    target: &SurfacePoint,
    pose: &Pose2,
    cost: CostKind,
    dampening: f64,
) -> f64 {
    let e = alignment_error(source, target, pose);
    (e.transpose() * metric_matrix(target, cost, dampening) * e)[(0, 0)]
}

/// One fixed correspondence reduced to what the objective needs.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Term {
    source: Vector2<f64>,
    target: Vector2<f64>,
    info: Matrix2<f64>,
    weight: f64,
}

pub(crate) fn build_terms<T: AsRef<RegistrationTarget>>(
    source: &SurfacePointSet,
    targets: &[T],
    correspondences: &[Correspondence],
    cfg: &RegistrationConfig,
) -> Vec<Term> {
    correspondences
        .iter()
        .map(|c| {
            let t = &targets[c.keyframe_id].as_ref().set.points[c.target_index];
            Term {
                source: source.points[c.source_index].mean.coords,
                target: t.mean.coords,
                info: metric_matrix(t, cfg.cost, cfg.covariance_dampening),
                weight: c.weight,
            }
        })
        .collect()
}

/// Objective value, gradient and Gauss-Newton normal matrix at `pose`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Linearization {
    pub cost: f64,
    pub gradient: Vector3<f64>,
    pub hessian: Matrix3<f64>,
}

pub(crate) fn evaluate_terms(terms: &[Term], pose: &Pose2, loss: LossKind, delta: f64) -> f64 {
    let r = pose.rotation();
    let t = pose.translation();
    terms
        .iter()
        .map(|term| {
            let e = term.target - (r * term.source + t);
            let g = (e.transpose() * term.info * e)[(0, 0)].max(0.0);
            term.weight * robust_loss(g.sqrt(), loss, delta)
        })
        .sum()
}

pub(crate) fn linearize_terms(terms: &[Term], pose: &Pose2, loss: LossKind, delta: f64) -> Linearization {
    let r = pose.rotation();
    let t = pose.translation();
    let (s, c) = pose.theta.sin_cos();
    let mut cost = 0.0;
    let mut gradient = Vector3::zeros();
    let mut hessian = Matrix3::zeros();
    for term in terms {
        let p = term.source;
        let e = term.target - (r * p + t);
        let ae = term.info * e;
        let g = e.dot(&ae).max(0.0);
        let h = g.sqrt();
        cost += term.weight * robust_loss(h, loss, delta);
        let kappa = term.weight * irls_weight(h, loss, delta);
        if kappa == 0.0 {
            continue;
        }
        // ∂e/∂[x, y, θ]
        let de_dtheta = Vector2::new(s * p.x + c * p.y, -c * p.x + s * p.y);
        let jac = nalgebra::Matrix2x3::new(-1.0, 0.0, de_dtheta.x, 0.0, -1.0, de_dtheta.y);
        gradient += jac.transpose() * ae * kappa;
        hessian += jac.transpose() * term.info * jac * kappa;
    }
    Linearization {
        cost,
        gradient,
        hessian,
    }
}

/// Weighted robust objective over fixed correspondences.
pub fn objective<T: AsRef<RegistrationTarget>>(
    source: &SurfacePointSet,
    targets: &[T],
    correspondences: &[Correspondence],
    pose: &Pose2,
    cfg: &RegistrationConfig,
) -> f64 {
    let terms = build_terms(source, targets, correspondences, cfg);
    evaluate_terms(&terms, pose, cfg.loss, cfg.loss_delta)
}

/// Analytic gradient of [`objective`] with respect to `[x, y, θ]`.
pub fn objective_gradient<T: AsRef<RegistrationTarget>>(
    source: &SurfacePointSet,
    targets: &[T],
    correspondences: &[Correspondence],
    pose: &Pose2,
    cfg: &RegistrationConfig,
) -> (f64, Vector3<f64>) {
    let terms = build_terms(source, targets, correspondences, cfg);
    let lin = linearize_terms(&terms, pose, cfg.loss, cfg.loss_delta);
    (lin.cost, lin.gradient)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;

    pub(crate) fn sp(x: f64, y: f64, nx: f64, ny: f64) -> SurfacePoint {
        let n = Vector2::new(nx, ny).normalize();
        let tangent = Vector2::new(-n.y, n.x);
        let covariance = tangent * tangent.transpose() * 0.5 + n * n.transpose() * 0.01;
        SurfacePoint {
            mean: Point2::new(x, y),
            normal: n,
            covariance,
            planarity: crate::features::planarity(0.01, 0.5),
            support: 10,
            lambda_min: 0.01,
            lambda_max: 0.5,
        }
    }

    fn set(points: Vec<SurfacePoint>) -> SurfacePointSet {
        SurfacePointSet {
            points,
            stamp: 0.0,
            origin: Pose2::identity(),
        }
    }

    fn grid_set() -> SurfacePointSet {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                let a = (i * 10 + j) as f64;
                pts.push(sp(i as f64 * 7.0 - 30.0, j as f64 * 7.0 - 30.0, a.cos(), a.sin()));
            }
        }
        set(pts)
    }

    #[test]
    fn weights() {
        let a = sp(0.0, 0.0, 1.0, 0.0);
        assert_eq!(residual_weight(&a, &a, WeightScheme::Combined), 3.0);
        assert_eq!(residual_weight(&a, &a, WeightScheme::Uniform), 1.0);
        let b = sp(0.0, 0.0, 0.0, 1.0);
        assert_eq!(residual_weight(&a, &b, WeightScheme::Dir), 0.0);
        let mut c = a;
        c.support = 6;
        let mut d = a;
        d.support = 18;
        assert_eq!(residual_weight(&c, &d, WeightScheme::Det), 0.5);
    }

    #[test]
    fn identical_sets_match_themselves() {
        let s = grid_set();
        let targets = vec![RegistrationTarget::new(s.clone(), 3.0)];
        let corr = find_correspondences(&s, &targets, &Pose2::identity(), &RegistrationConfig::default());
        assert_eq!(corr.len(), s.len());
        for c in &corr {
            assert_eq!(c.source_index, c.target_index);
            assert_eq!(c.weight, 3.0);
        }
    }

    #[test]
    fn far_sets_do_not_match() {
        let s = grid_set();
        let far = s.transformed(&Pose2::new(500.0, 0.0, 0.0));
        let targets = vec![RegistrationTarget::new(far, 3.0)];
        assert!(find_correspondences(&s, &targets, &Pose2::identity(), &RegistrationConfig::default()).is_empty());
    }

    #[test]
    fn normal_gate_blocks_opposed_normals() {
        let src = set(vec![sp(0.0, 0.0, 1.0, 0.0)]);
        let tgt = set(vec![sp(0.5, 0.0, -1.0, 0.0), sp(1.5, 0.0, 0.9, 0.1)]);
        let targets = vec![RegistrationTarget::new(tgt, 3.0)];
        let corr = find_correspondences(&src, &targets, &Pose2::identity(), &RegistrationConfig::default());
        assert_eq!(corr.len(), 1);
        assert_eq!(corr[0].target_index, 1);
    }

    #[test]
    fn metric_values() {
        let src = sp(1.0, 2.0, 0.0, 1.0);
        let mut tgt = sp(2.0, 2.0, 0.0, 1.0);
        let id = Pose2::identity();
        for cost in CostKind::ALL {
            assert_eq!(cost_residual(&src, &src, &id, cost, 0.1), 0.0);
        }
        // e = (1, 0) is perpendicular to the target normal.
        assert_eq!(cost_residual(&src, &tgt, &id, CostKind::P2L, 0.1), 0.0);
        assert_eq!(cost_residual(&src, &tgt, &id, CostKind::P2P, 0.1), 1.0);
        tgt.covariance = Matrix2::new(0.1, 0.0, 0.0, 0.4);
        let g = cost_residual(&src, &tgt, &id, CostKind::P2D, 0.1);
        assert!((g - 5.0).abs() < 1e-12);
    }

    #[test]
    fn p2d_with_isotropic_covariance_scales_p2p() {
        let src = sp(0.3, -1.0, 1.0, 1.0);
        let mut tgt = sp(2.0, 4.0, 1.0, 0.0);
        let pose = Pose2::new(0.2, 0.1, 0.3);
        for c in [0.05, 0.5, 3.0] {
            tgt.covariance = Matrix2::identity() * (c - 0.1);
            let p2d = cost_residual(&src, &tgt, &pose, CostKind::P2D, 0.1);
            let p2p = cost_residual(&src, &tgt, &pose, CostKind::P2P, 0.1);
            assert!((p2d - p2p / c).abs() <= 1e-12 * p2p.max(1.0));
        }
    }

    #[test]
    fn p2l_ignores_tangential_slide() {
        // Target line y = 0 with normal (0, 1); source points on that line.
        let tgt = set((0..50).map(|i| sp(i as f64 - 25.0, 0.0, 0.0, 1.0)).collect());
        let src = set((0..10).map(|i| sp(2.0 * i as f64 - 9.0, 0.3, 0.0, 1.0)).collect());
        let targets = vec![RegistrationTarget::new(tgt, 3.0)];
        let cfg = RegistrationConfig { cost: CostKind::P2L, ..Default::default() };
        let corr = find_correspondences(&src, &targets, &Pose2::identity(), &cfg);
        let f0 = objective(&src, &targets, &corr, &Pose2::identity(), &cfg);
        let f1 = objective(&src, &targets, &corr, &Pose2::new(0.1, 0.0, 0.0), &cfg);
        assert!(f0 > 0.0);
        assert!((f0 - f1).abs() < 1e-10);
    }

    #[test]
    fn objective_examples() {
        let s = grid_set();
        let targets = vec![RegistrationTarget::new(s.clone(), 3.0)];
        let cfg = RegistrationConfig { loss: LossKind::Squared, ..Default::default() };
        assert_eq!(objective(&s, &targets, &[], &Pose2::identity(), &cfg), 0.0);

        // One correspondence, w = 3, g = 2: ρ(√2) = 1 under the squared loss.
        let src = set(vec![sp(0.0, 0.0, 1.0, 0.0)]);
        let tgt = vec![RegistrationTarget::new(set(vec![sp(1.0, 1.0, 1.0, 0.0)]), 3.0)];
        let c = Correspondence { keyframe_id: 0, target_index: 0, source_index: 0, weight: 3.0 };
        let f = objective(&src, &tgt, &[c], &Pose2::identity(), &cfg);
        assert!((f - 3.0).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_per_term_sum() {
        let s = grid_set();
        let pose = Pose2::new(0.4, -0.2, 0.03);
        let moved = s.transformed(&pose.inverse());
        let targets = vec![RegistrationTarget::new(s.clone(), 3.0)];
        for cost in CostKind::ALL {
            for loss in LossKind::ALL {
                let cfg = RegistrationConfig { cost, loss, loss_delta: 0.2, ..Default::default() };
                let corr = find_correspondences(&moved, &targets, &Pose2::identity(), &cfg);
                let mut brute = 0.0;
                for c in &corr {
                    let g = cost_residual(&moved.points[c.source_index], &s.points[c.target_index], &Pose2::identity(), cost, 0.1);
                    brute += c.weight * robust_loss(g.sqrt(), loss, 0.2);
                }
                let f = objective(&moved, &targets, &corr, &Pose2::identity(), &cfg);
                assert!((f - brute).abs() <= 1e-12 * brute.max(1.0), "{cost} {loss}");
            }
        }
    }
}
