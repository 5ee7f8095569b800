use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::{
    build_terms, evaluate_terms, find_correspondences, linearize_terms, RegistrationConfig,
    RegistrationTarget, Term,
};
use crate::features::SurfacePointSet;
use crate::geometry::Pose2;

const INITIAL_DAMPING: f64 = 1e-4;
const MAX_DAMPING: f64 = 1e12;
const SINGLE_STEP_UPDATE: f64 = 1e-6;
const MAX_COVARIANCE_CONDITION: f64 = 1e12;

/// Why the outer loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// The inner solve needed at most one accepted step of negligible size.
    SingleStep,
    /// The cost changed by less than the relative limit between outer iterations.
    RelativeDecrease,
    MaxIterations,
    NoCorrespondences,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub pose: Pose2,
    /// `(JᵀJ)⁻¹` at the solution; `None` when the normal matrix is too ill-conditioned.
    pub covariance: Option<Matrix3<f64>>,
    /// Outer iterations performed.
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub termination: Termination,
    pub correspondence_count: usize,
    /// Cost after each accepted inner step, one list per outer iteration,
    /// each starting with the cost before the first step.
    pub cost_trace: Vec<Vec<f64>>,
}

struct InnerOutcome {
    pose: Pose2,
    cost: f64,
    accepted: usize,
    update_norm: f64,
    trace: Vec<f64>,
}

fn apply_step(pose: &Pose2, step: &Vector3<f64>) -> Pose2 {
    Pose2::new(pose.x + step.x, pose.y + step.y, pose.theta + step.z)
}

/// Damped Gauss-Newton over fixed correspondences.
fn solve_fixed(terms: &[Term], start: &Pose2, cfg: &RegistrationConfig) -> InnerOutcome {
    let mut pose = *start;
    let mut lambda = INITIAL_DAMPING;
    let mut accepted = 0;
    let mut total_step = Vector3::zeros();
    let mut lin = linearize_terms(terms, &pose, cfg.loss, cfg.loss_delta);
    let mut trace = vec![lin.cost];

    'outer: for _ in 0..cfg.max_inner_iterations {
        if lin.gradient.amax() <= 1e-15 * lin.cost.max(1e-300) || lin.cost == 0.0 {
            break;
        }
        loop {
            let mut damped = lin.hessian;
            for d in 0..3 {
                damped[(d, d)] += lambda * lin.hessian[(d, d)].max(1e-12);
            }
            let step = match damped.cholesky() {
                Some(ch) => -ch.solve(&lin.gradient),
                None => {
                    lambda *= 10.0;
                    if lambda > MAX_DAMPING {
                        break 'outer;
                    }
                    continue;
                }
            };
            let candidate = apply_step(&pose, &step);
            let cost = evaluate_terms(terms, &candidate, cfg.loss, cfg.loss_delta);
            if cost < lin.cost {
                let decrease = lin.cost - cost;
                let previous = lin.cost;
                pose = candidate;
                accepted += 1;
                total_step += step;
                lambda = (lambda / 10.0).max(1e-12);
                lin = linearize_terms(terms, &pose, cfg.loss, cfg.loss_delta);
                trace.push(lin.cost);
                if step.norm() < 1e-12 || decrease <= 1e-12 * previous {
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > MAX_DAMPING {
                break 'outer;
            }
        }
    }
    InnerOutcome {
        pose,
        cost: lin.cost,
        accepted,
        update_norm: total_step.norm(),
        trace,
    }
}

fn covariance_of(hessian: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let eig = SymmetricEigen::new(*hessian);
    let max = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || max / min > MAX_COVARIANCE_CONDITION {
        return None;
    }
    let inv = hessian.try_inverse()?;
    Some((inv + inv.transpose()) * 0.5)
}

/// Aligns `source` (sensor frame) to the keyframe targets (common world frame),
/// starting from `initial_pose`, alternating association and minimization.
pub fn register<T: AsRef<RegistrationTarget> + Sync>(
    source: &SurfacePointSet,
    targets: &[T],
    initial_pose: &Pose2,
    cfg: &RegistrationConfig,
) -> RegistrationResult {
    let mut pose = *initial_pose;
    let mut initial_cost = None;
    let mut previous_cost: Option<f64> = None;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let mut cost_trace = Vec::new();
    let mut terms = Vec::new();
    let mut correspondence_count = 0;

    for _ in 0..cfg.max_iterations {
        let correspondences = find_correspondences(source, targets, &pose, cfg);
        if correspondences.is_empty() {
            termination = Termination::NoCorrespondences;
            break;
        }
        iterations += 1;
        correspondence_count = correspondences.len();
        terms = build_terms(source, targets, &correspondences, cfg);
        let inner = solve_fixed(&terms, &pose, cfg);
        initial_cost.get_or_insert(inner.trace[0]);
        pose = inner.pose;
        cost_trace.push(inner.trace);
        if inner.accepted <= 1 && inner.update_norm < SINGLE_STEP_UPDATE {
            termination = Termination::SingleStep;
            break;
        }
        if let Some(prev) = previous_cost {
            if (prev - inner.cost).abs() <= cfg.rel_decrease_eps * prev {
                termination = Termination::RelativeDecrease;
                break;
            }
        }
        previous_cost = Some(inner.cost);
    }

    let (final_cost, covariance) = if terms.is_empty() {
        (0.0, None)
    } else {
        let lin = linearize_terms(&terms, &pose, cfg.loss, cfg.loss_delta);
        (lin.cost, covariance_of(&lin.hessian))
    };
    RegistrationResult {
        pose,
        covariance,
        iterations,
        initial_cost: initial_cost.unwrap_or(0.0),
        final_cost,
        converged: matches!(
            termination,
            Termination::SingleStep | Termination::RelativeDecrease
        ),
        termination,
        correspondence_count,
        cost_trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::tests::sp;
    use crate::registration::{CostKind, LossKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene(seed: u64) -> SurfacePointSet {
        // Points on a handful of walls in different directions.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::new();
        for w in 0..12 {
            let angle = w as f64 * 0.52 + rng.random_range(-0.1..0.1);
            let n = nalgebra::Vector2::new(angle.cos(), angle.sin());
            let t = nalgebra::Vector2::new(-n.y, n.x);
            let offset = rng.random_range(10.0..40.0);
            for s in 0..8 {
                let p = -n * offset + t * (s as f64 * 3.0 - 10.0);
                points.push(sp(p.x, p.y, n.x, n.y));
            }
        }
        SurfacePointSet { points, stamp: 0.0, origin: Pose2::identity() }
    }

    #[test]
    fn identical_sets_stay_at_identity() {
        let s = scene(1);
        let targets = vec![RegistrationTarget::new(s.clone(), 3.0)];
        let r = register(&s, &targets, &Pose2::identity(), &RegistrationConfig::default());
        assert_eq!(r.pose, Pose2::identity());
        assert!(r.converged);
        assert!(r.iterations <= 2);
        assert_eq!(r.correspondence_count, s.len());
    }

    #[test]
    fn recovers_rigid_offset() {
        let truth = Pose2::new(0.5, -0.3, 3f64.to_radians());
        let world = scene(2);
        // Source is the world seen from `truth`.
        let source = world.transformed(&truth.inverse());
        let targets = vec![RegistrationTarget::new(world, 3.0)];
        for cost in CostKind::ALL {
            let cfg = RegistrationConfig { cost, ..Default::default() };
            let r = register(&source, &targets, &Pose2::identity(), &cfg);
            assert!(r.converged, "{cost}: {:?}", r.termination);
            assert!((r.pose.x - truth.x).hypot(r.pose.y - truth.y) < 1e-3, "{cost}: {:?}", r.pose);
            assert!((r.pose.theta - truth.theta).abs() < 1e-4);
        }
    }

    #[test]
    fn accepted_steps_never_increase_cost() {
        let truth = Pose2::new(0.8, 0.4, -0.12);
        let world = scene(5);
        let source = world.transformed(&truth.inverse());
        let targets = vec![RegistrationTarget::new(world, 3.0)];
        for cost in CostKind::ALL {
            for loss in LossKind::ALL {
                let cfg = RegistrationConfig { cost, loss, loss_delta: 0.5, ..Default::default() };
                let r = register(&source, &targets, &Pose2::identity(), &cfg);
                for trace in &r.cost_trace {
                    for w in trace.windows(2) {
                        assert!(w[1] <= w[0], "{cost} {loss}: {trace:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn corridor_covariance_is_elongated() {
        // Two nearly parallel walls along x: little constrains motion along the corridor.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut points = Vec::new();
        for i in 0..40 {
            let x = i as f64 * 2.0 - 40.0;
            for (y, ny) in [(5.0, -1.0), (-5.0, 1.0)] {
                let tilt: f64 = rng.random_range(-3f64..3.0).to_radians();
                points.push(sp(x, y + rng.random_range(-0.02..0.02), tilt.sin(), ny * tilt.cos()));
            }
        }
        let world = SurfacePointSet { points, stamp: 0.0, origin: Pose2::identity() };
        let targets = vec![RegistrationTarget::new(world.clone(), 3.0)];
        let cfg = RegistrationConfig { cost: CostKind::P2L, ..Default::default() };
        let r = register(&world, &targets, &Pose2::identity(), &cfg);
        let c = r.covariance.expect("tilted normals keep the problem observable");
        let eig = SymmetricEigen::new(c.fixed_view::<2, 2>(0, 0).into_owned());
        let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
        assert!(hi / lo > 100.0, "{c}");
        assert!(c[(0, 0)] > 100.0 * c[(1, 1)], "{c}");

        // Perfectly parallel normals leave the along-corridor direction unobservable.
        let flat: Vec<_> = world.points.iter().map(|p| sp(p.mean.x, p.mean.y, 0.0, p.normal.y.signum())).collect();
        let flat = SurfacePointSet { points: flat, ..world };
        let targets = vec![RegistrationTarget::new(flat.clone(), 3.0)];
        assert!(register(&flat, &targets, &Pose2::identity(), &cfg).covariance.is_none());
    }

    #[test]
    fn no_targets_means_no_correspondences() {
        let s = scene(3);
        let r = register(&s, &[] as &[RegistrationTarget], &Pose2::new(1.0, 2.0, 0.1), &RegistrationConfig::default());
        assert_eq!(r.termination, Termination::NoCorrespondences);
        assert!(!r.converged);
        assert_eq!(r.pose, Pose2::new(1.0, 2.0, 0.1));
        assert!(r.covariance.is_none());
    }
}
