use nalgebra::Matrix3;

use crate::geometry::Pose2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StampedPose {
    pub stamp: f64,
    pub pose: Pose2,
    /// Registration covariance over `[x, y, theta]`, when one was estimated.
    pub covariance: Option<Matrix3<f64>>,
}

impl StampedPose {
    pub fn new(stamp: f64, pose: Pose2) -> Self {
        Self {
            stamp,
            pose,
            covariance: None,
        }
    }
}

/// Time-ordered sequence of poses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<StampedPose>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_poses(stamps: &[f64], poses: &[Pose2]) -> Self {
        Self {
            poses: stamps
                .iter()
                .zip(poses)
                .map(|(&t, &p)| StampedPose::new(t, p))
                .collect(),
        }
    }

    pub fn push(&mut self, stamp: f64, pose: Pose2) {
        self.poses.push(StampedPose::new(stamp, pose));
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn pose_list(&self) -> Vec<Pose2> {
        self.poses.iter().map(|p| p.pose).collect()
    }

    /// Cumulative travelled distance at each pose, starting at zero.
    pub fn path_lengths(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.len());
        for (i, p) in self.poses.iter().enumerate() {
            if i > 0 {
                let q = &self.poses[i - 1].pose;
                acc += (p.pose.x - q.x).hypot(p.pose.y - q.y);
            }
            out.push(acc);
        }
        out
    }

    /// Applies `transform ⊕ pose` to every pose.
    pub fn transformed(&self, transform: &Pose2) -> Trajectory {
        Trajectory {
            poses: self
                .poses
                .iter()
                .map(|p| StampedPose {
                    pose: transform.compose(&p.pose),
                    ..*p
                })
                .collect(),
        }
    }
}
