//! Planar rigid-body types: poses, body-frame velocities and points.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, Vector2};

/// A point in the plane, meters.
pub type Point2 = nalgebra::Point2<f64>;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(TAU);
    if wrapped > PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

/// Rotation matrix for `theta` radians.
pub fn rotation(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// SE(2) pose. `theta` is kept in `(-π, π]` by every constructor and operation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub const fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn translation(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        rotation(self.theta)
    }

    /// `self ⊕ other`: `other` expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.theta,
        )
    }

    /// `self⁻¹ ⊕ other`, the pose of `other` seen from `self`.
    pub fn relative(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        Pose2::new(c * dx + s * dy, -s * dx + c * dy, other.theta - self.theta)
    }

    /// Maps a point from this pose's frame into the parent frame.
    pub fn transform_point(&self, pt: &Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        Point2::new(
            c * pt.x - s * pt.y + self.x,
            s * pt.x + c * pt.y + self.y,
        )
    }

    pub fn rotate_vector(&self, v: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.theta.sin_cos();
        Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
    }

    pub fn translation_norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

/// Body-frame velocity `[vx, vy, omega]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Velocity2 {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl Velocity2 {
    pub const fn new(vx: f64, vy: f64, omega: f64) -> Self {
        Self { vx, vy, omega }
    }

    pub const fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    /// The displacement accumulated over `dt` seconds, as a body-frame increment.
    pub fn integrate(&self, dt: f64) -> Pose2 {
        Pose2::new(self.vx * dt, self.vy * dt, self.omega * dt)
    }

    /// Velocity that reproduces the body-frame increment `delta` over `dt` seconds.
    pub fn from_increment(delta: &Pose2, dt: f64) -> Self {
        Self::new(delta.x / dt, delta.y / dt, delta.theta / dt)
    }

    pub fn negated(&self) -> Self {
        Self::new(-self.vx, -self.vy, -self.omega)
    }

    pub fn is_finite(&self) -> bool {
        self.vx.is_finite() && self.vy.is_finite() && self.omega.is_finite()
    }
}
