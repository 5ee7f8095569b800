//! Spinning-radar odometry built on sparse oriented surface points.
//!
//! The pipeline per sweep: [`filtering`] keeps the strongest returns,
//! [`radar_io::to_cartesian`] turns them into points, [`motion`] removes the
//! distortion caused by moving during the sweep, [`features`] summarizes the
//! points as oriented surface points and [`registration`] aligns them to a
//! sliding window of keyframes. [`odometry`] ties the stages together;
//! [`simulator`] and [`evaluation`] close the loop for testing.

pub mod error;
pub mod evaluation;
pub mod features;
pub mod filtering;
pub mod geometry;
pub mod motion;
pub mod odometry;
pub mod presets;
pub mod radar_io;
pub mod registration;
pub mod simulator;
pub mod trajectory;

pub use error::{Error, Result};
pub use geometry::{Point2, Pose2, Velocity2};
pub use trajectory::{StampedPose, Trajectory};
