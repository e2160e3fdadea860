//! Robot-agnostic end-effector alignment.
//!
//! This crate contains the math that takes a measured end-effector pose and a
//! measured target pose and produces motion commands that drive the one onto
//! the other, together with a pose-level plant simulator used to exercise the
//! controllers under realistic sensing and actuation defects.
//!
//! Two controller generations are provided:
//!
//! * [`controller_v1`] — a discrete *step-and-settle* controller. It averages
//!   the measured error over a short buffer, waits for the arm to finish each
//!   commanded step, and emits bounded pose increments until the error is
//!   inside tolerance.
//! * [`controller_v2`] — a continuous controller that emits a twist
//!   (linear + angular velocity) every tick. The raw error-proportional twist
//!   is clamped onto an adaptively shrinking 6-D velocity ball and smoothed by
//!   a first-order filter, which trades the stop-and-go cadence of the v1
//!   scheme for a single smooth approach.
//!
//! [`plant`] simulates the receiving side: command execution with rate
//! limiting, tracking lag, per-axis rotational backlash, a slowly wandering
//! mount-flex bias, sensing latency, and measurement noise. All randomness is
//! drawn from a seeded [`rand_chacha::ChaCha8Rng`], so trials are exactly
//! reproducible.
//!
//! Units are millimetres, radians and seconds throughout. Quaternions are
//! scalar-first Hamilton quaternions; angular velocities and rotation
//! increments are expressed in the end-effector body frame.
//!
//! The crate is `no_std` (with `alloc`) so the controllers can run on
//! embedded control boards; the simulator and controllers share that
//! constraint to keep them testable in one place.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod controller_v1;
pub mod controller_v2;
pub mod geometry;
pub mod plant;

pub use controller_v1::{step_size, PoseStepCommand, V1Config, V1State};
pub use controller_v2::{
    base_radii, effective_radii, hypersphere_clamp, jitter_sigma, rms_perp, shrink_factors,
    smooth, ShrinkFactors, V2Config, V2State, V2TickOutput, VelocityBounds,
    CONVERGENCE_DWELL_TICKS,
};
pub use geometry::{
    apply_twist, pose_error, quat_compose, raw_velocity, GeometryError, Pose, PoseError, Stage,
    TwistCommand,
};
pub use plant::{Plant, PlantConfig, PlantError};

/// Validation failure for a controller or plant configuration.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    /// A field (or pair of fields) violates a documented invariant.
    #[error("invalid configuration: {0}")]
    Invalid(&'static str),
}
