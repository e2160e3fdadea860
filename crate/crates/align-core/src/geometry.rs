//! Pose and pose-error primitives shared by both controllers and the plant.
//!
//! Conventions, fixed once here so every module agrees:
//!
//! * positions are in **mm**, angles in **rad**, time in **s**;
//! * quaternions are **scalar-first Hamilton** quaternions (`w + xi + yj + zk`)
//!   storing the rotation from the world frame to the body frame;
//! * [`TwistCommand::linear`] is a world-frame velocity in mm/s;
//!   [`TwistCommand::angular`] is a **body-frame** angular velocity in rad/s,
//!   applied by right-multiplication (see [`apply_twist`]). The rotation axis
//!   reported by [`pose_error`] lives in the same body frame, so a raw twist
//!   built from it rotates the end-effector directly toward the target.

use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};

/// Tolerance on `|‖q‖ − 1|` beyond which an input quaternion is rejected.
pub const QUAT_UNIT_TOL: f64 = 1e-6;

/// Translation errors below this (mm) have no meaningful direction.
pub const TRANSLATION_DIR_TOL_MM: f64 = 1e-9;

/// Rotation errors below this (rad) have no meaningful axis.
pub const ROTATION_AXIS_TOL_RAD: f64 = 1e-7;

/// Errors from pose construction or error computation.
#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum GeometryError {
    /// An orientation quaternion was not unit-norm within [`QUAT_UNIT_TOL`].
    #[error("quaternion norm {norm} is outside the unit tolerance")]
    NonUnitQuaternion { norm: f64 },
    /// A pose component was NaN or infinite.
    #[error("pose contains a non-finite component")]
    NonFinite,
}

/// A rigid-body pose: world-frame position plus orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    /// World-frame position, mm.
    pub position: Vector3<f64>,
    /// World-to-body rotation.
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    /// Pose at the world origin with identity orientation.
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self { position, orientation }
    }

    /// Builds a pose from raw parts, normalizing the scalar-first quaternion
    /// `[w, x, y, z]`. Rejects non-finite input and quaternions whose norm is
    /// off unit by more than [`QUAT_UNIT_TOL`].
    pub fn from_parts(position: Vector3<f64>, quat_wxyz: [f64; 4]) -> Result<Self, GeometryError> {
        let [w, x, y, z] = quat_wxyz;
        if !position.iter().all(|c| c.is_finite()) || !quat_wxyz.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if (norm - 1.0).abs() > QUAT_UNIT_TOL {
            return Err(GeometryError::NonUnitQuaternion { norm });
        }
        Ok(Self {
            position,
            orientation: UnitQuaternion::new_normalize(q),
        })
    }

    /// True when every position and orientation component is finite.
    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|c| c.is_finite())
            && self.orientation.as_ref().coords.iter().all(|c| c.is_finite())
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

/// Decomposed pose error between an end-effector pose and a target pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseError {
    /// Translation error magnitude `‖x_t − x_e‖`, mm.
    pub delta_d: f64,
    /// Rotation error angle in `[0, π]` rad, invariant under quaternion sign.
    pub delta_theta: f64,
    /// Unit vector from end-effector toward target (world frame), or zero
    /// when `delta_d` is below [`TRANSLATION_DIR_TOL_MM`].
    pub translation_dir: Vector3<f64>,
    /// Unit rotation axis in the end-effector body frame, or zero when
    /// `delta_theta` is below [`ROTATION_AXIS_TOL_RAD`].
    pub rotation_axis: Vector3<f64>,
}

impl PoseError {
    /// Error of a pose against itself: all components zero.
    pub fn zero() -> Self {
        Self {
            delta_d: 0.0,
            delta_theta: 0.0,
            translation_dir: Vector3::zeros(),
            rotation_axis: Vector3::zeros(),
        }
    }
}

/// Normalizes `v` by first dividing by its largest-magnitude component, which
/// keeps the result stable for very small vectors. Returns zero for zero input.
fn robust_unit(v: Vector3<f64>) -> Vector3<f64> {
    let max = v.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    if max == 0.0 {
        return Vector3::zeros();
    }
    let scaled = v / max;
    scaled / scaled.norm()
}

/// Relative rotation taking the end-effector orientation onto the target
/// orientation, returned as `(angle, body-frame unit axis)`.
///
/// The relative quaternion is canonicalized to a non-negative scalar part so
/// that `q` and `−q` (the same physical rotation) give identical results and
/// the angle always lands in `[0, π]`.
fn relative_rotation(
    ee: &UnitQuaternion<f64>,
    target: &UnitQuaternion<f64>,
) -> (f64, Vector3<f64>) {
    let rel = ee.inverse() * target;
    let mut q = *rel.quaternion();
    if q.w < 0.0 {
        q = -q;
    }
    // atan2 is the well-conditioned form of 2·acos(w): identical on unit
    // quaternions, but it keeps full precision for near-zero angles where
    // acos flattens out.
    let angle = 2.0 * libm::atan2(q.imag().norm(), q.w);
    let axis = if angle > ROTATION_AXIS_TOL_RAD {
        robust_unit(q.imag())
    } else {
        Vector3::zeros()
    };
    (angle, axis)
}

/// Computes the decomposed error between a measured end-effector pose and a
/// measured target pose.
///
/// Fails if either orientation is non-unit beyond [`QUAT_UNIT_TOL`]; callers
/// holding poses built through [`Pose::from_parts`] can unwrap safely.
pub fn pose_error(ee: &Pose, target: &Pose) -> Result<PoseError, GeometryError> {
    if !ee.is_finite() || !target.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    for q in [&ee.orientation, &target.orientation] {
        let norm = q.as_ref().norm();
        if (norm - 1.0).abs() > QUAT_UNIT_TOL {
            return Err(GeometryError::NonUnitQuaternion { norm });
        }
    }

    let diff = target.position - ee.position;
    let delta_d = diff.norm();
    let translation_dir = if delta_d > TRANSLATION_DIR_TOL_MM {
        diff / delta_d
    } else {
        Vector3::zeros()
    };
    let (delta_theta, rotation_axis) = relative_rotation(&ee.orientation, &target.orientation);

    Ok(PoseError {
        delta_d,
        delta_theta,
        translation_dir,
        rotation_axis,
    })
}

/// Hamilton product of two unit quaternions, renormalized so repeated
/// composition cannot drift off the unit sphere.
pub fn quat_compose(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(a.into_inner() * b.into_inner())
}

/// Pipeline stage a twist belongs to; carried along so logs can tell raw,
/// clamped and smoothed commands apart without extra bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Raw,
    Clamped,
    Smoothed,
}

/// A velocity command: world-frame linear part plus body-frame angular part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwistCommand {
    /// mm/s, world frame.
    pub linear: Vector3<f64>,
    /// rad/s, body frame.
    pub angular: Vector3<f64>,
    pub stage: Stage,
}

impl TwistCommand {
    pub fn zero(stage: Stage) -> Self {
        Self {
            linear: Vector3::zeros(),
            angular: Vector3::zeros(),
            stage,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().all(|c| c.is_finite()) && self.angular.iter().all(|c| c.is_finite())
    }
}

/// The error-proportional twist: linear part is the full world-frame
/// translation error in mm (interpreted as mm/s), angular part is the error
/// axis scaled by the error angle (rad/s, body frame).
///
/// Integrating this twist for exactly one second reproduces the target pose;
/// see the tests for that identity.
pub fn raw_velocity(ee: &Pose, target: &Pose) -> TwistCommand {
    let (angle, axis) = relative_rotation(&ee.orientation, &target.orientation);
    TwistCommand {
        linear: target.position - ee.position,
        angular: axis * angle,
        stage: Stage::Raw,
    }
}

/// Integrates a twist over `dt` seconds: the linear part translates the pose
/// in the world frame, the angular part right-multiplies the orientation (a
/// body-frame rotation increment via the quaternion exponential).
pub fn apply_twist(pose: &Pose, twist: &TwistCommand, dt: f64) -> Pose {
    let rotvec = twist.angular * dt;
    let step = UnitQuaternion::from_scaled_axis(rotvec);
    Pose {
        position: pose.position + twist.linear * dt,
        orientation: quat_compose(&pose.orientation, &step),
    }
}

/// Builds a unit quaternion rotating by `angle` about the (not necessarily
/// normalized) `axis`; identity for degenerate input.
pub fn quat_from_axis_angle(axis: Vector3<f64>, angle: f64) -> UnitQuaternion<f64> {
    let unit = robust_unit(axis);
    if unit == Vector3::zeros() || angle.abs() < ROTATION_AXIS_TOL_RAD {
        return UnitQuaternion::identity();
    }
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(unit), angle)
}
