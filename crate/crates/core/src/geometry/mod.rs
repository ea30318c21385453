//! Pose algebra, pinhole projection, pose-error metrics and frustum overlap.

mod camera;
mod frustum;
mod pose;

pub use camera::{back_project, project, CameraIntrinsics, BEHIND_EPSILON};
pub use frustum::{
    chebyshev_center, frustum_overlap, frustum_overlap_radius, select_overlapping_pairs, Frustum, HalfSpace,
    InscribedSphere, OverlapPair, DEFAULT_FAR, DEFAULT_NEAR,
};
pub use pose::{
    blend_poses, blend_quaternions, canonical_sign, canonical_unit, pose_position_error, pose_rotation_error,
    rotation_angle_deg, Pose, MIN_QUATERNION_NORM,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("quaternion (or weighted quaternion sum) has zero norm")]
    ZeroNorm,
    #[error("no items to blend")]
    Empty,
    #[error("{items} items but {weights} weights")]
    LengthMismatch { items: usize, weights: usize },
    #[error("pose weights sum to {0}, expected 1")]
    WeightsDoNotSumToOne(f64),
    #[error("invalid intrinsics {0:?}")]
    InvalidIntrinsics(CameraIntrinsics),
    #[error("invalid frustum range near={near} far={far}")]
    InvalidFrustumRange { near: f64, far: f64 },
    #[error("look-at target coincides with the camera or is parallel to the up vector")]
    DegenerateLookAt,
}
