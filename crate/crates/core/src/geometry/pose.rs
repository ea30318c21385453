use nalgebra::{Isometry3, Matrix3, Quaternion, Rotation3, Translation3, UnitQuaternion, Vector3};

use super::GeometryError;

/// Norm below which a quaternion (or a weighted quaternion sum) is treated as zero.
pub const MIN_QUATERNION_NORM: f64 = 1e-12;

/// Camera pose in the global frame, stored as camera center and world-to-camera rotation.
///
/// A world point `X_w` maps to camera coordinates as `X_l = R(q) (X_w - c)`.
/// The orientation is always unit length and in canonical sign (`w >= 0`, and if
/// `w == 0` the first nonzero imaginary component is positive).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    position: Vector3<f64>,
    orientation: UnitQuaternion<f64>,
}

impl Pose {
    /// Builds a pose from a center and a (possibly unnormalized) quaternion.
    pub fn new(position: Vector3<f64>, orientation: Quaternion<f64>) -> Result<Self, GeometryError> {
        Ok(Self {
            position,
            orientation: canonical_unit(orientation)?,
        })
    }

    pub fn from_unit(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        let q = canonical_sign(orientation.into_inner());
        Self {
            position,
            orientation: UnitQuaternion::new_unchecked(q),
        }
    }

    pub fn identity() -> Self {
        Self::from_unit(Vector3::zeros(), UnitQuaternion::identity())
    }

    /// Camera at `position` whose optical axis (+z) points at `target`, with
    /// image rows (+y) pointing away from `up`.
    pub fn look_at(
        position: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let forward = target - position;
        if forward.norm() < MIN_QUATERNION_NORM {
            return Err(GeometryError::DegenerateLookAt);
        }
        let forward = forward.normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(GeometryError::DegenerateLookAt);
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        // Rows are the camera axes expressed in the world frame.
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let rot = Rotation3::from_matrix_unchecked(r);
        Ok(Self::from_unit(position, UnitQuaternion::from_rotation_matrix(&rot)))
    }

    pub fn position(&self) -> &Vector3<f64> {
        &self.position
    }

    pub fn orientation(&self) -> &UnitQuaternion<f64> {
        &self.orientation
    }

    /// Quaternion coefficients as `(w, x, y, z)`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.orientation.to_rotation_matrix().into_inner()
    }

    pub fn world_to_camera(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.orientation * (point - self.position)
    }

    pub fn camera_to_world(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.inverse() * point + self.position
    }

    /// Optical axis expressed in world coordinates.
    pub fn viewing_direction(&self) -> Vector3<f64> {
        self.orientation.inverse() * Vector3::z()
    }

    /// World-to-camera rigid transform `X_l = R X_w + t` with `t = -R c`.
    pub fn to_isometry(&self) -> Isometry3<f64> {
        let t = -(self.orientation * self.position);
        Isometry3::from_parts(Translation3::from(t), self.orientation)
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let center = -(iso.rotation.inverse() * iso.translation.vector);
        Self::from_unit(center, iso.rotation)
    }
}

/// Flips a quaternion into the canonical hemisphere.
pub fn canonical_sign(q: Quaternion<f64>) -> Quaternion<f64> {
    let flip = if q.w != 0.0 {
        q.w < 0.0
    } else {
        [q.i, q.j, q.k]
            .into_iter()
            .find(|c| *c != 0.0)
            .is_some_and(|c| c < 0.0)
    };
    if flip {
        -q
    } else {
        q
    }
}

/// Normalizes and canonicalizes a quaternion. Quaternions that are already unit
/// within a few ULP are kept bit-for-bit so that repeated canonicalization is
/// idempotent.
pub fn canonical_unit(q: Quaternion<f64>) -> Result<UnitQuaternion<f64>, GeometryError> {
    let n2 = q.norm_squared();
    if !n2.is_finite() || n2.sqrt() < MIN_QUATERNION_NORM {
        return Err(GeometryError::ZeroNorm);
    }
    let q = if (n2 - 1.0).abs() <= 4.0 * f64::EPSILON {
        q
    } else {
        q / n2.sqrt()
    };
    Ok(UnitQuaternion::new_unchecked(canonical_sign(q)))
}

/// Euclidean distance between camera centers, in meters.
pub fn pose_position_error(estimated: &Pose, reference: &Pose) -> f64 {
    (estimated.position - reference.position).norm()
}

/// Angle of the smallest rotation aligning the two orientations, in degrees.
///
/// Equal to `acos((trace(R_est^T R_ref) - 1) / 2)`; evaluated through the
/// half-angle of the relative quaternion, which keeps full precision near 0°
/// and 180° where the trace form loses digits.
pub fn pose_rotation_error(estimated: &Pose, reference: &Pose) -> f64 {
    rotation_angle_deg(&estimated.orientation, &reference.orientation)
}

pub fn rotation_angle_deg(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    // Relative rotation conj(a) * b, grouped so that a == b cancels exactly.
    let (a, b) = (a.quaternion(), b.quaternion());
    let w = a.w * b.w + a.i * b.i + a.j * b.j + a.k * b.k;
    let v = Vector3::new(
        (a.w * b.i - a.i * b.w) + (a.k * b.j - a.j * b.k),
        (a.w * b.j - a.j * b.w) + (a.i * b.k - a.k * b.i),
        (a.w * b.k - a.k * b.w) + (a.j * b.i - a.i * b.j),
    )
    .norm();
    let angle = 2.0 * v.atan2(w.abs());
    angle.to_degrees().clamp(0.0, 180.0)
}

/// Weighted sum of quaternions after aligning each to the hemisphere of the
/// first one, renormalized to a canonical unit quaternion.
pub fn blend_quaternions(
    quaternions: &[UnitQuaternion<f64>],
    weights: &[f64],
) -> Result<UnitQuaternion<f64>, GeometryError> {
    check_lengths(quaternions.len(), weights.len())?;
    let mut nonzero = weights.iter().enumerate().filter(|(_, w)| **w != 0.0);
    if let (Some((only, _)), None) = (nonzero.next(), nonzero.next()) {
        return Ok(UnitQuaternion::new_unchecked(canonical_sign(
            quaternions[only].into_inner(),
        )));
    }
    let reference = quaternions[0].coords;
    let mut sum = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    for (q, w) in quaternions.iter().zip(weights) {
        let aligned = if q.coords.dot(&reference) < 0.0 {
            -q.into_inner()
        } else {
            q.into_inner()
        };
        sum += aligned * *w;
    }
    canonical_unit(sum)
}

/// `P = Σ w_i P_i`: positions are averaged linearly, orientations through
/// [`blend_quaternions`]. Weights must sum to one.
pub fn blend_poses(poses: &[Pose], weights: &[f64]) -> Result<Pose, GeometryError> {
    check_lengths(poses.len(), weights.len())?;
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(GeometryError::WeightsDoNotSumToOne(total));
    }
    let mut nonzero = weights.iter().enumerate().filter(|(_, w)| **w != 0.0);
    if let (Some((only, w)), None) = (nonzero.next(), nonzero.next()) {
        if *w == 1.0 {
            return Ok(poses[only]);
        }
    }
    let position = poses
        .iter()
        .zip(weights)
        .fold(Vector3::zeros(), |acc, (p, w)| acc + p.position * *w);
    let quats: Vec<_> = poses.iter().map(|p| p.orientation).collect();
    let orientation = blend_quaternions(&quats, weights)?;
    Ok(Pose {
        position,
        orientation,
    })
}

fn check_lengths(items: usize, weights: usize) -> Result<(), GeometryError> {
    if items == 0 {
        return Err(GeometryError::Empty);
    }
    if items != weights {
        return Err(GeometryError::LengthMismatch { items, weights });
    }
    Ok(())
}
