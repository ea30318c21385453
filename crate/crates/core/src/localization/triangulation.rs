use nalgebra::{DMatrix, Vector2, Vector3};

use crate::geometry::{CameraIntrinsics, Pose, BEHIND_EPSILON};

/// Minimum largest pairwise ray angle, in degrees, for a point to be kept.
pub const DEFAULT_MIN_TRIANGULATION_ANGLE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TriangulationError {
    #[error("at least two observations are required")]
    TooFewObservations,
    #[error("baseline too small for a stable triangulation")]
    DegenerateBaseline,
    #[error("triangulated point lies behind a camera")]
    BehindCamera,
}

/// Linear multi-view triangulation followed by cheirality and triangulation
/// angle checks.
///
/// Each view contributes the rows `x P₃ − P₁` and `y P₃ − P₂` of the
/// normalized projection `P = [R | −R c]`; the point is the right singular
/// vector of the smallest singular value. World coordinates are shifted to the
/// mean camera center for conditioning.
pub fn triangulate(
    observations: &[(Vector2<f64>, Pose, CameraIntrinsics)],
    min_angle_deg: f64,
) -> Result<Vector3<f64>, TriangulationError> {
    let n = observations.len();
    if n < 2 {
        return Err(TriangulationError::TooFewObservations);
    }
    let origin = observations
        .iter()
        .fold(Vector3::zeros(), |acc, (_, pose, _)| acc + pose.position())
        / n as f64;
    let spread = observations
        .iter()
        .map(|(_, pose, _)| (pose.position() - origin).norm())
        .fold(0.0, f64::max);
    if spread <= 1e-12 * (1.0 + origin.norm()) {
        return Err(TriangulationError::DegenerateBaseline);
    }

    let mut a = DMatrix::<f64>::zeros(2 * n, 4);
    for (i, (pixel, pose, intr)) in observations.iter().enumerate() {
        let xy = intr.normalize(pixel);
        let r = pose.rotation_matrix();
        let t = -(r * (pose.position() - origin));
        // Scale rows to unit-length ray so every view weighs the same.
        let s = 1.0 / (1.0 + xy.norm_squared()).sqrt();
        for (row, coord, axis) in [(2 * i, xy.x, 0), (2 * i + 1, xy.y, 1)] {
            for c in 0..3 {
                a[(row, c)] = s * (coord * r[(2, c)] - r[(axis, c)]);
            }
            a[(row, 3)] = s * (coord * t.z - t[axis]);
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let smallest = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, _)| i)
        .expect("four singular values");
    let h = v_t.row(smallest);
    if h[3].abs() <= 1e-12 * h.norm() {
        return Err(TriangulationError::DegenerateBaseline);
    }
    let point = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]) + origin;

    for (_, pose, _) in observations {
        if pose.world_to_camera(&point).z <= BEHIND_EPSILON {
            return Err(TriangulationError::BehindCamera);
        }
    }
    let rays: Vec<Vector3<f64>> = observations
        .iter()
        .map(|(_, pose, _)| (point - pose.position()).normalize())
        .collect();
    let mut max_angle: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let cross = rays[i].cross(&rays[j]).norm();
            max_angle = max_angle.max(cross.atan2(rays[i].dot(&rays[j])));
        }
    }
    if max_angle.to_degrees() < min_angle_deg {
        return Err(TriangulationError::DegenerateBaseline);
    }
    Ok(point)
}
