use nalgebra::{Matrix2x3, Matrix3, Matrix6, UnitQuaternion, Vector2, Vector3, Vector6};

use crate::geometry::{CameraIntrinsics, Pose, BEHIND_EPSILON};

use super::Correspondence;

const MAX_ITERATIONS: usize = 100;
const GRADIENT_TOLERANCE: f64 = 1e-10;
const STEP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub pose: Pose,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
}

/// World-to-camera transform `X_c = R X_w + t`.
#[derive(Debug, Clone, Copy)]
struct Transform {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Transform {
    fn from_pose(pose: &Pose) -> Self {
        Self {
            rotation: *pose.orientation(),
            translation: -(pose.orientation() * pose.position()),
        }
    }

    fn to_pose(self) -> Pose {
        let center = -(self.rotation.inverse() * self.translation);
        Pose::from_unit(center, self.rotation)
    }

    fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// Left perturbation `X_c' = exp(ω) X_c + τ`.
    fn perturbed(&self, delta: &Vector6<f64>) -> Self {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let tau = Vector3::new(delta[3], delta[4], delta[5]);
        let exp = UnitQuaternion::from_scaled_axis(omega);
        Self {
            rotation: exp * self.rotation,
            translation: exp * self.translation + tau,
        }
    }
}

fn cost(tf: &Transform, correspondences: &[Correspondence], intr: &CameraIntrinsics) -> f64 {
    let mut total = 0.0;
    for (pixel, point) in correspondences {
        match intr.project_camera(&tf.apply(point)) {
            Some(p) => total += (p - pixel).norm_squared(),
            None => return f64::INFINITY,
        }
    }
    total
}

/// Sum of squared reprojection errors in pixels². Infinite when any point is
/// behind the camera.
pub fn reprojection_cost(pose: &Pose, correspondences: &[Correspondence], intrinsics: &CameraIntrinsics) -> f64 {
    cost(&Transform::from_pose(pose), correspondences, intrinsics)
}

/// Residual and its Jacobian with respect to the left perturbation `(ω, τ)`.
fn residual_jacobian(
    xc: &Vector3<f64>,
    pixel: &Vector2<f64>,
    intr: &CameraIntrinsics,
) -> Option<(Vector2<f64>, nalgebra::Matrix2x6<f64>)> {
    if xc.z <= BEHIND_EPSILON {
        return None;
    }
    let inv_z = 1.0 / xc.z;
    let r = Vector2::new(
        intr.fx * xc.x * inv_z + intr.cx - pixel.x,
        intr.fy * xc.y * inv_z + intr.cy - pixel.y,
    );
    let dproj = Matrix2x3::new(
        intr.fx * inv_z,
        0.0,
        -intr.fx * xc.x * inv_z * inv_z,
        0.0,
        intr.fy * inv_z,
        -intr.fy * xc.y * inv_z * inv_z,
    );
    let mut dx = nalgebra::Matrix3x6::zeros();
    dx.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-xc.cross_matrix()));
    dx.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    Some((r, dproj * dx))
}

/// Pose whose world-to-camera transform is left-perturbed by `delta = (ω, τ)`.
pub fn perturb_pose(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    Transform::from_pose(pose).perturbed(delta).to_pose()
}

/// Jacobian of the projected pixel of `point` with respect to the
/// perturbation applied by [`perturb_pose`], at `delta = 0`. `None` when the
/// point is behind the camera.
pub fn projection_jacobian(
    pose: &Pose,
    point: &Vector3<f64>,
    intrinsics: &CameraIntrinsics,
) -> Option<nalgebra::Matrix2x6<f64>> {
    let xc = Transform::from_pose(pose).apply(point);
    residual_jacobian(&xc, &Vector2::zeros(), intrinsics).map(|(_, j)| j)
}

/// Levenberg-Marquardt minimization of the summed squared reprojection error
/// over a 6-parameter pose perturbation. The returned cost never exceeds the
/// initial one.
pub fn refine_pose(initial: &Pose, correspondences: &[Correspondence], intrinsics: &CameraIntrinsics) -> Refinement {
    let mut tf = Transform::from_pose(initial);
    let initial_cost = cost(&tf, correspondences, intrinsics);
    let mut current = initial_cost;
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut moved = false;
    if initial_cost.is_finite() && correspondences.len() >= 3 {
        while iterations < MAX_ITERATIONS {
            iterations += 1;
            let mut jtj = Matrix6::<f64>::zeros();
            let mut jtr = Vector6::<f64>::zeros();
            for (pixel, point) in correspondences {
                let Some((r, j)) = residual_jacobian(&tf.apply(point), pixel, intrinsics) else {
                    break;
                };
                jtj += j.transpose() * j;
                jtr += j.transpose() * r;
            }
            if jtr.norm() < GRADIENT_TOLERANCE {
                break;
            }
            let mut improved = false;
            while lambda < 1e12 {
                let mut damped = jtj;
                for i in 0..6 {
                    damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
                }
                let Some(step) = damped.cholesky().map(|c| c.solve(&(-jtr))) else {
                    lambda *= 10.0;
                    continue;
                };
                if step.norm() < STEP_TOLERANCE {
                    break;
                }
                let candidate = tf.perturbed(&step);
                let c = cost(&candidate, correspondences, intrinsics);
                if c < current {
                    tf = candidate;
                    current = c;
                    lambda = (lambda * 0.1).max(1e-12);
                    improved = true;
                    moved = true;
                    break;
                }
                lambda *= 10.0;
            }
            if !improved {
                break;
            }
        }
    }
    Refinement {
        pose: if moved { tf.to_pose() } else { *initial },
        initial_cost,
        final_cost: current,
        iterations,
    }
}
