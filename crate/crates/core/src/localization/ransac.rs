use nalgebra::{Vector2, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, Pose};

use super::{p3p, refine_pose, Correspondence};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    /// Reprojection error, in pixels, up to which a correspondence is an inlier.
    pub inlier_threshold: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            inlier_threshold: 8.0,
            confidence: 0.9999,
            max_iterations: 10_000,
            min_inliers: 12,
            seed: 0,
        }
    }
}

impl RansacParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.inlier_threshold.is_nan() || self.inlier_threshold <= 0.0 {
            return Err(format!("inlier threshold must be positive, got {}", self.inlier_threshold));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(format!("confidence must lie in (0, 1), got {}", self.confidence));
        }
        if self.max_iterations == 0 {
            return Err("max_iterations must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("best hypothesis has {best_inliers} inliers, {required} required")]
pub struct RansacFailure {
    pub best_inliers: usize,
    pub required: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacOutput {
    pub pose: Pose,
    pub inliers: Vec<bool>,
    pub num_inliers: usize,
    pub iterations: usize,
}

/// Pixel distance between the observation and the projected point; infinite
/// for points behind the camera.
pub fn reprojection_error(pose: &Pose, pixel: &Vector2<f64>, point: &Vector3<f64>, intr: &CameraIntrinsics) -> f64 {
    intr.project_camera(&pose.world_to_camera(point))
        .map_or(f64::INFINITY, |p| (p - pixel).norm())
}

fn inlier_mask(pose: &Pose, correspondences: &[Correspondence], intr: &CameraIntrinsics, threshold: f64) -> Vec<bool> {
    correspondences
        .iter()
        .map(|(px, x)| reprojection_error(pose, px, x, intr) <= threshold)
        .collect()
}

/// Iterations needed to draw one all-inlier sample of size 4 with the given confidence.
fn required_iterations(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    let p_good = inlier_ratio.powi(4);
    if p_good >= 1.0 {
        return 1;
    }
    if p_good <= 0.0 {
        return cap;
    }
    let n = ((1.0 - confidence).ln() / (1.0 - p_good).ln()).ceil();
    if n.is_finite() && n < cap as f64 {
        (n as usize).max(1)
    } else {
        cap
    }
}

/// Robust absolute pose from 2D-3D correspondences. Each hypothesis comes from
/// P3P on three sampled correspondences; a fourth sampled correspondence picks
/// among the P3P solutions. The best hypothesis is refined on its inliers.
///
/// Fails when fewer than `min_inliers` correspondences survive.
pub fn pnp_ransac(
    correspondences: &[Correspondence],
    intrinsics: &CameraIntrinsics,
    params: &RansacParams,
) -> Result<RansacOutput, RansacFailure> {
    let fail = |best_inliers| RansacFailure {
        best_inliers,
        required: params.min_inliers,
    };
    let n = correspondences.len();
    if n < 4 {
        return Err(fail(0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let bearings: Vec<Vector3<f64>> = correspondences
        .iter()
        .map(|(px, _)| intrinsics.bearing(px).into_inner())
        .collect();

    let mut best: Option<(Pose, usize)> = None;
    let mut needed = params.max_iterations;
    let mut iterations = 0;
    while iterations < needed {
        iterations += 1;
        let idx = sample(&mut rng, n, 4);
        let (i0, i1, i2, i3) = (idx.index(0), idx.index(1), idx.index(2), idx.index(3));
        let sols = p3p(
            &[bearings[i0], bearings[i1], bearings[i2]],
            &[correspondences[i0].1, correspondences[i1].1, correspondences[i2].1],
        );
        let (check_px, check_x) = &correspondences[i3];
        let Some(hypothesis) = sols
            .into_iter()
            .map(|p| (reprojection_error(&p, check_px, check_x, intrinsics), p))
            .filter(|(e, _)| *e <= params.inlier_threshold)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, p)| p)
        else {
            continue;
        };
        let count = inlier_mask(&hypothesis, correspondences, intrinsics, params.inlier_threshold)
            .iter()
            .filter(|b| **b)
            .count();
        if best.as_ref().is_none_or(|(_, c)| count > *c) {
            best = Some((hypothesis, count));
            needed = required_iterations(count as f64 / n as f64, params.confidence, params.max_iterations);
        }
    }

    let Some((pose, count)) = best else {
        return Err(fail(0));
    };
    let mask = inlier_mask(&pose, correspondences, intrinsics, params.inlier_threshold);
    let inliers: Vec<Correspondence> = correspondences
        .iter()
        .zip(&mask)
        .filter(|(_, m)| **m)
        .map(|(c, _)| *c)
        .collect();
    let (pose, mask) = if inliers.len() >= 4 {
        let refined = refine_pose(&pose, &inliers, intrinsics).pose;
        let refined_mask = inlier_mask(&refined, correspondences, intrinsics, params.inlier_threshold);
        let refined_count = refined_mask.iter().filter(|b| **b).count();
        if refined_count >= count.min(params.min_inliers) {
            (refined, refined_mask)
        } else {
            (pose, mask)
        }
    } else {
        (pose, mask)
    };
    let num_inliers = mask.iter().filter(|b| **b).count();
    if num_inliers < params.min_inliers {
        return Err(fail(num_inliers));
    }
    Ok(RansacOutput {
        pose,
        inliers: mask,
        num_inliers,
        iterations,
    })
}
