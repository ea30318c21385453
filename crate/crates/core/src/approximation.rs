//! Pose approximation from the poses of the top-k retrieved images.
//!
//! The query pose is the weighted combination `P_q = Σ w_i P_i` of the
//! retrieved poses, with weights from one of three schemes:
//!
//! * **EWB**: equal weights `1/k`;
//! * **BDI**: the affine combination of database descriptors that best
//!   reconstructs the query descriptor (equality-constrained least squares);
//! * **CSI**: cosine similarities raised to the power `alpha` and normalized.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::geometry::{blend_poses, GeometryError, Pose};
use crate::retrieval::{dot, normalized, DescriptorSet, Ranking, RetrievalError};
use crate::ImageId;

pub const DEFAULT_ALPHA: f64 = 8.0;
pub const DEFAULT_BDI_REGULARIZATION: f64 = 1e-8;
/// Tolerance on `‖d‖ = 1` for CSI inputs.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ApproximationError {
    #[error("descriptor dimensions differ: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("descriptor is not unit length (norm {0})")]
    NotNormalized(f64),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("ranking is empty")]
    EmptyRanking,
    #[error("no pose for database image {0}")]
    MissingPose(ImageId),
    #[error("no descriptor for image {0}")]
    MissingDescriptor(ImageId),
    #[error("barycentric system is singular")]
    SingularSystem,
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WeightingMethod {
    Ewb,
    Bdi,
    Csi,
}

impl WeightingMethod {
    pub const ALL: [WeightingMethod; 3] = [Self::Ewb, Self::Bdi, Self::Csi];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ewb => "ewb",
            Self::Bdi => "bdi",
            Self::Csi => "csi",
        }
    }
}

impl fmt::Display for WeightingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightingMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ewb" => Ok(Self::Ewb),
            "bdi" => Ok(Self::Bdi),
            "csi" => Ok(Self::Csi),
            other => Err(format!("unknown weighting method `{other}` (expected ewb, bdi or csi)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproximationConfig {
    pub method: WeightingMethod,
    pub k: usize,
    /// CSI exponent.
    pub alpha: f64,
    /// Tikhonov weight on `‖w‖²` in the BDI system.
    pub bdi_regularization: f64,
    /// Cosine similarities are clamped from below to this value before
    /// exponentiation.
    pub csi_similarity_floor: f64,
}

impl ApproximationConfig {
    pub fn new(method: WeightingMethod, k: usize) -> Self {
        Self {
            method,
            k,
            alpha: DEFAULT_ALPHA,
            bdi_regularization: DEFAULT_BDI_REGULARIZATION,
            csi_similarity_floor: 0.0,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<(), ApproximationError> {
        if self.k == 0 {
            return Err(ApproximationError::InvalidK);
        }
        Ok(())
    }
}

pub fn weights_ewb(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

/// Minimizes `‖d_q − Σ w_i d_i‖² + λ‖w‖²` subject to `Σ w_i = 1` through the
/// KKT system
///
/// ```text
/// [ 2(DᵀD + λI)  1 ] [w]   [2Dᵀd_q]
/// [      1ᵀ      0 ] [μ] = [  1   ]
/// ```
///
/// Weights are unconstrained in sign.
pub fn weights_bdi(query: &[f64], db: &[&[f64]], regularization: f64) -> Result<Vec<f64>, ApproximationError> {
    let k = db.len();
    if k == 0 {
        return Err(ApproximationError::InvalidK);
    }
    for d in db {
        if d.len() != query.len() {
            return Err(ApproximationError::DimensionMismatch {
                expected: query.len(),
                found: d.len(),
            });
        }
    }
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let mut kkt = DMatrix::<f64>::zeros(k + 1, k + 1);
    let mut rhs = DVector::<f64>::zeros(k + 1);
    for i in 0..k {
        for j in 0..k {
            kkt[(i, j)] = 2.0 * dot(db[i], db[j]);
        }
        kkt[(i, i)] += 2.0 * regularization;
        kkt[(i, k)] = 1.0;
        kkt[(k, i)] = 1.0;
        rhs[i] = 2.0 * dot(db[i], query);
    }
    rhs[k] = 1.0;
    let sol = kkt
        .clone()
        .lu()
        .solve(&rhs)
        .or_else(|| kkt.svd(true, true).solve(&rhs, 1e-14).ok())
        .ok_or(ApproximationError::SingularSystem)?;
    let mut w: Vec<f64> = sol.iter().take(k).copied().collect();
    if w.iter().any(|x| !x.is_finite()) {
        return Err(ApproximationError::SingularSystem);
    }
    // Project back onto Σw = 1 to absorb round-off.
    let drift = (1.0 - w.iter().sum::<f64>()) / k as f64;
    w.iter_mut().for_each(|x| *x += drift);
    Ok(w)
}

/// `w_i = s_i^α / Σ_j s_j^α` with `s_i = max(d_qᵀ d_i, floor)`. Falls back to
/// EWB when `alpha == 0` or all similarities are zero.
pub fn weights_csi(query: &[f64], db: &[&[f64]], alpha: f64, floor: f64) -> Result<Vec<f64>, ApproximationError> {
    let k = db.len();
    if k == 0 {
        return Err(ApproximationError::InvalidK);
    }
    check_unit(query)?;
    for d in db {
        if d.len() != query.len() {
            return Err(ApproximationError::DimensionMismatch {
                expected: query.len(),
                found: d.len(),
            });
        }
        check_unit(d)?;
    }
    if alpha == 0.0 {
        return Ok(weights_ewb(k));
    }
    let sims: Vec<f64> = db.iter().map(|d| dot(query, d).max(floor)).collect();
    let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= 0.0 {
        return Ok(weights_ewb(k));
    }
    // Powers of ratios to the largest similarity cannot overflow.
    let powered: Vec<f64> = sims.iter().map(|s| (s / max).max(0.0).powf(alpha)).collect();
    let z: f64 = powered.iter().sum();
    Ok(powered.iter().map(|p| p / z).collect())
}

fn check_unit(v: &[f64]) -> Result<(), ApproximationError> {
    let n = dot(v, v).sqrt();
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(ApproximationError::NotNormalized(n));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseApproximation {
    pub pose: Pose,
    pub weights: Vec<f64>,
    /// Number of retrieved images actually combined (`min(k, ranking length)`).
    pub effective_k: usize,
}

/// Weights for the top `k` images of `ranking` under `config`.
pub fn compute_weights(
    query: &[f64],
    top: &[&[f64]],
    config: &ApproximationConfig,
) -> Result<Vec<f64>, ApproximationError> {
    match config.method {
        WeightingMethod::Ewb => Ok(weights_ewb(top.len())),
        WeightingMethod::Bdi => weights_bdi(query, top, config.bdi_regularization),
        WeightingMethod::Csi => weights_csi(query, top, config.alpha, config.csi_similarity_floor),
    }
}

/// Approximates the query pose from the poses of its top-k retrieved images.
/// Descriptors are L2-normalized before computing BDI or CSI weights.
pub fn approximate_pose(
    query: &[f64],
    ranking: &Ranking,
    db_descriptors: &DescriptorSet,
    db_poses: &BTreeMap<ImageId, Pose>,
    config: &ApproximationConfig,
) -> Result<PoseApproximation, ApproximationError> {
    config.validate()?;
    let top = ranking.top(config.k);
    if top.is_empty() {
        return Err(ApproximationError::EmptyRanking);
    }
    let poses: Vec<Pose> = top
        .iter()
        .map(|item| {
            db_poses
                .get(&item.id)
                .copied()
                .ok_or_else(|| ApproximationError::MissingPose(item.id.clone()))
        })
        .collect::<Result<_, _>>()?;
    if top.len() == 1 {
        return Ok(PoseApproximation {
            pose: poses[0],
            weights: vec![1.0],
            effective_k: 1,
        });
    }
    let weights = if config.method == WeightingMethod::Ewb {
        weights_ewb(top.len())
    } else {
        let q = normalized(&ranking.query, query)?;
        let descs: Vec<Vec<f64>> = top
            .iter()
            .map(|item| {
                let d = db_descriptors
                    .get(&item.id)
                    .ok_or_else(|| ApproximationError::MissingDescriptor(item.id.clone()))?;
                Ok(normalized(&item.id, d)?)
            })
            .collect::<Result<_, ApproximationError>>()?;
        let refs: Vec<&[f64]> = descs.iter().map(Vec::as_slice).collect();
        compute_weights(&q, &refs, config)?
    };
    let pose = blend_poses(&poses, &weights)?;
    Ok(PoseApproximation {
        pose,
        weights,
        effective_k: top.len(),
    })
}
