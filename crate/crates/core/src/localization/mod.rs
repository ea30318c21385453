//! Structure-based localization: triangulation, P3P inside RANSAC, pose
//! refinement, point-map construction and the two localization pipelines
//! (local map built from the retrieved images, or a pre-built global map).

mod localize;
mod map;
mod p3p;
mod ransac;
mod refine;
mod triangulation;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector2;

use crate::geometry::Pose;
use crate::ImageId;

pub use localize::{collect_correspondences, localize_global, localize_local_sfm, query_seed, LocalSfmInput, QueryView};
pub use map::{build_global_map, build_tracks, MapError, MapPoint, MapStats, PointMap, Track};
pub use p3p::p3p;
pub use ransac::{pnp_ransac, reprojection_error, RansacFailure, RansacOutput, RansacParams};
pub use refine::{perturb_pose, projection_jacobian, refine_pose, reprojection_cost, Refinement};
pub use triangulation::{triangulate, TriangulationError, DEFAULT_MIN_TRIANGULATION_ANGLE};

/// Keypoint pixel coordinates per image; the index in the vector is the keypoint id.
pub type Keypoints = BTreeMap<ImageId, Vec<Vector2<f64>>>;

/// 2D-3D correspondence: observed pixel and world point.
pub type Correspondence = (Vector2<f64>, nalgebra::Vector3<f64>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MatchError {
    #[error("image {0} cannot be matched with itself")]
    SelfMatch(ImageId),
    #[error("keypoint {keypoint} of {image} appears twice in the matches with {other}")]
    NotOneToOne {
        image: ImageId,
        other: ImageId,
        keypoint: u32,
    },
}

/// Keypoint matches between image pairs, stored under the lexicographically
/// ordered pair `(a, b)` with `a < b`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchSet {
    pairs: BTreeMap<(ImageId, ImageId), Vec<(u32, u32)>>,
}

impl MatchSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds matches `(keypoint in a, keypoint in b)`, appending to any matches
    /// already stored for the pair. The pair is canonicalized and the
    /// one-to-one property is checked on both sides.
    pub fn insert(
        &mut self,
        a: impl Into<ImageId>,
        b: impl Into<ImageId>,
        matches: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<(), MatchError> {
        let (a, b) = (a.into(), b.into());
        if a == b {
            return Err(MatchError::SelfMatch(a));
        }
        let (key, swap) = if a < b { ((a, b), false) } else { ((b, a), true) };
        let mut merged = self.pairs.get(&key).cloned().unwrap_or_default();
        merged.extend(matches.into_iter().map(|(x, y)| if swap { (y, x) } else { (x, y) }));
        let mut left = BTreeSet::new();
        let mut right = BTreeSet::new();
        for &(x, y) in &merged {
            if !left.insert(x) {
                return Err(MatchError::NotOneToOne {
                    image: key.0.clone(),
                    other: key.1.clone(),
                    keypoint: x,
                });
            }
            if !right.insert(y) {
                return Err(MatchError::NotOneToOne {
                    image: key.1.clone(),
                    other: key.0.clone(),
                    keypoint: y,
                });
            }
        }
        self.pairs.insert(key, merged);
        Ok(())
    }

    /// Matches between `a` and `b`, oriented as `(keypoint in a, keypoint in b)`.
    pub fn get(&self, a: &str, b: &str) -> Option<Vec<(u32, u32)>> {
        if a < b {
            self.pairs.get(&(a.to_string(), b.to_string())).cloned()
        } else {
            self.pairs
                .get(&(b.to_string(), a.to_string()))
                .map(|m| m.iter().map(|&(x, y)| (y, x)).collect())
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(ImageId, ImageId), &Vec<(u32, u32)>)> {
        self.pairs.iter()
    }

    /// Number of image pairs.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn total_matches(&self) -> usize {
        self.pairs.values().map(Vec::len).sum()
    }

    /// Pairs whose both images satisfy `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&str) -> bool) -> Self {
        Self {
            pairs: self
                .pairs
                .iter()
                .filter(|((a, b), _)| keep(a) && keep(b))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FailureKind {
    /// Fewer than two retrieved images share a consistent track with the query.
    InsufficientRelevant,
    /// Not enough 2D-3D matches to attempt pose estimation.
    MatchingTooWeak,
    /// Triangulation gates removed the points the query was matched to.
    DegenerateBaseline,
    /// No pose with enough inliers.
    RansacFailed,
}

impl FailureKind {
    pub const ALL: [FailureKind; 4] = [
        Self::InsufficientRelevant,
        Self::MatchingTooWeak,
        Self::DegenerateBaseline,
        Self::RansacFailed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::InsufficientRelevant => "insufficient_relevant",
            Self::MatchingTooWeak => "matching_too_weak",
            Self::DegenerateBaseline => "degenerate_baseline",
            Self::RansacFailed => "ransac_failed",
        }
    }
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FailureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown failure kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Success { pose: Pose, inliers: usize, matches: usize },
    Failure(FailureKind),
}

impl Outcome {
    pub fn pose(&self) -> Option<&Pose> {
        match self {
            Self::Success { pose, .. } => Some(pose),
            Self::Failure(_) => None,
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, Self::Success { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub query: ImageId,
    pub k: usize,
    pub outcome: Outcome,
}

impl LocalizationResult {
    pub fn failure(query: &str, k: usize, kind: FailureKind) -> Self {
        Self {
            query: query.to_string(),
            k,
            outcome: Outcome::Failure(kind),
        }
    }
}
