//! Global-descriptor ranking, ground-truth relevance and P@k / R@k.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{pose_position_error, pose_rotation_error, Pose};
use crate::ImageId;

/// Norm below which a descriptor cannot be normalized.
pub const MIN_DESCRIPTOR_NORM: f64 = 1e-12;
pub const DEFAULT_RELEVANCE_DISTANCE: f64 = 25.0;
pub const DEFAULT_RELEVANCE_ANGLE: f64 = 45.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrievalError {
    #[error("descriptor dimension must be at least 1")]
    ZeroDimension,
    #[error("descriptor of {id} has dimension {found}, expected {expected}")]
    DimensionMismatch { id: String, expected: usize, found: usize },
    #[error("descriptor of {0} has zero norm")]
    ZeroDescriptor(String),
    #[error("database is empty")]
    EmptyDatabase,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("no descriptor for image {0}")]
    MissingDescriptor(String),
}

/// Fixed-dimension global descriptors keyed by image id.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    dimension: usize,
    entries: BTreeMap<ImageId, Vec<f64>>,
}

impl DescriptorSet {
    pub fn new(dimension: usize) -> Result<Self, RetrievalError> {
        if dimension == 0 {
            return Err(RetrievalError::ZeroDimension);
        }
        Ok(Self {
            dimension,
            entries: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, id: impl Into<ImageId>, vector: Vec<f64>) -> Result<(), RetrievalError> {
        let id = id.into();
        if vector.len() != self.dimension {
            return Err(RetrievalError::DimensionMismatch {
                id,
                expected: self.dimension,
                found: vector.len(),
            });
        }
        self.entries.insert(id, vector);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    /// Entries in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&ImageId, &[f64])> {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// Copy restricted to the given ids (missing ids are skipped).
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a ImageId>) -> Self {
        let entries = ids
            .into_iter()
            .filter_map(|id| self.entries.get(id).map(|v| (id.clone(), v.clone())))
            .collect();
        Self {
            dimension: self.dimension,
            entries,
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Unit-length copy of a single vector.
pub fn normalized(id: &str, v: &[f64]) -> Result<Vec<f64>, RetrievalError> {
    let n = l2_norm(v);
    if n.is_nan() || n < MIN_DESCRIPTOR_NORM {
        return Err(RetrievalError::ZeroDescriptor(id.to_string()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Divides every descriptor by its Euclidean norm.
pub fn normalize_all(descriptors: &DescriptorSet) -> Result<DescriptorSet, RetrievalError> {
    let mut out = DescriptorSet::new(descriptors.dimension)?;
    for (id, v) in descriptors.iter() {
        out.entries.insert(id.clone(), normalized(id, v)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub id: ImageId,
    pub score: f64,
}

/// Retrieval result for one query, sorted by descending score with ties
/// broken by ascending id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub query: ImageId,
    pub items: Vec<RankedItem>,
}

impl Ranking {
    pub fn ids(&self) -> impl Iterator<Item = &ImageId> {
        self.items.iter().map(|i| &i.id)
    }

    /// The first `min(k, len)` ids.
    pub fn top(&self, k: usize) -> &[RankedItem] {
        &self.items[..k.min(self.items.len())]
    }
}

/// Exhaustive cosine-similarity ranking of the database against one query.
pub fn rank_database(
    query_id: &str,
    query: &[f64],
    database: &DescriptorSet,
    k: usize,
) -> Result<Ranking, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    if query.len() != database.dimension {
        return Err(RetrievalError::DimensionMismatch {
            id: query_id.to_string(),
            expected: database.dimension,
            found: query.len(),
        });
    }
    if database.is_empty() {
        return Err(RetrievalError::EmptyDatabase);
    }
    let q = normalized(query_id, query)?;
    let mut items = database
        .iter()
        .map(|(id, d)| {
            let n = l2_norm(d);
            if n.is_nan() || n < MIN_DESCRIPTOR_NORM {
                return Err(RetrievalError::ZeroDescriptor(id.clone()));
            }
            Ok(RankedItem {
                id: id.clone(),
                score: dot(&q, d) / n,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    items.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    items.truncate(k);
    Ok(Ranking {
        query: query_id.to_string(),
        items,
    })
}

/// Ranks every query against the database in parallel; output follows the
/// order of `queries`.
pub fn rank_all(
    queries: &[ImageId],
    descriptors: &DescriptorSet,
    database: &DescriptorSet,
    k: usize,
) -> Result<Vec<Ranking>, RetrievalError> {
    queries
        .par_iter()
        .map(|q| {
            let v = descriptors
                .get(q)
                .ok_or_else(|| RetrievalError::MissingDescriptor(q.clone()))?;
            rank_database(q, v, database, k)
        })
        .collect()
}

/// `|A ∩ B| / |A ∪ B|`, 0 for two empty sets.
pub fn iou_relevance(a: &BTreeSet<u64>, b: &BTreeSet<u64>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn pose_relevance(query: &Pose, db: &Pose, max_distance: f64, max_angle_deg: f64) -> bool {
    pose_position_error(query, db) <= max_distance && pose_rotation_error(query, db) <= max_angle_deg
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelevanceMode {
    Iou,
    Pose,
}

/// Ground truth deciding whether a database image is relevant to a query.
#[derive(Debug, Clone)]
pub enum RelevanceOracle {
    /// Relevant iff the two images share at least one observed 3D point.
    Iou {
        observations: BTreeMap<ImageId, BTreeSet<u64>>,
    },
    /// Relevant iff the camera poses are close in position and orientation.
    Pose {
        poses: BTreeMap<ImageId, Pose>,
        max_distance: f64,
        max_angle_deg: f64,
    },
}

impl RelevanceOracle {
    pub fn iou(observations: BTreeMap<ImageId, BTreeSet<u64>>) -> Self {
        Self::Iou { observations }
    }

    pub fn pose(poses: BTreeMap<ImageId, Pose>) -> Self {
        Self::Pose {
            poses,
            max_distance: DEFAULT_RELEVANCE_DISTANCE,
            max_angle_deg: DEFAULT_RELEVANCE_ANGLE,
        }
    }

    pub fn mode(&self) -> RelevanceMode {
        match self {
            Self::Iou { .. } => RelevanceMode::Iou,
            Self::Pose { .. } => RelevanceMode::Pose,
        }
    }

    pub fn is_relevant(&self, query: &str, db: &str) -> bool {
        match self {
            Self::Iou { observations } => match (observations.get(query), observations.get(db)) {
                (Some(a), Some(b)) => iou_relevance(a, b) > 0.0,
                _ => false,
            },
            Self::Pose {
                poses,
                max_distance,
                max_angle_deg,
            } => match (poses.get(query), poses.get(db)) {
                (Some(a), Some(b)) => pose_relevance(a, b, *max_distance, *max_angle_deg),
                _ => false,
            },
        }
    }

    /// A query has ground truth when at least one database image is relevant to it.
    pub fn has_ground_truth<'a>(&self, query: &str, database: impl IntoIterator<Item = &'a ImageId>) -> bool {
        database.into_iter().any(|db| self.is_relevant(query, db))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAtK {
    pub value: f64,
    /// The ranking held fewer than k items; `value` is over the available ones.
    pub short: bool,
}

pub fn precision_at_k(ranking: &Ranking, oracle: &RelevanceOracle, k: usize) -> PrecisionAtK {
    let top = ranking.top(k);
    let short = top.len() < k;
    if top.is_empty() {
        return PrecisionAtK { value: 0.0, short };
    }
    let relevant = top.iter().filter(|i| oracle.is_relevant(&ranking.query, &i.id)).count();
    PrecisionAtK {
        value: relevant as f64 / top.len() as f64,
        short,
    }
}

/// Whether any of the top k items is relevant.
pub fn recall_at_k(ranking: &Ranking, oracle: &RelevanceOracle, k: usize) -> bool {
    ranking.top(k).iter().any(|i| oracle.is_relevant(&ranking.query, &i.id))
}

/// Dataset-level P@k and R@k over the queries that have ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSummary {
    pub k: usize,
    pub mean_precision: f64,
    pub mean_recall: f64,
    /// Queries included in the means.
    pub evaluated: usize,
    /// Queries without any relevant database image, excluded from the means.
    pub undefined: usize,
    /// Evaluated queries whose ranking was shorter than k.
    pub short_rankings: usize,
}

pub fn evaluate_rankings(
    rankings: &[Ranking],
    oracle: &RelevanceOracle,
    database: &[ImageId],
    k: usize,
) -> RetrievalSummary {
    let per_query: Vec<Option<(PrecisionAtK, bool)>> = rankings
        .par_iter()
        .map(|r| {
            oracle
                .has_ground_truth(&r.query, database)
                .then(|| (precision_at_k(r, oracle, k), recall_at_k(r, oracle, k)))
        })
        .collect();
    let evaluated: Vec<_> = per_query.iter().flatten().collect();
    let n = evaluated.len();
    let mean = |f: &dyn Fn(&(PrecisionAtK, bool)) -> f64| {
        if n == 0 {
            0.0
        } else {
            evaluated.iter().map(|e| f(e)).sum::<f64>() / n as f64
        }
    };
    RetrievalSummary {
        k,
        mean_precision: mean(&|e| e.0.value),
        mean_recall: mean(&|e| if e.1 { 1.0 } else { 0.0 }),
        evaluated: n,
        undefined: rankings.len() - n,
        short_rankings: evaluated.iter().filter(|e| e.0.short).count(),
    }
}
