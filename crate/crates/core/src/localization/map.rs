use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use petgraph::unionfind::UnionFind;

use crate::geometry::{CameraIntrinsics, Pose};
use crate::ImageId;

use super::{triangulate, Keypoints, MatchSet, TriangulationError};

/// Keypoint observations linked by matches, sorted by `(image, keypoint)`.
pub type Track = Vec<(ImageId, u32)>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MapError {
    #[error("point {0} has fewer than two observations")]
    TooFewObservations(u64),
    #[error("point id {0} already exists")]
    DuplicatePoint(u64),
    #[error("keypoint {1} of {0} already observes point {2}")]
    KeypointReused(ImageId, u32, u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapPoint {
    pub position: Vector3<f64>,
    pub observations: BTreeSet<(ImageId, u32)>,
}

/// 3D points with their observing keypoints and the reverse index from
/// keypoint to point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointMap {
    points: BTreeMap<u64, MapPoint>,
    index: BTreeMap<(ImageId, u32), u64>,
}

impl PointMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: u64, point: MapPoint) -> Result<(), MapError> {
        if point.observations.len() < 2 {
            return Err(MapError::TooFewObservations(id));
        }
        if self.points.contains_key(&id) {
            return Err(MapError::DuplicatePoint(id));
        }
        for obs in &point.observations {
            if let Some(other) = self.index.get(obs) {
                return Err(MapError::KeypointReused(obs.0.clone(), obs.1, *other));
            }
        }
        for obs in &point.observations {
            self.index.insert(obs.clone(), id);
        }
        self.points.insert(id, point);
        Ok(())
    }

    pub fn get(&self, id: u64) -> Option<&MapPoint> {
        self.points.get(&id)
    }

    /// Point observed by a keypoint, if any.
    pub fn point_for(&self, image: &str, keypoint: u32) -> Option<(u64, &MapPoint)> {
        let id = *self.index.get(&(image.to_string(), keypoint))?;
        Some((id, &self.points[&id]))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&u64, &MapPoint)> {
        self.points.iter()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_observations(&self) -> usize {
        self.index.len()
    }

    /// Checks that the forward observations and the reverse index describe
    /// the same bijection.
    pub fn is_consistent(&self) -> bool {
        let forward: usize = self.points.values().map(|p| p.observations.len()).sum();
        forward == self.index.len()
            && self.points.iter().all(|(id, p)| {
                p.observations.len() >= 2 && p.observations.iter().all(|o| self.index.get(o) == Some(id))
            })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MapStats {
    pub tracks: usize,
    /// Tracks containing two keypoints of the same image.
    pub inconsistent_tracks: usize,
    /// Tracks skipped because an image lacks a pose, intrinsics or the keypoint.
    pub unusable_tracks: usize,
    pub degenerate_baseline: usize,
    pub behind_camera: usize,
    pub points: usize,
}

/// Groups matched keypoints into tracks by union-find over match edges.
/// Tracks with two keypoints of the same image are dropped and counted.
/// Tracks come out ordered by their smallest observation.
pub fn build_tracks(matches: &MatchSet) -> (Vec<Track>, usize) {
    let mut nodes: BTreeSet<(&str, u32)> = BTreeSet::new();
    for ((a, b), pairs) in matches.iter() {
        for &(ka, kb) in pairs {
            nodes.insert((a.as_str(), ka));
            nodes.insert((b.as_str(), kb));
        }
    }
    let nodes: Vec<(&str, u32)> = nodes.into_iter().collect();
    let position = |n: (&str, u32)| nodes.binary_search(&n).expect("node registered above");
    let mut uf = UnionFind::<usize>::new(nodes.len());
    for ((a, b), pairs) in matches.iter() {
        for &(ka, kb) in pairs {
            uf.union(position((a.as_str(), ka)), position((b.as_str(), kb)));
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..nodes.len() {
        groups.entry(uf.find(i)).or_default().push(i);
    }
    let mut tracks: Vec<Vec<usize>> = groups.into_values().collect();
    tracks.sort_by_key(|t| t[0]);

    let mut inconsistent = 0;
    let tracks = tracks
        .into_iter()
        .filter_map(|members| {
            let mut images = BTreeSet::new();
            if members.iter().all(|&i| images.insert(nodes[i].0)) {
                Some(members.iter().map(|&i| (nodes[i].0.to_string(), nodes[i].1)).collect())
            } else {
                inconsistent += 1;
                None
            }
        })
        .collect();
    (tracks, inconsistent)
}

/// Triangulates every consistent track using the given database poses.
/// Points are numbered in track order; failed triangulations are dropped.
pub fn build_global_map(
    poses: &BTreeMap<ImageId, Pose>,
    intrinsics: &BTreeMap<ImageId, CameraIntrinsics>,
    keypoints: &Keypoints,
    matches: &MatchSet,
    min_tri_angle_deg: f64,
) -> (PointMap, MapStats) {
    let (tracks, inconsistent) = build_tracks(matches);
    let mut stats = MapStats {
        tracks: tracks.len(),
        inconsistent_tracks: inconsistent,
        ..MapStats::default()
    };
    let mut map = PointMap::new();
    let mut next_id = 0u64;
    for track in tracks {
        let views: Option<Vec<_>> = track
            .iter()
            .map(|(image, kp)| {
                let pixel = keypoints.get(image)?.get(*kp as usize)?;
                Some((*pixel, *poses.get(image)?, *intrinsics.get(image)?))
            })
            .collect();
        let Some(views) = views else {
            stats.unusable_tracks += 1;
            continue;
        };
        match triangulate(&views, min_tri_angle_deg) {
            Ok(position) => {
                let point = MapPoint {
                    position,
                    observations: track.into_iter().collect(),
                };
                map.insert(next_id, point).expect("tracks are disjoint and have two or more observations");
                next_id += 1;
            }
            Err(TriangulationError::BehindCamera) => stats.behind_camera += 1,
            Err(_) => stats.degenerate_baseline += 1,
        }
    }
    stats.points = map.len();
    (map, stats)
}
