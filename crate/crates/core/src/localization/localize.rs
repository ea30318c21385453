use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector2;

use crate::geometry::{CameraIntrinsics, Pose};
use crate::retrieval::Ranking;
use crate::ImageId;

use super::{
    build_global_map, build_tracks, pnp_ransac, Correspondence, FailureKind, Keypoints, LocalizationResult,
    MatchSet, Outcome, PointMap, RansacParams,
};

/// The query side of a localization problem.
#[derive(Debug, Clone, Copy)]
pub struct QueryView<'a> {
    pub id: &'a str,
    pub keypoints: &'a [Vector2<f64>],
    pub intrinsics: &'a CameraIntrinsics,
}

/// Database data needed to build a local map on the fly. `matches` may hold
/// pairs outside the retrieved set; they are filtered per query.
#[derive(Debug, Clone, Copy)]
pub struct LocalSfmInput<'a> {
    pub poses: &'a BTreeMap<ImageId, Pose>,
    pub intrinsics: &'a BTreeMap<ImageId, CameraIntrinsics>,
    pub keypoints: &'a Keypoints,
    pub matches: &'a MatchSet,
    pub min_tri_angle_deg: f64,
}

/// Per-query RANSAC seed derived from the run seed, the query id and `k`
/// (FNV-1a), so results do not depend on scheduling.
pub fn query_seed(run_seed: u64, query: &str, k: usize) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    run_seed
        .to_le_bytes()
        .iter()
        .chain(query.as_bytes())
        .chain(&[0xff])
        .chain(&(k as u64).to_le_bytes())
        .fold(OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(PRIME))
}

/// 2D-3D candidates from the query's matches to the top-k images. A query
/// keypoint matched into several images keeps the match from the
/// best-ranked one.
pub fn collect_correspondences(
    query: &QueryView<'_>,
    ranking: &Ranking,
    k: usize,
    matches: &MatchSet,
    map: &PointMap,
) -> Vec<Correspondence> {
    let mut used = BTreeSet::new();
    let mut out = Vec::new();
    for item in ranking.top(k) {
        let Some(pairs) = matches.get(query.id, &item.id) else {
            continue;
        };
        for (qk, dk) in pairs {
            let Some(pixel) = query.keypoints.get(qk as usize) else {
                continue;
            };
            if used.contains(&qk) {
                continue;
            }
            if let Some((_, point)) = map.point_for(&item.id, dk) {
                used.insert(qk);
                out.push((*pixel, point.position));
            }
        }
    }
    out
}

fn estimate(
    query: &QueryView<'_>,
    k: usize,
    correspondences: &[Correspondence],
    params: &RansacParams,
) -> LocalizationResult {
    let params = params.with_seed(query_seed(params.seed, query.id, k));
    let outcome = match pnp_ransac(correspondences, query.intrinsics, &params) {
        Ok(out) => Outcome::Success {
            pose: out.pose,
            inliers: out.num_inliers,
            matches: correspondences.len(),
        },
        Err(_) => Outcome::Failure(FailureKind::RansacFailed),
    };
    LocalizationResult {
        query: query.id.to_string(),
        k,
        outcome,
    }
}

/// Registers the query against a pre-built map through its matches with the
/// top-k retrieved images.
pub fn localize_global(
    query: &QueryView<'_>,
    ranking: &Ranking,
    k: usize,
    matches: &MatchSet,
    map: &PointMap,
    params: &RansacParams,
) -> LocalizationResult {
    let correspondences = collect_correspondences(query, ranking, k, matches, map);
    if correspondences.len() < 4 {
        return LocalizationResult::failure(query.id, k, FailureKind::MatchingTooWeak);
    }
    estimate(query, k, &correspondences, params)
}

/// Triangulates a local map from the top-k images and their pairwise matches,
/// then registers the query against it.
///
/// Failures: fewer than two retrieved images linked to the query through a
/// consistent track gives `InsufficientRelevant`; fewer than four 2D-3D
/// candidates gives `DegenerateBaseline` when at least four query-linked tracks
/// existed before triangulation and `MatchingTooWeak` otherwise.
pub fn localize_local_sfm(
    query: &QueryView<'_>,
    ranking: &Ranking,
    k: usize,
    scene: &LocalSfmInput<'_>,
    params: &RansacParams,
) -> LocalizationResult {
    let top = ranking.top(k);
    if top.len() < 2 {
        return LocalizationResult::failure(query.id, k, FailureKind::InsufficientRelevant);
    }
    let retrieved: BTreeSet<&str> = top.iter().map(|i| i.id.as_str()).collect();
    let local_matches = scene.matches.filter(|id| retrieved.contains(id));

    let (tracks, _) = build_tracks(&local_matches);
    let track_of: BTreeMap<(&str, u32), usize> = tracks
        .iter()
        .enumerate()
        .flat_map(|(t, obs)| obs.iter().map(move |(img, kp)| ((img.as_str(), *kp), t)))
        .collect();
    let mut linked_images = 0;
    let mut linked_tracks = BTreeSet::new();
    for item in top {
        let Some(pairs) = scene.matches.get(query.id, &item.id) else {
            continue;
        };
        let mut any = false;
        for (_, dk) in pairs {
            if let Some(t) = track_of.get(&(item.id.as_str(), dk)) {
                linked_tracks.insert(*t);
                any = true;
            }
        }
        if any {
            linked_images += 1;
        }
    }
    if linked_images < 2 {
        return LocalizationResult::failure(query.id, k, FailureKind::InsufficientRelevant);
    }

    let (map, _) = build_global_map(
        scene.poses,
        scene.intrinsics,
        scene.keypoints,
        &local_matches,
        scene.min_tri_angle_deg,
    );
    let correspondences = collect_correspondences(query, ranking, k, scene.matches, &map);
    if correspondences.len() < 4 {
        let kind = if linked_tracks.len() >= 4 {
            FailureKind::DegenerateBaseline
        } else {
            FailureKind::MatchingTooWeak
        };
        return LocalizationResult::failure(query.id, k, kind);
    }
    estimate(query, k, &correspondences, params)
}
