//! Viewing frusta, the inscribed-sphere overlap measure and overlap-based pair
//! selection.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use nalgebra::{Matrix4, Vector3, Vector4};
use rayon::prelude::*;

use super::{CameraIntrinsics, GeometryError, Pose};

pub const DEFAULT_NEAR: f64 = 0.1;
pub const DEFAULT_FAR: f64 = 50.0;

/// Feasibility slack used when accepting LP vertices.
const LP_FEASIBILITY_TOL: f64 = 1e-9;

/// Closed half-space `{x : normal · x + offset >= 0}` with a unit inward normal.
/// `normal · x + offset` is the signed distance of `x` to the boundary plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfSpace {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl HalfSpace {
    pub fn signed_distance(&self, x: &Vector3<f64>) -> f64 {
        self.normal.dot(x) + self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frustum {
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub near: f64,
    pub far: f64,
}

impl Frustum {
    pub fn new(pose: Pose, intrinsics: CameraIntrinsics) -> Self {
        Self {
            pose,
            intrinsics,
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
        }
    }

    pub fn with_range(pose: Pose, intrinsics: CameraIntrinsics, near: f64, far: f64) -> Result<Self, GeometryError> {
        if !(near > 0.0 && far > near && far.is_finite()) {
            return Err(GeometryError::InvalidFrustumRange { near, far });
        }
        Ok(Self {
            pose,
            intrinsics,
            near,
            far,
        })
    }

    /// The six bounding half-spaces (near, far, left, right, top, bottom) in
    /// world coordinates.
    pub fn half_spaces(&self) -> [HalfSpace; 6] {
        let k = &self.intrinsics;
        let w = k.width as f64;
        let h = k.height as f64;
        // Camera-frame planes n·X + d >= 0.
        let local = [
            (Vector3::new(0.0, 0.0, 1.0), -self.near),
            (Vector3::new(0.0, 0.0, -1.0), self.far),
            (Vector3::new(1.0, 0.0, k.cx / k.fx), 0.0),
            (Vector3::new(-1.0, 0.0, (w - k.cx) / k.fx), 0.0),
            (Vector3::new(0.0, 1.0, k.cy / k.fy), 0.0),
            (Vector3::new(0.0, -1.0, (h - k.cy) / k.fy), 0.0),
        ];
        let r_inv = self.pose.orientation().inverse();
        local.map(|(n, d)| {
            let n = n.normalize();
            let normal = r_inv * n;
            HalfSpace {
                normal,
                offset: d - normal.dot(self.pose.position()),
            }
        })
    }

    /// The eight corners: near plane first, then far plane.
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let k = &self.intrinsics;
        let (w, h) = (k.width as f64, k.height as f64);
        let mut out = [Vector3::zeros(); 8];
        for (i, depth) in [self.near, self.far].into_iter().enumerate() {
            for (j, (u, v)) in [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)].into_iter().enumerate() {
                let local = Vector3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
                out[i * 4 + j] = self.pose.camera_to_world(&local);
            }
        }
        out
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        self.half_spaces().iter().all(|h| h.signed_distance(x) >= 0.0)
    }

    fn bounding_sphere(&self) -> (Vector3<f64>, f64) {
        let corners = self.corners();
        let center = corners.iter().sum::<Vector3<f64>>() / 8.0;
        let radius = corners.iter().map(|c| (c - center).norm()).fold(0.0, f64::max);
        (center, radius)
    }
}

/// Largest ball inside a polytope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InscribedSphere {
    pub center: Vector3<f64>,
    pub radius: f64,
}

/// Chebyshev center of an intersection of half-spaces.
///
/// Solves `max r  s.t.  n_i · x + d_i >= r` over `(x, r)`. The optimum of this
/// four-variable LP sits on a vertex where four constraints are tight, so every
/// basis of four constraints is solved and the best feasible vertex is kept.
/// Returns `None` when the LP has no feasible vertex (fewer than four
/// independent planes). The radius is negative when the intersection is empty.
pub fn chebyshev_center(planes: &[HalfSpace]) -> Option<InscribedSphere> {
    let n = planes.len();
    let mut best: Option<InscribedSphere> = None;
    let row = |h: &HalfSpace| Vector4::new(h.normal.x, h.normal.y, h.normal.z, -1.0);
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for d in c + 1..n {
                    let idx = [a, b, c, d];
                    let m = Matrix4::from_rows(&idx.map(|i| row(&planes[i]).transpose()));
                    let rhs = Vector4::from(idx.map(|i| -planes[i].offset));
                    let lu = m.lu();
                    if lu.determinant().abs() < 1e-12 {
                        continue;
                    }
                    let Some(sol) = lu.solve(&rhs) else { continue };
                    let center = Vector3::new(sol[0], sol[1], sol[2]);
                    let radius = sol[3];
                    if !radius.is_finite() || best.is_some_and(|b| b.radius >= radius) {
                        continue;
                    }
                    let scale = 1.0 + center.norm() + radius.abs();
                    let feasible = planes
                        .iter()
                        .all(|h| h.signed_distance(&center) - radius >= -LP_FEASIBILITY_TOL * scale);
                    if feasible {
                        best = Some(InscribedSphere { center, radius });
                    }
                }
            }
        }
    }
    best
}

/// Largest sphere inscribed in the intersection of two frusta, or `None` when
/// their volumes do not overlap.
pub fn frustum_overlap(a: &Frustum, b: &Frustum) -> Option<InscribedSphere> {
    let (ca, ra) = a.bounding_sphere();
    let (cb, rb) = b.bounding_sphere();
    if (ca - cb).norm() > ra + rb {
        return None;
    }
    let planes: Vec<HalfSpace> = a.half_spaces().into_iter().chain(b.half_spaces()).collect();
    chebyshev_center(&planes).filter(|s| s.radius > 0.0)
}

/// Radius of the largest sphere inscribed in both frusta; 0 when disjoint.
pub fn frustum_overlap_radius(a: &Frustum, b: &Frustum) -> f64 {
    frustum_overlap(a, b).map_or(0.0, |s| s.radius)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapPair {
    pub first: String,
    pub second: String,
    pub radius: f64,
}

fn by_radius_then_ids(x: &OverlapPair, y: &OverlapPair) -> Ordering {
    y.radius
        .total_cmp(&x.radius)
        .then_with(|| (&x.first, &x.second).cmp(&(&y.first, &y.second)))
}

/// All unordered image pairs whose frustum overlap radius is at least
/// `min_radius`. With `max_pairs_per_image`, each image keeps only its
/// largest-radius pairs and a pair survives if either endpoint keeps it.
/// Output is sorted by radius (descending), ties by id pair.
pub fn select_overlapping_pairs(
    frusta: &BTreeMap<String, Frustum>,
    min_radius: f64,
    max_pairs_per_image: Option<usize>,
) -> Vec<OverlapPair> {
    let entries: Vec<(&String, &Frustum)> = frusta.iter().collect();
    let mut pairs: Vec<OverlapPair> = (0..entries.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let entries = &entries;
            (i + 1..entries.len()).filter_map(move |j| {
                let radius = frustum_overlap_radius(entries[i].1, entries[j].1);
                (radius >= min_radius).then(|| OverlapPair {
                    first: entries[i].0.clone(),
                    second: entries[j].0.clone(),
                    radius,
                })
            })
        })
        .collect();
    pairs.sort_by(by_radius_then_ids);

    if let Some(limit) = max_pairs_per_image {
        let mut per_image: BTreeMap<&str, usize> = BTreeMap::new();
        let mut keep = vec![false; pairs.len()];
        // Pairs are already in per-image preference order.
        for (i, p) in pairs.iter().enumerate() {
            for id in [p.first.as_str(), p.second.as_str()] {
                let used = per_image.entry(id).or_default();
                if *used < limit {
                    *used += 1;
                    keep[i] = true;
                }
            }
        }
        pairs = pairs
            .into_iter()
            .zip(keep)
            .filter_map(|(p, k)| k.then_some(p))
            .collect();
    }
    pairs
}
