//! Deterministic synthetic scenes: points in a box, cameras on a trajectory
//! pattern, noisy keypoints, matches from shared visibility and global
//! descriptors whose sensitivity to the camera pose is controllable.
//!
//! Every random draw comes from a ChaCha stream derived from the scene seed,
//! with one stream per stage. Geometry therefore does not change when only
//! the descriptor model changes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::geometry::{blend_poses, project, CameraIntrinsics, Pose};
use crate::io::{Dataset, Observations};
use crate::localization::{Correspondence, Keypoints, MatchSet};
use crate::retrieval::DescriptorSet;
use crate::ImageId;

/// Ring and grid queries sit within this angle (ring) of a database camera.
pub const QUERY_ANGLE_OFFSET_DEG: f64 = 3.0;
/// Cells per box axis for pose-robust descriptors.
pub const ROBUST_CELLS_PER_AXIS: usize = 3;

const STREAM_POINTS: u64 = 1;
const STREAM_CAMERAS: u64 = 2;
const STREAM_QUERIES: u64 = 3;
const STREAM_OBSERVATIONS: u64 = 4;
const STREAM_MATCHES: u64 = 5;
const STREAM_DESCRIPTORS: u64 = 6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("{0} must be at least {1}")]
    TooFew(&'static str, usize),
    #[error("{0} = {1} is not a probability in [0, 1)")]
    InvalidProbability(&'static str, f64),
    #[error("{0} = {1} must be finite and positive")]
    NotPositive(&'static str, f64),
    #[error("{0} = {1} must be finite and non-negative")]
    Negative(&'static str, f64),
    #[error("descriptor dimension {0} is below 4")]
    DescriptorDimension(usize),
    #[error("invalid intrinsics: {0}")]
    Intrinsics(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryPattern {
    /// Horizontal circle around the box, every camera facing the centroid.
    Ring,
    /// Vertical grid on one side of the box, every camera facing the centroid.
    Grid,
    /// Straight line along one side of the box, all cameras facing across it.
    Corridor,
}

impl TrajectoryPattern {
    pub const ALL: [TrajectoryPattern; 3] = [Self::Ring, Self::Grid, Self::Corridor];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ring => "ring",
            Self::Grid => "grid",
            Self::Corridor => "corridor",
        }
    }
}

impl fmt::Display for TrajectoryPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrajectoryPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown pattern `{s}` (expected ring, grid or corridor)"))
    }
}

/// Scene configuration. The box is centered at the origin with side `extent`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_points: usize,
    pub extent: f64,
    pub n_db_cameras: usize,
    pub n_queries: usize,
    pub pattern: TrajectoryPattern,
    pub pixel_noise_sigma: f64,
    /// Probability that a visible point yields no keypoint.
    pub match_dropout: f64,
    /// Fraction of wrong pairs among the matches of an image pair.
    pub outlier_rate: f64,
    pub intrinsics: CameraIntrinsics,
    /// Ring radius, or distance from the centroid to the grid or corridor line.
    pub standoff: f64,
    /// Points farther than this from a camera are not observed.
    pub max_range: f64,
    /// Maximum camera center perturbation.
    pub position_jitter: f64,
    /// Maximum camera rotation perturbation.
    pub orientation_jitter_deg: f64,
}

impl SceneSpec {
    /// Defaults matching the reference scene except for the pattern.
    pub fn new(pattern: TrajectoryPattern) -> Self {
        Self {
            seed: 42,
            n_points: 200,
            extent: 20.0,
            n_db_cameras: 30,
            n_queries: 10,
            pattern,
            pixel_noise_sigma: 0.5,
            match_dropout: 0.0,
            outlier_rate: 0.0,
            intrinsics: CameraIntrinsics {
                width: 640,
                height: 480,
                fx: 400.0,
                fy: 400.0,
                cx: 320.0,
                cy: 240.0,
            },
            standoff: 25.0,
            max_range: 20.0,
            position_jitter: 0.5,
            orientation_jitter_deg: 1.5,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for (name, n) in [
            ("n_points", self.n_points),
            ("n_db_cameras", self.n_db_cameras),
            ("n_queries", self.n_queries),
        ] {
            if n < 1 {
                return Err(SceneError::TooFew(name, 1));
            }
        }
        if self.pattern == TrajectoryPattern::Corridor && self.n_db_cameras < 2 {
            return Err(SceneError::TooFew("n_db_cameras (corridor)", 2));
        }
        if !(0.0..=1.0).contains(&self.match_dropout) {
            return Err(SceneError::InvalidProbability("match_dropout", self.match_dropout));
        }
        if !(0.0..1.0).contains(&self.outlier_rate) {
            return Err(SceneError::InvalidProbability("outlier_rate", self.outlier_rate));
        }
        for (name, v) in [
            ("extent", self.extent),
            ("standoff", self.standoff),
            ("max_range", self.max_range),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SceneError::NotPositive(name, v));
            }
        }
        for (name, v) in [
            ("pixel_noise_sigma", self.pixel_noise_sigma),
            ("position_jitter", self.position_jitter),
            ("orientation_jitter_deg", self.orientation_jitter_deg),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SceneError::Negative(name, v));
            }
        }
        self.intrinsics
            .validate()
            .map_err(|e| SceneError::Intrinsics(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorMode {
    /// Similarity decays smoothly with the distance between camera poses.
    PoseSensitive,
    /// Constant per viewed region: near and far views of a region collide.
    PoseRobust,
}

impl DescriptorMode {
    pub const ALL: [DescriptorMode; 2] = [Self::PoseSensitive, Self::PoseRobust];

    pub fn name(self) -> &'static str {
        match self {
            Self::PoseSensitive => "sensitive",
            Self::PoseRobust => "robust",
        }
    }
}

impl fmt::Display for DescriptorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DescriptorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown descriptor mode `{s}` (expected sensitive or robust)"))
    }
}

/// Global descriptor generator.
///
/// Pose-sensitive descriptors are Gaussian responses of `dimension` anchors
/// placed in (center / extent, viewing direction) space, with width
/// `length_scale`. Pose-robust descriptors are a random unit vector per box
/// cell, the cell being the one holding the centroid of the visible points.
/// Both are unit length before noise; `noise` is the expected norm of the
/// added Gaussian vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescriptorModel {
    pub mode: DescriptorMode,
    pub dimension: usize,
    pub noise: f64,
    pub length_scale: f64,
}

impl DescriptorModel {
    pub fn new(mode: DescriptorMode) -> Self {
        Self {
            mode,
            dimension: 128,
            noise: 0.01,
            length_scale: 0.75,
        }
    }

    pub fn with_noise(self, noise: f64) -> Self {
        Self { noise, ..self }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.dimension < 4 {
            return Err(SceneError::DescriptorDimension(self.dimension));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(SceneError::Negative("descriptor noise", self.noise));
        }
        if !(self.length_scale.is_finite() && self.length_scale > 0.0) {
            return Err(SceneError::NotPositive("length_scale", self.length_scale));
        }
        Ok(())
    }
}

impl Default for DescriptorModel {
    fn default() -> Self {
        Self::new(DescriptorMode::PoseSensitive)
    }
}

/// A generated scene: the dataset plus generator-side ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub model: DescriptorModel,
    /// Query ground truth is included in `dataset.poses`; `dataset.observations`
    /// holds every point and every kept keypoint, queries included.
    pub dataset: Dataset,
    /// Generated points; point id `i` is `points[i]`.
    pub points: Vec<Vector3<f64>>,
    /// Point id behind every keypoint, aligned with `dataset.keypoints`.
    pub keypoint_points: BTreeMap<ImageId, Vec<u64>>,
}

impl SyntheticScene {
    pub fn query_poses(&self) -> BTreeMap<ImageId, Pose> {
        self.dataset
            .queries
            .iter()
            .map(|q| (q.clone(), self.dataset.poses[q]))
            .collect()
    }

    /// Point ids with a keypoint in each image, for IoU relevance.
    pub fn visibility(&self) -> BTreeMap<ImageId, BTreeSet<u64>> {
        self.keypoint_points
            .iter()
            .map(|(id, pts)| (id.clone(), pts.iter().copied().collect()))
            .collect()
    }
}

pub fn db_id(i: usize) -> ImageId {
    format!("db/{i:04}")
}

pub fn query_id(i: usize) -> ImageId {
    format!("query/{i:04}")
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform point in the ball of the given radius.
fn ball(rng: &mut ChaCha8Rng, radius: f64) -> Vector3<f64> {
    if radius == 0.0 {
        return Vector3::zeros();
    }
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v * radius;
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Rotates a pose about a random camera-frame axis by at most `max_deg`.
fn jitter_orientation(rng: &mut ChaCha8Rng, pose: Pose, max_deg: f64) -> Pose {
    if max_deg == 0.0 {
        return pose;
    }
    let axis = unit_vector(rng, 3);
    let angle = rng.random_range(0.0..=max_deg).to_radians();
    let delta = UnitQuaternion::from_scaled_axis(Vector3::new(axis[0], axis[1], axis[2]) * angle);
    Pose::from_unit(*pose.position(), delta * pose.orientation())
}

fn facing_centroid(center: Vector3<f64>) -> Pose {
    Pose::look_at(center, Vector3::zeros(), Vector3::z()).expect("cameras are off the vertical axis")
}

fn ring_center(spec: &SceneSpec, angle: f64) -> Vector3<f64> {
    Vector3::new(spec.standoff * angle.cos(), spec.standoff * angle.sin(), 0.0)
}

fn grid_shape(n: usize) -> (usize, usize) {
    let cols = (n as f64).sqrt().ceil() as usize;
    (cols, n.div_ceil(cols))
}

fn grid_center(spec: &SceneSpec, col: f64, row: f64) -> Vector3<f64> {
    let (cols, rows) = grid_shape(spec.n_db_cameras);
    let span = |i: f64, n: usize| {
        if n == 1 {
            0.0
        } else {
            spec.extent * (i / (n - 1) as f64 - 0.5)
        }
    };
    Vector3::new(span(col, cols), -spec.standoff, span(row, rows))
}

fn corridor_pose(spec: &SceneSpec, i: usize) -> Pose {
    let x = spec.extent * (i as f64 / (spec.n_db_cameras - 1) as f64 - 0.5);
    let center = Vector3::new(x, -spec.standoff, 0.0);
    Pose::look_at(center, center + Vector3::y(), Vector3::z()).expect("y is not vertical")
}

fn database_poses(spec: &SceneSpec) -> Vec<Pose> {
    let mut rng = stream(spec.seed, STREAM_CAMERAS);
    let n = spec.n_db_cameras;
    (0..n)
        .map(|i| {
            let nominal = match spec.pattern {
                TrajectoryPattern::Ring => {
                    facing_centroid(ring_center(spec, std::f64::consts::TAU * i as f64 / n as f64))
                }
                TrajectoryPattern::Grid => {
                    let cols = grid_shape(n).0;
                    facing_centroid(grid_center(spec, (i % cols) as f64, (i / cols) as f64))
                }
                TrajectoryPattern::Corridor => corridor_pose(spec, i),
            };
            let moved = Pose::from_unit(
                nominal.position() + ball(&mut rng, spec.position_jitter),
                *nominal.orientation(),
            );
            jitter_orientation(&mut rng, moved, spec.orientation_jitter_deg)
        })
        .collect()
}

/// Ring and grid queries sit near an evenly chosen database camera. Corridor
/// queries are the exact midpoint of two consecutive database cameras.
fn query_poses(spec: &SceneSpec, db: &[Pose]) -> Vec<Pose> {
    let mut rng = stream(spec.seed, STREAM_QUERIES);
    let n = spec.n_db_cameras;
    (0..spec.n_queries)
        .map(|q| {
            let slot = (q as f64 + 0.5) / spec.n_queries as f64;
            let nominal = match spec.pattern {
                TrajectoryPattern::Ring => {
                    let i = (slot * n as f64).floor();
                    let offset = rng.random_range(-QUERY_ANGLE_OFFSET_DEG..=QUERY_ANGLE_OFFSET_DEG);
                    facing_centroid(ring_center(
                        spec,
                        std::f64::consts::TAU * i / n as f64 + offset.to_radians(),
                    ))
                }
                TrajectoryPattern::Grid => {
                    let cols = grid_shape(n).0;
                    let i = (slot * n as f64).floor() as usize;
                    let col = (i % cols) as f64 + rng.random_range(-0.25..=0.25);
                    let row = (i / cols) as f64 + rng.random_range(-0.25..=0.25);
                    facing_centroid(grid_center(spec, col, row))
                }
                TrajectoryPattern::Corridor => {
                    let i = (slot * (n - 1) as f64).floor() as usize;
                    return blend_poses(&[db[i], db[i + 1]], &[0.5, 0.5]).expect("two unit quaternions");
                }
            };
            let moved = Pose::from_unit(
                nominal.position() + ball(&mut rng, spec.position_jitter),
                *nominal.orientation(),
            );
            jitter_orientation(&mut rng, moved, spec.orientation_jitter_deg)
        })
        .collect()
}

/// Exact projections of the points a camera sees: in front, inside the
/// image and within range.
fn visible(spec: &SceneSpec, pose: &Pose, points: &[Vector3<f64>]) -> Vec<(u64, Vector2<f64>)> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| (*p - pose.position()).norm() <= spec.max_range)
        .filter_map(|(i, p)| {
            let px = project(p, pose, &spec.intrinsics)?;
            spec.intrinsics.contains(&px).then_some((i as u64, px))
        })
        .collect()
}

/// Builds the scene. The result is a deterministic function of the inputs.
pub fn generate(spec: &SceneSpec, model: &DescriptorModel) -> Result<SyntheticScene, SceneError> {
    spec.validate()?;
    model.validate()?;

    let mut rng = stream(spec.seed, STREAM_POINTS);
    let half = spec.extent / 2.0;
    let points: Vec<Vector3<f64>> = (0..spec.n_points)
        .map(|_| {
            Vector3::new(
                rng.random_range(-half..=half),
                rng.random_range(-half..=half),
                rng.random_range(-half..=half),
            )
        })
        .collect();

    let db = database_poses(spec);
    let queries = query_poses(spec, &db);
    let cameras: BTreeMap<ImageId, Pose> = db
        .iter()
        .enumerate()
        .map(|(i, p)| (db_id(i), *p))
        .chain(queries.iter().enumerate().map(|(i, p)| (query_id(i), *p)))
        .collect();
    let query_ids: BTreeSet<ImageId> = (0..spec.n_queries).map(query_id).collect();

    // Keypoints: noisy projections of kept observations, in shuffled order.
    let mut rng = stream(spec.seed, STREAM_OBSERVATIONS);
    let noise = Normal::new(0.0, spec.pixel_noise_sigma).expect("sigma validated");
    let mut geometric_visibility = BTreeMap::new();
    let mut keypoints = Keypoints::new();
    let mut keypoint_points = BTreeMap::new();
    for (id, pose) in &cameras {
        let seen = visible(spec, pose, &points);
        let mut kept: Vec<(u64, Vector2<f64>)> = Vec::with_capacity(seen.len());
        for (pid, px) in &seen {
            if !rng.random_bool(spec.match_dropout) {
                kept.push((*pid, px + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng))));
            }
        }
        kept.shuffle(&mut rng);
        geometric_visibility.insert(id.clone(), seen.iter().map(|(p, _)| *p).collect::<Vec<_>>());
        keypoints.insert(id.clone(), kept.iter().map(|(_, px)| *px).collect());
        keypoint_points.insert(id.clone(), kept.iter().map(|(p, _)| *p).collect::<Vec<u64>>());
    }

    let mut tracks: BTreeMap<u64, BTreeSet<(ImageId, u32)>> = BTreeMap::new();
    for (id, pts) in &keypoint_points {
        for (kp, pid) in pts.iter().enumerate() {
            tracks.entry(*pid).or_default().insert((id.clone(), kp as u32));
        }
    }
    let observations = Observations {
        points: points.iter().enumerate().map(|(i, p)| (i as u64, *p)).collect(),
        tracks,
    };

    let matches = generate_matches(spec, &keypoint_points, &query_ids);
    let descriptors = generate_descriptors(spec, model, &cameras, &geometric_visibility, &points);

    let dataset = Dataset {
        intrinsics: cameras.keys().map(|id| (id.clone(), spec.intrinsics)).collect(),
        poses: cameras,
        queries: query_ids,
        descriptors,
        keypoints,
        matches,
        observations: Some(observations),
    };
    Ok(SyntheticScene {
        spec: spec.clone(),
        model: *model,
        dataset,
        points,
        keypoint_points,
    })
}

/// True matches for every pair sharing a point (query pairs excluded), of
/// which a fraction `outlier_rate` is then made wrong.
fn generate_matches(
    spec: &SceneSpec,
    keypoint_points: &BTreeMap<ImageId, Vec<u64>>,
    queries: &BTreeSet<ImageId>,
) -> MatchSet {
    let mut rng = stream(spec.seed, STREAM_MATCHES);
    let index: BTreeMap<&ImageId, BTreeMap<u64, u32>> = keypoint_points
        .iter()
        .map(|(id, pts)| (id, pts.iter().enumerate().map(|(k, p)| (*p, k as u32)).collect()))
        .collect();
    let ids: Vec<&ImageId> = keypoint_points.keys().collect();
    let mut matches = MatchSet::new();
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            if queries.contains(*a) && queries.contains(*b) {
                continue;
            }
            let (ia, ib) = (&index[a], &index[b]);
            let mut pairs: Vec<(u32, u32)> = ia
                .iter()
                .filter_map(|(p, ka)| ib.get(p).map(|kb| (*ka, *kb)))
                .collect();
            if pairs.is_empty() {
                continue;
            }
            corrupt(&mut rng, &mut pairs, spec.outlier_rate, &keypoint_points[*a], &keypoint_points[*b]);
            matches
                .insert((*a).clone(), (*b).clone(), pairs)
                .expect("generated matches are one-to-one");
        }
    }
    matches
}

/// Turns a stochastically rounded `rate * |pairs|` of the matches into wrong
/// ones by rotating their second keypoints, which keeps them one-to-one. A
/// single corrupted match moves to an unused keypoint instead, if any.
fn corrupt(rng: &mut ChaCha8Rng, pairs: &mut [(u32, u32)], rate: f64, pa: &[u64], pb: &[u64]) {
    let expected = rate * pairs.len() as f64;
    let mut n = expected.floor() as usize;
    if rng.random_bool(expected - n as f64) {
        n += 1;
    }
    let chosen = rand::seq::index::sample(rng, pairs.len(), n).into_vec();
    match chosen.as_slice() {
        [] => {}
        [only] => {
            let used: BTreeSet<u32> = pairs.iter().map(|m| m.1).collect();
            let (ka, _) = pairs[*only];
            let free: Vec<u32> = (0..pb.len() as u32)
                .filter(|kb| !used.contains(kb) && pb[*kb as usize] != pa[ka as usize])
                .collect();
            if let Some(kb) = free.choose(rng) {
                pairs[*only].1 = *kb;
            }
        }
        _ => {
            let seconds: Vec<u32> = chosen.iter().map(|i| pairs[*i].1).collect();
            for (j, i) in chosen.iter().enumerate() {
                pairs[*i].1 = seconds[(j + 1) % seconds.len()];
            }
        }
    }
}

fn pose_coordinates(spec: &SceneSpec, pose: &Pose) -> [f64; 6] {
    let c = pose.position() / spec.extent;
    let d = pose.viewing_direction();
    [c.x, c.y, c.z, d.x, d.y, d.z]
}

fn generate_descriptors(
    spec: &SceneSpec,
    model: &DescriptorModel,
    cameras: &BTreeMap<ImageId, Pose>,
    visibility: &BTreeMap<ImageId, Vec<u64>>,
    points: &[Vector3<f64>],
) -> DescriptorSet {
    let mut rng = stream(spec.seed, STREAM_DESCRIPTORS);
    let dim = model.dimension;
    let clean: BTreeMap<&ImageId, Vec<f64>> = match model.mode {
        DescriptorMode::PoseSensitive => {
            // Anchor positions cover the camera bounding box padded by the
            // width; anchor directions are uniform on the sphere.
            let coords: Vec<[f64; 6]> = cameras.values().map(|p| pose_coordinates(spec, p)).collect();
            let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
            for c in &coords {
                for a in 0..3 {
                    lo[a] = lo[a].min(c[a] - model.length_scale);
                    hi[a] = hi[a].max(c[a] + model.length_scale);
                }
            }
            let anchors: Vec<[f64; 6]> = (0..dim)
                .map(|_| {
                    let d = unit_vector(&mut rng, 3);
                    [
                        rng.random_range(lo[0]..=hi[0]),
                        rng.random_range(lo[1]..=hi[1]),
                        rng.random_range(lo[2]..=hi[2]),
                        d[0],
                        d[1],
                        d[2],
                    ]
                })
                .collect();
            let width = 2.0 * model.length_scale * model.length_scale;
            cameras
                .iter()
                .map(|(id, pose)| {
                    let u = pose_coordinates(spec, pose);
                    let v: Vec<f64> = anchors
                        .iter()
                        .map(|a| {
                            let d2: f64 = a.iter().zip(&u).map(|(x, y)| (x - y) * (x - y)).sum();
                            (-d2 / width).exp()
                        })
                        .collect();
                    (id, unit(v))
                })
                .collect()
        }
        DescriptorMode::PoseRobust => {
            let cell_size = spec.extent / ROBUST_CELLS_PER_AXIS as f64;
            let half = spec.extent / 2.0;
            cameras
                .iter()
                .map(|(id, pose)| {
                    let seen = &visibility[id];
                    let focus = if seen.is_empty() {
                        pose.position() + pose.viewing_direction() * spec.standoff
                    } else {
                        seen.iter().map(|p| points[*p as usize]).sum::<Vector3<f64>>() / seen.len() as f64
                    };
                    let cell = focus.map(|x| ((x + half) / cell_size).floor() as i64);
                    (id, cell_vector(spec.seed, [cell.x, cell.y, cell.z], dim))
                })
                .collect()
        }
    };
    let noise = Normal::new(0.0, model.noise / (dim as f64).sqrt()).expect("noise validated");
    let mut set = DescriptorSet::new(dim).expect("dimension validated");
    for (id, v) in clean {
        let noisy: Vec<f64> = v.iter().map(|x| x + noise.sample(&mut rng)).collect();
        set.insert(id.clone(), noisy).expect("dimension matches");
    }
    set
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Random unit vector of a box cell, independent of generation order.
fn cell_vector(seed: u64, cell: [i64; 3], dim: usize) -> Vec<f64> {
    let key = cell
        .iter()
        .fold(seed ^ 0x9e37_79b9_7f4a_7c15, |h, c| (h ^ *c as u64).wrapping_mul(0x0000_0100_0000_01b3));
    let mut rng = stream(key, STREAM_DESCRIPTORS);
    unit_vector(&mut rng, dim)
}

/// The fixed ring scene used by the acceptance suite.
pub fn reference_spec() -> SceneSpec {
    SceneSpec::new(TrajectoryPattern::Ring)
}

/// [`reference_spec`] with the default pose-sensitive descriptors.
pub fn reference_scene() -> SyntheticScene {
    generate(&reference_spec(), &DescriptorModel::default()).expect("reference spec is valid")
}

/// `n` 2D-3D correspondences for a camera: projections of the scene points it
/// sees (ignoring range) with Gaussian pixel noise, of which a fraction
/// `outlier_fraction` are replaced by uniform pixels. Points are reused
/// cyclically if fewer than `n` are visible.
pub fn query_correspondences(
    points: &[Vector3<f64>],
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    n: usize,
    pixel_sigma: f64,
    outlier_fraction: f64,
    rng: &mut impl Rng,
) -> Vec<Correspondence> {
    let mut seen: Vec<(Vector3<f64>, Vector2<f64>)> = points
        .iter()
        .filter_map(|p| {
            let px = project(p, pose, intrinsics)?;
            intrinsics.contains(&px).then_some((*p, px))
        })
        .collect();
    if seen.is_empty() {
        return Vec::new();
    }
    seen.shuffle(rng);
    let noise = Normal::new(0.0, pixel_sigma).expect("non-negative sigma");
    let outliers = (outlier_fraction * n as f64).round() as usize;
    (0..n)
        .map(|i| {
            let (p, px) = seen[i % seen.len()];
            let pixel = if i < outliers {
                Vector2::new(
                    rng.random_range(0.0..=f64::from(intrinsics.width)),
                    rng.random_range(0.0..=f64::from(intrinsics.height)),
                )
            } else {
                px + Vector2::new(noise.sample(rng), noise.sample(rng))
            };
            (pixel, p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{load_dataset, save_dataset, LoadOptions};
    use crate::localization::{build_global_map, DEFAULT_MIN_TRIANGULATION_ANGLE};
    use crate::retrieval::{dot, iou_relevance, normalized, RelevanceOracle};

    fn spearman(x: &[f64], y: &[f64]) -> f64 {
        fn ranks(v: &[f64]) -> Vec<f64> {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
            let mut r = vec![0.0; v.len()];
            for (rank, i) in idx.into_iter().enumerate() {
                r[i] = rank as f64;
            }
            r
        }
        let (rx, ry) = (ranks(x), ranks(y));
        let m = (x.len() - 1) as f64 / 2.0;
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - m) * (b - m)).sum();
        let var: f64 = rx.iter().map(|a| (a - m) * (a - m)).sum();
        cov / var
    }

    #[test]
    fn same_seed_gives_identical_files() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        save_dataset(a.path(), &reference_scene().dataset).unwrap();
        save_dataset(b.path(), &reference_scene().dataset).unwrap();
        for entry in walk(a.path()) {
            let rel = entry.strip_prefix(a.path()).unwrap();
            assert_eq!(std::fs::read(&entry).unwrap(), std::fs::read(b.path().join(rel)).unwrap(), "{rel:?}");
        }
    }

    fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
        let mut out = Vec::new();
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn different_seeds_differ() {
        let mut spec = reference_spec();
        spec.seed = 7;
        let other = generate(&spec, &DescriptorModel::default()).unwrap();
        assert_ne!(other.points, reference_scene().points);
    }

    #[test]
    fn descriptor_model_does_not_change_geometry() {
        let spec = reference_spec();
        let a = generate(&spec, &DescriptorModel::new(DescriptorMode::PoseSensitive)).unwrap();
        let b = generate(&spec, &DescriptorModel::new(DescriptorMode::PoseRobust)).unwrap();
        assert_eq!(a.dataset.poses, b.dataset.poses);
        assert_eq!(a.dataset.keypoints, b.dataset.keypoints);
        assert_eq!(a.dataset.matches, b.dataset.matches);
    }

    #[test]
    fn noiseless_matches_are_true_and_triangulate_exactly() {
        let mut spec = reference_spec();
        spec.pixel_noise_sigma = 0.0;
        let scene = generate(&spec, &DescriptorModel::default()).unwrap();
        for ((a, b), pairs) in scene.dataset.matches.iter() {
            for (ka, kb) in pairs {
                assert_eq!(scene.keypoint_points[a][*ka as usize], scene.keypoint_points[b][*kb as usize]);
            }
        }
        let ds = &scene.dataset;
        let (map, _) = build_global_map(
            &ds.database_poses(),
            &ds.intrinsics,
            &ds.keypoints,
            &ds.database_matches(),
            DEFAULT_MIN_TRIANGULATION_ANGLE,
        );
        let mut views: BTreeMap<u64, usize> = BTreeMap::new();
        for id in ds.database_ids() {
            for pid in &scene.keypoint_points[&id] {
                *views.entry(*pid).or_default() += 1;
            }
        }
        let expected = views.values().filter(|n| **n >= 2).count();
        assert!(expected > 100);
        assert!(map.len() * 100 >= expected * 95, "{} of {expected} points", map.len());
        for (_, p) in map.iter() {
            let (image, kp) = p.observations.iter().next().unwrap();
            let truth = scene.points[scene.keypoint_points[image][*kp as usize] as usize];
            assert!((p.position - truth).norm() < 1e-6);
        }
    }

    #[test]
    fn outliers_follow_the_requested_rate() {
        let mut spec = reference_spec();
        spec.outlier_rate = 0.25;
        let scene = generate(&spec, &DescriptorModel::default()).unwrap();
        let (mut wrong, mut total) = (0, 0);
        for ((a, b), pairs) in scene.dataset.matches.iter() {
            for (ka, kb) in pairs {
                total += 1;
                if scene.keypoint_points[a][*ka as usize] != scene.keypoint_points[b][*kb as usize] {
                    wrong += 1;
                }
            }
        }
        let rate = wrong as f64 / total as f64;
        assert!((rate - 0.25).abs() < 0.02, "{rate}");
    }

    #[test]
    fn sensitive_similarity_decreases_with_distance_on_the_ring() {
        let scene = reference_scene();
        let ds = &scene.dataset;
        let ids = ds.database_ids();
        let (mut sims, mut dists) = (Vec::new(), Vec::new());
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                let da = normalized(a, ds.descriptors.get(a).unwrap()).unwrap();
                let db = normalized(b, ds.descriptors.get(b).unwrap()).unwrap();
                sims.push(-dot(&da, &db));
                dists.push((ds.poses[a].position() - ds.poses[b].position()).norm());
            }
        }
        let rho = spearman(&sims, &dists);
        assert!(rho >= 0.95, "rank correlation {rho}");
    }

    #[test]
    fn robust_descriptors_collide_within_a_cell() {
        let mut spec = reference_spec();
        spec.pattern = TrajectoryPattern::Corridor;
        let model = DescriptorModel::new(DescriptorMode::PoseRobust).with_noise(0.0);
        let scene = generate(&spec, &model).unwrap();
        let ds = &scene.dataset;
        let ids = ds.database_ids();
        let same = ids
            .windows(2)
            .filter(|w| ds.descriptors.get(&w[0]) == ds.descriptors.get(&w[1]))
            .count();
        assert!(same > ids.len() / 2, "{same} identical neighbours");
    }

    #[test]
    fn relevance_matches_emitted_observations() {
        let scene = reference_scene();
        let from_files = scene.dataset.observations.as_ref().unwrap().visibility();
        let generated = scene.visibility();
        let oracle = RelevanceOracle::iou(from_files.clone());
        for q in scene.dataset.query_ids() {
            for d in scene.dataset.database_ids() {
                let expected = iou_relevance(&generated[&q], &generated[&d]) > 0.0;
                assert_eq!(oracle.is_relevant(&q, &d), expected);
            }
        }
        // Relevance is informative: neither everything nor nothing.
        let relevant = scene
            .dataset
            .database_ids()
            .iter()
            .filter(|d| oracle.is_relevant("query/0000", d))
            .count();
        assert!(relevant > 0 && relevant < scene.dataset.database_ids().len());
    }

    #[test]
    fn saved_scene_loads_without_warnings() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = reference_spec();
        spec.outlier_rate = 0.2;
        spec.match_dropout = 0.1;
        let scene = generate(&spec, &DescriptorModel::new(DescriptorMode::PoseRobust)).unwrap();
        save_dataset(dir.path(), &scene.dataset).unwrap();
        let (loaded, report) = load_dataset(dir.path(), LoadOptions::default()).unwrap();
        assert!(report.is_clean(), "{report:?}");
        assert_eq!(loaded.matches, scene.dataset.matches);
        assert_eq!(loaded.observations, scene.dataset.observations);
    }

    #[test]
    fn corridor_queries_are_midpoints() {
        let spec = SceneSpec::new(TrajectoryPattern::Corridor);
        let scene = generate(&spec, &DescriptorModel::default()).unwrap();
        let db: Vec<Pose> = scene.dataset.database_poses().into_values().collect();
        for q in scene.query_poses().values() {
            let best = db
                .windows(2)
                .map(|w| (w[0].position() + w[1].position()) / 2.0 - q.position())
                .map(|d| d.norm())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-12);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = reference_spec();
        spec.outlier_rate = 1.0;
        assert!(generate(&spec, &DescriptorModel::default()).is_err());
        let mut spec = reference_spec();
        spec.n_points = 0;
        assert!(spec.validate().is_err());
        let model = DescriptorModel {
            dimension: 3,
            ..DescriptorModel::default()
        };
        assert!(model.validate().is_err());
        assert_eq!("corridor".parse::<TrajectoryPattern>().unwrap(), TrajectoryPattern::Corridor);
        assert!("spiral".parse::<TrajectoryPattern>().is_err());
    }

    #[test]
    fn correspondences_have_the_requested_outliers() {
        let scene = reference_scene();
        let pose = scene.query_poses()["query/0000"];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = query_correspondences(&scene.points, &pose, &scene.spec.intrinsics, 100, 0.0, 0.3, &mut rng);
        assert_eq!(c.len(), 100);
        let exact = c
            .iter()
            .filter(|(px, p)| (project(p, &pose, &scene.spec.intrinsics).unwrap() - px).norm() < 1e-9)
            .count();
        assert!(exact >= 70);
    }
}
