//! Dataset directory formats, loading with validation, and result files.
//!
//! A dataset root holds:
//!
//! | file | content |
//! |------|---------|
//! | `sensors.txt` | `image_id, width, height, fx, fy, cx, cy` for every image |
//! | `trajectories.txt` | `image_id, qw, qx, qy, qz, tx, ty, tz` (camera center) |
//! | `queries.txt` | one query image id per line |
//! | `global_descriptors.bin` / `.idx` | little-endian `f32` rows and their ids |
//! | `keypoints/<image_id>.bin` | keypoint pixel coordinates |
//! | `matches.txt` | `image_a, image_b, keypoint_a, keypoint_b` |
//! | `observations.txt` | `point_id, image_id, keypoint_id` (optional) |
//! | `points3d.txt` | `point_id, x, y, z` (optional) |
//!
//! Images in `sensors.txt` that are not queries form the database.

mod binary;
mod results;
mod text;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, Vector3};

use crate::geometry::{CameraIntrinsics, Pose};
use crate::localization::{Keypoints, MapPoint, MatchSet, PointMap};
use crate::retrieval::{normalize_all, DescriptorSet};
use crate::ImageId;

pub use binary::{read_descriptors, read_keypoints, write_descriptors, write_keypoints};
pub use results::{
    load_pairs, load_rankings, load_results, save_pairs, save_rankings, save_results, ResultRecord,
};
pub use text::{fmt_f64, FORMAT_VERSION};

/// Quaternions whose norm deviates from 1 by more than this are rejected.
pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{file}:{line}: {reason}")]
    Parse { file: String, line: usize, reason: String },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("image {id}: {reason}")]
    CrossRef { id: String, reason: String },
    #[error("quaternion of {image} has norm {norm}")]
    NonUnitQuaternion { image: ImageId, norm: f64 },
    #[error("{file}: unsupported format version `{version}`")]
    UnsupportedVersion { file: String, version: String },
    #[error("invalid image id `{0}` (ids must be non-empty and contain no comma or newline)")]
    InvalidId(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn from_io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            Self::MissingFile(path.to_path_buf())
        } else {
            Self::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    fn cross_ref(id: &str, reason: impl Into<String>) -> Self {
        Self::CrossRef {
            id: id.to_string(),
            reason: reason.into(),
        }
    }
}

/// How the translation in `trajectories.txt` is interpreted on load.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum PoseConvention {
    /// `t` is the camera center `c`.
    #[default]
    Center,
    /// `t` is the world-to-camera translation, `c = −Rᵀ t`.
    WorldToCamera,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    pub normalize_descriptors: bool,
    pub pose_convention: PoseConvention,
}

/// Ground-truth 3D points and the keypoints observing them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Observations {
    pub points: BTreeMap<u64, Vector3<f64>>,
    pub tracks: BTreeMap<u64, BTreeSet<(ImageId, u32)>>,
}

impl Observations {
    /// Point ids observed by each image, for IoU relevance.
    pub fn visibility(&self) -> BTreeMap<ImageId, BTreeSet<u64>> {
        let mut out: BTreeMap<ImageId, BTreeSet<u64>> = BTreeMap::new();
        for (pid, obs) in &self.tracks {
            for (image, _) in obs {
                out.entry(image.clone()).or_default().insert(*pid);
            }
        }
        out
    }

    /// Point map from tracks with a known position and at least two observations.
    pub fn to_point_map(&self) -> Result<PointMap, DataError> {
        let mut map = PointMap::new();
        for (pid, obs) in &self.tracks {
            let Some(position) = self.points.get(pid) else {
                continue;
            };
            if obs.len() < 2 {
                continue;
            }
            map.insert(
                *pid,
                MapPoint {
                    position: *position,
                    observations: obs.clone(),
                },
            )
            .map_err(|e| DataError::cross_ref(&pid.to_string(), e.to_string()))?;
        }
        Ok(map)
    }

    pub fn from_point_map(map: &PointMap) -> Self {
        Self {
            points: map.iter().map(|(id, p)| (*id, p.position)).collect(),
            tracks: map.iter().map(|(id, p)| (*id, p.observations.clone())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub intrinsics: BTreeMap<ImageId, CameraIntrinsics>,
    /// Database poses and any available query ground truth.
    pub poses: BTreeMap<ImageId, Pose>,
    pub queries: BTreeSet<ImageId>,
    pub descriptors: DescriptorSet,
    pub keypoints: Keypoints,
    pub matches: MatchSet,
    pub observations: Option<Observations>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub queries_without_ground_truth: Vec<ImageId>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.queries_without_ground_truth.is_empty() && self.warnings.is_empty()
    }
}

impl Dataset {
    pub fn database_ids(&self) -> Vec<ImageId> {
        self.intrinsics
            .keys()
            .filter(|id| !self.queries.contains(*id))
            .cloned()
            .collect()
    }

    pub fn query_ids(&self) -> Vec<ImageId> {
        self.queries.iter().cloned().collect()
    }

    pub fn database_poses(&self) -> BTreeMap<ImageId, Pose> {
        self.poses
            .iter()
            .filter(|(id, _)| !self.queries.contains(*id))
            .map(|(id, p)| (id.clone(), *p))
            .collect()
    }

    pub fn database_descriptors(&self) -> DescriptorSet {
        let db = self.database_ids();
        self.descriptors.subset(db.iter())
    }

    /// Matches between database images only.
    pub fn database_matches(&self) -> MatchSet {
        self.matches.filter(|id| !self.queries.contains(id))
    }

    /// Checks cross-references. Hard inconsistencies are errors; gaps that
    /// only limit what can be evaluated are reported as warnings.
    pub fn validate(&self) -> Result<ValidationReport, DataError> {
        let declared = |id: &str, what: &str| {
            if self.intrinsics.contains_key(id) {
                Ok(())
            } else {
                Err(DataError::cross_ref(id, format!("referenced in {what} but not declared in sensors.txt")))
            }
        };
        for id in self.poses.keys() {
            declared(id, "trajectories.txt")?;
        }
        for id in &self.queries {
            declared(id, "queries.txt")?;
        }
        for (id, _) in self.descriptors.iter() {
            declared(id, "global_descriptors.idx")?;
        }
        for id in self.keypoints.keys() {
            declared(id, "keypoints/")?;
        }
        for ((a, b), pairs) in self.matches.iter() {
            for id in [a, b] {
                declared(id, "matches.txt")?;
            }
            for &(ka, kb) in pairs {
                for (id, kp) in [(a, ka), (b, kb)] {
                    let n = self.keypoints.get(id).map_or(0, Vec::len);
                    if kp as usize >= n {
                        return Err(DataError::cross_ref(
                            id,
                            format!("matches.txt uses keypoint {kp} but the image has {n} keypoints"),
                        ));
                    }
                }
            }
        }
        if let Some(obs) = &self.observations {
            for (pid, track) in &obs.tracks {
                for (id, kp) in track {
                    declared(id, "observations.txt")?;
                    let n = self.keypoints.get(id).map_or(0, Vec::len);
                    if *kp as usize >= n {
                        return Err(DataError::cross_ref(
                            id,
                            format!("observations.txt links keypoint {kp} to point {pid} but the image has {n} keypoints"),
                        ));
                    }
                }
            }
        }
        for id in self.database_ids() {
            if !self.poses.contains_key(&id) {
                return Err(DataError::cross_ref(&id, "database image without a pose in trajectories.txt"));
            }
        }

        let mut report = ValidationReport::default();
        for q in &self.queries {
            if !self.poses.contains_key(q) {
                report.queries_without_ground_truth.push(q.clone());
            }
        }
        for id in self.intrinsics.keys() {
            if !self.descriptors.contains(id) {
                report.warnings.push(format!("image {id} has no global descriptor"));
            }
            if !self.keypoints.contains_key(id) {
                report.warnings.push(format!("image {id} has no keypoint file"));
            }
        }
        if let Some(obs) = &self.observations {
            let missing = obs.tracks.keys().filter(|p| !obs.points.contains_key(p)).count();
            if missing > 0 && !obs.points.is_empty() {
                report.warnings.push(format!("{missing} observed points have no position in points3d.txt"));
            }
        }
        Ok(report)
    }
}

fn keypoint_path(root: &Path, id: &str) -> PathBuf {
    root.join("keypoints").join(format!("{id}.bin"))
}

fn check_id(id: &str) -> Result<(), DataError> {
    if id.is_empty() || id.contains([',', '\n', '\r']) || id.starts_with('#') || id.trim() != id {
        return Err(DataError::InvalidId(id.to_string()));
    }
    Ok(())
}

fn parse_pose(row: &text::Row, convention: PoseConvention) -> Result<(ImageId, Pose), DataError> {
    let id = row.id(0)?;
    let mut v = [0.0f64; 7];
    for (i, slot) in v.iter_mut().enumerate() {
        *slot = row.parse(i + 1, "number")?;
        if !slot.is_finite() {
            return Err(row.error("non-finite pose value"));
        }
    }
    let q = Quaternion::new(v[0], v[1], v[2], v[3]);
    let norm = q.norm();
    if (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
        return Err(DataError::NonUnitQuaternion { image: id, norm });
    }
    let t = Vector3::new(v[4], v[5], v[6]);
    let pose = Pose::new(t, q).map_err(|e| row.error(e.to_string()))?;
    let pose = match convention {
        PoseConvention::Center => pose,
        PoseConvention::WorldToCamera => {
            Pose::from_unit(-(pose.orientation().inverse() * t), *pose.orientation())
        }
    };
    Ok((id, pose))
}

/// Loads and validates a dataset directory.
pub fn load_dataset(root: &Path, options: LoadOptions) -> Result<(Dataset, ValidationReport), DataError> {
    if !root.is_dir() {
        return Err(DataError::MissingFile(root.to_path_buf()));
    }
    let mut intrinsics = BTreeMap::new();
    for row in text::read_table(&root.join("sensors.txt"), "sensors", 7)? {
        let id = row.id(0)?;
        let intr = CameraIntrinsics {
            width: row.parse(1, "width")?,
            height: row.parse(2, "height")?,
            fx: row.parse(3, "fx")?,
            fy: row.parse(4, "fy")?,
            cx: row.parse(5, "cx")?,
            cy: row.parse(6, "cy")?,
        };
        intr.validate().map_err(|e| row.error(e.to_string()))?;
        if intrinsics.insert(id.clone(), intr).is_some() {
            return Err(row.error(format!("duplicate image {id}")));
        }
    }

    let mut poses = BTreeMap::new();
    for row in text::read_table(&root.join("trajectories.txt"), "trajectories", 8)? {
        let (id, pose) = parse_pose(&row, options.pose_convention)?;
        if poses.insert(id.clone(), pose).is_some() {
            return Err(row.error(format!("duplicate pose for {id}")));
        }
    }

    let mut queries = BTreeSet::new();
    for row in text::read_table(&root.join("queries.txt"), "queries", 1)? {
        queries.insert(row.id(0)?);
    }

    let mut descriptors = read_descriptors(
        &root.join("global_descriptors.bin"),
        &root.join("global_descriptors.idx"),
    )?;
    if options.normalize_descriptors {
        descriptors = normalize_all(&descriptors).map_err(|e| DataError::Parse {
            file: "global_descriptors.bin".into(),
            line: 0,
            reason: e.to_string(),
        })?;
    }

    let mut keypoints = Keypoints::new();
    for id in intrinsics.keys() {
        let path = keypoint_path(root, id);
        if path.is_file() {
            keypoints.insert(id.clone(), read_keypoints(&path)?);
        }
    }

    let mut grouped: BTreeMap<(ImageId, ImageId), Vec<(u32, u32)>> = BTreeMap::new();
    let mut match_lines: BTreeMap<(ImageId, ImageId), usize> = BTreeMap::new();
    for row in text::read_table(&root.join("matches.txt"), "matches", 4)? {
        let (a, b) = (row.id(0)?, row.id(1)?);
        let (ka, kb): (u32, u32) = (row.parse(2, "keypoint id")?, row.parse(3, "keypoint id")?);
        if a == b {
            return Err(row.error("image matched with itself"));
        }
        let (key, m) = if a < b { ((a, b), (ka, kb)) } else { ((b, a), (kb, ka)) };
        match_lines.entry(key.clone()).or_insert(row.line);
        grouped.entry(key).or_default().push(m);
    }
    let mut matches = MatchSet::new();
    for ((a, b), pairs) in grouped {
        let line = match_lines[&(a.clone(), b.clone())];
        matches.insert(a, b, pairs).map_err(|e| DataError::Parse {
            file: "matches.txt".into(),
            line,
            reason: e.to_string(),
        })?;
    }

    let observations = if root.join("observations.txt").is_file() {
        Some(load_observations(root)?)
    } else {
        None
    };

    let dataset = Dataset {
        intrinsics,
        poses,
        queries,
        descriptors,
        keypoints,
        matches,
        observations,
    };
    let report = dataset.validate()?;
    Ok((dataset, report))
}

/// Reads `observations.txt` and, when present, `points3d.txt` from `root`.
pub fn load_observations(root: &Path) -> Result<Observations, DataError> {
    let mut obs = Observations::default();
    for row in text::read_table(&root.join("observations.txt"), "observations", 3)? {
        let pid: u64 = row.parse(0, "point id")?;
        let entry = (row.id(1)?, row.parse(2, "keypoint id")?);
        if !obs.tracks.entry(pid).or_default().insert(entry) {
            return Err(row.error("duplicate observation"));
        }
    }
    let pts_path = root.join("points3d.txt");
    if pts_path.is_file() {
        for row in text::read_table(&pts_path, "points3d", 4)? {
            let pid: u64 = row.parse(0, "point id")?;
            let p = Vector3::new(row.parse(1, "x")?, row.parse(2, "y")?, row.parse(3, "z")?);
            if obs.points.insert(pid, p).is_some() {
                return Err(row.error(format!("duplicate point {pid}")));
            }
        }
    }
    Ok(obs)
}

fn write_text(path: &Path, content: &str) -> Result<(), DataError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| DataError::from_io(dir, e))?;
    }
    std::fs::write(path, content).map_err(|e| DataError::from_io(path, e))
}

/// Writes poses as `image_id, qw, qx, qy, qz, tx, ty, tz` with `t` the center.
pub fn save_trajectories(path: &Path, poses: &BTreeMap<ImageId, Pose>) -> Result<(), DataError> {
    let mut s = text::header("trajectories", "image_id, qw, qx, qy, qz, tx, ty, tz");
    for (id, pose) in poses {
        check_id(id)?;
        let c = pose.position();
        let q = pose.wxyz();
        let fields: Vec<String> = q.iter().chain(c.iter()).map(|x| fmt_f64(*x)).collect();
        let _ = writeln!(s, "{id},{}", fields.join(","));
    }
    write_text(path, &s)
}

/// Writes `observations.txt` and `points3d.txt` for a point map.
pub fn save_observations(root: &Path, obs: &Observations) -> Result<(), DataError> {
    let mut s = text::header("observations", "point_id, image_id, keypoint_id");
    for (pid, track) in &obs.tracks {
        for (id, kp) in track {
            check_id(id)?;
            let _ = writeln!(s, "{pid},{id},{kp}");
        }
    }
    write_text(&root.join("observations.txt"), &s)?;
    let mut s = text::header("points3d", "point_id, x, y, z");
    for (pid, p) in &obs.points {
        let _ = writeln!(s, "{pid},{},{},{}", fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z));
    }
    write_text(&root.join("points3d.txt"), &s)
}

/// Writes a dataset directory. Output depends only on the dataset contents.
pub fn save_dataset(root: &Path, dataset: &Dataset) -> Result<(), DataError> {
    std::fs::create_dir_all(root).map_err(|e| DataError::from_io(root, e))?;

    let mut s = text::header("sensors", "image_id, width, height, fx, fy, cx, cy");
    for (id, k) in &dataset.intrinsics {
        check_id(id)?;
        let _ = writeln!(
            s,
            "{id},{},{},{},{},{},{}",
            k.width,
            k.height,
            fmt_f64(k.fx),
            fmt_f64(k.fy),
            fmt_f64(k.cx),
            fmt_f64(k.cy)
        );
    }
    write_text(&root.join("sensors.txt"), &s)?;

    save_trajectories(&root.join("trajectories.txt"), &dataset.poses)?;

    let mut s = text::header("queries", "image_id");
    for q in &dataset.queries {
        check_id(q)?;
        let _ = writeln!(s, "{q}");
    }
    write_text(&root.join("queries.txt"), &s)?;

    write_descriptors(
        &root.join("global_descriptors.bin"),
        &root.join("global_descriptors.idx"),
        &dataset.descriptors,
    )?;

    for (id, kps) in &dataset.keypoints {
        check_id(id)?;
        write_keypoints(&keypoint_path(root, id), kps)?;
    }

    let mut s = text::header("matches", "image_a, image_b, keypoint_a, keypoint_b");
    for ((a, b), pairs) in dataset.matches.iter() {
        for (ka, kb) in pairs {
            let _ = writeln!(s, "{a},{b},{ka},{kb}");
        }
    }
    write_text(&root.join("matches.txt"), &s)?;

    if let Some(obs) = &dataset.observations {
        save_observations(root, obs)?;
    }
    Ok(())
}
