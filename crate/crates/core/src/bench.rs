//! Benchmark driver: retrieval, the three localization tasks over a grid of
//! k, localization recall at error thresholds and the retrieval/localization
//! scatter used to study their correlation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approximation::{approximate_pose, ApproximationConfig, ApproximationError, WeightingMethod, DEFAULT_ALPHA};
use crate::geometry::{pose_position_error, pose_rotation_error, Pose};
use crate::io::{fmt_f64, save_rankings, save_results, DataError, Dataset, Observations, ResultRecord};
use crate::localization::{
    localize_global, localize_local_sfm, LocalSfmInput, LocalizationResult, Outcome, PointMap, QueryView,
    RansacParams, DEFAULT_MIN_TRIANGULATION_ANGLE,
};
use crate::retrieval::{
    evaluate_rankings, normalize_all, rank_all, Ranking, RelevanceMode, RelevanceOracle, RetrievalError,
};
use crate::ImageId;

pub const DEFAULT_K_GRID: [usize; 6] = [1, 2, 5, 10, 20, 50];

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("query {0} has no ground-truth pose")]
    MissingGroundTruth(ImageId),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("retrieval failed: {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("pose approximation failed for {query}: {source}")]
    Approximation {
        query: ImageId,
        source: ApproximationError,
    },
}

/// A (position, rotation) error pair. A pose passes when both errors are
/// strictly below it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub position_m: f64,
    pub rotation_deg: f64,
}

impl Threshold {
    pub const fn new(position_m: f64, rotation_deg: f64) -> Self {
        Self {
            position_m,
            rotation_deg,
        }
    }

    pub fn accepts(&self, position_error: f64, rotation_error_deg: f64) -> bool {
        position_error < self.position_m && rotation_error_deg < self.rotation_deg
    }

    fn at_most(&self, other: &Threshold) -> bool {
        self.position_m <= other.position_m && self.rotation_deg <= other.rotation_deg
    }
}

impl FromStr for Threshold {
    type Err = String;

    /// Parses `meters,degrees`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (p, r) = s
            .split_once(',')
            .ok_or_else(|| format!("threshold `{s}` is not `meters,degrees`"))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite() && *x > 0.0)
                .ok_or_else(|| format!("threshold value `{v}` is not a positive number"))
        };
        Ok(Self::new(parse(p)?, parse(r)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTriple {
    pub high: Threshold,
    pub medium: Threshold,
    pub low: Threshold,
}

impl Default for ThresholdTriple {
    fn default() -> Self {
        Self {
            high: Threshold::new(0.25, 2.0),
            medium: Threshold::new(0.5, 5.0),
            low: Threshold::new(5.0, 10.0),
        }
    }
}

impl ThresholdTriple {
    /// Stricter levels must not exceed looser ones in either component, so
    /// passing a stricter level implies passing every looser one.
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.high.at_most(&self.medium) && self.medium.at_most(&self.low) {
            Ok(())
        } else {
            Err(BenchError::Config(format!(
                "thresholds must nest (high <= medium <= low in both meters and degrees), got {self:?}"
            )))
        }
    }

    /// Applies overrides such as `low=5,10 medium=0.5,5 high=0.25,2` to the
    /// defaults.
    pub fn parse_overrides<S: AsRef<str>>(items: &[S]) -> Result<Self, BenchError> {
        let mut t = Self::default();
        for item in items.iter().flat_map(|s| s.as_ref().split_whitespace().map(str::to_string).collect::<Vec<_>>()) {
            let (level, value) = item
                .split_once('=')
                .ok_or_else(|| BenchError::Config(format!("threshold `{item}` is not `level=meters,degrees`")))?;
            let value: Threshold = value.parse().map_err(BenchError::Config)?;
            match level {
                "low" => t.low = value,
                "medium" => t.medium = value,
                "high" => t.high = value,
                other => {
                    return Err(BenchError::Config(format!(
                        "unknown threshold level `{other}` (expected low, medium or high)"
                    )))
                }
            }
        }
        t.validate()?;
        Ok(t)
    }
}

/// Percentage of queries localized within each threshold.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalizedPct {
    pub high: f64,
    pub medium: f64,
    pub low: f64,
}

/// Strictly increasing values of k, all at least 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KGrid(Vec<usize>);

impl KGrid {
    pub fn new(values: Vec<usize>) -> Result<Self, BenchError> {
        if values.is_empty() {
            return Err(BenchError::Config("k grid is empty".into()));
        }
        if values[0] < 1 {
            return Err(BenchError::Config("k values must be at least 1".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BenchError::Config(format!("k grid {values:?} is not strictly increasing")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[usize] {
        &self.0
    }

    pub fn max(&self) -> usize {
        *self.0.last().expect("non-empty")
    }
}

impl Default for KGrid {
    fn default() -> Self {
        Self(DEFAULT_K_GRID.to_vec())
    }
}

impl FromStr for KGrid {
    type Err = BenchError;

    /// Parses a comma-separated list such as `1,2,5`.
    fn from_str(s: &str) -> Result<Self, BenchError> {
        let values = s
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| BenchError::Config(format!("k value `{v}` is not a positive integer")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    /// Pose approximation from the top-k poses.
    Task1(WeightingMethod),
    /// Local map triangulated from the top-k images.
    Task2a,
    /// Pre-built global map.
    Task2b,
}

impl Task {
    pub const ALL: [Task; 5] = [
        Task::Task1(WeightingMethod::Ewb),
        Task::Task1(WeightingMethod::Bdi),
        Task::Task1(WeightingMethod::Csi),
        Task::Task2a,
        Task::Task2b,
    ];

    pub fn name(self) -> String {
        match self {
            Task::Task1(m) => format!("task1-{m}"),
            Task::Task2a => "task2a".into(),
            Task::Task2b => "task2b".into(),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Task {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        Self::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| {
            BenchError::Config(format!(
                "unknown task `{s}` (expected task1-ewb, task1-bdi, task1-csi, task2a or task2b)"
            ))
        })
    }
}

/// A query counts for a threshold iff it succeeded and both errors are below
/// it. Failures count as not localized. Percentages are over all results.
pub fn localized_within(
    results: &[LocalizationResult],
    ground_truth: &BTreeMap<ImageId, Pose>,
    thresholds: &ThresholdTriple,
) -> Result<LocalizedPct, BenchError> {
    let mut counts = [0usize; 3];
    for r in results {
        let truth = ground_truth
            .get(&r.query)
            .ok_or_else(|| BenchError::MissingGroundTruth(r.query.clone()))?;
        if let Some(pose) = r.outcome.pose() {
            let (dp, dr) = (pose_position_error(pose, truth), pose_rotation_error(pose, truth));
            for (c, t) in counts.iter_mut().zip([thresholds.high, thresholds.medium, thresholds.low]) {
                if t.accepts(dp, dr) {
                    *c += 1;
                }
            }
        }
    }
    let pct = |c: usize| {
        if results.is_empty() {
            0.0
        } else {
            100.0 * c as f64 / results.len() as f64
        }
    };
    Ok(LocalizedPct {
        high: pct(counts[0]),
        medium: pct(counts[1]),
        low: pct(counts[2]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkConfig {
    /// Label written into the scatter rows.
    pub dataset_name: String,
    pub tasks: Vec<Task>,
    pub kgrid: KGrid,
    pub thresholds: ThresholdTriple,
    pub seed: u64,
    pub alpha: f64,
    /// Relevance used for the scatter rows.
    pub relevance: RelevanceMode,
    pub ransac: RansacParams,
    pub min_triangulation_angle_deg: f64,
    /// Worker threads; 0 uses the rayon default. Left out of the summary so
    /// that outputs do not depend on it.
    #[serde(skip)]
    pub jobs: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            dataset_name: "dataset".into(),
            tasks: Task::ALL.to_vec(),
            kgrid: KGrid::default(),
            thresholds: ThresholdTriple::default(),
            seed: 0,
            alpha: DEFAULT_ALPHA,
            relevance: RelevanceMode::Iou,
            ransac: RansacParams::default(),
            min_triangulation_angle_deg: DEFAULT_MIN_TRIANGULATION_ANGLE,
            jobs: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.tasks.is_empty() {
            return Err(BenchError::Config("no task selected".into()));
        }
        let unique: BTreeSet<_> = self.tasks.iter().collect();
        if unique.len() != self.tasks.len() {
            return Err(BenchError::Config("a task is listed twice".into()));
        }
        KGrid::new(self.kgrid.0.clone())?;
        self.thresholds.validate()?;
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(BenchError::Config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.min_triangulation_angle_deg.is_finite() && self.min_triangulation_angle_deg >= 0.0) {
            return Err(BenchError::Config("minimum triangulation angle must be >= 0".into()));
        }
        self.ransac.validate().map_err(BenchError::Config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRow {
    pub method: String,
    pub k: usize,
    pub queries: usize,
    pub successes: usize,
    pub pct: LocalizedPct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub relevance: RelevanceMode,
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub evaluated: usize,
    pub undefined: usize,
    pub short_rankings: usize,
}

/// One point of the retrieval/localization scatter: a (method, k) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub dataset: String,
    pub method: String,
    pub k: usize,
    pub relevance: RelevanceMode,
    pub recall: f64,
    pub precision: f64,
    pub pct: LocalizedPct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub config: BenchmarkConfig,
    pub rankings: Vec<Ranking>,
    /// Ordered by (method, k, query).
    pub results: Vec<ResultRecord>,
    pub localization: Vec<LocalizationRow>,
    pub retrieval: Vec<RetrievalRow>,
    pub scatter: Vec<ScatterRow>,
}

impl Report {
    pub fn localization_row(&self, task: Task, k: usize) -> Option<&LocalizationRow> {
        let name = task.name();
        self.localization.iter().find(|r| r.method == name && r.k == k)
    }

    pub fn retrieval_row(&self, relevance: RelevanceMode, k: usize) -> Option<&RetrievalRow> {
        self.retrieval.iter().find(|r| r.relevance == relevance && r.k == k)
    }
}

/// The global map restricted to database images: tracks with a position and
/// at least two database observations.
pub fn database_map(dataset: &Dataset) -> Result<PointMap, DataError> {
    let obs = dataset
        .observations
        .as_ref()
        .ok_or_else(|| DataError::MissingFile("observations.txt".into()))?;
    let tracks = obs
        .tracks
        .iter()
        .map(|(pid, t)| {
            let db: BTreeSet<(ImageId, u32)> = t.iter().filter(|(img, _)| !dataset.queries.contains(img)).cloned().collect();
            (*pid, db)
        })
        .collect();
    Observations {
        points: obs.points.clone(),
        tracks,
    }
    .to_point_map()
}

fn oracles(dataset: &Dataset) -> Vec<RelevanceOracle> {
    let mut out = Vec::new();
    if let Some(obs) = &dataset.observations {
        out.push(RelevanceOracle::iou(obs.visibility()));
    }
    out.push(RelevanceOracle::pose(dataset.poses.clone()));
    out
}

/// P@k and R@k at every k of the grid, under IoU relevance when the dataset
/// has observations and under pose relevance always.
pub fn evaluate_retrieval(dataset: &Dataset, rankings: &[Ranking], kgrid: &KGrid) -> Vec<RetrievalRow> {
    let db_ids = dataset.database_ids();
    let mut rows = Vec::new();
    for oracle in oracles(dataset) {
        for &k in kgrid.values() {
            let s = evaluate_rankings(rankings, &oracle, &db_ids, k);
            rows.push(RetrievalRow {
                relevance: oracle.mode(),
                k,
                precision: s.mean_precision,
                recall: s.mean_recall,
                evaluated: s.evaluated,
                undefined: s.undefined,
                short_rankings: s.short_rankings,
            });
        }
    }
    rows
}

/// Runs retrieval and every configured task over the k grid. Output does not
/// depend on `jobs`.
pub fn run_benchmark(dataset: &Dataset, config: &BenchmarkConfig) -> Result<Report, BenchError> {
    run_in_pool(dataset, config, None)
}

/// [`run_benchmark`] with task2b registering against `global_map` instead of
/// the map read from the dataset observations.
pub fn run_benchmark_with_map(
    dataset: &Dataset,
    config: &BenchmarkConfig,
    global_map: &PointMap,
) -> Result<Report, BenchError> {
    run_in_pool(dataset, config, Some(global_map))
}

fn run_in_pool(dataset: &Dataset, config: &BenchmarkConfig, map: Option<&PointMap>) -> Result<Report, BenchError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| BenchError::Config(format!("cannot start {} worker threads: {e}", config.jobs)))?;
    pool.install(|| run(dataset, config, map))
}

fn run(dataset: &Dataset, config: &BenchmarkConfig, map: Option<&PointMap>) -> Result<Report, BenchError> {
    let queries = dataset.query_ids();
    if queries.is_empty() {
        return Err(BenchError::Config("the dataset declares no queries".into()));
    }
    for q in &queries {
        if !dataset.poses.contains_key(q) {
            return Err(BenchError::MissingGroundTruth(q.clone()));
        }
    }
    let db_ids = dataset.database_ids();
    if db_ids.is_empty() {
        return Err(BenchError::Config("the dataset has no database images".into()));
    }
    if config.relevance == RelevanceMode::Iou && dataset.observations.is_none() {
        return Err(BenchError::Config(
            "IoU relevance needs observations.txt; use --relevance pose".into(),
        ));
    }
    let global_map = if !config.tasks.contains(&Task::Task2b) {
        None
    } else if let Some(map) = map {
        Some(map.clone())
    } else {
        Some(database_map(dataset).map_err(|_| {
            BenchError::Config("task2b needs observations.txt and points3d.txt for the global map".into())
        })?)
    };

    let descriptors = normalize_all(&dataset.descriptors)?;
    let db_descriptors = descriptors.subset(db_ids.iter());
    let rankings = rank_all(&queries, &descriptors, &db_descriptors, config.kgrid.max())?;

    let db_poses = dataset.database_poses();
    let mut results = Vec::new();
    let mut localization = Vec::new();
    let mut by_method: BTreeMap<(String, usize), LocalizedPct> = BTreeMap::new();
    for task in &config.tasks {
        let per_query: Vec<Vec<LocalizationResult>> = rankings
            .par_iter()
            .map(|ranking| {
                config
                    .kgrid
                    .values()
                    .iter()
                    .map(|&k| run_task(*task, k, ranking, dataset, &descriptors, &db_descriptors, &db_poses, global_map.as_ref(), config))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()?;
        for (i, &k) in config.kgrid.values().iter().enumerate() {
            let at_k: Vec<LocalizationResult> = per_query.iter().map(|rs| rs[i].clone()).collect();
            let pct = localized_within(&at_k, &dataset.poses, &config.thresholds)?;
            localization.push(LocalizationRow {
                method: task.name(),
                k,
                queries: at_k.len(),
                successes: at_k.iter().filter(|r| r.outcome.is_success()).count(),
                pct,
            });
            by_method.insert((task.name(), k), pct);
            results.extend(at_k.into_iter().map(|result| ResultRecord {
                method: task.name(),
                result,
            }));
        }
    }

    let retrieval = evaluate_retrieval(dataset, &rankings, &config.kgrid);

    let mut scatter = Vec::new();
    for task in &config.tasks {
        for &k in config.kgrid.values() {
            let r = retrieval
                .iter()
                .find(|r| r.relevance == config.relevance && r.k == k)
                .expect("retrieval rows cover every k");
            scatter.push(ScatterRow {
                dataset: config.dataset_name.clone(),
                method: task.name(),
                k,
                relevance: config.relevance,
                recall: r.recall,
                precision: r.precision,
                pct: by_method[&(task.name(), k)],
            });
        }
    }

    Ok(Report {
        config: config.clone(),
        rankings,
        results,
        localization,
        retrieval,
        scatter,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_task(
    task: Task,
    k: usize,
    ranking: &Ranking,
    dataset: &Dataset,
    descriptors: &crate::retrieval::DescriptorSet,
    db_descriptors: &crate::retrieval::DescriptorSet,
    db_poses: &BTreeMap<ImageId, Pose>,
    global_map: Option<&PointMap>,
    config: &BenchmarkConfig,
) -> Result<LocalizationResult, BenchError> {
    let query = &ranking.query;
    let params = config.ransac.with_seed(config.seed);
    let view = || QueryView {
        id: query,
        keypoints: dataset.keypoints.get(query).map_or(&[][..], Vec::as_slice),
        intrinsics: &dataset.intrinsics[query],
    };
    Ok(match task {
        Task::Task1(method) => {
            let approx_config = ApproximationConfig::new(method, k).with_alpha(config.alpha);
            let q = descriptors.get(query).expect("ranked queries have descriptors");
            let approx = approximate_pose(q, ranking, db_descriptors, db_poses, &approx_config).map_err(|source| {
                BenchError::Approximation {
                    query: query.clone(),
                    source,
                }
            })?;
            LocalizationResult {
                query: query.clone(),
                k,
                outcome: Outcome::Success {
                    pose: approx.pose,
                    inliers: 0,
                    matches: 0,
                },
            }
        }
        Task::Task2a => {
            let scene = LocalSfmInput {
                poses: db_poses,
                intrinsics: &dataset.intrinsics,
                keypoints: &dataset.keypoints,
                matches: &dataset.matches,
                min_tri_angle_deg: config.min_triangulation_angle_deg,
            };
            localize_local_sfm(&view(), ranking, k, &scene, &params)
        }
        Task::Task2b => {
            let map = global_map.expect("built when task2b is selected");
            localize_global(&view(), ranking, k, &dataset.matches, map, &params)
        }
    })
}

pub const SCATTER_HEADER: &str =
    "dataset,method,k,relevance,recall,precision,pct_high,pct_medium,pct_low";
pub const LOCALIZATION_HEADER: &str = "method,k,queries,successes,pct_high,pct_medium,pct_low";
pub const RETRIEVAL_HEADER: &str = "relevance,k,precision,recall,evaluated,undefined,short_rankings";

fn relevance_name(r: RelevanceMode) -> &'static str {
    match r {
        RelevanceMode::Iou => "iou",
        RelevanceMode::Pose => "pose",
    }
}

fn write_file(path: &Path, content: &str) -> Result<(), DataError> {
    std::fs::write(path, content).map_err(|e| DataError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn scatter_csv(rows: &[ScatterRow]) -> String {
    let mut s = format!("{SCATTER_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.dataset,
            r.method,
            r.k,
            relevance_name(r.relevance),
            fmt_f64(r.recall),
            fmt_f64(r.precision),
            fmt_f64(r.pct.high),
            fmt_f64(r.pct.medium),
            fmt_f64(r.pct.low)
        );
    }
    s
}

pub fn localization_csv(rows: &[LocalizationRow]) -> String {
    let mut s = format!("{LOCALIZATION_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.method,
            r.k,
            r.queries,
            r.successes,
            fmt_f64(r.pct.high),
            fmt_f64(r.pct.medium),
            fmt_f64(r.pct.low)
        );
    }
    s
}

pub fn retrieval_csv(rows: &[RetrievalRow]) -> String {
    let mut s = format!("{RETRIEVAL_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            relevance_name(r.relevance),
            r.k,
            fmt_f64(r.precision),
            fmt_f64(r.recall),
            r.evaluated,
            r.undefined,
            r.short_rankings
        );
    }
    s
}

/// JSON summary of a report: configuration and aggregate tables.
pub fn summary_json(report: &Report) -> String {
    #[derive(Serialize)]
    struct Summary<'a> {
        config: &'a BenchmarkConfig,
        localization: &'a [LocalizationRow],
        retrieval: &'a [RetrievalRow],
        scatter: &'a [ScatterRow],
    }
    let mut s = serde_json::to_string_pretty(&Summary {
        config: &report.config,
        localization: &report.localization,
        retrieval: &report.retrieval,
        scatter: &report.scatter,
    })
    .expect("summary is plain data");
    s.push('\n');
    s
}

/// Pretty-printed JSON array of retrieval rows, newline-terminated.
pub fn retrieval_json(rows: &[RetrievalRow]) -> String {
    let mut s = serde_json::to_string_pretty(rows).expect("rows are plain data");
    s.push('\n');
    s
}

/// Writes `results.csv`, `rankings.csv`, `localization.csv`, `retrieval.csv`,
/// `scatter.csv` and `summary.json`. With `plot_data`, also one CSV per
/// figure axis pair: retrieval curves, pose approximation curves and
/// localization curves.
pub fn write_report(dir: &Path, report: &Report, plot_data: bool) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    save_results(&dir.join("results.csv"), &report.results)?;
    save_rankings(&dir.join("rankings.csv"), &report.rankings)?;
    write_file(&dir.join("localization.csv"), &localization_csv(&report.localization))?;
    write_file(&dir.join("retrieval.csv"), &retrieval_csv(&report.retrieval))?;
    write_file(&dir.join("scatter.csv"), &scatter_csv(&report.scatter))?;
    write_file(&dir.join("summary.json"), &summary_json(report))?;
    if plot_data {
        let plots = dir.join("plots");
        std::fs::create_dir_all(&plots).map_err(|e| DataError::Io {
            path: plots.clone(),
            source: e,
        })?;
        write_file(&plots.join("retrieval_vs_k.csv"), &retrieval_csv(&report.retrieval))?;
        let (task1, task2): (Vec<LocalizationRow>, Vec<LocalizationRow>) = report
            .localization
            .iter()
            .cloned()
            .partition(|r| r.method.starts_with("task1"));
        write_file(&plots.join("pose_approximation_vs_k.csv"), &localization_csv(&task1))?;
        write_file(&plots.join("localization_vs_k.csv"), &localization_csv(&task2))?;
        write_file(&plots.join("scatter.csv"), &scatter_csv(&report.scatter))?;
    }
    Ok(())
}
