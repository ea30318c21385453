//! `locbench`: command-line driver for the retrieval-based localization benchmark.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use locbench_core::approximation::{WeightingMethod, DEFAULT_ALPHA};
use locbench_core::bench::{
    evaluate_retrieval, retrieval_csv, retrieval_json, run_benchmark, run_benchmark_with_map, write_report,
    BenchError, BenchmarkConfig, KGrid, Report, Task, ThresholdTriple,
};
use locbench_core::geometry::{Frustum, DEFAULT_FAR, DEFAULT_NEAR};
use locbench_core::io::{
    load_dataset, load_observations, load_rankings, save_dataset, save_observations, save_pairs, save_rankings,
    DataError, Dataset, LoadOptions, Observations, PoseConvention,
};
use locbench_core::localization::{build_global_map, PointMap, DEFAULT_MIN_TRIANGULATION_ANGLE};
use locbench_core::retrieval::{normalize_all, rank_all, RelevanceMode};
use locbench_core::synthetic::{generate, DescriptorMode, DescriptorModel, SceneError, SceneSpec, TrajectoryPattern};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(name = "locbench", version, about = "Benchmark retrieval for pose approximation and visual localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Rank the database against every query by global-descriptor similarity.
    Rank(RankArgs),
    /// Select database image pairs by frustum overlap.
    Pairs(PairsArgs),
    /// Triangulate a global map from the database matches.
    Map(MapArgs),
    /// Pose approximation from the top-k database poses.
    Task1(Task1Args),
    /// Localization against a local map triangulated from the top-k images.
    Task2a(TaskArgs),
    /// Localization against a pre-built global map.
    Task2b(Task2bArgs),
    /// P@k and R@k of rankings under IoU and pose relevance.
    EvalRetrieval(EvalArgs),
    /// Every task, the retrieval metrics and the scatter data.
    Report(Task2bArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Relevance {
    Iou,
    Pose,
}

impl From<Relevance> for RelevanceMode {
    fn from(r: Relevance) -> Self {
        match r {
            Relevance::Iou => RelevanceMode::Iou,
            Relevance::Pose => RelevanceMode::Pose,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Convention {
    /// The trajectory translation is the camera center.
    Center,
    /// The trajectory translation is the world-to-camera translation.
    WorldToCamera,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Ewb,
    Bdi,
    Csi,
}

impl From<Method> for WeightingMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Ewb => WeightingMethod::Ewb,
            Method::Bdi => WeightingMethod::Bdi,
            Method::Csi => WeightingMethod::Csi,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Pattern {
    Ring,
    Grid,
    Corridor,
}

impl From<Pattern> for TrajectoryPattern {
    fn from(p: Pattern) -> Self {
        match p {
            Pattern::Ring => TrajectoryPattern::Ring,
            Pattern::Grid => TrajectoryPattern::Grid,
            Pattern::Corridor => TrajectoryPattern::Corridor,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Descriptors {
    Sensitive,
    Robust,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset root directory.
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Meaning of the translation column in trajectories.txt.
    #[arg(long, value_enum, default_value = "center")]
    pose_convention: Convention,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "ring")]
    pattern: Pattern,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_enum, default_value = "sensitive")]
    descriptors: Descriptors,
    /// Expected norm of the noise added to each unit descriptor.
    #[arg(long)]
    descriptor_noise: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    db_cameras: Option<usize>,
    #[arg(long)]
    queries: Option<usize>,
    /// Keypoint noise standard deviation in pixels.
    #[arg(long)]
    pixel_noise: Option<f64>,
    /// Fraction of matches replaced by wrong ones.
    #[arg(long)]
    outlier_rate: Option<f64>,
    /// Probability that an observation produces no keypoint.
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Args)]
struct RankArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Ranking length per query.
    #[arg(long, default_value_t = 50)]
    k: usize,
}

#[derive(Args)]
struct PairsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Minimum inscribed-sphere radius in meters.
    #[arg(long, default_value_t = 0.0)]
    min_radius: f64,
    /// Keep at most this many pairs per image.
    #[arg(long)]
    max_pairs: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_NEAR)]
    near: f64,
    #[arg(long, default_value_t = DEFAULT_FAR)]
    far: f64,
}

#[derive(Args)]
struct MapArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Minimum triangulation angle in degrees.
    #[arg(long, default_value_t = DEFAULT_MIN_TRIANGULATION_ANGLE)]
    min_tri_angle: f64,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated values of k, strictly increasing.
    #[arg(long, default_value = "1,2,5,10,20,50")]
    k_grid: String,
    /// Threshold overrides such as `low=5,10 medium=0.5,5 high=0.25,2`.
    #[arg(long, num_args = 1..)]
    thresholds: Vec<String>,
    /// CSI exponent.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Relevance used for the scatter rows.
    #[arg(long, value_enum, default_value = "iou")]
    relevance: Relevance,
    /// Run seed for RANSAC.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Minimum triangulation angle in degrees.
    #[arg(long, default_value_t = DEFAULT_MIN_TRIANGULATION_ANGLE)]
    min_tri_angle: f64,
    /// Also write one CSV per figure under `plots/`.
    #[arg(long)]
    emit_plot_data: bool,
    /// Label of the dataset in the scatter rows; defaults to the directory name.
    #[arg(long)]
    dataset_name: Option<String>,
}

#[derive(Args)]
struct Task1Args {
    #[command(flatten)]
    bench: BenchArgs,
    /// Weighting methods to run.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "ewb,bdi,csi")]
    methods: Vec<Method>,
}

#[derive(Args)]
struct TaskArgs {
    #[command(flatten)]
    bench: BenchArgs,
}

#[derive(Args)]
struct Task2bArgs {
    #[command(flatten)]
    bench: BenchArgs,
    /// Directory holding observations.txt and points3d.txt of a pre-built map,
    /// used instead of the dataset's own observations.
    #[arg(long)]
    global_map: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "1,2,5,10,20,50")]
    k_grid: String,
    /// Rankings CSV to evaluate; ranks the dataset when omitted.
    #[arg(long)]
    rankings: Option<PathBuf>,
}

/// An invalid flag value or combination.
#[derive(Debug)]
struct ConfigError(String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<SceneError>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<BenchError>() {
            return match e {
                BenchError::Config(_) => EXIT_CONFIG,
                _ => EXIT_DATA,
            };
        }
        if cause.is::<DataError>() {
            return EXIT_DATA;
        }
    }
    EXIT_DATA
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(&a),
        Command::Rank(a) => rank(&a),
        Command::Pairs(a) => pairs(&a),
        Command::Map(a) => map(&a),
        Command::Task1(a) => {
            let tasks = a.methods.iter().map(|m| Task::Task1((*m).into())).collect();
            bench(&a.bench, tasks, None)
        }
        Command::Task2a(a) => bench(&a.bench, vec![Task::Task2a], None),
        Command::Task2b(a) => bench(&a.bench, vec![Task::Task2b], a.global_map.as_deref()),
        Command::EvalRetrieval(a) => eval_retrieval(&a),
        Command::Report(a) => bench(&a.bench, Task::ALL.to_vec(), a.global_map.as_deref()),
    }
}

fn set_jobs(jobs: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| config_error(format!("cannot start {jobs} worker threads: {e}")))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn load(args: &DataArgs) -> Result<Dataset> {
    let options = LoadOptions {
        pose_convention: match args.pose_convention {
            Convention::Center => PoseConvention::Center,
            Convention::WorldToCamera => PoseConvention::WorldToCamera,
        },
        ..LoadOptions::default()
    };
    let (dataset, report) =
        load_dataset(&args.data, options).with_context(|| format!("cannot load {}", args.data.display()))?;
    for q in &report.queries_without_ground_truth {
        eprintln!("warning: query {q} has no ground-truth pose");
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(dataset)
}

fn kgrid(text: &str) -> Result<KGrid> {
    Ok(text.parse::<KGrid>()?)
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut spec = SceneSpec::new(a.pattern.into());
    spec.seed = a.seed;
    if let Some(n) = a.points {
        spec.n_points = n;
    }
    if let Some(n) = a.db_cameras {
        spec.n_db_cameras = n;
    }
    if let Some(n) = a.queries {
        spec.n_queries = n;
    }
    if let Some(s) = a.pixel_noise {
        spec.pixel_noise_sigma = s;
    }
    if let Some(r) = a.outlier_rate {
        spec.outlier_rate = r;
    }
    if let Some(d) = a.dropout {
        spec.match_dropout = d;
    }
    let mode = match a.descriptors {
        Descriptors::Sensitive => DescriptorMode::PoseSensitive,
        Descriptors::Robust => DescriptorMode::PoseRobust,
    };
    let mut model = DescriptorModel::new(mode);
    if let Some(n) = a.descriptor_noise {
        model = model.with_noise(n);
    }
    let scene = generate(&spec, &model)?;
    save_dataset(&a.out, &scene.dataset)?;
    println!(
        "wrote {} database images and {} queries to {}",
        scene.dataset.database_ids().len(),
        scene.dataset.queries.len(),
        a.out.display()
    );
    Ok(())
}

fn rank(a: &RankArgs) -> Result<()> {
    if a.k == 0 {
        return Err(config_error("--k must be at least 1"));
    }
    set_jobs(a.data.jobs)?;
    let dataset = load(&a.data)?;
    let descriptors = normalize_all(&dataset.descriptors)?;
    let db = descriptors.subset(dataset.database_ids().iter());
    let rankings = rank_all(&dataset.query_ids(), &descriptors, &db, a.k)?;
    create_dir(&a.data.out)?;
    save_rankings(&a.data.out.join("rankings.csv"), &rankings)?;
    println!("ranked {} queries against {} database images", rankings.len(), db.len());
    Ok(())
}

fn pairs(a: &PairsArgs) -> Result<()> {
    set_jobs(a.data.jobs)?;
    let dataset = load(&a.data)?;
    let frusta = dataset
        .database_poses()
        .into_iter()
        .map(|(id, pose)| {
            let f = Frustum::with_range(pose, dataset.intrinsics[&id], a.near, a.far)
                .map_err(|e| config_error(e.to_string()))?;
            Ok((id, f))
        })
        .collect::<Result<_>>()?;
    let selected = locbench_core::geometry::select_overlapping_pairs(&frusta, a.min_radius, a.max_pairs);
    create_dir(&a.data.out)?;
    save_pairs(&a.data.out.join("pairs.csv"), &selected)?;
    println!("selected {} pairs", selected.len());
    Ok(())
}

fn map(a: &MapArgs) -> Result<()> {
    set_jobs(a.data.jobs)?;
    let dataset = load(&a.data)?;
    let (map, stats) = build_global_map(
        &dataset.database_poses(),
        &dataset.intrinsics,
        &dataset.keypoints,
        &dataset.database_matches(),
        a.min_tri_angle,
    );
    create_dir(&a.data.out)?;
    save_observations(&a.data.out, &Observations::from_point_map(&map))?;
    println!(
        "{} points from {} tracks ({} inconsistent, {} unusable, {} degenerate baseline, {} behind camera)",
        stats.points,
        stats.tracks,
        stats.inconsistent_tracks,
        stats.unusable_tracks,
        stats.degenerate_baseline,
        stats.behind_camera
    );
    Ok(())
}

fn load_map(dir: &Path) -> Result<PointMap> {
    let obs = load_observations(dir).with_context(|| format!("cannot load map {}", dir.display()))?;
    Ok(obs.to_point_map()?)
}

fn bench(a: &BenchArgs, tasks: Vec<Task>, global_map: Option<&Path>) -> Result<()> {
    let thresholds = ThresholdTriple::parse_overrides(&a.thresholds)?;
    let config = BenchmarkConfig {
        dataset_name: a.dataset_name.clone().unwrap_or_else(|| {
            a.data
                .data
                .file_name()
                .map_or_else(|| "dataset".into(), |n| n.to_string_lossy().into_owned())
        }),
        tasks,
        kgrid: kgrid(&a.k_grid)?,
        thresholds,
        seed: a.seed,
        alpha: a.alpha,
        relevance: a.relevance.into(),
        min_triangulation_angle_deg: a.min_tri_angle,
        jobs: a.data.jobs,
        ..BenchmarkConfig::default()
    };
    config.validate()?;
    let dataset = load(&a.data)?;
    let report = match global_map {
        Some(dir) => run_benchmark_with_map(&dataset, &config, &load_map(dir)?)?,
        None => run_benchmark(&dataset, &config)?,
    };
    write_report(&a.data.out, &report, a.emit_plot_data)?;
    print_summary(&report);
    Ok(())
}

fn print_summary(report: &Report) {
    for row in &report.localization {
        println!(
            "{:<10} k={:<3} high {:6.2}%  medium {:6.2}%  low {:6.2}%",
            row.method, row.k, row.pct.high, row.pct.medium, row.pct.low
        );
    }
}

fn eval_retrieval(a: &EvalArgs) -> Result<()> {
    let grid = kgrid(&a.k_grid)?;
    set_jobs(a.data.jobs)?;
    let dataset = load(&a.data)?;
    let rankings = match &a.rankings {
        Some(path) => load_rankings(path)?,
        None => {
            let descriptors = normalize_all(&dataset.descriptors)?;
            let db = descriptors.subset(dataset.database_ids().iter());
            rank_all(&dataset.query_ids(), &descriptors, &db, grid.max())?
        }
    };
    let rows = evaluate_retrieval(&dataset, &rankings, &grid);
    create_dir(&a.data.out)?;
    let write = |name: &str, content: String| {
        let path = a.data.out.join(name);
        std::fs::write(&path, content).with_context(|| format!("cannot write {}", path.display()))
    };
    write("retrieval.csv", retrieval_csv(&rows))?;
    write("retrieval.json", retrieval_json(&rows))?;
    for r in &rows {
        println!(
            "{:<4} k={:<3} P@k {:.4}  R@k {:.4}  ({} evaluated, {} undefined)",
            match r.relevance {
                RelevanceMode::Iou => "iou",
                RelevanceMode::Pose => "pose",
            },
            r.k,
            r.precision,
            r.recall,
            r.evaluated,
            r.undefined
        );
    }
    Ok(())
}
