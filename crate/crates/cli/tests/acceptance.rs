//! Acceptance suite: one test per criterion, each printing a single PASS/FAIL
//! line with the measured quantities before asserting.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use locbench_core::approximation::{
    approximate_pose, weights_bdi, weights_csi, weights_ewb, ApproximationConfig, WeightingMethod,
    DEFAULT_BDI_REGULARIZATION,
};
use locbench_core::bench::{run_benchmark, BenchmarkConfig, KGrid, Report, Task, Threshold};
use locbench_core::geometry::{
    frustum_overlap, frustum_overlap_radius, pose_position_error, pose_rotation_error, project, Frustum, Pose,
};
use locbench_core::io::{
    load_dataset, load_observations, load_pairs, load_rankings, load_results, save_dataset, save_observations,
    save_pairs, save_rankings, save_results, LoadOptions,
};
use locbench_core::localization::{
    build_global_map, localize_local_sfm, perturb_pose, pnp_ransac, projection_jacobian, reprojection_error,
    FailureKind, LocalSfmInput, MatchSet, Outcome, QueryView, RansacParams, DEFAULT_MIN_TRIANGULATION_ANGLE,
};
use locbench_core::retrieval::{
    evaluate_rankings, iou_relevance, precision_at_k, rank_database, recall_at_k, DescriptorSet, RankedItem,
    Ranking, RelevanceMode, RelevanceOracle,
};
use locbench_core::synthetic::{
    generate, query_correspondences, reference_scene, reference_spec, DescriptorMode, DescriptorModel, SceneSpec,
    SyntheticScene, TrajectoryPattern,
};
use locbench_core::ImageId;
use nalgebra::{Matrix2x6, UnitQuaternion, Vector3, Vector6};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{
    affine_curvature, affine_weights_by_grid, cosine, cube_vector, inscribed_radius_by_sampling, iou_by_flags,
    pearson, tree, unit, verdict,
};

fn random_pose(rng: &mut impl Rng) -> Pose {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let rotation = UnitQuaternion::from_scaled_axis(axis * 3.0);
    let center = Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
    Pose::from_unit(center, rotation)
}

fn look_at_random(rng: &mut impl Rng, around: f64, spread: f64) -> Pose {
    loop {
        let c = Vector3::new(
            rng.random_range(-around..around),
            rng.random_range(-around..around),
            rng.random_range(-around..around),
        );
        let t = Vector3::new(
            rng.random_range(-spread..spread),
            rng.random_range(-spread..spread),
            rng.random_range(-spread..spread),
        );
        if let Ok(p) = Pose::look_at(c, t, Vector3::z()) {
            return p;
        }
    }
}

/// Database `db/000..` with the given descriptors and random poses, and the
/// query's ranking truncated to `k`.
fn approximation_instance(
    query: &[f64],
    db: &[Vec<f64>],
    k: usize,
    rng: &mut impl Rng,
) -> (DescriptorSet, BTreeMap<ImageId, Pose>, Ranking) {
    let mut set = DescriptorSet::new(query.len()).unwrap();
    let mut poses = BTreeMap::new();
    for (i, d) in db.iter().enumerate() {
        let id = format!("db/{i:03}");
        set.insert(id.clone(), d.clone()).unwrap();
        poses.insert(id, random_pose(rng));
    }
    let ranking = rank_database("q", query, &set, k).unwrap();
    (set, poses, ranking)
}

fn same_pose_bits(a: &Pose, b: &Pose) -> bool {
    let bits = |p: &Pose| {
        let mut v: Vec<u64> = p.position().iter().map(|x| x.to_bits()).collect();
        v.extend(p.wxyz().iter().map(|x| x.to_bits()));
        v
    };
    bits(a) == bits(b)
}

#[test]
fn criterion_1_weighting_formulas() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    // Zero exponent against equal weights, on the weights and on the blended pose.
    let mut zero_alpha_exact = true;
    for _ in 0..200 {
        let k = rng.random_range(1..=10);
        let dim = rng.random_range(2..=32);
        let q = unit(&cube_vector(&mut rng, dim));
        let db: Vec<Vec<f64>> = (0..k).map(|_| unit(&cube_vector(&mut rng, dim))).collect();
        let refs: Vec<&[f64]> = db.iter().map(Vec::as_slice).collect();
        let csi = weights_csi(&q, &refs, 0.0, 0.0).unwrap();
        zero_alpha_exact &= csi.iter().map(|w| w.to_bits()).eq(weights_ewb(k).iter().map(|w| w.to_bits()));
        let (set, poses, ranking) = approximation_instance(&q, &db, k, &mut rng);
        let blend = |method| {
            let config = ApproximationConfig::new(method, k).with_alpha(0.0);
            approximate_pose(&q, &ranking, &set, &poses, &config).unwrap().pose
        };
        zero_alpha_exact &= same_pose_bits(&blend(WeightingMethod::Ewb), &blend(WeightingMethod::Csi));
    }

    // A large exponent collapses onto the most similar image when it stands out
    // (every other similarity at most 0.9 of it).
    let (mut top1_dp, mut top1_dr) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let k = rng.random_range(2..=8);
        let dim = rng.random_range(8..=32);
        let q = unit(&cube_vector(&mut rng, dim));
        let near: Vec<f64> = q.iter().zip(cube_vector(&mut rng, dim)).map(|(a, b)| a + 0.1 * b).collect();
        let mut db = vec![unit(&near)];
        let s1 = cosine(&q, &db[0]);
        while db.len() < k {
            let d = unit(&cube_vector(&mut rng, dim));
            if cosine(&q, &d) <= 0.9 * s1 {
                db.push(d);
            }
        }
        let (set, poses, ranking) = approximation_instance(&q, &db, k, &mut rng);
        assert_eq!(ranking.items[0].id, "db/000");
        let config = ApproximationConfig::new(WeightingMethod::Csi, k).with_alpha(200.0);
        let est = approximate_pose(&q, &ranking, &set, &poses, &config).unwrap().pose;
        top1_dp = top1_dp.max(pose_position_error(&est, &poses["db/000"]));
        top1_dr = top1_dr.max(pose_rotation_error(&est, &poses["db/000"]));
    }

    // Affine weights against grid search on well-conditioned small instances.
    let mut bdi_worst = 0.0f64;
    let mut checked = 0;
    while checked < 500 {
        let k = rng.random_range(2..=3);
        let dim = rng.random_range(k + 1..=6);
        let q = unit(&cube_vector(&mut rng, dim));
        let db: Vec<Vec<f64>> = (0..k).map(|_| unit(&cube_vector(&mut rng, dim))).collect();
        if affine_curvature(&db) < 0.1 {
            continue;
        }
        let refs: Vec<&[f64]> = db.iter().map(Vec::as_slice).collect();
        let w = weights_bdi(&q, &refs, DEFAULT_BDI_REGULARIZATION).unwrap();
        let oracle = affine_weights_by_grid(&q, &db, DEFAULT_BDI_REGULARIZATION);
        for (a, b) in w.iter().zip(&oracle) {
            bdi_worst = bdi_worst.max((a - b).abs());
        }
        checked += 1;
    }

    let elapsed = start.elapsed();
    let pass = zero_alpha_exact
        && top1_dp < 1e-6
        && top1_dr < 1e-4
        && bdi_worst < 1e-4
        && elapsed < Duration::from_secs(10);
    verdict(
        1,
        "weighting formulas",
        pass,
        &format!(
            "csi(alpha=0)==ewb bitwise: {zero_alpha_exact}; csi(alpha=200) vs top-1: {top1_dp:.2e} m / {top1_dr:.2e} deg; \
             bdi vs grid max |dw| {bdi_worst:.2e} over 500; {:.1} s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_geometry_oracles() {
    let start = Instant::now();

    // Noiseless triangulation of a 10-camera ring with every point in range.
    let mut spec = reference_spec();
    spec.n_db_cameras = 10;
    spec.n_queries = 1;
    spec.pixel_noise_sigma = 0.0;
    spec.max_range = 1e3;
    let scene = generate(&spec, &DescriptorModel::default()).unwrap();
    let ds = &scene.dataset;
    let (map, _) = build_global_map(
        &ds.database_poses(),
        &ds.intrinsics,
        &ds.keypoints,
        &ds.database_matches(),
        DEFAULT_MIN_TRIANGULATION_ANGLE,
    );
    let mut tri_worst = 0.0f64;
    let mut recovered = BTreeSet::new();
    for (_, p) in map.iter() {
        let ids: BTreeSet<u64> = p
            .observations
            .iter()
            .map(|(img, kp)| scene.keypoint_points[img][*kp as usize])
            .collect();
        assert_eq!(ids.len(), 1, "a track mixes generated points");
        let id = *ids.iter().next().unwrap();
        recovered.insert(id);
        tri_worst = tri_worst.max((p.position - scene.points[id as usize]).norm());
    }

    // Noiseless registration from exact correspondences.
    let reference = reference_scene();
    let intr = reference.spec.intrinsics;
    let truth: Vec<Pose> = reference.query_poses().into_values().collect();
    let (mut pnp_dp, mut pnp_dr) = (0.0f64, 0.0f64);
    let mut pnp_failures = 0;
    for t in 0..100u64 {
        let pose = truth[t as usize % truth.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(t);
        let corr = query_correspondences(&reference.points, &pose, &intr, 50, 0.0, 0.0, &mut rng);
        match pnp_ransac(&corr, &intr, &RansacParams::default().with_seed(t)) {
            Ok(out) => {
                pnp_dp = pnp_dp.max(pose_position_error(&out.pose, &pose));
                pnp_dr = pnp_dr.max(pose_rotation_error(&out.pose, &pose));
            }
            Err(_) => pnp_failures += 1,
        }
    }

    // Analytic projection Jacobian against central differences.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut jac_worst = 0.0f64;
    for _ in 0..100 {
        let pose = look_at_random(&mut rng, 10.0, 2.0);
        let point = pose.camera_to_world(&Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(3.0..15.0),
        ));
        let analytic = projection_jacobian(&pose, &point, &intr).unwrap();
        let h = 1e-6;
        let mut numeric = Matrix2x6::zeros();
        for c in 0..6 {
            let mut d = Vector6::zeros();
            d[c] = h;
            let plus = project(&point, &perturb_pose(&pose, &d), &intr).unwrap();
            let minus = project(&point, &perturb_pose(&pose, &(-d)), &intr).unwrap();
            numeric.set_column(c, &((plus - minus) / (2.0 * h)));
        }
        jac_worst = jac_worst.max((numeric - analytic).norm() / analytic.norm());
    }

    let elapsed = start.elapsed();
    let pass = recovered.len() >= 195
        && tri_worst < 1e-6
        && pnp_failures == 0
        && pnp_dp < 1e-4
        && pnp_dr < 1e-3
        && jac_worst < 1e-5
        && elapsed < Duration::from_secs(30);
    verdict(
        2,
        "geometry oracles",
        pass,
        &format!(
            "triangulated {}/200 points, max error {tri_worst:.2e} m; pnp max {pnp_dp:.2e} m / {pnp_dr:.2e} deg \
             ({pnp_failures} failures of 100); jacobian max relative {jac_worst:.2e}; {:.1} s",
            recovered.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_robust_estimation() {
    let start = Instant::now();
    let scene = reference_scene();
    let intr = scene.spec.intrinsics;
    let truth: Vec<Pose> = scene.query_poses().into_values().collect();
    let high = Threshold::new(0.25, 2.0);
    let params = RansacParams::default();
    let mut localized = 0;
    let mut worst_inlier = 0.0f64;
    for t in 0..100u64 {
        let pose = truth[t as usize % truth.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + t);
        let corr = query_correspondences(&scene.points, &pose, &intr, 100, 1.0, 0.3, &mut rng);
        let Ok(out) = pnp_ransac(&corr, &intr, &params.with_seed(t)) else {
            continue;
        };
        if high.accepts(pose_position_error(&out.pose, &pose), pose_rotation_error(&out.pose, &pose)) {
            localized += 1;
        }
        for ((px, x), inlier) in corr.iter().zip(&out.inliers) {
            if *inlier {
                worst_inlier = worst_inlier.max(reprojection_error(&out.pose, px, x, &intr));
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = localized >= 95 && worst_inlier <= params.inlier_threshold && elapsed < Duration::from_secs(120);
    verdict(
        3,
        "robust estimation",
        pass,
        &format!(
            "{localized}/100 trials within (0.25 m, 2 deg) at 1 px noise and 30% outliers; \
             max inlier reprojection {worst_inlier:.2} px; {:.1} s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_metric_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rank_mismatch = 0;
    let mut iou_mismatch = 0;
    let mut pr_mismatch = 0;
    let mut all_rankings = Vec::new();
    let mut all_obs: BTreeMap<ImageId, BTreeSet<u64>> = BTreeMap::new();
    let mut universe_ids: Vec<ImageId> = Vec::new();

    for inst in 0..1000 {
        // Ranking against a brute-force sort, duplicates included to exercise ties.
        let n = rng.random_range(1..=1000);
        let dim = rng.random_range(2..=16);
        let mut set = DescriptorSet::new(dim).unwrap();
        let mut vectors: Vec<(String, Vec<f64>)> = Vec::new();
        for i in 0..n {
            let v = if i > 0 && rng.random_bool(0.05) {
                vectors[rng.random_range(0..vectors.len())].1.clone()
            } else {
                cube_vector(&mut rng, dim)
            };
            vectors.push((format!("i{inst}/{:04}", rng.random_range(0..100_000)), v));
        }
        vectors.sort_by(|a, b| a.0.cmp(&b.0));
        vectors.dedup_by(|a, b| a.0 == b.0);
        vectors.shuffle(&mut rng);
        for (id, v) in &vectors {
            set.insert(id.clone(), v.clone()).unwrap();
        }
        let q = cube_vector(&mut rng, dim);
        let k = rng.random_range(1..=vectors.len() + 5);
        let ranking = rank_database(&format!("q{inst}"), &q, &set, k).unwrap();
        let mut brute: Vec<(f64, &String)> = vectors.iter().map(|(id, v)| (cosine(&q, v), id)).collect();
        brute.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
        brute.truncate(k);
        let same = ranking.items.len() == brute.len()
            && ranking
                .items
                .iter()
                .zip(&brute)
                .all(|(item, (s, id))| &item.id == *id && (item.score - s).abs() <= 1e-12);
        rank_mismatch += usize::from(!same);

        // Overlap ratio against membership counting.
        let universe = rng.random_range(1..=200u64);
        let pick = |rng: &mut ChaCha8Rng, p: f64| -> BTreeSet<u64> { (0..universe).filter(|_| rng.random_bool(p)).collect() };
        let density = rng.random_range(0.0..0.5);
        let (a, b) = (pick(&mut rng, density), pick(&mut rng, density));
        let expected = iou_by_flags(&a, &b, universe);
        let got = iou_relevance(&a, &b);
        iou_mismatch += usize::from(got.to_bits() != expected.to_bits() || got.to_bits() != iou_relevance(&b, &a).to_bits());

        // P@k and R@k on a random relevance pattern: relevant images share the
        // instance's own point with the query.
        let len = rng.random_range(1..=50);
        let query = format!("q{inst}");
        let relevant: Vec<bool> = (0..len).map(|_| rng.random_bool(0.3)).collect();
        let mut obs = BTreeMap::new();
        let shared = inst as u64 * 1_000;
        obs.insert(query.clone(), BTreeSet::from([shared]));
        let items: Vec<RankedItem> = (0..len)
            .map(|i| {
                let id = format!("r{inst}/{i:02}");
                obs.insert(id.clone(), BTreeSet::from([if relevant[i] { shared } else { shared + 1 + i as u64 }]));
                RankedItem { id, score: 1.0 - i as f64 / 100.0 }
            })
            .collect();
        let ranking = Ranking { query: query.clone(), items };
        let oracle = RelevanceOracle::iou(obs.clone());
        for k in [1, 2, 5, 10, 20, 60] {
            let top = &relevant[..k.min(len)];
            let hits = top.iter().filter(|r| **r).count();
            let p = precision_at_k(&ranking, &oracle, k);
            let expected_p = hits as f64 / top.len() as f64;
            pr_mismatch += usize::from(p.value.to_bits() != expected_p.to_bits() || p.short != (len < k));
            pr_mismatch += usize::from(recall_at_k(&ranking, &oracle, k) != (hits > 0));
        }
        universe_ids.extend(ranking.items.iter().map(|i| i.id.clone()));
        all_obs.extend(obs);
        all_rankings.push((ranking, relevant));
    }

    // Dataset means over queries with a defined ground truth.
    let oracle = RelevanceOracle::iou(all_obs);
    let rankings: Vec<Ranking> = all_rankings.iter().map(|(r, _)| r.clone()).collect();
    let summary = evaluate_rankings(&rankings, &oracle, &universe_ids, 10);
    let defined: Vec<&Vec<bool>> = all_rankings.iter().map(|(_, rel)| rel).filter(|rel| rel.contains(&true)).collect();
    let mean_recall =
        defined.iter().map(|rel| if rel[..10.min(rel.len())].contains(&true) { 1.0 } else { 0.0 }).sum::<f64>() / defined.len() as f64;
    let mean_ok = summary.evaluated == defined.len()
        && summary.undefined == 1000 - defined.len()
        && (summary.mean_recall - mean_recall).abs() < 1e-12;

    let elapsed = start.elapsed();
    let pass = rank_mismatch == 0 && iou_mismatch == 0 && pr_mismatch == 0 && mean_ok && elapsed < Duration::from_secs(60);
    verdict(
        4,
        "metric oracles",
        pass,
        &format!(
            "mismatches over 1000 instances: ranking {rank_mismatch}, iou {iou_mismatch}, precision/recall {pr_mismatch}; \
             dataset mean R@10 agrees: {mean_ok}; {:.1} s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_frustum_overlap() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let intr = reference_spec().intrinsics;
    let frustum = |pose| Frustum::with_range(pose, intr, 0.1, 15.0).unwrap();
    let mut worst_rel = 0.0f64;
    let mut worst_cert = 0.0f64;
    let mut pairs = 0;
    while pairs < 100 {
        let a = frustum(look_at_random(&mut rng, 6.0, 2.0));
        let b = frustum(look_at_random(&mut rng, 6.0, 2.0));
        let Some(sphere) = frustum_overlap(&a, &b) else { continue };
        let planes: Vec<_> = a.half_spaces().into_iter().chain(b.half_spaces()).collect();
        let corners = a.corners();
        let lo = corners.iter().fold(corners[0], |m, c| m.inf(c));
        let hi = corners.iter().fold(corners[0], |m, c| m.sup(c));
        let sampled = inscribed_radius_by_sampling(&planes, lo, hi, 20_000, &mut rng);
        worst_rel = worst_rel.max((sphere.radius - sampled).abs() / sphere.radius);
        for h in &planes {
            worst_cert = worst_cert.max(sphere.radius - h.signed_distance(&sphere.center));
        }
        pairs += 1;
    }

    // Disjoint: far apart, or back to back at the same center.
    let mut disjoint_ok = true;
    for _ in 0..20 {
        let pose = look_at_random(&mut rng, 6.0, 2.0);
        let shifted = Pose::from_unit(pose.position() + Vector3::new(200.0, 0.0, 0.0), *pose.orientation());
        let turned = Pose::from_unit(
            *pose.position(),
            UnitQuaternion::from_axis_angle(&Vector3::y_axis(), std::f64::consts::PI) * pose.orientation(),
        );
        for other in [shifted, turned] {
            disjoint_ok &= frustum_overlap_radius(&frustum(pose), &frustum(other)) == 0.0;
        }
    }

    let elapsed = start.elapsed();
    let pass = worst_rel < 0.01 && worst_cert < 1e-6 && disjoint_ok && elapsed < Duration::from_secs(60);
    verdict(
        5,
        "frustum overlap",
        pass,
        &format!(
            "max relative gap to sampling {worst_rel:.2e} over 100 pairs; max certificate violation {worst_cert:.2e}; \
             disjoint pairs give 0: {disjoint_ok}; {:.1} s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

fn benchmark(scene: &SyntheticScene, tasks: Vec<Task>, kgrid: &[usize]) -> Report {
    let config = BenchmarkConfig {
        tasks,
        kgrid: KGrid::new(kgrid.to_vec()).unwrap(),
        ..BenchmarkConfig::default()
    };
    run_benchmark(&scene.dataset, &config).unwrap()
}

#[test]
fn criterion_6_protocol_reproduction() {
    let start = Instant::now();
    let ring = reference_spec();
    let ewb = Task::Task1(WeightingMethod::Ewb);

    // (a) Robust descriptors: retrieval recall tracks global-map localization
    // across k and descriptor noise.
    let kgrid = [1, 2, 5, 10, 20];
    let (mut recall, mut localized) = (Vec::new(), Vec::new());
    for noise in [0.01, 1.0, 2.0, 3.0, 4.0, 6.0] {
        let scene = generate(&ring, &DescriptorModel::new(DescriptorMode::PoseRobust).with_noise(noise)).unwrap();
        let report = benchmark(&scene, vec![Task::Task2b], &kgrid);
        for k in kgrid {
            recall.push(report.retrieval_row(RelevanceMode::Iou, k).unwrap().recall);
            localized.push(report.localization_row(Task::Task2b, k).unwrap().pct.low);
        }
    }
    let r = pearson(&recall, &localized);
    let pass_a = r >= 0.8;

    // (b) Pose-sensitive descriptors approximate poses better at small k while
    // recognizing worse.
    let sensitive = generate(&ring, &DescriptorModel::new(DescriptorMode::PoseSensitive)).unwrap();
    let robust = generate(&ring, &DescriptorModel::new(DescriptorMode::PoseRobust)).unwrap();
    let rs = benchmark(&sensitive, vec![ewb], &[1, 2, 10]);
    let rr = benchmark(&robust, vec![ewb], &[1, 2, 10]);
    let low = |rep: &Report, k| rep.localization_row(ewb, k).unwrap().pct.low;
    let gaps = [low(&rs, 1) - low(&rr, 1), low(&rs, 2) - low(&rr, 2)];
    let r10 = |rep: &Report| rep.retrieval_row(RelevanceMode::Iou, 10).unwrap().recall;
    let pass_b = gaps.iter().all(|g| *g >= 10.0) && r10(&rs) < r10(&rr);

    // (c) Corridor: interpolating two neighbors beats the single nearest one.
    let corridor = generate(&SceneSpec::new(TrajectoryPattern::Corridor), &DescriptorModel::default()).unwrap();
    let tasks: Vec<Task> = WeightingMethod::ALL.into_iter().map(Task::Task1).collect();
    let rc = benchmark(&corridor, tasks.clone(), &[1, 2]);
    let mut winners = Vec::new();
    for t in &tasks {
        let (one, two) = (rc.localization_row(*t, 1).unwrap().pct, rc.localization_row(*t, 2).unwrap().pct);
        let levels = [(one.high, two.high), (one.medium, two.medium), (one.low, two.low)];
        if levels.iter().all(|(a, b)| b >= a) && levels.iter().any(|(a, b)| b > a) {
            winners.push(format!("{t} {:.0}/{:.0}/{:.0} vs {:.0}/{:.0}/{:.0}", two.high, two.medium, two.low, one.high, one.medium, one.low));
        }
    }
    let pass_c = !winners.is_empty();

    let elapsed = start.elapsed();
    let pass = pass_a && pass_b && pass_c && elapsed < Duration::from_secs(300);
    verdict(
        6,
        "protocol reproduction",
        pass,
        &format!(
            "(a) pearson {r:.3} over {} cells: {}; (b) low-threshold gap k=1 {:.0} pp, k=2 {:.0} pp, R@10 sensitive {:.2} vs robust {:.2}: {}; \
             (c) k=2 beats k=1 for [{}]: {}; {:.1} s",
            recall.len(),
            if pass_a { "pass" } else { "fail" },
            gaps[0],
            gaps[1],
            r10(&rs),
            r10(&rr),
            if pass_b { "pass" } else { "fail" },
            winners.join("; "),
            if pass_c { "pass" } else { "fail" },
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

/// Query 0 of the reference scene with its two best-matched database images,
/// which also match each other, and an image sharing nothing with it.
struct TaxonomyCase {
    scene: SyntheticScene,
    query: ImageId,
    first: ImageId,
    second: ImageId,
    unrelated: ImageId,
}

impl TaxonomyCase {
    fn new() -> Self {
        let scene = reference_scene();
        let query = scene.dataset.query_ids()[0].clone();
        let ds = &scene.dataset;
        let count = |db: &str| ds.matches.get(&query, db).map_or(0, |m| m.len());
        let mut by_matches = ds.database_ids();
        by_matches.sort_by_key(|db| std::cmp::Reverse(count(db)));
        let first = by_matches[0].clone();
        let second = by_matches[1..]
            .iter()
            .find(|db| ds.matches.get(&first, db).is_some_and(|m| m.len() >= 20))
            .unwrap()
            .clone();
        let unrelated = by_matches.iter().rev().find(|db| count(db) == 0).unwrap().clone();
        Self {
            scene,
            query,
            first,
            second,
            unrelated,
        }
    }

    fn run(&self, ranked: &[&ImageId], matches: &MatchSet, extra: Option<(&ImageId, &ImageId)>) -> Outcome {
        let ds = &self.scene.dataset;
        let mut poses = ds.database_poses();
        let mut intrinsics = ds.intrinsics.clone();
        let mut keypoints = ds.keypoints.clone();
        // Optional copy of an image under a new id, same pose and keypoints.
        if let Some((copy, of)) = extra {
            poses.insert(copy.clone(), poses[of]);
            intrinsics.insert(copy.clone(), intrinsics[of]);
            keypoints.insert(copy.clone(), keypoints[of].clone());
        }
        let ranking = Ranking {
            query: self.query.clone(),
            items: ranked
                .iter()
                .enumerate()
                .map(|(i, id)| RankedItem { id: (*id).clone(), score: 1.0 - i as f64 * 0.01 })
                .collect(),
        };
        let view = QueryView {
            id: &self.query,
            keypoints: &keypoints[&self.query],
            intrinsics: &intrinsics[&self.query],
        };
        let input = LocalSfmInput {
            poses: &poses,
            intrinsics: &intrinsics,
            keypoints: &keypoints,
            matches,
            min_tri_angle_deg: DEFAULT_MIN_TRIANGULATION_ANGLE,
        };
        localize_local_sfm(&view, &ranking, ranked.len(), &input, &RansacParams::default()).outcome
    }
}

/// Matches of `db` with the query as (database keypoint, query keypoint).
fn query_matches(ds: &MatchSet, query: &str, db: &str) -> Vec<(u32, u32)> {
    ds.get(db, query).unwrap_or_default()
}

#[test]
fn criterion_7_failure_taxonomy() {
    let case = TaxonomyCase::new();
    let ds = &case.scene.dataset;
    let (q, a, b) = (&case.query, &case.first, &case.second);

    let healthy = case.run(&[a, b], &ds.matches, None);

    // One relevant image and one sharing nothing with the query.
    let insufficient = case.run(&[a, &case.unrelated], &ds.matches, None);

    // Both images relevant but only three query keypoints reach their common tracks.
    let ab = ds.matches.get(a, b).unwrap();
    let in_a: BTreeSet<u32> = ab.iter().map(|m| m.0).collect();
    let in_b: BTreeSet<u32> = ab.iter().map(|m| m.1).collect();
    let mut weak = ds.matches.filter(|id| id != q.as_str());
    weak.insert(a.clone(), q.clone(), query_matches(&ds.matches, q, a).into_iter().filter(|m| in_a.contains(&m.0)).take(2))
        .unwrap();
    weak.insert(b.clone(), q.clone(), query_matches(&ds.matches, q, b).into_iter().filter(|m| in_b.contains(&m.0)).take(1))
        .unwrap();
    let too_weak = case.run(&[a, b], &weak, None);

    // Two relevant images captured from the identical pose.
    let twin: ImageId = format!("{a}-twin");
    let mut same_pose = ds.matches.clone();
    let all_a = (0..ds.keypoints[a].len() as u32).map(|i| (i, i));
    same_pose.insert(a.clone(), twin.clone(), all_a).unwrap();
    same_pose.insert(twin.clone(), q.clone(), query_matches(&ds.matches, q, a)).unwrap();
    let degenerate = case.run(&[a, &twin], &same_pose, Some((&twin, a)));

    let kind = |o: &Outcome| match o {
        Outcome::Success { .. } => "success".to_string(),
        Outcome::Failure(k) => k.name().to_string(),
    };
    let pass = healthy.is_success()
        && insufficient == Outcome::Failure(FailureKind::InsufficientRelevant)
        && too_weak == Outcome::Failure(FailureKind::MatchingTooWeak)
        && degenerate == Outcome::Failure(FailureKind::DegenerateBaseline);
    verdict(
        7,
        "failure taxonomy",
        pass,
        &format!(
            "control {}; one relevant image -> {}; three linked keypoints -> {}; identical poses -> {}",
            kind(&healthy),
            kind(&insufficient),
            kind(&too_weak),
            kind(&degenerate)
        ),
    );
    assert!(pass);
}

fn locbench(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_locbench")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn criterion_8_determinism_and_formats() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut problems: Vec<String> = Vec::new();

    // Same seed, same dataset bytes.
    let synth = |name: &str| {
        let out = root.join(name);
        locbench(&["synth", "--out", p(&out), "--seed", "5", "--outlier-rate", "0.1", "--dropout", "0.1"]);
        tree(&out)
    };
    let data = root.join("data");
    if synth("data") != synth("data-again") {
        problems.push("synth output differs between runs".into());
    }

    // Every command's output across worker counts.
    let commands: [(&str, &[&str]); 6] = [
        ("report", &["--k-grid", "1,2,5", "--seed", "9", "--emit-plot-data"]),
        ("task1", &["--k-grid", "1,3", "--methods", "ewb,bdi,csi"]),
        ("rank", &["--k", "10"]),
        ("pairs", &["--min-radius", "0.5"]),
        ("map", &[]),
        ("eval-retrieval", &["--k-grid", "1,5"]),
    ];
    for (command, extra) in commands {
        let run = |jobs: &str| {
            let out = root.join(format!("{command}-{jobs}"));
            let mut args = vec![command, "--data", p(&data), "--out", p(&out), "--jobs", jobs];
            args.extend_from_slice(extra);
            locbench(&args);
            tree(&out)
        };
        let (one, eight) = (run("1"), run("8"));
        if one.is_empty() || one != eight {
            problems.push(format!("{command} output differs between --jobs 1 and --jobs 8"));
        }
    }

    // Dataset files: values survive a load, and saving again gives the same bytes.
    let (loaded, _) = load_dataset(&data, LoadOptions::default()).unwrap();
    let resaved = root.join("resaved");
    save_dataset(&resaved, &loaded).unwrap();
    if tree(&data) != tree(&resaved) {
        problems.push("dataset bytes change after load and save".into());
    }
    let mut spec = SceneSpec::new(TrajectoryPattern::Ring);
    spec.seed = 5;
    spec.outlier_rate = 0.1;
    spec.match_dropout = 0.1;
    let original = generate(&spec, &DescriptorModel::default()).unwrap().dataset;
    let exact = loaded.intrinsics == original.intrinsics
        && loaded.poses == original.poses
        && loaded.queries == original.queries
        && loaded.matches == original.matches
        && loaded.observations == original.observations;
    // Descriptors and keypoints are stored as 32-bit floats.
    let descriptors_close = original
        .descriptors
        .iter()
        .all(|(id, v)| loaded.descriptors.get(id).unwrap().iter().zip(v).all(|(a, b)| (a - b).abs() <= 1e-7 * b.abs().max(1e-30)));
    let keypoints_close = original.keypoints.iter().all(|(id, kps)| {
        loaded.keypoints[id].iter().zip(kps).all(|(a, b)| (a - b).norm() <= 1e-7 * b.norm())
    });
    if !(exact && descriptors_close && keypoints_close) {
        problems.push(format!(
            "dataset values: exact fields {exact}, descriptors {descriptors_close}, keypoints {keypoints_close}"
        ));
    }

    // Result, ranking, pair and map files: load equals the in-memory values and re-saving gives the same bytes.
    let report_dir = root.join("report-1");
    let config = BenchmarkConfig {
        kgrid: KGrid::new(vec![1, 2, 5]).unwrap(),
        seed: 9,
        ..BenchmarkConfig::default()
    };
    let report = run_benchmark(&loaded, &config).unwrap();
    let results = load_results(&report_dir.join("results.csv")).unwrap();
    let rankings = load_rankings(&report_dir.join("rankings.csv")).unwrap();
    if results != report.results || rankings != report.rankings {
        problems.push("results or rankings differ from the in-memory report after loading".into());
    }
    let again = root.join("again");
    std::fs::create_dir_all(&again).unwrap();
    save_results(&again.join("results.csv"), &results).unwrap();
    save_rankings(&again.join("rankings.csv"), &rankings).unwrap();
    let pairs = load_pairs(&root.join("pairs-1").join("pairs.csv")).unwrap();
    save_pairs(&again.join("pairs.csv"), &pairs).unwrap();
    let map = load_observations(&root.join("map-1")).unwrap();
    save_observations(&again, &map).unwrap();
    for (file, source) in [
        ("results.csv", report_dir.join("results.csv")),
        ("rankings.csv", report_dir.join("rankings.csv")),
        ("pairs.csv", root.join("pairs-1").join("pairs.csv")),
        ("observations.txt", root.join("map-1").join("observations.txt")),
        ("points3d.txt", root.join("map-1").join("points3d.txt")),
    ] {
        if std::fs::read(again.join(file)).unwrap() != std::fs::read(&source).unwrap() {
            problems.push(format!("{file} bytes change after load and save"));
        }
    }

    let pass = problems.is_empty();
    verdict(
        8,
        "determinism and formats",
        pass,
        &if pass {
            "synth, report, task1, rank, pairs, map and eval-retrieval byte-identical across runs and --jobs 1/8; \
             dataset, results, rankings, pairs and map files round-trip"
                .to_string()
        } else {
            problems.join("; ")
        },
    );
    assert!(pass, "{problems:?}");
}
