//! Independent reference computations and helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use locbench_core::geometry::HalfSpace;
use nalgebra::{DVector, Vector3};
use rand::Rng;

/// Prints one verdict line straight to stdout, bypassing test capture so the
/// line shows for passing criteria too.
pub fn verdict(criterion: u32, title: &str, pass: bool, detail: &str) {
    let line = format!(
        "acceptance criterion {criterion} ({title}): {}  {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Uniform vector in `[-1, 1]^n`.
pub fn cube_vector(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Cosine similarity written out longhand.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// `|A ∩ B| / |A ∪ B|` through membership flags over the id universe.
pub fn iou_by_flags(a: &BTreeSet<u64>, b: &BTreeSet<u64>, universe: u64) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for id in 0..universe {
        let (x, y) = (a.contains(&id), b.contains(&id));
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Affine reconstruction objective `‖q − Σ w_i d_i‖² + λ‖w‖²`.
pub fn affine_objective(query: &[f64], db: &[Vec<f64>], w: &[f64], regularization: f64) -> f64 {
    let mut total = 0.0;
    for (j, q) in query.iter().enumerate() {
        let mut r = *q;
        for (wi, d) in w.iter().zip(db) {
            r -= wi * d[j];
        }
        total += r * r;
    }
    total + regularization * w.iter().map(|x| x * x).sum::<f64>()
}

/// Minimizes [`affine_objective`] over `Σ w = 1` by coarse-to-fine grid search
/// on the free weights `w_1..w_{k-1}` (the last one closes the sum). Supports
/// `k ∈ {2, 3}`.
pub fn affine_weights_by_grid(query: &[f64], db: &[Vec<f64>], regularization: f64) -> Vec<f64> {
    let k = db.len();
    assert!(k == 2 || k == 3);
    let free = k - 1;
    let full = |t: &[f64]| {
        let mut w = t.to_vec();
        w.push(1.0 - t.iter().sum::<f64>());
        w
    };
    const STEPS: i32 = 20;
    let mut center = vec![1.0 / k as f64; free];
    let mut half_width = 20.0;
    while half_width > 1e-8 {
        let spacing = half_width / f64::from(STEPS);
        let mut best = (f64::INFINITY, center.clone());
        let offsets: Vec<f64> = (-STEPS..=STEPS).map(|i| f64::from(i) * spacing).collect();
        let second: &[f64] = if free == 2 { &offsets } else { &[0.0] };
        for &u in &offsets {
            for &v in second {
                let mut t = center.clone();
                t[0] += u;
                if free == 2 {
                    t[1] += v;
                }
                let f = affine_objective(query, db, &full(&t), regularization);
                if f < best.0 {
                    best = (f, t);
                }
            }
        }
        center = best.1;
        half_width /= 2.0;
    }
    full(&center)
}

/// Smallest eigenvalue of the objective's Hessian restricted to `Σ w = 1`;
/// instances with a flat valley have no well-defined minimizer to compare.
pub fn affine_curvature(db: &[Vec<f64>]) -> f64 {
    let k = db.len();
    // Directions e_i - e_k for the free weights.
    let dirs: Vec<DVector<f64>> = (0..k - 1)
        .map(|i| DVector::from_column_slice(&db[i]) - DVector::from_column_slice(&db[k - 1]))
        .collect();
    let gram = nalgebra::DMatrix::from_fn(k - 1, k - 1, |i, j| dirs[i].dot(&dirs[j]));
    gram.symmetric_eigenvalues().min()
}

fn min_distance(planes: &[HalfSpace], x: &Vector3<f64>) -> f64 {
    planes
        .iter()
        .map(|h| h.signed_distance(x))
        .fold(f64::INFINITY, f64::min)
}

/// Largest inscribed radius estimated by dense uniform sampling of the box
/// `[lo, hi]` followed by a shrinking random-direction search from the best
/// sample.
pub fn inscribed_radius_by_sampling(
    planes: &[HalfSpace],
    lo: Vector3<f64>,
    hi: Vector3<f64>,
    samples: usize,
    rng: &mut impl Rng,
) -> f64 {
    let mut best = (f64::NEG_INFINITY, lo);
    for _ in 0..samples {
        let x = Vector3::new(
            rng.random_range(lo.x..=hi.x),
            rng.random_range(lo.y..=hi.y),
            rng.random_range(lo.z..=hi.z),
        );
        let g = min_distance(planes, &x);
        if g > best.0 {
            best = (g, x);
        }
    }
    let (mut g, mut x) = best;
    let mut step = (hi - lo).norm() / 20.0;
    while step > 1e-9 {
        let mut moved = false;
        for _ in 0..256 {
            let d = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if d.norm() < 1e-3 {
                continue;
            }
            let cand = x + d.normalize() * step;
            let gc = min_distance(planes, &cand);
            if gc > g {
                (g, x) = (gc, cand);
                moved = true;
                break;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    g
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}
