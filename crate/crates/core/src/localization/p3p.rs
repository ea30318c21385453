//! Minimal absolute pose from three bearing/point pairs (Lambda Twist).

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, UnitQuaternion, Vector3};

use crate::geometry::Pose;

/// Camera poses consistent with three unit bearings (camera frame) and their
/// world points. Returns up to four solutions; an empty vector for degenerate
/// (collinear) configurations.
pub fn p3p(bearings: &[Vector3<f64>; 3], points: &[Vector3<f64>; 3]) -> Vec<Pose> {
    let y = bearings.map(|b| b.normalize());
    let x = points;
    let d12 = x[0] - x[1];
    let d13 = x[0] - x[2];
    let d23 = x[1] - x[2];
    let scale = d12.norm().max(d13.norm()).max(d23.norm());
    if scale == 0.0 || d12.cross(&d13).norm() <= 1e-10 * scale * scale {
        return Vec::new();
    }
    let (a12, a13, a23) = (d12.norm_squared(), d13.norm_squared(), d23.norm_squared());
    let (b12, b13, b23) = (y[0].dot(&y[1]), y[0].dot(&y[2]), y[1].dot(&y[2]));

    let m12 = Matrix3::new(1.0, -b12, 0.0, -b12, 1.0, 0.0, 0.0, 0.0, 0.0);
    let m13 = Matrix3::new(1.0, 0.0, -b13, 0.0, 0.0, 0.0, -b13, 0.0, 1.0);
    let m23 = Matrix3::new(0.0, 0.0, 0.0, 0.0, 1.0, -b23, 0.0, -b23, 1.0);
    let d1 = m12 * a23 - m23 * a12;
    let d2 = m13 * a23 - m23 * a13;

    let mut depths: Vec<Vector3<f64>> = Vec::new();
    for gamma in pencil_roots(&d1, &d2) {
        let d0 = d1 + d2 * gamma;
        for lambda in conic_depths(&d0, a12, a13, a23, b12, b13, b23) {
            let lambda = refine_depths(lambda, a12, a13, a23, b12, b13, b23);
            let r = residuals(&lambda, a12, a13, a23, b12, b13, b23);
            if lambda.iter().all(|l| *l > 0.0) && r.abs().max() <= 1e-6 * scale * scale {
                let dup = depths.iter().any(|d| (d - lambda).norm() <= 1e-9 * lambda.norm());
                if !dup {
                    depths.push(lambda);
                }
            }
        }
    }

    depths
        .into_iter()
        .filter_map(|lambda| {
            let cam = [y[0] * lambda[0], y[1] * lambda[1], y[2] * lambda[2]];
            let xs = Matrix3::from_columns(&[d12, d13, d12.cross(&d13)]);
            let c12 = cam[0] - cam[1];
            let c13 = cam[0] - cam[2];
            let ys = Matrix3::from_columns(&[c12, c13, c12.cross(&c13)]);
            let r = ys * xs.try_inverse()?;
            let r = nearest_rotation(&r)?;
            let t = cam[0] - r * x[0];
            let center = -(r.transpose() * t);
            let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
            Some(Pose::from_unit(center, q))
        })
        .take(4)
        .collect()
}

fn nearest_rotation(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    Some(r)
}

/// Real roots `γ` of `det(D1 + γ D2) = 0`.
fn pencil_roots(d1: &Matrix3<f64>, d2: &Matrix3<f64>) -> Vec<f64> {
    let det_cols = |a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>| a.dot(&b.cross(&c));
    let (a0, a1, a2) = (d1.column(0).into(), d1.column(1).into(), d1.column(2).into());
    let (b0, b1, b2) = (d2.column(0).into(), d2.column(1).into(), d2.column(2).into());
    let c3 = d2.determinant();
    let c2 = det_cols(a0, b1, b2) + det_cols(b0, a1, b2) + det_cols(b0, b1, a2);
    let c1 = det_cols(b0, a1, a2) + det_cols(a0, b1, a2) + det_cols(a0, a1, b2);
    let c0 = d1.determinant();
    real_cubic_roots(c3, c2, c1, c0)
}

/// Real roots of `c3 x³ + c2 x² + c1 x + c0`, each polished by Newton steps.
pub(crate) fn real_cubic_roots(c3: f64, c2: f64, c1: f64, c0: f64) -> Vec<f64> {
    let mag = c3.abs().max(c2.abs()).max(c1.abs()).max(c0.abs());
    if mag == 0.0 {
        return Vec::new();
    }
    let mut roots = if c3.abs() <= 1e-14 * mag {
        real_quadratic_roots(c2, c1, c0)
    } else {
        let (a, b, c) = (c2 / c3, c1 / c3, c0 / c3);
        let p = b - a * a / 3.0;
        let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
        let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
        let shift = -a / 3.0;
        if disc >= 0.0 {
            let s = disc.sqrt();
            vec![(-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt() + shift]
        } else {
            let m = 2.0 * (-p / 3.0).sqrt();
            let phi = ((3.0 * q / (p * m)).clamp(-1.0, 1.0)).acos() / 3.0;
            (0..3)
                .map(|k| m * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + shift)
                .collect()
        }
    };
    for r in &mut roots {
        for _ in 0..4 {
            let f = ((c3 * *r + c2) * *r + c1) * *r + c0;
            let df = (3.0 * c3 * *r + 2.0 * c2) * *r + c1;
            if df == 0.0 {
                break;
            }
            let next = *r - f / df;
            if !next.is_finite() {
                break;
            }
            *r = next;
        }
    }
    roots
}

fn real_quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b == 0.0 { Vec::new() } else { vec![-c / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    // Cancellation-free form.
    let s = disc.sqrt();
    let q = -0.5 * (b + b.signum() * s);
    if q == 0.0 {
        return vec![0.0];
    }
    vec![q / a, c / q]
}

/// Depth triples on the degenerate conic `λᵀ D0 λ = 0` that also satisfy the
/// distance equations.
fn conic_depths(d0: &Matrix3<f64>, a12: f64, a13: f64, a23: f64, b12: f64, b13: f64, b23: f64) -> Vec<Vector3<f64>> {
    let eig = SymmetricEigen::new(*d0);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].abs().total_cmp(&eig.eigenvalues[i].abs()));
    let (s0, s1) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if s0 == 0.0 {
        return Vec::new();
    }
    let ratio = -s1 / s0;
    if ratio < 0.0 {
        return Vec::new();
    }
    let e0: Vector3<f64> = eig.eigenvectors.column(order[0]).into();
    let e1: Vector3<f64> = eig.eigenvectors.column(order[1]).into();
    let s = ratio.sqrt();
    let mut out = Vec::new();
    for sign in [1.0, -1.0] {
        // Plane nᵀλ = 0 containing one line of the conic.
        let n = e0 - e1 * (sign * s);
        if n[0].abs() <= 1e-12 * n.norm() {
            continue;
        }
        let w0 = -n[1] / n[0];
        let w1 = -n[2] / n[0];
        let qa = a13 * w1 * w1 - a12 * (w1 * w1 + 1.0 - 2.0 * b13 * w1);
        let qb = a13 * (2.0 * w0 * w1 - 2.0 * b12 * w1) - a12 * (2.0 * w0 * w1 - 2.0 * b13 * w0);
        let qc = a13 * (w0 * w0 + 1.0 - 2.0 * b12 * w0) - a12 * w0 * w0;
        for tau in real_quadratic_roots(qa, qb, qc) {
            if tau <= 0.0 {
                continue;
            }
            let denom = 1.0 + tau * tau - 2.0 * b23 * tau;
            if denom <= 0.0 {
                continue;
            }
            let l2 = (a23 / denom).sqrt();
            let l3 = tau * l2;
            let l1 = (w0 + w1 * tau) * l2;
            if l1 > 0.0 {
                out.push(Vector3::new(l1, l2, l3));
            }
        }
    }
    out
}

fn residuals(l: &Vector3<f64>, a12: f64, a13: f64, a23: f64, b12: f64, b13: f64, b23: f64) -> Vector3<f64> {
    Vector3::new(
        l[0] * l[0] + l[1] * l[1] - 2.0 * b12 * l[0] * l[1] - a12,
        l[0] * l[0] + l[2] * l[2] - 2.0 * b13 * l[0] * l[2] - a13,
        l[1] * l[1] + l[2] * l[2] - 2.0 * b23 * l[1] * l[2] - a23,
    )
}

fn refine_depths(mut l: Vector3<f64>, a12: f64, a13: f64, a23: f64, b12: f64, b13: f64, b23: f64) -> Vector3<f64> {
    for _ in 0..5 {
        let r = residuals(&l, a12, a13, a23, b12, b13, b23);
        let j = Matrix3::new(
            2.0 * l[0] - 2.0 * b12 * l[1],
            2.0 * l[1] - 2.0 * b12 * l[0],
            0.0,
            2.0 * l[0] - 2.0 * b13 * l[2],
            0.0,
            2.0 * l[2] - 2.0 * b13 * l[0],
            0.0,
            2.0 * l[1] - 2.0 * b23 * l[2],
            2.0 * l[2] - 2.0 * b23 * l[1],
        );
        let Some(step) = j.lu().solve(&r) else {
            break;
        };
        let next = l - step;
        if !next.iter().all(|v| v.is_finite()) {
            break;
        }
        let better = residuals(&next, a12, a13, a23, b12, b13, b23).norm() < r.norm();
        if !better {
            break;
        }
        l = next;
    }
    l
}
