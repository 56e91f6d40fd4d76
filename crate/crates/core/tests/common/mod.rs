//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the library's numerics.

#![allow(dead_code)]

use ssdl_core::nalgebra::DMatrix;
use ssdl_core::matrixio::PartialLabels;

/// Cyclic Jacobi eigensolver for a symmetric matrix. Returns eigenvalues in
/// ascending order with the matching eigenvectors as columns.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += m[(i, j)] * m[(i, j)];
                }
            }
        }
        let scale: f64 = (0..n).map(|i| m[(i, i)] * m[(i, i)]).sum::<f64>() + off;
        if off <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[(x, x)].partial_cmp(&m[(y, y)]).unwrap());
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    (values, v.select_columns(&order))
}

/// Minimizer of `a s^2 - 2 j s + 2 alpha |s|` found by scanning a grid.
pub fn grid_scalar_code(j: f64, alpha: f64, a: f64, lo: f64, hi: f64, step: f64) -> f64 {
    let steps = ((hi - lo) / step).round() as usize;
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=steps {
        let s = lo + i as f64 * step;
        let v = a * s * s - 2.0 * j * s + 2.0 * alpha * s.abs();
        if v < best.0 {
            best = (v, s);
        }
    }
    best.1
}

/// Combinatorial Laplacian of a dense affinity matrix, written out directly.
pub fn laplacian(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            (0..n).filter(|&k| k != i).map(|k| w[(i, k)]).sum()
        } else {
            -w[(i, j)]
        }
    })
}

/// Nearest class mean computed from the labeled training columns.
pub fn nearest_centroid(
    x_train: &DMatrix<f64>,
    labels: &PartialLabels,
    x_test: &DMatrix<f64>,
) -> Vec<usize> {
    let c = labels.num_classes();
    let dim = x_train.nrows();
    let mut sums = DMatrix::<f64>::zeros(dim, c);
    let mut counts = vec![0usize; c];
    for n in 0..x_train.ncols() {
        if let Some(l) = labels.get(n) {
            for d in 0..dim {
                sums[(d, l)] += x_train[(d, n)];
            }
            counts[l] += 1;
        }
    }
    for (l, &cnt) in counts.iter().enumerate() {
        for d in 0..dim {
            sums[(d, l)] /= cnt.max(1) as f64;
        }
    }
    (0..x_test.ncols())
        .map(|n| {
            let mut best = (f64::INFINITY, 0);
            for l in 0..c {
                let dist: f64 = (0..dim).map(|d| (x_test[(d, n)] - sums[(d, l)]).powi(2)).sum();
                if dist < best.0 {
                    best = (dist, l);
                }
            }
            best.1
        })
        .collect()
}

/// Largest principal angle between the column spans of two matrices with
/// orthonormal columns.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let m = a.transpose() * b;
    let sv = m.svd(false, false).singular_values;
    let smallest = sv.iter().cloned().fold(f64::INFINITY, f64::min).min(1.0);
    smallest.acos()
}

/// Random symmetric nonnegative zero-diagonal affinity with about `density`
/// of the off-diagonal pairs connected.
pub fn random_affinity(rng: &mut impl rand::Rng, n: usize, density: f64) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            if rng.gen::<f64>() < density {
                let v = rng.gen_range(0.05..2.0);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
    }
    w
}
