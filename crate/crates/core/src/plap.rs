//! Hypergraph Laplacian, p-Laplacian hyperedge embedding and the attention
//! regularizer built from it.
//!
//! The p-Laplacian embedding lives on the hyperedges: the graph between
//! hyperedges has affinity `w = H^T H` (zero diagonal), and the embedding
//! minimizes
//!
//! ```text
//! f1(Q) = sum_m  sum_{i,j} w_ij |q_i^m - q_j^m|^p / ||q^m||_p^p,   Q^T Q = I
//! ```
//!
//! by tangent-space gradient steps with backtracking, starting from the
//! eigenvectors of the combinatorial Laplacian of `w` (the exact minimizer
//! when `p = 2`). Each step is `Q - (beta / f1) (G - Q G^T Q)`: dividing by
//! the current objective makes the iterates independent of the overall
//! scale of `w`.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, SsdlError};
use crate::hypergraph::{degree_matrices, Hypergraph};
use crate::par::{map_indexed, Execution};

/// Maximum number of step halvings tried within one iteration.
pub const MAX_HALVINGS: usize = 30;

/// The iterate counts as stationary once the tangent gradient norm drops
/// below this fraction of `f1`.
pub const STATIONARY_RTOL: f64 = 1e-9;

/// Symmetric, nonnegative, zero-diagonal affinity between hyperedges.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGraph {
    weights: DMatrix<f64>,
}

impl EdgeGraph {
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        let n = weights.nrows();
        if weights.ncols() != n {
            return Err(SsdlError::mismatch(
                "edge graph",
                format!("{n}x{n}"),
                format!("{}x{}", n, weights.ncols()),
            ));
        }
        for i in 0..n {
            if weights[(i, i)] != 0.0 {
                return Err(SsdlError::InvalidInput(format!(
                    "edge graph diagonal entry {i} is nonzero"
                )));
            }
            for j in 0..i {
                let w = weights[(i, j)];
                if w != weights[(j, i)] {
                    return Err(SsdlError::InvalidInput(format!(
                        "edge graph is not symmetric at ({i}, {j})"
                    )));
                }
                if !(w >= 0.0 && w.is_finite()) {
                    return Err(SsdlError::InvalidInput(format!(
                        "edge graph weight at ({i}, {j}) must be finite and nonnegative"
                    )));
                }
            }
        }
        Ok(EdgeGraph { weights })
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.nrows() == 0
    }

    pub fn scaled(&self, c: f64) -> Result<EdgeGraph> {
        EdgeGraph::new(&self.weights * c)
    }

    /// Combinatorial Laplacian `diag(w 1) - w`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = -self.weights.clone();
        for i in 0..self.len() {
            l[(i, i)] = self.weights.row(i).sum();
        }
        l
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PLapConfig {
    pub p: f64,
    /// Number of eigenpairs; `None` keeps the full spectrum.
    pub m_dims: Option<usize>,
    /// Initial step, relative to the current `f1`; halved on rejection.
    pub step_beta: f64,
    pub max_iter: usize,
    /// Stop once the relative decrease of `f1` falls below this.
    pub grad_tol: f64,
    pub reorthonormalize_every: usize,
    pub execution: Execution,
}

impl Default for PLapConfig {
    fn default() -> Self {
        PLapConfig {
            p: 2.0,
            m_dims: None,
            step_beta: 1e-2,
            max_iter: 500,
            grad_tol: 1e-6,
            reorthonormalize_every: 10,
            execution: Execution::default(),
        }
    }
}

impl PLapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1.1..=3.0).contains(&self.p) {
            return Err(SsdlError::InvalidInput(format!(
                "p must lie in [1.1, 3.0], got {}",
                self.p
            )));
        }
        if !(self.step_beta > 0.0 && self.step_beta.is_finite()) {
            return Err(SsdlError::InvalidInput("step_beta must be positive".into()));
        }
        if self.reorthonormalize_every == 0 {
            return Err(SsdlError::InvalidInput(
                "reorthonormalize_every must be >= 1".into(),
            ));
        }
        if self.m_dims == Some(0) {
            return Err(SsdlError::InvalidInput("m_dims must be >= 1".into()));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(SsdlError::InvalidInput("grad_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// One accepted iterate of the embedding solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PLapDiagnostic {
    pub iteration: usize,
    pub f1: f64,
    pub orthogonality_drift: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PLapEmbedding {
    pub q: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub p: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostics: Vec<PLapDiagnostic>,
}

impl PLapEmbedding {
    pub fn m_dims(&self) -> usize {
        self.q.ncols()
    }

    pub fn f1(&self) -> f64 {
        self.lambda.sum()
    }

    pub fn write_diagnostics_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "iteration,f1,orthogonality_drift,beta")?;
        for d in &self.diagnostics {
            writeln!(
                w,
                "{},{:e},{:e},{:e}",
                d.iteration, d.f1, d.orthogonality_drift, d.beta
            )?;
        }
        Ok(())
    }
}

/// `phi_p(x) = |x|^(p-1) sign(x)`, with `phi_p(0) = 0`.
pub fn phi_p(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.abs().powf(p - 1.0).copysign(x)
    }
}

/// `max |Q^T Q - I|`.
pub fn orthogonality_drift(q: &DMatrix<f64>) -> f64 {
    let mut g = q.transpose() * q;
    for i in 0..g.nrows() {
        g[(i, i)] -= 1.0;
    }
    g.abs().max()
}

/// Numerator and denominator of one column's p-Laplacian quotient, plus the
/// gradient of the quotient when requested.
fn column_terms(
    w: &DMatrix<f64>,
    q: &[f64],
    p: f64,
    with_grad: bool,
) -> (f64, f64, Option<Vec<f64>>) {
    let n = q.len();
    let quadratic = p == 2.0;
    let mut num = 0.0;
    let mut pair_grad = if with_grad { vec![0.0; n] } else { Vec::new() };
    for j in 0..n {
        let wcol = w.column(j);
        for i in 0..j {
            let wij = wcol[i];
            if wij == 0.0 {
                continue;
            }
            let d = q[i] - q[j];
            let (abs_p, phi) = if quadratic {
                (d * d, d)
            } else if d == 0.0 {
                (0.0, 0.0)
            } else {
                let a = d.abs().powf(p - 1.0);
                (a * d.abs(), a.copysign(d))
            };
            num += 2.0 * wij * abs_p;
            if with_grad {
                pair_grad[i] += wij * phi;
                pair_grad[j] -= wij * phi;
            }
        }
    }
    let den: f64 = if quadratic {
        q.iter().map(|x| x * x).sum()
    } else {
        q.iter().map(|x| x.abs().powf(p)).sum()
    };
    let grad = with_grad.then(|| {
        let ratio = num / den;
        (0..n)
            .map(|i| p / den * (2.0 * pair_grad[i] - ratio * phi_p(q[i], p)))
            .collect()
    });
    (num, den, grad)
}

/// Per-column quotients of `f1`, i.e. the p-eigenvalue estimates.
pub fn quotients(g: &EdgeGraph, q: &DMatrix<f64>, p: f64, exec: Execution) -> DVector<f64> {
    let vals = map_indexed(exec, q.ncols(), |m| {
        let (num, den, _) = column_terms(&g.weights, q.column(m).as_slice(), p, false);
        num / den
    });
    DVector::from_vec(vals)
}

/// `f1(Q)`: sum of the per-column quotients.
pub fn f1_objective(g: &EdgeGraph, q: &DMatrix<f64>, p: f64) -> f64 {
    quotients(g, q, p, Execution::Sequential).sum()
}

/// Euclidean gradient of `f1` with respect to `Q`.
pub fn f1_gradient(g: &EdgeGraph, q: &DMatrix<f64>, p: f64, exec: Execution) -> DMatrix<f64> {
    let cols = map_indexed(exec, q.ncols(), |m| {
        column_terms(&g.weights, q.column(m).as_slice(), p, true)
            .2
            .unwrap()
    });
    DMatrix::from_fn(q.nrows(), q.ncols(), |i, m| cols[m][i])
}

/// Flips each column so that its largest-magnitude entry is positive.
fn apply_sign_convention(q: &mut DMatrix<f64>) {
    for mut col in q.column_iter_mut() {
        let mut best = 0.0f64;
        for &v in col.iter() {
            if v.abs() > best.abs() {
                best = v;
            }
        }
        if best < 0.0 {
            col.neg_mut();
        }
    }
}

/// Thin QR orthonormalization followed by the sign convention.
pub fn reorthonormalize(q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = q.clone().qr().q();
    apply_sign_convention(&mut out);
    out
}

/// Eigenvectors of the combinatorial Laplacian of `g`, ascending, first `m`.
pub fn spectral_init(g: &EdgeGraph, m: usize) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(g.laplacian());
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut q = eig.eigenvectors.select_columns(&order[..m]);
    apply_sign_convention(&mut q);
    q
}

pub fn plap_embedding(g: &EdgeGraph, cfg: &PLapConfig) -> Result<PLapEmbedding> {
    cfg.validate()?;
    let n = g.len();
    if n < 1 {
        return Err(SsdlError::InvalidInput("edge graph is empty".into()));
    }
    let m = cfg.m_dims.unwrap_or(n).min(n);
    let p = cfg.p;
    let exec = cfg.execution;

    let mut q = reorthonormalize(&spectral_init(g, m));
    let mut f = f1_objective(g, &q, p);
    let mut beta = cfg.step_beta;
    let mut diagnostics = vec![PLapDiagnostic {
        iteration: 0,
        f1: f,
        orthogonality_drift: orthogonality_drift(&q),
        beta,
    }];
    let mut orthonormal = true;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        if f <= 0.0 {
            converged = true;
            break;
        }
        let grad = f1_gradient(g, &q, p, exec);
        if let Some(idx) = grad.iter().position(|v| !v.is_finite()) {
            return Err(SsdlError::NonFiniteGradient {
                iteration: iterations,
                column: idx / n,
            });
        }
        // Tangent direction on the orthogonality constraint.
        let xi = &grad - &q * grad.transpose() * &q;
        if xi.norm() <= STATIONARY_RTOL * f {
            converged = true;
            break;
        }
        let reorth_now = (iterations + 1) % cfg.reorthonormalize_every == 0;

        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let mut candidate = &q - &xi * (beta / f);
            if reorth_now {
                candidate = reorthonormalize(&candidate);
            }
            let fc = f1_objective(g, &candidate, p);
            if fc.is_finite() && fc < f {
                accepted = Some((candidate, fc));
                break;
            }
            beta *= 0.5;
        }
        let Some((candidate, fc)) = accepted else {
            converged = true;
            break;
        };
        iterations += 1;
        let decrease = (f - fc) / f.abs().max(f64::MIN_POSITIVE);
        q = candidate;
        f = fc;
        orthonormal = reorth_now;
        diagnostics.push(PLapDiagnostic {
            iteration: iterations,
            f1: f,
            orthogonality_drift: orthogonality_drift(&q),
            beta,
        });
        if decrease < cfg.grad_tol {
            converged = true;
            break;
        }
    }

    if !orthonormal {
        q = reorthonormalize(&q);
    }
    let lambda = quotients(g, &q, p, exec);
    Ok(PLapEmbedding {
        q,
        lambda,
        p,
        iterations,
        converged,
        diagnostics,
    })
}

/// Hyperedge affinity `H^T H` with the diagonal removed.
pub fn edge_affinity(h: &Hypergraph) -> EdgeGraph {
    let inc = h.incidence();
    let e = inc.ncols();
    let mut w = DMatrix::zeros(e, e);
    for j in 0..e {
        for i in 0..j {
            let v = inc.column(i).dot(&inc.column(j));
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    EdgeGraph { weights: w }
}

/// `I - D_v^{-1/2} H M D_e^{-1} H^T D_v^{-1/2}`, symmetrized.
fn normalized_sandwich(h: &Hypergraph, middle: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (dv, de) = degree_matrices(h)?;
    let e = h.n_edges();
    if middle.nrows() != e || middle.ncols() != e {
        return Err(SsdlError::mismatch(
            "hyperedge operator",
            format!("{e}x{e}"),
            format!("{}x{}", middle.nrows(), middle.ncols()),
        ));
    }
    let mut a = h.incidence().clone();
    for (v, mut row) in a.row_iter_mut().enumerate() {
        row /= dv[v].sqrt();
    }
    let mut right = a.transpose();
    for (k, mut row) in right.row_iter_mut().enumerate() {
        row /= de[k];
    }
    let inner = &a * middle * right;
    let n = h.n_vertices();
    let mut out = DMatrix::identity(n, n) - inner;
    for j in 0..n {
        for i in 0..j {
            let s = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    Ok(out)
}

/// Normalized hypergraph Laplacian
/// `I - D_v^{-1/2} H W D_e^{-1} H^T D_v^{-1/2}`.
pub fn laplacian_regularizer(h: &Hypergraph) -> Result<DMatrix<f64>> {
    normalized_sandwich(h, &DMatrix::from_diagonal(h.edge_weights()))
}

/// `L_p = Q diag(Lambda / lambda_max) Q^T`; no rescale when `lambda_max <= 1`.
pub fn attention_operator(emb: &PLapEmbedding) -> DMatrix<f64> {
    let max = emb.lambda.max();
    let scale = if max > 1.0 { max } else { 1.0 };
    let mut ql = emb.q.clone();
    for (m, mut col) in ql.column_iter_mut().enumerate() {
        col *= emb.lambda[m] / scale;
    }
    ql * emb.q.transpose()
}

/// Attention regularizer `I - D_v^{-1/2} H (I_e - L_p) D_e^{-1} H^T D_v^{-1/2}`.
pub fn plap_regularizer(h: &Hypergraph, emb: &PLapEmbedding) -> Result<DMatrix<f64>> {
    if emb.q.nrows() != h.n_edges() {
        return Err(SsdlError::mismatch(
            "embedding rows vs hyperedges",
            h.n_edges(),
            emb.q.nrows(),
        ));
    }
    let lp = attention_operator(emb);
    plap_regularizer_from_operator(h, &lp)
}

/// Same as [`plap_regularizer`] with an explicit `L_p`; `L_p = 0` and unit
/// hyperedge weights reproduce [`laplacian_regularizer`] exactly.
pub fn plap_regularizer_from_operator(h: &Hypergraph, lp: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = h.n_edges();
    if lp.nrows() != e || lp.ncols() != e {
        return Err(SsdlError::mismatch(
            "L_p vs hyperedges",
            format!("{e}x{e}"),
            format!("{}x{}", lp.nrows(), lp.ncols()),
        ));
    }
    normalized_sandwich(h, &(DMatrix::identity(e, e) - lp))
}
