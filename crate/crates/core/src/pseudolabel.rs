//! Initial label embedding and closed-form soft pseudo-label propagation.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Result, SsdlError};
use crate::matrixio::PartialLabels;

/// Ridge added to a singular propagation system before giving up.
pub const SINGULAR_RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    InitialO,
    PseudoF,
}

/// A `C x N` class-by-sample score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    pub values: DMatrix<f64>,
    pub kind: LabelKind,
}

impl LabelMatrix {
    pub fn num_classes(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }

    /// Per-column argmax, ties to the lowest class index.
    pub fn argmax(&self) -> Vec<usize> {
        argmax_columns(&self.values)
    }

    /// One row per class, one column per sample, then a final `argmax` row.
    pub fn write_csv<W: Write>(&self, w: &mut W, sample_ids: &[String]) -> std::io::Result<()> {
        writeln!(w, "class,{}", sample_ids.join(","))?;
        for (c, row) in self.values.row_iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{c},{}", cells.join(","))?;
        }
        let am: Vec<String> = self.argmax().iter().map(|c| c.to_string()).collect();
        writeln!(w, "argmax,{}", am.join(","))
    }

    /// Reads the format produced by [`LabelMatrix::write_csv`].
    pub fn parse_csv(text: &str) -> Result<(LabelMatrix, Vec<String>)> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let ids: Vec<String> = match lines.next() {
            Some((_, l)) => l.split(',').skip(1).map(|s| s.trim().to_string()).collect(),
            None => return Err(SsdlError::parse(1, 1, "empty pseudo-label file")),
        };
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in lines {
            let mut cells = line.split(',');
            let tag = cells.next().unwrap_or("").trim();
            if tag == "argmax" {
                break;
            }
            let row = cells
                .enumerate()
                .map(|(c, s)| {
                    s.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| SsdlError::parse(lineno + 1, c + 2, format!("bad value '{s}'")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != ids.len() {
                return Err(SsdlError::parse(
                    lineno + 1,
                    1,
                    format!("expected {} values, found {}", ids.len(), row.len()),
                ));
            }
            rows.push(row);
        }
        if rows.len() < 2 {
            return Err(SsdlError::parse(1, 1, "need at least two class rows"));
        }
        let values = DMatrix::from_fn(rows.len(), ids.len(), |r, c| rows[r][c]);
        Ok((
            LabelMatrix {
                values,
                kind: LabelKind::PseudoF,
            },
            ids,
        ))
    }
}

pub(crate) fn argmax_columns(m: &DMatrix<f64>) -> Vec<usize> {
    m.column_iter()
        .map(|col| {
            let mut best = 0;
            for (c, &v) in col.iter().enumerate() {
                if v > col[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationConfig {
    pub lambda: f64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig { lambda: 0.1 }
    }
}

/// One-hot columns for labeled samples, 0.5 everywhere for unlabeled ones.
pub fn build_initial_labels(labels: &PartialLabels) -> LabelMatrix {
    let c = labels.num_classes();
    let mut o = DMatrix::zeros(c, labels.len());
    for j in 0..labels.len() {
        match labels.get(j) {
            Some(class) => o[(class, j)] = 1.0,
            None => o.column_mut(j).fill(0.5),
        }
    }
    LabelMatrix {
        values: o,
        kind: LabelKind::InitialO,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Cholesky,
    /// The system was not positive definite; solved by LU.
    Lu,
    /// LU after adding [`SINGULAR_RIDGE`] to the diagonal.
    RidgedLu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub labels: LabelMatrix,
    pub method: SolveMethod,
    /// `max |F (I + Delta/lambda) - O|`.
    pub residual: f64,
    pub warnings: Vec<String>,
}

/// `F = O (I + Delta / lambda)^{-1}`, solved on the sample axis.
pub fn propagate(
    o: &LabelMatrix,
    delta: &DMatrix<f64>,
    cfg: &PropagationConfig,
) -> Result<LabelMatrix> {
    propagate_with_report(o, delta, cfg).map(|p| p.labels)
}

pub fn propagate_with_report(
    o: &LabelMatrix,
    delta: &DMatrix<f64>,
    cfg: &PropagationConfig,
) -> Result<Propagation> {
    let n = o.n_samples();
    if delta.nrows() != n || delta.ncols() != n {
        return Err(SsdlError::mismatch(
            "regularizer vs samples",
            format!("{n}x{n}"),
            format!("{}x{}", delta.nrows(), delta.ncols()),
        ));
    }
    if !(cfg.lambda > 0.0 && cfg.lambda.is_finite()) {
        return Err(SsdlError::InvalidInput(format!(
            "lambda must be positive, got {}",
            cfg.lambda
        )));
    }
    let mut system = delta / cfg.lambda;
    for i in 0..n {
        system[(i, i)] += 1.0;
    }
    // System is symmetric, so F^T = A^{-1} O^T.
    let rhs = o.values.transpose();
    let mut warnings = Vec::new();

    let (solution, method) = match system.clone().cholesky() {
        Some(chol) => (chol.solve(&rhs), SolveMethod::Cholesky),
        None => {
            let min_eig = smallest_eigenvalue(&system);
            warnings.push(format!(
                "propagation system is not positive definite (smallest eigenvalue {min_eig:e})"
            ));
            match system.clone().full_piv_lu().solve(&rhs) {
                Some(x) => (x, SolveMethod::Lu),
                None => {
                    let mut ridged = system.clone();
                    for i in 0..n {
                        ridged[(i, i)] += SINGULAR_RIDGE;
                    }
                    warnings.push(format!("added ridge {SINGULAR_RIDGE:e} to a singular system"));
                    let x = ridged
                        .full_piv_lu()
                        .solve(&rhs)
                        .ok_or(SsdlError::SingularSystem {
                            min_eigenvalue: min_eig,
                        })?;
                    (x, SolveMethod::RidgedLu)
                }
            }
        }
    };

    let mut ft = solution;
    let scale = o.values.abs().max().max(f64::MIN_POSITIVE);
    let mut residual = (&system * &ft - &rhs).abs().max();
    // One round of iterative refinement when the direct solve is loose.
    if residual > 1e-8 * scale {
        let r = &rhs - &system * &ft;
        let correction = match method {
            SolveMethod::Cholesky => system.clone().cholesky().map(|c| c.solve(&r)),
            _ => system.clone().full_piv_lu().solve(&r),
        };
        if let Some(dx) = correction {
            ft += dx;
            residual = (&system * &ft - &rhs).abs().max();
        }
    }
    if !ft.iter().all(|v| v.is_finite()) {
        return Err(SsdlError::SingularSystem {
            min_eigenvalue: smallest_eigenvalue(&system),
        });
    }
    if residual > 1e-8 * scale && method != SolveMethod::RidgedLu {
        return Err(SsdlError::Numerical(format!(
            "propagation residual {residual:e} exceeds tolerance"
        )));
    }
    Ok(Propagation {
        labels: LabelMatrix {
            values: ft.transpose(),
            kind: LabelKind::PseudoF,
        },
        method,
        residual,
        warnings,
    })
}

fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Gradient of `tr(F Delta F^T) + lambda ||F - O||^2` with respect to `F`.
pub fn propagation_gradient(
    f: &DMatrix<f64>,
    o: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    lambda: f64,
) -> DMatrix<f64> {
    (f * delta + (f - o) * lambda) * 2.0
}

/// Which columns enter the cross-entropy.
#[derive(Debug, Clone, Copy)]
pub enum CrossEntropyMask<'a> {
    /// Columns with a true label that were unlabeled in the given
    /// propagation input.
    HeldoutOnly(&'a PartialLabels),
    AllLabeled,
}

/// Column-wise softmax.
pub fn softmax_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let max = col.max();
        col.apply(|v| *v = (*v - max).exp());
        let sum = col.sum();
        col /= sum;
    }
    out
}

/// Mean `-log softmax(F)[true class]` over the selected columns.
pub fn propagation_cross_entropy(
    f: &LabelMatrix,
    truth: &PartialLabels,
    mask: CrossEntropyMask<'_>,
) -> Result<f64> {
    if truth.len() != f.n_samples() {
        return Err(SsdlError::mismatch(
            "truth labels vs pseudo-label columns",
            f.n_samples(),
            truth.len(),
        ));
    }
    if truth.num_classes() != f.num_classes() {
        return Err(SsdlError::mismatch(
            "class count",
            f.num_classes(),
            truth.num_classes(),
        ));
    }
    if let CrossEntropyMask::HeldoutOnly(input) = mask {
        if input.len() != truth.len() {
            return Err(SsdlError::mismatch("propagation input labels", truth.len(), input.len()));
        }
    }
    let selected: Vec<usize> = (0..truth.len())
        .filter(|&j| {
            truth.get(j).is_some()
                && match mask {
                    CrossEntropyMask::HeldoutOnly(input) => input.get(j).is_none(),
                    CrossEntropyMask::AllLabeled => true,
                }
        })
        .collect();
    if selected.is_empty() {
        return Err(SsdlError::InvalidInput(
            "no columns selected for cross-entropy".into(),
        ));
    }
    let total: f64 = selected
        .iter()
        .map(|&j| {
            let col = f.values.column(j);
            let max = col.max();
            let log_sum = col.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            log_sum - col[truth.get(j).unwrap()]
        })
        .sum();
    Ok(total / selected.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::Hypergraph;
    use crate::plap::laplacian_regularizer;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(v: &[i64], c: usize) -> PartialLabels {
        PartialLabels::new(v.to_vec(), c).unwrap()
    }

    #[test]
    fn initial_matrix_rule() {
        let o = build_initial_labels(&labels(&[0, -1], 2));
        assert_eq!(o.values, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 0.5]));
        let all = build_initial_labels(&labels(&[1, 0, 2], 3));
        for j in 0..3 {
            assert_eq!(all.values.column(j).sum(), 1.0);
        }
        let none = build_initial_labels(&labels(&[-1, -1, -1], 4));
        assert!(none.values.iter().all(|&v| v == 0.5));
        assert_eq!(none.values.column(0).sum(), 2.0);
    }

    #[test]
    fn zero_regularizer_returns_o() {
        let o = build_initial_labels(&labels(&[0, -1, 1], 2));
        let f = propagate(&o, &DMatrix::zeros(3, 3), &PropagationConfig::default()).unwrap();
        assert!((f.values - o.values).abs().max() < 1e-15);
    }

    #[test]
    fn huge_lambda_keeps_fidelity() {
        let o = build_initial_labels(&labels(&[0, -1, 1, -1], 2));
        let delta = DMatrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { -0.3 });
        let f = propagate(&o, &delta, &PropagationConfig { lambda: 1e12 }).unwrap();
        assert!((f.values - o.values).abs().max() <= 1e-6);
    }

    #[test]
    fn connected_twin_inherits_label() {
        let h = Hypergraph::from_parts(
            DMatrix::from_element(2, 1, 1.0),
            DVector::from_element(1, 1.0),
            vec![0],
        )
        .unwrap();
        let delta = laplacian_regularizer(&h).unwrap();
        let o = build_initial_labels(&labels(&[0, -1], 2));
        let cfg = PropagationConfig::default();
        let f = propagate(&o, &delta, &cfg).unwrap();
        assert!(f.values[(0, 1)] > f.values[(1, 1)]);
        let g = propagation_gradient(&f.values, &o.values, &delta, cfg.lambda);
        assert!(g.abs().max() <= 1e-8);
    }

    #[test]
    fn indefinite_system_still_stationary() {
        // I + Delta/lambda with a negative eigenvalue.
        let delta = DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 0.3, 0.0]);
        let o = build_initial_labels(&labels(&[0, -1], 2));
        let cfg = PropagationConfig { lambda: 0.1 };
        let p = propagate_with_report(&o, &delta, &cfg).unwrap();
        assert_eq!(p.method, SolveMethod::Lu);
        assert!(!p.warnings.is_empty());
        let g = propagation_gradient(&p.labels.values, &o.values, &delta, cfg.lambda);
        assert!(g.abs().max() <= 1e-8);
    }

    #[test]
    fn singular_system_gets_ridge() {
        // I + Delta/lambda = [[0,0],[0,1]].
        let delta = DMatrix::from_row_slice(2, 2, &[-0.1, 0.0, 0.0, 0.0]);
        let o = build_initial_labels(&labels(&[0, 1], 2));
        let p = propagate_with_report(&o, &delta, &PropagationConfig::default()).unwrap();
        assert_eq!(p.method, SolveMethod::RidgedLu);
    }

    #[test]
    fn rejects_mismatch_and_bad_lambda() {
        let o = build_initial_labels(&labels(&[0, 1], 2));
        assert!(propagate(&o, &DMatrix::zeros(3, 3), &PropagationConfig::default()).is_err());
        assert!(propagate(&o, &DMatrix::zeros(2, 2), &PropagationConfig { lambda: 0.0 }).is_err());
    }

    #[test]
    fn cross_entropy_reference_values() {
        let truth = labels(&[0, 1], 2);
        let onehot = LabelMatrix {
            values: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            kind: LabelKind::PseudoF,
        };
        let ce = propagation_cross_entropy(&onehot, &truth, CrossEntropyMask::AllLabeled).unwrap();
        let e = std::f64::consts::E;
        assert!((ce - (-(e / (e + 1.0)).ln())).abs() < 1e-12);
        assert!((ce - 0.3133).abs() < 1e-4);

        let uniform = LabelMatrix {
            values: DMatrix::from_element(3, 2, 0.7),
            kind: LabelKind::PseudoF,
        };
        let t3 = labels(&[2, 0], 3);
        let ce = propagation_cross_entropy(&uniform, &t3, CrossEntropyMask::AllLabeled).unwrap();
        assert!((ce - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_heldout_selection() {
        let truth = labels(&[0, 1, 1], 2);
        let input = labels(&[0, -1, 1], 2);
        let f = LabelMatrix {
            values: DMatrix::from_row_slice(2, 3, &[5.0, 0.0, -9.0, 0.0, 0.0, 9.0]),
            kind: LabelKind::PseudoF,
        };
        let ce = propagation_cross_entropy(&f, &truth, CrossEntropyMask::HeldoutOnly(&input)).unwrap();
        assert!((ce - 2f64.ln()).abs() < 1e-12);
        let err = propagation_cross_entropy(&f, &truth, CrossEntropyMask::HeldoutOnly(&truth));
        assert!(matches!(err, Err(SsdlError::InvalidInput(_))));
    }

    #[test]
    fn permuting_samples_permutes_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 8;
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let delta = &a * a.transpose();
        let truth: Vec<i64> = (0..n as i64).map(|i| if i % 3 == 0 { -1 } else { i % 2 }).collect();
        let o = build_initial_labels(&labels(&truth, 2));
        let f = propagate(&o, &delta, &PropagationConfig::default()).unwrap();
        let perm = [3, 1, 7, 0, 5, 2, 6, 4];
        let dp = DMatrix::from_fn(n, n, |i, j| delta[(perm[i], perm[j])]);
        let op = build_initial_labels(&labels(&perm.map(|i| truth[i]), 2));
        let fp = propagate(&op, &dp, &PropagationConfig::default()).unwrap();
        for (a, &b) in perm.iter().enumerate() {
            assert!((fp.values.column(a) - f.values.column(b)).abs().max() < 1e-10);
        }
    }

    #[test]
    fn csv_round_trip() {
        let f = LabelMatrix {
            values: DMatrix::from_row_slice(2, 3, &[0.1, 0.9, 0.5, 0.2, 0.3, 0.5]),
            kind: LabelKind::PseudoF,
        };
        let ids = vec!["a".to_string(), "b".into(), "c".into()];
        let mut buf = Vec::new();
        f.write_csv(&mut buf, &ids).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.ends_with("argmax,1,0,0\n"));
        let (g, ids2) = LabelMatrix::parse_csv(&text).unwrap();
        assert_eq!(g, f);
        assert_eq!(ids2, ids);
    }
}
