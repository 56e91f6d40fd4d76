//! Inference with a trained dictionary: lasso-encode over `D`, score with
//! `B`, take the per-column argmax.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::dictlearn::{sweep_column, DictionaryModel};
use crate::error::{Result, SsdlError};
use crate::matrixio::PartialLabels;
use crate::par::{map_indexed, Execution};
use crate::pseudolabel::argmax_columns;

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeConfig {
    pub alpha: f64,
    /// Converged once a full sweep moves no coordinate by more than this.
    pub tol: f64,
    /// Cap on full coordinate sweeps.
    pub max_sweeps: usize,
    pub execution: Execution,
}

impl EncodeConfig {
    pub fn new(alpha: f64) -> Self {
        EncodeConfig {
            alpha,
            ..Default::default()
        }
    }
}

impl Default for EncodeConfig {
    fn default() -> Self {
        EncodeConfig {
            alpha: 2f64.powi(-12),
            tol: 1e-10,
            max_sweeps: 10_000,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `B * S_test`, C x N_test.
    pub scores: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub codes: DMatrix<f64>,
}

impl Prediction {
    /// `sample_id,predicted,score_0,...,score_{C-1}`.
    pub fn write_csv<W: Write>(&self, w: &mut W, sample_ids: &[String]) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.scores.nrows()).map(|c| format!("score_{c}")).collect();
        writeln!(w, "sample_id,predicted,{}", header.join(","))?;
        for (j, id) in sample_ids.iter().enumerate() {
            let cells: Vec<String> = self.scores.column(j).iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{id},{},{}", self.labels[j], cells.join(","))?;
        }
        Ok(())
    }
}

/// One lasso subproblem `1/2 ||y - A s||^2 + alpha ||s||_1`, carried with
/// its Gram matrix `A^T A` and correlation `A^T y`.
pub(crate) struct LassoProblem<'a> {
    pub design: &'a DMatrix<f64>,
    pub gram: &'a DMatrix<f64>,
    pub target: &'a [f64],
    pub rhs: &'a [f64],
    pub alpha: f64,
}

/// Lasso code for one sample, refined from the starting point in `s`.
/// Feature-sign search finds the support and signs of the minimizer; if it
/// stalls, coordinate sweeps take over until no coordinate moves by more
/// than `tol`. Never increases the objective.
pub(crate) fn lasso_code(prob: &LassoProblem, s: &mut [f64]) {
    lasso_fixed_point(prob, &EncodeConfig::new(prob.alpha), s)
}

fn lasso_fixed_point(prob: &LassoProblem, cfg: &EncodeConfig, s: &mut [f64]) {
    let eps = kkt_tolerance(prob.rhs, prob.alpha);
    for _ in 0..REFINE_ROUNDS {
        feature_sign(prob, s);
        if kkt_violation(prob.gram, prob.rhs, prob.alpha, s) <= eps {
            return;
        }
        for _ in 0..REFINE_SWEEPS {
            sweep_column(prob.gram, prob.rhs, prob.alpha, s);
        }
    }
    for _ in 0..cfg.max_sweeps {
        if sweep_column(prob.gram, prob.rhs, prob.alpha, s) <= cfg.tol {
            return;
        }
    }
}

fn kkt_tolerance(rhs: &[f64], alpha: f64) -> f64 {
    1e-12 * rhs.iter().fold(alpha, |m, r| m.max(r.abs())).max(f64::MIN_POSITIVE)
}

/// Largest violation of the lasso subgradient optimality conditions.
pub(crate) fn kkt_violation(gram: &DMatrix<f64>, rhs: &[f64], alpha: f64, s: &[f64]) -> f64 {
    (0..s.len())
        .map(|a| {
            let g = gradient(gram, rhs, s, a);
            if s[a] != 0.0 {
                (g + alpha * s[a].signum()).abs()
            } else {
                (g.abs() - alpha).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// `1/2 ||y - A s||^2 + alpha ||s||_1`, evaluated through the residual so
/// that large nearly-cancelling codes are not mistaken for good ones.
fn half_objective(prob: &LassoProblem, s: &[f64]) -> f64 {
    let mut resid = DVector::from_column_slice(prob.target);
    let mut l1 = 0.0;
    for (a, &sa) in s.iter().enumerate() {
        if sa != 0.0 {
            resid.axpy(-sa, &prob.design.column(a), 1.0);
            l1 += sa.abs();
        }
    }
    0.5 * resid.norm_squared() + prob.alpha * l1
}

fn gradient(gram: &DMatrix<f64>, rhs: &[f64], s: &[f64], a: usize) -> f64 {
    let g = gram.column(a);
    s.iter().enumerate().map(|(b, &sb)| g[b] * sb).sum::<f64>() - rhs[a]
}

/// Coefficients `n` (over the active set, plus 1 at `a`) with `G n = 0`
/// when column `a` of the dictionary is numerically dependent on the active
/// columns; `None` when it is independent.
fn dependent_direction(
    gram: &DMatrix<f64>,
    theta: &[f64],
    a: usize,
) -> Option<std::collections::BTreeMap<usize, f64>> {
    let active: Vec<usize> = (0..theta.len()).filter(|&b| theta[b] != 0.0).collect();
    if active.is_empty() {
        return None;
    }
    let g = gram.select_rows(&active).select_columns(&active);
    let col = DVector::from_iterator(active.len(), active.iter().map(|&b| gram[(b, a)]));
    let v = g.cholesky()?.solve(&col);
    let schur = gram[(a, a)] - col.dot(&v);
    if schur > DEPENDENCE_RTOL * gram[(a, a)] {
        return None;
    }
    let mut n: std::collections::BTreeMap<usize, f64> =
        active.iter().enumerate().map(|(i, &b)| (b, -v[i])).collect();
    n.insert(a, 1.0);
    Some(n)
}

const DEPENDENCE_RTOL: f64 = 1e-9;

const FEATURE_SIGN_MAX_STEPS: usize = 10_000;
const REFINE_ROUNDS: usize = 20;
const REFINE_SWEEPS: usize = 25;

/// Feature-sign search (Lee, Battle, Raina and Ng, 2006) from `s = 0`.
/// Gives up quietly on a singular active system or when a step stops
/// making progress; the coordinate sweeps that follow finish the job.
fn feature_sign(prob: &LassoProblem, s: &mut [f64]) {
    let (gram, rhs, alpha) = (prob.gram, prob.rhs, prob.alpha);
    let k = s.len();
    let eps = kkt_tolerance(rhs, alpha);
    let mut theta: Vec<f64> = s.iter().map(|&v| if v == 0.0 { 0.0 } else { v.signum() }).collect();
    let mut current = half_objective(prob, s);
    for _ in 0..FEATURE_SIGN_MAX_STEPS {
        let optimal_active = (0..k)
            .filter(|&a| theta[a] != 0.0)
            .all(|a| (gradient(gram, rhs, s, a) + alpha * theta[a]).abs() <= eps);
        if optimal_active {
            // Activate the zero coordinate with the largest violation.
            let mut pick = None;
            let mut worst = alpha + eps;
            for a in (0..k).filter(|&a| theta[a] == 0.0) {
                let g = gradient(gram, rhs, s, a);
                if g.abs() > worst {
                    worst = g.abs();
                    pick = Some((a, g));
                }
            }
            let Some((a, g)) = pick else {
                return;
            };
            let sigma = -g.signum();
            if let Some(n) = dependent_direction(gram, &theta, a) {
                // The new atom lies in the span of the active ones: moving
                // along `n` keeps D s fixed and lowers the l1 term until an
                // active coordinate reaches zero.
                let mut t_star = f64::INFINITY;
                let mut leaving = None;
                for (&i, &ni) in n.iter().filter(|(&i, _)| i != a) {
                    let step = sigma * ni;
                    if step != 0.0 && s[i].signum() != step.signum() {
                        let t = -s[i] / step;
                        if t < t_star {
                            t_star = t;
                            leaving = Some(i);
                        }
                    }
                }
                let Some(out) = leaving else {
                    return;
                };
                let mut trial = s.to_vec();
                for (&i, &ni) in n.iter().filter(|(&i, _)| i != a) {
                    trial[i] += t_star * sigma * ni;
                }
                trial[a] = t_star * sigma;
                trial[out] = 0.0;
                let f = half_objective(prob, &trial);
                if !(f <= current) {
                    return;
                }
                current = f;
                s.copy_from_slice(&trial);
                for b in 0..k {
                    theta[b] = if s[b] == 0.0 { 0.0 } else { s[b].signum() };
                }
                continue;
            }
            theta[a] = sigma;
        }
        let active: Vec<usize> = (0..k).filter(|&a| theta[a] != 0.0).collect();
        let g = gram.select_rows(&active).select_columns(&active);
        let b = DVector::from_iterator(active.len(), active.iter().map(|&a| rhs[a] - alpha * theta[a]));
        let z = match g.clone().cholesky() {
            Some(c) => c.solve(&b),
            None => match g.lu().solve(&b) {
                Some(z) => z,
                None => return,
            },
        };
        // Candidates: the active-set solution and each zero crossing.
        let start: Vec<f64> = active.iter().map(|&a| s[a]).collect();
        let mut candidates: Vec<(f64, Option<usize>)> = vec![(1.0, None)];
        for i in 0..active.len() {
            if start[i] != 0.0 && start[i].signum() != z[i].signum() {
                candidates.push((start[i] / (start[i] - z[i]), Some(i)));
            }
        }
        let mut trial = s.to_vec();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for &(t, crossing) in &candidates {
            for (i, &a) in active.iter().enumerate() {
                trial[a] = if crossing == Some(i) { 0.0 } else { start[i] + t * (z[i] - start[i]) };
            }
            let f = half_objective(prob, &trial);
            if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best = Some((f, trial.clone()));
            }
        }
        let (f, next) = best.expect("at least one candidate");
        if !(f < current) {
            return;
        }
        current = f;
        s.copy_from_slice(&next);
        for a in 0..k {
            theta[a] = if s[a] == 0.0 { 0.0 } else { s[a].signum() };
        }
    }
}

/// Per-sample coordinate descent on `||x - D s||^2 + 2 alpha ||s||_1`.
pub fn encode(model: &DictionaryModel, x_test: &DMatrix<f64>, cfg: &EncodeConfig) -> Result<DMatrix<f64>> {
    if x_test.nrows() != model.dim() {
        return Err(SsdlError::mismatch("test feature dim", model.dim(), x_test.nrows()));
    }
    if !(cfg.alpha >= 0.0 && cfg.alpha.is_finite()) {
        return Err(SsdlError::InvalidInput("alpha must be finite and >= 0".into()));
    }
    let gram = model.dict.transpose() * &model.dict;
    if let Some(a) = (0..gram.nrows()).find(|&a| !(gram[(a, a)] > 0.0)) {
        return Err(SsdlError::DegenerateAtom { atom: a });
    }
    let rhs = model.dict.transpose() * x_test;
    let k = model.n_atoms();
    let cols = map_indexed(cfg.execution, x_test.ncols(), |n| {
        let (xn, rn) = (x_test.column(n), rhs.column(n));
        let prob = LassoProblem {
            design: &model.dict,
            gram: &gram,
            target: xn.as_slice(),
            rhs: rn.as_slice(),
            alpha: cfg.alpha,
        };
        let mut s = vec![0.0; k];
        lasso_fixed_point(&prob, cfg, &mut s);
        s
    });
    let mut codes = DMatrix::zeros(k, x_test.ncols());
    for (n, s) in cols.into_iter().enumerate() {
        codes.set_column(n, &DVector::from_vec(s));
    }
    Ok(codes)
}

pub fn predict(model: &DictionaryModel, x_test: &DMatrix<f64>, cfg: &EncodeConfig) -> Result<Prediction> {
    let codes = encode(model, x_test, cfg)?;
    Ok(predict_from_codes(model, codes))
}

pub fn predict_from_codes(model: &DictionaryModel, codes: DMatrix<f64>) -> Prediction {
    let scores = &model.classifier * &codes;
    let labels = argmax_columns(&scores);
    Prediction {
        scores,
        labels,
        codes,
    }
}

/// Fraction of predictions matching the truth.
pub fn accuracy(pred: &Prediction, truth: &PartialLabels) -> Result<f64> {
    accuracy_of(&pred.labels, truth)
}

pub fn accuracy_of(labels: &[usize], truth: &PartialLabels) -> Result<f64> {
    if labels.is_empty() {
        return Err(SsdlError::InvalidInput("empty evaluation set".into()));
    }
    if labels.len() != truth.len() {
        return Err(SsdlError::mismatch("truth labels", labels.len(), truth.len()));
    }
    let mut correct = 0usize;
    for (j, &l) in labels.iter().enumerate() {
        let t = truth.get(j).ok_or_else(|| {
            SsdlError::InvalidInput(format!("sample {j} has no ground-truth label"))
        })?;
        if t == l {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictlearn::{objective, update_codes, TrainConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_model(dim: usize, k: usize, c: usize, seed: u64) -> DictionaryModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dict = DMatrix::from_fn(dim, k, |_, _| rng.gen_range(-1.0..1.0));
        for mut col in dict.column_iter_mut() {
            let n = col.norm();
            col /= n;
        }
        let classifier = DMatrix::from_fn(c, k, |_, _| rng.gen_range(-1.0..1.0));
        DictionaryModel {
            dict,
            classifier,
            codes: DMatrix::zeros(k, 0),
        }
    }

    #[test]
    fn scaled_atom_recovers_its_coefficient() {
        let model = unit_model(6, 4, 2, 1);
        let c = 3.0;
        let alpha = 0.01;
        let x = model.dict.column(2) * c;
        let x = DMatrix::from_column_slice(6, 1, x.as_slice());
        let s = encode(&model, &x, &EncodeConfig::new(alpha)).unwrap();
        // With other atoms at zero, the 1-D soft-threshold gives c - alpha.
        let dominant = s.column(0).iamax();
        assert_eq!(dominant, 2);
        assert!((s[(2, 0)] - (c - alpha)).abs() < 1e-6);
    }

    #[test]
    fn zero_input_gives_zero_codes() {
        let model = unit_model(5, 7, 3, 2);
        let s = encode(&model, &DMatrix::zeros(5, 3), &EncodeConfig::default()).unwrap();
        assert!(s.iter().all(|v| *v == 0.0));
        let p = predict_from_codes(&model, s);
        assert_eq!(p.labels, vec![0, 0, 0]);
    }

    #[test]
    fn no_penalty_solves_least_squares() {
        let model = unit_model(8, 4, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let x = DMatrix::from_fn(8, 5, |_, _| rng.gen_range(-2.0..2.0));
        let s = encode(&model, &x, &EncodeConfig::new(0.0)).unwrap();
        // Normal equations: D^T (D s - x) = 0.
        let grad = model.dict.transpose() * (&model.dict * &s - &x);
        for col in grad.column_iter() {
            assert!(col.norm() <= 1e-6);
        }
    }

    #[test]
    fn identity_classifier_reads_off_the_code() {
        let model = DictionaryModel {
            dict: DMatrix::identity(3, 3),
            classifier: DMatrix::identity(3, 3),
            codes: DMatrix::zeros(3, 0),
        };
        let mut code = DMatrix::zeros(3, 1);
        code[(1, 0)] = 1.0;
        assert_eq!(predict_from_codes(&model, code).labels, vec![1]);
    }

    #[test]
    fn accuracy_examples() {
        let truth = PartialLabels::new(vec![0, 1, 1, 0], 2).unwrap();
        assert_eq!(accuracy_of(&[0, 1, 1, 0], &truth).unwrap(), 1.0);
        let pred = [0, 1, 0, 0];
        let acc = accuracy_of(&pred, &truth).unwrap();
        let flipped: Vec<usize> = pred.iter().map(|l| 1 - l).collect();
        assert_eq!(accuracy_of(&flipped, &truth).unwrap(), 1.0 - acc);
        assert!(accuracy_of(&[], &PartialLabels::new(vec![], 2).unwrap()).is_err());
    }

    #[test]
    fn scaling_a_sample_keeps_the_decision() {
        let model = unit_model(6, 5, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let x = DMatrix::from_fn(6, 4, |_, _| rng.gen_range(-1.0..1.0));
        let cfg = EncodeConfig::new(0.0);
        let a = predict(&model, &x, &cfg).unwrap();
        let b = predict(&model, &(&x * 2.5), &cfg).unwrap();
        assert_eq!(a.labels, b.labels);
        assert!((&a.scores * 2.5 - &b.scores).abs().max() < 1e-6);
    }

    #[test]
    fn encode_matches_converged_training_sweeps() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let x = DMatrix::from_fn(5, 9, |_, _| rng.gen_range(-1.0..1.0));
        let f = DMatrix::zeros(2, 9);
        let mut model = unit_model(5, 4, 2, 5);
        model.codes = DMatrix::zeros(4, 9);
        let cfg = TrainConfig {
            alpha: 0.05,
            gamma: 0.0,
            ..Default::default()
        };
        for _ in 0..2000 {
            update_codes(&mut model, &x, &f, &cfg).unwrap();
        }
        let trained = objective(&model, &x, &f, &cfg).unwrap();
        let mut encoded = model.clone();
        encoded.codes = encode(&model, &x, &EncodeConfig::new(0.05)).unwrap();
        let via_encode = objective(&encoded, &x, &f, &cfg).unwrap();
        assert!((trained - via_encode).abs() <= 1e-8);
    }

    #[test]
    fn prediction_csv_layout() {
        let model = unit_model(3, 3, 2, 6);
        let p = predict(&model, &DMatrix::identity(3, 2), &EncodeConfig::default()).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf, &["a".into(), "b".into()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "sample_id,predicted,score_0,score_1");
        assert!(lines[1].starts_with("a,"));
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn parallel_encoding_is_bitwise_sequential() {
        let model = unit_model(6, 8, 3, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let x = DMatrix::from_fn(6, 40, |_, _| rng.gen_range(-1.0..1.0));
        let seq = EncodeConfig { execution: Execution::Sequential, ..EncodeConfig::new(0.01) };
        let par = EncodeConfig { execution: Execution::Parallel, ..EncodeConfig::new(0.01) };
        assert_eq!(encode(&model, &x, &seq).unwrap(), encode(&model, &x, &par).unwrap());
    }
}
