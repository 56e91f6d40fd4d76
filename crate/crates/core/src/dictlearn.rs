//! Label-embedded dictionary learning.
//!
//! Minimizes
//!
//! ```text
//! ||X - D S||_F^2 + 2 alpha ||S||_1 + gamma ||F - B S||_F^2,
//! ||d_k||_2 <= 1, ||b_k||_2 <= 1
//! ```
//!
//! by alternating a code update with column-wise block updates of the
//! dictionary `D` and classifier `B`. Dictionary atoms are kept at unit norm;
//! classifier columns live in the unit ball, since pseudo-label matrices are
//! typically far smaller than the codes they are regressed on.
//!
//! With `refit_classifier` set, `B` is refit at the end on the label-free
//! codes of the training data, the same codes [`crate::classify::encode`]
//! produces at prediction time.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::classify::{encode, lasso_code, EncodeConfig, LassoProblem};
use crate::error::{Result, SsdlError};
use crate::matrixio::{parse_model, write_model};
use crate::par::{map_indexed, Execution};

/// Allowed objective increase before training aborts.
pub const MONOTONICITY_SLACK: f64 = 1e-9;

const REFIT_PASSES: usize = 200;

/// `sign(j) * max(|j| - alpha, 0)`.
pub fn soft_threshold(j: f64, alpha: f64) -> f64 {
    if j > alpha {
        j - alpha
    } else if j < -alpha {
        j + alpha
    } else {
        0.0
    }
}

/// Minimizer of `a s^2 - 2 j s + 2 alpha |s|` for `a > 0`.
pub fn scalar_code(j: f64, alpha: f64, a: f64) -> f64 {
    soft_threshold(j, alpha) / a
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Dictionary size; `None` means `ceil(N / 2)`.
    pub k_atoms: Option<usize>,
    pub alpha: f64,
    pub gamma: f64,
    pub max_outer: usize,
    pub obj_tol: f64,
    /// Solve each code subproblem to optimality (warm-started) instead of
    /// running `inner_sweeps` coordinate sweeps.
    pub exact_codes: bool,
    pub inner_sweeps: usize,
    /// Block-coordinate passes over the columns of `B` per outer iteration.
    pub classifier_passes: usize,
    pub refit_classifier: bool,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k_atoms: None,
            alpha: 2f64.powi(-12),
            gamma: 2f64.powi(-12),
            max_outer: 50,
            obj_tol: 1e-5,
            exact_codes: true,
            inner_sweeps: 1,
            classifier_passes: 50,
            refit_classifier: true,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn atoms_for(&self, n: usize) -> usize {
        self.k_atoms.unwrap_or(n.div_ceil(2))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(SsdlError::InvalidInput("alpha must be finite and >= 0".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(SsdlError::InvalidInput("gamma must be finite and >= 0".into()));
        }
        if self.k_atoms == Some(0) {
            return Err(SsdlError::InvalidInput("k_atoms must be >= 1".into()));
        }
        if self.inner_sweeps == 0 {
            return Err(SsdlError::InvalidInput("inner_sweeps must be >= 1".into()));
        }
        if self.classifier_passes == 0 {
            return Err(SsdlError::InvalidInput("classifier_passes must be >= 1".into()));
        }
        if self.obj_tol.is_nan() || self.obj_tol < 0.0 {
            return Err(SsdlError::InvalidInput("obj_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Dictionary `D` (dim x K), classifier `B` (C x K) and codes `S` (K x N).
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryModel {
    pub dict: DMatrix<f64>,
    pub classifier: DMatrix<f64>,
    pub codes: DMatrix<f64>,
}

impl DictionaryModel {
    pub fn n_atoms(&self) -> usize {
        self.dict.ncols()
    }

    pub fn dim(&self) -> usize {
        self.dict.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.nrows()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write_model(w, &self.dict, &self.classifier)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Restores `D` and `B`; the codes come back empty (K x 0).
    pub fn from_bytes(bytes: &[u8]) -> Result<DictionaryModel> {
        let (dict, classifier) = parse_model(bytes)?;
        if dict.ncols() != classifier.ncols() {
            return Err(SsdlError::mismatch("model atoms", dict.ncols(), classifier.ncols()));
        }
        let k = dict.ncols();
        Ok(DictionaryModel {
            dict,
            classifier,
            codes: DMatrix::zeros(k, 0),
        })
    }
}

fn check_dims(model: &DictionaryModel, x: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != model.dict.nrows() {
        return Err(SsdlError::mismatch("feature dim", model.dict.nrows(), x.nrows()));
    }
    if f.nrows() != model.classifier.nrows() {
        return Err(SsdlError::mismatch("class count", model.classifier.nrows(), f.nrows()));
    }
    if x.ncols() != f.ncols() || model.codes.ncols() != x.ncols() {
        return Err(SsdlError::mismatch(
            "sample count",
            x.ncols(),
            format!("{} labels / {} codes", f.ncols(), model.codes.ncols()),
        ));
    }
    Ok(())
}

/// Atoms are `K` distinct training samples picked by `cfg.seed`, normalized;
/// classifier columns are normalized Gaussian draws; codes start at zero.
pub fn init_model(x: &DMatrix<f64>, f: &DMatrix<f64>, cfg: &TrainConfig) -> Result<DictionaryModel> {
    cfg.validate()?;
    let n = x.ncols();
    if f.ncols() != n {
        return Err(SsdlError::mismatch("label columns", n, f.ncols()));
    }
    let k = cfg.atoms_for(n);
    if k > n {
        return Err(SsdlError::InvalidInput(format!(
            "K = {k} atoms exceeds the {n} training samples"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut picks = sample(&mut rng, n, k).into_vec();
    picks.sort_unstable();
    let mut dict = x.select_columns(&picks);
    for (a, mut col) in dict.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm == 0.0 {
            return Err(SsdlError::InvalidInput(format!(
                "atom {a} initialized from all-zero sample {}",
                picks[a]
            )));
        }
        col /= norm;
    }
    let c = f.nrows();
    let mut classifier = DMatrix::from_fn(c, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    for mut col in classifier.column_iter_mut() {
        let norm = col.norm();
        col /= norm;
    }
    Ok(DictionaryModel {
        dict,
        classifier,
        codes: DMatrix::zeros(k, n),
    })
}

/// The three terms of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub reconstruction: f64,
    pub l1: f64,
    pub label: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.l1 + self.label
    }
}

pub fn objective_terms(
    model: &DictionaryModel,
    x: &DMatrix<f64>,
    f: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> Result<ObjectiveTerms> {
    check_dims(model, x, f)?;
    let rec = (x - &model.dict * &model.codes).norm_squared();
    let l1 = 2.0 * cfg.alpha * model.codes.iter().map(|v| v.abs()).sum::<f64>();
    let label = cfg.gamma * (f - &model.classifier * &model.codes).norm_squared();
    Ok(ObjectiveTerms {
        reconstruction: rec,
        l1,
        label,
    })
}

pub fn objective(
    model: &DictionaryModel,
    x: &DMatrix<f64>,
    f: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> Result<f64> {
    objective_terms(model, x, f, cfg).map(|t| t.total())
}

/// Cyclic coordinate descent on one code column against a fixed Gram matrix.
/// Returns the largest coordinate change.
pub(crate) fn sweep_column(
    gram: &DMatrix<f64>,
    rhs: &[f64],
    alpha: f64,
    s: &mut [f64],
) -> f64 {
    let k = s.len();
    let mut max_change = 0.0f64;
    for a in 0..k {
        let g = gram.column(a);
        let mut j = rhs[a];
        for (l, &sl) in s.iter().enumerate() {
            if l != a {
                j -= g[l] * sl;
            }
        }
        let new = scalar_code(j, alpha, g[a]);
        max_change = max_change.max((new - s[a]).abs());
        s[a] = new;
    }
    max_change
}

fn gram_and_denominators(model: &DictionaryModel, gamma: f64) -> Result<DMatrix<f64>> {
    let dt = model.dict.transpose();
    let bt = model.classifier.transpose();
    let gram = &dt * &model.dict + (&bt * &model.classifier) * gamma;
    for a in 0..gram.nrows() {
        if !(gram[(a, a)] > 0.0) {
            return Err(SsdlError::DegenerateAtom { atom: a });
        }
    }
    Ok(gram)
}

/// One full sweep over all code entries (atom-major within each sample;
/// samples are independent so they may run in parallel).
pub fn update_codes(
    model: &mut DictionaryModel,
    x: &DMatrix<f64>,
    f: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> Result<()> {
    check_dims(model, x, f)?;
    let gram = gram_and_denominators(model, cfg.gamma)?;
    let rhs = model.dict.transpose() * x + (model.classifier.transpose() * f) * cfg.gamma;
    // Stacked design [D; sqrt(gamma) B] against targets [X; sqrt(gamma) F].
    let root = cfg.gamma.sqrt();
    let (dim, c) = (model.dim(), model.num_classes());
    let mut design = DMatrix::zeros(dim + c, model.n_atoms());
    design.rows_mut(0, dim).copy_from(&model.dict);
    design.rows_mut(dim, c).copy_from(&(&model.classifier * root));
    let mut targets = DMatrix::zeros(dim + c, x.ncols());
    targets.rows_mut(0, dim).copy_from(x);
    targets.rows_mut(dim, c).copy_from(&(f * root));
    let codes = &model.codes;
    let cols = map_indexed(cfg.execution, x.ncols(), |n| {
        let mut s: Vec<f64> = codes.column(n).iter().copied().collect();
        if cfg.exact_codes {
            let (yn, rn) = (targets.column(n), rhs.column(n));
            let prob = LassoProblem {
                design: &design,
                gram: &gram,
                target: yn.as_slice(),
                rhs: rn.as_slice(),
                alpha: cfg.alpha,
            };
            lasso_code(&prob, &mut s);
            return s;
        }
        for _ in 0..cfg.inner_sweeps {
            sweep_column(&gram, rhs.column(n).as_slice(), cfg.alpha, &mut s);
        }
        s
    });
    for (n, s) in cols.into_iter().enumerate() {
        model.codes.set_column(n, &DVector::from_vec(s));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColumnConstraint {
    UnitNorm,
    UnitBall,
}

/// Column-by-column block update of `target` so that `||Y - target * S||_F`
/// does not increase. Each column is the exact minimizer given the others
/// under `constraint`. Returns indices of atoms left unchanged (unused row of
/// S, or zero numerator).
fn block_update(
    target: &mut DMatrix<f64>,
    y: &DMatrix<f64>,
    codes: &DMatrix<f64>,
    constraint: ColumnConstraint,
) -> Vec<usize> {
    let sst = codes * codes.transpose();
    let yst = y * codes.transpose();
    let mut unused = Vec::new();
    for k in 0..target.ncols() {
        if sst[(k, k)] == 0.0 {
            unused.push(k);
            continue;
        }
        let mut r = yst.column(k).into_owned();
        for l in 0..target.ncols() {
            if l != k {
                r -= target.column(l) * sst[(l, k)];
            }
        }
        let norm = r.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            unused.push(k);
            continue;
        }
        let norm = match constraint {
            ColumnConstraint::UnitNorm => norm,
            ColumnConstraint::UnitBall => norm.max(sst[(k, k)]),
        };
        target.set_column(k, &(r / norm));
    }
    unused
}

/// Block update of the dictionary; returns the atoms left unchanged.
pub fn update_dictionary(model: &mut DictionaryModel, x: &DMatrix<f64>) -> Result<Vec<usize>> {
    if x.nrows() != model.dict.nrows() || x.ncols() != model.codes.ncols() {
        return Err(SsdlError::mismatch(
            "features vs model",
            format!("{}x{}", model.dict.nrows(), model.codes.ncols()),
            format!("{}x{}", x.nrows(), x.ncols()),
        ));
    }
    Ok(block_update(&mut model.dict, x, &model.codes, ColumnConstraint::UnitNorm))
}

/// `passes` block-coordinate passes over the classifier columns; returns the
/// columns left unchanged by the last pass.
pub fn update_classifier(
    model: &mut DictionaryModel,
    f: &DMatrix<f64>,
    passes: usize,
) -> Result<Vec<usize>> {
    if f.nrows() != model.classifier.nrows() || f.ncols() != model.codes.ncols() {
        return Err(SsdlError::mismatch(
            "labels vs model",
            format!("{}x{}", model.classifier.nrows(), model.codes.ncols()),
            format!("{}x{}", f.nrows(), f.ncols()),
        ));
    }
    let mut unused = Vec::new();
    for _ in 0..passes.max(1) {
        unused = block_update(&mut model.classifier, f, &model.codes, ColumnConstraint::UnitBall);
    }
    Ok(unused)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub terms: ObjectiveTerms,
    /// Fraction of nonzero entries in S.
    pub nonzero_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    /// Row 0 is the initial model; row `i` follows outer iteration `i`.
    pub rows: Vec<TraceRow>,
    pub converged: bool,
    /// Atoms flagged as unused during the last dictionary update.
    pub unused_atoms: Vec<usize>,
}

impl TrainTrace {
    pub fn totals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.terms.total()).collect()
    }

    pub fn outer_iterations(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "iteration,total,reconstruction,l1,label,nonzero_fraction")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{:e}",
                r.iteration,
                r.terms.total(),
                r.terms.reconstruction,
                r.terms.l1,
                r.terms.label,
                r.nonzero_fraction
            )?;
        }
        Ok(())
    }
}

fn nonzero_fraction(s: &DMatrix<f64>) -> f64 {
    if s.is_empty() {
        return 0.0;
    }
    s.iter().filter(|v| **v != 0.0).count() as f64 / s.len() as f64
}

fn check_step(before: f64, after: f64, what: &str, iteration: usize) -> Result<()> {
    if !after.is_finite() {
        return Err(SsdlError::Numerical(format!(
            "objective became non-finite after {what} in iteration {iteration}"
        )));
    }
    if after > before + MONOTONICITY_SLACK {
        return Err(SsdlError::Invariant(format!(
            "objective increased by {:e} after {what} in iteration {iteration} ({before:e} -> {after:e})",
            after - before
        )));
    }
    Ok(())
}

/// Alternates code, dictionary and classifier updates from a seeded
/// initialization.
pub fn train(
    x: &DMatrix<f64>,
    f: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> Result<(DictionaryModel, TrainTrace)> {
    let model = init_model(x, f, cfg)?;
    train_from(model, x, f, cfg)
}

/// Same as [`train`] but starting from an explicit model.
pub fn train_from(
    mut model: DictionaryModel,
    x: &DMatrix<f64>,
    f: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> Result<(DictionaryModel, TrainTrace)> {
    cfg.validate()?;
    let mut terms = objective_terms(&model, x, f, cfg)?;
    let mut trace = TrainTrace {
        rows: vec![TraceRow {
            iteration: 0,
            terms,
            nonzero_fraction: nonzero_fraction(&model.codes),
        }],
        ..Default::default()
    };
    for it in 1..=cfg.max_outer {
        let start = terms.total();

        update_codes(&mut model, x, f, cfg)?;
        let after_codes = objective(&model, x, f, cfg)?;
        check_step(start, after_codes, "code update", it)?;

        trace.unused_atoms = update_dictionary(&mut model, x)?;
        let after_dict = objective(&model, x, f, cfg)?;
        check_step(after_codes, after_dict, "dictionary update", it)?;

        update_classifier(&mut model, f, cfg.classifier_passes)?;
        terms = objective_terms(&model, x, f, cfg)?;
        check_step(after_dict, terms.total(), "classifier update", it)?;

        trace.rows.push(TraceRow {
            iteration: it,
            terms,
            nonzero_fraction: nonzero_fraction(&model.codes),
        });
        let decrease = (start - terms.total()) / start.abs().max(f64::MIN_POSITIVE);
        if decrease < cfg.obj_tol {
            trace.converged = true;
            break;
        }
    }
    if cfg.refit_classifier {
        refit_classifier(&mut model, x, f, cfg)?;
    }
    Ok((model, trace))
}

/// Refits `B` against the label-free codes of `x`, leaving `D` and the
/// stored training codes untouched.
pub fn refit_classifier(
    model: &mut DictionaryModel,
    x: &DMatrix<f64>,
    f: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> Result<()> {
    let enc = encode(
        model,
        x,
        &EncodeConfig {
            alpha: cfg.alpha,
            execution: cfg.execution,
            ..EncodeConfig::default()
        },
    )?;
    for _ in 0..REFIT_PASSES {
        block_update(&mut model.classifier, f, &enc, ColumnConstraint::UnitBall);
    }
    Ok(())
}
