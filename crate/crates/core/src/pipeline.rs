//! End-to-end orchestration: pseudo-labels, training, evaluation, sweeps.

use std::io::Write;

use nalgebra::DMatrix;

use crate::classify::{accuracy, predict, Prediction};
use crate::config::RunConfig;
use crate::dictlearn::{train, DictionaryModel, TrainTrace};
use crate::error::{Result, SsdlError};
use crate::hypergraph::{build_hypergraph, Hypergraph};
use crate::matrixio::{stratified_split, FeatureMatrix, PartialLabels};
use crate::par::{map_indexed, Execution};
use crate::plap::{edge_affinity, plap_embedding, plap_regularizer, plap_regularizer_from_operator, PLapEmbedding};
use crate::pseudolabel::{
    build_initial_labels, propagate_with_report, propagation_cross_entropy, CrossEntropyMask,
    LabelMatrix, Propagation,
};

#[derive(Debug, Clone)]
pub struct PseudoLabelRun {
    pub hypergraph: Hypergraph,
    /// `None` when the attention operator was forced to zero.
    pub embedding: Option<PLapEmbedding>,
    pub propagation: Propagation,
    pub k_neighbors_used: usize,
}

impl PseudoLabelRun {
    pub fn labels(&self) -> &LabelMatrix {
        &self.propagation.labels
    }
}

fn prepared(x: &FeatureMatrix, cfg: &RunConfig) -> FeatureMatrix {
    if cfg.normalize {
        x.l2_normalized()
    } else {
        x.clone()
    }
}

/// Hypergraph, p-Laplacian attention and closed-form propagation.
/// `k_neighbors` is clamped to `N - 1`.
pub fn generate_pseudolabels(
    x: &FeatureMatrix,
    labels: &PartialLabels,
    cfg: &RunConfig,
) -> Result<PseudoLabelRun> {
    labels.check_matches(x)?;
    let x = prepared(x, cfg);
    let mut hcfg = cfg.hypergraph();
    hcfg.k_neighbors = hcfg.k_neighbors.min(x.n_samples() - 1);
    let hypergraph = build_hypergraph(&x, &hcfg)?;
    let (delta, embedding) = if cfg.zero_lp {
        let e = hypergraph.n_edges();
        (plap_regularizer_from_operator(&hypergraph, &DMatrix::zeros(e, e))?, None)
    } else {
        let emb = plap_embedding(&edge_affinity(&hypergraph), &cfg.plap())?;
        (plap_regularizer(&hypergraph, &emb)?, Some(emb))
    };
    let o = build_initial_labels(labels);
    let propagation = propagate_with_report(&o, &delta, &cfg.propagation())?;
    Ok(PseudoLabelRun {
        hypergraph,
        embedding,
        propagation,
        k_neighbors_used: hcfg.k_neighbors,
    })
}

/// What the dictionary learner is trained against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Supervision {
    /// Soft labels from the hypergraph pretext task.
    PseudoLabels,
    /// The initial matrix O itself (unlabeled columns at 0.5).
    InitialLabels,
}

#[derive(Debug, Clone)]
pub struct SsdlRun {
    pub pseudo: Option<PseudoLabelRun>,
    pub supervision: LabelMatrix,
    pub model: DictionaryModel,
    pub trace: TrainTrace,
}

pub fn train_with_labels(
    x: &FeatureMatrix,
    f: &LabelMatrix,
    cfg: &RunConfig,
) -> Result<(DictionaryModel, TrainTrace)> {
    if f.n_samples() != x.n_samples() {
        return Err(SsdlError::mismatch("pseudo-label columns", x.n_samples(), f.n_samples()));
    }
    let x = prepared(x, cfg);
    train(x.data(), &f.values, &cfg.train())
}

/// Full pipeline on a partially labeled training set.
pub fn run_ssdl(
    x: &FeatureMatrix,
    labels: &PartialLabels,
    cfg: &RunConfig,
    supervision: Supervision,
) -> Result<SsdlRun> {
    let (pseudo, f) = match supervision {
        Supervision::PseudoLabels => {
            let run = generate_pseudolabels(x, labels, cfg)?;
            let f = run.labels().clone();
            (Some(run), f)
        }
        Supervision::InitialLabels => {
            labels.check_matches(x)?;
            (None, build_initial_labels(labels))
        }
    };
    let (model, trace) = train_with_labels(x, &f, cfg)?;
    Ok(SsdlRun {
        pseudo,
        supervision: f,
        model,
        trace,
    })
}

pub fn predict_samples(model: &DictionaryModel, x: &FeatureMatrix, cfg: &RunConfig) -> Result<Prediction> {
    let x = prepared(x, cfg);
    predict(model, x.data(), &cfg.encode())
}

/// Train/test split with masked training labels.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub x_train: FeatureMatrix,
    pub truth_train: PartialLabels,
    pub partial_train: PartialLabels,
    pub x_test: FeatureMatrix,
    pub truth_test: PartialLabels,
}

/// Stratified split with `cfg.train_fraction`, then `cfg.label_rate`
/// masking of the training labels. Both draws derive from `cfg.seed`.
pub fn make_scenario(x: &FeatureMatrix, truth: &PartialLabels, cfg: &RunConfig) -> Result<Scenario> {
    truth.check_matches(x)?;
    let (train_idx, test_idx) = stratified_split(truth, cfg.train_fraction, cfg.seed)?;
    let truth_train = truth.select(&train_idx);
    let partial_train = truth_train.masked(cfg.label_rate, cfg.seed.wrapping_add(1))?;
    Ok(Scenario {
        x_train: x.select(&train_idx)?,
        truth_train,
        partial_train,
        x_test: x.select(&test_idx)?,
        truth_test: truth.select(&test_idx),
    })
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub run: SsdlRun,
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    /// Cross-entropy of the pseudo-labels on masked training columns.
    pub heldout_cross_entropy: Option<f64>,
}

pub fn run_scenario(s: &Scenario, cfg: &RunConfig, supervision: Supervision) -> Result<ScenarioResult> {
    let run = run_ssdl(&s.x_train, &s.partial_train, cfg, supervision)?;
    let test_accuracy = accuracy(&predict_samples(&run.model, &s.x_test, cfg)?, &s.truth_test)?;
    let train_accuracy = accuracy(&predict_samples(&run.model, &s.x_train, cfg)?, &s.truth_train)?;
    let heldout_cross_entropy = match &run.pseudo {
        Some(p) if s.partial_train.labeled_count() < s.truth_train.labeled_count() => Some(
            propagation_cross_entropy(
                p.labels(),
                &s.truth_train,
                CrossEntropyMask::HeldoutOnly(&s.partial_train),
            )?,
        ),
        _ => None,
    };
    Ok(ScenarioResult {
        run,
        test_accuracy,
        train_accuracy,
        heldout_cross_entropy,
    })
}

// ---------------------------------------------------------------------------
// sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    LabelRate,
    P,
    Lambda,
    AlphaGamma,
}

impl SweepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepKind::LabelRate => "label_rate",
            SweepKind::P => "p",
            SweepKind::Lambda => "lambda",
            SweepKind::AlphaGamma => "alpha_gamma",
        }
    }

    pub fn metric(self) -> &'static str {
        match self {
            SweepKind::P | SweepKind::Lambda => "heldout_cross_entropy",
            SweepKind::LabelRate | SweepKind::AlphaGamma => "test_accuracy",
        }
    }
}

impl std::str::FromStr for SweepKind {
    type Err = SsdlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label_rate" => Ok(SweepKind::LabelRate),
            "p" => Ok(SweepKind::P),
            "lambda" => Ok(SweepKind::Lambda),
            "alpha_gamma" => Ok(SweepKind::AlphaGamma),
            other => Err(SsdlError::InvalidInput(format!("unknown sweep kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub label_rate: f64,
    pub p: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// Metric value, or the error message of a failed cell.
    pub outcome: std::result::Result<f64, String>,
}

/// Grid cells in output order. `AlphaGamma` takes the Cartesian product of
/// the grid with itself (alpha outer).
pub fn sweep_cells(kind: SweepKind, grid: &[f64], base: &RunConfig) -> Vec<RunConfig> {
    let with = |f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    match kind {
        SweepKind::LabelRate => grid.iter().map(|&v| with(&|c| c.label_rate = v)).collect(),
        SweepKind::P => grid.iter().map(|&v| with(&|c| c.p = v)).collect(),
        SweepKind::Lambda => grid.iter().map(|&v| with(&|c| c.lambda = v)).collect(),
        SweepKind::AlphaGamma => grid
            .iter()
            .flat_map(|&a| {
                grid.iter().map(move |&g| (a, g))
            })
            .map(|(a, g)| {
                with(&|c| {
                    c.alpha = a;
                    c.gamma = g;
                })
            })
            .collect(),
    }
}

fn sweep_cell(kind: SweepKind, x: &FeatureMatrix, truth: &PartialLabels, cfg: &RunConfig) -> Result<f64> {
    let scenario = make_scenario(x, truth, cfg)?;
    match kind {
        SweepKind::P | SweepKind::Lambda => {
            let run = generate_pseudolabels(&scenario.x_train, &scenario.partial_train, cfg)?;
            propagation_cross_entropy(
                run.labels(),
                &scenario.truth_train,
                CrossEntropyMask::HeldoutOnly(&scenario.partial_train),
            )
        }
        SweepKind::LabelRate | SweepKind::AlphaGamma => {
            run_scenario(&scenario, cfg, Supervision::PseudoLabels).map(|r| r.test_accuracy)
        }
    }
}

/// Runs every grid cell; a failing cell becomes an error row and the sweep
/// continues. Rows follow grid order whatever the completion order.
pub fn sweep(
    kind: SweepKind,
    grid: &[f64],
    base: &RunConfig,
    x: &FeatureMatrix,
    truth: &PartialLabels,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(SsdlError::InvalidInput("sweep grid is empty".into()));
    }
    let cells = sweep_cells(kind, grid, base);
    let exec = base.execution();
    let rows = map_indexed(exec, cells.len(), |i| {
        let cfg = &cells[i];
        SweepRow {
            label_rate: cfg.label_rate,
            p: cfg.p,
            lambda: cfg.lambda,
            alpha: cfg.alpha,
            gamma: cfg.gamma,
            outcome: sweep_cell(kind, x, truth, cfg).map_err(|e| e.to_string()),
        }
    });
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(w: &mut W, kind: SweepKind, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(w, "kind,label_rate,p,lambda,alpha,gamma,metric,value,status")?;
    for r in rows {
        let (value, status) = match &r.outcome {
            Ok(v) => (format!("{v:e}"), "ok".to_string()),
            Err(msg) => (String::new(), format!("error: {}", msg.replace([',', '\n'], ";"))),
        };
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e},{:e},{},{},{}",
            kind.as_str(),
            r.label_rate,
            r.p,
            r.lambda,
            r.alpha,
            r.gamma,
            kind.metric(),
            value,
            status
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// metadata

/// Ordered `key=value` lines describing a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetadata {
    entries: Vec<(String, String)>,
}

impl RunMetadata {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        let mut m = RunMetadata::default();
        m.push("command", command);
        m.push("version", env!("CARGO_PKG_VERSION"));
        m.push("threads", cfg.execution().thread_count());
        m.push("parallel_feature", cfg!(feature = "parallel"));
        for line in cfg.to_text().lines() {
            if let Some((k, v)) = line.split_once('=') {
                m.push(&format!("config.{k}"), v);
            }
        }
        m
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn record_pseudolabels(&mut self, run: &PseudoLabelRun) {
        self.push("sigma", format!("{:e}", run.hypergraph.bandwidth()));
        self.push("k_neighbors_used", run.k_neighbors_used);
        match &run.embedding {
            Some(e) => {
                self.push("plap_iterations", e.iterations);
                self.push("plap_converged", e.converged);
                self.push("plap_m_dims", e.m_dims());
            }
            None => self.push("plap", "disabled (zero_lp)"),
        }
        self.push("propagation_solver", format!("{:?}", run.propagation.method));
        self.push("propagation_residual", format!("{:e}", run.propagation.residual));
        for w in &run.propagation.warnings {
            self.push("warning", w);
        }
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(w, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Shorthand used by benches and tests.
pub fn with_execution(cfg: &RunConfig, exec: Execution) -> RunConfig {
    RunConfig {
        parallel: exec == Execution::Parallel,
        ..cfg.clone()
    }
}
