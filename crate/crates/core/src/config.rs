//! Flat `key=value` run configuration covering every pipeline stage.

use std::fmt::Write as _;

use crate::classify::EncodeConfig;
use crate::dictlearn::TrainConfig;
use crate::error::{Result, SsdlError};
use crate::hypergraph::{Bandwidth, HypergraphConfig};
use crate::par::Execution;
use crate::plap::PLapConfig;
use crate::pseudolabel::PropagationConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub k_neighbors: usize,
    pub bandwidth: Bandwidth,
    pub initial_edge_weight: f64,
    pub p: f64,
    pub m_dims: Option<usize>,
    pub step_beta: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub reorthonormalize_every: usize,
    /// Replace the attention operator by zero (plain hypergraph Laplacian).
    pub zero_lp: bool,
    pub lambda: f64,
    pub k_atoms: Option<usize>,
    pub alpha: f64,
    pub gamma: f64,
    pub max_outer: usize,
    pub obj_tol: f64,
    pub exact_codes: bool,
    pub inner_sweeps: usize,
    pub classifier_passes: usize,
    pub refit_classifier: bool,
    /// Test-time sparsity; `None` reuses `alpha`.
    pub test_alpha: Option<f64>,
    pub normalize: bool,
    pub label_rate: f64,
    pub train_fraction: f64,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let h = HypergraphConfig::default();
        let pl = PLapConfig::default();
        let t = TrainConfig::default();
        RunConfig {
            k_neighbors: h.k_neighbors,
            bandwidth: h.bandwidth,
            initial_edge_weight: h.initial_edge_weight,
            p: pl.p,
            m_dims: pl.m_dims,
            step_beta: pl.step_beta,
            max_iter: pl.max_iter,
            grad_tol: pl.grad_tol,
            reorthonormalize_every: pl.reorthonormalize_every,
            zero_lp: false,
            lambda: PropagationConfig::default().lambda,
            k_atoms: t.k_atoms,
            alpha: t.alpha,
            gamma: t.gamma,
            max_outer: t.max_outer,
            obj_tol: t.obj_tol,
            exact_codes: t.exact_codes,
            inner_sweeps: t.inner_sweeps,
            classifier_passes: t.classifier_passes,
            refit_classifier: t.refit_classifier,
            test_alpha: None,
            normalize: false,
            label_rate: 0.4,
            train_fraction: 0.7,
            seed: 0,
            parallel: cfg!(feature = "parallel"),
        }
    }
}

pub const KEYS: &[&str] = &[
    "k_neighbors",
    "bandwidth",
    "initial_edge_weight",
    "p",
    "m_dims",
    "step_beta",
    "max_iter",
    "grad_tol",
    "reorthonormalize_every",
    "zero_lp",
    "lambda",
    "k_atoms",
    "alpha",
    "gamma",
    "max_outer",
    "obj_tol",
    "exact_codes",
    "inner_sweeps",
    "classifier_passes",
    "refit_classifier",
    "test_alpha",
    "normalize",
    "label_rate",
    "train_fraction",
    "seed",
    "parallel",
];

/// Parses a real, also accepting powers of two written `2^-12`.
pub fn parse_real(s: &str) -> Result<f64> {
    let s = s.trim();
    let v = match s.split_once('^') {
        Some((base, exp)) => {
            let b: f64 = base.trim().parse().map_err(|_| bad_value(s))?;
            let e: f64 = exp.trim().parse().map_err(|_| bad_value(s))?;
            b.powf(e)
        }
        None => s.parse().map_err(|_| bad_value(s))?,
    };
    if v.is_nan() {
        return Err(bad_value(s));
    }
    Ok(v)
}

fn bad_value(s: &str) -> SsdlError {
    SsdlError::InvalidInput(format!("cannot parse value '{s}'"))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| bad_value(s))
}

fn parse_bool(s: &str) -> Result<bool> {
    match s.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(bad_value(s)),
    }
}

fn parse_optional<T>(s: &str, auto: &str, f: impl Fn(&str) -> Result<T>) -> Result<Option<T>> {
    if s.trim() == auto {
        Ok(None)
    } else {
        f(s).map(Some)
    }
}

impl RunConfig {
    /// Named `(p, lambda)` settings: `stanford40` is (1.8, 0.1) and
    /// `uiuc-se` is (2.2, 0.1). Everything else keeps its default.
    pub fn preset(name: &str) -> Result<RunConfig> {
        let (p, lambda) = match name {
            "stanford40" => (1.8, 0.1),
            "uiuc-se" => (2.2, 0.1),
            other => return Err(SsdlError::InvalidInput(format!("unknown preset '{other}'"))),
        };
        Ok(RunConfig {
            p,
            lambda,
            ..RunConfig::default()
        })
    }

    /// Sets one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "k_neighbors" => self.k_neighbors = parse_usize(value)?,
            "bandwidth" => {
                self.bandwidth = match value.trim() {
                    "median" => Bandwidth::MedianPairwise,
                    v => Bandwidth::Fixed(parse_real(v)?),
                }
            }
            "initial_edge_weight" => self.initial_edge_weight = parse_real(value)?,
            "p" => self.p = parse_real(value)?,
            "m_dims" => self.m_dims = parse_optional(value, "full", parse_usize)?,
            "step_beta" => self.step_beta = parse_real(value)?,
            "max_iter" => self.max_iter = parse_usize(value)?,
            "grad_tol" => self.grad_tol = parse_real(value)?,
            "reorthonormalize_every" => self.reorthonormalize_every = parse_usize(value)?,
            "zero_lp" => self.zero_lp = parse_bool(value)?,
            "lambda" => self.lambda = parse_real(value)?,
            "k_atoms" => self.k_atoms = parse_optional(value, "auto", parse_usize)?,
            "alpha" => self.alpha = parse_real(value)?,
            "gamma" => self.gamma = parse_real(value)?,
            "max_outer" => self.max_outer = parse_usize(value)?,
            "obj_tol" => self.obj_tol = parse_real(value)?,
            "exact_codes" => self.exact_codes = parse_bool(value)?,
            "inner_sweeps" => self.inner_sweeps = parse_usize(value)?,
            "classifier_passes" => self.classifier_passes = parse_usize(value)?,
            "refit_classifier" => self.refit_classifier = parse_bool(value)?,
            "test_alpha" => self.test_alpha = parse_optional(value, "auto", parse_real)?,
            "normalize" => self.normalize = parse_bool(value)?,
            "label_rate" => self.label_rate = parse_real(value)?,
            "train_fraction" => self.train_fraction = parse_real(value)?,
            "seed" => self.seed = value.trim().parse().map_err(|_| bad_value(value))?,
            "parallel" => self.parallel = parse_bool(value)?,
            other => {
                return Err(SsdlError::InvalidInput(format!("unknown config key '{other}'")))
            }
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| SsdlError::parse(i + 1, 1, format!("expected key=value, got '{t}'")))?;
            self.set(k, v).map_err(|e| SsdlError::parse(i + 1, 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let opt = |v: Option<String>, auto: &str| v.unwrap_or_else(|| auto.to_string());
        Some(match key {
            "k_neighbors" => self.k_neighbors.to_string(),
            "bandwidth" => match self.bandwidth {
                Bandwidth::MedianPairwise => "median".into(),
                Bandwidth::Fixed(s) => format!("{s:e}"),
            },
            "initial_edge_weight" => format!("{:e}", self.initial_edge_weight),
            "p" => format!("{:e}", self.p),
            "m_dims" => opt(self.m_dims.map(|m| m.to_string()), "full"),
            "step_beta" => format!("{:e}", self.step_beta),
            "max_iter" => self.max_iter.to_string(),
            "grad_tol" => format!("{:e}", self.grad_tol),
            "reorthonormalize_every" => self.reorthonormalize_every.to_string(),
            "zero_lp" => self.zero_lp.to_string(),
            "lambda" => format!("{:e}", self.lambda),
            "k_atoms" => opt(self.k_atoms.map(|k| k.to_string()), "auto"),
            "alpha" => format!("{:e}", self.alpha),
            "gamma" => format!("{:e}", self.gamma),
            "max_outer" => self.max_outer.to_string(),
            "obj_tol" => format!("{:e}", self.obj_tol),
            "exact_codes" => self.exact_codes.to_string(),
            "inner_sweeps" => self.inner_sweeps.to_string(),
            "classifier_passes" => self.classifier_passes.to_string(),
            "refit_classifier" => self.refit_classifier.to_string(),
            "test_alpha" => opt(self.test_alpha.map(|a| format!("{a:e}")), "auto"),
            "normalize" => self.normalize.to_string(),
            "label_rate" => format!("{:e}", self.label_rate),
            "train_fraction" => format!("{:e}", self.train_fraction),
            "seed" => self.seed.to_string(),
            "parallel" => self.parallel.to_string(),
            _ => return None,
        })
    }

    /// Every key, one `key=value` per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).unwrap());
        }
        out
    }

    pub fn execution(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    pub fn hypergraph(&self) -> HypergraphConfig {
        HypergraphConfig {
            k_neighbors: self.k_neighbors,
            bandwidth: self.bandwidth,
            initial_edge_weight: self.initial_edge_weight,
            execution: self.execution(),
        }
    }

    pub fn plap(&self) -> PLapConfig {
        PLapConfig {
            p: self.p,
            m_dims: self.m_dims,
            step_beta: self.step_beta,
            max_iter: self.max_iter,
            grad_tol: self.grad_tol,
            reorthonormalize_every: self.reorthonormalize_every,
            execution: self.execution(),
        }
    }

    pub fn propagation(&self) -> PropagationConfig {
        PropagationConfig {
            lambda: self.lambda,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            k_atoms: self.k_atoms,
            alpha: self.alpha,
            gamma: self.gamma,
            max_outer: self.max_outer,
            obj_tol: self.obj_tol,
            exact_codes: self.exact_codes,
            inner_sweeps: self.inner_sweeps,
            classifier_passes: self.classifier_passes,
            refit_classifier: self.refit_classifier,
            seed: self.seed,
            execution: self.execution(),
        }
    }

    pub fn encode(&self) -> EncodeConfig {
        EncodeConfig {
            alpha: self.test_alpha.unwrap_or(self.alpha),
            execution: self.execution(),
            ..EncodeConfig::default()
        }
    }
}
