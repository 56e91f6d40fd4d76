use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ssdl_core::matrixio::{read_file, Format};
use ssdl_core::{Result, RunConfig, SsdlError};

#[derive(Debug, Parser)]
#[command(name = "ssdl", version, about = "Semi-supervised dictionary learning with hypergraph pseudo-labels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a Gaussian-blob dataset.
    Synth(SynthArgs),
    /// Hypergraph pseudo-labels for a partially labeled set.
    Pseudolabel(PseudolabelArgs),
    /// Train a dictionary and classifier.
    Train(TrainArgs),
    /// Predict labels with a trained model.
    Predict(PredictArgs),
    /// Score a model, or run the train/test split protocol end to end.
    Evaluate(EvaluateArgs),
    /// Run a parameter grid and write one CSV row per cell.
    Sweep(SweepArgs),
}

/// Flags shared by every command. Precedence: defaults (or `--preset`),
/// then `--config`, then `--set`, then the named flags.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// Starting point instead of the defaults: `stanford40` or `uiuc-se`.
    #[arg(long)]
    pub preset: Option<String>,
    /// Flat key=value configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Any configuration key, e.g. `--set m_dims=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// p-Laplacian exponent.
    #[arg(long)]
    pub p: Option<String>,
    /// Propagation fidelity weight.
    #[arg(long)]
    pub lambda: Option<String>,
    /// Sparsity weight; accepts powers of two such as `2^-12`.
    #[arg(long)]
    pub alpha: Option<String>,
    /// Label-term weight.
    #[arg(long)]
    pub gamma: Option<String>,
    /// Dictionary size, or `auto` for half the sample count.
    #[arg(long)]
    pub k_atoms: Option<String>,
    /// Neighbours per hyperedge centroid.
    #[arg(long)]
    pub k_neighbors: Option<String>,
    /// Fraction of labels kept when masking.
    #[arg(long)]
    pub label_rate: Option<String>,
    /// Seed for data generation, splitting, masking and initialization.
    #[arg(long)]
    pub seed: Option<String>,
    /// Run every stage on one thread.
    #[arg(long)]
    pub sequential: bool,
    /// Feature file format; by default `.bin` is binary and anything else CSV.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Where to write run metadata; defaults to `<primary output>.meta`.
    #[arg(long, value_name = "PATH")]
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Binary,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.preset {
            Some(name) => RunConfig::preset(name)?,
            None => RunConfig::default(),
        };
        if let Some(path) = &self.config {
            let bytes = read_file(path)?;
            let text = String::from_utf8(bytes).map_err(|_| {
                SsdlError::InvalidInput(format!("config file {} is not UTF-8", path.display()))
            })?;
            cfg.apply_text(&text)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| SsdlError::InvalidInput(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k, v)?;
        }
        let flags = [
            ("p", &self.p),
            ("lambda", &self.lambda),
            ("alpha", &self.alpha),
            ("gamma", &self.gamma),
            ("k_atoms", &self.k_atoms),
            ("k_neighbors", &self.k_neighbors),
            ("label_rate", &self.label_rate),
            ("seed", &self.seed),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if self.sequential {
            cfg.parallel = false;
        }
        Ok(cfg)
    }

    pub fn format_for(&self, path: &Path) -> Format {
        match self.format {
            Some(FormatArg::Csv) => Format::Csv,
            Some(FormatArg::Binary) => Format::Binary,
            None => Format::from_path(path),
        }
    }

    pub fn meta_path(&self, primary: &Path) -> PathBuf {
        self.meta.clone().unwrap_or_else(|| {
            let mut s = primary.as_os_str().to_owned();
            s.push(".meta");
            PathBuf::from(s)
        })
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.3)]
    pub spread: f64,
    /// Output feature matrix.
    #[arg(long)]
    pub features: PathBuf,
    /// Output ground-truth labels.
    #[arg(long)]
    pub truth: PathBuf,
    /// Also write a copy of the labels masked to `label_rate`.
    #[arg(long)]
    pub partial: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Feature matrix, one column per sample.
    #[arg(long)]
    pub features: PathBuf,
    /// Label file, one integer per line, -1 for unlabeled.
    #[arg(long)]
    pub labels: PathBuf,
    /// Number of classes; inferred from the labels when omitted.
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PseudolabelArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Pseudo-label CSV output.
    #[arg(long)]
    pub out: PathBuf,
    /// Eigenvalues of the p-Laplacian embedding, one per line.
    #[arg(long)]
    pub lambda_out: Option<PathBuf>,
    /// Per-iteration embedding diagnostics CSV.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    /// Full labels; reports cross-entropy on the columns unlabeled in `--labels`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Replace the attention operator by zero (plain hypergraph Laplacian).
    #[arg(long)]
    pub zero_lp: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum SupervisionArg {
    /// Hypergraph pseudo-labels.
    Pseudo,
    /// The initial label matrix, unlabeled columns at 0.5.
    Initial,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Precomputed pseudo-label CSV; skips label generation.
    #[arg(long)]
    pub pseudolabels: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SupervisionArg::Pseudo)]
    pub supervision: SupervisionArg,
    /// Model output.
    #[arg(long)]
    pub model: PathBuf,
    /// Objective trace CSV; defaults to `<model>.trace.csv`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Predictions CSV output.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground truth; adds a metrics line on stdout.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Trained model to score. Without it the split protocol runs instead.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Train fraction of the stratified split.
    #[arg(long)]
    pub split: Option<String>,
    /// Train on the initial label matrix instead of pseudo-labels.
    #[arg(long)]
    pub initial_labels: bool,
    /// Metrics file (the same `key=value` lines printed on stdout).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write predictions here (model mode only).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// One of label_rate, p, lambda, alpha_gamma.
    #[arg(long)]
    pub kind: String,
    /// Comma-separated grid values.
    #[arg(long)]
    pub grid: String,
    #[arg(long)]
    pub features: PathBuf,
    /// Fully labeled ground truth; masking follows `label_rate`.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_flags_win_over_set_and_preset() {
        let args = ConfigArgs {
            preset: Some("uiuc-se".into()),
            set: vec!["p=1.5".into(), "m_dims=4".into()],
            alpha: Some("2^-10".into()),
            p: Some("2.6".into()),
            sequential: true,
            ..ConfigArgs::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.p, 2.6);
        assert_eq!(cfg.lambda, 0.1);
        assert_eq!(cfg.m_dims, Some(4));
        assert_eq!(cfg.alpha, 2f64.powi(-10));
        assert!(!cfg.parallel);
    }

    #[test]
    fn malformed_overrides_are_input_errors() {
        let bad_set = ConfigArgs { set: vec!["p".into()], ..ConfigArgs::default() };
        assert_eq!(bad_set.resolve().unwrap_err().kind().exit_code(), 2);
        let bad_preset = ConfigArgs { preset: Some("x".into()), ..ConfigArgs::default() };
        assert!(bad_preset.resolve().is_err());
    }

    #[test]
    fn metadata_sits_next_to_the_primary_output() {
        let args = ConfigArgs::default();
        assert_eq!(args.meta_path(Path::new("out/m.bin")), PathBuf::from("out/m.bin.meta"));
        assert_eq!(args.format_for(Path::new("x.bin")), Format::Binary);
        let forced = ConfigArgs { format: Some(FormatArg::Csv), ..ConfigArgs::default() };
        assert_eq!(forced.format_for(Path::new("x.bin")), Format::Csv);
    }
}
