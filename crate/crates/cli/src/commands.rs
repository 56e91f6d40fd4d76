use std::io::Write;
use std::path::Path;

use ssdl_core::classify::accuracy;
use ssdl_core::config::parse_real;
use ssdl_core::dictlearn::DictionaryModel;
use ssdl_core::matrixio::{
    load_features, load_labels, load_labels_infer, make_synthetic, read_file, save_features,
    save_labels, FeatureMatrix, PartialLabels, SyntheticSpec,
};
use ssdl_core::pipeline::{
    generate_pseudolabels, make_scenario, predict_samples, run_scenario, run_ssdl, sweep,
    train_with_labels, write_sweep_csv, RunMetadata, Supervision, SweepKind,
};
use ssdl_core::pseudolabel::{propagation_cross_entropy, CrossEntropyMask, LabelMatrix};
use ssdl_core::{Result, SsdlError};

use crate::args::{
    ConfigArgs, EvaluateArgs, InputArgs, PredictArgs, PseudolabelArgs, SupervisionArg, SweepArgs,
    SynthArgs, TrainArgs,
};

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| SsdlError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to a Vec cannot fail");
    write_file(path, &buf)
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_file(path)?)
        .map_err(|_| SsdlError::InvalidInput(format!("{} is not UTF-8", path.display())))
}

fn features(cfg: &ConfigArgs, path: &Path) -> Result<FeatureMatrix> {
    load_features(path, cfg.format_for(path))
}

fn labels(path: &Path, classes: Option<usize>) -> Result<PartialLabels> {
    match classes {
        Some(c) => load_labels(path, c),
        None => load_labels_infer(path),
    }
}

fn load_inputs(input: &InputArgs, cfg: &ConfigArgs) -> Result<(FeatureMatrix, PartialLabels)> {
    let x = features(cfg, &input.features)?;
    let y = labels(&input.labels, input.classes)?;
    y.check_matches(&x)?;
    Ok((x, y))
}

fn finish(meta: &RunMetadata, args: &ConfigArgs, primary: &Path) -> Result<()> {
    write_with(&args.meta_path(primary), |w| meta.write_to(w))
}

fn path_entry(meta: &mut RunMetadata, key: &str, path: &Path) {
    meta.push(key, path.display());
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let (x, truth) = make_synthetic(&SyntheticSpec {
        num_classes: a.classes,
        samples_per_class: a.per_class,
        dim: a.dim,
        cluster_spread: a.spread,
        seed: cfg.seed,
    })?;
    save_features(&a.features, &x, a.config.format_for(&a.features))?;
    save_labels(&a.truth, &truth)?;
    let mut meta = RunMetadata::new("synth", &cfg);
    meta.push("classes", a.classes);
    meta.push("per_class", a.per_class);
    meta.push("dim", a.dim);
    meta.push("spread", format!("{:e}", a.spread));
    path_entry(&mut meta, "features", &a.features);
    path_entry(&mut meta, "truth", &a.truth);
    if let Some(p) = &a.partial {
        save_labels(p, &truth.masked(cfg.label_rate, cfg.seed)?)?;
        path_entry(&mut meta, "partial", p);
    }
    finish(&meta, &a.config, &a.features)
}

pub fn pseudolabel(a: &PseudolabelArgs) -> Result<()> {
    let mut cfg = a.config.resolve()?;
    if a.zero_lp {
        cfg.zero_lp = true;
    }
    let (x, y) = load_inputs(&a.input, &a.config)?;
    let run = generate_pseudolabels(&x, &y, &cfg)?;
    write_with(&a.out, |w| run.labels().write_csv(w, x.sample_ids()))?;

    let mut meta = RunMetadata::new("pseudolabel", &cfg);
    path_entry(&mut meta, "features", &a.input.features);
    path_entry(&mut meta, "labels", &a.input.labels);
    meta.record_pseudolabels(&run);
    if let Some(path) = &a.lambda_out {
        let emb = run.embedding.as_ref().ok_or_else(|| {
            SsdlError::InvalidInput("--lambda-out needs the p-Laplacian embedding (zero_lp is set)".into())
        })?;
        write_with(path, |w| emb.lambda.iter().try_for_each(|v| writeln!(w, "{v:e}")))?;
    }
    if let Some(path) = &a.diagnostics {
        if let Some(emb) = &run.embedding {
            write_with(path, |w| emb.write_diagnostics_csv(w))?;
        }
    }
    if let Some(path) = &a.truth {
        let truth = labels(path, Some(y.num_classes()))?;
        truth.check_matches(&x)?;
        let ce = propagation_cross_entropy(run.labels(), &truth, CrossEntropyMask::HeldoutOnly(&y))?;
        println!("heldout_cross_entropy={ce:e}");
        meta.push("heldout_cross_entropy", format!("{ce:e}"));
    }
    finish(&meta, &a.config, &a.out)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let (x, y) = load_inputs(&a.input, &a.config)?;
    let mut meta = RunMetadata::new("train", &cfg);
    path_entry(&mut meta, "features", &a.input.features);
    path_entry(&mut meta, "labels", &a.input.labels);
    let (model, trace) = match (&a.pseudolabels, a.supervision) {
        (Some(path), _) => {
            let (f, ids) = LabelMatrix::parse_csv(&read_text(path)?)?;
            if ids.len() != x.n_samples() {
                return Err(SsdlError::mismatch("pseudo-label columns", x.n_samples(), ids.len()));
            }
            path_entry(&mut meta, "pseudolabels", path);
            train_with_labels(&x, &f, &cfg)?
        }
        (None, sup) => {
            let supervision = match sup {
                SupervisionArg::Pseudo => Supervision::PseudoLabels,
                SupervisionArg::Initial => Supervision::InitialLabels,
            };
            meta.push("supervision", format!("{supervision:?}"));
            let run = run_ssdl(&x, &y, &cfg, supervision)?;
            if let Some(p) = &run.pseudo {
                meta.record_pseudolabels(p);
            }
            (run.model, run.trace)
        }
    };
    write_file(&a.model, &model.to_bytes())?;
    let trace_path = a.trace.clone().unwrap_or_else(|| {
        let mut s = a.model.as_os_str().to_owned();
        s.push(".trace.csv");
        s.into()
    });
    write_with(&trace_path, |w| trace.write_csv(w))?;
    meta.push("atoms", model.n_atoms());
    meta.push("outer_iterations", trace.outer_iterations());
    meta.push("converged", trace.converged);
    if !trace.unused_atoms.is_empty() {
        meta.push("unused_atoms", format!("{:?}", trace.unused_atoms));
    }
    path_entry(&mut meta, "model", &a.model);
    path_entry(&mut meta, "trace", &trace_path);
    finish(&meta, &a.config, &a.model)
}

fn load_model(path: &Path) -> Result<DictionaryModel> {
    DictionaryModel::from_bytes(&read_file(path)?)
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let model = load_model(&a.model)?;
    let x = features(&a.config, &a.features)?;
    let pred = predict_samples(&model, &x, &cfg)?;
    write_with(&a.out, |w| pred.write_csv(w, x.sample_ids()))?;
    let mut meta = RunMetadata::new("predict", &cfg);
    path_entry(&mut meta, "model", &a.model);
    path_entry(&mut meta, "features", &a.features);
    if let Some(path) = &a.truth {
        let truth = labels(path, Some(model.num_classes()))?;
        let acc = accuracy(&pred, &truth)?;
        println!("accuracy={acc:e}");
        meta.push("accuracy", format!("{acc:e}"));
    }
    finish(&meta, &a.config, &a.out)
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let mut cfg = a.config.resolve()?;
    if let Some(s) = &a.split {
        cfg.train_fraction = parse_real(s)?;
    }
    let x = features(&a.config, &a.features)?;
    let mut meta = RunMetadata::new("evaluate", &cfg);
    path_entry(&mut meta, "features", &a.features);
    let mut metrics: Vec<(&str, String)> = Vec::new();

    match &a.model {
        Some(model_path) => {
            let model = load_model(model_path)?;
            path_entry(&mut meta, "model", model_path);
            let pred = predict_samples(&model, &x, &cfg)?;
            if let Some(path) = &a.predictions {
                write_with(path, |w| pred.write_csv(w, x.sample_ids()))?;
            }
            if let Some(path) = &a.truth {
                let truth = labels(path, Some(model.num_classes()))?;
                metrics.push(("accuracy", format!("{:e}", accuracy(&pred, &truth)?)));
            }
        }
        None => {
            let path = a.truth.as_ref().ok_or_else(|| {
                SsdlError::InvalidInput("evaluate needs --model or --truth for the split protocol".into())
            })?;
            let truth = labels(path, None)?;
            let scenario = make_scenario(&x, &truth, &cfg)?;
            let supervision = if a.initial_labels {
                Supervision::InitialLabels
            } else {
                Supervision::PseudoLabels
            };
            let r = run_scenario(&scenario, &cfg, supervision)?;
            metrics.push(("n_train", scenario.x_train.n_samples().to_string()));
            metrics.push(("n_test", scenario.x_test.n_samples().to_string()));
            metrics.push(("test_accuracy", format!("{:e}", r.test_accuracy)));
            metrics.push(("train_accuracy", format!("{:e}", r.train_accuracy)));
            if let Some(ce) = r.heldout_cross_entropy {
                metrics.push(("heldout_cross_entropy", format!("{ce:e}")));
            }
            if let Some(p) = &r.run.pseudo {
                meta.record_pseudolabels(p);
            }
        }
    }

    let mut text = String::new();
    for (k, v) in &metrics {
        text.push_str(&format!("{k}={v}\n"));
        meta.push(k, v);
    }
    print!("{text}");
    write_file(&a.out, text.as_bytes())?;
    finish(&meta, &a.config, &a.out)
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(parse_real)
        .collect()
}

pub fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let kind: SweepKind = a.kind.parse()?;
    let grid = parse_grid(&a.grid)?;
    let x = features(&a.config, &a.features)?;
    let truth = labels(&a.truth, None)?;
    let rows = sweep(kind, &grid, &cfg, &x, &truth)?;
    write_with(&a.out, |w| write_sweep_csv(w, kind, &rows))?;
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    let mut meta = RunMetadata::new("sweep", &cfg);
    meta.push("kind", kind.as_str());
    meta.push("grid", &a.grid);
    path_entry(&mut meta, "features", &a.features);
    path_entry(&mut meta, "truth", &a.truth);
    meta.push("rows", rows.len());
    meta.push("failed_rows", failed);
    if failed > 0 {
        eprintln!("warning: {failed} of {} sweep cells failed; see the status column", rows.len());
    }
    finish(&meta, &a.config, &a.out)
}
