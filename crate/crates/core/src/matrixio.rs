//! Feature matrices, label files, model files and synthetic datasets.
//!
//! File formats:
//!
//! * Feature CSV: `# dim=<d>,n=<n>`, then a line of `n` comma-separated
//!   sample ids, then `d` rows of `n` comma-separated floats.
//! * Feature binary: `SSDLMAT1`, u32 dim, u32 n (little-endian), then
//!   `dim * n` little-endian f64 values in column-major order. Sample ids are
//!   not stored; they default to `s0 .. s{n-1}`.
//! * Label file: `n` lines, one signed integer each, `-1` for unlabeled.
//! * Model file: `SSDLMOD1`, u32 dim, u32 K, u32 C, then D (dim x K) and
//!   B (C x K) as column-major f64 blocks.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SsdlError};

pub const FEATURE_MAGIC: &[u8; 8] = b"SSDLMAT1";
pub const MODEL_MAGIC: &[u8; 8] = b"SSDLMOD1";
pub const UNLABELED: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Binary,
}

impl Format {
    /// `.bin` selects the binary format, anything else CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Format::Binary,
            _ => Format::Csv,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = SsdlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "binary" | "bin" => Ok(Format::Binary),
            other => Err(SsdlError::InvalidInput(format!("unknown format '{other}'"))),
        }
    }
}

/// Sample embeddings, one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: DMatrix<f64>,
    sample_ids: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(data: DMatrix<f64>, sample_ids: Vec<String>) -> Result<Self> {
        if data.nrows() < 1 || data.ncols() < 2 {
            return Err(SsdlError::InvalidInput(format!(
                "feature matrix must have dim >= 1 and n >= 2, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if sample_ids.len() != data.ncols() {
            return Err(SsdlError::mismatch(
                "sample ids",
                data.ncols(),
                sample_ids.len(),
            ));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            let (r, c) = (idx % data.nrows(), idx / data.nrows());
            return Err(SsdlError::InvalidInput(format!(
                "non-finite value at row {r}, column {c}"
            )));
        }
        let mut seen = HashSet::with_capacity(sample_ids.len());
        for (c, id) in sample_ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(SsdlError::InvalidInput(format!(
                    "duplicate sample id '{id}' at column {c}"
                )));
            }
        }
        Ok(FeatureMatrix { data, sample_ids })
    }

    /// Builds a matrix with ids `s0 .. s{n-1}`.
    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self> {
        let ids = default_ids(data.ncols());
        FeatureMatrix::new(data, ids)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    /// Columns selected by `idx`, in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<FeatureMatrix> {
        let data = self.data.select_columns(idx);
        let ids = idx.iter().map(|&i| self.sample_ids[i].clone()).collect();
        FeatureMatrix::new(data, ids)
    }

    /// Per-sample l2 normalization. Zero columns are left as they are.
    pub fn l2_normalized(&self) -> FeatureMatrix {
        let mut data = self.data.clone();
        for mut col in data.column_iter_mut() {
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
            }
        }
        FeatureMatrix {
            data,
            sample_ids: self.sample_ids.clone(),
        }
    }
}

fn default_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i}")).collect()
}

/// Class labels with `-1` marking unlabeled samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialLabels {
    labels: Vec<i64>,
    num_classes: usize,
}

impl PartialLabels {
    pub fn new(labels: Vec<i64>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(SsdlError::InvalidInput(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        for (i, &l) in labels.iter().enumerate() {
            if l != UNLABELED && (l < 0 || l >= num_classes as i64) {
                return Err(SsdlError::InvalidInput(format!(
                    "label {l} at sample {i} outside {{-1}} U [0, {num_classes})"
                )));
            }
        }
        Ok(PartialLabels {
            labels,
            num_classes,
        })
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<usize> {
        let l = self.labels[i];
        (l >= 0).then_some(l as usize)
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l >= 0).count()
    }

    pub fn label_rate(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labeled_count() as f64 / self.labels.len() as f64
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.labels.iter().all(|&l| l >= 0)
    }

    /// Fails unless every class appears among the labeled entries.
    pub fn check_all_classes_present(&self) -> Result<()> {
        let mut seen = vec![false; self.num_classes];
        for l in self.labels.iter().filter(|&&l| l >= 0) {
            seen[*l as usize] = true;
        }
        match seen.iter().position(|s| !s) {
            Some(c) => Err(SsdlError::InvalidInput(format!(
                "class {c} has no labeled sample"
            ))),
            None => Ok(()),
        }
    }

    pub fn check_matches(&self, x: &FeatureMatrix) -> Result<()> {
        if self.len() != x.n_samples() {
            return Err(SsdlError::mismatch(
                "label count vs feature columns",
                x.n_samples(),
                self.len(),
            ));
        }
        Ok(())
    }

    pub fn select(&self, idx: &[usize]) -> PartialLabels {
        PartialLabels {
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Keeps `round(rate * n_c)` labels per class (at least one when
    /// `rate > 0`), chosen by `seed`; the rest become unlabeled.
    pub fn masked(&self, rate: f64, seed: u64) -> Result<PartialLabels> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(SsdlError::InvalidInput(format!(
                "label rate {rate} outside [0, 1]"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = vec![UNLABELED; self.labels.len()];
        for (c, mut members) in self.class_members().into_iter().enumerate() {
            members.shuffle(&mut rng);
            let mut keep = (rate * members.len() as f64).round() as usize;
            if rate > 0.0 && !members.is_empty() {
                keep = keep.max(1);
            }
            for &i in members.iter().take(keep) {
                out[i] = c as i64;
            }
        }
        PartialLabels::new(out, self.num_classes)
    }

    fn class_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= 0 {
                members[l as usize].push(i);
            }
        }
        members
    }
}

/// Stratified train/test split over the labeled samples of `truth`.
///
/// Returns `(train, test)` index lists, each sorted ascending.
pub fn stratified_split(
    truth: &PartialLabels,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(SsdlError::InvalidInput(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut members in truth.class_members() {
        members.shuffle(&mut rng);
        let n_train = (train_fraction * members.len() as f64).round() as usize;
        let n_train = n_train.clamp(1.min(members.len()), members.len());
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Parameters of the Gaussian-blob generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub dim: usize,
    pub cluster_spread: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(SsdlError::InvalidInput("num_classes must be >= 2".into()));
        }
        if self.samples_per_class < 1 || self.dim < 1 {
            return Err(SsdlError::InvalidInput(
                "samples_per_class and dim must be >= 1".into(),
            ));
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return Err(SsdlError::InvalidInput(
                "cluster_spread must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Gaussian blobs: one center per class uniform in `[0, 10)^dim`, samples
/// ordered class by class. Labels are fully populated.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<(FeatureMatrix, PartialLabels)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| (0..spec.dim).map(|_| 10.0 * rng.gen::<f64>()).collect())
        .collect();
    let n = spec.num_classes * spec.samples_per_class;
    let mut data = DMatrix::zeros(spec.dim, n);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for s in 0..spec.samples_per_class {
            let j = c * spec.samples_per_class + s;
            for (r, &mu) in center.iter().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                data[(r, j)] = mu + spec.cluster_spread * z;
            }
            labels.push(c as i64);
        }
    }
    Ok((
        FeatureMatrix::from_matrix(data)?,
        PartialLabels::new(labels, spec.num_classes)?,
    ))
}

// ---------------------------------------------------------------------------
// features

pub fn load_features(path: &Path, format: Format) -> Result<FeatureMatrix> {
    match format {
        Format::Csv => {
            let text = fs::read_to_string(path).map_err(|e| SsdlError::io(path, e))?;
            parse_features_csv(&text)
        }
        Format::Binary => {
            let bytes = fs::read(path).map_err(|e| SsdlError::io(path, e))?;
            parse_features_binary(&bytes)
        }
    }
}

pub fn save_features(path: &Path, x: &FeatureMatrix, format: Format) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| SsdlError::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        Format::Csv => write_features_csv(&mut w, x),
        Format::Binary => write_features_binary(&mut w, x),
    }
    .and_then(|_| w.flush())
    .map_err(|e| SsdlError::io(path, e))
}

pub fn write_features_csv<W: Write>(w: &mut W, x: &FeatureMatrix) -> std::io::Result<()> {
    write_matrix_csv(w, &x.data, &x.sample_ids)
}

pub(crate) fn write_matrix_csv<W: Write>(
    w: &mut W,
    m: &DMatrix<f64>,
    ids: &[String],
) -> std::io::Result<()> {
    writeln!(w, "# dim={},n={}", m.nrows(), m.ncols())?;
    writeln!(w, "{}", ids.join(","))?;
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn write_features_binary<W: Write>(w: &mut W, x: &FeatureMatrix) -> std::io::Result<()> {
    write_matrix_binary(w, FEATURE_MAGIC, &x.data)
}

pub(crate) fn write_matrix_binary<W: Write>(
    w: &mut W,
    magic: &[u8; 8],
    m: &DMatrix<f64>,
) -> std::io::Result<()> {
    w.write_all(magic)?;
    w.write_all(&(m.nrows() as u32).to_le_bytes())?;
    w.write_all(&(m.ncols() as u32).to_le_bytes())?;
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| SsdlError::parse(1, 1, "header must start with '# dim=<d>,n=<n>'"))?;
    let mut dim = None;
    let mut n = None;
    for (i, part) in body.split(',').enumerate() {
        let (key, value) = part
            .trim()
            .split_once('=')
            .ok_or_else(|| SsdlError::parse(1, i + 1, format!("malformed header field '{part}'")))?;
        let value: usize = value
            .trim()
            .parse()
            .map_err(|_| SsdlError::parse(1, i + 1, format!("bad header value '{value}'")))?;
        match key.trim() {
            "dim" => dim = Some(value),
            "n" => n = Some(value),
            other => {
                return Err(SsdlError::parse(1, i + 1, format!("unknown header key '{other}'")))
            }
        }
    }
    match (dim, n) {
        (Some(d), Some(n)) => Ok((d, n)),
        _ => Err(SsdlError::parse(1, 1, "header needs both dim and n")),
    }
}

pub fn parse_features_csv(text: &str) -> Result<FeatureMatrix> {
    let mut lines = text.lines().enumerate();
    let (dim, n) = match lines.next() {
        Some((_, l)) => parse_header(l)?,
        None => return Err(SsdlError::parse(1, 1, "empty file")),
    };
    let ids: Vec<String> = match lines.next() {
        Some((_, l)) => l.split(',').map(|s| s.trim().to_string()).collect(),
        None => return Err(SsdlError::parse(2, 1, "missing sample id line")),
    };
    if ids.len() != n {
        return Err(SsdlError::parse(
            2,
            1,
            format!("expected {n} sample ids, found {}", ids.len()),
        ));
    }
    let mut seen = HashSet::with_capacity(n);
    for (c, id) in ids.iter().enumerate() {
        if !seen.insert(id.as_str()) {
            return Err(SsdlError::parse(2, c + 1, format!("duplicate sample id '{id}'")));
        }
    }
    let mut data = DMatrix::zeros(dim, n);
    let mut row = 0;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if row >= dim {
            return Err(SsdlError::parse(lineno + 1, 1, format!("more than {dim} data rows")));
        }
        let mut count = 0;
        for (c, cell) in line.split(',').enumerate() {
            if c >= n {
                return Err(SsdlError::parse(lineno + 1, c + 1, format!("more than {n} columns")));
            }
            let v: f64 = cell.trim().parse().map_err(|_| {
                SsdlError::parse(lineno + 1, c + 1, format!("non-numeric cell '{}'", cell.trim()))
            })?;
            if !v.is_finite() {
                return Err(SsdlError::parse(lineno + 1, c + 1, "non-finite value"));
            }
            data[(row, c)] = v;
            count += 1;
        }
        if count != n {
            return Err(SsdlError::parse(
                lineno + 1,
                count + 1,
                format!("expected {n} columns, found {count}"),
            ));
        }
        row += 1;
    }
    if row != dim {
        return Err(SsdlError::parse(
            row + 3,
            1,
            format!("expected {dim} data rows, found {row}"),
        ));
    }
    FeatureMatrix::new(data, ids)
}

pub(crate) fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| SsdlError::parse(0, offset, "truncated header"))
}

pub(crate) fn read_f64_block(
    bytes: &[u8],
    offset: usize,
    rows: usize,
    cols: usize,
) -> Result<DMatrix<f64>> {
    let len = rows * cols * 8;
    let block = bytes
        .get(offset..offset + len)
        .ok_or_else(|| SsdlError::parse(0, offset, "truncated data block"))?;
    let values: Vec<f64> = block
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(SsdlError::parse(
            i % rows.max(1) + 1,
            i / rows.max(1) + 1,
            "non-finite value",
        ));
    }
    Ok(DMatrix::from_vec(rows, cols, values))
}

pub fn parse_features_binary(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < 16 || &bytes[..8] != FEATURE_MAGIC {
        return Err(SsdlError::parse(0, 0, "missing SSDLMAT1 magic"));
    }
    let dim = read_u32(bytes, 8)? as usize;
    let n = read_u32(bytes, 12)? as usize;
    if bytes.len() != 16 + dim * n * 8 {
        return Err(SsdlError::parse(
            0,
            16,
            format!("expected {} data bytes, found {}", dim * n * 8, bytes.len() - 16),
        ));
    }
    let data = read_f64_block(bytes, 16, dim, n)?;
    FeatureMatrix::from_matrix(data)
}

// ---------------------------------------------------------------------------
// labels

pub fn load_labels(path: &Path, num_classes: usize) -> Result<PartialLabels> {
    let text = fs::read_to_string(path).map_err(|e| SsdlError::io(path, e))?;
    parse_labels(&text, num_classes)
}

pub fn parse_labels(text: &str, num_classes: usize) -> Result<PartialLabels> {
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: i64 = t
            .parse()
            .map_err(|_| SsdlError::parse(i + 1, 1, format!("not an integer: '{t}'")))?;
        if v != UNLABELED && (v < 0 || v >= num_classes as i64) {
            return Err(SsdlError::parse(
                i + 1,
                1,
                format!("class index {v} out of range for {num_classes} classes"),
            ));
        }
        labels.push(v);
    }
    PartialLabels::new(labels, num_classes)
}

/// Reads labels and infers the class count as `max label + 1`.
pub fn load_labels_infer(path: &Path) -> Result<PartialLabels> {
    let text = fs::read_to_string(path).map_err(|e| SsdlError::io(path, e))?;
    let max = text
        .lines()
        .filter_map(|l| l.trim().parse::<i64>().ok())
        .max()
        .unwrap_or(-1);
    parse_labels(&text, (max + 1).max(2) as usize)
}

pub fn write_labels<W: Write>(w: &mut W, labels: &PartialLabels) -> std::io::Result<()> {
    for l in &labels.labels {
        writeln!(w, "{l}")?;
    }
    Ok(())
}

pub fn save_labels(path: &Path, labels: &PartialLabels) -> Result<()> {
    let mut buf = Vec::new();
    write_labels(&mut buf, labels).expect("writing to a Vec cannot fail");
    fs::write(path, buf).map_err(|e| SsdlError::io(path, e))
}

// ---------------------------------------------------------------------------
// models

pub fn write_model<W: Write>(
    w: &mut W,
    dict: &DMatrix<f64>,
    classifier: &DMatrix<f64>,
) -> std::io::Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&(dict.nrows() as u32).to_le_bytes())?;
    w.write_all(&(dict.ncols() as u32).to_le_bytes())?;
    w.write_all(&(classifier.nrows() as u32).to_le_bytes())?;
    for v in dict.iter().chain(classifier.iter()) {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Returns `(D, B)`.
pub fn parse_model(bytes: &[u8]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if bytes.len() < 20 || &bytes[..8] != MODEL_MAGIC {
        return Err(SsdlError::parse(0, 0, "missing SSDLMOD1 magic"));
    }
    let dim = read_u32(bytes, 8)? as usize;
    let k = read_u32(bytes, 12)? as usize;
    let c = read_u32(bytes, 16)? as usize;
    let expected = 20 + (dim * k + c * k) * 8;
    if bytes.len() != expected {
        return Err(SsdlError::parse(
            0,
            20,
            format!("model file should be {expected} bytes, found {}", bytes.len()),
        ));
    }
    let d = read_f64_block(bytes, 20, dim, k)?;
    let b = read_f64_block(bytes, 20 + dim * k * 8, c, k)?;
    Ok((d, b))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| SsdlError::io(path, e))?;
    Ok(buf)
}
