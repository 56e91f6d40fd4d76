//! Centroid-kNN hypergraph with Gaussian incidence weights.
//!
//! Every sample spawns one hyperedge made of itself (the centroid) and its
//! `k` nearest neighbours. Member `v` of the hyperedge centred at `c` gets
//! incidence `exp(-dis(v, c)^2 / sigma^2)`.

use std::cmp::Ordering;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SsdlError};
use crate::matrixio::{write_matrix_binary, write_matrix_csv, FeatureMatrix};
use crate::par::{map_indexed, Execution};

pub const HYPERGRAPH_MAGIC: &[u8; 8] = b"SSDLHGR1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Median of all pairwise Euclidean distances.
    MedianPairwise,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypergraphConfig {
    pub k_neighbors: usize,
    pub bandwidth: Bandwidth,
    pub initial_edge_weight: f64,
    pub execution: Execution,
}

impl Default for HypergraphConfig {
    fn default() -> Self {
        HypergraphConfig {
            k_neighbors: 10,
            bandwidth: Bandwidth::MedianPairwise,
            initial_edge_weight: 1.0,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypergraph {
    incidence: DMatrix<f64>,
    edge_weights: DVector<f64>,
    vertex_degrees: DVector<f64>,
    edge_degrees: DVector<f64>,
    centroids: Vec<usize>,
    bandwidth: f64,
}

impl Hypergraph {
    /// Assembles a hypergraph from an explicit incidence matrix and weights.
    /// Degrees are computed here; zero degrees are reported by
    /// [`degree_matrices`] and by the regularizers, not by this constructor.
    pub fn from_parts(
        incidence: DMatrix<f64>,
        edge_weights: DVector<f64>,
        centroids: Vec<usize>,
    ) -> Result<Self> {
        if edge_weights.len() != incidence.ncols() {
            return Err(SsdlError::mismatch(
                "hyperedge weights",
                incidence.ncols(),
                edge_weights.len(),
            ));
        }
        if !centroids.is_empty() && centroids.len() != incidence.ncols() {
            return Err(SsdlError::mismatch(
                "hyperedge centroids",
                incidence.ncols(),
                centroids.len(),
            ));
        }
        if incidence.iter().any(|&h| !(0.0..=1.0).contains(&h)) {
            return Err(SsdlError::InvalidInput(
                "incidence entries must lie in [0, 1]".into(),
            ));
        }
        if edge_weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(SsdlError::InvalidInput(
                "hyperedge weights must be positive".into(),
            ));
        }
        let (vertex_degrees, edge_degrees) = compute_degrees(&incidence, &edge_weights);
        Ok(Hypergraph {
            incidence,
            edge_weights,
            vertex_degrees,
            edge_degrees,
            centroids,
            bandwidth: f64::NAN,
        })
    }

    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.incidence
    }

    pub fn edge_weights(&self) -> &DVector<f64> {
        &self.edge_weights
    }

    pub fn vertex_degrees(&self) -> &DVector<f64> {
        &self.vertex_degrees
    }

    pub fn edge_degrees(&self) -> &DVector<f64> {
        &self.edge_degrees
    }

    pub fn centroids(&self) -> &[usize] {
        &self.centroids
    }

    /// Kernel bandwidth used for the incidence weights; NaN when the
    /// hypergraph was assembled by hand.
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn n_vertices(&self) -> usize {
        self.incidence.nrows()
    }

    pub fn n_edges(&self) -> usize {
        self.incidence.ncols()
    }

    /// Copy with every hyperedge weight multiplied by `c`.
    pub fn with_scaled_weights(&self, c: f64) -> Result<Hypergraph> {
        Hypergraph::from_parts(
            self.incidence.clone(),
            &self.edge_weights * c,
            self.centroids.clone(),
        )
    }

    pub fn write_incidence_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let ids: Vec<String> = (0..self.n_edges()).map(|e| format!("e{e}")).collect();
        write_matrix_csv(w, &self.incidence, &ids)
    }

    pub fn write_incidence_binary<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write_matrix_binary(w, HYPERGRAPH_MAGIC, &self.incidence)
    }
}

/// `d(v) = sum_e W(e) H(v,e)` and `delta(e) = sum_v H(v,e)`.
fn compute_degrees(h: &DMatrix<f64>, w: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let vertex = h * w;
    let edge = DVector::from_iterator(h.ncols(), h.column_iter().map(|c| c.sum()));
    (vertex, edge)
}

/// Diagonals of `D_v` and `D_e`, recomputed from `H` and `W`.
pub fn degree_matrices(h: &Hypergraph) -> Result<(DVector<f64>, DVector<f64>)> {
    let (dv, de) = compute_degrees(&h.incidence, &h.edge_weights);
    if let Some(e) = de.iter().position(|&d| d <= 0.0) {
        return Err(SsdlError::ZeroDegree {
            what: "hyperedge",
            index: e,
        });
    }
    if let Some(v) = dv.iter().position(|&d| d <= 0.0) {
        return Err(SsdlError::ZeroDegree {
            what: "vertex",
            index: v,
        });
    }
    Ok((dv, de))
}

fn pairwise_distances(x: &DMatrix<f64>, exec: Execution) -> DMatrix<f64> {
    let n = x.ncols();
    let rows = map_indexed(exec, n, |i| {
        let ci = x.column(i);
        (0..n).map(|j| (ci - x.column(j)).norm()).collect::<Vec<f64>>()
    });
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn build_hypergraph(x: &FeatureMatrix, cfg: &HypergraphConfig) -> Result<Hypergraph> {
    let n = x.n_samples();
    let k = cfg.k_neighbors;
    if k < 1 || k >= n {
        return Err(SsdlError::InvalidInput(format!(
            "k_neighbors must be in [1, {}), got {k}",
            n
        )));
    }
    if !(cfg.initial_edge_weight > 0.0 && cfg.initial_edge_weight.is_finite()) {
        return Err(SsdlError::InvalidInput(
            "initial_edge_weight must be positive".into(),
        ));
    }
    let dist = pairwise_distances(x.data(), cfg.execution);
    let sigma = match cfg.bandwidth {
        Bandwidth::Fixed(s) if s > 0.0 && s.is_finite() => s,
        Bandwidth::Fixed(s) => {
            return Err(SsdlError::InvalidInput(format!(
                "fixed bandwidth must be positive, got {s}"
            )))
        }
        Bandwidth::MedianPairwise => {
            let mut upper = Vec::with_capacity(n * (n - 1) / 2);
            for j in 0..n {
                for i in 0..j {
                    upper.push(dist[(i, j)]);
                }
            }
            let m = median(upper);
            if m <= 0.0 {
                return Err(SsdlError::DegenerateBandwidth);
            }
            m
        }
    };

    // Members of hyperedge c: c itself, then its k nearest other samples
    // (ties by lower index).
    let columns = map_indexed(cfg.execution, n, |c| {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != c).collect();
        order.sort_by(|&a, &b| {
            dist[(a, c)]
                .partial_cmp(&dist[(b, c)])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut col = vec![0.0; n];
        col[c] = 1.0;
        for &v in order.iter().take(k) {
            let d = dist[(v, c)];
            col[v] = (-(d * d) / (sigma * sigma)).exp();
        }
        col
    });
    let mut incidence = DMatrix::zeros(n, n);
    for (c, col) in columns.iter().enumerate() {
        let members = col.iter().filter(|&&h| h > 0.0).count();
        if members != k + 1 {
            return Err(SsdlError::Numerical(format!(
                "incidence underflow in hyperedge {c}: {members} of {} members nonzero; increase the bandwidth",
                k + 1
            )));
        }
        incidence.set_column(c, &DVector::from_column_slice(col));
    }
    let weights = DVector::from_element(n, cfg.initial_edge_weight);
    let mut h = Hypergraph::from_parts(incidence, weights, (0..n).collect())?;
    h.bandwidth = sigma;
    Ok(h)
}
