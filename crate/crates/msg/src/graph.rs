//! Graph dataset container and the linear graph-convolution transform that
//! turns spike trains into incoming current, with its closed-form weight
//! gradient.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{MsgError, Result};
use crate::spiking::SpikeTrain;

/// Compressed sparse row matrix with deterministic iteration order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl SparseMatrix {
    /// Build from (row, col, value) triples; duplicates within a row sum.
    pub fn from_triples(nrows: usize, ncols: usize, triples: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(r, c, v) in triples {
            if r >= nrows || c >= ncols {
                return Err(MsgError::Ingest(format!(
                    "sparse entry ({r}, {c}) out of bounds for {nrows}x{ncols}"
                )));
            }
            rows[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for row in &mut rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    data.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Ok(SparseMatrix { nrows, ncols, indptr, indices, data })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.data[span].iter().copied())
    }

    /// `self * dense`, row-major accumulation in index order.
    pub fn mul_dense(&self, dense: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if dense.nrows() != self.ncols {
            return Err(MsgError::Dimension(format!(
                "sparse-dense product: {}x{} times {}x{}",
                self.nrows,
                self.ncols,
                dense.nrows(),
                dense.ncols()
            )));
        }
        let mut out = Array2::zeros((self.nrows, dense.ncols()));
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                let src = dense.row(c);
                let mut dst = out.row_mut(r);
                dst.scaled_add(v, &src);
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.nrows, self.ncols));
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                out[[r, c]] += v;
            }
        }
        out
    }
}

/// Symmetric GCN normalization with self-loops: `D^{-1/2} (A + I) D^{-1/2}`
/// where `D` is the degree matrix of `A + I`. Multi-edges collapse.
pub fn normalize_adjacency(num_nodes: usize, edges: &[(usize, usize)]) -> Result<SparseMatrix> {
    let mut pairs = BTreeSet::new();
    for i in 0..num_nodes {
        pairs.insert((i, i));
    }
    for &(a, b) in edges {
        if a >= num_nodes || b >= num_nodes {
            return Err(MsgError::Ingest(format!(
                "edge ({a}, {b}) references a node outside 0..{num_nodes}"
            )));
        }
        pairs.insert((a, b));
        pairs.insert((b, a));
    }
    let mut degree = vec![0.0f64; num_nodes];
    for &(a, _) in &pairs {
        degree[a] += 1.0;
    }
    let triples: Vec<(usize, usize, f64)> = pairs
        .iter()
        .map(|&(a, b)| (a, b, 1.0 / (degree[a] * degree[b]).sqrt()))
        .collect();
    SparseMatrix::from_triples(num_nodes, num_nodes, &triples)
}

#[derive(Debug, Clone)]
pub struct GraphDataset {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub features: Array2<f64>,
    pub labels: Option<Array1<usize>>,
    pub norm_adj: SparseMatrix,
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
}

impl GraphDataset {
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        features: Array2<f64>,
        labels: Option<Array1<usize>>,
    ) -> Result<Self> {
        if features.nrows() != num_nodes {
            return Err(MsgError::Ingest(format!(
                "feature matrix has {} rows for {} nodes",
                features.nrows(),
                num_nodes
            )));
        }
        if let Some(l) = &labels {
            if l.len() != num_nodes {
                return Err(MsgError::Ingest(format!(
                    "label vector has {} entries for {} nodes",
                    l.len(),
                    num_nodes
                )));
            }
        }
        let norm_adj = normalize_adjacency(num_nodes, &edges)?;
        Ok(GraphDataset {
            num_nodes,
            edges,
            features,
            labels,
            norm_adj,
            train_mask: vec![false; num_nodes],
            val_mask: vec![false; num_nodes],
            test_mask: vec![false; num_nodes],
        })
    }

    pub fn num_classes(&self) -> usize {
        self.labels.as_ref().map_or(0, |l| l.iter().max().map_or(0, |m| m + 1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub values: Array2<f64>,
    pub layer_index: usize,
}

/// One timestep of graph convolution: `A_hat * S[t] * W`.
pub fn gcn_forward(adj: &SparseMatrix, spikes_t: ArrayView2<'_, f64>, w: &WeightMatrix) -> Result<Array2<f64>> {
    if spikes_t.ncols() != w.values.nrows() {
        return Err(MsgError::Dimension(format!(
            "gcn_forward layer {}: spike width {} vs weight fan-in {}",
            w.layer_index,
            spikes_t.ncols(),
            w.values.nrows()
        )));
    }
    Ok(adj.mul_dense(spikes_t)?.dot(&w.values))
}

/// Gradient of `W -> avg_pool_t(A_hat * S[t] * W)` contracted with `upstream`:
/// `(1/T) * sum_t (A_hat S[t])^T upstream`. Spikes are constants here.
pub fn gcn_weight_grad(
    adj: &SparseMatrix,
    spike_trains: &[SpikeTrain],
    upstream: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    // spike_trains is per node; restack to per-timestep node matrices
    let num_nodes = spike_trains.len();
    if num_nodes == 0 {
        return Err(MsgError::Dimension("gcn_weight_grad: empty spike train list".into()));
    }
    if upstream.nrows() != num_nodes {
        return Err(MsgError::Dimension(format!(
            "gcn_weight_grad: upstream has {} rows for {} nodes",
            upstream.nrows(),
            num_nodes
        )));
    }
    let t_steps = spike_trains[0].time_steps();
    let width = spike_trains[0].bits.ncols();
    let mut grad = Array2::zeros((width, upstream.ncols()));
    let mut s_t = Array2::zeros((num_nodes, width));
    for t in 0..t_steps {
        for (i, train) in spike_trains.iter().enumerate() {
            s_t.row_mut(i).assign(&train.bits.row(t));
        }
        let agg = adj.mul_dense(s_t.view())?;
        grad += &agg.t().dot(&upstream);
    }
    Ok(grad / t_steps as f64)
}

/// Two-block stochastic block model with Gaussian features whose means differ
/// by block; used by the desk-scale training checks.
pub fn sbm_two_block<R: Rng + ?Sized>(
    num_nodes: usize,
    p_in: f64,
    p_out: f64,
    feat_dim: usize,
    mean_shift: f64,
    rng: &mut R,
) -> (Vec<(usize, usize)>, Array2<f64>, Array1<usize>) {
    let labels = Array1::from_shape_fn(num_nodes, |i| i % 2);
    let mut edges = Vec::new();
    for i in 0..num_nodes {
        for j in (i + 1)..num_nodes {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.gen_range(0.0..1.0) < p {
                edges.push((i, j));
            }
        }
    }
    let features = Array2::from_shape_fn((num_nodes, feat_dim), |(i, _)| {
        let mu = if labels[i] == 0 { mean_shift } else { -mean_shift };
        mu + rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    (edges, features, labels)
}

/// Uniform sample of `count` distinct non-edges (unordered, no self-loops).
pub fn sample_non_edges<R: Rng + ?Sized>(
    num_nodes: usize,
    edges: &[(usize, usize)],
    count: usize,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let existing: BTreeSet<(usize, usize)> = edges
        .iter()
        .map(|&(a, b)| if a < b { (a, b) } else { (b, a) })
        .collect();
    let mut out = BTreeSet::new();
    let max_pairs = num_nodes * (num_nodes - 1) / 2;
    let budget = count.min(max_pairs.saturating_sub(existing.len()));
    while out.len() < budget {
        let a = rng.gen_range(0..num_nodes);
        let b = rng.gen_range(0..num_nodes);
        if a == b {
            continue;
        }
        let pair = if a < b { (a, b) } else { (b, a) };
        if !existing.contains(&pair) {
            out.insert(pair);
        }
    }
    let mut v: Vec<(usize, usize)> = out.into_iter().collect();
    v.shuffle(rng);
    v
}
