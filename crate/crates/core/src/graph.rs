//! Similarity and adjacency graphs: RBF kernels, row-wise top-k selection,
//! degree normalization, missing-row migration and silhouette-weighted fusion.
//!
//! Every top-k selection in this module breaks ties toward the smallest
//! column index, so graphs are identical across runs.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::tensor::{median_pair, rbf_kernel, Matrix};

/// Dense RBF similarity matrix with the bandwidth used to build it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    values: Matrix,
    bandwidth: f64,
}

impl SimilarityMatrix {
    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn into_latent(self) -> LatentGraph {
        LatentGraph(self.values)
    }
}

/// Real-valued graph in `[0, 1]` built from learned features.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGraph(Matrix);

impl LatentGraph {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() != values.cols() {
            return Err(Error::param(format!(
                "latent graph must be square, got {:?}",
                values.shape()
            )));
        }
        Ok(Self(values))
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn values(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// Binary `n×n` adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyGraph {
    n: usize,
    k: usize,
    edges: Vec<bool>,
}

impl AdjacencyGraph {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            k: 0,
            edges: vec![false; n * n],
        }
    }

    /// Build from an explicit 0/1 matrix.
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::param(format!("adjacency must be square, got {:?}", m.shape())));
        }
        let mut edges = Vec::with_capacity(m.len());
        for &v in m.as_slice() {
            if v == 0.0 {
                edges.push(false);
            } else if v == 1.0 {
                edges.push(true);
            } else {
                return Err(Error::param(format!("adjacency entry {v} is not binary")));
            }
        }
        let n = m.rows();
        let k = if n == 0 {
            0
        } else {
            edges[..n].iter().filter(|e| **e).count()
        };
        Ok(Self { n, k, edges })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Neighbors per row requested at construction.
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.edges[i * self.n..(i + 1) * self.n]
    }

    pub fn set_row(&mut self, i: usize, row: &[bool]) {
        self.edges[i * self.n..(i + 1) * self.n].copy_from_slice(row);
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row(i).iter().filter(|e| **e).count()
    }

    pub fn to_matrix(&self) -> Matrix {
        let data = self.edges.iter().map(|&e| if e { 1.0 } else { 0.0 }).collect();
        Matrix::from_vec(self.n, self.n, data).expect("square buffer")
    }
}

/// `S_ij = exp(−‖x_i − x_j‖² / t)`.
pub fn rbf_similarity(x: &Matrix, t: f64) -> Result<SimilarityMatrix> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::param(format!("rbf bandwidth must be positive, got {t}")));
    }
    if !x.is_finite() {
        return Err(Error::param("rbf input contains non-finite values"));
    }
    Ok(SimilarityMatrix {
        values: rbf_kernel(x, t),
        bandwidth: t,
    })
}

/// Median of pairwise squared distances among the given rows; falls back to
/// 1 when the rows are degenerate (fewer than two, or all identical).
pub fn median_bandwidth(x: &Matrix, rows: &[usize]) -> f64 {
    median_pair(x, rows).map_or(1.0, |p| p.2)
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::param(format!("k = {k} must lie in 1..={n}")));
    }
    Ok(())
}

/// Indices of the `k` largest entries of `row`, ignoring `skip`; ties go to
/// the smaller index.
pub(crate) fn top_k_indices(row: &[f64], k: usize, skip: Option<usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).filter(|&j| Some(j) != skip).collect();
    // Larger value first, lower column on ties: a strict total order, so the
    // selected set is unique.
    let order = |a: &usize, b: &usize| row[*b].total_cmp(&row[*a]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k, order);
        idx.truncate(k);
    }
    idx.sort_unstable_by(order);
    idx
}

/// Per row, the `k` largest entries become 1 and the rest 0.
///
/// Selection excludes the diagonal while at least `k` off-diagonal columns
/// remain; with `k = n` every entry is kept.
pub fn knn_binarize(s: &SimilarityMatrix, k: usize) -> Result<AdjacencyGraph> {
    binarize_rows(&s.values, k)
}

/// Row-wise top-k binarization of an arbitrary square matrix (the `f_k`
/// operator applied on the server).
pub fn binarize_rows(m: &Matrix, k: usize) -> Result<AdjacencyGraph> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::param(format!("expected square matrix, got {:?}", m.shape())));
    }
    check_k(k, n)?;
    let mut g = AdjacencyGraph::empty(n);
    g.k = k;
    for i in 0..n {
        let skip = if k < n { Some(i) } else { None };
        for j in top_k_indices(m.row(i), k, skip) {
            g.edges[i * n + j] = true;
        }
    }
    Ok(g)
}

/// Keep the `k` largest values of each row, zero the rest.
pub fn topk_mask(g: &LatentGraph, k: usize) -> Result<LatentGraph> {
    let keep = topk_keep_mask(g.values(), k)?;
    let mut out = g.0.clone();
    for (v, keep) in out.as_mut_slice().iter_mut().zip(keep) {
        if !keep {
            *v = 0.0;
        }
    }
    Ok(LatentGraph(out))
}

/// Boolean keep-mask (row-major) behind [`topk_mask`].
pub fn topk_keep_mask(m: &Matrix, k: usize) -> Result<Vec<bool>> {
    let n = m.cols();
    check_k(k, n)?;
    let mut keep = vec![false; m.len()];
    for i in 0..m.rows() {
        for j in top_k_indices(m.row(i), k, None) {
            keep[i * n + j] = true;
        }
    }
    Ok(keep)
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃_ii = Σ_j (A + I)_ij`.
pub fn normalize_propagation(a: &AdjacencyGraph) -> Matrix {
    let n = a.n();
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / ((a.degree(i) + 1) as f64).sqrt()).collect();
    Matrix::from_fn(n, n, |i, j| {
        let w = f64::from(u8::from(a.has_edge(i, j))) + if i == j { 1.0 } else { 0.0 };
        w * inv_sqrt[i] * inv_sqrt[j]
    })
}

/// Replace the rows of `missing` samples in `local` with the fused graph's rows.
pub fn migrate_global_structure(
    local: &AdjacencyGraph,
    fused: &AdjacencyGraph,
    missing: &BTreeSet<usize>,
) -> Result<AdjacencyGraph> {
    if local.n() != fused.n() {
        return Err(Error::param(format!(
            "local graph has {} nodes but fused graph has {}",
            local.n(),
            fused.n()
        )));
    }
    if let Some(&bad) = missing.iter().find(|&&i| i >= local.n()) {
        return Err(Error::param(format!(
            "missing index {bad} out of range for {} nodes",
            local.n()
        )));
    }
    let mut out = local.clone();
    for &i in missing {
        out.set_row(i, fused.row(i));
    }
    Ok(out)
}

/// `f_k((1/M) Σ_m W^m ⊙ Â^m)` where `W^m_ij = w^m_i`.
pub fn fuse_graphs(latents: &[LatentGraph], weights: &[Vec<f64>], k: usize) -> Result<AdjacencyGraph> {
    let avg = weighted_latent_mean(latents, weights)?;
    binarize_rows(&avg, k)
}

/// The pre-binarization average used by [`fuse_graphs`].
pub fn weighted_latent_mean(latents: &[LatentGraph], weights: &[Vec<f64>]) -> Result<Matrix> {
    let first = latents
        .first()
        .ok_or_else(|| Error::param("graph fusion needs at least one client"))?;
    if weights.len() != latents.len() {
        return Err(Error::param(format!(
            "{} latent graphs but {} weight vectors",
            latents.len(),
            weights.len()
        )));
    }
    let n = first.n();
    let mut acc = Matrix::zeros(n, n);
    for (m, (g, w)) in latents.iter().zip(weights).enumerate() {
        if g.n() != n || w.len() != n {
            return Err(Error::param(format!(
                "client {m}: graph has {} nodes and {} weights, expected {n}",
                g.n(),
                w.len()
            )));
        }
        for i in 0..n {
            let wi = w[i];
            for (dst, v) in acc.row_mut(i).iter_mut().zip(g.values().row(i)) {
                *dst += wi * v;
            }
        }
    }
    Ok(acc.scale(1.0 / latents.len() as f64))
}
