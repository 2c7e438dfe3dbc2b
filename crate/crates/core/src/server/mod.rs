//! Global aggregation: graph and feature fusion, global clustering and
//! pseudo-label generation.

pub mod kmeans;
pub mod message;

pub use crate::client::assign::target_distribution as pseudo_labels;
pub use kmeans::{kmeans, kmeans_restarts, KMeansResult};
pub use message::{Direction, Payload, RoundMessage, SessionHeader};

use crate::assignment::min_cost_assignment;
use crate::client::assign::{argmax_rows, soft_assign};
use crate::client::loss::Bandwidth;
use crate::error::{Error, Result};
use crate::graph::{fuse_graphs, rbf_similarity, AdjacencyGraph, LatentGraph};
use crate::tensor::Matrix;

const RATIO_FLOOR: f64 = -1.0 + 1e-6;

/// Transformed view weights `1 + ln(1 + r)` with `r = w̄ / Σ|w̄|`.
pub fn view_weights(means: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = means.iter().map(|w| w.abs()).sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateWeights(
            "every client reported zero mean silhouette".into(),
        ));
    }
    Ok(means
        .iter()
        .map(|w| 1.0 + (1.0 + (w / total).clamp(RATIO_FLOOR, 1.0)).ln())
        .collect())
}

/// Weighted column concatenation of client features. Returns the fused
/// features and the transformed weights.
pub fn fuse_features(features: &[Matrix], silhouettes: &[Vec<f64>]) -> Result<(Matrix, Vec<f64>)> {
    let first = features
        .first()
        .ok_or_else(|| Error::param("feature fusion needs at least one client"))?;
    if silhouettes.len() != features.len() {
        return Err(Error::param(format!(
            "{} feature blocks but {} silhouette vectors",
            features.len(),
            silhouettes.len()
        )));
    }
    let n = first.rows();
    for (m, (h, w)) in features.iter().zip(silhouettes).enumerate() {
        if h.rows() != n || w.len() != n {
            return Err(Error::param(format!(
                "client {m}: {} feature rows and {} silhouettes, expected {n}",
                h.rows(),
                w.len()
            )));
        }
    }
    let means: Vec<f64> = silhouettes
        .iter()
        .map(|w| w.iter().sum::<f64>() / n.max(1) as f64)
        .collect();
    let weights = view_weights(&means)?;
    let width: usize = features.iter().map(Matrix::cols).sum();
    let mut out = Matrix::zeros(n, width);
    for i in 0..n {
        let row = out.row_mut(i);
        let mut at = 0;
        for (h, w) in features.iter().zip(&weights) {
            for (dst, v) in row[at..at + h.cols()].iter_mut().zip(h.row(i)) {
                *dst = w * v;
            }
            at += h.cols();
        }
    }
    Ok((out, weights))
}

/// Student-t soft assignment of fused features to global centers.
pub fn global_soft(features: &Matrix, centers: &Matrix) -> Result<Matrix> {
    soft_assign(features, centers)
}

/// Row-wise argmax; ties go to the lowest cluster index.
pub fn assign_labels(p: &Matrix) -> Vec<usize> {
    argmax_rows(p)
}

/// Cut global centers into per-view blocks and undo the fusion scaling.
pub fn split_centers(centers: &Matrix, widths: &[usize], weights: &[f64]) -> Result<Vec<Matrix>> {
    if widths.iter().sum::<usize>() != centers.cols() {
        return Err(Error::param(format!(
            "block widths sum to {} but centers have {} columns",
            widths.iter().sum::<usize>(),
            centers.cols()
        )));
    }
    if widths.len() != weights.len() {
        return Err(Error::param("one weight per block is required"));
    }
    let mut at = 0;
    let mut out = Vec::with_capacity(widths.len());
    for (m, (&w, &s)) in widths.iter().zip(weights).enumerate() {
        if s == 0.0 {
            return Err(Error::DegenerateWeights(format!("view {m} has zero fusion weight")));
        }
        out.push(centers.col_block(at, at + w)?.scale(1.0 / s));
        at += w;
    }
    Ok(out)
}

/// Everything the server derives in one aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub round: u32,
    pub fused: AdjacencyGraph,
    pub features: Matrix,
    pub centers: Matrix,
    /// Column width of each client's block in `features` and `centers`.
    pub widths: Vec<usize>,
    pub pseudo_labels: Matrix,
    pub labels: Vec<usize>,
    pub silhouette_means: Vec<f64>,
    pub view_weights: Vec<f64>,
    pub inertia: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerConfig {
    pub clients: usize,
    pub samples: usize,
    pub clusters: usize,
    pub k_neighbors: usize,
    pub bandwidth: Bandwidth,
    /// Seeded k-means runs per round; the lowest inertia wins.
    pub kmeans_restarts: usize,
    pub seed: u64,
}

/// Holds only the fused graph, the previous centers and the round index
/// between aggregations.
#[derive(Debug, Clone)]
pub struct Server {
    config: ServerConfig,
    fused: Option<AdjacencyGraph>,
    prev_centers: Option<Matrix>,
    round: u32,
}

impl Server {
    pub fn new(config: ServerConfig) -> Result<Self> {
        if config.clients == 0 || config.clients > usize::from(u16::MAX) {
            return Err(Error::param(format!("unsupported client count {}", config.clients)));
        }
        if config.clusters < 2 || config.clusters > config.samples {
            return Err(Error::param(format!(
                "cannot form {} clusters over {} samples",
                config.clusters, config.samples
            )));
        }
        if config.k_neighbors == 0 || config.k_neighbors >= config.samples {
            return Err(Error::param(format!(
                "k_neighbors = {} must lie in 1..{}",
                config.k_neighbors, config.samples
            )));
        }
        Ok(Self {
            config,
            fused: None,
            prev_centers: None,
            round: 0,
        })
    }

    pub fn header(&self) -> SessionHeader {
        SessionHeader {
            samples: self.config.samples,
            clusters: self.config.clusters,
        }
    }

    pub fn fused(&self) -> Option<&AdjacencyGraph> {
        self.fused.as_ref()
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    /// Aggregate pre-training uploads and send the fused graph back. Clients
    /// have no silhouettes yet, so uploads carry plain per-sample weights
    /// (all ones, or presence flags).
    pub fn aggregate_pretrain(&mut self, uploads: &[RoundMessage]) -> Result<(GlobalState, Vec<RoundMessage>)> {
        let state = self.aggregate(uploads, 0)?;
        // Pre-training features live in a different space than later rounds.
        self.prev_centers = None;
        let out = (0..self.config.clients)
            .map(|c| RoundMessage {
                round: 0,
                client: c as u16,
                payload: Payload::GraphOnly {
                    fused: state.fused.clone(),
                },
            })
            .collect();
        Ok((state, out))
    }

    /// Aggregate one communication round and build each client's reply.
    pub fn aggregate_round(&mut self, uploads: &[RoundMessage]) -> Result<(GlobalState, Vec<RoundMessage>)> {
        let round = self.round + 1;
        let state = self.aggregate(uploads, round)?;
        let blocks = split_centers(&state.centers, &state.widths, &state.view_weights)?;
        let out = blocks
            .into_iter()
            .enumerate()
            .map(|(c, centers)| RoundMessage {
                round,
                client: c as u16,
                payload: Payload::Distribute {
                    fused: state.fused.clone(),
                    centers,
                    pseudo_labels: state.pseudo_labels.clone(),
                },
            })
            .collect();
        Ok((state, out))
    }

    fn aggregate(&mut self, uploads: &[RoundMessage], round: u32) -> Result<GlobalState> {
        let n = self.config.samples;
        let mut slots: Vec<Option<(&Matrix, &Vec<f64>)>> = vec![None; self.config.clients];
        for msg in uploads {
            let Payload::Upload { features, silhouettes } = &msg.payload else {
                return Err(Error::Protocol(format!("client {} sent a server-side payload", msg.client)));
            };
            if msg.round != round {
                return Err(Error::Protocol(format!(
                    "client {} sent round {}, server expects {round}",
                    msg.client, msg.round
                )));
            }
            let c = usize::from(msg.client);
            let slot = slots
                .get_mut(c)
                .ok_or_else(|| Error::Protocol(format!("unknown client {c}")))?;
            if slot.is_some() {
                return Err(Error::Protocol(format!("client {c} uploaded twice in round {round}")));
            }
            if features.rows() != n || silhouettes.len() != n {
                return Err(Error::Protocol(format!(
                    "client {c} uploaded {} rows, session has {n} samples",
                    features.rows()
                )));
            }
            *slot = Some((features, silhouettes));
        }
        let mut features = Vec::with_capacity(slots.len());
        let mut weights = Vec::with_capacity(slots.len());
        for (c, s) in slots.iter().enumerate() {
            let (h, w) = s.ok_or_else(|| Error::Protocol(format!("no upload from client {c} in round {round}")))?;
            features.push(h.clone());
            weights.push(w.clone());
        }

        let latents = features
            .iter()
            .map(|h| Ok(rbf_similarity(h, self.config.bandwidth.resolve(h))?.into_latent()))
            .collect::<Result<Vec<LatentGraph>>>()?;
        let fused = fuse_graphs(&latents, &weights, self.config.k_neighbors)?;

        let silhouette_means: Vec<f64> = weights.iter().map(|w| w.iter().sum::<f64>() / n as f64).collect();
        let (h, view_weights) = fuse_features(&features, &weights)?;
        let seed = self.config.seed ^ (u64::from(round) << 40) ^ 0x5eed;
        let km = kmeans_restarts(&h, self.config.clusters, seed, self.config.kmeans_restarts)?;
        let centers = match &self.prev_centers {
            Some(prev) if prev.shape() == km.centers.shape() => reanchor(&km.centers, prev),
            _ => km.centers,
        };
        let soft = global_soft(&h, &centers)?;
        let p = pseudo_labels(&soft)?;
        let labels = assign_labels(&p);

        self.fused = Some(fused.clone());
        self.prev_centers = Some(centers.clone());
        self.round = round;
        Ok(GlobalState {
            round,
            fused,
            widths: features.iter().map(Matrix::cols).collect(),
            features: h,
            centers,
            pseudo_labels: p,
            labels,
            silhouette_means,
            view_weights,
            inertia: km.inertia,
        })
    }
}

/// Reorder `centers` so row `j` is the one matched to `prev` row `j` under
/// minimum total squared distance.
pub fn reanchor(centers: &Matrix, prev: &Matrix) -> Matrix {
    let k = centers.rows();
    let cost: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| centers.row_sq_dist(i, prev, j)).collect())
        .collect();
    let matched = min_cost_assignment(&cost);
    let mut order = vec![0; k];
    for (i, j) in matched.into_iter().enumerate() {
        order[j.expect("square cost matrix")] = i;
    }
    centers.select_rows(&order)
}
