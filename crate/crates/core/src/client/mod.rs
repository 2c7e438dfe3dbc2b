//! One federated participant holding a single view.

pub mod assign;
pub mod loss;
pub mod model;
mod silhouette;

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use assign::{argmax_rows, kl_divergence, soft_assign, target_distribution};
pub use loss::{Bandwidth, ClusterTarget, LatentBandwidth, LossBreakdown, ObjectiveInputs};
pub use model::{gcn_forward, Ablation, Architecture, ClientModel};
pub use silhouette::silhouette;

use crate::data::ViewDataset;
use crate::error::{Error, Result};
use crate::graph::{
    binarize_rows, median_bandwidth, migrate_global_structure, normalize_propagation, rbf_similarity,
    AdjacencyGraph,
};
use crate::server::kmeans::kmeans_restarts;
use crate::tensor::{Adam, AdamConfig, Matrix, Tape};

/// Training knobs shared by all clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub k_neighbors: usize,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub optimizer: AdamConfig,
    pub bandwidth: Bandwidth,
    /// Seeded k-means runs for the round-1 centers; the lowest inertia wins.
    pub kmeans_restarts: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            k_neighbors: 10,
            epochs: 100,
            pretrain_epochs: 50,
            gamma1: 1.0,
            gamma2: 0.1,
            // At 1e-3 the round loss oscillates on small blobs.
            optimizer: AdamConfig {
                lr: 3e-4,
                ..AdamConfig::default()
            },
            bandwidth: Bandwidth::Median,
            kmeans_restarts: 10,
        }
    }
}

/// What the server hands a client at the start of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundInputs {
    pub round: usize,
    pub fused: AdjacencyGraph,
    /// Pseudo-labels; absent before the first global clustering.
    pub pseudo_labels: Option<Matrix>,
    /// Global centers in this client's feature scale.
    pub centers: Option<Matrix>,
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub features: Matrix,
    pub losses: Vec<f64>,
}

/// High-level features and silhouettes uploaded after a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientRoundOutput {
    pub features: Matrix,
    pub silhouettes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientRoundResult {
    pub output: ClientRoundOutput,
    pub trace: Vec<LossBreakdown>,
    pub reconstruction: Matrix,
    /// Local hard assignment collapsed to one cluster, so silhouettes were
    /// reported as zero.
    pub degenerate: bool,
}

/// A client: private view data, its model and round-to-round state.
#[derive(Debug, Clone)]
pub struct Client {
    id: usize,
    model: ClientModel,
    x: Matrix,
    missing: BTreeSet<usize>,
    complete: Vec<bool>,
    settings: TrainSettings,
    view_bandwidth: f64,
    reconstructed: bool,
    seed: u64,
}

impl Client {
    pub fn new(
        id: usize,
        view: &ViewDataset,
        clusters: usize,
        arch: Architecture,
        ablation: Ablation,
        settings: TrainSettings,
        seed: u64,
    ) -> Result<Self> {
        let n = view.x.rows();
        if settings.k_neighbors == 0 || settings.k_neighbors >= n {
            return Err(Error::param(format!(
                "k_neighbors = {} must lie in 1..{n}",
                settings.k_neighbors
            )));
        }
        let complete = view.present.clone();
        let present: Vec<usize> = (0..n).filter(|&i| complete[i]).collect();
        if present.is_empty() {
            return Err(Error::DegenerateInput(format!("view {} has no present samples", view.view)));
        }
        let missing = (0..n).filter(|&i| !complete[i]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = ClientModel::new(&mut rng, view.x.cols(), clusters, arch, ablation)?;
        Ok(Self {
            id,
            model,
            view_bandwidth: median_bandwidth(&view.x, &present),
            x: view.x.clone(),
            missing,
            complete,
            settings,
            reconstructed: false,
            seed,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn model(&self) -> &ClientModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut ClientModel {
        &mut self.model
    }

    pub fn data(&self) -> &Matrix {
        &self.x
    }

    pub fn missing(&self) -> &BTreeSet<usize> {
        &self.missing
    }

    pub fn complete_mask(&self) -> &[bool] {
        &self.complete
    }

    pub fn settings(&self) -> &TrainSettings {
        &self.settings
    }

    pub fn settings_mut(&mut self) -> &mut TrainSettings {
        &mut self.settings
    }

    /// kNN graph of the current data.
    ///
    /// Until missing rows have been reconstructed they are zero vectors, so
    /// they are kept isolated: their rows are empty and no complete sample
    /// picks them as a neighbor.
    pub fn local_graph(&self) -> Result<AdjacencyGraph> {
        let sim = rbf_similarity(&self.x, self.view_bandwidth)?;
        if self.reconstructed || self.missing.is_empty() {
            return binarize_rows(sim.values(), self.settings.k_neighbors);
        }
        let mut values = sim.values().clone();
        let n = values.rows();
        for i in 0..n {
            for j in 0..n {
                if !self.complete[j] {
                    values.set(i, j, f64::NEG_INFINITY);
                }
            }
        }
        let candidates = self.complete.iter().filter(|c| **c).count();
        let k = self.settings.k_neighbors.min(candidates.saturating_sub(1)).max(1);
        let mut g = binarize_rows(&values, k)?;
        let empty = vec![false; n];
        for &i in &self.missing {
            g.set_row(i, &empty);
        }
        if candidates == 1 {
            // The lone complete sample has no genuine neighbor.
            let only = (0..n).find(|&i| self.complete[i]).expect("one complete");
            g.set_row(only, &empty);
        }
        Ok(g)
    }

    /// Local graph for training: rebuilt from current data, then either
    /// migrated from the fused graph or left with empty missing rows.
    pub fn training_graph(&self, fused: &AdjacencyGraph) -> Result<AdjacencyGraph> {
        let local = self.local_graph()?;
        if self.model.ablation().migrates() {
            migrate_global_structure(&local, fused, &self.missing)
        } else {
            let mut g = local;
            let empty = vec![false; g.n()];
            for &i in &self.missing {
                g.set_row(i, &empty);
            }
            Ok(g)
        }
    }

    fn abort(&self, round: usize, detail: impl Into<String>, last: Option<&LossBreakdown>) -> Error {
        Error::TrainingAborted {
            round,
            client: self.id,
            detail: detail.into(),
            losses: last.map_or_else(|| "none".into(), |b| b.to_string()),
        }
    }

    /// Optimize the local head alone against the pre-migration graph and
    /// return its final output.
    /// Pre-training fusion weights: 1 for observed rows, 0 for zero-filled ones.
    pub fn presence_weights(&self) -> Vec<f64> {
        self.complete.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect()
    }

    /// Train the local head on its graph loss alone. Returns the local
    /// features and the loss before each epoch's update.
    pub fn pretrain(&mut self) -> Result<Pretrained> {
        let graph = self.local_graph()?;
        let prop = normalize_propagation(&graph);
        let target = graph.to_matrix();
        let indices = self.model.local_head_params();
        let shapes = indices.iter().map(|&i| self.model.params()[i].shape());
        let mut opt = Adam::new(self.settings.optimizer, shapes);
        let k = self.settings.k_neighbors;
        let mut losses = Vec::with_capacity(self.settings.pretrain_epochs);

        for epoch in 0..self.settings.pretrain_epochs {
            let mut tape = Tape::new();
            let vars = self.model.register(&mut tape);
            let (loss, _) = loss::pretrain_objective(
                &self.model,
                &mut tape,
                &vars,
                &self.x,
                &prop,
                &target,
                k,
                self.settings.bandwidth,
            )?;
            let value = tape.scalar(loss);
            let last = LossBreakdown {
                graph: value,
                total: value,
                ..LossBreakdown::default()
            };
            if !value.is_finite() {
                return Err(self.abort(0, format!("pre-training loss non-finite at epoch {epoch}"), Some(&last)));
            }
            losses.push(value);
            let mut grads = tape.backward(loss)?;
            let g: Vec<Matrix> = indices.iter().map(|&i| grads.take(vars[i])).collect();
            let params = self.model.params_mut();
            let mut refs: Vec<&mut Matrix> = params
                .iter_mut()
                .enumerate()
                .filter(|(i, _)| indices.contains(i))
                .map(|(_, p)| p)
                .collect();
            opt.step(&mut refs, &g)
                .map_err(|e| self.abort(0, format!("pre-training epoch {epoch}: {e}"), Some(&last)))?;
        }

        let mut tape = Tape::new();
        let vars = self.model.register(&mut tape);
        let xv = tape.constant(self.x.clone());
        let pv = tape.constant(prop);
        let h = self.model.forward_local(&mut tape, &vars, xv, pv)?;
        Ok(Pretrained {
            features: tape.value(h).clone(),
            losses,
        })
    }

    /// One communication round of local training.
    pub fn train_round(&mut self, inputs: &RoundInputs) -> Result<ClientRoundResult> {
        let round = inputs.round;
        let n = self.x.rows();
        if inputs.fused.n() != n {
            return Err(Error::Protocol(format!(
                "fused graph has {} nodes, client holds {n} samples",
                inputs.fused.n()
            )));
        }
        let local = self.training_graph(&inputs.fused)?;
        let local_prop = normalize_propagation(&local);
        let local_graph = local.to_matrix();
        let fused_graph = inputs.fused.to_matrix();
        let global_prop = self
            .model
            .ablation()
            .has_global_head()
            .then(|| normalize_propagation(&inputs.fused));

        let base = ObjectiveInputs {
            x: &self.x,
            local_prop: &local_prop,
            global_prop: global_prop.as_ref(),
            local_graph: &local_graph,
            fused_graph: Some(&fused_graph),
            complete: &self.complete,
            target: ClusterTarget::None,
            gamma1: self.settings.gamma1,
            gamma2: self.settings.gamma2,
            bandwidth: LatentBandwidth::uniform(self.settings.bandwidth),
        };

        let mut opt = Adam::new(
            self.settings.optimizer,
            self.model.params().iter().map(Matrix::shape),
        );
        let mut trace = Vec::with_capacity(self.settings.epochs);

        match &inputs.centers {
            Some(u) => self.model.set_centers(u.clone())?,
            None => {
                if self.settings.epochs > 0 {
                    let warm = step(&mut self.model, &mut opt, &base)
                        .map_err(|e| self.wrap(round, e, None))?;
                    trace.push(warm);
                }
                let h = self.features(&self.x, &local_prop, global_prop.as_ref())?;
                let seed = self.seed ^ ((round as u64) << 32) ^ 0x9e37_79b9;
                let km = kmeans_restarts(&h, self.model.clusters(), seed, self.settings.kmeans_restarts)?;
                self.model.set_centers(km.centers)?;
            }
        }

        let target = match &inputs.pseudo_labels {
            Some(p) => {
                if p.shape() != (n, self.model.clusters()) {
                    return Err(Error::Protocol(format!(
                        "pseudo-labels have shape {:?}, expected ({n}, {})",
                        p.shape(),
                        self.model.clusters()
                    )));
                }
                ClusterTarget::Given(p)
            }
            None => ClusterTarget::SelfTraining,
        };
        let inputs_with_target = ObjectiveInputs { target, ..base };
        for _ in 0..self.settings.epochs {
            let b = step(&mut self.model, &mut opt, &inputs_with_target)
                .map_err(|e| self.wrap(round, e, trace.last()))?;
            trace.push(b);
        }

        // Replace missing rows with reconstructions, then score the
        // assignment on the features of the updated data.
        let reconstruction = {
            let mut tape = Tape::new();
            let vars = self.model.register(&mut tape);
            let xv = tape.constant(self.x.clone());
            let lp = tape.constant(local_prop.clone());
            let gp = global_prop.as_ref().map(|p| tape.constant(p.clone()));
            let f = self.model.forward(&mut tape, &vars, xv, lp, gp)?;
            tape.value(f.reconstruction).clone()
        };
        for &i in &self.missing {
            self.x.row_mut(i).copy_from_slice(reconstruction.row(i));
        }
        if !self.missing.is_empty() {
            self.reconstructed = true;
        }

        let features = self.features(&self.x, &local_prop, global_prop.as_ref())?;
        if !features.is_finite() {
            return Err(self.abort(round, "non-finite high-level features", trace.last()));
        }
        let q = soft_assign(&features, self.model.centers())?;
        let labels = argmax_rows(&q);
        let (silhouettes, degenerate) = match silhouette(&features, &labels) {
            Ok(w) => (w, false),
            Err(Error::DegenerateClustering(_)) => (vec![0.0; n], true),
            Err(e) => return Err(e),
        };

        Ok(ClientRoundResult {
            output: ClientRoundOutput {
                features,
                silhouettes,
            },
            trace,
            reconstruction,
            degenerate,
        })
    }

    fn features(&self, x: &Matrix, local_prop: &Matrix, global_prop: Option<&Matrix>) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = self.model.register(&mut tape);
        let xv = tape.constant(x.clone());
        let lp = tape.constant(local_prop.clone());
        let gp = global_prop.map(|p| tape.constant(p.clone()));
        let f = self.model.forward(&mut tape, &vars, xv, lp, gp)?;
        Ok(tape.value(f.high_level).clone())
    }

    fn wrap(&self, round: usize, e: Error, last: Option<&LossBreakdown>) -> Error {
        match e {
            Error::Numeric(msg) => self.abort(round, msg, last),
            other => other.in_client(round, self.id),
        }
    }
}

/// One full-batch optimizer step; returns the losses before the update.
fn step(model: &mut ClientModel, opt: &mut Adam, inputs: &ObjectiveInputs<'_>) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let obj = loss::client_objective(model, &mut tape, &vars, inputs)?;
    let b = obj.breakdown;
    if !b.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss ({b})")));
    }
    let mut grads = tape.backward(obj.total)?;
    let g: Vec<Matrix> = vars.iter().map(|&v| grads.take(v)).collect();
    let mut refs: Vec<&mut Matrix> = model.params_mut().iter_mut().collect();
    opt.step(&mut refs, &g)
        .map_err(|e| Error::Numeric(format!("{e} ({b})")))?;
    Ok(b)
}
