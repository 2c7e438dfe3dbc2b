//! Client objective terms recorded on a tape.

use serde::{Deserialize, Serialize};

use crate::client::model::{ClientModel, ForwardVars};
use crate::client::assign::target_distribution;
use crate::error::{Error, Result};
use crate::graph::{median_bandwidth, topk_keep_mask};
use crate::tensor::{Matrix, Tape, Var};

/// How the RBF bandwidth of a latent graph is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bandwidth {
    /// Median pairwise squared distance of the current features. Inside a
    /// loss the median is differentiated through like any other value.
    Median,
    Fixed(f64),
}

impl Bandwidth {
    pub fn resolve(self, features: &Matrix) -> f64 {
        match self {
            Bandwidth::Fixed(t) => t,
            Bandwidth::Median => {
                let all: Vec<usize> = (0..features.rows()).collect();
                median_bandwidth(features, &all)
            }
        }
    }
}

/// Bandwidths of the three latent graphs in the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentBandwidth {
    pub global: Bandwidth,
    pub local: Bandwidth,
    pub high_level: Bandwidth,
}

impl LatentBandwidth {
    pub fn uniform(b: Bandwidth) -> Self {
        Self {
            global: b,
            local: b,
            high_level: b,
        }
    }
}

/// Per-epoch loss values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub clustering: f64,
    pub graph: f64,
    pub reconstruction: f64,
    pub total: f64,
}

impl std::fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "L_c={:.6e} L_g={:.6e} L_r={:.6e} L={:.6e}",
            self.clustering, self.graph, self.reconstruction, self.total
        )
    }
}

/// Latent graph of `features` on the tape.
pub fn latent_graph(tape: &mut Tape, features: Var, bandwidth: Bandwidth) -> Result<Var> {
    match bandwidth {
        Bandwidth::Median => Ok(tape.rbf_median(features)),
        Bandwidth::Fixed(t) => tape.rbf(features, t),
    }
}

/// `mean((rbf(features, t) − target)²)`.
pub fn graph_reconstruction(tape: &mut Tape, features: Var, target: Var, bandwidth: Bandwidth) -> Result<Var> {
    let latent = latent_graph(tape, features, bandwidth)?;
    let diff = tape.sub(latent, target)?;
    let sq = tape.square(diff);
    Ok(tape.mean(sq))
}

/// Underlying-feature graph loss: global head against the fused graph plus
/// local head against the (migrated) local graph. Either head may be absent.
pub fn loss_underlying(
    tape: &mut Tape,
    global: Option<(Var, Var, Bandwidth)>,
    local: Option<(Var, Var, Bandwidth)>,
) -> Result<Option<Var>> {
    let g = global
        .map(|(h, a, t)| graph_reconstruction(tape, h, a, t))
        .transpose()?;
    let l = local
        .map(|(h, a, t)| graph_reconstruction(tape, h, a, t))
        .transpose()?;
    Ok(match (g, l) {
        (Some(g), Some(l)) => Some(tape.add(g, l)?),
        (one, None) | (None, one) => one,
    })
}

/// Consistent-graph loss of the high-level features against the fused graph.
pub fn loss_consistent(tape: &mut Tape, high_level: Var, fused: Var, bandwidth: Bandwidth) -> Result<Var> {
    graph_reconstruction(tape, high_level, fused, bandwidth)
}

/// Mean squared reconstruction error over the rows flagged complete.
pub fn loss_content(tape: &mut Tape, x: Var, reconstruction: Var, complete: &[bool]) -> Result<Var> {
    let (n, d) = tape.value(x).shape();
    if complete.len() != n {
        return Err(Error::param(format!("{} completeness flags for {n} rows", complete.len())));
    }
    let count = complete.iter().filter(|c| **c).count();
    if count == 0 {
        return Err(Error::DegenerateInput(
            "content reconstruction needs at least one complete sample".into(),
        ));
    }
    let mask = Matrix::from_fn(n, d, |i, _| if complete[i] { 1.0 } else { 0.0 });
    let mask = tape.constant(mask);
    let diff = tape.sub(x, reconstruction)?;
    let masked = tape.mul(diff, mask)?;
    let sq = tape.square(masked);
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / (count * d) as f64))
}

/// Student-t soft assignment on the tape.
pub fn soft_assign(tape: &mut Tape, features: Var, centers: Var) -> Result<Var> {
    let d = tape.pairwise_sq_dist(features, centers)?;
    let k = tape.recip1p(d);
    tape.row_normalize(k)
}

/// `Σ_ij p_ij ln(p_ij / q_ij)` for a constant target `p`.
pub fn loss_kl(tape: &mut Tape, p: &Matrix, q: Var) -> Result<Var> {
    let qm = tape.value(q);
    p.ensure_same_shape(qm, "loss_kl")?;
    let mut entropy_term = 0.0;
    for (&pv, &qv) in p.as_slice().iter().zip(qm.as_slice()) {
        if pv > 0.0 {
            if !(qv > 0.0) {
                return Err(Error::Numeric(format!("q = {qv} where p = {pv}")));
            }
            entropy_term += pv * pv.ln();
        }
    }
    let log_q = tape.ln(q)?;
    let pv = tape.constant(p.clone());
    let cross = tape.mul(pv, log_q)?;
    let cross = tape.sum(cross);
    let neg = tape.scale(cross, -1.0);
    let c = tape.constant(Matrix::scalar(entropy_term));
    tape.add(neg, c)
}

/// Supervision for the clustering layer.
#[derive(Debug, Clone, Copy)]
pub enum ClusterTarget<'a> {
    /// Server pseudo-labels.
    Given(&'a Matrix),
    /// Sharpened own assignment, recomputed from the current (detached) `Q`.
    SelfTraining,
    /// No clustering term (feature-only warm-up).
    None,
}

/// Graph, content and target inputs of the client objective.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveInputs<'a> {
    pub x: &'a Matrix,
    pub local_prop: &'a Matrix,
    pub global_prop: Option<&'a Matrix>,
    pub local_graph: &'a Matrix,
    pub fused_graph: Option<&'a Matrix>,
    pub complete: &'a [bool],
    pub target: ClusterTarget<'a>,
    pub gamma1: f64,
    pub gamma2: f64,
    pub bandwidth: LatentBandwidth,
}

/// Recorded objective `L_c + γ1·L_g + γ2·L_r`.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub forward: ForwardVars,
    pub soft: Var,
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// Record the full client objective on `tape`.
///
/// The clustering term is the KL divergence averaged over samples so that
/// it lives on the same per-element scale as the mean-reduced graph and
/// content terms.
pub fn client_objective(
    model: &ClientModel,
    tape: &mut Tape,
    vars: &[Var],
    inputs: &ObjectiveInputs<'_>,
) -> Result<Objective> {
    let ablation = model.ablation();
    let x = tape.constant(inputs.x.clone());
    let local_prop = tape.constant(inputs.local_prop.clone());
    let global_prop = inputs.global_prop.map(|p| tape.constant(p.clone()));
    let forward = model.forward(tape, vars, x, local_prop, global_prop)?;

    let local_graph = tape.constant(inputs.local_graph.clone());
    let fused = match (inputs.fused_graph, ablation.global_guidance()) {
        (Some(f), true) => Some(tape.constant(f.clone())),
        (None, true) => {
            return Err(Error::Protocol("fused graph missing for a guided client".into()));
        }
        (_, false) => None,
    };

    let global_term = match (forward.global, fused) {
        (Some(h), Some(a)) => Some((h, a, inputs.bandwidth.global)),
        _ => None,
    };
    let under = loss_underlying(tape, global_term, Some((forward.local, local_graph, inputs.bandwidth.local)))?
        .expect("local term present");
    let graph = match fused {
        Some(a) => {
            let consistent = loss_consistent(tape, forward.high_level, a, inputs.bandwidth.high_level)?;
            tape.add(under, consistent)?
        }
        None => under,
    };

    let content = loss_content(tape, x, forward.reconstruction, inputs.complete)?;

    let cluster_features = if ablation.has_global_head() && !ablation.has_fusion_module() {
        tape.detach(forward.high_level)
    } else {
        forward.high_level
    };
    let centers = vars[model.layout().centers];
    let soft = soft_assign(tape, cluster_features, centers)?;
    let n = tape.value(soft).rows() as f64;
    let clustering = match inputs.target {
        ClusterTarget::Given(p) => Some(loss_kl(tape, p, soft)?),
        ClusterTarget::SelfTraining => {
            let p = target_distribution(tape.value(soft))?;
            Some(loss_kl(tape, &p, soft)?)
        }
        ClusterTarget::None => None,
    }
    .map(|kl| tape.scale(kl, 1.0 / n));

    let g = tape.scale(graph, inputs.gamma1);
    let r = tape.scale(content, inputs.gamma2);
    let mut total = tape.add(g, r)?;
    if let Some(c) = clustering {
        total = tape.add(c, total)?;
    }

    let breakdown = LossBreakdown {
        clustering: clustering.map_or(0.0, |c| tape.scalar(c)),
        graph: tape.scalar(graph),
        reconstruction: tape.scalar(content),
        total: tape.scalar(total),
    };
    Ok(Objective {
        forward,
        soft,
        total,
        breakdown,
    })
}

/// `mean((τ_k(rbf(H̃_l, t)) − A)²)` over the local head only.
pub fn pretrain_objective(
    model: &ClientModel,
    tape: &mut Tape,
    vars: &[Var],
    x: &Matrix,
    local_prop: &Matrix,
    local_graph: &Matrix,
    k: usize,
    bandwidth: Bandwidth,
) -> Result<(Var, Var)> {
    let xv = tape.constant(x.clone());
    let prop = tape.constant(local_prop.clone());
    let h = model.forward_local(tape, vars, xv, prop)?;
    let latent = latent_graph(tape, h, bandwidth)?;
    let keep = topk_keep_mask(tape.value(latent), k)?;
    let masked = tape.mask(latent, keep)?;
    let target = tape.constant(local_graph.clone());
    let diff = tape.sub(masked, target)?;
    let sq = tape.square(diff);
    Ok((tape.mean(sq), h))
}
