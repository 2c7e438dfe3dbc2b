use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tape, Var};

/// Layer widths shared by every client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// GCN layers per encoder head.
    pub gcn_layers: usize,
    /// Width of each head's output (underlying features).
    pub underlying_dim: usize,
    /// Width of the high-level features sent to the server.
    pub latent_dim: usize,
    /// Hidden width of the decoder and fusion networks.
    pub hidden_width: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            gcn_layers: 2,
            underlying_dim: 64,
            latent_dim: 32,
            hidden_width: 128,
        }
    }
}

/// Which parts of the method are switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    Full,
    /// Missing rows keep an empty adjacency row instead of the fused one.
    NoMigration,
    /// Fusion network replaced by a linear projection trained only by the
    /// consistent-graph term.
    NoFusionModule,
    /// Global-head graph term and consistent-graph term dropped.
    NoGlobalGuidance,
    /// No global head at all, which also removes the three components above.
    NoGlobalHead,
}

impl Ablation {
    pub fn migrates(self) -> bool {
        !matches!(self, Ablation::NoMigration | Ablation::NoGlobalHead)
    }

    pub fn has_global_head(self) -> bool {
        self != Ablation::NoGlobalHead
    }

    pub fn has_fusion_module(self) -> bool {
        !matches!(self, Ablation::NoFusionModule | Ablation::NoGlobalHead)
    }

    pub fn global_guidance(self) -> bool {
        !matches!(self, Ablation::NoGlobalGuidance | Ablation::NoGlobalHead)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoMigration => "no-migration",
            Ablation::NoFusionModule => "no-fusion-module",
            Ablation::NoGlobalGuidance => "no-global-guidance",
            Ablation::NoGlobalHead => "no-global-head",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "full" | "none" => Ablation::Full,
            "no-migration" => Ablation::NoMigration,
            "no-fusion-module" => Ablation::NoFusionModule,
            "no-global-guidance" => Ablation::NoGlobalGuidance,
            "no-global-head" => Ablation::NoGlobalHead,
            other => return Err(Error::param(format!("unknown ablation '{other}'"))),
        })
    }
}

/// Indices of one affine layer's weight and bias in the parameter list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseIdx {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub global: Vec<DenseIdx>,
    pub local: Vec<DenseIdx>,
    pub decoder: Vec<DenseIdx>,
    pub fusion: Vec<DenseIdx>,
    pub centers: usize,
}

/// All trainable parameters of one client, stored flat so they map one to
/// one onto tape leaves and optimizer slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientModel {
    params: Vec<Matrix>,
    layout: Layout,
    input_dim: usize,
    clusters: usize,
    arch: Architecture,
    ablation: Ablation,
}

/// Tape handles of every intermediate produced by [`ClientModel::forward`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub global: Option<Var>,
    pub local: Var,
    pub underlying: Var,
    pub high_level: Var,
    pub reconstruction: Var,
}

fn dense<R: Rng>(params: &mut Vec<Matrix>, rng: &mut R, fan_in: usize, fan_out: usize) -> DenseIdx {
    params.push(glorot(rng, fan_in, fan_out));
    params.push(Matrix::zeros(1, fan_out));
    DenseIdx {
        weight: params.len() - 2,
        bias: params.len() - 1,
    }
}

fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..limit))
}

impl ClientModel {
    pub fn new<R: Rng>(
        rng: &mut R,
        input_dim: usize,
        clusters: usize,
        arch: Architecture,
        ablation: Ablation,
    ) -> Result<Self> {
        if input_dim == 0 || arch.gcn_layers == 0 || arch.underlying_dim == 0 || arch.latent_dim == 0 {
            return Err(Error::param("layer widths and counts must be positive"));
        }
        if clusters < 2 {
            return Err(Error::param(format!("need at least 2 clusters, got {clusters}")));
        }
        let mut params = Vec::new();
        let head = |params: &mut Vec<Matrix>, rng: &mut R| -> Vec<DenseIdx> {
            (0..arch.gcn_layers)
                .map(|l| {
                    let i = if l == 0 { input_dim } else { arch.underlying_dim };
                    dense(params, rng, i, arch.underlying_dim)
                })
                .collect()
        };

        let local = head(&mut params, rng);
        let global = if ablation.has_global_head() {
            head(&mut params, rng)
        } else {
            Vec::new()
        };
        let under = if ablation.has_global_head() {
            2 * arch.underlying_dim
        } else {
            arch.underlying_dim
        };
        let decoder = vec![
            dense(&mut params, rng, under, arch.hidden_width),
            dense(&mut params, rng, arch.hidden_width, input_dim),
        ];
        let fusion = if ablation.has_fusion_module() {
            vec![
                dense(&mut params, rng, under, arch.hidden_width),
                dense(&mut params, rng, arch.hidden_width, arch.latent_dim),
            ]
        } else {
            vec![dense(&mut params, rng, under, arch.latent_dim)]
        };
        params.push(Matrix::zeros(clusters, arch.latent_dim));
        let centers = params.len() - 1;

        Ok(Self {
            params,
            layout: Layout {
                global,
                local,
                decoder,
                fusion,
                centers,
            },
            input_dim,
            clusters,
            arch,
            ablation,
        })
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn ablation(&self) -> Ablation {
        self.ablation
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn centers(&self) -> &Matrix {
        &self.params[self.layout.centers]
    }

    pub fn set_centers(&mut self, centers: Matrix) -> Result<()> {
        self.params[self.layout.centers].ensure_same_shape(&centers, "set_centers")?;
        self.params[self.layout.centers] = centers;
        Ok(())
    }

    /// Indices of the local-head parameters (the only ones pre-training touches).
    pub fn local_head_params(&self) -> Vec<usize> {
        self.layout.local.iter().flat_map(|d| [d.weight, d.bias]).collect()
    }

    /// Register every parameter on `tape`, in storage order.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.clone())).collect()
    }

    /// Run the dual-head encoder, decoder and fusion network.
    ///
    /// `global_prop` is required whenever the model has a global head.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        local_prop: Var,
        global_prop: Option<Var>,
    ) -> Result<ForwardVars> {
        let local = gcn_forward(tape, vars, &self.layout.local, x, local_prop)?;
        let global = if self.ablation.has_global_head() {
            let prop = global_prop
                .ok_or_else(|| Error::Protocol("fused graph required by the global head is missing".into()))?;
            Some(gcn_forward(tape, vars, &self.layout.global, x, prop)?)
        } else {
            None
        };
        let underlying = match global {
            Some(g) => tape.concat_cols(g, local)?,
            None => local,
        };
        let reconstruction = mlp_forward(tape, vars, &self.layout.decoder, underlying)?;
        let fusion_input = if self.ablation.has_fusion_module() || !self.ablation.has_global_head() {
            underlying
        } else {
            // The linear projection that stands in for the fusion network is
            // fitted by the consistent-graph term alone.
            tape.detach(underlying)
        };
        let high_level = mlp_forward(tape, vars, &self.layout.fusion, fusion_input)?;
        Ok(ForwardVars {
            global,
            local,
            underlying,
            high_level,
            reconstruction,
        })
    }

    /// Local head only.
    pub fn forward_local(&self, tape: &mut Tape, vars: &[Var], x: Var, local_prop: Var) -> Result<Var> {
        gcn_forward(tape, vars, &self.layout.local, x, local_prop)
    }
}

/// Stacked graph convolutions with skip connections:
/// `H_t = relu(P · H_{t−1} · W_t + b_t) + H_{t−1}`; the skip is dropped when
/// a layer changes width.
pub fn gcn_forward(tape: &mut Tape, vars: &[Var], layers: &[DenseIdx], x: Var, prop: Var) -> Result<Var> {
    let mut h = x;
    for layer in layers {
        let hw = tape.matmul(h, vars[layer.weight])?;
        let phw = tape.matmul(prop, hw)?;
        let z = tape.add_row(phw, vars[layer.bias])?;
        let a = tape.relu(z);
        h = if tape.value(a).cols() == tape.value(h).cols() {
            tape.add(a, h)?
        } else {
            a
        };
    }
    Ok(h)
}

/// Dense layers with ReLU between them and a linear output.
pub fn mlp_forward(tape: &mut Tape, vars: &[Var], layers: &[DenseIdx], x: Var) -> Result<Var> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        let z = tape.matmul(h, vars[layer.weight])?;
        let z = tape.add_row(z, vars[layer.bias])?;
        h = if i + 1 < layers.len() { tape.relu(z) } else { z };
    }
    Ok(h)
}
