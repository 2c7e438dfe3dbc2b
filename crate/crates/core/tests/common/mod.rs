//! Fixtures shared by the integration and acceptance tests.

use fedmvc::client::loss::{client_objective, Bandwidth, ClusterTarget, LatentBandwidth, ObjectiveInputs};
use fedmvc::client::{Ablation, Architecture, ClientModel};
use fedmvc::graph::{binarize_rows, normalize_propagation, rbf_similarity};
use fedmvc::tensor::{grad_check, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SMALL: Architecture = Architecture {
    gcn_layers: 2,
    underlying_dim: 4,
    latent_dim: 3,
    hidden_width: 5,
};

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Worst relative error over every parameter of one client's model.
pub fn check_view(dim: usize, ablation: Ablation, bandwidth: Bandwidth, seed: u64) -> f64 {
    let n = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&mut rng, n, dim);
    let complete = [true, true, false, true, true, true];
    let mut x_in = x.clone();
    x_in.row_mut(2).iter_mut().for_each(|v| *v = 0.0);

    let local = binarize_rows(rbf_similarity(&x, 1.0).unwrap().values(), 2).unwrap();
    let fused = binarize_rows(&random(&mut rng, n, n), 2).unwrap();
    let local_prop = normalize_propagation(&local);
    let global_prop = normalize_propagation(&fused);
    let local_graph = local.to_matrix();
    let fused_graph = fused.to_matrix();
    let p = Matrix::from_fn(n, 2, |i, j| if (i % 2 == 0) == (j == 0) { 0.8 } else { 0.2 });

    let mut model = ClientModel::new(&mut rng, dim, 2, SMALL, ablation).unwrap();
    // Zero biases put pre-activations exactly on the ReLU kink, where central
    // differences read 0.5; check at a generic point instead.
    for p in model.params_mut() {
        *p = random(&mut rng, p.rows(), p.cols());
    }
    let inputs = ObjectiveInputs {
        x: &x_in,
        local_prop: &local_prop,
        global_prop: Some(&global_prop),
        local_graph: &local_graph,
        fused_graph: Some(&fused_graph),
        complete: &complete,
        target: ClusterTarget::Given(&p),
        gamma1: 1.0,
        gamma2: 0.1,
        bandwidth: LatentBandwidth::uniform(bandwidth),
    };
    let params = model.params().to_vec();
    grad_check(
        |tape, vars| Ok(client_objective(&model, tape, vars, &inputs)?.total),
        &params,
        1e-6,
    )
    .unwrap()
}
