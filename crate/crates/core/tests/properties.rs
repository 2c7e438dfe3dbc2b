//! Randomized invariants across modules.

use std::collections::BTreeSet;

use fedmvc::client::{silhouette, soft_assign, target_distribution};
use fedmvc::data::{apply_missing, synth_blobs, MissingSpec, SynthSpec};
use fedmvc::federation::{run_session, SessionConfig};
use fedmvc::graph::{binarize_rows, fuse_graphs, knn_binarize, migrate_global_structure, rbf_similarity, LatentGraph};
use fedmvc::server::{assign_labels, global_soft, split_centers, Payload, RoundMessage, SessionHeader};
use fedmvc::tensor::{grad_check, Tape, Var};
use fedmvc::{Matrix, Result};
use proptest::prelude::*;

const CASES: u32 = 32;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn sized(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (2..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| matrix(r, c, -3.0, 3.0))
}

fn row_sums_one(m: &Matrix) -> bool {
    m.row_sums().iter().all(|s| (s - 1.0).abs() < 1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn q_p_s_rows_sum_to_one(h in sized(12, 5), k in 2usize..5, seed in any::<u64>()) {
        let d = h.cols();
        let centers = Matrix::from_fn(k, d, |i, j| ((seed >> ((i * d + j) % 60)) & 7) as f64 - 3.5);
        let q = soft_assign(&h, &centers).unwrap();
        prop_assert!(row_sums_one(&q));
        let p = target_distribution(&q).unwrap();
        prop_assert!(row_sums_one(&p));
        let s = global_soft(&h, &centers).unwrap();
        prop_assert!(row_sums_one(&s));
    }

    #[test]
    fn silhouettes_within_bounds(h in sized(14, 4), labels in prop::collection::vec(0usize..4, 14)) {
        let labels = &labels[..h.rows()];
        let distinct: BTreeSet<_> = labels.iter().collect();
        prop_assume!(distinct.len() >= 2);
        let s = silhouette(&h, labels).unwrap();
        prop_assert!(s.iter().all(|v| (-1.0..=1.0).contains(v)), "{s:?}");
    }

    #[test]
    fn topk_rows_have_exactly_k(x in sized(12, 4), k_frac in 0.0f64..1.0) {
        let n = x.rows();
        let k = 1 + ((n - 2) as f64 * k_frac) as usize;
        let s = rbf_similarity(&x, 1.0).unwrap();
        let g = knn_binarize(&s, k).unwrap();
        for i in 0..n {
            prop_assert_eq!(g.degree(i), k);
            prop_assert!(!g.has_edge(i, i));
        }
    }

    #[test]
    fn fused_rows_have_exactly_k(
        a in matrix(9, 9, 0.0, 1.0),
        b in matrix(9, 9, 0.0, 1.0),
        w in prop::collection::vec(-1.0f64..1.0, 18),
        k in 1usize..8,
    ) {
        let latents = [LatentGraph::new(a).unwrap(), LatentGraph::new(b).unwrap()];
        let weights = [w[..9].to_vec(), w[9..].to_vec()];
        let g = fuse_graphs(&latents, &weights, k).unwrap();
        for i in 0..9 {
            prop_assert_eq!(g.degree(i), k);
        }
    }

    #[test]
    fn migration_only_touches_missing_rows(
        local in matrix(10, 10, 0.0, 1.0),
        fused in matrix(10, 10, 0.0, 1.0),
        missing in prop::collection::btree_set(0usize..10, 0..10),
        k in 1usize..9,
    ) {
        let local = binarize_rows(&local, k).unwrap();
        let fused = binarize_rows(&fused, k).unwrap();
        let out = migrate_global_structure(&local, &fused, &missing).unwrap();
        for i in 0..10 {
            let expect = if missing.contains(&i) { fused.row(i) } else { local.row(i) };
            prop_assert_eq!(out.row(i), expect);
        }
    }

    #[test]
    fn upload_round_trip_is_bit_exact(
        n in 1usize..8,
        d in 1usize..6,
        vals in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 48),
        sil in prop::collection::vec(-1.0f64..=1.0, 8),
        round in any::<u32>(),
        client in any::<u16>(),
    ) {
        let features = Matrix::from_vec(n, d, vals[..n * d].to_vec()).unwrap();
        let msg = RoundMessage {
            round,
            client,
            payload: Payload::Upload { features: features.clone(), silhouettes: sil[..n].to_vec() },
        };
        let back = RoundMessage::decode(&msg.encode().unwrap(), &SessionHeader { samples: n, clusters: 2 }).unwrap();
        let Payload::Upload { features: f2, silhouettes: s2 } = &back.payload else {
            panic!("kind changed");
        };
        let bits = |m: &[f64]| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(f2.as_slice()), bits(features.as_slice()));
        prop_assert_eq!(bits(s2), bits(&sil[..n]));
        prop_assert_eq!((back.round, back.client), (round, client));
    }

    #[test]
    fn distribute_round_trip(
        g in matrix(6, 6, 0.0, 1.0),
        k in 1usize..5,
        centers in matrix(3, 4, -5.0, 5.0),
        p in matrix(6, 3, 0.01, 1.0),
    ) {
        let msg = RoundMessage {
            round: 7,
            client: 2,
            payload: Payload::Distribute { fused: binarize_rows(&g, k).unwrap(), centers, pseudo_labels: p },
        };
        let back = RoundMessage::decode(&msg.encode().unwrap(), &SessionHeader { samples: 6, clusters: 3 }).unwrap();
        prop_assert_eq!(back, msg);
    }

    #[test]
    fn labels_invariant_to_row_rescaling(p in matrix(8, 4, 0.0, 1.0), scale in prop::collection::vec(0.01f64..100.0, 8)) {
        let scaled = Matrix::from_fn(8, 4, |i, j| p.get(i, j) * scale[i]);
        prop_assert_eq!(assign_labels(&p), assign_labels(&scaled));
    }

    #[test]
    fn split_undoes_scaling(u in matrix(3, 7, -4.0, 4.0), w1 in 0.5f64..2.0, w2 in 0.5f64..2.0) {
        let widths = [3usize, 4];
        let scaled = Matrix::from_fn(3, 7, |i, j| u.get(i, j) * if j < 3 { w1 } else { w2 });
        let blocks = split_centers(&scaled, &widths, &[w1, w2]).unwrap();
        prop_assert!(blocks[0].max_abs_diff(&u.col_block(0, 3).unwrap()) < 1e-12);
        prop_assert!(blocks[1].max_abs_diff(&u.col_block(3, 7).unwrap()) < 1e-12);
    }
}

/// Weighted sum with fixed coefficients so every output entry matters.
fn project(tape: &mut Tape, v: Var) -> Result<Var> {
    let (r, c) = tape.value(v).shape();
    let w = tape.constant(Matrix::from_fn(r, c, |i, j| 0.3 + 0.17 * ((i * 5 + j * 3) % 7) as f64));
    let m = tape.mul(v, w)?;
    Ok(tape.sum(m))
}

fn check(params: &[Matrix], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    grad_check(f, params, 1e-6).unwrap()
}

const TOL: f64 = 1e-6;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn grad_matmul_add_sub(a in matrix(3, 4, -2.0, 2.0), b in matrix(4, 2, -2.0, 2.0), c in matrix(3, 2, -2.0, 2.0)) {
        let e = check(&[a, b, c], |t, v| {
            let ab = t.matmul(v[0], v[1])?;
            let s = t.add(ab, v[2])?;
            let d = t.sub(s, v[2])?;
            let m = t.mul(d, v[2])?;
            project(t, m)
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn grad_add_row_scale_square(a in matrix(4, 3, -2.0, 2.0), b in matrix(1, 3, -2.0, 2.0)) {
        let e = check(&[a, b], |t, v| {
            let x = t.add_row(v[0], v[1])?;
            let x = t.scale(x, -1.7);
            let x = t.square(x);
            project(t, x)
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn grad_relu_away_from_kink(a in matrix(4, 3, 0.05, 2.0), signs in prop::collection::vec(any::<bool>(), 12)) {
        let a = Matrix::from_fn(4, 3, |i, j| if signs[i * 3 + j] { a.get(i, j) } else { -a.get(i, j) });
        let e = check(&[a], |t, v| {
            let r = t.relu(v[0]);
            project(t, r)
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn grad_ln_recip_rownorm(a in matrix(3, 4, 0.1, 3.0)) {
        let e = check(&[a], |t, v| {
            let l = t.ln(v[0])?;
            let r = t.recip1p(v[0]);
            let n = t.row_normalize(v[0])?;
            let s = t.add(l, r)?;
            let s = t.add(s, n)?;
            project(t, s)
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn grad_concat_mean_mask(a in matrix(3, 2, -2.0, 2.0), b in matrix(3, 3, -2.0, 2.0), keep in prop::collection::vec(any::<bool>(), 15)) {
        let e = check(&[a, b], |t, v| {
            let c = t.concat_cols(v[0], v[1])?;
            let m = t.mask(c, keep.clone())?;
            let sq = t.square(m);
            let mean = t.mean(sq);
            let p = project(t, m)?;
            t.add(mean, p)
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn grad_rbf_pairwise(a in matrix(5, 3, -1.5, 1.5), c in matrix(2, 3, -1.5, 1.5), bw in 0.5f64..4.0) {
        let e = check(&[a, c], |t, v| {
            let r = t.rbf(v[0], bw)?;
            let d = t.pairwise_sq_dist(v[0], v[1])?;
            let p = project(t, r)?;
            let q = project(t, d)?;
            t.add(p, q)
        });
        prop_assert!(e < TOL, "{e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn parallel_matches_sequential(seed in any::<u64>(), rate in 0.0f64..0.6) {
        let data = synth_blobs(&SynthSpec { samples: 14, clusters: 2, dims: vec![3, 2, 4], separation: 5.0, seed }).unwrap();
        let data = apply_missing(&data, &MissingSpec { rate, seed, alpha: None }).unwrap();
        let cfg = SessionConfig {
            clusters: 2,
            rounds: 2,
            epochs: 2,
            pretrain_epochs: 2,
            k_neighbors: 3,
            seed,
            parallel: true,
            ..SessionConfig::default()
        };
        let par = run_session(&cfg, &data).unwrap();
        let seq = run_session(&SessionConfig { parallel: false, ..cfg }, &data).unwrap();
        prop_assert_eq!(&par.labels, &seq.labels);
        // Debug output of f64 round-trips, so equal strings mean equal bits.
        let strip = |o: &fedmvc::federation::SessionOutcome| format!("{:?}", o.records.iter().map(|r| r.without_timing()).collect::<Vec<_>>());
        prop_assert_eq!(strip(&par), strip(&seq));
    }
}
