mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssdl_core::hypergraph::{build_hypergraph, HypergraphConfig};
use ssdl_core::matrixio::FeatureMatrix;
use ssdl_core::nalgebra::DMatrix;
use ssdl_core::par::Execution;
use ssdl_core::plap::{
    attention_operator, edge_affinity, orthogonality_drift, plap_embedding, plap_regularizer,
    quotients, EdgeGraph, PLapConfig,
};

fn graph(seed: u64, n: usize, density: f64) -> (DMatrix<f64>, EdgeGraph) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = common::random_affinity(&mut rng, n, density);
    let g = EdgeGraph::new(w.clone()).unwrap();
    (w, g)
}

fn orthonormal_basis(q: &DMatrix<f64>) -> DMatrix<f64> {
    q.clone().qr().q()
}

#[test]
fn p2_truncated_embedding_spans_the_low_eigenspace() {
    for seed in 0..10 {
        let (w, g) = graph(seed, 12, 0.7);
        let m = 3;
        let emb = plap_embedding(
            &g,
            &PLapConfig {
                p: 2.0,
                m_dims: Some(m),
                ..PLapConfig::default()
            },
        )
        .unwrap();
        let (mu, vecs) = common::jacobi_eigen(&common::laplacian(&w));
        // Only compare spans when the cut after the m-th eigenvalue is clean.
        if mu[m] - mu[m - 1] < 1e-3 {
            continue;
        }
        let reference = vecs.columns(0, m).into_owned();
        let angle = common::max_principal_angle(&orthonormal_basis(&emb.q), &reference);
        assert!(angle < 1e-6, "seed {seed}: principal angle {angle}");
    }
}

#[test]
fn scaling_the_affinity_scales_lambda_and_keeps_the_span() {
    for (seed, p) in [(1u64, 1.6), (2, 2.0), (3, 2.2), (4, 2.8)] {
        let (w, g) = graph(seed, 10, 0.8);
        let cfg = PLapConfig {
            p,
            m_dims: Some(4),
            ..PLapConfig::default()
        };
        let base = plap_embedding(&g, &cfg).unwrap();
        for c in [0.01, 3.0, 250.0] {
            let scaled = plap_embedding(&EdgeGraph::new(&w * c).unwrap(), &cfg).unwrap();
            for (a, b) in base.lambda.iter().zip(scaled.lambda.iter()) {
                assert!((b - c * a).abs() <= 1e-6 * (c * a).abs().max(1e-12), "p {p}, c {c}");
            }
            let angle = common::max_principal_angle(
                &orthonormal_basis(&base.q),
                &orthonormal_basis(&scaled.q),
            );
            assert!(angle <= 1e-3, "p {p}, c {c}: angle {angle}");
        }
    }
}

#[test]
fn embedding_on_a_real_hypergraph_gives_an_attention_operator_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let x = DMatrix::from_fn(4, 25, |_, _| rng.gen_range(-2.0..2.0));
    let x = FeatureMatrix::from_matrix(x).unwrap();
    let h = build_hypergraph(
        &x,
        &HypergraphConfig {
            k_neighbors: 4,
            ..HypergraphConfig::default()
        },
    )
    .unwrap();
    let emb = plap_embedding(
        &edge_affinity(&h),
        &PLapConfig {
            p: 1.8,
            ..PLapConfig::default()
        },
    )
    .unwrap();
    assert!(orthogonality_drift(&emb.q) <= 1e-10);
    // Full spectrum: L_p has the rescaled Lambda as its eigenvalues.
    let lp = attention_operator(&emb);
    let eig = lp.symmetric_eigen().eigenvalues;
    assert!(eig.iter().all(|v| (-1e-10..=1.0 + 1e-10).contains(v)));
    let delta = plap_regularizer(&h, &emb).unwrap();
    assert_eq!(delta, delta.transpose());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn descent_is_monotone_and_lambda_is_consistent(
        seed in 0u64..1_000,
        n in 2usize..14,
        p in 1.2f64..3.0,
        density in 0.2f64..1.0,
    ) {
        let (_, g) = graph(seed, n, density);
        let m = 1 + (seed as usize) % n;
        let emb = plap_embedding(&g, &PLapConfig { p, m_dims: Some(m), ..PLapConfig::default() }).unwrap();
        for pair in emb.diagnostics.windows(2) {
            prop_assert!(pair[1].f1 <= pair[0].f1);
        }
        prop_assert!(orthogonality_drift(&emb.q) <= 1e-10);
        let again = quotients(&g, &emb.q, p, Execution::Sequential);
        for (a, b) in emb.lambda.iter().zip(again.iter()) {
            prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(1e-12));
            prop_assert!(*a >= 0.0);
        }
        prop_assert!(emb.f1() <= emb.diagnostics[0].f1);
    }

    #[test]
    fn parallel_and_sequential_embeddings_agree(seed in 0u64..1_000, n in 2usize..12) {
        let (_, g) = graph(seed, n, 0.6);
        let run = |execution| plap_embedding(&g, &PLapConfig { p: 2.3, execution, ..PLapConfig::default() }).unwrap();
        prop_assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
    }
}
