use hcgr_core::model::{Aggregator, HyperParams, Model};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const N_ITEMS: usize = 7;

fn model(seed: u64, aggregator: Aggregator, max_len: usize) -> Model {
    let hyper = HyperParams {
        dim: 4,
        layers: 2,
        blocks: 1,
        max_session_len: max_len,
        aggregator,
        ..HyperParams::default()
    };
    let mut m = Model::new(hyper, N_ITEMS, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    for v in m.params.embeddings.data_mut() {
        *v *= 4.0;
    }
    m
}

fn aggregator() -> impl Strategy<Value = Aggregator> {
    prop_oneof![
        Just(Aggregator::MultiHop),
        Just(Aggregator::GatLastLayer),
        Just(Aggregator::GcnMean)
    ]
}

fn session() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..N_ITEMS, 1..10)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn output_is_a_distribution(seed in 0u64..1000, agg in aggregator(), s in session()) {
        let out = model(seed, agg, 50).forward(&s).unwrap();
        let total: f64 = out.probs.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(out.probs.iter().all(|p| *p >= 0.0 && p.is_finite()));
        for layer in &out.trace.graph {
            let mut sums = vec![0.0; out.trace.nodes.len()];
            for &(i, _, w) in layer {
                sums[i] += w;
            }
            prop_assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-12));
        }
    }

    /// Relabelling the catalog permutes the scores the same way.
    #[test]
    fn relabelling_items_permutes_scores(
        seed in 0u64..1000,
        agg in aggregator(),
        s in session(),
        perm in Just((0..N_ITEMS).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let m = model(seed, agg, 50);
        let mut relabelled = m.clone();
        for (old, &new) in perm.iter().enumerate() {
            relabelled.params.embeddings.row_mut(new).copy_from_slice(m.params.embeddings.row(old));
        }
        let s2: Vec<usize> = s.iter().map(|&i| perm[i]).collect();
        let a = m.forward(&s).unwrap();
        let b = relabelled.forward(&s2).unwrap();
        for (old, &new) in perm.iter().enumerate() {
            prop_assert!((a.probs[old] - b.probs[new]).abs() < 1e-12);
        }
    }

    /// The scalar attention bias cancels inside each neighbourhood softmax.
    #[test]
    fn attention_bias_shift_is_invisible(seed in 0u64..1000, s in session(), shift in -5.0f64..5.0) {
        let m = model(seed, Aggregator::MultiHop, 50);
        let mut shifted = m.clone();
        shifted.params.attn_b.data_mut()[0] += shift;
        let a = m.forward(&s).unwrap();
        let b = shifted.forward(&s).unwrap();
        for (x, y) in a.probs.iter().zip(&b.probs) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn only_the_most_recent_clicks_matter(seed in 0u64..1000, s in session(), max_len in 1usize..5) {
        let m = model(seed, Aggregator::MultiHop, max_len);
        let tail = &s[s.len().saturating_sub(max_len)..];
        prop_assert_eq!(m.forward(&s).unwrap().probs, m.forward(tail).unwrap().probs);
    }
}

#[test]
fn catalog_points_stay_on_the_hyperboloid() {
    let m = model(9, Aggregator::MultiHop, 50);
    for i in 0..N_ITEMS {
        assert!(m.embed(i).unwrap().constraint_residual() < 1e-8);
    }
}

#[test]
fn bad_sessions_are_rejected() {
    let m = model(1, Aggregator::MultiHop, 50);
    assert!(m.forward(&[]).is_err());
    assert!(m.forward(&[0, N_ITEMS]).is_err());
}
