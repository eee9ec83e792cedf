mod support;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn forward_matches_pointwise_composition() {
    let worst = support::forward_sweep(50, &mut ChaCha8Rng::seed_from_u64(20));
    assert!(worst <= 1e-9, "worst deviation {worst:e}");
}

#[test]
fn oracle_notices_a_perturbed_gate() {
    use hcgr_core::model::{HyperParams, Model};
    let mut m = Model::new(
        HyperParams {
            dim: 4,
            ..HyperParams::default()
        },
        6,
        &mut ChaCha8Rng::seed_from_u64(3),
    )
    .unwrap();
    for v in m.params.embeddings.data_mut() {
        *v *= 5.0;
    }
    let session = [0, 2, 1, 2];
    let before = support::oracle_logits(&m, &session);
    m.params.gate.data_mut()[0] += 1e-3;
    let out = m.forward(&session).unwrap();
    let diff = out
        .logits
        .iter()
        .zip(&before)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(
        diff > 1e-9,
        "oracle and forward should disagree after perturbing one of them"
    );
}
