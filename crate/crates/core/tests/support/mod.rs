//! Straight-line recomputation of the model output built only from the
//! point-wise manifold functions.

use std::collections::BTreeMap;

use hcgr_core::manifold::{self, Activation, Curvature, LorentzPoint, TangentVector};
use hcgr_core::model::{Aggregator, HyperParams, Model};
use hcgr_core::tensor::Tensor;
use rand::Rng;

fn k_of(t: &Tensor) -> f64 {
    Curvature {
        kappa_raw: t.item(),
    }
    .k()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row vector times matrix.
fn row_times(v: &[f64], w: &Tensor) -> Vec<f64> {
    (0..w.cols())
        .map(|c| (0..w.rows()).map(|r| v[r] * w.get(r, c)).sum())
        .collect()
}

type Neighbourhoods = Vec<Vec<(usize, f64)>>;

/// Nodes in first-occurrence order and, for each node, its undirected
/// neighbours (self-loop included) with summed transition counts.
fn session_graph(items: &[usize]) -> (Vec<usize>, usize, Neighbourhoods) {
    let mut nodes = Vec::new();
    let mut pos = Vec::new();
    for &it in items {
        let p = match nodes.iter().position(|&n| n == it) {
            Some(p) => p,
            None => {
                nodes.push(it);
                nodes.len() - 1
            }
        };
        pos.push(p);
    }
    let n = nodes.len();
    let mut w = vec![vec![0.0; n]; n];
    for pair in pos.windows(2) {
        w[pair[0]][pair[1]] += 1.0;
    }
    for (i, row) in w.iter_mut().enumerate() {
        if row[i] == 0.0 {
            row[i] = 1.0;
        }
    }
    let mut nbrs = vec![BTreeMap::new(); n];
    for i in 0..n {
        for j in 0..n {
            if w[i][j] == 0.0 {
                continue;
            }
            if i == j {
                *nbrs[i].entry(i).or_insert(0.0) += w[i][i];
            } else {
                *nbrs[i].entry(j).or_insert(0.0) += w[i][j];
                *nbrs[j].entry(i).or_insert(0.0) += w[i][j];
            }
        }
    }
    let nbrs = nbrs.into_iter().map(|m| m.into_iter().collect()).collect();
    (nodes, *pos.last().unwrap(), nbrs)
}

pub fn oracle_logits(m: &Model, session: &[usize]) -> Vec<f64> {
    let p = &m.params;
    let h = &m.hyper;
    let (nodes, last, nbrs) = session_graph(session);
    let k0 = k_of(&p.graph_curvatures[0]);
    let catalog: Vec<Vec<f64>> = (0..p.embeddings.rows())
        .map(|v| manifold::log_origin(&manifold::exp_origin(p.embeddings.row(v), k0)))
        .collect();

    let mut layers: Vec<Vec<Vec<f64>>> = vec![nodes.iter().map(|&v| catalog[v].clone()).collect()];
    let mut last_points: Vec<LorentzPoint> = Vec::new();
    let mut k_last = k0;
    for l in 1..=h.layers {
        let k = k_of(&p.graph_curvatures[l]);
        let prev = layers.last().unwrap();
        let pts: Vec<LorentzPoint> = prev
            .iter()
            .map(|t| manifold::exp_origin(&t[1..], k))
            .collect();
        let mut next_pts = Vec::new();
        for (i, nb) in nbrs.iter().enumerate() {
            let weights: Vec<f64> = match h.aggregator {
                Aggregator::GcnMean => vec![1.0 / nb.len() as f64; nb.len()],
                _ => {
                    let logits: Vec<f64> = nb
                        .iter()
                        .map(|&(j, w)| {
                            let feat: Vec<f64> = prev[i].iter().chain(&prev[j]).cloned().collect();
                            dot(p.attn_w.data(), &feat) + p.attn_b.item() + w.ln()
                        })
                        .collect();
                    softmax(&logits)
                }
            };
            let mut agg = vec![0.0; h.dim + 1];
            for (&(j, _), a) in nb.iter().zip(&weights) {
                let lg = manifold::log_map(&pts[i], &pts[j]).unwrap();
                for (acc, c) in agg.iter_mut().zip(lg.coords()) {
                    *acc += a * c;
                }
            }
            let v = TangentVector::new(agg, &pts[i]).unwrap();
            next_pts.push(manifold::exp_map(&pts[i], &v).unwrap());
        }
        layers.push(next_pts.iter().map(manifold::log_origin).collect());
        last_points = next_pts;
        k_last = k;
    }

    let fused: Vec<LorentzPoint> = if h.aggregator == Aggregator::MultiHop {
        let alpha = softmax(p.fusion.data());
        (0..nodes.len())
            .map(|i| {
                let mut s = vec![0.0; h.dim];
                for (l, a) in alpha.iter().enumerate() {
                    for (c, acc) in s.iter_mut().enumerate() {
                        *acc += a * layers[l][i][c + 1];
                    }
                }
                manifold::exp_origin(&s, k_last)
            })
            .collect()
    } else {
        last_points
    };
    let fused_t: Vec<Vec<f64>> = fused.iter().map(manifold::log_origin).collect();

    let mut seq = fused;
    for b in &p.blocks {
        let k1 = k_of(&b.curv_attn);
        let k2 = k_of(&b.curv_ffn);
        let t: Vec<Vec<f64>> = seq.iter().map(manifold::log_origin).collect();
        let q: Vec<Vec<f64>> = t.iter().map(|r| row_times(r, &b.w_q)).collect();
        let kk: Vec<Vec<f64>> = t.iter().map(|r| row_times(r, &b.w_k)).collect();
        let v: Vec<Vec<f64>> = t.iter().map(|r| row_times(r, &b.w_v)).collect();
        let scale = ((h.dim + 1) as f64).sqrt();
        let mut out = Vec::new();
        for qi in &q {
            let a = softmax(&kk.iter().map(|kj| dot(qi, kj) / scale).collect::<Vec<_>>());
            let mut mixed = vec![0.0; h.dim + 1];
            for (aj, vj) in a.iter().zip(&v) {
                for (m, x) in mixed.iter_mut().zip(vj) {
                    *m += aj * x;
                }
            }
            let f = manifold::exp_origin(&mixed[1..], k1);
            let x = manifold::hyp_matmul(&b.w_1, &f).unwrap();
            let x = manifold::hyp_bias_add(&x, &TangentVector::at_origin(&b.b_1.data()[1..], k1))
                .unwrap();
            let x = manifold::hyp_activation(&x, Activation::LeakyRelu(0.2), k2).unwrap();
            let x = manifold::hyp_matmul(&b.w_2, &x).unwrap();
            let x = manifold::hyp_bias_add(&x, &TangentVector::at_origin(&b.b_2.data()[1..], k2))
                .unwrap();
            let sum: Vec<f64> = manifold::log_origin(&x)
                .iter()
                .zip(manifold::log_origin(&f))
                .map(|(a, b)| a + b)
                .collect();
            out.push(manifold::exp_origin(&sum[1..], k2));
        }
        seq = out;
    }
    let seq_last = manifold::log_origin(&seq[last]);
    let g = 1.0 / (1.0 + (-p.gate.item()).exp());
    let o: Vec<f64> = seq_last
        .iter()
        .zip(&fused_t[last])
        .map(|(a, b)| g * a + (1.0 - g) * b)
        .collect();
    catalog.iter().map(|t| dot(&o, t)).collect()
}

/// Worst deviation between `Model::forward` and the oracle over `n` random
/// sessions on random toy models (d = 4, |V| = 6). Logits are compared
/// relative to their magnitude, probabilities absolutely.
pub fn forward_sweep(n: usize, rng: &mut impl Rng) -> f64 {
    let aggs = [
        Aggregator::MultiHop,
        Aggregator::GatLastLayer,
        Aggregator::GcnMean,
    ];
    let mut worst: f64 = 0.0;
    for s in 0..n {
        let hyper = HyperParams {
            dim: 4,
            layers: 1 + s % 2,
            blocks: 1 + (s / 2) % 2,
            aggregator: aggs[s % 3],
            ..HyperParams::default()
        };
        let mut model = Model::new(hyper, 6, rng).unwrap();
        // spread the embeddings beyond the small init scale
        for v in model.params.embeddings.data_mut() {
            *v *= 5.0;
        }
        let len = rng.random_range(1..=8);
        let session: Vec<usize> = (0..len).map(|_| rng.random_range(0..6)).collect();

        let out = model.forward(&session).unwrap();
        let expect = oracle_logits(&model, &session);
        let expect_probs = softmax(&expect);
        for (a, b) in out.logits.iter().zip(&expect) {
            worst = worst.max((a - b).abs() / (1.0 + b.abs()));
        }
        for (a, b) in out.probs.iter().zip(&expect_probs) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}
