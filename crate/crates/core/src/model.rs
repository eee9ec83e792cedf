//! The HCGR network.
//!
//! ```text
//! session ─► graph ─► embed (exp_o) ─► L × hyperbolic graph attention
//!         ─► multi-hop fusion ─► J × hyperbolic self-attention + feed-forward
//!         ─► gated long/short-term readout ─► softmax over the catalog
//! ```
//!
//! All trainable tensors are unconstrained arrays; item embeddings are
//! tangent vectors at the origin and reach the manifold only through `exp_o`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{HcgrError, Result};
use crate::graph::{build_graph_from_items, SessionGraph};
use crate::lorentz_tape as lt;
use crate::manifold::{self, Activation, Curvature, LorentzPoint};
use crate::tensor::Tensor;

/// Standard deviation of the Gaussian initialiser.
pub const INIT_STD: f64 = 0.1;

/// Negative slope of the feed-forward activation.
pub const FFN_LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    /// Attention weights, convex fusion of all layer outputs.
    MultiHop,
    /// Attention weights, last layer only.
    GatLastLayer,
    /// Uniform neighbour weights, last layer only.
    GcnMean,
}

impl Aggregator {
    fn uses_attention(self) -> bool {
        !matches!(self, Aggregator::GcnMean)
    }

    fn fuses_layers(self) -> bool {
        matches!(self, Aggregator::MultiHop)
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::MultiHop => "multi_hop",
            Aggregator::GatLastLayer => "gat_last_layer",
            Aggregator::GcnMean => "gcn_mean",
        })
    }
}

impl FromStr for Aggregator {
    type Err = HcgrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi_hop" => Ok(Aggregator::MultiHop),
            "gat_last_layer" => Ok(Aggregator::GatLastLayer),
            "gcn_mean" => Ok(Aggregator::GcnMean),
            other => Err(HcgrError::invalid(format!(
                "unknown aggregator `{other}` (expected multi_hop, gat_last_layer or gcn_mean)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Embedding dimension `d`; points have `d + 1` coordinates.
    pub dim: usize,
    /// Graph attention layers `L`.
    pub layers: usize,
    /// Self-attention blocks `J`.
    pub blocks: usize,
    pub max_session_len: usize,
    pub negatives: usize,
    /// Contrastive margin ξ.
    pub margin: f64,
    /// Cross-entropy weight γ.
    pub gamma: f64,
    /// Contrastive weight β.
    pub beta: f64,
    pub aggregator: Aggregator,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            dim: 128,
            layers: 2,
            blocks: 1,
            max_session_len: 50,
            negatives: 1,
            margin: 0.5,
            gamma: 1.0,
            beta: 0.1,
            aggregator: Aggregator::MultiHop,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(HcgrError::invalid(m.to_string()));
        if self.dim < 2 {
            return fail("dim must be >= 2");
        }
        if self.layers < 1 {
            return fail("layers must be >= 1");
        }
        if self.blocks < 1 {
            return fail("blocks must be >= 1");
        }
        if self.max_session_len < 1 {
            return fail("max_session_len must be >= 1");
        }
        if self.negatives < 1 {
            return fail("negatives must be >= 1");
        }
        for (name, v) in [
            ("margin", self.margin),
            ("gamma", self.gamma),
            ("beta", self.beta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(HcgrError::invalid(format!(
                    "{name} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_1: Tensor,
    pub w_2: Tensor,
    pub b_1: Tensor,
    pub b_2: Tensor,
    /// Curvature of the attention output and the first feed-forward stage.
    pub curv_attn: Tensor,
    /// Curvature of the second feed-forward stage and the block output.
    pub curv_ffn: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// `|V| × d` tangent rows at the origin (time coordinate implicit 0).
    pub embeddings: Tensor,
    /// `kappa_raw` for layer 0 (embeddings) through layer `L`.
    pub graph_curvatures: Vec<Tensor>,
    /// `1 × (2d+2)` attention scorer.
    pub attn_w: Tensor,
    pub attn_b: Tensor,
    /// `1 × (L+1)` layer-fusion logits.
    pub fusion: Tensor,
    pub blocks: Vec<BlockParams>,
    pub gate: Tensor,
}

impl ModelParams {
    /// Gaussian(0, 0.1) initialisation; every curvature starts at `k = 1`.
    pub fn init(hyper: &HyperParams, catalog_size: usize, rng: &mut impl Rng) -> Result<Self> {
        hyper.validate()?;
        if catalog_size == 0 {
            return Err(HcgrError::invalid("catalog must be nonempty"));
        }
        let mut p = ModelParams::zeros(hyper, catalog_size);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for (name, tensor) in p.named_mut() {
            if is_curvature(&name) {
                tensor.data_mut().fill(Curvature::from_k(1.0).kappa_raw);
            } else {
                for v in tensor.data_mut() {
                    *v = normal.sample(rng);
                }
            }
        }
        Ok(p)
    }

    /// All-zero parameters with `k = 1` curvatures.
    pub fn zeros(hyper: &HyperParams, catalog_size: usize) -> Self {
        let d = hyper.dim;
        let d1 = d + 1;
        let curv = || Tensor::scalar(Curvature::from_k(1.0).kappa_raw);
        let block = || BlockParams {
            w_q: Tensor::zeros(d1, d1),
            w_k: Tensor::zeros(d1, d1),
            w_v: Tensor::zeros(d1, d1),
            w_1: Tensor::zeros(d1, d1),
            w_2: Tensor::zeros(d1, d1),
            b_1: Tensor::zeros(1, d1),
            b_2: Tensor::zeros(1, d1),
            curv_attn: curv(),
            curv_ffn: curv(),
        };
        ModelParams {
            embeddings: Tensor::zeros(catalog_size.max(1), d),
            graph_curvatures: (0..=hyper.layers).map(|_| curv()).collect(),
            attn_w: Tensor::zeros(1, 2 * d1),
            attn_b: Tensor::scalar(0.0),
            fusion: Tensor::zeros(1, hyper.layers + 1),
            blocks: (0..hyper.blocks).map(|_| block()).collect(),
            gate: Tensor::scalar(0.0),
        }
    }

    pub fn catalog_size(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    /// Every tensor with a stable name, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embeddings".to_string(), &self.embeddings)];
        for (l, c) in self.graph_curvatures.iter().enumerate() {
            out.push((format!("curv_graph_{l}"), c));
        }
        out.push(("attn_w".into(), &self.attn_w));
        out.push(("attn_b".into(), &self.attn_b));
        out.push(("fusion".into(), &self.fusion));
        for (j, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{j}.w_q"), &b.w_q));
            out.push((format!("block{j}.w_k"), &b.w_k));
            out.push((format!("block{j}.w_v"), &b.w_v));
            out.push((format!("block{j}.w_1"), &b.w_1));
            out.push((format!("block{j}.w_2"), &b.w_2));
            out.push((format!("block{j}.b_1"), &b.b_1));
            out.push((format!("block{j}.b_2"), &b.b_2));
            out.push((format!("block{j}.curv_attn"), &b.curv_attn));
            out.push((format!("block{j}.curv_ffn"), &b.curv_ffn));
        }
        out.push(("gate".into(), &self.gate));
        out
    }

    /// Mutable counterpart of [`ModelParams::named`], same order.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("embeddings".to_string(), &mut self.embeddings)];
        for (l, c) in self.graph_curvatures.iter_mut().enumerate() {
            out.push((format!("curv_graph_{l}"), c));
        }
        out.push(("attn_w".into(), &mut self.attn_w));
        out.push(("attn_b".into(), &mut self.attn_b));
        out.push(("fusion".into(), &mut self.fusion));
        for (j, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{j}.w_q"), &mut b.w_q));
            out.push((format!("block{j}.w_k"), &mut b.w_k));
            out.push((format!("block{j}.w_v"), &mut b.w_v));
            out.push((format!("block{j}.w_1"), &mut b.w_1));
            out.push((format!("block{j}.w_2"), &mut b.w_2));
            out.push((format!("block{j}.b_1"), &mut b.b_1));
            out.push((format!("block{j}.b_2"), &mut b.b_2));
            out.push((format!("block{j}.curv_attn"), &mut b.curv_attn));
            out.push((format!("block{j}.curv_ffn"), &mut b.curv_ffn));
        }
        out.push(("gate".into(), &mut self.gate));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.all_finite())
    }

    /// Registers every tensor as a trainable leaf on `tape`.
    pub fn to_tape(&self, tape: &mut Tape) -> ParamVars {
        let mut p = |t: &Tensor| tape.param(t.clone());
        ParamVars {
            embeddings: p(&self.embeddings),
            graph_curvatures: self.graph_curvatures.iter().map(&mut p).collect(),
            attn_w: p(&self.attn_w),
            attn_b: p(&self.attn_b),
            fusion: p(&self.fusion),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockVars {
                    w_q: p(&b.w_q),
                    w_k: p(&b.w_k),
                    w_v: p(&b.w_v),
                    w_1: p(&b.w_1),
                    w_2: p(&b.w_2),
                    b_1: p(&b.b_1),
                    b_2: p(&b.b_2),
                    curv_attn: p(&b.curv_attn),
                    curv_ffn: p(&b.curv_ffn),
                })
                .collect(),
            gate: p(&self.gate),
        }
    }
}

/// Curvature parameters are excluded from the L2 penalty.
pub fn is_curvature(name: &str) -> bool {
    name.contains("curv")
}

#[derive(Clone, Debug)]
pub struct BlockVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_1: Var,
    pub w_2: Var,
    pub b_1: Var,
    pub b_2: Var,
    pub curv_attn: Var,
    pub curv_ffn: Var,
}

/// Tape handles for [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub embeddings: Var,
    pub graph_curvatures: Vec<Var>,
    pub attn_w: Var,
    pub attn_b: Var,
    pub fusion: Var,
    pub blocks: Vec<BlockVars>,
    pub gate: Var,
}

impl ParamVars {
    /// Handles in the order of [`ModelParams::named`].
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = vec![self.embeddings];
        out.extend(&self.graph_curvatures);
        out.extend([self.attn_w, self.attn_b, self.fusion]);
        for b in &self.blocks {
            out.extend([
                b.w_q,
                b.w_k,
                b.w_v,
                b.w_1,
                b.w_2,
                b.b_1,
                b.b_2,
                b.curv_attn,
                b.curv_ffn,
            ]);
        }
        out.push(self.gate);
        out
    }
}

/// Catalog-wide quantities shared by every session on one tape.
#[derive(Clone, Copy, Debug)]
pub struct CatalogVars {
    /// `k_0`, the embedding curvature.
    pub k0: Var,
    /// `|V| × (d+1)` points `exp_o^{k0}(e_v)`.
    pub points: Var,
    /// `|V| × (d+1)` tangents `log_o^{k0}(exp_o^{k0}(e_v))`.
    pub tangents: Var,
}

/// Tape handles produced by one session's forward pass.
#[derive(Clone, Debug)]
pub struct SessionVars {
    pub graph: SessionGraph,
    /// `1 × |V|` item scores.
    pub logits: Var,
    /// `1 × |V|` probabilities.
    pub probs: Var,
    /// `1 × (d+1)` session representation, tangent at the origin.
    pub o_vec: Var,
    /// Per layer: the directed (node, neighbour) pairs and their `E×1` weights.
    pub graph_attention: Vec<(Vec<(usize, usize)>, Var)>,
    /// Per block: the `n×n` self-attention matrix.
    pub self_attention: Vec<Var>,
}

/// Attention weights extracted from a forward pass, in node-index space.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub nodes: Vec<usize>,
    /// `graph[l]` lists `(i, j, w_ij)` for graph layer `l + 1`.
    pub graph: Vec<Vec<(usize, usize, f64)>>,
    /// `self_attention[j]` is the row-stochastic matrix of block `j`.
    pub self_attention: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
    pub o_vec: Vec<f64>,
    pub trace: AttentionTrace,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub hyper: HyperParams,
    pub params: ModelParams,
}

impl Model {
    pub fn new(hyper: HyperParams, catalog_size: usize, rng: &mut impl Rng) -> Result<Self> {
        let params = ModelParams::init(&hyper, catalog_size, rng)?;
        Ok(Model { hyper, params })
    }

    pub fn catalog_size(&self) -> usize {
        self.params.catalog_size()
    }

    pub fn graph_curvature(&self, layer: usize) -> f64 {
        Curvature {
            kappa_raw: self.params.graph_curvatures[layer].item(),
        }
        .k()
    }

    /// `exp_o^{k0}` of an item's stored tangent row.
    pub fn embed(&self, item: usize) -> Result<LorentzPoint> {
        if item >= self.catalog_size() {
            return Err(HcgrError::invalid(format!(
                "item {item} outside catalog of size {}",
                self.catalog_size()
            )));
        }
        Ok(manifold::exp_origin(
            self.params.embeddings.row(item),
            self.graph_curvature(0),
        ))
    }

    /// Full forward pass for one session (truncated to the most recent
    /// `max_session_len` clicks).
    pub fn forward(&self, session: &[usize]) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let vars = self.params.to_tape(&mut tape);
        let catalog = catalog_on_tape(&mut tape, &vars)?;
        let out = session_forward(&mut tape, &self.hyper, &vars, &catalog, session)?;
        let trace = AttentionTrace {
            nodes: out.graph.nodes().to_vec(),
            graph: out
                .graph_attention
                .iter()
                .map(|(pairs, w)| {
                    pairs
                        .iter()
                        .zip(tape.value(*w).data())
                        .map(|(&(i, j), &wij)| (i, j, wij))
                        .collect()
                })
                .collect(),
            self_attention: out
                .self_attention
                .iter()
                .map(|a| tape.value(*a).to_nested())
                .collect(),
        };
        Ok(ForwardOutput {
            probs: tape.value(out.probs).data().to_vec(),
            logits: tape.value(out.logits).data().to_vec(),
            o_vec: tape.value(out.o_vec).data().to_vec(),
            trace,
        })
    }
}

/// Embeds the whole catalog on `tape`.
pub fn catalog_on_tape(tape: &mut Tape, vars: &ParamVars) -> Result<CatalogVars> {
    let k0 = lt::curvature(tape, vars.graph_curvatures[0])?;
    let rows = tape.shape(vars.embeddings)[0];
    let zeros = tape.constant(Tensor::zeros(rows, 1));
    let tangent_rows = tape.concat_cols(&[zeros, vars.embeddings])?;
    let points = lt::exp_origin(tape, tangent_rows, k0)?;
    let tangents = lt::log_origin(tape, points, k0)?;
    Ok(CatalogVars {
        k0,
        points,
        tangents,
    })
}

/// Per-node neighbourhoods flattened into contiguous segments.
struct EdgeLayout {
    pairs: Vec<(usize, usize)>,
    src: Vec<usize>,
    dst: Vec<usize>,
    log_weight: Vec<f64>,
    uniform: Vec<f64>,
    segments: Vec<std::ops::Range<usize>>,
    /// `n × E` indicator summing each segment.
    scatter: Tensor,
}

impl EdgeLayout {
    fn new(g: &SessionGraph) -> Result<Self> {
        let n = g.node_count();
        let mut layout = EdgeLayout {
            pairs: Vec::new(),
            src: Vec::new(),
            dst: Vec::new(),
            log_weight: Vec::new(),
            uniform: Vec::new(),
            segments: Vec::with_capacity(n),
            scatter: Tensor::zeros(1, 1),
        };
        for i in 0..n {
            let nbrs = g.neighborhood(i)?;
            let start = layout.src.len();
            for &(j, w) in &nbrs {
                layout.pairs.push((i, j));
                layout.src.push(i);
                layout.dst.push(j);
                layout.log_weight.push((w as f64).ln());
                layout.uniform.push(1.0 / nbrs.len() as f64);
            }
            layout.segments.push(start..layout.src.len());
        }
        let e = layout.src.len();
        let mut scatter = Tensor::zeros(n, e);
        for (col, &i) in layout.src.iter().enumerate() {
            scatter.set(i, col, 1.0);
        }
        layout.scatter = scatter;
        Ok(layout)
    }
}

/// One hyperbolic graph-attention layer. `prev_tangent` is `log_o` of the
/// previous layer's points; the layer works under curvature `k`.
/// Returns the new points (under `k`) and the `E×1` attention weights.
fn graph_attention_layer(
    tape: &mut Tape,
    hyper: &HyperParams,
    vars: &ParamVars,
    layout: &EdgeLayout,
    prev_tangent: Var,
    k: Var,
) -> Result<(Var, Var)> {
    let points = lt::exp_origin(tape, prev_tangent, k)?;
    let weights = if hyper.aggregator.uses_attention() {
        let ti = tape.gather_rows(prev_tangent, &layout.src)?;
        let tj = tape.gather_rows(prev_tangent, &layout.dst)?;
        let feat = tape.concat_cols(&[ti, tj])?;
        let wt = tape.transpose(vars.attn_w)?;
        let raw = tape.matmul(feat, wt)?;
        let raw = tape.add(raw, vars.attn_b)?;
        let bias = tape.constant(Tensor::column_vector(layout.log_weight.clone()));
        let logits = tape.add(raw, bias)?;
        tape.segment_softmax(logits, &layout.segments)?
    } else {
        tape.constant(Tensor::column_vector(layout.uniform.clone()))
    };
    let xi = tape.gather_rows(points, &layout.src)?;
    let xj = tape.gather_rows(points, &layout.dst)?;
    let logs = lt::log_at(tape, xi, xj, k)?;
    let weighted = tape.mul(logs, weights)?;
    let scatter = tape.constant(layout.scatter.clone());
    let agg = tape.matmul(scatter, weighted)?;
    let out = lt::exp_at(tape, points, agg, k)?;
    Ok((out, weights))
}

/// Multi-hop fusion `z = exp_o^{k_out}(Σ_l softmax(α)_l · T_l)` over the
/// per-layer tangents `T_0 … T_L`.
pub fn fuse_layers(tape: &mut Tape, fusion: Var, tangents: &[Var], k_out: Var) -> Result<Var> {
    let weights = tape.softmax_rows(fusion)?;
    let mut acc: Option<Var> = None;
    for (l, &t) in tangents.iter().enumerate() {
        let w = tape.slice_cols(weights, l..l + 1)?;
        let term = tape.mul(t, w)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    let combined = acc.ok_or_else(|| HcgrError::invalid("fusion needs at least one layer"))?;
    lt::exp_origin(tape, combined, k_out)
}

/// One hyperbolic self-attention block with its feed-forward stage.
/// Input points live under `k_in`; output points live under the block's
/// `curv_ffn`. Returns `(output points, attention matrix, k_out)`.
fn self_attention_block(
    tape: &mut Tape,
    block: &BlockVars,
    input: Var,
    k_in: Var,
) -> Result<(Var, Var, Var)> {
    let d1 = tape.shape(input)[1];
    let k1 = lt::curvature(tape, block.curv_attn)?;
    let k2 = lt::curvature(tape, block.curv_ffn)?;

    let t = lt::log_origin(tape, input, k_in)?;
    let q = tape.matmul(t, block.w_q)?;
    let key = tape.matmul(t, block.w_k)?;
    let v = tape.matmul(t, block.w_v)?;
    let kt = tape.transpose(key)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (d1 as f64).sqrt())?;
    let attn = tape.softmax_rows(scores)?;
    let mixed = tape.matmul(attn, v)?;
    let mixed = lt::zero_time(tape, mixed)?;
    let f = lt::exp_origin(tape, mixed, k1)?;

    let h = lt::matmul_hyp(tape, f, block.w_1, k1)?;
    let h = lt::bias_add(tape, h, block.b_1, k1)?;
    let h = lt::activation(tape, h, Activation::LeakyRelu(FFN_LEAKY_SLOPE), k1, k2)?;
    let h = lt::matmul_hyp(tape, h, block.w_2, k2)?;
    let h = lt::bias_add(tape, h, block.b_2, k2)?;

    let ffn_tangent = lt::log_origin(tape, h, k2)?;
    let skip_tangent = lt::log_origin(tape, f, k1)?;
    let sum = tape.add(ffn_tangent, skip_tangent)?;
    let out = lt::exp_origin(tape, sum, k2)?;
    Ok((out, attn, k2))
}

/// Records the forward pass of one session on `tape`.
pub fn session_forward(
    tape: &mut Tape,
    hyper: &HyperParams,
    vars: &ParamVars,
    catalog: &CatalogVars,
    session: &[usize],
) -> Result<SessionVars> {
    if session.is_empty() {
        return Err(HcgrError::invalid("cannot score an empty session"));
    }
    let n_items = tape.shape(vars.embeddings)[0];
    if let Some(bad) = session.iter().find(|&&i| i >= n_items) {
        return Err(HcgrError::invalid(format!(
            "item {bad} outside catalog of size {n_items}"
        )));
    }
    let start = session.len().saturating_sub(hyper.max_session_len);
    let graph = build_graph_from_items(&session[start..])?;
    let layout = EdgeLayout::new(&graph)?;

    // layer 0: embeddings under k_0
    let mut tangents = vec![tape.gather_rows(catalog.tangents, graph.nodes())?];
    let mut graph_attention = Vec::with_capacity(hyper.layers);
    let mut last_points = tape.gather_rows(catalog.points, graph.nodes())?;
    let mut k_last = catalog.k0;
    for l in 1..=hyper.layers {
        let k = lt::curvature(tape, vars.graph_curvatures[l])?;
        let prev = *tangents.last().expect("layer 0 present");
        let (points, weights) = graph_attention_layer(tape, hyper, vars, &layout, prev, k)?;
        graph_attention.push((layout.pairs.clone(), weights));
        tangents.push(lt::log_origin(tape, points, k)?);
        last_points = points;
        k_last = k;
    }

    let fused = if hyper.aggregator.fuses_layers() {
        fuse_layers(tape, vars.fusion, &tangents, k_last)?
    } else {
        last_points
    };
    let fused_tangent = lt::log_origin(tape, fused, k_last)?;

    let mut seq = fused;
    let mut k_seq = k_last;
    let mut self_attention = Vec::with_capacity(vars.blocks.len());
    for block in &vars.blocks {
        let (out, attn, k_out) = self_attention_block(tape, block, seq, k_seq)?;
        self_attention.push(attn);
        seq = out;
        k_seq = k_out;
    }
    let seq_tangent = lt::log_origin(tape, seq, k_seq)?;

    let last = graph.position_of_last();
    let long_term = tape.gather_rows(seq_tangent, &[last])?;
    let short_term = tape.gather_rows(fused_tangent, &[last])?;
    let w = tape.sigmoid(vars.gate)?;
    let one_minus_w = tape.affine(w, -1.0, 1.0)?;
    let a = tape.mul(long_term, w)?;
    let b = tape.mul(short_term, one_minus_w)?;
    let o_vec = tape.add(a, b)?;

    let cat_t = tape.transpose(catalog.tangents)?;
    let logits = tape.matmul(o_vec, cat_t)?;
    let probs = tape.softmax_rows(logits)?;

    Ok(SessionVars {
        graph,
        logits,
        probs,
        o_vec,
        graph_attention,
        self_attention,
    })
}
