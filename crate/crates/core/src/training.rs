//! Joint loss, negative sampling, Adam, the epoch loop and early stopping.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::Pair;
use crate::error::{HcgrError, Result};
use crate::lorentz_tape as lt;
use crate::manifold::{self, LorentzPoint};
use crate::metrics::{self, RankingMetrics};
use crate::model::{self, CatalogVars, Model, ModelParams};
use crate::tensor::Tensor;

pub const PROB_CLAMP: f64 = 1e-12;

/// Sessions per gradient-accumulation chunk. Chunks are summed in order,
/// which keeps results independent of the thread count.
pub const GRAD_CHUNK: usize = 8;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            lr_decay: 0.5,
            decay_every: 3,
            l2: 3e-3,
            batch_size: 128,
            epochs: 30,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(HcgrError::invalid("learning_rate must be > 0"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(HcgrError::invalid("lr_decay must be in (0, 1]"));
        }
        if self.decay_every == 0 {
            return Err(HcgrError::invalid("decay_every must be >= 1"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(HcgrError::invalid("l2 must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(HcgrError::invalid("batch_size must be >= 1"));
        }
        if self.patience == 0 {
            return Err(HcgrError::invalid("patience must be >= 1"));
        }
        Ok(())
    }

    /// Learning rate used during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let halvings = epoch.saturating_sub(1) / self.decay_every.max(1);
        self.learning_rate * self.lr_decay.powi(halvings as i32)
    }
}

/// Binary cross-entropy of a probability vector against a one-hot target.
pub fn cross_entropy_loss(probs: &[f64], target: usize) -> Result<f64> {
    if target >= probs.len() {
        return Err(HcgrError::invalid(format!(
            "target {target} outside catalog of size {}",
            probs.len()
        )));
    }
    let mut loss = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= if i == target { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(loss)
}

/// Hinge over hyperbolic distances: `Σ_neg max(d(a,p) − d(a,n) + ξ, 0)`.
pub fn contrastive_loss(
    anchor: &LorentzPoint,
    positive: &LorentzPoint,
    negatives: &[LorentzPoint],
    margin: f64,
) -> Result<f64> {
    if negatives.is_empty() {
        return Err(HcgrError::invalid(
            "contrastive loss needs at least one negative",
        ));
    }
    let d_pos = manifold::distance(anchor, positive)?;
    let mut loss = 0.0;
    for n in negatives {
        loss += (d_pos - manifold::distance(anchor, n)? + margin).max(0.0);
    }
    Ok(loss)
}

/// Cross-entropy of `probs` (`1×|V|`) recorded on the tape.
pub fn cross_entropy_on_tape(tape: &mut Tape, probs: Var, target: usize) -> Result<Var> {
    let p = tape.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let q = tape.affine(p, -1.0, 1.0)?;
    let log_q = tape.log(q)?;
    let all = tape.sum(log_q)?;
    let log_q_t = tape.slice_cols(log_q, target..target + 1)?;
    let p_t = tape.slice_cols(p, target..target + 1)?;
    let log_p_t = tape.log(p_t)?;
    let rest = tape.sub(all, log_q_t)?;
    let sum = tape.add(rest, log_p_t)?;
    tape.neg(sum)
}

/// Contrastive loss with anchor `exp_o^{k0}(o_vec)` and catalog points as
/// positive and negatives.
pub fn contrastive_on_tape(
    tape: &mut Tape,
    o_vec: Var,
    catalog: &CatalogVars,
    target: usize,
    negatives: &[usize],
    margin: f64,
) -> Result<Var> {
    if negatives.is_empty() {
        return Err(HcgrError::invalid(
            "contrastive loss needs at least one negative",
        ));
    }
    let anchor = lt::exp_origin(tape, o_vec, catalog.k0)?;
    let pos = tape.gather_rows(catalog.points, &[target])?;
    let negs = tape.gather_rows(catalog.points, negatives)?;
    let anchors = tape.gather_rows(anchor, &vec![0; negatives.len()])?;
    let d_pos = lt::distance(tape, anchor, pos, catalog.k0)?;
    let d_neg = lt::distance(tape, anchors, negs, catalog.k0)?;
    let gap = tape.sub(d_pos, d_neg)?;
    let shifted = tape.affine(gap, 1.0, margin)?;
    let hinge = tape.relu(shifted)?;
    tape.sum(hinge)
}

/// Draws `m` uniform negatives with replacement, excluding the session's
/// items and the target.
pub fn sample_negatives(
    rng: &mut impl Rng,
    catalog_size: usize,
    pair: &Pair,
    m: usize,
) -> Result<Vec<usize>> {
    let excluded = |i: usize| i == pair.target || pair.prefix.contains(&i);
    let allowed = (0..catalog_size).filter(|&i| !excluded(i)).count();
    if allowed == 0 {
        return Err(HcgrError::invalid(format!(
            "session {} covers the whole catalog; no negatives available",
            pair.session
        )));
    }
    Ok((0..m)
        .map(|_| loop {
            let c = rng.random_range(0..catalog_size);
            if !excluded(c) {
                break c;
            }
        })
        .collect())
}

/// Loss value and (optionally) gradient for one batch.
#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub total: f64,
    /// Mean cross-entropy over the batch.
    pub cross_entropy: f64,
    /// Mean contrastive loss over the batch.
    pub contrastive: f64,
    pub l2: f64,
    /// One tensor per parameter, in [`ModelParams::named`] order.
    pub grads: Option<Vec<Tensor>>,
}

struct Partial {
    ce: f64,
    lc: f64,
    grads: Option<Vec<Tensor>>,
}

fn add_into(acc: &mut [Tensor], g: &[Tensor]) {
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
            *x += y;
        }
    }
}

fn session_term(
    model: &Model,
    pair: &Pair,
    negatives: &[usize],
    scale: f64,
    with_grad: bool,
) -> Result<Partial> {
    let hyper = &model.hyper;
    let mut tape = Tape::new();
    let vars = model.params.to_tape(&mut tape);
    let catalog = model::catalog_on_tape(&mut tape, &vars)?;
    let out = model::session_forward(&mut tape, hyper, &vars, &catalog, &pair.prefix)?;
    let ce = cross_entropy_on_tape(&mut tape, out.probs, pair.target)?;
    let lc = contrastive_on_tape(
        &mut tape,
        out.o_vec,
        &catalog,
        pair.target,
        negatives,
        hyper.margin,
    )?;
    let ce_v = tape.value(ce).item();
    let lc_v = tape.value(lc).item();
    let grads = if with_grad {
        let a = tape.scale(ce, hyper.gamma * scale)?;
        let b = tape.scale(lc, hyper.beta * scale)?;
        let loss = tape.add(a, b)?;
        let mut g = tape.backward(loss)?;
        Some(vars.ordered().into_iter().map(|v| g.take(v)).collect())
    } else {
        None
    };
    Ok(Partial {
        ce: ce_v,
        lc: lc_v,
        grads,
    })
}

/// `Σ‖θ‖²` over every parameter except curvatures.
pub fn l2_norm_sq(params: &ModelParams) -> f64 {
    params
        .named()
        .iter()
        .filter(|(n, _)| !model::is_curvature(n))
        .map(|(_, t)| t.sum_squares())
        .sum()
}

/// `γ·mean(L_e) + β·mean(L_c) + l2·Σ‖θ‖²` over `pairs`, with `negatives[i]`
/// drawn for `pairs[i]`. Parallel over fixed chunks on the current rayon pool.
pub fn batch_loss(
    model: &Model,
    pairs: &[Pair],
    negatives: &[Vec<usize>],
    l2: f64,
    with_grad: bool,
) -> Result<BatchLoss> {
    if pairs.is_empty() {
        return Err(HcgrError::invalid("empty batch"));
    }
    if negatives.len() != pairs.len() {
        return Err(HcgrError::invalid("one negative list per pair is required"));
    }
    let scale = 1.0 / pairs.len() as f64;
    let chunks: Vec<Partial> = pairs
        .par_chunks(GRAD_CHUNK)
        .zip(negatives.par_chunks(GRAD_CHUNK))
        .map(|(ps, ns)| {
            let mut acc = Partial {
                ce: 0.0,
                lc: 0.0,
                grads: None,
            };
            for (p, n) in ps.iter().zip(ns) {
                let part = session_term(model, p, n, scale, with_grad)?;
                acc.ce += part.ce;
                acc.lc += part.lc;
                match (&mut acc.grads, part.grads) {
                    (Some(a), Some(g)) => add_into(a, &g),
                    (slot @ None, g) => *slot = g,
                    _ => {}
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    let (mut ce, mut lc) = (0.0, 0.0);
    let mut grads: Option<Vec<Tensor>> = None;
    for c in chunks {
        ce += c.ce;
        lc += c.lc;
        match (&mut grads, c.grads) {
            (Some(a), Some(g)) => add_into(a, &g),
            (slot @ None, g) => *slot = g,
            _ => {}
        }
    }
    let ce = ce * scale;
    let lc = lc * scale;
    let l2_term = l2 * l2_norm_sq(&model.params);
    if let Some(g) = grads.as_mut() {
        for ((name, p), gt) in model.params.named().into_iter().zip(g.iter_mut()) {
            if !model::is_curvature(&name) {
                for (x, &w) in gt.data_mut().iter_mut().zip(p.data()) {
                    *x += 2.0 * l2 * w;
                }
            }
        }
    }
    let h = &model.hyper;
    Ok(BatchLoss {
        total: h.gamma * ce + h.beta * lc + l2_term,
        cross_entropy: ce,
        contrastive: lc,
        l2: l2_term,
        grads,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params
            .named()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (((_, p), g), (m, v)) in params
            .named_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((w, &g), (m, v)) in it {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
}

impl TrainState {
    pub fn new(model: Model) -> Self {
        let adam = Adam::new(&model.params);
        TrainState {
            model,
            adam,
            epoch: 0,
        }
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Batch-size-weighted mean of the batch totals.
    pub loss: f64,
    pub lr: f64,
}

/// One pass over `train` in an order shuffled by `(seed, epoch)`.
pub fn train_epoch(
    state: &mut TrainState,
    train: &[Pair],
    cfg: &TrainConfig,
) -> Result<EpochStats> {
    if train.is_empty() {
        return Err(HcgrError::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(HcgrError::invalid("batch_size must be >= 1"));
    }
    let epoch = state.epoch + 1;
    let lr = cfg.lr_at(epoch);
    let mut rng = epoch_rng(cfg.seed, epoch);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let n_items = state.model.catalog_size();
    let mut weighted = 0.0;
    for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
        let batch: Vec<Pair> = idx.iter().map(|&i| train[i].clone()).collect();
        let negatives = batch
            .iter()
            .map(|p| sample_negatives(&mut rng, n_items, p, state.model.hyper.negatives))
            .collect::<Result<Vec<_>>>()?;
        let numeric =
            |detail: String| HcgrError::numeric(format!("epoch {epoch}, batch {b}: {detail}"));
        let res =
            batch_loss(&state.model, &batch, &negatives, cfg.l2, true).map_err(|e| match e {
                HcgrError::Numeric { context } => numeric(context),
                other => other,
            })?;
        let grads = res.grads.expect("gradients requested");
        if !res.total.is_finite() || grads.iter().any(|g| !g.all_finite()) {
            return Err(numeric("non-finite loss or gradient".into()));
        }
        state.adam.step(&mut state.model.params, &grads, lr);
        if !state.model.params.all_finite() {
            return Err(numeric("parameters became non-finite".into()));
        }
        weighted += res.total * batch.len() as f64;
    }
    state.epoch = epoch;
    Ok(EpochStats {
        epoch,
        loss: weighted / train.len() as f64,
        lr,
    })
}

pub const VALIDATION_K: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_hr20: f64,
    pub val_mrr20: f64,
    pub val_ndcg20: f64,
    pub lr: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} loss={:.6} val_hr20={:.6} val_mrr20={:.6} val_ndcg20={:.6} lr={}",
            self.epoch, self.loss, self.val_hr20, self.val_mrr20, self.val_ndcg20, self.lr
        )
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Snapshot from the best validation epoch (the initial model if no epoch ran).
    pub best: Model,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_val_mrr20: f64,
    pub history: Vec<EpochLog>,
}

pub fn validation_metrics(model: &Model, valid: &[Pair]) -> Result<RankingMetrics> {
    metrics::evaluate(model, valid, &[VALIDATION_K])
}

/// Trains until `cfg.epochs` or until validation MRR@20 fails to improve for
/// `cfg.patience` consecutive epochs. Calls `on_epoch` after every epoch.
pub fn fit(
    model: Model,
    cfg: &TrainConfig,
    train: &[Pair],
    valid: &[Pair],
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(HcgrError::EmptyDataset);
    }
    let mut state = TrainState::new(model);
    let mut out = FitOutcome {
        best: state.model.clone(),
        best_epoch: 0,
        best_val_mrr20: f64::NEG_INFINITY,
        history: Vec::new(),
    };
    let mut stale = 0;
    while state.epoch < cfg.epochs {
        let stats = train_epoch(&mut state, train, cfg)?;
        let val = validation_metrics(&state.model, valid)?;
        let log = EpochLog {
            epoch: stats.epoch,
            loss: stats.loss,
            val_hr20: val.hr[&VALIDATION_K],
            val_mrr20: val.mrr[&VALIDATION_K],
            val_ndcg20: val.ndcg[&VALIDATION_K],
            lr: stats.lr,
        };
        on_epoch(&log);
        let improved = log.val_mrr20 > out.best_val_mrr20;
        out.history.push(log);
        if improved {
            out.best = state.model.clone();
            out.best_epoch = stats.epoch;
            out.best_val_mrr20 = out.history.last().expect("pushed").val_mrr20;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub n_checked: usize,
    pub passed: bool,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "max_rel_error={:.3e} worst={}[{}] checked={} {}",
            self.max_rel_error,
            self.worst_param,
            self.worst_index,
            self.n_checked,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Relative error floor: differences below this absolute scale count as
/// agreement.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Central differences of `f` at `x` against `analytic`; returns the largest
/// relative error and its index.
pub fn compare_gradients(
    x: &[f64],
    analytic: &[f64],
    h: f64,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<(f64, usize)> {
    let mut probe = x.to_vec();
    let mut worst = (0.0, 0);
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        let err = relative_error(analytic[i], (up - down) / (2.0 * h));
        if err > worst.0 || err.is_nan() {
            worst = (err, i);
        }
    }
    Ok(worst)
}

/// Finite-difference check of [`batch_loss`] over every scalar parameter.
pub fn gradient_check(
    model: &Model,
    pairs: &[Pair],
    negatives: &[Vec<usize>],
    l2: f64,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let analytic = batch_loss(model, pairs, negatives, l2, true)?
        .grads
        .expect("gradients requested");
    let names: Vec<(String, usize)> = model
        .params
        .named()
        .into_iter()
        .flat_map(|(n, t)| (0..t.len()).map(move |i| (n.clone(), i)))
        .collect();
    let flat_grad: Vec<f64> = analytic.iter().flat_map(|t| t.data().to_vec()).collect();
    let flat_x: Vec<f64> = model
        .params
        .named()
        .iter()
        .flat_map(|(_, t)| t.data().to_vec())
        .collect();
    let mut probe = model.clone();
    let (err, idx) = compare_gradients(&flat_x, &flat_grad, h, |x| {
        let mut offset = 0;
        for (_, t) in probe.params.named_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&x[offset..offset + n]);
            offset += n;
        }
        Ok(batch_loss(&probe, pairs, negatives, l2, false)?.total)
    })?;
    Ok(GradCheckReport {
        max_rel_error: err,
        worst_param: names[idx].0.clone(),
        worst_index: names[idx].1,
        n_checked: flat_x.len(),
        passed: err < tol,
    })
}
