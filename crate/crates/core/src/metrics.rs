//! Top-K ranking metrics, evaluation over a split, and the hierarchy and
//! embedding reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::Pair;
use crate::error::{HcgrError, Result};
use crate::manifold;
use crate::model::Model;

/// Anything that scores every catalog item for a session prefix.
pub trait Scorer: Sync {
    fn catalog_size(&self) -> usize;
    fn score(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

impl Scorer for Model {
    fn catalog_size(&self) -> usize {
        Model::catalog_size(self)
    }

    /// Raw logits; ranking by them equals ranking by the softmax.
    fn score(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        Ok(self.forward(prefix)?.logits)
    }
}

/// Scores every item by its training click count.
#[derive(Clone, Debug)]
pub struct PopularityScorer {
    pub counts: Vec<u64>,
}

impl Scorer for PopularityScorer {
    fn catalog_size(&self) -> usize {
        self.counts.len()
    }

    fn score(&self, _prefix: &[usize]) -> Result<Vec<f64>> {
        Ok(self.counts.iter().map(|&c| c as f64).collect())
    }
}

/// Item ids by descending score, ties by ascending id.
pub fn ranked_list(scores: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ids
}

/// 1-based rank of `target` under the same ordering as [`ranked_list`].
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s > t || (s == t && i < target))
        .count()
}

fn position(ranked: &[usize], target: usize) -> Option<usize> {
    ranked.iter().position(|&i| i == target).map(|p| p + 1)
}

pub fn hit_rate_at_k(ranked: &[usize], target: usize, k: usize) -> f64 {
    hit_from_rank(position(ranked, target), k)
}

pub fn mrr_at_k(ranked: &[usize], target: usize, k: usize) -> f64 {
    mrr_from_rank(position(ranked, target), k)
}

pub fn ndcg_at_k(ranked: &[usize], target: usize, k: usize) -> f64 {
    ndcg_from_rank(position(ranked, target), k)
}

pub fn hit_from_rank(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    }
}

pub fn mrr_from_rank(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0 / r as f64,
        _ => 0.0,
    }
}

pub fn ndcg_from_rank(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingMetrics {
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub mrr: BTreeMap<usize, f64>,
    pub n_evaluated: usize,
}

pub const METRICS_CSV_HEADER: &str = "split,K,hit_rate,ndcg,mrr,n";

impl RankingMetrics {
    /// CSV rows (without header) for one split.
    pub fn csv_rows(&self, split: &str) -> String {
        let mut out = String::new();
        for (k, hr) in &self.hr {
            writeln!(
                out,
                "{split},{k},{hr},{},{},{}",
                self.ndcg[k], self.mrr[k], self.n_evaluated
            )
            .expect("string write");
        }
        out
    }

    pub fn table(&self, split: &str) -> String {
        let mut out = format!(
            "{:<6} {:>4} {:>9} {:>9} {:>9} {:>7}\n",
            "split", "K", "HR", "NDCG", "MRR", "n"
        );
        for (k, hr) in &self.hr {
            writeln!(
                out,
                "{split:<6} {k:>4} {hr:>9.4} {:>9.4} {:>9.4} {:>7}",
                self.ndcg[k], self.mrr[k], self.n_evaluated
            )
            .expect("string write");
        }
        out
    }
}

/// Ranks the full catalog for every pair and averages the metrics at each K.
/// Runs on the current rayon pool; the reduction is sequential in pair order,
/// so results do not depend on the thread count.
pub fn evaluate(scorer: &dyn Scorer, pairs: &[Pair], ks: &[usize]) -> Result<RankingMetrics> {
    if pairs.is_empty() {
        return Err(HcgrError::EmptyDataset);
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(HcgrError::invalid("cutoffs must be nonempty and positive"));
    }
    let n_items = scorer.catalog_size();
    let ranks: Vec<usize> = pairs
        .par_iter()
        .map(|p| {
            if p.target >= n_items {
                return Err(HcgrError::invalid(format!(
                    "target {} outside catalog of size {n_items}",
                    p.target
                )));
            }
            let scores = scorer.score(&p.prefix)?;
            if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
                return Err(HcgrError::numeric(format!(
                    "score of item {i} is not finite"
                )));
            }
            Ok(rank_of(&scores, p.target))
        })
        .collect::<Result<_>>()?;

    let n = ranks.len() as f64;
    let mut m = RankingMetrics {
        hr: BTreeMap::new(),
        ndcg: BTreeMap::new(),
        mrr: BTreeMap::new(),
        n_evaluated: ranks.len(),
    };
    for &k in ks {
        let (mut h, mut g, mut r) = (0.0, 0.0, 0.0);
        for &rank in &ranks {
            h += hit_from_rank(Some(rank), k);
            g += ndcg_from_rank(Some(rank), k);
            r += mrr_from_rank(Some(rank), k);
        }
        m.hr.insert(k, h / n);
        m.ndcg.insert(k, g / n);
        m.mrr.insert(k, r / n);
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionRow {
    /// 1 = nearest the origin.
    pub region: usize,
    pub n_items: usize,
    pub mean_distance: f64,
    pub mean_interactions: f64,
}

pub const HIERARCHY_CSV_HEADER: &str = "region,n_items,mean_dist_to_origin,mean_interactions";

/// Distance of every item's embedding from the origin.
pub fn origin_distances(model: &Model) -> Result<Vec<f64>> {
    let k = model.graph_curvature(0);
    let o = manifold::origin(model.params.dim(), k);
    (0..model.catalog_size())
        .map(|i| manifold::distance(&o, &model.embed(i)?))
        .collect()
}

/// Four equal-population regions by distance to the origin (ties by id),
/// each with its mean training interaction count.
pub fn hierarchy_report(model: &Model, counts: &[u64]) -> Result<Vec<RegionRow>> {
    let n = model.catalog_size();
    if counts.len() != n {
        return Err(HcgrError::invalid(
            "interaction counts do not match the catalog",
        ));
    }
    if n < 4 {
        return Err(HcgrError::invalid(
            "hierarchy report needs at least 4 items",
        ));
    }
    let dist = origin_distances(model)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    Ok((0..4)
        .map(|r| {
            let members = &order[r * n / 4..(r + 1) * n / 4];
            let m = members.len() as f64;
            RegionRow {
                region: r + 1,
                n_items: members.len(),
                mean_distance: members.iter().map(|&i| dist[i]).sum::<f64>() / m,
                mean_interactions: members.iter().map(|&i| counts[i] as f64).sum::<f64>() / m,
            }
        })
        .collect())
}

pub fn hierarchy_csv(rows: &[RegionRow]) -> String {
    let mut out = format!("{HIERARCHY_CSV_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.region, r.n_items, r.mean_distance, r.mean_interactions
        )
        .expect("string write");
    }
    out
}

/// `item_id,interaction_count,dist_to_origin,c1..c{d+1}`, one row per item.
pub fn embedding_csv(model: &Model, catalog: &[String], counts: &[u64]) -> Result<String> {
    let n = model.catalog_size();
    if catalog.len() != n || counts.len() != n {
        return Err(HcgrError::invalid(
            "catalog metadata does not match the model",
        ));
    }
    let dist = origin_distances(model)?;
    let mut out = String::from("item_id,interaction_count,dist_to_origin");
    for c in 1..=model.params.dim() + 1 {
        write!(out, ",c{c}").expect("string write");
    }
    out.push('\n');
    for i in 0..n {
        write!(out, "{},{},{}", catalog[i], counts[i], dist[i]).expect("string write");
        for c in model.embed(i)?.coords() {
            write!(out, ",{c}").expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}
