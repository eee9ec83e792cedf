//! Acceptance suite. Runs every criterion in order and prints one line per
//! criterion; exits non-zero if any fails.

#[path = "../../core/tests/support/mod.rs"]
mod oracle;

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use hcgr_core::checkpoint;
use hcgr_core::data::{self, Dataset, PreprocessConfig};
use hcgr_core::diagnostics::{self, ManifoldOps, SuiteConfig};
use hcgr_core::metrics::{self, PopularityScorer, RankingMetrics};
use hcgr_core::model::{Aggregator, HyperParams, Model};
use hcgr_core::training::{self, FitOutcome, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn manifold_suite() -> Outcome {
    let start = Instant::now();
    let report = diagnostics::run_manifold_suite(&ManifoldOps::default(), &SuiteConfig::thorough());
    let took = start.elapsed();
    let worst: Vec<String> = report
        .results
        .iter()
        .map(|r| format!("{}={:.1e}", r.name, r.worst))
        .collect();
    let detail = format!("{} in {}", worst.join(" "), secs(took));
    ensure(report.passed() && took < Duration::from_secs(10), detail)
}

fn geodesic() -> Outcome {
    let errs = diagnostics::geodesic_check().map_err(|e| e.to_string())?;
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    ensure(
        errs.len() == 3 && worst < 1e-10,
        format!("max |d - t| = {worst:.1e}"),
    )
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let sweep = diagnostics::toy_gradient_sweep(0).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let parts: Vec<String> = sweep
        .iter()
        .map(|(beta, r)| {
            format!(
                "beta={beta}: {:.2e} ({} params)",
                r.max_rel_error, r.n_checked
            )
        })
        .collect();
    let ok = sweep.len() == 2
        && sweep.iter().all(|(_, r)| r.max_rel_error < 1e-3)
        && took < Duration::from_secs(60);
    ensure(ok, format!("{} in {}", parts.join(", "), secs(took)))
}

fn forward_oracle() -> Outcome {
    let worst = oracle::forward_sweep(50, &mut ChaCha8Rng::seed_from_u64(4));
    ensure(
        worst <= 1e-9,
        format!("50 sessions, worst deviation {worst:.1e}"),
    )
}

/// Brute-force definitions over an explicit ranked list with a single
/// relevant item.
fn brute(order: &[usize], target: usize, k: usize) -> (f64, f64, f64) {
    let rel = |i: usize| if order[i] == target { 1.0 } else { 0.0 };
    let hr = (0..k).map(rel).fold(0.0, f64::max);
    let dcg: f64 = (0..k).map(|i| rel(i) / ((i + 2) as f64).log2()).sum();
    let idcg = 1.0 / 2f64.log2();
    let mrr = (0..k).map(|i| rel(i) / (i + 1) as f64).fold(0.0, f64::max);
    (hr, dcg / idcg, mrr)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut a: Vec<usize> = (0..n).collect();
    let mut c = vec![0; n];
    out.push(a.clone());
    let mut i = 0;
    // Heap's algorithm
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let perms = permutations(8);
    let mut mismatches = 0usize;
    let mut checks = 0usize;
    for order in &perms {
        let mut scores = vec![0.0; 8];
        for (pos, &item) in order.iter().enumerate() {
            scores[item] = (8 - pos) as f64 * 0.5;
        }
        if metrics::ranked_list(&scores) != *order {
            mismatches += 1;
        }
        for target in 0..8 {
            let rank = metrics::rank_of(&scores, target);
            for k in [1, 5, 8] {
                let (hr, ndcg, mrr) = brute(order, target, k);
                let fast = [
                    metrics::hit_rate_at_k(order, target, k),
                    metrics::ndcg_at_k(order, target, k),
                    metrics::mrr_at_k(order, target, k),
                    metrics::hit_from_rank(Some(rank), k),
                    metrics::ndcg_from_rank(Some(rank), k),
                    metrics::mrr_from_rank(Some(rank), k),
                ];
                let want = [hr, ndcg, mrr, hr, ndcg, mrr];
                checks += 1;
                if fast
                    .iter()
                    .zip(&want)
                    .any(|(a, b)| a.to_bits() != b.to_bits())
                {
                    mismatches += 1;
                }
            }
        }
    }
    let took = start.elapsed();
    ensure(
        perms.len() == 40_320 && mismatches == 0 && took < Duration::from_secs(5),
        format!(
            "{} orderings, {checks} (ordering, target, K) cases, {mismatches} mismatches in {}",
            perms.len(),
            secs(took)
        ),
    )
}

const DESK_SEED: u64 = 7;

fn desk_hyper(aggregator: Aggregator) -> HyperParams {
    HyperParams {
        dim: 16,
        aggregator,
        ..HyperParams::default()
    }
}

fn desk_train() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.01,
        batch_size: 32,
        l2: 1e-4,
        epochs: 100,
        patience: 10,
        seed: DESK_SEED,
        ..TrainConfig::default()
    }
}

fn desk_data() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| {
        let raw = data::synth_hierarchical(100, 2000, DESK_SEED).expect("synthetic corpus");
        let cfg = PreprocessConfig {
            seed: DESK_SEED,
            ..PreprocessConfig::default()
        };
        data::preprocess(&raw, &cfg).expect("preprocess")
    })
}

struct DeskRun {
    fit: FitOutcome,
    test: RankingMetrics,
    took: Duration,
}

/// Trains on a single worker thread.
fn desk_run(aggregator: Aggregator) -> Result<DeskRun, String> {
    let ds = desk_data();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    pool.install(|| {
        let start = Instant::now();
        let model = Model::new(
            desk_hyper(aggregator),
            ds.catalog_size(),
            &mut ChaCha8Rng::seed_from_u64(DESK_SEED),
        )
        .map_err(|e| e.to_string())?;
        let fit = training::fit(model, &desk_train(), &ds.train, &ds.valid, &mut |_| {})
            .map_err(|e| e.to_string())?;
        let took = start.elapsed();
        let test = metrics::evaluate(&fit.best, &ds.test, &[10, 20]).map_err(|e| e.to_string())?;
        Ok(DeskRun { fit, test, took })
    })
}

fn multi_hop_run() -> &'static Result<DeskRun, String> {
    static RUN: OnceLock<Result<DeskRun, String>> = OnceLock::new();
    RUN.get_or_init(|| desk_run(Aggregator::MultiHop))
}

fn desk_learning() -> Outcome {
    let run = multi_hop_run().as_ref().map_err(Clone::clone)?;
    let ds = desk_data();
    let losses: Vec<f64> = run.fit.history.iter().take(5).map(|l| l.loss).collect();
    let monotone = losses.len() == 5 && losses.windows(2).all(|w| w[1] < w[0]);
    let pop = metrics::evaluate(
        &PopularityScorer {
            counts: ds.train_counts.clone(),
        },
        &ds.test,
        &[10],
    )
    .map_err(|e| e.to_string())?;
    let (hr, pop_hr) = (run.test.hr[&10], pop.hr[&10]);
    let regions =
        metrics::hierarchy_report(&run.fit.best, &ds.train_counts).map_err(|e| e.to_string())?;
    let (r1, r4) = (regions[0].mean_interactions, regions[3].mean_interactions);
    let detail = format!(
        "(a) first losses {} {}; (b) HR@10 {hr:.4} vs popularity {pop_hr:.4}; \
         (c) region1 {r1:.2} vs region4 {r4:.2}; best epoch {} of {} in {}",
        losses
            .iter()
            .map(|l| format!("{l:.3}"))
            .collect::<Vec<_>>()
            .join(" > "),
        if monotone { "ok" } else { "NOT monotone" },
        run.fit.best_epoch,
        run.fit.history.len(),
        secs(run.took)
    );
    ensure(
        monotone && hr >= pop_hr + 0.05 && r1 >= r4 && run.took < Duration::from_secs(600),
        detail,
    )
}

fn ablation() -> Outcome {
    let multi = multi_hop_run().as_ref().map_err(Clone::clone)?;
    let gcn = desk_run(Aggregator::GcnMean)?;
    let (a, b) = (multi.test.mrr[&10], gcn.test.mrr[&10]);
    ensure(
        a >= b,
        format!("multi_hop MRR@10 {a:.4} vs gcn_mean {b:.4}"),
    )
}

fn cli_pipeline(dir: &Path) -> Result<Vec<u8>, String> {
    let bin = env!("CARGO_BIN_EXE_hcgr");
    let p = |name: &str| dir.join(name).display().to_string();
    let seed = DESK_SEED.to_string();
    let steps: Vec<Vec<String>> = vec![
        vec![
            "synth",
            "--items",
            "100",
            "--sessions",
            "2000",
            "--output",
            &p("corpus.txt"),
        ],
        vec![
            "prepare",
            "--input",
            &p("corpus.txt"),
            "--output",
            &p("data.json"),
        ],
        vec![
            "train",
            "--data",
            &p("data.json"),
            "--checkpoint-out",
            &p("run/model.json"),
            "--dim",
            "16",
            "--learning-rate",
            "0.01",
            "--batch-size",
            "32",
            "--l2",
            "1e-4",
            "--epochs",
            "100",
            "--patience",
            "10",
        ],
        vec![
            "eval",
            "--data",
            &p("data.json"),
            "--checkpoint",
            &p("run/model.json"),
            "--out",
            &p("eval/metrics.csv"),
        ],
    ]
    .into_iter()
    .map(|s| s.into_iter().map(String::from).collect())
    .collect();
    for mut args in steps {
        args.extend(["--seed".to_string(), seed.clone()]);
        let out = Command::new(bin)
            .args(&args)
            .env_remove("HCGR_SEED")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!(
                "`hcgr {}` failed: {}",
                args[0],
                String::from_utf8_lossy(&out.stderr)
            ));
        }
    }
    std::fs::read(dir.join("eval/metrics.csv")).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = cli_pipeline(a.path())?;
    let second = cli_pipeline(b.path())?;
    ensure(
        !first.is_empty() && first == second,
        format!(
            "metrics CSV {} bytes, identical = {}",
            first.len(),
            first == second
        ),
    )
}

fn checkpoint_roundtrip() -> Outcome {
    let run = multi_hop_run().as_ref().map_err(Clone::clone)?;
    let ds = desk_data();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.json");
    checkpoint::save(&run.fit.best, DESK_SEED, &path).map_err(|e| e.to_string())?;
    let (loaded, seed) = checkpoint::load(&path).map_err(|e| e.to_string())?;
    let before =
        metrics::evaluate(&run.fit.best, &ds.test, &[10, 20]).map_err(|e| e.to_string())?;
    let after = metrics::evaluate(&loaded, &ds.test, &[10, 20]).map_err(|e| e.to_string())?;
    let same_bits = |x: &RankingMetrics, y: &RankingMetrics| {
        [(&x.hr, &y.hr), (&x.ndcg, &y.ndcg), (&x.mrr, &y.mrr)]
            .iter()
            .all(|(p, q)| {
                p.len() == q.len()
                    && p.iter()
                        .zip(q.iter())
                        .all(|(a, b)| a.0 == b.0 && a.1.to_bits() == b.1.to_bits())
            })
    };
    let probs_equal = ds.test.iter().take(20).all(|p| {
        let a = run.fit.best.forward(&p.prefix).expect("forward");
        let b = loaded.forward(&p.prefix).expect("forward");
        a.probs
            .iter()
            .zip(&b.probs)
            .all(|(x, y)| x.to_bits() == y.to_bits())
    });
    ensure(
        seed == DESK_SEED && loaded == run.fit.best && same_bits(&before, &after) && probs_equal,
        format!(
            "parameters equal = {}, metrics bit-identical = {}, probabilities bit-identical = {probs_equal}",
            loaded == run.fit.best,
            same_bits(&before, &after)
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("manifold suite", manifold_suite),
        ("analytic geodesic", geodesic),
        ("gradient correctness", gradients),
        ("forward-pass oracle", forward_oracle),
        ("metric oracle", metric_oracle),
        ("desk-scale learning", desk_learning),
        ("ablation direction", ablation),
        ("determinism", determinism),
        ("checkpoint round-trip", checkpoint_roundtrip),
    ];
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        let result = panic::catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_text(&p))));
        let (status, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {} {name:<22} {status}  {detail}", n + 1);
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}
