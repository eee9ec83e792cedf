//! `hcgr` command-line driver.
//!
//! Exit codes: 0 success, 1 check failure, 2 input or usage error,
//! 3 numeric failure.

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hcgr_core::checkpoint;
use hcgr_core::data::{self, Dataset, Split};
use hcgr_core::diagnostics::{self, ManifoldOps, SuiteConfig};
use hcgr_core::metrics::{self, PopularityScorer, Scorer, METRICS_CSV_HEADER};
use hcgr_core::model::Model;
use hcgr_core::training;
use hcgr_core::{HcgrError, Result};

use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const RUN_CONFIG_FILE: &str = "run-config.txt";

#[derive(Parser, Debug)]
#[command(name = "hcgr", version, about = "Hyperbolic session-based recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ingest a session log, filter, split and write a prepared dataset.
    Prepare(PrepareArgs),
    /// Write a synthetic hierarchical session log.
    Synth(SynthArgs),
    /// Train a model and write its best checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split and write a metrics CSV.
    Eval(EvalArgs),
    /// Export the hierarchy report, embeddings and attention traces.
    Analyze(AnalyzeArgs),
    /// Run the manifold self-checks (and the gradient sweep at `full`).
    Check(CheckArgs),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Random seed; falls back to HCGR_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for training and evaluation.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    min_item_freq: Option<usize>,
    #[arg(long)]
    min_session_len: Option<usize>,
    #[arg(long)]
    max_session_len: Option<usize>,
    /// Expand training sessions into every prefix.
    #[arg(long)]
    all_prefixes: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    items: usize,
    #[arg(long)]
    sessions: usize,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint_out: Option<PathBuf>,
    /// Epoch log path (default: train.log next to the checkpoint).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    /// multi_hop, gat_last_layer or gcn_mean.
    #[arg(long)]
    aggregator: Option<String>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScorerArg {
    Model,
    Popularity,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "10,20")]
    ks: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// `popularity` ranks by training click counts and ignores the checkpoint.
    #[arg(long, value_enum, default_value = "model")]
    scorer: ScorerArg,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Test sessions to trace.
    #[arg(long, default_value_t = 10)]
    sessions: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Level {
    Quick,
    Full,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long, value_enum, default_value = "quick")]
    level: Level,
    #[command(flatten)]
    common: Common,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

pub fn exit_code_for(e: &HcgrError) -> i32 {
    match e {
        HcgrError::Numeric { .. } => EXIT_NUMERIC,
        _ => EXIT_INPUT,
    }
}

fn resolve(common: &Common, extra: Vec<(&str, String)>) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_env()?;
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    cfg.apply_assignments(&common.set)?;
    for (k, v) in extra {
        cfg.set(k, &v)?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(t) = common.threads {
        cfg.set("threads", &t.to_string())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn opt<T: ToString>(key: &'static str, v: &Option<T>) -> Option<(&'static str, String)> {
    v.as_ref().map(|v| (key, v.to_string()))
}

fn with_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HcgrError::invalid(format!("cannot start thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HcgrError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| HcgrError::io(path, e))
}

fn echo_config(dir_of: &Path, cfg: &RunConfig, command: &str) -> Result<()> {
    let dir = match dir_of.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    write_file(&dir.join(RUN_CONFIG_FILE), &cfg.render(command))
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.ok_or_else(|| {
        HcgrError::invalid(format!("missing --{what} (or `{what}` in the config file)"))
    })
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Prepare(a) => prepare(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a),
        Command::Check(a) => check(a),
    }
}

fn prepare(a: PrepareArgs) -> Result<i32> {
    let extra = [
        opt("min_item_freq", &a.min_item_freq),
        opt("min_session_len", &a.min_session_len),
        opt("max_session_len", &a.max_session_len),
        a.all_prefixes.then(|| ("all_prefixes", "true".to_string())),
    ];
    let mut cfg = resolve(&a.common, extra.into_iter().flatten().collect())?;
    cfg.data = Some(a.input.clone());
    cfg.output = Some(a.output.clone());
    let raw = data::ingest(&a.input)?;
    let ds = data::preprocess(&raw, &cfg.preprocess)?;
    write_file(&a.output, &ds.to_json()?)?;
    echo_config(&a.output, &cfg, "prepare")?;
    println!("{}", ds.stats());
    Ok(EXIT_OK)
}

fn synth(a: SynthArgs) -> Result<i32> {
    let mut cfg = resolve(&a.common, Vec::new())?;
    cfg.output = Some(a.output.clone());
    let seed = cfg.train.seed;
    let corpus = data::synth_hierarchical(a.items, a.sessions, seed)?;
    let header = format!(
        "# synthetic hierarchical corpus items={} sessions={} seed={seed}\n",
        a.items, a.sessions
    );
    write_file(&a.output, &(header + &corpus.to_log()))?;
    echo_config(&a.output, &cfg, "synth")?;
    println!("wrote {} sessions to {}", corpus.len(), a.output.display());
    Ok(EXIT_OK)
}

fn train(a: TrainArgs) -> Result<i32> {
    let extra = [
        opt("epochs", &a.epochs),
        opt("dim", &a.dim),
        opt("layers", &a.layers),
        opt("blocks", &a.blocks),
        opt("aggregator", &a.aggregator),
        opt("learning_rate", &a.learning_rate),
        opt("batch_size", &a.batch_size),
        opt("l2", &a.l2),
        opt("beta", &a.beta),
        opt("gamma", &a.gamma),
        opt("margin", &a.margin),
        opt("negatives", &a.negatives),
        opt("patience", &a.patience),
        opt("data", &a.data.as_ref().map(|p| p.display().to_string())),
        opt(
            "checkpoint",
            &a.checkpoint_out.as_ref().map(|p| p.display().to_string()),
        ),
    ];
    let cfg = resolve(&a.common, extra.into_iter().flatten().collect())?;
    let data_path = required(cfg.data.clone(), "data")?;
    let ckpt_path = required(cfg.checkpoint.clone(), "checkpoint-out")?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        ckpt_path
            .parent()
            .map(|d| d.join("train.log"))
            .unwrap_or_else(|| PathBuf::from("train.log"))
    });
    let ds = Dataset::load(&data_path)?;
    let seed = cfg.train.seed;
    let model = Model::new(
        cfg.hyper.clone(),
        ds.catalog_size(),
        &mut ChaCha8Rng::seed_from_u64(seed),
    )?;

    let mut log = String::new();
    let outcome = with_pool(cfg.threads, || {
        training::fit(model, &cfg.train, &ds.train, &ds.valid, &mut |line| {
            println!("{line}");
            writeln!(log, "{line}").expect("string write");
        })
    })?;
    // keep whatever epochs completed, even when training failed
    write_file(&log_path, &log)?;
    let outcome = outcome?;
    checkpoint::save(&outcome.best, seed, &ckpt_path)?;
    echo_config(&ckpt_path, &cfg, "train")?;
    let val = with_pool(cfg.threads, || {
        metrics::evaluate(&outcome.best, &ds.valid, &[10, 20])
    })??;
    println!("best_epoch={}", outcome.best_epoch);
    print!("{}", val.table("valid"));
    Ok(EXIT_OK)
}

fn load_pair(
    common: &Common,
    data: &Option<PathBuf>,
    ckpt: &Option<PathBuf>,
    need_model: bool,
) -> Result<(RunConfig, Dataset, Option<Model>)> {
    let extra = [
        opt("data", &data.as_ref().map(|p| p.display().to_string())),
        opt(
            "checkpoint",
            &ckpt.as_ref().map(|p| p.display().to_string()),
        ),
    ];
    let cfg = resolve(common, extra.into_iter().flatten().collect())?;
    let ds = Dataset::load(&required(cfg.data.clone(), "data")?)?;
    let model = if need_model {
        let (m, _) = checkpoint::load(&required(cfg.checkpoint.clone(), "checkpoint")?)?;
        if m.catalog_size() != ds.catalog_size() {
            return Err(HcgrError::Format(format!(
                "checkpoint catalog has {} items but the dataset has {}",
                m.catalog_size(),
                ds.catalog_size()
            )));
        }
        Some(m)
    } else {
        None
    };
    Ok((cfg, ds, model))
}

fn eval(a: EvalArgs) -> Result<i32> {
    let need_model = matches!(a.scorer, ScorerArg::Model);
    let (mut cfg, ds, model) = load_pair(&a.common, &a.data, &a.checkpoint, need_model)?;
    cfg.output = a.out.clone();
    let split: Split = a.split.into();
    let popularity = PopularityScorer {
        counts: ds.train_counts.clone(),
    };
    let scorer: &dyn Scorer = match &model {
        Some(m) => m,
        None => &popularity,
    };
    let m = with_pool(cfg.threads, || {
        metrics::evaluate(scorer, ds.split(split), &a.ks)
    })??;
    if let Some(out) = &a.out {
        let csv = format!("{METRICS_CSV_HEADER}\n{}", m.csv_rows(split.name()));
        write_file(out, &csv)?;
        echo_config(out, &cfg, "eval")?;
    }
    print!("{}", m.table(split.name()));
    Ok(EXIT_OK)
}

pub const ATTENTION_CSV_HEADER: &str =
    "session,session_id,kind,layer,row,col,row_item,col_item,weight";

fn analyze(a: AnalyzeArgs) -> Result<i32> {
    let (mut cfg, ds, model) = load_pair(&a.common, &a.data, &a.checkpoint, true)?;
    let model = model.expect("model requested");
    let out_dir = required(a.out_dir.clone(), "out-dir")?;
    cfg.output = Some(out_dir.clone());

    let rows = metrics::hierarchy_report(&model, &ds.train_counts)?;
    let embeddings = metrics::embedding_csv(&model, &ds.catalog, &ds.train_counts)?;
    let mut attention = format!("{ATTENTION_CSV_HEADER}\n");
    for p in ds.test.iter().take(a.sessions) {
        let out = model.forward(&p.prefix)?;
        let tok = |node: usize| ds.catalog[out.trace.nodes[node]].as_str();
        let sid = &ds.session_ids[p.session];
        for (l, edges) in out.trace.graph.iter().enumerate() {
            for &(i, j, w) in edges {
                writeln!(
                    attention,
                    "{},{sid},graph,{},{i},{j},{},{},{w}",
                    p.session,
                    l + 1,
                    tok(i),
                    tok(j)
                )
                .expect("string write");
            }
        }
        for (b, matrix) in out.trace.self_attention.iter().enumerate() {
            for (i, row) in matrix.iter().enumerate() {
                for (j, w) in row.iter().enumerate() {
                    writeln!(
                        attention,
                        "{},{sid},self,{},{i},{j},{},{},{w}",
                        p.session,
                        b + 1,
                        tok(i),
                        tok(j)
                    )
                    .expect("string write");
                }
            }
        }
    }
    write_file(
        &out_dir.join("hierarchy.csv"),
        &metrics::hierarchy_csv(&rows),
    )?;
    write_file(&out_dir.join("embeddings.csv"), &embeddings)?;
    write_file(&out_dir.join("attention.csv"), &attention)?;
    write_file(&out_dir.join(RUN_CONFIG_FILE), &cfg.render("analyze"))?;
    println!("region  n_items  mean_dist  mean_interactions");
    for r in &rows {
        println!(
            "{:>6}  {:>7}  {:>9.4}  {:>17.2}",
            r.region, r.n_items, r.mean_distance, r.mean_interactions
        );
    }
    Ok(EXIT_OK)
}

/// Runs the self-checks with the given manifold implementation.
pub fn run_checks(ops: &ManifoldOps, full: bool, seed: u64) -> Result<(bool, String)> {
    let mut report = String::new();
    let mut suite_cfg = SuiteConfig::quick();
    suite_cfg.seed = seed;
    let suite = diagnostics::run_manifold_suite(ops, &suite_cfg);
    write!(report, "{suite}").expect("string write");
    let mut ok = suite.passed();
    for (t, err) in diagnostics::geodesic_check()? {
        let pass = err < diagnostics::GEODESIC_TOL;
        ok &= pass;
        writeln!(
            report,
            "geodesic t={t:<4} error={err:.3e} {}",
            if pass { "ok" } else { "FAIL" }
        )
        .expect("string write");
    }
    let mut worst = suite.worst_offender().map(|r| r.name.to_string());
    if full {
        let mut max_err: f64 = 0.0;
        for (beta, r) in diagnostics::toy_gradient_sweep(seed)? {
            writeln!(report, "gradient beta={beta}: {r}").expect("string write");
            max_err = max_err.max(r.max_rel_error);
            if !r.passed {
                ok = false;
                worst.get_or_insert_with(|| format!("gradient ({})", r.worst_param));
            }
        }
        writeln!(report, "max gradient relative error: {max_err:.3e}").expect("string write");
    }
    if ok {
        report.push_str("all checks passed\n");
    } else {
        let name = worst.unwrap_or_else(|| "geodesic distance".to_string());
        writeln!(report, "FAILED: worst offender {name}").expect("string write");
    }
    Ok((ok, report))
}

fn check(a: CheckArgs) -> Result<i32> {
    let cfg = resolve(&a.common, Vec::new())?;
    let (ok, report) = with_pool(cfg.threads, || {
        run_checks(
            &ManifoldOps::default(),
            a.level == Level::Full,
            cfg.train.seed,
        )
    })??;
    print!("{report}");
    Ok(if ok { EXIT_OK } else { EXIT_CHECK_FAILED })
}
