//! Effective run configuration: defaults < `HCGR_SEED` < config file < flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hcgr_core::data::PreprocessConfig;
use hcgr_core::model::HyperParams;
use hcgr_core::training::TrainConfig;
use hcgr_core::{HcgrError, Result};

pub const SEED_ENV: &str = "HCGR_SEED";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub hyper: HyperParams,
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
    pub threads: usize,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

pub const KEYS: &[&str] = &[
    "dim",
    "layers",
    "blocks",
    "max_session_len",
    "negatives",
    "margin",
    "gamma",
    "beta",
    "aggregator",
    "learning_rate",
    "lr_decay",
    "decay_every",
    "l2",
    "batch_size",
    "epochs",
    "patience",
    "seed",
    "min_item_freq",
    "min_session_len",
    "all_prefixes",
    "threads",
    "data",
    "checkpoint",
    "output",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| HcgrError::invalid(format!("invalid value `{value}` for `{key}`")))
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hyper: HyperParams::default(),
            train: TrainConfig::default(),
            preprocess: PreprocessConfig::default(),
            threads: 1,
            data: None,
            checkpoint: None,
            output: None,
        }
    }
}

impl RunConfig {
    /// Defaults with the seed taken from `HCGR_SEED` when it is set.
    pub fn from_env() -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.set("seed", &v).map_err(|_| {
                HcgrError::invalid(format!("{SEED_ENV} must be an unsigned integer"))
            })?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let h = &mut self.hyper;
        let t = &mut self.train;
        match key {
            "dim" => h.dim = parse(key, value)?,
            "layers" => h.layers = parse(key, value)?,
            "blocks" => h.blocks = parse(key, value)?,
            "max_session_len" => {
                h.max_session_len = parse(key, value)?;
                self.preprocess.max_session_len = h.max_session_len;
            }
            "negatives" => h.negatives = parse(key, value)?,
            "margin" => h.margin = parse(key, value)?,
            "gamma" => h.gamma = parse(key, value)?,
            "beta" => h.beta = parse(key, value)?,
            "aggregator" => h.aggregator = value.trim().parse()?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "lr_decay" => t.lr_decay = parse(key, value)?,
            "decay_every" => t.decay_every = parse(key, value)?,
            "l2" => t.l2 = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "seed" => {
                t.seed = parse(key, value)?;
                self.preprocess.seed = t.seed;
            }
            "min_item_freq" => self.preprocess.min_item_freq = parse(key, value)?,
            "min_session_len" => self.preprocess.min_session_len = parse(key, value)?,
            "all_prefixes" => self.preprocess.all_prefixes = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "data" => self.data = Some(PathBuf::from(value.trim())),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value.trim())),
            "output" => self.output = Some(PathBuf::from(value.trim())),
            other => {
                return Err(HcgrError::invalid(format!(
                    "unknown config key `{other}` (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str, source: &Path) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| HcgrError::Parse {
                path: source.to_path_buf(),
                line: n + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            self.set(k.trim(), v.trim()).map_err(|e| match e {
                HcgrError::InvalidArgument(m) => err(m),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| HcgrError::io(path, e))?;
        self.apply_text(&text, path)
    }

    /// `key=value` assignments given on the command line.
    pub fn apply_assignments(&mut self, items: &[String]) -> Result<()> {
        for item in items {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| HcgrError::invalid(format!("`{item}` is not key=value")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.train.validate()?;
        if self.threads == 0 {
            return Err(HcgrError::invalid("threads must be >= 1"));
        }
        Ok(())
    }

    /// The effective configuration as `key=value` lines.
    pub fn render(&self, command: &str) -> String {
        let h = &self.hyper;
        let t = &self.train;
        let p = &self.preprocess;
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let mut out = format!("command={command}\n");
        let pairs: Vec<(&str, String)> = vec![
            ("dim", h.dim.to_string()),
            ("layers", h.layers.to_string()),
            ("blocks", h.blocks.to_string()),
            ("max_session_len", h.max_session_len.to_string()),
            ("negatives", h.negatives.to_string()),
            ("margin", h.margin.to_string()),
            ("gamma", h.gamma.to_string()),
            ("beta", h.beta.to_string()),
            ("aggregator", h.aggregator.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("lr_decay", t.lr_decay.to_string()),
            ("decay_every", t.decay_every.to_string()),
            ("l2", t.l2.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("epochs", t.epochs.to_string()),
            ("patience", t.patience.to_string()),
            ("seed", t.seed.to_string()),
            ("min_item_freq", p.min_item_freq.to_string()),
            ("min_session_len", p.min_session_len.to_string()),
            ("all_prefixes", p.all_prefixes.to_string()),
            ("threads", self.threads.to_string()),
            ("data", path(&self.data)),
            ("checkpoint", path(&self.checkpoint)),
            ("output", path(&self.output)),
        ];
        for (k, v) in pairs {
            writeln!(out, "{k}={v}").expect("string write");
        }
        out
    }
}
