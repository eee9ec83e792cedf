//! Session logs, preprocessing, splits and the synthetic corpus generator.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HcgrError, Result};

pub const DATASET_FORMAT: &str = "hcgr-data-v1";

/// Sessions as read from a log, with item tokens interned in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawCorpus {
    pub session_ids: Vec<String>,
    pub sessions: Vec<Vec<usize>>,
    pub vocab: Vec<String>,
}

impl RawCorpus {
    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn push(&mut self, id: String, tokens: &[&str], index: &mut HashMap<String, usize>) {
        let items = tokens
            .iter()
            .map(|&tok| {
                *index.entry(tok.to_string()).or_insert_with(|| {
                    self.vocab.push(tok.to_string());
                    self.vocab.len() - 1
                })
            })
            .collect();
        self.session_ids.push(id);
        self.sessions.push(items);
    }

    /// Session-log text, one `id<TAB>tok tok …` line per session.
    pub fn to_log(&self) -> String {
        let mut out = String::new();
        for (id, items) in self.session_ids.iter().zip(&self.sessions) {
            out.push_str(id);
            out.push('\t');
            let toks: Vec<&str> = items.iter().map(|&i| self.vocab[i].as_str()).collect();
            out.push_str(&toks.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Parses session-log text. `source` only labels error messages.
pub fn parse_log(text: &str, source: &Path) -> Result<RawCorpus> {
    let mut corpus = RawCorpus::default();
    let mut index = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: &str| HcgrError::Parse {
            path: source.to_path_buf(),
            line: n + 1,
            message: message.to_string(),
        };
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| err("expected `<session_id> TAB <items>`"))?;
        if id.trim().is_empty() {
            return Err(err("empty session id"));
        }
        let tokens: Vec<&str> = rest.split(' ').filter(|t| !t.is_empty()).collect();
        if tokens.is_empty() {
            return Err(err("session has no items"));
        }
        if tokens.iter().any(|t| t.contains('\t')) {
            return Err(err("item tokens must not contain tabs"));
        }
        corpus.push(id.to_string(), &tokens, &mut index);
    }
    Ok(corpus)
}

pub fn ingest(path: &Path) -> Result<RawCorpus> {
    let text = std::fs::read_to_string(path).map_err(|e| HcgrError::io(path, e))?;
    parse_log(&text, path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub min_item_freq: usize,
    pub min_session_len: usize,
    pub max_session_len: usize,
    pub seed: u64,
    /// Expand training sessions into every prefix → next-item pair.
    pub all_prefixes: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            min_item_freq: 3,
            min_session_len: 3,
            max_session_len: 50,
            seed: 0,
            all_prefixes: false,
        }
    }
}

/// A prefix and the item that followed it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    /// Index into [`Dataset::sessions`].
    pub session: usize,
    pub prefix: Vec<usize>,
    pub target: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub format: String,
    /// Dense id → original token.
    pub catalog: Vec<String>,
    pub session_ids: Vec<String>,
    /// Retained sessions in input order, dense ids.
    pub sessions: Vec<Vec<usize>>,
    pub train: Vec<Pair>,
    pub valid: Vec<Pair>,
    pub test: Vec<Pair>,
    /// Clicks per item over the training sessions.
    pub train_counts: Vec<u64>,
}

impl Dataset {
    pub fn catalog_size(&self) -> usize {
        self.catalog.len()
    }

    pub fn split(&self, s: Split) -> &[Pair] {
        match s {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn to_raw(&self) -> RawCorpus {
        RawCorpus {
            session_ids: self.session_ids.clone(),
            sessions: self.sessions.clone(),
            vocab: self.catalog.clone(),
        }
    }

    pub fn stats(&self) -> CorpusStats {
        let behaviors: usize = self.sessions.iter().map(Vec::len).sum();
        let users = self.sessions.len();
        let items = self.catalog.len();
        CorpusStats {
            users,
            items,
            behaviors,
            avg_per_user: behaviors as f64 / users.max(1) as f64,
            avg_per_item: behaviors as f64 / items.max(1) as f64,
            train: self.train.len(),
            valid: self.valid.len(),
            test: self.test.len(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ds: Dataset = serde_json::from_str(text)?;
        if ds.format != DATASET_FORMAT {
            return Err(HcgrError::Format(format!(
                "unsupported dataset format `{}` (expected {DATASET_FORMAT})",
                ds.format
            )));
        }
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| HcgrError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HcgrError::io(path, e))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        let n = self.catalog.len();
        if self.train_counts.len() != n {
            return Err(HcgrError::Format(
                "train_counts length differs from catalog".into(),
            ));
        }
        for p in self.train.iter().chain(&self.valid).chain(&self.test) {
            if p.target >= n || p.prefix.is_empty() || p.prefix.iter().any(|&i| i >= n) {
                return Err(HcgrError::Format(format!(
                    "pair of session {} references items outside the catalog",
                    p.session
                )));
            }
        }
        Ok(())
    }
}

/// Corpus statistics: sessions play the role of users.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStats {
    pub users: usize,
    pub items: usize,
    pub behaviors: usize,
    pub avg_per_user: f64,
    pub avg_per_item: f64,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "users      {}", self.users)?;
        writeln!(f, "items      {}", self.items)?;
        writeln!(f, "avg_i/user {:.2}", self.avg_per_user)?;
        writeln!(f, "avg_i/item {:.2}", self.avg_per_item)?;
        writeln!(f, "behaviors  {}", self.behaviors)?;
        write!(
            f,
            "pairs      train={} valid={} test={}",
            self.train, self.valid, self.test
        )
    }
}

/// One filtering pass; returns whether anything changed.
fn filter_pass(
    sessions: &mut Vec<(usize, Vec<usize>)>,
    cfg: &PreprocessConfig,
    vocab: usize,
) -> bool {
    let mut changed = false;
    for (_, s) in sessions.iter_mut() {
        if s.len() > cfg.max_session_len {
            s.drain(..s.len() - cfg.max_session_len);
            changed = true;
        }
    }
    let mut freq = vec![0usize; vocab];
    for (_, s) in sessions.iter() {
        for &i in s {
            freq[i] += 1;
        }
    }
    for (_, s) in sessions.iter_mut() {
        let before = s.len();
        s.retain(|&i| freq[i] >= cfg.min_item_freq);
        changed |= s.len() != before;
    }
    let before = sessions.len();
    sessions.retain(|(_, s)| s.len() >= cfg.min_session_len.max(2));
    changed | (sessions.len() != before)
}

/// Filters rare items and short sessions, truncates long ones, re-indexes
/// densely and splits 80/10/10 by session.
///
/// Filtering repeats until nothing changes, so every retained item occurs at
/// least `min_item_freq` times in the output and the function is idempotent.
pub fn preprocess(raw: &RawCorpus, cfg: &PreprocessConfig) -> Result<Dataset> {
    if raw.is_empty() {
        return Err(HcgrError::EmptyDataset);
    }
    if cfg.max_session_len < 2 {
        return Err(HcgrError::invalid("max_session_len must be >= 2"));
    }
    let mut sessions: Vec<(usize, Vec<usize>)> = raw.sessions.iter().cloned().enumerate().collect();
    while filter_pass(&mut sessions, cfg, raw.vocab.len()) {}
    if sessions.is_empty() {
        return Err(HcgrError::EmptyDataset);
    }

    let mut remap = vec![usize::MAX; raw.vocab.len()];
    let mut catalog = Vec::new();
    for (_, s) in sessions.iter_mut() {
        for i in s.iter_mut() {
            if remap[*i] == usize::MAX {
                remap[*i] = catalog.len();
                catalog.push(raw.vocab[*i].clone());
            }
            *i = remap[*i];
        }
    }
    let session_ids: Vec<String> = sessions
        .iter()
        .map(|(o, _)| raw.session_ids[*o].clone())
        .collect();
    let sessions: Vec<Vec<usize>> = sessions.into_iter().map(|(_, s)| s).collect();

    let n = sessions.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_valid = n / 10;
    let n_test = n / 10;
    let n_train = n - n_valid - n_test;
    let mut parts = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_valid].to_vec(),
        order[n_train + n_valid..].to_vec(),
    ];
    for p in &mut parts {
        p.sort_unstable();
    }

    let last_pair = |idx: usize| {
        let s = &sessions[idx];
        Pair {
            session: idx,
            prefix: s[..s.len() - 1].to_vec(),
            target: s[s.len() - 1],
        }
    };
    let train = if cfg.all_prefixes {
        parts[0]
            .iter()
            .flat_map(|&idx| {
                let s = &sessions[idx];
                (1..s.len()).map(move |cut| Pair {
                    session: idx,
                    prefix: s[..cut].to_vec(),
                    target: s[cut],
                })
            })
            .collect()
    } else {
        parts[0].iter().map(|&i| last_pair(i)).collect()
    };
    let mut train_counts = vec![0u64; catalog.len()];
    for &idx in &parts[0] {
        for &i in &sessions[idx] {
            train_counts[i] += 1;
        }
    }

    Ok(Dataset {
        format: DATASET_FORMAT.to_string(),
        valid: parts[1].iter().map(|&i| last_pair(i)).collect(),
        test: parts[2].iter().map(|&i| last_pair(i)).collect(),
        train,
        catalog,
        session_ids,
        sessions,
        train_counts,
    })
}

/// Zipf sampler over `0..n` with exponent `s`.
#[derive(Clone, Debug)]
struct Zipf {
    cdf: Vec<f64>,
}

impl Zipf {
    fn new(n: usize, s: f64) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = (1..=n)
            .map(|r| {
                acc += (r as f64).powf(-s);
                acc
            })
            .collect();
        for c in &mut cdf {
            *c /= acc;
        }
        Zipf { cdf }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        self.cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1)
    }
}

pub const SYNTH_ZIPF_EXPONENT: f64 = 1.2;
pub const SYNTH_JUMP_PROB: f64 = 0.1;
pub const SYNTH_MIN_LEN: usize = 3;
pub const SYNTH_MAX_LEN: usize = 50;
/// Success probability of the geometric tail added to the minimum length.
const SYNTH_LEN_P: f64 = 0.2;

/// Category tree used by [`synth_hierarchical`]: `leaves[c]` holds the item
/// ids of leaf category `c`, and `parent[c]` its top-level category.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoryTree {
    pub leaves: Vec<Vec<usize>>,
    pub parent: Vec<usize>,
}

impl CategoryTree {
    /// About √n leaves of contiguous item ranges, grouped three to a
    /// top-level category.
    pub fn new(n_items: usize) -> Self {
        let n_leaves = ((n_items as f64).sqrt().round() as usize).clamp(2, n_items / 3);
        let n_top = (n_leaves / 3).max(2).min(n_leaves);
        let mut leaves = vec![Vec::new(); n_leaves];
        for item in 0..n_items {
            leaves[item * n_leaves / n_items].push(item);
        }
        let parent = (0..n_leaves).map(|c| c * n_top / n_leaves).collect();
        CategoryTree { leaves, parent }
    }

    pub fn siblings(&self, leaf: usize) -> Vec<usize> {
        (0..self.leaves.len())
            .filter(|&c| c != leaf && self.parent[c] == self.parent[leaf])
            .collect()
    }
}

/// Synthetic corpus with a two-level category hierarchy and Zipf-skewed
/// popularity at both levels.
pub fn synth_hierarchical(n_items: usize, n_sessions: usize, seed: u64) -> Result<RawCorpus> {
    if n_items < 10 {
        return Err(HcgrError::invalid(
            "synthetic corpus needs at least 10 items",
        ));
    }
    if n_sessions == 0 {
        return Err(HcgrError::invalid(
            "synthetic corpus needs at least 1 session",
        ));
    }
    let tree = CategoryTree::new(n_items);
    let leaf_zipf = Zipf::new(tree.leaves.len(), SYNTH_ZIPF_EXPONENT);
    let item_zipf: Vec<Zipf> = tree
        .leaves
        .iter()
        .map(|l| Zipf::new(l.len(), SYNTH_ZIPF_EXPONENT))
        .collect();
    let siblings: Vec<Vec<usize>> = (0..tree.leaves.len()).map(|c| tree.siblings(c)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = RawCorpus::default();
    let mut index = HashMap::new();
    let tokens: Vec<String> = (0..n_items).map(|i| format!("i{i}")).collect();
    for s in 0..n_sessions {
        let mut len = SYNTH_MIN_LEN;
        while len < SYNTH_MAX_LEN && !rng.random_bool(SYNTH_LEN_P) {
            len += 1;
        }
        let home = leaf_zipf.sample(&mut rng);
        let mut items = Vec::with_capacity(len);
        for _ in 0..len {
            // a jump lands in a sibling leaf or anywhere in the catalog
            let leaf = if !rng.random_bool(SYNTH_JUMP_PROB) {
                home
            } else if !siblings[home].is_empty() && rng.random_bool(0.5) {
                siblings[home][rng.random_range(0..siblings[home].len())]
            } else {
                leaf_zipf.sample(&mut rng)
            };
            let pick = item_zipf[leaf].sample(&mut rng);
            items.push(tokens[tree.leaves[leaf][pick]].as_str());
        }
        corpus.push(format!("s{s}"), &items, &mut index);
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::path::PathBuf;

    fn p() -> PathBuf {
        PathBuf::from("mem")
    }

    fn corpus(lines: &[&[&str]]) -> RawCorpus {
        let mut c = RawCorpus::default();
        let mut idx = HashMap::new();
        for (n, l) in lines.iter().enumerate() {
            c.push(format!("u{n}"), l, &mut idx);
        }
        c
    }

    #[test]
    fn ingest_examples() {
        let c = parse_log("u1\ta b c\nu2\tb c\n", &p()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.vocab, vec!["a", "b", "c"]);
        assert_eq!(c.sessions, vec![vec![0, 1, 2], vec![1, 2]]);

        assert!(parse_log("", &p()).unwrap().is_empty());

        let c = parse_log("u1\ta b\n\n# note\nu2\tc\n", &p()).unwrap();
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn malformed_lines_name_line_number() {
        for (text, line) in [("u1\ta\nbroken\n", 2), ("\n\nu1\t \n", 3), ("\tx\n", 1)] {
            match parse_log(text, &p()) {
                Err(HcgrError::Parse { line: l, .. }) => assert_eq!(l, line),
                other => panic!("expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn rare_items_and_short_sessions_removed() {
        // a: 5, b: 2, c: 4
        let c = corpus(&[
            &["a", "b", "a", "c"],
            &["a", "b", "c", "a"],
            &["c", "a", "c"],
        ]);
        let ds = preprocess(&c, &PreprocessConfig::default()).unwrap();
        assert_eq!(ds.catalog, vec!["a", "c"]);
        assert_eq!(
            ds.sessions,
            vec![vec![0, 0, 1], vec![0, 1, 0], vec![1, 0, 1]]
        );

        let c = corpus(&[&["a", "a", "a"], &["a", "b", "c"], &["b", "c", "b"]]);
        // c: 2 → second session shrinks to length 2 and is dropped
        let ds = preprocess(&c, &PreprocessConfig::default()).unwrap();
        assert_eq!(ds.sessions.len(), 1);
    }

    #[test]
    fn fixed_point_filtering() {
        // dropping x empties the third session, which leaves c with a single click
        let c = corpus(&[
            &["a", "b", "c", "a"],
            &["a", "a", "b", "a"],
            &["c", "c", "x"],
            &["b", "a", "a"],
        ]);
        let ds = preprocess(&c, &PreprocessConfig::default()).unwrap();
        assert_eq!(ds.catalog, vec!["a", "b"]);
        assert_eq!(
            ds.sessions,
            vec![vec![0, 1, 0], vec![0, 0, 1, 0], vec![1, 0, 0]]
        );
    }

    #[test]
    fn everything_filtered_is_empty_dataset() {
        let c = corpus(&[&["a", "b"], &["c", "d"]]);
        assert!(matches!(
            preprocess(&c, &PreprocessConfig::default()),
            Err(HcgrError::EmptyDataset)
        ));
        assert!(matches!(
            preprocess(&RawCorpus::default(), &PreprocessConfig::default()),
            Err(HcgrError::EmptyDataset)
        ));
    }

    #[test]
    fn split_sizes_and_pairs() {
        let lines: Vec<Vec<&str>> = (0..100).map(|_| vec!["a", "b", "c", "a"]).collect();
        let refs: Vec<&[&str]> = lines.iter().map(|l| l.as_slice()).collect();
        let mut c = corpus(&refs);
        c.sessions.push(vec![0, 1, 2, 0, 1]);
        c.session_ids.push("extra".into());
        let ds = preprocess(&c, &PreprocessConfig::default()).unwrap();
        assert_eq!(
            (ds.train.len(), ds.valid.len(), ds.test.len()),
            (81, 10, 10)
        );
        let pr = &ds.train[0];
        assert_eq!(pr.prefix.len() + 1, ds.sessions[pr.session].len());
        let mut seen: Vec<usize> = ds
            .train
            .iter()
            .chain(&ds.valid)
            .chain(&ds.test)
            .map(|p| p.session)
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..101).collect::<Vec<_>>());
    }

    #[test]
    fn truncation_keeps_recent_items() {
        let s: Vec<String> = (0..60).map(|i| format!("t{}", i % 4)).collect();
        let refs: Vec<&str> = s.iter().map(String::as_str).collect();
        let c = corpus(&[&refs]);
        let ds = preprocess(&c, &PreprocessConfig::default()).unwrap();
        assert_eq!(ds.sessions[0].len(), 50);
        assert_eq!(ds.catalog[ds.sessions[0][0]], "t2");
    }

    #[test]
    fn all_prefixes_expands_train_only() {
        let lines: Vec<Vec<&str>> = (0..10).map(|_| vec!["a", "b", "c", "a"]).collect();
        let refs: Vec<&[&str]> = lines.iter().map(|l| l.as_slice()).collect();
        let cfg = PreprocessConfig {
            all_prefixes: true,
            ..PreprocessConfig::default()
        };
        let ds = preprocess(&corpus(&refs), &cfg).unwrap();
        assert_eq!(ds.train.len(), 8 * 3);
        assert_eq!(ds.valid.len(), 1);
    }

    #[test]
    fn dataset_json_roundtrip_and_format_check() {
        let c = synth_hierarchical(30, 100, 1).unwrap();
        let ds = preprocess(&c, &PreprocessConfig::default()).unwrap();
        let back = Dataset::from_json(&ds.to_json().unwrap()).unwrap();
        assert_eq!(back, ds);
        let bad = ds.to_json().unwrap().replace(DATASET_FORMAT, "other");
        assert!(Dataset::from_json(&bad).is_err());
    }

    #[test]
    fn synth_is_deterministic_and_bounded() {
        let a = synth_hierarchical(100, 300, 9).unwrap();
        let b = synth_hierarchical(100, 300, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_hierarchical(100, 300, 10).unwrap());
        assert!(a.sessions.iter().all(|s| (3..=50).contains(&s.len())));
        assert!(synth_hierarchical(9, 10, 0).is_err());
    }

    #[test]
    fn synth_popularity_is_heavy_tailed() {
        let c = synth_hierarchical(100, 1000, 7).unwrap();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in &c.sessions {
            for &i in s {
                *counts.entry(c.vocab[i].as_str()).or_default() += 1;
            }
        }
        let mut v: Vec<usize> = counts.values().copied().collect();
        v.sort_unstable_by(|a, b| b.cmp(a));
        let total: usize = v.iter().sum();
        let top: usize = v.iter().take(10).sum();
        assert!(
            top as f64 > 0.5 * total as f64,
            "top decile covers {top}/{total}"
        );
    }

    #[test]
    fn category_tree_partitions_items() {
        for n in [10, 37, 100, 1000] {
            let t = CategoryTree::new(n);
            let mut all: Vec<usize> = t.leaves.iter().flatten().copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            assert!(t.leaves.iter().all(|l| !l.is_empty()));
            let tops: std::collections::BTreeSet<_> = t.parent.iter().collect();
            assert!(tops.len() >= 2);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn preprocess_is_idempotent(
            sessions in prop::collection::vec(prop::collection::vec(0usize..12, 1..70), 1..40),
            seed in 0u64..1000,
        ) {
            let tokens: Vec<String> = (0..12).map(|i| format!("t{i}")).collect();
            let lines: Vec<Vec<&str>> = sessions
                .iter()
                .map(|s| s.iter().map(|&i| tokens[i].as_str()).collect())
                .collect();
            let refs: Vec<&[&str]> = lines.iter().map(|l| l.as_slice()).collect();
            let cfg = PreprocessConfig { seed, ..PreprocessConfig::default() };
            if let Ok(once) = preprocess(&corpus(&refs), &cfg) {
                let twice = preprocess(&once.to_raw(), &cfg).unwrap();
                prop_assert_eq!(&twice, &once);
                let again = preprocess(&corpus(&refs), &cfg).unwrap();
                prop_assert_eq!(&again, &once);
                for s in &once.sessions {
                    prop_assert!(s.len() >= 3 && s.len() <= 50);
                }
            }
        }
    }
}
