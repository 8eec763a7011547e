//! Labeled title corpora: category-graph labeling, filtering, splitting and
//! character statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Main categories in tie-break priority order.
pub const DEFAULT_CATEGORIES: [&str; 12] = [
    "Geography",
    "Sports",
    "Arts",
    "Military",
    "Economics",
    "Transportation",
    "Medical/Health Science",
    "Education",
    "Food and Culture",
    "Religion and Belief",
    "Agriculture",
    "Electronics",
];

pub fn default_categories() -> Vec<String> {
    DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect()
}

/// Parent → child category edges plus the ordered main categories.
#[derive(Clone, Debug, Default)]
pub struct CategoryGraph {
    children: BTreeMap<String, BTreeSet<String>>,
    nodes: BTreeSet<String>,
    roots: Vec<String>,
}

impl CategoryGraph {
    pub fn new(roots: Vec<String>) -> Self {
        let nodes = roots.iter().cloned().collect();
        Self {
            children: BTreeMap::new(),
            nodes,
            roots,
        }
    }

    pub fn add_edge(&mut self, parent: &str, child: &str) {
        self.nodes.insert(parent.to_string());
        self.nodes.insert(child.to_string());
        self.children
            .entry(parent.to_string())
            .or_default()
            .insert(child.to_string());
    }

    pub fn roots(&self) -> &[String] {
        &self.roots
    }

    pub fn contains(&self, name: &str) -> bool {
        self.nodes.contains(name)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Reads `parent<TAB>child` lines. Blank lines and `#` comments are skipped.
    pub fn parse_edges(text: &str, roots: Vec<String>) -> Result<Self> {
        let mut g = Self::new(roots);
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (p, c) = split_pair(line).ok_or_else(|| {
                Error::data(format!(
                    "category graph line {}: expected parent<TAB>child",
                    lineno + 1
                ))
            })?;
            g.add_edge(p, c);
        }
        Ok(g)
    }

    /// BFS depth of every category reachable from `root` (the root is 0).
    /// Cycles are harmless: each node is visited once.
    pub fn depths_from(&self, root: &str) -> HashMap<&str, usize> {
        let mut depth = HashMap::new();
        let Some(root) = self.nodes.get(root) else {
            return depth;
        };
        depth.insert(root.as_str(), 0);
        let mut queue = VecDeque::from([root.as_str()]);
        while let Some(node) = queue.pop_front() {
            let d = depth[node];
            for child in self.children.get(node).into_iter().flatten() {
                if !depth.contains_key(child.as_str()) {
                    depth.insert(child.as_str(), d + 1);
                    queue.push_back(child.as_str());
                }
            }
        }
        depth
    }
}

fn split_pair(line: &str) -> Option<(&str, &str)> {
    let mut it = line.split('\t');
    let a = it.next()?.trim();
    let b = it.next()?.trim();
    (it.next().is_none() && !a.is_empty() && !b.is_empty()).then_some((a, b))
}

/// Article → member categories.
pub type Memberships = BTreeMap<String, BTreeSet<String>>;

/// Reads `article<TAB>category` lines; an article may repeat.
pub fn parse_memberships(text: &str) -> Result<Memberships> {
    let mut m = Memberships::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (a, c) = split_pair(line).ok_or_else(|| {
            Error::data(format!(
                "memberships line {}: expected article<TAB>category",
                lineno + 1
            ))
        })?;
        m.entry(a.to_string()).or_default().insert(c.to_string());
    }
    Ok(m)
}

/// Like [`parse_memberships`], but rejects categories missing from `graph`
/// and names the offending line.
pub fn parse_memberships_in(text: &str, graph: &CategoryGraph) -> Result<Memberships> {
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((_, c)) = split_pair(line) {
            if !graph.contains(c) {
                return Err(Error::data(format!(
                    "memberships line {}: unknown category {c:?}",
                    lineno + 1
                )));
            }
        }
    }
    parse_memberships(text)
}

/// Labels each article with the main category it is closest to.
///
/// The depth of an article under a root is one more than the BFS depth of
/// its nearest member category. Equal depths go to the earlier root;
/// articles no root reaches are left out. Returns root indices.
pub fn assign_labels_min_depth(
    graph: &CategoryGraph,
    memberships: &Memberships,
) -> Result<BTreeMap<String, usize>> {
    let unknown: BTreeSet<&str> = memberships
        .values()
        .flatten()
        .filter(|c| !graph.contains(c))
        .map(String::as_str)
        .collect();
    if !unknown.is_empty() {
        return Err(Error::data(format!(
            "memberships reference unknown categories: {}",
            unknown.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let per_root: Vec<HashMap<&str, usize>> =
        graph.roots.iter().map(|r| graph.depths_from(r)).collect();
    let mut labels = BTreeMap::new();
    for (article, cats) in memberships {
        let mut best: Option<(usize, usize)> = None;
        for (ri, depths) in per_root.iter().enumerate() {
            let Some(d) = cats.iter().filter_map(|c| depths.get(c.as_str())).min() else {
                continue;
            };
            if best.is_none_or(|(bd, _)| d + 1 < bd) {
                best = Some((d + 1, ri));
            }
        }
        if let Some((_, ri)) = best {
            labels.insert(article.clone(), ri);
        }
    }
    Ok(labels)
}

/// True for special pages, i.e. titles matching `.*:.*`.
pub fn is_special_title(title: &str) -> bool {
    title.contains(':')
}

/// Drops titles containing a colon, preserving order.
pub fn filter_titles<S: AsRef<str>>(titles: impl IntoIterator<Item = S>) -> Vec<S> {
    titles
        .into_iter()
        .filter(|t| !is_special_title(t.as_ref()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
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

/// A title and its category id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub title: Vec<char>,
    pub label: usize,
}

impl Instance {
    pub fn new(title: &str, label: usize) -> Self {
        Self {
            title: title.chars().collect(),
            label,
        }
    }

    pub fn title_string(&self) -> String {
        self.title.iter().collect()
    }
}

/// Split sizes for `n` instances: 20% valid and test each (floored), the rest train.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let fifth = n / 5;
    (n - 2 * fifth, fifth, fifth)
}

/// Seeded shuffle, then train / valid / test in 6:2:2 proportion.
pub fn split_corpus(n: usize, seed: u64) -> Result<Vec<Split>> {
    if n < 5 {
        return Err(Error::data(format!(
            "need at least 5 instances to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng_for(seed, rng::stream::SPLIT, 0));
    let (train, valid, _) = split_sizes(n);
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < train {
            Split::Train
        } else if rank < train + valid {
            Split::Valid
        } else {
            Split::Test
        };
    }
    Ok(out)
}

/// Character occurrence counts over training titles.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    counts: BTreeMap<char, u64>,
    total: u64,
}

impl FrequencyTable {
    pub fn from_titles<'a>(titles: impl IntoIterator<Item = &'a [char]>) -> Result<Self> {
        let mut t = Self::default();
        for title in titles {
            for &c in title {
                *t.counts.entry(c).or_insert(0) += 1;
                t.total += 1;
            }
        }
        if t.total == 0 {
            return Err(Error::data("frequency table over an empty training split"));
        }
        Ok(t)
    }

    pub fn count(&self, c: char) -> u64 {
        self.counts.get(&c).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (char, u64)> + '_ {
        self.counts.iter().map(|(&c, &n)| (c, n))
    }

    /// `char<TAB>count`, most frequent first, ties by codepoint.
    pub fn to_tsv(&self) -> String {
        let mut rows: Vec<(char, u64)> = self.iter().collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut s = String::new();
        for (c, n) in rows {
            let _ = writeln!(s, "{c}\t{n}");
        }
        s
    }
}

/// Counts every character occurrence in the training titles.
pub fn char_frequency_table(train: &[Instance]) -> Result<FrequencyTable> {
    FrequencyTable::from_titles(train.iter().map(|i| i.title.as_slice()))
}

/// Parses `title<TAB>category` lines against `categories`.
pub fn parse_corpus_tsv(text: &str, categories: &[String]) -> Result<Vec<Instance>> {
    let index: HashMap<&str, usize> = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let n = lineno + 1;
        if line.is_empty() {
            continue;
        }
        let (title, cat) = line
            .rsplit_once('\t')
            .ok_or_else(|| Error::data(format!("corpus line {n}: expected title<TAB>category")))?;
        if title.trim().is_empty() {
            return Err(Error::data(format!("corpus line {n}: empty title")));
        }
        let label = *index
            .get(cat.trim())
            .ok_or_else(|| Error::data(format!("corpus line {n}: unknown category {cat:?}")))?;
        out.push(Instance::new(title, label));
    }
    Ok(out)
}

pub fn load_corpus_tsv(path: &Path, categories: &[String]) -> Result<Vec<Instance>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus_tsv(&text, categories).map_err(|e| match e {
        Error::Data(m) => Error::data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn corpus_to_tsv(instances: &[Instance], categories: &[String]) -> String {
    let mut s = String::new();
    for i in instances {
        let _ = writeln!(s, "{}\t{}", i.title_string(), categories[i.label]);
    }
    s
}

/// 64-bit FNV-1a of the title's UTF-8 bytes, as used in split manifests.
pub fn title_hash(title: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in title.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Summary statistics of a labeled corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub instances: usize,
    pub per_category: BTreeMap<String, usize>,
    pub title_length_mean: f64,
    pub title_length_sd: f64,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub distinct_train_chars: usize,
}

/// Output of the dataset build pipeline.
#[derive(Clone, Debug)]
pub struct BuiltCorpus {
    pub categories: Vec<String>,
    pub instances: Vec<Instance>,
    pub splits: Vec<Split>,
    pub frequencies: FrequencyTable,
    pub summary: CorpusSummary,
}

impl BuiltCorpus {
    pub fn split(&self, which: Split) -> Vec<Instance> {
        self.instances
            .iter()
            .zip(&self.splits)
            .filter(|(_, &s)| s == which)
            .map(|(i, _)| i.clone())
            .collect()
    }

    /// `title-hash<TAB>split` per instance, in corpus order.
    pub fn split_manifest(&self) -> String {
        let mut s = String::new();
        for (i, sp) in self.instances.iter().zip(&self.splits) {
            let _ = writeln!(s, "{}\t{}", title_hash(&i.title_string()), sp.name());
        }
        s
    }

    /// File names written by [`write_dir`](Self::write_dir).
    pub const FILES: [&'static str; 7] = [
        "categories.txt",
        "train.tsv",
        "valid.tsv",
        "test.tsv",
        "frequencies.tsv",
        "splits.tsv",
        "summary.json",
    ];

    /// Writes the split corpus, frequency table, manifest and summary.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let summary =
            serde_json::to_string_pretty(&self.summary).map_err(|e| Error::data(e.to_string()))?;
        let contents = [
            self.categories
                .iter()
                .map(|c| format!("{c}\n"))
                .collect::<String>(),
            corpus_to_tsv(&self.split(Split::Train), &self.categories),
            corpus_to_tsv(&self.split(Split::Valid), &self.categories),
            corpus_to_tsv(&self.split(Split::Test), &self.categories),
            self.frequencies.to_tsv(),
            self.split_manifest(),
            summary + "\n",
        ];
        for (name, text) in Self::FILES.iter().zip(contents) {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// One category name per line; blank lines and `#` comments are skipped.
pub fn parse_categories(text: &str) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let name = line.trim();
        if name.is_empty() || name.starts_with('#') {
            continue;
        }
        if out.iter().any(|c| c == name) {
            return Err(Error::data(format!(
                "categories line {}: duplicate {name:?}",
                lineno + 1
            )));
        }
        out.push(name.to_string());
    }
    if out.len() < 2 {
        return Err(Error::data(format!(
            "need at least 2 categories, got {}",
            out.len()
        )));
    }
    Ok(out)
}

pub fn load_categories(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_categories(&text).map_err(|e| match e {
        Error::Data(m) => Error::data(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Labels, filters and splits a corpus from an offline category graph.
pub fn build_corpus(
    graph: &CategoryGraph,
    memberships: &Memberships,
    seed: u64,
) -> Result<BuiltCorpus> {
    let labels = assign_labels_min_depth(graph, memberships)?;
    let instances: Vec<Instance> = labels
        .iter()
        .filter(|(t, _)| !is_special_title(t) && !t.trim().is_empty())
        .map(|(t, &l)| Instance::new(t, l))
        .collect();
    let splits = split_corpus(instances.len(), seed)?;
    let train: Vec<&[char]> = instances
        .iter()
        .zip(&splits)
        .filter(|(_, &s)| s == Split::Train)
        .map(|(i, _)| i.title.as_slice())
        .collect();
    let frequencies = FrequencyTable::from_titles(train.iter().copied())?;
    let categories = graph.roots().to_vec();
    let mut per_category: BTreeMap<String, usize> =
        categories.iter().map(|c| (c.clone(), 0)).collect();
    for i in &instances {
        *per_category
            .get_mut(&categories[i.label])
            .expect("label in range") += 1;
    }
    let lens: Vec<f64> = instances.iter().map(|i| i.title.len() as f64).collect();
    let mean = lens.iter().sum::<f64>() / lens.len() as f64;
    let var = lens.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / lens.len() as f64;
    let (n_train, n_valid, n_test) = split_sizes(instances.len());
    let summary = CorpusSummary {
        instances: instances.len(),
        per_category,
        title_length_mean: mean,
        title_length_sd: var.sqrt(),
        train: n_train,
        valid: n_valid,
        test: n_test,
        distinct_train_chars: frequencies.len(),
    };
    Ok(BuiltCorpus {
        categories,
        instances,
        splits,
        frequencies,
        summary,
    })
}
