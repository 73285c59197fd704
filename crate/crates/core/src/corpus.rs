//! Text handling: tokenization, hashtag-based distant labels, vocabulary,
//! encoding, dataset splits, and the on-disk corpus layout.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricKind;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Widest CNN filter in the default configuration; sentences are padded to
/// at least this many positions.
pub const MIN_PADDED_LEN: usize = 7;

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.7, 0.15, 0.15);

const PUNCT: &[char] = &['.', ',', '!', '?', ';', ':', '"', '(', ')', '\''];

/// Lowercases, splits on whitespace, and breaks the characters
/// `.,!?;:"()'` out as standalone tokens. Chunks starting with `#` or `@`
/// are kept whole.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let chunk = chunk.to_lowercase();
        if chunk.starts_with('#') || chunk.starts_with('@') {
            tokens.push(chunk);
            continue;
        }
        let mut word = String::new();
        for ch in chunk.chars() {
            if PUNCT.contains(&ch) {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                tokens.push(ch.to_string());
            } else {
                word.push(ch);
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
    }
    tokens
}

pub const MIN_DISTANT_TOKENS: usize = 5;

/// Hashtag (lowercase, without `#`) to label index.
pub type HashtagMap = HashMap<String, usize>;

/// Applies the distant-supervision filters to one raw document. Returns the
/// label of the trailing hashtag and the cleaned text (tokens minus that
/// hashtag, space-joined) if the document survives.
pub fn distant_label(raw_text: &str, hashtags: &HashtagMap) -> Option<(usize, String)> {
    let lower = raw_text.to_lowercase();
    if lower.contains("http") || lower.contains("www.") {
        return None;
    }
    if raw_text.contains(['"', '\u{201C}', '\u{201D}']) {
        return None;
    }
    let mut tokens = tokenize(raw_text);
    let last = tokens.pop()?;
    let label = *hashtags.get(last.strip_prefix('#')?)?;
    if tokens.len() < MIN_DISTANT_TOKENS {
        return None;
    }
    Some((label, tokens.join(" ")))
}

/// Token/id table. Ids 0 and 1 are reserved for padding and unknown words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from an id-ordered word list whose first two entries are the
    /// padding and unknown tokens.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < 2 || words[PAD] != PAD_TOKEN || words[UNK] != UNK_TOKEN {
            return Err(Error::Config(
                "vocabulary must start with the padding and unknown tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry `{w}`")));
            }
        }
        Ok(Self { words, index })
    }

    /// Keeps every word counted at least `min_count` times; ids follow
    /// descending count, ties broken lexicographically.
    pub fn from_counts(counts: &HashMap<String, usize>, min_count: usize) -> Self {
        Self::from_counts_where(counts, |_, c| c >= min_count.max(1))
    }

    pub(crate) fn from_counts_where<F>(counts: &HashMap<String, usize>, keep: F) -> Self
    where
        F: Fn(&str, usize) -> bool,
    {
        let mut kept: Vec<(&String, usize)> = counts
            .iter()
            .filter(|(w, &c)| keep(w, c) && w.as_str() != PAD_TOKEN && w.as_str() != UNK_TOKEN)
            .map(|(w, &c)| (w, c))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut words = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        words.extend(kept.into_iter().map(|(w, _)| w.clone()));
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    /// Always false; the reserved entries are always present.
    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn id_or_unk(&self, word: &str) -> usize {
        self.id(word).unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.words.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let words = Vec::<String>::deserialize(d)?;
        Vocabulary::from_words(words).map_err(serde::de::Error::custom)
    }
}

pub fn count_tokens<'a, I, S>(docs: I) -> HashMap<String, usize>
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    let mut counts = HashMap::new();
    for doc in docs {
        for tok in doc {
            *counts.entry(tok.as_ref().to_string()).or_insert(0) += 1;
        }
    }
    counts
}

pub fn build_vocab<'a, I, S>(docs: I, min_count: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    Vocabulary::from_counts(&count_tokens(docs), min_count)
}

/// Token ids padded with [`PAD`] up to `ids.len()`; `true_len` counts the
/// real tokens at the front.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSentence {
    pub ids: Vec<usize>,
    pub true_len: usize,
}

impl EncodedSentence {
    pub fn padded_len(&self) -> usize {
        self.ids.len()
    }

    pub fn real_ids(&self) -> &[usize] {
        &self.ids[..self.true_len]
    }
}

pub fn encode_ids(ids: &[usize], padded_len: usize) -> EncodedSentence {
    let true_len = ids.len().min(padded_len);
    let mut out = Vec::with_capacity(padded_len);
    out.extend_from_slice(&ids[..true_len]);
    out.resize(padded_len, PAD);
    EncodedSentence { ids: out, true_len }
}

pub fn encode<S: AsRef<str>>(
    tokens: &[S],
    vocab: &Vocabulary,
    padded_len: usize,
) -> EncodedSentence {
    let ids: Vec<usize> = tokens
        .iter()
        .take(padded_len)
        .map(|t| vocab.id_or_unk(t.as_ref()))
        .collect();
    encode_ids(&ids, padded_len)
}

/// Padded length for a batch: the longest sentence, but never below the
/// widest filter.
pub fn batch_padded_len<I>(lengths: I, min_len: usize) -> usize
where
    I: IntoIterator<Item = usize>,
{
    lengths.into_iter().max().unwrap_or(0).max(min_len)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDocument {
    pub text: String,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Multiclass,
    Binary,
}

impl TaskKind {
    pub fn for_label_count(n: usize) -> Self {
        if n == 2 {
            TaskKind::Binary
        } else {
            TaskKind::Multiclass
        }
    }

    pub fn default_metric(&self) -> MetricKind {
        match self {
            TaskKind::Binary => MetricKind::F1Positive,
            TaskKind::Multiclass => MetricKind::F1OvrMean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub label_names: Vec<String>,
    pub task_kind: TaskKind,
    /// Metric reported by evaluation; sentiment-style tasks use accuracy.
    pub metric: MetricKind,
    pub train: Vec<LabeledDocument>,
    pub dev: Vec<LabeledDocument>,
    pub test: Vec<LabeledDocument>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        for doc in self.train.iter().chain(&self.dev).chain(&self.test) {
            if doc.label >= self.num_classes() {
                return Err(Error::LabelOutOfRange {
                    label: doc.label,
                    classes: self.num_classes(),
                });
            }
        }
        Ok(())
    }

    pub fn all_docs(&self) -> impl Iterator<Item = &LabeledDocument> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    /// Fraction of each label over all parts, in label order.
    pub fn label_distribution(&self) -> Vec<(String, usize, f64)> {
        let mut counts = vec![0usize; self.num_classes()];
        for d in self.all_docs() {
            counts[d.label] += 1;
        }
        let total: usize = counts.iter().sum();
        self.label_names
            .iter()
            .zip(counts)
            .map(|(name, c)| {
                let frac = if total == 0 {
                    0.0
                } else {
                    c as f64 / total as f64
                };
                (name.clone(), c, frac)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<LabeledDocument>,
    pub dev: Vec<LabeledDocument>,
    pub test: Vec<LabeledDocument>,
}

/// Seeded shuffle, then dev and test take `floor(ratio * n)` documents
/// each and train gets everything else.
pub fn split_documents(
    mut docs: Vec<LabeledDocument>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Splits> {
    let (tr, dv, ts) = ratios;
    if !(tr > 0.0 && dv > 0.0 && ts > 0.0) || ((tr + dv + ts) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidRatios(format!("{tr}, {dv}, {ts}")));
    }
    if docs.len() < 3 {
        return Err(Error::DatasetTooSmall);
    }
    let n = docs.len() as f64;
    // 0.15 * 20 is 3.0000000000000004; nudge so exact products floor correctly
    let n_dev = (dv * n + 1e-9).floor() as usize;
    let n_test = (ts * n + 1e-9).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    docs.shuffle(&mut rng);
    let test = docs.split_off(docs.len() - n_test);
    let dev = docs.split_off(docs.len() - n_dev);
    Ok(Splits {
        train: docs,
        dev,
        test,
    })
}

pub fn split_dataset(
    name: &str,
    label_names: Vec<String>,
    docs: Vec<LabeledDocument>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Dataset> {
    let task_kind = TaskKind::for_label_count(label_names.len());
    let Splits { train, dev, test } = split_documents(docs, ratios, seed)?;
    let ds = Dataset {
        name: name.to_string(),
        label_names,
        task_kind,
        metric: task_kind.default_metric(),
        train,
        dev,
        test,
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct LabeledFile {
    pub label_names: Vec<String>,
    pub docs: Vec<LabeledDocument>,
}

fn read_utf8(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| {
        let line = 1 + e.as_bytes()[..e.utf8_error().valid_up_to()]
            .iter()
            .filter(|&&b| b == b'\n')
            .count();
        Error::parse(path, line, "file is not valid UTF-8")
    })
}

/// Reads `<label>\t<text>` lines, interning labels into `label_names`
/// (existing entries keep their indices).
pub fn load_labeled_file_into(
    path: &Path,
    label_names: &mut Vec<String>,
) -> Result<Vec<LabeledDocument>> {
    let content = read_utf8(path)?;
    let mut lookup: HashMap<String, usize> = label_names
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), i))
        .collect();
    let mut docs = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let (label, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `<label>\\t<text>`"))?;
        let idx = *lookup.entry(label.to_string()).or_insert_with(|| {
            label_names.push(label.to_string());
            label_names.len() - 1
        });
        docs.push(LabeledDocument {
            text: text.to_string(),
            label: idx,
        });
    }
    Ok(docs)
}

pub fn load_labeled_file(path: &Path) -> Result<LabeledFile> {
    let mut label_names = Vec::new();
    let docs = load_labeled_file_into(path, &mut label_names)?;
    Ok(LabeledFile { label_names, docs })
}

pub fn save_labeled_file(
    docs: &[LabeledDocument],
    label_names: &[String],
    path: &Path,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for doc in docs {
        let label = label_names.get(doc.label).ok_or(Error::LabelOutOfRange {
            label: doc.label,
            classes: label_names.len(),
        })?;
        if doc.text.contains(['\n', '\r']) {
            return Err(Error::Config("document text contains a line break".into()));
        }
        writeln!(w, "{label}\t{}", doc.text).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `hashtag<TAB>emotion` lines. Returns the map (hashtags lowercased,
/// `#` stripped) and the emotion names in first-appearance order.
pub fn load_hashtag_map(path: &Path) -> Result<(HashtagMap, Vec<String>)> {
    let content = read_utf8(path)?;
    let mut map = HashtagMap::new();
    let mut names: Vec<String> = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (tag, emotion) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `hashtag\\temotion`"))?;
        let tag = tag.trim().trim_start_matches('#').to_lowercase();
        let emotion = emotion.trim();
        let idx = match names.iter().position(|n| n == emotion) {
            Some(idx) => idx,
            None => {
                names.push(emotion.to_string());
                names.len() - 1
            }
        };
        map.insert(tag, idx);
    }
    Ok((map, names))
}

/// `large` is d_L; `smalls` are the task-specific datasets.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiTaskCorpus {
    pub large: Dataset,
    pub smalls: Vec<Dataset>,
}

impl MultiTaskCorpus {
    pub fn new(large: Dataset, smalls: Vec<Dataset>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for ds in std::iter::once(&large).chain(&smalls) {
            ds.validate()?;
            if !seen.insert(ds.name.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate dataset name `{}`",
                    ds.name
                )));
            }
        }
        Ok(Self { large, smalls })
    }

    pub fn small_names(&self) -> Vec<&str> {
        self.smalls.iter().map(|d| d.name.as_str()).collect()
    }

    /// Same corpus with the named small datasets removed.
    pub fn without(&self, excluded: &[&str]) -> MultiTaskCorpus {
        MultiTaskCorpus {
            large: self.large.clone(),
            smalls: self
                .smalls
                .iter()
                .filter(|d| !excluded.contains(&d.name.as_str()))
                .cloned()
                .collect(),
        }
    }
}

/// Minimum count for the large corpus and the small datasets when building
/// the shared vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabPolicy {
    pub min_count_large: usize,
    pub min_count_small: usize,
}

impl Default for VocabPolicy {
    fn default() -> Self {
        Self {
            min_count_large: 2,
            min_count_small: 1,
        }
    }
}

/// Shared vocabulary over every part (train/dev/test) of every dataset
/// present in `corpus`. A word is kept if it reaches the large-corpus
/// threshold there or the small threshold in the small datasets combined;
/// ids follow the combined count.
pub fn build_corpus_vocab(corpus: &MultiTaskCorpus, policy: VocabPolicy) -> Vocabulary {
    let tokenize_all =
        |ds: &Dataset| -> Vec<Vec<String>> { ds.all_docs().map(|d| tokenize(&d.text)).collect() };
    let large_tokens = tokenize_all(&corpus.large);
    let small_tokens: Vec<Vec<String>> = corpus.smalls.iter().flat_map(tokenize_all).collect();
    let large_counts = count_tokens(large_tokens.iter().map(Vec::as_slice));
    let small_counts = count_tokens(small_tokens.iter().map(Vec::as_slice));
    let mut combined = large_counts.clone();
    for (w, c) in &small_counts {
        *combined.entry(w.clone()).or_insert(0) += c;
    }
    Vocabulary::from_counts_where(&combined, |w, _| {
        large_counts
            .get(w)
            .is_some_and(|&c| c >= policy.min_count_large.max(1))
            || small_counts
                .get(w)
                .is_some_and(|&c| c >= policy.min_count_small.max(1))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub label_names: Vec<String>,
    pub task_kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricKind>,
}

pub const LARGE_FILE: &str = "large.tsv";
pub const HASHTAG_FILE: &str = "hashtag_map.tsv";
pub const SMALL_DIR: &str = "small";
pub const LARGE_NAME: &str = "large";

/// Loads a corpus directory (`large.tsv`, `hashtag_map.tsv`,
/// `small/<name>.{train,dev,test}.tsv`, `small/<name>.meta.json`). The large
/// dataset is split 70/15/15 under `seed`.
pub fn load_corpus_dir(dir: &Path, seed: u64) -> Result<MultiTaskCorpus> {
    let mut label_names = Vec::new();
    let hashtag_path = dir.join(HASHTAG_FILE);
    if hashtag_path.exists() {
        label_names = load_hashtag_map(&hashtag_path)?.1;
    }
    let docs = load_labeled_file_into(&dir.join(LARGE_FILE), &mut label_names)?;
    let large = split_dataset(LARGE_NAME, label_names, docs, DEFAULT_SPLIT, seed)?;

    let smalls = load_small_datasets(&dir.join(SMALL_DIR))?;
    MultiTaskCorpus::new(large, smalls)
}

/// Every `<name>.meta.json` dataset under `dir`, sorted by name. A missing
/// directory means no small datasets.
pub fn load_small_datasets(dir: &Path) -> Result<Vec<Dataset>> {
    let mut names: Vec<String> = Vec::new();
    if dir.is_dir() {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let file_name = entry.file_name().to_string_lossy().into_owned();
            if let Some(name) = file_name.strip_suffix(".meta.json") {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    names
        .iter()
        .map(|name| load_small_dataset(dir, name))
        .collect()
}

pub fn load_small_dataset(dir: &Path, name: &str) -> Result<Dataset> {
    let meta_path = dir.join(format!("{name}.meta.json"));
    let meta: DatasetMeta = serde_json::from_str(&read_utf8(&meta_path)?)
        .map_err(|e| Error::parse(&meta_path, e.line(), e.to_string()))?;
    let mut label_names = meta.label_names.clone();
    let mut part = |suffix: &str| -> Result<Vec<LabeledDocument>> {
        let p = dir.join(format!("{name}.{suffix}.tsv"));
        if p.exists() {
            load_labeled_file_into(&p, &mut label_names)
        } else {
            Ok(Vec::new())
        }
    };
    let train = part("train")?;
    let dev = part("dev")?;
    let test = part("test")?;
    if label_names.len() != meta.label_names.len() {
        return Err(Error::Config(format!(
            "dataset `{name}` uses labels not declared in its meta file: {:?}",
            &label_names[meta.label_names.len()..]
        )));
    }
    let ds = Dataset {
        name: name.to_string(),
        label_names,
        task_kind: meta.task_kind,
        metric: meta
            .metric
            .unwrap_or_else(|| meta.task_kind.default_metric()),
        train,
        dev,
        test,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_small_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = DatasetMeta {
        label_names: ds.label_names.clone(),
        task_kind: ds.task_kind,
        metric: Some(ds.metric),
    };
    let meta_path = dir.join(format!("{}.meta.json", ds.name));
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n")
        .map_err(|e| Error::io(&meta_path, e))?;
    for (suffix, docs) in [("train", &ds.train), ("dev", &ds.dev), ("test", &ds.test)] {
        save_labeled_file(
            docs,
            &ds.label_names,
            &dir.join(format!("{}.{suffix}.tsv", ds.name)),
        )?;
    }
    Ok(())
}

/// Summary of a distant-labeling pass over raw documents.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PrepareReport {
    pub raw_documents: usize,
    pub accepted: usize,
    pub per_label: BTreeMap<String, usize>,
}

/// Runs [`distant_label`] over every non-empty line of `raw` and returns the
/// accepted documents.
pub fn label_raw_documents<'a, I>(
    lines: I,
    hashtags: &HashtagMap,
    label_names: &[String],
) -> (Vec<LabeledDocument>, PrepareReport)
where
    I: IntoIterator<Item = &'a str>,
{
    let mut report = PrepareReport::default();
    let mut docs = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        report.raw_documents += 1;
        if let Some((label, text)) = distant_label(line, hashtags) {
            report.accepted += 1;
            let name = label_names
                .get(label)
                .cloned()
                .unwrap_or_else(|| label.to_string());
            *report.per_label.entry(name).or_insert(0) += 1;
            docs.push(LabeledDocument { text, label });
        }
    }
    (docs, report)
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(read_utf8(path)?
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .collect())
}

pub fn corpus_paths(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(LARGE_FILE),
        dir.join(HASHTAG_FILE),
        dir.join(SMALL_DIR),
    )
}
