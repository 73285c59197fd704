//! Synthetic marker-word corpora.
//!
//! Every document mixes one or two emotion marker words with neutral filler
//! words. The same marker vocabulary is shared by the distantly labelled
//! large corpus and by a suite of small tasks, so representations learned on
//! some tasks transfer to the others, while a table that has never seen the
//! markers carries no emotion signal.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    save_labeled_file, save_small_dataset, split_dataset, Dataset, HashtagMap, LabeledDocument,
    MultiTaskCorpus, TaskKind, DEFAULT_SPLIT, HASHTAG_FILE, LARGE_FILE, LARGE_NAME, SMALL_DIR,
};
use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::trainer::derive_seed;

pub const EMOTIONS: [&str; 4] = ["joy", "sadness", "anger", "fear"];

const MARKERS: [[&str; 12]; 4] = [
    [
        "delighted",
        "cheerful",
        "glad",
        "smiling",
        "laughing",
        "wonderful",
        "thrilled",
        "grateful",
        "sunshine",
        "celebrate",
        "excited",
        "blessed",
    ],
    [
        "crying",
        "tears",
        "lonely",
        "heartbroken",
        "gloomy",
        "sorrow",
        "grief",
        "miserable",
        "mourning",
        "hopeless",
        "weeping",
        "empty",
    ],
    [
        "furious",
        "annoyed",
        "rage",
        "hate",
        "outraged",
        "livid",
        "irritated",
        "yelling",
        "fuming",
        "disgusted",
        "resent",
        "infuriating",
    ],
    [
        "terrified",
        "nervous",
        "panic",
        "dread",
        "anxious",
        "frightened",
        "shaking",
        "horror",
        "worried",
        "creepy",
        "trembling",
        "nightmare",
    ],
];

/// Hashtags of the distant-supervision map, two per emotion.
pub const HASHTAGS: [(&str, usize); 8] = [
    ("happy", 0),
    ("joyful", 0),
    ("sad", 1),
    ("depressed", 1),
    ("angry", 2),
    ("mad", 2),
    ("scared", 3),
    ("afraid", 3),
];

pub fn markers(emotion: usize) -> &'static [&'static str] {
    &MARKERS[emotion]
}

/// 200 pronounceable neutral words, identical on every call.
pub fn filler_words() -> Vec<String> {
    const ONSETS: [&str; 20] = [
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "pl",
        "gr", "st", "kl",
    ];
    const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];
    const CODAS: [&str; 2] = ["n", "x"];
    let mut out = Vec::with_capacity(200);
    for o in ONSETS {
        for n in NUCLEI {
            for c in CODAS {
                out.push(format!("{o}{n}{c}o"));
            }
        }
    }
    out
}

pub fn hashtag_map() -> HashtagMap {
    HASHTAGS.iter().map(|&(t, e)| (t.to_string(), e)).collect()
}

pub fn hashtag_map_tsv() -> String {
    HASHTAGS
        .iter()
        .map(|(t, e)| format!("{t}\t{}\n", EMOTIONS[*e]))
        .collect()
}

/// Sentence of `len` words containing one or two markers of `emotion`.
pub fn marker_sentence<R: Rng>(
    rng: &mut R,
    emotion: usize,
    fillers: &[String],
    len: usize,
) -> String {
    let n_markers = rng.gen_range(1..=2).min(len);
    let mut words: Vec<&str> = (0..n_markers)
        .map(|_| *MARKERS[emotion].choose(rng).unwrap())
        .collect();
    words.extend((n_markers..len).map(|_| fillers.choose(rng).unwrap().as_str()));
    words.shuffle(rng);
    words.join(" ")
}

fn sentence<R: Rng>(rng: &mut R, emotion: usize, fillers: &[String]) -> String {
    let len = rng.gen_range(6..=10);
    marker_sentence(rng, emotion, fillers, len)
}

/// Raw tweets for distant labelling: `clean` accepted tweets ending in a
/// mapped hashtag, followed by `noise` tweets that the filters reject (URL,
/// quotation, too short, hashtag not trailing, unknown hashtag), shuffled.
pub fn raw_tweets(clean: usize, noise: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fillers = filler_words();
    let mut out = Vec::with_capacity(clean + noise);
    for _ in 0..clean {
        let emotion = rng.gen_range(0..EMOTIONS.len());
        out.push(format!(
            "{} #{}",
            sentence(&mut rng, emotion, &fillers),
            tag_for(&mut rng, emotion)
        ));
    }
    for i in 0..noise {
        let emotion = rng.gen_range(0..EMOTIONS.len());
        let body = sentence(&mut rng, emotion, &fillers);
        let tag = tag_for(&mut rng, emotion);
        out.push(match i % 5 {
            0 => format!("{body} http://t.co/x{i} #{tag}"),
            1 => format!("\"{body}\" #{tag}"),
            2 => format!("{} #{tag}", MARKERS[emotion][i % 12]),
            3 => format!("#{tag} {body}"),
            _ => format!("{body} #blessedday"),
        });
    }
    out.shuffle(&mut rng);
    out
}

fn tag_for<R: Rng>(rng: &mut R, emotion: usize) -> &'static str {
    let tags: Vec<&str> = HASHTAGS
        .iter()
        .filter(|(_, e)| *e == emotion)
        .map(|(t, _)| *t)
        .collect();
    tags.choose(rng).unwrap()
}

/// A 4-class emotion dataset split 70/15/15.
pub fn marker_dataset(name: &str, docs: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fillers = filler_words();
    let docs = (0..docs)
        .map(|i| {
            let label = i % EMOTIONS.len();
            LabeledDocument {
                text: sentence(&mut rng, label, &fillers),
                label,
            }
        })
        .collect();
    split_dataset(
        name,
        EMOTIONS.map(String::from).to_vec(),
        docs,
        DEFAULT_SPLIT,
        derive_seed(seed, 1),
    )
}

/// How the small tasks relabel emotions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TaskShape {
    /// Positive (joy) vs the three negative emotions.
    Sentiment,
    /// All four emotions.
    Emotion,
    /// Anger vs everything else.
    Anger,
}

const SUITE: [(&str, TaskShape, MetricKind); 4] = [
    ("anger_detect", TaskShape::Anger, MetricKind::F1Positive),
    ("emotion4", TaskShape::Emotion, MetricKind::F1OvrMean),
    ("sentiment_a", TaskShape::Sentiment, MetricKind::Accuracy),
    ("sentiment_b", TaskShape::Sentiment, MetricKind::Accuracy),
];

impl TaskShape {
    fn label_names(self) -> Vec<String> {
        match self {
            TaskShape::Sentiment => vec!["negative".into(), "positive".into()],
            TaskShape::Emotion => EMOTIONS.map(String::from).to_vec(),
            TaskShape::Anger => vec!["other".into(), "anger".into()],
        }
    }

    /// Balanced label, then an emotion consistent with it.
    fn draw<R: Rng>(self, rng: &mut R) -> (usize, usize) {
        match self {
            TaskShape::Emotion => {
                let e = rng.gen_range(0..4);
                (e, e)
            }
            TaskShape::Sentiment => {
                if rng.gen_bool(0.5) {
                    (1, 0)
                } else {
                    (0, rng.gen_range(1..4))
                }
            }
            TaskShape::Anger => {
                if rng.gen_bool(0.5) {
                    (1, 2)
                } else {
                    (0, *[0, 1, 3].choose(rng).unwrap())
                }
            }
        }
    }
}

/// Sizes of the synthetic transfer suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    /// Accepted tweets in the large corpus.
    pub large_docs: usize,
    /// Rejected tweets mixed into the raw large corpus.
    pub noise_docs: usize,
    pub small_train: usize,
    pub small_dev: usize,
    pub small_test: usize,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            large_docs: 800,
            noise_docs: 100,
            small_train: 24,
            small_dev: 40,
            small_test: 120,
            seed: 13,
        }
    }
}

/// The four small tasks, sorted by name.
pub fn small_suite(config: &SuiteConfig) -> Vec<Dataset> {
    let fillers = filler_words();
    SUITE
        .iter()
        .enumerate()
        .map(|(i, &(name, shape, metric))| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 10 + i as u64));
            let mut part = |n: usize| -> Vec<LabeledDocument> {
                (0..n)
                    .map(|_| {
                        let (label, emotion) = shape.draw(&mut rng);
                        LabeledDocument {
                            text: sentence(&mut rng, emotion, &fillers),
                            label,
                        }
                    })
                    .collect()
            };
            let train = part(config.small_train);
            let dev = part(config.small_dev);
            let test = part(config.small_test);
            let label_names = shape.label_names();
            Dataset {
                name: name.to_string(),
                task_kind: TaskKind::for_label_count(label_names.len()),
                label_names,
                metric,
                train,
                dev,
                test,
            }
        })
        .collect()
}

/// Raw large corpus plus the small suite, as a [`MultiTaskCorpus`]. The
/// large dataset goes through distant labelling exactly as `prepare` does.
pub fn transfer_suite(config: &SuiteConfig) -> Result<MultiTaskCorpus> {
    let raw = raw_tweets(
        config.large_docs,
        config.noise_docs,
        derive_seed(config.seed, 2),
    );
    let names = EMOTIONS.map(String::from).to_vec();
    let (docs, _) =
        crate::corpus::label_raw_documents(raw.iter().map(String::as_str), &hashtag_map(), &names);
    let large = split_dataset(LARGE_NAME, names, docs, DEFAULT_SPLIT, config.seed)?;
    MultiTaskCorpus::new(large, small_suite(config))
}

/// Writes the inputs of `prepare`: `raw_tweets.txt`, `hashtag_map.tsv` and
/// the pre-split `small/` suite.
pub fn write_raw_corpus(dir: &Path, config: &SuiteConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let raw = raw_tweets(
        config.large_docs,
        config.noise_docs,
        derive_seed(config.seed, 2),
    );
    let raw_path = dir.join(RAW_FILE);
    fs::write(&raw_path, raw.join("\n") + "\n").map_err(|e| Error::io(&raw_path, e))?;
    let map_path = dir.join(HASHTAG_FILE);
    fs::write(&map_path, hashtag_map_tsv()).map_err(|e| Error::io(&map_path, e))?;
    for ds in small_suite(config) {
        save_small_dataset(&dir.join(SMALL_DIR), &ds)?;
    }
    Ok(())
}

pub const RAW_FILE: &str = "raw_tweets.txt";

/// Writes a ready-to-load corpus directory (`large.tsv` already labelled).
pub fn write_corpus_dir(dir: &Path, config: &SuiteConfig) -> Result<()> {
    let corpus = transfer_suite(config)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let large: Vec<LabeledDocument> = corpus.large.all_docs().cloned().collect();
    save_labeled_file(&large, &corpus.large.label_names, &dir.join(LARGE_FILE))?;
    let map_path = dir.join(HASHTAG_FILE);
    fs::write(&map_path, hashtag_map_tsv()).map_err(|e| Error::io(&map_path, e))?;
    for ds in &corpus.smalls {
        save_small_dataset(&dir.join(SMALL_DIR), ds)?;
    }
    Ok(())
}
