//! The `emo2vec` command line: `prepare → pretrain → train → export → eval`,
//! plus `concat` and `stats`.
//!
//! Flags are long-form `--key value` pairs. `--config <file>` supplies a JSON
//! object of defaults (same keys, without the dashes); explicit flags win.
//! Every successful run writes `manifest.json` into `--out` recording the
//! resolved options and a content hash of every input.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::cnn::CnnConfig;
use crate::corpus::{
    build_corpus_vocab, label_raw_documents, load_corpus_dir, load_hashtag_map,
    load_small_datasets, read_lines, save_labeled_file, save_small_dataset, MultiTaskCorpus,
    VocabPolicy, HASHTAG_FILE, LARGE_FILE, SMALL_DIR,
};
use crate::embedding::EmbeddingMatrix;
use crate::error::Error;
use crate::eval::{
    eval_frozen_embedding, leave_one_out_eval, results_tsv, summarize, EvalConfig, EvalResult,
    LooConfig,
};
use crate::logreg::PenaltyKind;
use crate::synthetic::RAW_FILE;
use crate::trainer::{
    history_to_jsonl, pretrain_large, train_multitask, Checkpoint, Emo2VecModel, EncodedCorpus,
    EpochRecord, ModelConfig, TrainOutcome, TrainerConfig,
};

pub const DEFAULT_SEED: u64 = 13;

pub const USAGE: &str = "\
usage: emo2vec <verb> [--key value]...

verbs:
  prepare   --input <dir> --out <dir>
            distant-label <dir>/raw_tweets.txt with <dir>/hashtag_map.tsv and
            copy <dir>/small/ into a corpus directory
  pretrain  --corpus <dir> --out <dir> [--dim --filters --widths --lr
            --batch-size --epochs --patience --min-count-large --min-count-small]
  train     --corpus <dir> --out <dir> [--init <checkpoint>] [--lr --l2
            --batch-size --epochs --patience --exclude a,b --include-large
            --pretrain --l2-exact-norm --dim --filters --widths]
  export    --checkpoint <file> --out <dir> [--header]
  eval      --corpus <dir> --out <dir> --mode leave-one-out --hold-out <i>
            | --mode frozen --vectors <file> [--dataset <name>]
            [--eval-lr --eval-epochs --eval-patience --eval-l2 ...]
  concat    --a <vectors> --b <vectors> --out <dir>
  stats     --corpus <dir> [--out <dir>]

common: --seed <n> (default 13)  --config <json>  --force true
";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Prepare,
    Pretrain,
    Train,
    Export,
    Eval,
    Concat,
    Stats,
}

impl Verb {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "prepare" => Verb::Prepare,
            "pretrain" => Verb::Pretrain,
            "train" => Verb::Train,
            "export" => Verb::Export,
            "eval" => Verb::Eval,
            "concat" => Verb::Concat,
            "stats" => Verb::Stats,
            _ => return None,
        })
    }

    fn allowed(self) -> Vec<&'static str> {
        const MODEL: &[&str] = &[
            "dim",
            "filters",
            "widths",
            "min-count-large",
            "min-count-small",
        ];
        const TRAIN: &[&str] = &[
            "lr",
            "l2",
            "batch-size",
            "epochs",
            "patience",
            "include-large",
            "pretrain",
            "l2-exact-norm",
            "pretrain-lr",
            "pretrain-batch-size",
            "pretrain-epochs",
        ];
        const EVAL: &[&str] = &[
            "eval-lr",
            "eval-l2",
            "eval-batch-size",
            "eval-epochs",
            "eval-patience",
        ];
        let own: &[&str] = match self {
            Verb::Prepare => &["input"],
            Verb::Pretrain => &[
                "corpus",
                "dim",
                "filters",
                "widths",
                "min-count-large",
                "min-count-small",
                "lr",
                "batch-size",
                "epochs",
                "patience",
            ],
            Verb::Train => return [&["corpus", "init", "exclude"][..], MODEL, TRAIN].concat(),
            Verb::Export => &["checkpoint", "header"],
            Verb::Eval => {
                return [
                    &["corpus", "mode", "hold-out", "vectors", "dataset"][..],
                    MODEL,
                    TRAIN,
                    EVAL,
                ]
                .concat()
            }
            Verb::Concat => &["a", "b"],
            Verb::Stats => &["corpus"],
        };
        own.to_vec()
    }

    fn required(self) -> &'static [&'static str] {
        match self {
            Verb::Prepare => &["input", "out"],
            Verb::Pretrain | Verb::Train => &["corpus", "out"],
            Verb::Export => &["checkpoint", "out"],
            Verb::Eval => &["corpus", "out", "mode"],
            Verb::Concat => &["a", "b", "out"],
            Verb::Stats => &["corpus"],
        }
    }
}

const COMMON: [&str; 4] = ["seed", "config", "out", "force"];

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(String::from));
        f.write_str(&s.unwrap_or_default())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// A parsed invocation. `options` holds config-file values overridden by
/// explicit flags, plus the default seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Command {
    pub verb: Verb,
    pub options: BTreeMap<String, String>,
}

pub fn parse_args<S: AsRef<str>>(argv: &[S]) -> CliResult<Command> {
    let mut it = argv.iter().map(AsRef::as_ref);
    let verb_str = it.next().ok_or_else(|| usage("missing verb"))?;
    let verb = Verb::parse(verb_str).ok_or_else(|| usage(format!("unknown verb `{verb_str}`")))?;
    let known = |k: &str| COMMON.contains(&k) || verb.allowed().contains(&k);

    let mut explicit = BTreeMap::new();
    while let Some(arg) = it.next() {
        let key = arg
            .strip_prefix("--")
            .filter(|k| !k.is_empty())
            .ok_or_else(|| usage(format!("expected a `--flag`, got `{arg}`")))?;
        if !known(key) {
            return Err(usage(format!("unknown flag `--{key}` for `{verb}`")));
        }
        let value = it
            .next()
            .ok_or_else(|| usage(format!("flag `--{key}` needs a value")))?;
        if explicit
            .insert(key.to_string(), value.to_string())
            .is_some()
        {
            return Err(usage(format!("flag `--{key}` given twice")));
        }
    }

    let mut options = BTreeMap::new();
    options.insert("seed".to_string(), DEFAULT_SEED.to_string());
    if let Some(path) = explicit.get("config") {
        for (k, v) in read_config(Path::new(path))? {
            if !known(&k) || k == "config" {
                return Err(usage(format!("unknown key `{k}` in config file {path}")));
            }
            options.insert(k, v);
        }
    }
    options.extend(explicit);
    Ok(Command { verb, options })
}

fn read_config(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(usage(format!(
            "config {} must be a JSON object",
            path.display()
        )));
    };
    map.into_iter()
        .map(|(k, v)| {
            let s = match v {
                Value::String(s) => s,
                Value::Number(n) => n.to_string(),
                Value::Bool(b) => b.to_string(),
                Value::Array(items) => items
                    .iter()
                    .map(|i| match i {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(","),
                other => {
                    return Err(usage(format!(
                        "config key `{k}` has unsupported value {other}"
                    )))
                }
            };
            Ok((k, s))
        })
        .collect()
}

impl Command {
    /// Checks that every option the verb needs is present.
    pub fn validate(&self) -> CliResult<()> {
        for req in self.verb.required() {
            if !self.options.contains_key(*req) {
                return Err(usage(format!("`{}` requires `--{req}`", self.verb)));
            }
        }
        // surface malformed values as usage errors before any work starts
        self.seed()?;
        self.force()?;
        self.model_config()?;
        self.vocab_policy()?;
        self.pretrain_config("")?;
        self.pretrain_config("pretrain-")?;
        self.multitask_config()?;
        self.eval_config()?;
        let _: bool = self.parsed("header", false)?;
        let _: usize = self.parsed("hold-out", 0)?;
        Ok(())
    }

    fn str(&self, key: &str) -> Option<&str> {
        self.options.get(key).map(String::as_str)
    }

    fn required(&self, key: &str) -> CliResult<&str> {
        self.str(key)
            .ok_or_else(|| usage(format!("`{}` requires `--{key}`", self.verb)))
    }

    fn path(&self, key: &str) -> CliResult<PathBuf> {
        self.required(key).map(PathBuf::from)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        match self.str(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| usage(format!("invalid value `{v}` for `--{key}`"))),
        }
    }

    fn list(&self, key: &str) -> Option<Vec<String>> {
        self.str(key).map(|v| {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        })
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.parsed("seed", DEFAULT_SEED)
    }

    fn force(&self) -> CliResult<bool> {
        self.parsed("force", false)
    }

    fn model_config(&self) -> CliResult<ModelConfig> {
        let d = ModelConfig::default();
        let widths = match self.list("widths") {
            None => d.cnn.widths.clone(),
            Some(ws) => ws
                .iter()
                .map(|w| {
                    w.parse()
                        .map_err(|_| usage(format!("invalid width `{w}` in `--widths`")))
                })
                .collect::<CliResult<Vec<usize>>>()?,
        };
        Ok(ModelConfig {
            dim: self.parsed("dim", d.dim)?,
            cnn: CnnConfig {
                widths,
                filters: self.parsed("filters", d.cnn.filters)?,
            },
        })
    }

    fn vocab_policy(&self) -> CliResult<VocabPolicy> {
        let d = VocabPolicy::default();
        Ok(VocabPolicy {
            min_count_large: self.parsed("min-count-large", d.min_count_large)?,
            min_count_small: self.parsed("min-count-small", d.min_count_small)?,
        })
    }

    fn pretrain_config(&self, prefix: &str) -> CliResult<TrainerConfig> {
        let d = TrainerConfig::pretrain_defaults();
        let key = |k: &str| format!("{prefix}{k}");
        Ok(TrainerConfig {
            lr: self.parsed(&key("lr"), d.lr)?,
            batch_size: self.parsed(&key("batch-size"), d.batch_size)?,
            max_epochs: self.parsed(&key("epochs"), d.max_epochs)?,
            patience: self.parsed("patience", d.patience)?,
            seed: self.seed()?,
            ..d
        })
    }

    fn multitask_config(&self) -> CliResult<TrainerConfig> {
        let d = TrainerConfig::multitask_defaults();
        let exact: bool = self.parsed("l2-exact-norm", false)?;
        Ok(TrainerConfig {
            lr: self.parsed("lr", d.lr)?,
            lambda: self.parsed("l2", d.lambda)?,
            batch_size: self.parsed("batch-size", d.batch_size)?,
            max_epochs: self.parsed("epochs", d.max_epochs)?,
            patience: self.parsed("patience", d.patience)?,
            seed: self.seed()?,
            pretrain: self.parsed("pretrain", d.pretrain)?,
            include_large_in_joint: self.parsed("include-large", d.include_large_in_joint)?,
            penalty: if exact {
                PenaltyKind::Norm
            } else {
                PenaltyKind::Squared
            },
        })
    }

    fn eval_config(&self) -> CliResult<EvalConfig> {
        let d = EvalConfig::default();
        Ok(EvalConfig {
            lr: self.parsed("eval-lr", d.lr)?,
            lambda: self.parsed("eval-l2", d.lambda)?,
            batch_size: self.parsed("eval-batch-size", d.batch_size)?,
            max_epochs: self.parsed("eval-epochs", d.max_epochs)?,
            patience: self.parsed("eval-patience", d.patience)?,
            seed: self.seed()?,
            standardize: d.standardize,
        })
    }
}

/// `sha256("blob <len>\0" + content)`, the git object hash over SHA-256.
pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InputHash {
    pub path: String,
    pub hash: String,
}

/// Hashes a file, or every file under a directory in sorted order.
pub fn hash_inputs(path: &Path) -> crate::error::Result<Vec<InputHash>> {
    let mut out = Vec::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
            .collect::<crate::error::Result<_>>()?;
        entries.sort();
        for p in entries {
            out.extend(hash_inputs(&p)?);
        }
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        out.push(InputHash {
            path: path.display().to_string(),
            hash: blob_hash(&bytes),
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct Manifest<'a> {
    verb: Verb,
    seed: u64,
    options: &'a BTreeMap<String, String>,
    config: Value,
    inputs: Vec<InputHash>,
    outputs: Vec<InputHash>,
    version: &'static str,
}

/// Output directory that refuses to overwrite files unless `--force true`.
struct OutDir {
    dir: PathBuf,
    force: bool,
    written: Vec<PathBuf>,
}

impl OutDir {
    fn new(dir: PathBuf, force: bool) -> crate::error::Result<Self> {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            force,
            written: Vec::new(),
        })
    }

    fn claim(&mut self, name: &str) -> crate::error::Result<PathBuf> {
        let p = self.dir.join(name);
        if p.exists() && !self.force {
            return Err(Error::Config(format!(
                "{} already exists; pass `--force true` to overwrite",
                p.display()
            )));
        }
        self.written.push(p.clone());
        Ok(p)
    }

    fn write(&mut self, name: &str, content: &str) -> crate::error::Result<PathBuf> {
        let p = self.claim(name)?;
        fs::write(&p, content).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    fn manifest(&mut self, cmd: &Command, config: Value, inputs: &[&Path]) -> CliResult<()> {
        let mut hashed = Vec::new();
        for p in inputs {
            hashed.extend(hash_inputs(p)?);
        }
        let mut outputs = Vec::new();
        for p in &self.written {
            outputs.extend(hash_inputs(p)?);
        }
        let manifest = Manifest {
            verb: cmd.verb,
            seed: cmd.seed()?,
            options: &cmd.options,
            config,
            inputs: hashed,
            outputs,
            version: env!("CARGO_PKG_VERSION"),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)? + "\n";
        self.write("manifest.json", &text)?;
        Ok(())
    }
}

fn log_history(stage: &str, history: &[EpochRecord]) {
    for r in history {
        eprintln!(
            "[{stage}] epoch {:>3}  loss {:.6}  avg dev acc {:.4}",
            r.epoch, r.combined_loss, r.avg_dev_accuracy
        );
    }
}

fn json<T: Serialize>(v: &T) -> CliResult<Value> {
    Ok(serde_json::to_value(v).map_err(Error::from)?)
}

pub fn run(cmd: &Command) -> CliResult<()> {
    cmd.validate()?;
    match cmd.verb {
        Verb::Prepare => run_prepare(cmd),
        Verb::Pretrain => run_pretrain(cmd),
        Verb::Train => run_train(cmd),
        Verb::Export => run_export(cmd),
        Verb::Eval => run_eval(cmd),
        Verb::Concat => run_concat(cmd),
        Verb::Stats => run_stats(cmd),
    }
}

fn run_prepare(cmd: &Command) -> CliResult<()> {
    let input = cmd.path("input")?;
    let mut out = OutDir::new(cmd.path("out")?, cmd.force()?)?;
    let (map, label_names) = load_hashtag_map(&input.join(HASHTAG_FILE))?;
    let raw = read_lines(&input.join(RAW_FILE))?;
    let (docs, report) = label_raw_documents(raw.iter().map(String::as_str), &map, &label_names);
    eprintln!(
        "[prepare] accepted {} of {} raw documents",
        report.accepted, report.raw_documents
    );
    let large = out.claim(LARGE_FILE)?;
    save_labeled_file(&docs, &label_names, &large)?;
    let map_text = fs::read_to_string(input.join(HASHTAG_FILE))
        .map_err(|e| Error::io(input.join(HASHTAG_FILE), e))?;
    out.write(HASHTAG_FILE, &map_text)?;
    let small_in = input.join(SMALL_DIR);
    if small_in.is_dir() {
        // round-trip through the loader so malformed small datasets fail here
        for ds in load_small_datasets(&small_in)? {
            save_small_dataset(&out.dir.join(SMALL_DIR), &ds)?;
        }
        out.written.push(out.dir.join(SMALL_DIR));
    }
    out.write(
        "prepare_report.json",
        &(serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n"),
    )?;
    out.manifest(cmd, json(&report)?, &[&input])
}

fn load_corpus(cmd: &Command) -> CliResult<(PathBuf, MultiTaskCorpus)> {
    let dir = cmd.path("corpus")?;
    let corpus = load_corpus_dir(&dir, cmd.seed()?)?;
    Ok((dir, corpus))
}

fn save_outcome(out: &mut OutDir, outcome: &TrainOutcome) -> CliResult<()> {
    let p = out.claim("checkpoint.json")?;
    save_checkpoint(&outcome.checkpoint, &p)?;
    out.write("history.jsonl", &history_to_jsonl(&outcome.history)?)?;
    Ok(())
}

fn run_pretrain(cmd: &Command) -> CliResult<()> {
    let (dir, corpus) = load_corpus(cmd)?;
    let model_cfg = cmd.model_config()?;
    let policy = cmd.vocab_policy()?;
    let cfg = cmd.pretrain_config("")?;
    let mut out = OutDir::new(cmd.path("out")?, cmd.force()?)?;
    let vocab = build_corpus_vocab(&corpus, policy);
    let encoded = EncodedCorpus::new(&corpus, &vocab);
    let model = Emo2VecModel::for_corpus(&corpus, vocab, &model_cfg, cfg.seed)?;
    let outcome = pretrain_large(model, &encoded.large, &cfg)?;
    log_history("pretrain", &outcome.history);
    save_outcome(&mut out, &outcome)?;
    let config = serde_json::json!({ "model": json(&model_cfg)?, "vocab": json(&policy)?, "trainer": json(&cfg)? });
    out.manifest(cmd, config, &[&dir])
}

fn run_train(cmd: &Command) -> CliResult<()> {
    let (dir, full) = load_corpus(cmd)?;
    let excluded = cmd.list("exclude").unwrap_or_default();
    for name in &excluded {
        if !full.smalls.iter().any(|d| &d.name == name) {
            return Err(usage(format!("`--exclude` names unknown dataset `{name}`")));
        }
    }
    let corpus = full.without(&excluded.iter().map(String::as_str).collect::<Vec<_>>());
    let cfg = cmd.multitask_config()?;
    let pre_cfg = cmd.pretrain_config("pretrain-")?;
    let policy = cmd.vocab_policy()?;
    let mut out = OutDir::new(cmd.path("out")?, cmd.force()?)?;
    let mut inputs = vec![dir.clone()];

    let (model, model_cfg) = match cmd.str("init") {
        Some(init) => {
            let init = PathBuf::from(init);
            let ckpt = load_checkpoint(&init)?;
            inputs.push(init);
            let model = ckpt.model;
            for ds in &corpus.smalls {
                if model.head_index(&ds.name).is_none() {
                    return Err(Error::Config(format!(
                        "initial checkpoint has no head for `{}`",
                        ds.name
                    ))
                    .into());
                }
            }
            let mc = model.config();
            (model, mc)
        }
        None => {
            let mc = cmd.model_config()?;
            let vocab = build_corpus_vocab(&corpus, policy);
            (Emo2VecModel::for_corpus(&corpus, vocab, &mc, cfg.seed)?, mc)
        }
    };
    let encoded = EncodedCorpus::new(&corpus, model.embedding.vocab());
    let model = if cfg.pretrain {
        let pre = pretrain_large(model, &encoded.large, &pre_cfg)?;
        log_history("pretrain", &pre.history);
        pre.checkpoint.model
    } else {
        model
    };
    let outcome = train_multitask(model, &encoded, &cfg)?;
    log_history("train", &outcome.history);
    save_outcome(&mut out, &outcome)?;
    let config = serde_json::json!({
        "model": json(&model_cfg)?,
        "vocab": json(&policy)?,
        "trainer": json(&cfg)?,
        "pretrain": json(&pre_cfg)?,
        "excluded": excluded,
        "trained_on": corpus.small_names(),
    });
    let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    out.manifest(cmd, config, &refs)
}

fn run_export(cmd: &Command) -> CliResult<()> {
    let path = cmd.path("checkpoint")?;
    let header: bool = cmd.parsed("header", false)?;
    let ckpt: Checkpoint = load_checkpoint(&path)?;
    let mut out = OutDir::new(cmd.path("out")?, cmd.force()?)?;
    let p = out.claim("vectors.txt")?;
    ckpt.model.embedding.export_text(&p, header)?;
    eprintln!(
        "[export] {} vectors of dim {} → {}",
        ckpt.model.embedding.vocab().len() - 2,
        ckpt.model.embedding.dim(),
        p.display()
    );
    out.manifest(cmd, serde_json::json!({ "header": header }), &[&path])
}

fn write_results(out: &mut OutDir, results: Vec<EvalResult>) -> CliResult<()> {
    for r in &results {
        eprintln!("[eval] {}\t{}\t{:.4}", r.dataset, r.metric, r.value);
    }
    out.write("results.tsv", &results_tsv(&results))?;
    let summary = summarize(results);
    eprintln!("[eval] average {:.4}", summary.average);
    out.write(
        "summary.json",
        &(serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n"),
    )?;
    Ok(())
}

fn run_eval(cmd: &Command) -> CliResult<()> {
    let (dir, corpus) = load_corpus(cmd)?;
    let eval_cfg = cmd.eval_config()?;
    let mut out = OutDir::new(cmd.path("out")?, cmd.force()?)?;
    match cmd.required("mode")? {
        "leave-one-out" => {
            let raw = cmd.required("hold-out")?;
            let i: usize = raw
                .parse()
                .map_err(|_| usage(format!("invalid value `{raw}` for `--hold-out`")))?;
            if i >= corpus.smalls.len() {
                return Err(usage(format!(
                    "`--hold-out {i}` out of range: corpus has {} small datasets",
                    corpus.smalls.len()
                )));
            }
            let config = LooConfig {
                model: cmd.model_config()?,
                vocab: cmd.vocab_policy()?,
                pretrain: cmd.pretrain_config("pretrain-")?,
                multitask: cmd.multitask_config()?,
                eval: eval_cfg,
            };
            let outcome = leave_one_out_eval(&corpus, i, &config)?;
            log_history("train", &outcome.history);
            eprintln!(
                "[eval] held out `{}`, trained on {:?}",
                outcome.result.dataset, outcome.trained_on
            );
            let p = out.claim("checkpoint.json")?;
            save_checkpoint(&outcome.checkpoint, &p)?;
            write_results(&mut out, vec![outcome.result])?;
            let manifest_cfg =
                serde_json::json!({ "loo": json(&config)?, "trained_on": outcome.trained_on });
            out.manifest(cmd, manifest_cfg, &[&dir])
        }
        "frozen" => {
            let vectors = cmd.path("vectors")?;
            let emb = EmbeddingMatrix::import_text(&vectors)?;
            let targets: Vec<_> = match cmd.str("dataset") {
                Some(name) => {
                    let ds = corpus
                        .smalls
                        .iter()
                        .find(|d| d.name == name)
                        .ok_or_else(|| usage(format!("unknown dataset `{name}`")))?;
                    vec![ds]
                }
                None => corpus.smalls.iter().collect(),
            };
            let results = targets
                .into_iter()
                .map(|ds| eval_frozen_embedding(&emb, ds, &eval_cfg))
                .collect::<crate::error::Result<Vec<_>>>()?;
            write_results(&mut out, results)?;
            out.manifest(cmd, json(&eval_cfg)?, &[&dir, &vectors])
        }
        other => Err(usage(format!(
            "unknown `--mode {other}` (expected leave-one-out or frozen)"
        ))),
    }
}

fn run_concat(cmd: &Command) -> CliResult<()> {
    let (pa, pb) = (cmd.path("a")?, cmd.path("b")?);
    let a = EmbeddingMatrix::import_text(&pa)?;
    let b = EmbeddingMatrix::import_text(&pb)?;
    let joined = EmbeddingMatrix::concat(&a, &b)?;
    let mut out = OutDir::new(cmd.path("out")?, cmd.force()?)?;
    let p = out.claim("vectors.txt")?;
    joined.export_text(&p, false)?;
    eprintln!(
        "[concat] {} + {} → {} dims, {} words",
        a.dim(),
        b.dim(),
        joined.dim(),
        joined.vocab().len() - 2
    );
    out.manifest(cmd, Value::Null, &[&pa, &pb])
}

/// Label-distribution table of every dataset in a corpus directory.
pub fn stats_table(corpus: &MultiTaskCorpus) -> String {
    let mut s = String::from("dataset\tlabel\tcount\tpercent\n");
    for ds in std::iter::once(&corpus.large).chain(&corpus.smalls) {
        for (label, count, frac) in ds.label_distribution() {
            s.push_str(&format!(
                "{}\t{label}\t{count}\t{:.1}\n",
                ds.name,
                frac * 100.0
            ));
        }
    }
    s
}

fn run_stats(cmd: &Command) -> CliResult<()> {
    let (dir, corpus) = load_corpus(cmd)?;
    let table = stats_table(&corpus);
    print!("{table}");
    if let Some(o) = cmd.str("out") {
        let mut out = OutDir::new(PathBuf::from(o), cmd.force()?)?;
        out.write("stats.tsv", &table)?;
        out.manifest(cmd, Value::Null, &[&dir])?;
    }
    Ok(())
}

/// Entry point shared by the binary and tests; returns the exit code.
pub fn main_with_args<S: AsRef<str>>(argv: &[S]) -> i32 {
    let result = parse_args(argv).and_then(|cmd| run(&cmd));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprint!("{USAGE}");
            }
            e.exit_code()
        }
    }
}
