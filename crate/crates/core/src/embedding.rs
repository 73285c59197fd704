//! The shared embedding table: initialization, lookup, sparse gradients,
//! word-vector text files and concatenation.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedSentence, Vocabulary, PAD, PAD_TOKEN, UNK_TOKEN};
use crate::error::{Error, Result};
use crate::kernels::{axpy, AdamHyper, AdamState, DenseMatrix};

pub const DEFAULT_DIM: usize = 100;

/// `|V| x k` table. The padding row is zero and never updated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    vocab: Vocabulary,
    table: DenseMatrix,
}

impl EmbeddingMatrix {
    pub fn new(vocab: Vocabulary, table: DenseMatrix) -> Result<Self> {
        if table.rows() != vocab.len() || table.cols() == 0 {
            return Err(Error::Shape(format!(
                "table {:?} does not fit a vocabulary of {} words",
                table.shape(),
                vocab.len()
            )));
        }
        if !table.is_finite() {
            return Err(Error::Shape("embedding table has non-finite values".into()));
        }
        let mut m = Self { vocab, table };
        m.table.row_mut(PAD).fill(0.0);
        Ok(m)
    }

    /// Entries i.i.d. uniform in `[-0.5/k, 0.5/k]`, padding row zeroed.
    pub fn init_random(vocab: Vocabulary, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dim must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = 0.5 / dim as f64;
        let values = (0..vocab.len() * dim)
            .map(|_| rng.gen_range(-half..=half))
            .collect();
        let table = DenseMatrix::from_vec(vocab.len(), dim, values)?;
        Self::new(vocab, table)
    }

    pub fn zeros(vocab: Vocabulary, dim: usize) -> Result<Self> {
        let rows = vocab.len();
        Self::new(vocab, DenseMatrix::zeros(rows, dim))
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn table(&self) -> &DenseMatrix {
        &self.table
    }

    #[cfg(test)]
    pub(crate) fn table_mut(&mut self) -> &mut DenseMatrix {
        &mut self.table
    }

    pub fn vector(&self, word: &str) -> Option<&[f64]> {
        self.vocab.id(word).map(|id| self.table.row(id))
    }

    /// One row per position of `sentence`, padding included.
    pub fn lookup(&self, sentence: &EncodedSentence) -> Result<DenseMatrix> {
        let k = self.dim();
        let mut out = DenseMatrix::zeros(sentence.padded_len(), k);
        for (t, &id) in sentence.ids.iter().enumerate() {
            if id >= self.vocab.len() {
                return Err(Error::TokenOutOfRange {
                    id,
                    size: self.vocab.len(),
                });
            }
            out.row_mut(t).copy_from_slice(self.table.row(id));
        }
        Ok(out)
    }

    /// Writes `word v1 .. vk` lines (padding and unknown rows excluded),
    /// optionally preceded by a `<count> <dim>` header.
    pub fn export_text(&self, path: &Path, header: bool) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        if header {
            writeln!(w, "{} {}", self.vocab.len() - 2, self.dim()).map_err(io)?;
        }
        for (id, word) in self.vocab.words().iter().enumerate().skip(2) {
            w.write_all(word.as_bytes()).map_err(io)?;
            for v in self.table.row(id) {
                // shortest repr that parses back to the same bits
                write!(w, " {v:?}").map_err(io)?;
            }
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Reads a word-vector text file (plain or `.gz`). A first line of
    /// exactly two integers is treated as a `<count> <dim>` header.
    pub fn import_text(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
            Box::new(GzDecoder::new(file))
        } else {
            Box::new(file)
        };
        let reader = BufReader::new(reader);

        let mut words = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut values: Vec<f64> = Vec::new();
        let mut dim: Option<usize> = None;
        let mut seen = std::collections::HashSet::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::parse(path, lineno, e.to_string()))?;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let word = parts.next().unwrap_or_default();
            let rest: Vec<&str> = parts.filter(|p| !p.is_empty()).collect();
            if lineno == 1
                && rest.len() == 1
                && word.parse::<usize>().is_ok()
                && rest[0].parse::<usize>().is_ok()
            {
                dim = Some(rest[0].parse().unwrap());
                continue;
            }
            match dim {
                Some(d) if d != rest.len() => {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("expected {d} values, found {}", rest.len()),
                    ))
                }
                None if rest.is_empty() => {
                    return Err(Error::parse(path, lineno, "line has no vector values"))
                }
                None => dim = Some(rest.len()),
                _ => {}
            }
            if word == PAD_TOKEN || word == UNK_TOKEN || !seen.insert(word.to_string()) {
                continue;
            }
            for tok in rest {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("invalid number `{tok}`")))?;
                if !v.is_finite() {
                    return Err(Error::parse(path, lineno, "non-finite value"));
                }
                values.push(v);
            }
            words.push(word.to_string());
        }
        let dim = dim.ok_or_else(|| Error::parse(path, 1, "no vectors found"))?;
        let mut all = vec![0.0; 2 * dim];
        all.extend(values);
        let vocab = Vocabulary::from_words(words)?;
        let table = DenseMatrix::from_vec(vocab.len(), dim, all)?;
        Self::new(vocab, table)
    }

    /// Concatenates two tables over the union of their vocabularies: `a`'s
    /// word order first, then `b`-only words lexicographically. A word
    /// missing from one side gets zeros there.
    pub fn concat(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        let mut words: Vec<String> = a.vocab.words().to_vec();
        let mut b_only: Vec<&String> = b
            .vocab
            .words()
            .iter()
            .skip(2)
            .filter(|w| a.vocab.id(w).is_none())
            .collect();
        b_only.sort();
        words.extend(b_only.into_iter().cloned());
        let vocab = Vocabulary::from_words(words)?;
        let (ka, kb) = (a.dim(), b.dim());
        let mut table = DenseMatrix::zeros(vocab.len(), ka + kb);
        for (id, w) in vocab.words().iter().enumerate() {
            if id == PAD {
                continue;
            }
            let row = table.row_mut(id);
            if let Some(src) = a.vocab.id(w) {
                row[..ka].copy_from_slice(a.table.row(src));
            }
            if let Some(src) = b.vocab.id(w) {
                row[ka..].copy_from_slice(b.table.row(src));
            }
        }
        Self::new(vocab, table)
    }
}

/// Gradient rows for the embedding table keyed by token id. Ordered so
/// that reductions are reproducible.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseGrad {
    dim: usize,
    rows: BTreeMap<usize, Vec<f64>>,
}

impl SparseGrad {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, id: usize) -> Option<&[f64]> {
        self.rows.get(&id).map(Vec::as_slice)
    }

    pub fn rows(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows.iter().map(|(&id, r)| (id, r.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `self[id] += alpha * grad`; padding is discarded.
    pub fn add_row(&mut self, id: usize, alpha: f64, grad: &[f64]) {
        if id == PAD {
            return;
        }
        let dim = self.dim;
        let row = self.rows.entry(id).or_insert_with(|| vec![0.0; dim]);
        axpy(row, alpha, grad);
    }

    pub fn merge_scaled(&mut self, other: &SparseGrad, alpha: f64) {
        for (id, r) in other.rows() {
            self.add_row(id, alpha, r);
        }
    }

    pub fn to_dense(&self, vocab_size: usize) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(vocab_size, self.dim);
        for (&id, r) in &self.rows {
            m.row_mut(id).copy_from_slice(r);
        }
        m
    }
}

/// Backward of [`EmbeddingMatrix::lookup`]: adds upstream row `t` into
/// buffer row `ids[t]`.
pub fn accumulate_sparse_grad(
    buffer: &mut SparseGrad,
    sentence: &EncodedSentence,
    upstream: &DenseMatrix,
) -> Result<()> {
    if upstream.rows() != sentence.padded_len() || upstream.cols() != buffer.dim {
        return Err(Error::Shape(format!(
            "upstream {:?} vs sentence length {} and dim {}",
            upstream.shape(),
            sentence.padded_len(),
            buffer.dim
        )));
    }
    for (t, &id) in sentence.ids.iter().enumerate() {
        buffer.add_row(id, 1.0, upstream.row(t));
    }
    Ok(())
}

/// Dense Adam over the whole table with the padding row held fixed. Rows
/// without gradient still move by their momentum, as in plain Adam.
pub fn adam_update_embedding(
    emb: &mut EmbeddingMatrix,
    grad: &SparseGrad,
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    let rows = emb.vocab.len();
    let dim = emb.dim();
    if grad.dim != dim {
        return Err(Error::Shape(format!(
            "gradient dim {} vs embedding dim {dim}",
            grad.dim
        )));
    }
    let dense = grad.to_dense(rows);
    crate::kernels::adam_step_masked(
        emb.table.values_mut(),
        dense.values(),
        state,
        hyper,
        Some(PAD * dim..(PAD + 1) * dim),
    )
}
