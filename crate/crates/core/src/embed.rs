//! Word vectors: the text vector format, lookup with subword fallback, and a
//! FastText-style subword skip-gram trainer with negative sampling.
//!
//! A word's n-grams are taken over `"<" + norm + ">"` (in characters) for
//! every length in `min_n..=max_n` and hashed with FNV-1a 64 into `buckets`
//! rows. Bucket rows are stored sparsely and start at zero, so a table with
//! 2^21 buckets only costs memory for the buckets the corpus touches.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{is_container, Container, ContainerError};
use crate::tensor::{axpy, dot, sigmoid, Matrix};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("row count mismatch: header declares {declared}, file has {found}")]
    RowCount { declared: usize, found: usize },
    #[error("index {index} out of range for {what} of size {size}")]
    IndexOutOfRange {
        what: &'static str,
        index: u64,
        size: u64,
    },
    #[error("duplicate token {0:?}")]
    DuplicateToken(String),
    #[error("vocabulary is empty after min-count filtering")]
    EmptyVocabulary,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Character n-grams of `"<" + word + ">"` for lengths `min_n..=max_n`.
pub fn char_ngrams(word: &str, min_n: usize, max_n: usize) -> Vec<String> {
    let marked: Vec<char> = std::iter::once('<')
        .chain(word.chars())
        .chain(std::iter::once('>'))
        .collect();
    let mut out = Vec::new();
    for n in min_n.max(1)..=max_n {
        if n > marked.len() {
            break;
        }
        for window in marked.windows(n) {
            out.push(window.iter().collect());
        }
    }
    out
}

/// Sparse bucket table of hashed n-gram vectors. Absent rows are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SubwordTable {
    pub min_n: usize,
    pub max_n: usize,
    pub buckets: u64,
    dim: usize,
    rows: BTreeMap<u64, Vec<f64>>,
}

impl SubwordTable {
    pub fn new(min_n: usize, max_n: usize, buckets: u64, dim: usize) -> Result<Self, EmbedError> {
        if buckets == 0 || min_n == 0 || min_n > max_n {
            return Err(EmbedError::Config(format!(
                "subword table needs 1 <= min_n <= max_n and buckets >= 1 (got {min_n}..={max_n}, {buckets})"
            )));
        }
        Ok(SubwordTable {
            min_n,
            max_n,
            buckets,
            dim,
            rows: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bucket_ids(&self, word: &str) -> Vec<u64> {
        char_ngrams(word, self.min_n, self.max_n)
            .iter()
            .map(|g| fnv1a64(g.as_bytes()) % self.buckets)
            .collect()
    }

    pub fn row(&self, bucket: u64) -> Option<&[f64]> {
        self.rows.get(&bucket).map(Vec::as_slice)
    }

    pub fn row_mut(&mut self, bucket: u64) -> &mut [f64] {
        let dim = self.dim;
        self.rows.entry(bucket).or_insert_with(|| vec![0.0; dim])
    }

    pub fn stored_rows(&self) -> impl Iterator<Item = (u64, &[f64])> {
        self.rows.iter().map(|(&b, v)| (b, v.as_slice()))
    }

    /// Adds the n-gram rows of `word` into `out`; returns the n-gram count.
    fn accumulate(&self, word: &str, out: &mut [f64]) -> usize {
        let ids = self.bucket_ids(word);
        for b in &ids {
            if let Some(row) = self.row(*b) {
                axpy(1.0, row, out);
            }
        }
        ids.len()
    }
}

/// Token vectors with optional subword table and a reserved UNK row.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectors {
    words: Vec<String>,
    vocab: HashMap<String, usize>,
    matrix: Matrix,
    subwords: Option<SubwordTable>,
    unk: Vec<f64>,
}

impl WordVectors {
    pub fn new(words: Vec<String>, matrix: Matrix) -> Result<Self, EmbedError> {
        assert_eq!(words.len(), matrix.rows(), "one row per word");
        let mut vocab = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if vocab.insert(w.clone(), i).is_some() {
                return Err(EmbedError::DuplicateToken(w.clone()));
            }
        }
        let unk = vec![0.0; matrix.cols()];
        Ok(WordVectors {
            words,
            vocab,
            matrix,
            subwords: None,
            unk,
        })
    }

    pub fn with_subwords(mut self, table: SubwordTable) -> Self {
        assert_eq!(table.dim(), self.dim());
        self.subwords = Some(table);
        self
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.vocab.get(word).copied()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn subwords(&self) -> Option<&SubwordTable> {
        self.subwords.as_ref()
    }

    pub fn unk(&self) -> &[f64] {
        &self.unk
    }

    /// Average of the n-gram rows of `word`, if a subword table is present
    /// and the word yields at least one n-gram.
    pub fn subword_vector(&self, word: &str) -> Option<Vec<f64>> {
        let table = self.subwords.as_ref()?;
        let mut v = vec![0.0; self.dim()];
        let n = table.accumulate(word, &mut v);
        (n > 0).then(|| v.into_iter().map(|x| x / n as f64).collect())
    }

    /// Total lookup. In-vocabulary words with a subword table get the mean of
    /// their word row and n-gram rows; out-of-vocabulary words fall back to
    /// their n-gram mean, then to the UNK row.
    pub fn lookup(&self, word: &str) -> Vec<f64> {
        match (self.index_of(word), &self.subwords) {
            (Some(i), None) => self.matrix.row(i).to_vec(),
            (Some(i), Some(table)) => {
                let mut v = self.matrix.row(i).to_vec();
                let n = table.accumulate(word, &mut v) + 1;
                v.into_iter().map(|x| x / n as f64).collect()
            }
            (None, _) => self
                .subword_vector(word)
                .unwrap_or_else(|| self.unk.clone()),
        }
    }

    /// Writes the text vector format. With a subword table, each row is the
    /// composed [`lookup`](Self::lookup) vector.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim())?;
        for word in &self.words {
            write!(w, "{word}")?;
            for v in self.lookup(word) {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        self.write_text(std::io::BufWriter::new(fs::File::create(path)?))
    }

    pub fn to_container(&self) -> Container {
        let subword_meta = self.subwords.as_ref().map(|t| {
            serde_json::json!({"min_n": t.min_n, "max_n": t.max_n, "buckets": t.buckets})
        });
        let mut c = Container::new(
            "word-vectors",
            serde_json::json!({"words": self.words, "dim": self.dim(), "subwords": subword_meta}),
        );
        self.append_tensors(&mut c, "");
        c
    }

    /// Adds `{prefix}matrix` and, with subwords, `{prefix}subword.ids` and
    /// `{prefix}subword.rows` to a container.
    pub fn append_tensors(&self, c: &mut Container, prefix: &str) {
        c.push(
            format!("{prefix}matrix"),
            self.matrix.shape().to_vec(),
            self.matrix.data().to_vec(),
        );
        if let Some(t) = &self.subwords {
            let ids: Vec<f64> = t.rows.keys().map(|&b| b as f64).collect();
            let rows: Vec<f64> = t.rows.values().flatten().copied().collect();
            c.push(format!("{prefix}subword.ids"), vec![ids.len()], ids);
            c.push(format!("{prefix}subword.rows"), vec![t.rows.len(), self.dim()], rows);
        }
    }

    pub fn from_container(c: &Container) -> Result<Self, EmbedError> {
        c.check_kind("word-vectors")?;
        let meta: VectorsMeta = serde_json::from_value(c.meta.clone())
            .map_err(|e| ContainerError::Header(e.to_string()))?;
        Self::from_parts(c, "", meta.words, meta.dim, meta.subwords)
    }

    pub fn from_parts(
        c: &Container,
        prefix: &str,
        words: Vec<String>,
        dim: usize,
        subwords: Option<SubwordMeta>,
    ) -> Result<Self, EmbedError> {
        let data = c.expect(&format!("{prefix}matrix"), &[words.len(), dim])?;
        let rows = words.len();
        let mut wv = WordVectors::new(words, Matrix::from_vec(rows, dim, data.to_vec()))?;
        if let Some(meta) = subwords {
            let mut table = SubwordTable::new(meta.min_n, meta.max_n, meta.buckets, dim)?;
            let ids = &c.get(&format!("{prefix}subword.ids"))?.data;
            let rows = c.expect(&format!("{prefix}subword.rows"), &[ids.len(), dim])?;
            for (id, row) in ids.iter().zip(rows.chunks(dim.max(1))) {
                let id = *id as u64;
                if id >= table.buckets {
                    return Err(EmbedError::IndexOutOfRange {
                        what: "subword buckets",
                        index: id,
                        size: table.buckets,
                    });
                }
                table.row_mut(id).copy_from_slice(row);
            }
            wv = wv.with_subwords(table);
        }
        Ok(wv)
    }

    pub fn subword_meta(&self) -> Option<SubwordMeta> {
        self.subwords.as_ref().map(|t| SubwordMeta {
            min_n: t.min_n,
            max_n: t.max_n,
            buckets: t.buckets,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        self.to_container().save(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubwordMeta {
    pub min_n: usize,
    pub max_n: usize,
    pub buckets: u64,
}

#[derive(Deserialize)]
struct VectorsMeta {
    words: Vec<String>,
    dim: usize,
    subwords: Option<SubwordMeta>,
}

/// Parses the text vector format: a `<count> <dim>` header line, then one
/// `<token> <v1> ... <v_dim>` line per token.
pub fn read_word_vectors<R: Read>(reader: R) -> Result<WordVectors, EmbedError> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, line)) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => {
                return Err(EmbedError::Format {
                    line: 1,
                    message: "missing header".into(),
                })
            }
        }
    };
    let bad_header = || EmbedError::Format {
        line: 1,
        message: format!("expected `<count> <dim>` header, found {header:?}"),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 2 {
        return Err(bad_header());
    }
    let count: usize = fields[0].parse().map_err(|_| bad_header())?;
    let dim: usize = fields[1].parse().map_err(|_| bad_header())?;
    if dim == 0 {
        return Err(bad_header());
    }

    let mut words = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * dim);
    let mut seen = HashMap::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line");
        let values: Vec<&str> = parts.collect();
        if values.len() != dim {
            return Err(EmbedError::Format {
                line: line_no,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        for v in values {
            let x: f64 = v.parse().map_err(|_| EmbedError::Format {
                line: line_no,
                message: format!("invalid number {v:?}"),
            })?;
            if !x.is_finite() {
                return Err(EmbedError::Format {
                    line: line_no,
                    message: format!("non-finite value {v:?}"),
                });
            }
            data.push(x);
        }
        if seen.insert(token.to_string(), line_no).is_some() {
            return Err(EmbedError::Format {
                line: line_no,
                message: format!("duplicate token {token:?}"),
            });
        }
        words.push(token.to_string());
    }
    if words.len() != count {
        return Err(EmbedError::RowCount {
            declared: count,
            found: words.len(),
        });
    }
    let n = words.len();
    WordVectors::new(words, Matrix::from_vec(n, dim, data))
}

/// Loads vectors from either the text format or a `word-vectors` container.
pub fn load_word_vectors(path: impl AsRef<Path>) -> Result<WordVectors, EmbedError> {
    let path = path.as_ref();
    if is_container(path) {
        WordVectors::from_container(&Container::load(path)?)
    } else {
        read_word_vectors(fs::File::open(path)?)
    }
}

/// Skip-gram trainer settings. `buckets = 0` disables subwords.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgnsConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_count: usize,
    pub subsample: f64,
    pub min_n: usize,
    pub max_n: usize,
    pub buckets: u64,
    pub seed: u64,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_count: 2,
            subsample: 1e-4,
            min_n: 3,
            max_n: 6,
            buckets: 1 << 21,
            seed: 1,
        }
    }
}

impl SgnsConfig {
    pub fn subwords_enabled(&self) -> bool {
        self.buckets > 0 && self.min_n <= self.max_n
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |m: &str| Err(EmbedError::Config(m.to_string()));
        if self.dim == 0 || self.window == 0 || self.negatives == 0 || self.epochs == 0 || self.min_count == 0 {
            return bad("dim, window, negatives, epochs and min_count must be positive");
        }
        if !(self.subsample > 0.0) {
            return bad("subsample threshold must be > 0");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be > 0");
        }
        if self.subwords_enabled() && self.min_n == 0 {
            return bad("min_n must be >= 1");
        }
        Ok(())
    }
}

/// Frequency-sorted training vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub words: Vec<String>,
    pub counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps words seen at least `min_count` times, sorted by descending
    /// count, then lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Vocabulary {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for sentence in corpus {
            for tok in sentence {
                *counts.entry(tok.as_ref()).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count as u64)
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let words: Vec<String> = entries.iter().map(|(w, _)| w.to_string()).collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary {
            counts: entries.iter().map(|e| e.1).collect(),
            words,
            index,
        }
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// word2vec keep probability `(sqrt(f/t) + 1) · t/f`, clamped to 1.
pub fn keep_probability(count: u64, total: u64, threshold: f64) -> f64 {
    let f = count as f64 / total as f64;
    (((f / threshold).sqrt() + 1.0) * threshold / f).min(1.0)
}

/// Draws from the unigram distribution raised to `power`.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    pub fn new(counts: &[u64], power: f64) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(power);
                acc
            })
            .collect();
        NegativeSampler { cumulative }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty sampler");
        let x = rng.gen::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= x)
            .min(self.cumulative.len() - 1)
    }
}

/// A row of the input (center-side) parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InputRow {
    Word(usize),
    Bucket(u64),
}

/// Trainable SGNS parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SgnsParams {
    pub input: Matrix,
    pub subwords: Option<SubwordTable>,
    pub output: Matrix,
}

/// Sparse gradient: only rows touched by one step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SgnsGradient {
    pub input: BTreeMap<InputRow, Vec<f64>>,
    pub output: BTreeMap<usize, Vec<f64>>,
}

impl SgnsParams {
    pub fn dim(&self) -> usize {
        self.input.cols()
    }

    fn check_input(&self, row: InputRow) -> Result<(), EmbedError> {
        match row {
            InputRow::Word(i) if i >= self.input.rows() => Err(EmbedError::IndexOutOfRange {
                what: "input rows",
                index: i as u64,
                size: self.input.rows() as u64,
            }),
            InputRow::Bucket(b) => match &self.subwords {
                Some(t) if b < t.buckets => Ok(()),
                t => Err(EmbedError::IndexOutOfRange {
                    what: "subword buckets",
                    index: b,
                    size: t.as_ref().map_or(0, |t| t.buckets),
                }),
            },
            InputRow::Word(_) => Ok(()),
        }
    }

    fn check_output(&self, i: usize) -> Result<(), EmbedError> {
        if i >= self.output.rows() {
            return Err(EmbedError::IndexOutOfRange {
                what: "output rows",
                index: i as u64,
                size: self.output.rows() as u64,
            });
        }
        Ok(())
    }

    fn input_row(&self, row: InputRow) -> Option<&[f64]> {
        match row {
            InputRow::Word(i) => Some(self.input.row(i)),
            InputRow::Bucket(b) => self.subwords.as_ref().and_then(|t| t.row(b)),
        }
    }

    /// Mean of the given input rows.
    pub fn center_vector(&self, center: &[InputRow]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for &row in center {
            if let Some(r) = self.input_row(row) {
                axpy(1.0, r, &mut v);
            }
        }
        let n = center.len().max(1) as f64;
        v.iter_mut().for_each(|x| *x /= n);
        v
    }

    /// `params -= lr · grad`
    pub fn apply(&mut self, grad: &SgnsGradient, lr: f64) {
        for (&row, g) in &grad.input {
            let target = match row {
                InputRow::Word(i) => self.input.row_mut(i),
                InputRow::Bucket(b) => self
                    .subwords
                    .as_mut()
                    .expect("bucket gradient implies subword table")
                    .row_mut(b),
            };
            axpy(-lr, g, target);
        }
        for (&i, g) in &grad.output {
            axpy(-lr, g, self.output.row_mut(i));
        }
    }
}

/// Loss and sparse gradient for one (center, context) pair:
/// `−ln σ(u_ctx·v) − Σ_neg ln σ(−u_neg·v)`, where `v` is the mean of the
/// center's input rows and `u` are output rows.
pub fn sgns_step(
    center: &[InputRow],
    context: usize,
    negatives: &[usize],
    params: &SgnsParams,
) -> Result<(f64, SgnsGradient), EmbedError> {
    for &row in center {
        params.check_input(row)?;
    }
    params.check_output(context)?;
    for &n in negatives {
        params.check_output(n)?;
    }
    let dim = params.dim();
    let v = params.center_vector(center);
    let mut grad = SgnsGradient::default();
    let mut d_v = vec![0.0; dim];

    let targets = std::iter::once((context, 1.0)).chain(negatives.iter().map(|&n| (n, 0.0)));
    let mut loss = 0.0;
    for (row, label) in targets {
        let u = params.output.row(row);
        let p = sigmoid(dot(u, &v));
        // d(loss)/d(score) for the logistic loss with this label
        let g = p - label;
        loss -= if label == 1.0 {
            ln_sigmoid(dot(u, &v))
        } else {
            ln_sigmoid(-dot(u, &v))
        };
        axpy(g, u, &mut d_v);
        let out = grad.output.entry(row).or_insert_with(|| vec![0.0; dim]);
        axpy(g, &v, out);
    }
    if !center.is_empty() {
        let share = 1.0 / center.len() as f64;
        for &row in center {
            let g = grad.input.entry(row).or_insert_with(|| vec![0.0; dim]);
            axpy(share, &d_v, g);
        }
    }
    Ok((loss, grad))
}

fn ln_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbedTrainReport {
    /// Mean pair loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub pairs_per_epoch: Vec<u64>,
}

/// Trains subword skip-gram vectors; see [`train_subword_skipgram_with_report`].
pub fn train_subword_skipgram<S: AsRef<str>>(
    corpus: &[Vec<S>],
    config: &SgnsConfig,
) -> Result<WordVectors, EmbedError> {
    train_subword_skipgram_with_report(corpus, config).map(|(wv, _)| wv)
}

/// Trains skip-gram with negative sampling where a center word is the mean of
/// its word row and n-gram bucket rows.
///
/// Random draws come from one ChaCha8 stream seeded by `config.seed`, in this
/// order: word-row initialisation; then per epoch and sentence, one
/// subsampling draw per in-vocabulary token whose keep probability is below
/// one, and per kept center a window draw followed by `negatives` draws for
/// each context. Negatives equal to the context word are dropped.
pub fn train_subword_skipgram_with_report<S: AsRef<str>>(
    corpus: &[Vec<S>],
    config: &SgnsConfig,
) -> Result<(WordVectors, EmbedTrainReport), EmbedError> {
    config.validate()?;
    let vocab = Vocabulary::build(corpus, config.min_count);
    if vocab.is_empty() {
        return Err(EmbedError::EmptyVocabulary);
    }
    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = 0.5 / dim as f64;
    let input = Matrix::from_vec(
        vocab.len(),
        dim,
        (0..vocab.len() * dim).map(|_| rng.gen_range(-bound..bound)).collect(),
    );
    let subwords = if config.subwords_enabled() {
        Some(SubwordTable::new(config.min_n, config.max_n, config.buckets, dim)?)
    } else {
        None
    };
    let mut params = SgnsParams {
        input,
        output: Matrix::zeros(vocab.len(), dim),
        subwords,
    };

    let compositions: Vec<Vec<InputRow>> = vocab
        .words
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let mut rows = vec![InputRow::Word(i)];
            if let Some(t) = &params.subwords {
                rows.extend(t.bucket_ids(w).into_iter().map(InputRow::Bucket));
            }
            rows
        })
        .collect();
    let keep: Vec<f64> = vocab
        .counts
        .iter()
        .map(|&c| keep_probability(c, vocab.total(), config.subsample))
        .collect();
    let sampler = NegativeSampler::new(&vocab.counts, 0.75);

    let total_work = (vocab.total() * config.epochs as u64).max(1) as f64;
    let mut processed = 0u64;
    let mut report = EmbedTrainReport::default();
    let mut negatives = Vec::with_capacity(config.negatives);

    for _ in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut pairs = 0u64;
        for sentence in corpus {
            let lr = config.learning_rate * (1.0 - processed as f64 / total_work).max(1e-4);
            let mut ids = Vec::with_capacity(sentence.len());
            for tok in sentence {
                if let Some(i) = vocab.get(tok.as_ref()) {
                    processed += 1;
                    if keep[i] >= 1.0 || rng.gen::<f64>() < keep[i] {
                        ids.push(i);
                    }
                }
            }
            for pos in 0..ids.len() {
                let reach = rng.gen_range(1..=config.window);
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(ids.len() - 1);
                for ctx in lo..=hi {
                    if ctx == pos {
                        continue;
                    }
                    let target = ids[ctx];
                    negatives.clear();
                    for _ in 0..config.negatives {
                        let n = sampler.sample(&mut rng);
                        if n != target {
                            negatives.push(n);
                        }
                    }
                    let (loss, grad) = sgns_step(&compositions[ids[pos]], target, &negatives, &params)?;
                    params.apply(&grad, lr);
                    loss_sum += loss;
                    pairs += 1;
                }
            }
        }
        report
            .epoch_losses
            .push(if pairs == 0 { 0.0 } else { loss_sum / pairs as f64 });
        report.pairs_per_epoch.push(pairs);
    }

    let mut wv = WordVectors::new(vocab.words, params.input)?;
    if let Some(t) = params.subwords {
        wv = wv.with_subwords(t);
    }
    Ok((wv, report))
}
