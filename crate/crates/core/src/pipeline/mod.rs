//! Training, prediction and evaluation of the full tagger.

mod ablation;
mod checkpoint;
mod model;
mod optim;

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::ContainerError;
use crate::crf::CrfError;
use crate::embed::{load_word_vectors, train_subword_skipgram, EmbedError, SgnsConfig, WordVectors};
use crate::metrics::{entity_f1, token_f1, Granularity, Metrics, MetricsError};
use crate::net::NetConfig;
use crate::schema::LabeledSentence;

pub use ablation::{run_ablation, run_ablation_on_split, AblationReport, AblationRow};
pub use checkpoint::{Checkpoint, CHECKPOINT_KIND};
pub use model::{Architecture, EncodedSentence, NerModel, Params, ScoredSpan, WordInput, WORDS_BLOCK};
pub use optim::{clip_global_norm, Adam, AdamConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0} is empty")]
    EmptyData(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("split policy leaves the {0} split empty")]
    EmptySplit(&'static str),
    #[error("word vectors have dimension {found}, configuration expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("embedding source {0} selected but no vectors file configured")]
    MissingVectors(EmbeddingSource),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where word vectors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingSource {
    /// Subword skip-gram vectors: loaded from `subword_vectors` if set,
    /// otherwise trained on the training split with the `embed` settings.
    #[default]
    TrainedSubword,
    /// A plain vectors file given by `pretrained_vectors`.
    LoadedPretrained,
}

impl std::fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmbeddingSource::TrainedSubword => "trained-subword",
            EmbeddingSource::LoadedPretrained => "loaded-pretrained",
        })
    }
}

impl FromStr for EmbeddingSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trained-subword" => Ok(EmbeddingSource::TrainedSubword),
            "loaded-pretrained" => Ok(EmbeddingSource::LoadedPretrained),
            _ => Err(format!("unknown embedding source {s:?} (expected trained-subword or loaded-pretrained)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub dropout: f64,
    pub seed: u64,
    pub train_fraction: f64,
    pub dev_fraction: f64,
    pub embedding: EmbeddingSource,
    pub pretrained_vectors: Option<PathBuf>,
    pub subword_vectors: Option<PathBuf>,
    /// Expected word vector width; checked against the loaded vectors.
    pub word_dim: Option<usize>,
    pub char_cnn: bool,
    pub fine_tune_words: bool,
    pub net: NetConfig,
    pub embed: SgnsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            batch_size: 16,
            max_epochs: 50,
            patience: 5,
            clip_norm: 5.0,
            dropout: 0.5,
            seed: 1,
            train_fraction: 0.8,
            dev_fraction: 0.1,
            embedding: EmbeddingSource::default(),
            pretrained_vectors: None,
            subword_vectors: None,
            word_dim: None,
            char_cnn: true,
            fine_tune_words: false,
            net: NetConfig::default(),
            embed: SgnsConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn split_policy(&self) -> SplitPolicy {
        SplitPolicy {
            train: self.train_fraction,
            dev: self.dev_fraction,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            net: self.net,
            char_cnn: self.char_cnn,
            fine_tune_words: self.fine_tune_words,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::Config(m));
        self.split_policy().validate()?;
        if self.patience < 1 {
            return fail("patience must be at least 1".into());
        }
        if !(self.clip_norm > 0.0) {
            return fail(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("Adam needs lr >= 0 and betas in [0, 1)".into());
        }
        if !(self.epsilon > 0.0) {
            return fail("Adam epsilon must be positive".into());
        }
        let n = &self.net;
        if n.hidden == 0 || (self.char_cnn && (n.char_dim == 0 || n.char_window == 0 || n.char_filters == 0)) {
            return fail("network dimensions must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitPolicy {
    pub train: f64,
    pub dev: f64,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        SplitPolicy { train: 0.8, dev: 0.1 }
    }
}

impl SplitPolicy {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let open = |f: f64| f > 0.0 && f < 1.0;
        if !open(self.train) || !open(self.dev) || self.train + self.dev > 1.0 + 1e-12 {
            return Err(PipelineError::Config(format!(
                "split fractions must lie in (0, 1) and sum to at most 1 (train {}, dev {})",
                self.train, self.dev
            )));
        }
        Ok(())
    }

    /// (train, dev, test) sizes for `n` sentences: train and dev are floored,
    /// test takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let count = |f: f64| ((n as f64 * f) + 1e-9).floor() as usize;
        let train = count(self.train).min(n);
        let dev = count(self.dev).min(n - train);
        (train, dev, n - train - dev)
    }
}

pub type Split = (Vec<LabeledSentence>, Vec<LabeledSentence>, Vec<LabeledSentence>);

/// Seeded shuffle followed by contiguous slicing.
pub fn split_dataset(data: &[LabeledSentence], policy: SplitPolicy, seed: u64) -> Result<Split, PipelineError> {
    if data.is_empty() {
        return Err(PipelineError::EmptyData("dataset"));
    }
    policy.validate()?;
    let (n_train, n_dev, n_test) = policy.sizes(data.len());
    for (n, name) in [(n_train, "train"), (n_dev, "dev"), (n_test, "test")] {
        if n == 0 {
            return Err(PipelineError::EmptySplit(name));
        }
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_dev]),
        pick(&order[n_train + n_dev..]),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean per-sentence CRF negative log-likelihood over the epoch.
    pub train_nll: f64,
    pub dev: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub seconds: f64,
}

/// Resolves the configured word vectors.
pub fn resolve_embeddings(config: &TrainConfig, train: &[LabeledSentence]) -> Result<WordVectors, PipelineError> {
    let vectors = match config.embedding {
        EmbeddingSource::LoadedPretrained => {
            let path = config
                .pretrained_vectors
                .as_ref()
                .ok_or(PipelineError::MissingVectors(config.embedding))?;
            load_word_vectors(path)?
        }
        EmbeddingSource::TrainedSubword => match &config.subword_vectors {
            Some(path) => load_word_vectors(path)?,
            None => {
                let corpus: Vec<Vec<String>> = train.iter().map(|s| s.tokens.clone()).collect();
                train_subword_skipgram(&corpus, &config.embed)?
            }
        },
    };
    if let Some(expected) = config.word_dim {
        if expected != vectors.dim() {
            return Err(PipelineError::Dimension {
                expected,
                found: vectors.dim(),
            });
        }
    }
    Ok(vectors)
}

pub fn train_ner(
    train: &[LabeledSentence],
    dev: &[LabeledSentence],
    config: &TrainConfig,
) -> Result<(Checkpoint, TrainReport), PipelineError> {
    train_ner_with_progress(train, dev, config, |_| {})
}

/// [`train_ner`] with embeddings already resolved.
pub fn train_ner_with_vectors(
    train: &[LabeledSentence],
    dev: &[LabeledSentence],
    vectors: &WordVectors,
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochReport),
) -> Result<(Checkpoint, TrainReport), PipelineError> {
    let started = Instant::now();
    config.validate()?;
    if train.is_empty() {
        return Err(PipelineError::EmptyData("training set"));
    }
    if dev.is_empty() {
        return Err(PipelineError::EmptyData("dev set"));
    }
    if let Some(expected) = config.word_dim.filter(|&d| d != vectors.dim()) {
        return Err(PipelineError::Dimension {
            expected,
            found: vectors.dim(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let char_source: Vec<&String> = train.iter().flat_map(|s| &s.tokens).collect();
    let mut model = NerModel::init(config.architecture(), vectors, &char_source, &mut rng);
    let encoded: Vec<EncodedSentence> = train
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| model.encode(&s.tokens, &s.tags))
        .collect();
    if encoded.is_empty() {
        return Err(PipelineError::EmptyData("training set"));
    }
    let fine_tune = config.fine_tune_words;
    let mut adam = Adam::new(config.adam(), &model.params, |name| !fine_tune && name == WORDS_BLOCK);

    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, Params)> = None;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&EncodedSentence> = chunk.iter().map(|&i| &encoded[i]).collect();
            let (loss, mut grad) = model.batch_loss_and_gradient(&batch, Some((config.dropout, &mut rng)))?;
            total += loss;
            clip_global_norm(&mut grad, config.clip_norm);
            adam.step(&mut model.params, &grad);
        }
        let dev_metrics = evaluate_model(&model, dev, Granularity::Entity)?;
        let f1 = dev_metrics.micro_f1();
        let report = EpochReport {
            epoch,
            train_nll: total / encoded.len() as f64,
            dev: dev_metrics,
        };
        progress(&report);
        epochs.push(report);
        if best.as_ref().is_none_or(|(_, b, _)| f1 > *b) {
            best = Some((epoch, f1, model.params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (best_epoch, best_dev_f1) = match best {
        Some((e, f1, params)) => {
            model.params = params;
            (e, f1)
        }
        None => (0, 0.0),
    };
    let report = TrainReport {
        epochs,
        best_epoch,
        best_dev_f1,
        seconds: started.elapsed().as_secs_f64(),
    };
    Ok((
        Checkpoint {
            config: config.clone(),
            model,
        },
        report,
    ))
}

/// [`train_ner`] with a callback after every epoch.
pub fn train_ner_with_progress(
    train: &[LabeledSentence],
    dev: &[LabeledSentence],
    config: &TrainConfig,
    progress: impl FnMut(&EpochReport),
) -> Result<(Checkpoint, TrainReport), PipelineError> {
    config.validate()?;
    if train.is_empty() {
        return Err(PipelineError::EmptyData("training set"));
    }
    if dev.is_empty() {
        return Err(PipelineError::EmptyData("dev set"));
    }
    let vectors = resolve_embeddings(config, train)?;
    train_ner_with_vectors(train, dev, &vectors, config, progress)
}

/// Spans with confidences for each token sequence.
pub fn predict<S: AsRef<str>>(model: &NerModel, sentences: &[Vec<S>]) -> Vec<Vec<ScoredSpan>> {
    sentences.iter().map(|s| model.predict_sentence(s)).collect()
}

pub fn evaluate_model(
    model: &NerModel,
    data: &[LabeledSentence],
    granularity: Granularity,
) -> Result<Metrics, PipelineError> {
    let ids: Vec<String> = data.iter().enumerate().map(|(i, s)| s.id_or_index(i)).collect();
    let decoded: Vec<_> = data.iter().map(|s| model.decode(&s.tokens).0).collect();
    let metrics = match granularity {
        Granularity::Entity => {
            let gold: Vec<_> = ids.iter().cloned().zip(data.iter().map(|s| s.spans())).collect();
            let pred: Vec<_> = ids
                .iter()
                .cloned()
                .zip(decoded.iter().map(|t| crate::schema::iob_to_spans(t)))
                .collect();
            entity_f1(&gold, &pred)?
        }
        Granularity::Token => {
            let gold: Vec<_> = ids.iter().cloned().zip(data.iter().map(|s| s.tags.clone())).collect();
            let pred: Vec<_> = ids.into_iter().zip(decoded).collect();
            token_f1(&gold, &pred)?
        }
    };
    Ok(metrics)
}
