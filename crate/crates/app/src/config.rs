//! TOML configuration files and their command-line overrides.
//!
//! A config file mirrors [`TrainConfig`]: top-level keys for training,
//! `[net]` for layer sizes and `[embed]` for the skip-gram trainer. Every
//! key has a flag; flags win over the file.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use omner::embed::SgnsConfig;
use omner::pipeline::{EmbeddingSource, TrainConfig};

pub fn load_config(path: Option<&Path>) -> anyhow::Result<TrainConfig> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

macro_rules! set {
    ($src:expr => $dst:expr) => {
        if let Some(v) = $src.clone() {
            $dst = v;
        }
    };
}

#[derive(Debug, Clone, Default, Args)]
pub struct EmbedOverrides {
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub embed_window: Option<usize>,
    #[arg(long)]
    pub embed_negatives: Option<usize>,
    #[arg(long)]
    pub embed_epochs: Option<usize>,
    #[arg(long)]
    pub embed_learning_rate: Option<f64>,
    #[arg(long)]
    pub embed_min_count: Option<usize>,
    #[arg(long)]
    pub embed_subsample: Option<f64>,
    #[arg(long)]
    pub embed_min_n: Option<usize>,
    #[arg(long)]
    pub embed_max_n: Option<usize>,
    /// 0 disables subword n-grams.
    #[arg(long)]
    pub embed_buckets: Option<u64>,
}

impl EmbedOverrides {
    pub fn apply(&self, c: &mut SgnsConfig) {
        set!(self.embed_dim => c.dim);
        set!(self.embed_window => c.window);
        set!(self.embed_negatives => c.negatives);
        set!(self.embed_epochs => c.epochs);
        set!(self.embed_learning_rate => c.learning_rate);
        set!(self.embed_min_count => c.min_count);
        set!(self.embed_subsample => c.subsample);
        set!(self.embed_min_n => c.min_n);
        set!(self.embed_max_n => c.max_n);
        set!(self.embed_buckets => c.buckets);
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub dev_fraction: Option<f64>,
    /// trained-subword or loaded-pretrained
    #[arg(long)]
    pub embedding: Option<EmbeddingSource>,
    #[arg(long)]
    pub pretrained_vectors: Option<PathBuf>,
    #[arg(long)]
    pub subword_vectors: Option<PathBuf>,
    #[arg(long)]
    pub word_dim: Option<usize>,
    #[arg(long, value_name = "BOOL")]
    pub char_cnn: Option<bool>,
    #[arg(long, value_name = "BOOL")]
    pub fine_tune_words: Option<bool>,
    #[arg(long)]
    pub char_dim: Option<usize>,
    #[arg(long)]
    pub char_window: Option<usize>,
    #[arg(long)]
    pub char_filters: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[command(flatten)]
    pub embed: EmbedOverrides,
}

impl TrainOverrides {
    pub fn apply(&self, c: &mut TrainConfig) {
        set!(self.learning_rate => c.learning_rate);
        set!(self.beta1 => c.beta1);
        set!(self.beta2 => c.beta2);
        set!(self.epsilon => c.epsilon);
        set!(self.batch_size => c.batch_size);
        set!(self.max_epochs => c.max_epochs);
        set!(self.patience => c.patience);
        set!(self.clip_norm => c.clip_norm);
        set!(self.dropout => c.dropout);
        set!(self.train_fraction => c.train_fraction);
        set!(self.dev_fraction => c.dev_fraction);
        set!(self.embedding => c.embedding);
        if let Some(p) = &self.pretrained_vectors {
            c.pretrained_vectors = Some(p.clone());
        }
        if let Some(p) = &self.subword_vectors {
            c.subword_vectors = Some(p.clone());
        }
        if let Some(d) = self.word_dim {
            c.word_dim = Some(d);
        }
        set!(self.char_cnn => c.char_cnn);
        set!(self.fine_tune_words => c.fine_tune_words);
        set!(self.char_dim => c.net.char_dim);
        set!(self.char_window => c.net.char_window);
        set!(self.char_filters => c.net.char_filters);
        set!(self.hidden => c.net.hidden);
        self.embed.apply(&mut c.embed);
    }
}

/// Loads the file, applies flags, then the global seed (which also seeds
/// the embedding trainer).
pub fn resolve(path: Option<&Path>, overrides: &TrainOverrides, seed: Option<u64>) -> anyhow::Result<TrainConfig> {
    let mut c = load_config(path)?;
    overrides.apply(&mut c);
    if let Some(s) = seed {
        c.seed = s;
        c.embed.seed = s;
    }
    c.validate()?;
    c.embed.validate()?;
    Ok(c)
}
