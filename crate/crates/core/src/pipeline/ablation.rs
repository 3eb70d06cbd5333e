//! The 2 × 2 grid {trained subword, loaded pretrained} × {no char, CNN char}.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    evaluate_model, resolve_embeddings, split_dataset, train_ner_with_vectors, EmbeddingSource, PipelineError,
    TrainConfig,
};
use crate::metrics::{Granularity, Metrics};
use crate::schema::{EntityType, LabeledSentence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub model: String,
    pub embedding: EmbeddingSource,
    pub char_cnn: bool,
    pub test: Metrics,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub train_ids: Vec<String>,
    pub dev_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl AblationReport {
    /// One row per configuration, one F1 column per entity type plus micro.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("model");
        for et in EntityType::ALL {
            out.push('\t');
            out.push_str(et.code());
        }
        out.push_str("\tmicro\n");
        for row in &self.rows {
            out.push_str(&row.model);
            for et in EntityType::ALL {
                let _ = write!(out, "\t{:.4}", row.test.get(et).f1);
            }
            let _ = writeln!(out, "\t{:.4}", row.test.micro_f1());
        }
        out
    }

    pub fn row(&self, embedding: EmbeddingSource, char_cnn: bool) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.embedding == embedding && r.char_cnn == char_cnn)
    }
}

fn row_name(embedding: EmbeddingSource, char_cnn: bool) -> String {
    let e = match embedding {
        EmbeddingSource::TrainedSubword => "Subword SGNS",
        EmbeddingSource::LoadedPretrained => "Pretrained",
    };
    let c = if char_cnn { "CNN Char" } else { "No Char" };
    format!("{e} + {c}")
}

fn ids(data: &[LabeledSentence]) -> Vec<String> {
    data.iter().enumerate().map(|(i, s)| s.id_or_index(i)).collect()
}

/// Splits `dataset` with the base policy and seed, then runs the grid.
pub fn run_ablation(dataset: &[LabeledSentence], base: &TrainConfig) -> Result<AblationReport, PipelineError> {
    base.validate()?;
    let (train, dev, test) = split_dataset(dataset, base.split_policy(), base.seed)?;
    run_ablation_on_split(&train, &dev, &test, base)
}

/// Trains the four configurations on the same split and seed; each
/// embedding source is resolved once and shared by its two rows.
pub fn run_ablation_on_split(
    train: &[LabeledSentence],
    dev: &[LabeledSentence],
    test: &[LabeledSentence],
    base: &TrainConfig,
) -> Result<AblationReport, PipelineError> {
    base.validate()?;
    if base.pretrained_vectors.is_none() {
        return Err(PipelineError::MissingVectors(EmbeddingSource::LoadedPretrained));
    }
    let mut rows = Vec::with_capacity(4);
    for embedding in [EmbeddingSource::TrainedSubword, EmbeddingSource::LoadedPretrained] {
        let source_cfg = TrainConfig { embedding, ..base.clone() };
        let vectors = resolve_embeddings(&source_cfg, train)?;
        for char_cnn in [false, true] {
            let cfg = TrainConfig { char_cnn, ..source_cfg.clone() };
            let (ckpt, report) = train_ner_with_vectors(train, dev, &vectors, &cfg, |_| {})?;
            rows.push(AblationRow {
                model: row_name(embedding, char_cnn),
                embedding,
                char_cnn,
                test: evaluate_model(&ckpt.model, test, Granularity::Entity)?,
                best_epoch: report.best_epoch,
                best_dev_f1: report.best_dev_f1,
            });
        }
    }
    Ok(AblationReport {
        rows,
        train_ids: ids(train),
        dev_ids: ids(dev),
        test_ids: ids(test),
    })
}
