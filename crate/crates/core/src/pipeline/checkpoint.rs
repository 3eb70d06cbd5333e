//! Checkpoint serialization on top of the tensor container.
//!
//! The header metadata stores the configuration snapshot, the char
//! inventory, the tag order, the word list and the subword table geometry;
//! every parameter block is a named tensor. Loading rebuilds the model
//! skeleton from the metadata and requires every block to be present with
//! the expected shape.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Architecture, NerModel, Params};
use super::{PipelineError, TrainConfig};
use crate::container::{Container, ContainerError};
use crate::crf::CrfParams;
use crate::embed::{SubwordMeta, SubwordTable};
use crate::net::{CharVocab, NetParams};
use crate::schema::{Tag, NUM_TAGS};
use crate::tensor::Matrix;

pub const CHECKPOINT_KIND: &str = "checkpoint";

const SUBWORD_IDS: &str = "subword.ids";
const SUBWORD_ROWS: &str = "subword.rows";

#[derive(Serialize, Deserialize)]
struct Meta {
    config: TrainConfig,
    arch: Architecture,
    tags: Vec<String>,
    char_vocab: Vec<char>,
    words: Vec<String>,
    word_dim: usize,
    subwords: Option<SubwordMeta>,
}

/// A trained model together with the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: NerModel,
}

impl Checkpoint {
    pub fn to_container(&self) -> Container {
        let m = &self.model;
        let meta = Meta {
            config: self.config.clone(),
            arch: m.arch,
            tags: Tag::all().iter().map(Tag::to_string).collect(),
            char_vocab: m.char_vocab.chars().to_vec(),
            words: m.words().to_vec(),
            word_dim: m.word_dim(),
            subwords: m.subwords().map(|t| SubwordMeta {
                min_n: t.min_n,
                max_n: t.max_n,
                buckets: t.buckets,
            }),
        };
        let mut c = Container::new(CHECKPOINT_KIND, serde_json::to_value(meta).expect("meta serializes"));
        for b in m.params.blocks() {
            c.push(b.name, b.shape, b.data.to_vec());
        }
        if let Some(t) = m.subwords() {
            let (ids, rows): (Vec<f64>, Vec<&[f64]>) = t.stored_rows().map(|(id, r)| (id as f64, r)).unzip();
            c.push(SUBWORD_IDS, vec![ids.len()], ids.clone());
            c.push(SUBWORD_ROWS, vec![ids.len(), t.dim()], rows.concat());
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, PipelineError> {
        c.check_kind(CHECKPOINT_KIND)?;
        let meta: Meta = serde_json::from_value(c.meta.clone())
            .map_err(|e| ContainerError::Header(format!("checkpoint metadata: {e}")))?;
        let expected: Vec<String> = Tag::all().iter().map(Tag::to_string).collect();
        if meta.tags != expected {
            return Err(PipelineError::Checkpoint(format!(
                "tag order {:?} differs from {:?}",
                meta.tags, expected
            )));
        }
        let char_vocab = CharVocab::from_chars(meta.char_vocab);
        // Shapes come from a skeleton; the values are all overwritten below.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = Params {
            words: Matrix::zeros(meta.words.len() + 1, meta.word_dim),
            net: NetParams::init(
                &meta.arch.net,
                meta.word_dim,
                meta.arch.char_cnn.then_some(char_vocab.len()),
                NUM_TAGS,
                &mut rng,
            ),
            crf: CrfParams::zeros(NUM_TAGS),
        };
        let mut known: Vec<String> = Vec::new();
        let skeleton: Vec<(String, Vec<usize>)> =
            params.blocks().into_iter().map(|b| (b.name, b.shape)).collect();
        for ((name, shape), dst) in skeleton.iter().zip(params.blocks_mut()) {
            dst.copy_from_slice(c.expect(name, shape)?);
            known.push(name.clone());
        }

        let subwords = match meta.subwords {
            Some(sm) => {
                let mut table = SubwordTable::new(sm.min_n, sm.max_n, sm.buckets, meta.word_dim)?;
                let ids = &c.get(SUBWORD_IDS)?.data;
                let rows = c.expect(SUBWORD_ROWS, &[ids.len(), meta.word_dim])?;
                for (i, &id) in ids.iter().enumerate() {
                    if id < 0.0 || id.fract() != 0.0 || id >= sm.buckets as f64 {
                        return Err(ContainerError::Entry {
                            name: SUBWORD_IDS.into(),
                            message: format!("invalid bucket id {id}"),
                        }
                        .into());
                    }
                    let d = meta.word_dim;
                    table.row_mut(id as u64).copy_from_slice(&rows[i * d..(i + 1) * d]);
                }
                known.push(SUBWORD_IDS.into());
                known.push(SUBWORD_ROWS.into());
                Some(table)
            }
            None => None,
        };
        if let Some(extra) = c.tensors.iter().find(|t| !known.contains(&t.name)) {
            return Err(ContainerError::Entry {
                name: extra.name.clone(),
                message: "unexpected tensor".into(),
            }
            .into());
        }
        let model = NerModel::from_parts(meta.arch, char_vocab, meta.words, subwords, params);
        Ok(Checkpoint { config: meta.config, model })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_container().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PipelineError> {
        Checkpoint::from_container(&Container::from_bytes(bytes)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}
