//! Named entity recognition for organic-materials abstracts.
//!
//! The crate covers the whole offline pipeline: corpus ingestion and
//! tokenization ([`corpus`]), the MOL/POLY/PRO/CMT tag schema and CoNLL files
//! ([`schema`]), word vectors ([`embed`]), the char-CNN + BiLSTM network
//! ([`net`]) with a linear-chain CRF on top ([`crf`]), training and
//! prediction ([`pipeline`]) and entity-level scoring ([`metrics`]).

pub mod container;
pub mod corpus;
pub mod crf;
pub mod embed;
pub mod gradcheck;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod schema;
pub mod synthetic;
pub mod tensor;
