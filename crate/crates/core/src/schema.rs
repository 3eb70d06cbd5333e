//! Entity-type schema, token spans, the BIO2 tag codec and CoNLL-style
//! dataset files.
//!
//! The tag index order is frozen: `O=0`, then `B-`/`I-` pairs for MOL, POLY,
//! PRO and CMT. The CRF transition matrix layout depends on it.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of tags in the BIO2 tag set.
pub const NUM_TAGS: usize = 1 + 2 * EntityType::ALL.len();

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("invalid spans for {token_count} tokens: {}", format_spans(.offending))]
    InvalidSpans {
        token_count: usize,
        offending: Vec<Span>,
    },
    #[error("unknown tag {0:?}")]
    UnknownTag(String),
    #[error("unknown entity type {0:?}")]
    UnknownEntityType(String),
    #[error("unknown annotation status {0:?}")]
    UnknownStatus(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("status cannot move from {from} back to {to}")]
    StatusRegression { from: Status, to: Status },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_spans(spans: &[Span]) -> String {
    spans
        .iter()
        .map(|s| format!("({},{},{})", s.start, s.end, s.etype))
        .collect::<Vec<_>>()
        .join(", ")
}

/// The four target entity types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityType {
    #[serde(rename = "MOL")]
    Mol,
    #[serde(rename = "POLY")]
    Poly,
    #[serde(rename = "PRO")]
    Pro,
    #[serde(rename = "CMT")]
    Cmt,
}

impl EntityType {
    pub const ALL: [EntityType; 4] = [
        EntityType::Mol,
        EntityType::Poly,
        EntityType::Pro,
        EntityType::Cmt,
    ];

    /// Short code used in tags and files (`MOL`, `POLY`, `PRO`, `CMT`).
    pub fn code(self) -> &'static str {
        match self {
            EntityType::Mol => "MOL",
            EntityType::Poly => "POLY",
            EntityType::Pro => "PRO",
            EntityType::Cmt => "CMT",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            EntityType::Mol => "Molecule",
            EntityType::Poly => "Polymer",
            EntityType::Pro => "Property",
            EntityType::Cmt => "Characterization Method",
        }
    }

    pub fn definition(self) -> &'static str {
        match self {
            EntityType::Mol => "A fundamental unit of a chemical compound",
            EntityType::Poly => "A molecule that is majorly composed of multiple similar units",
            EntityType::Pro => {
                "Fundamental physical or chemical characteristics of a particular compound"
            }
            EntityType::Cmt => "The method to measure physical or chemical properties",
        }
    }

    /// Position of this type in [`EntityType::ALL`].
    pub fn ordinal(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for EntityType {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityType::ALL
            .into_iter()
            .find(|t| t.code() == s)
            .ok_or_else(|| SchemaError::UnknownEntityType(s.to_string()))
    }
}

/// A BIO2 tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    O,
    B(EntityType),
    I(EntityType),
}

impl Tag {
    /// All tags in frozen index order.
    pub fn all() -> [Tag; NUM_TAGS] {
        let mut tags = [Tag::O; NUM_TAGS];
        for t in EntityType::ALL {
            tags[1 + 2 * t.ordinal()] = Tag::B(t);
            tags[2 + 2 * t.ordinal()] = Tag::I(t);
        }
        tags
    }

    pub fn index(self) -> usize {
        match self {
            Tag::O => 0,
            Tag::B(t) => 1 + 2 * t.ordinal(),
            Tag::I(t) => 2 + 2 * t.ordinal(),
        }
    }

    pub fn from_index(index: usize) -> Option<Tag> {
        Tag::all().get(index).copied()
    }

    pub fn entity_type(self) -> Option<EntityType> {
        match self {
            Tag::O => None,
            Tag::B(t) | Tag::I(t) => Some(t),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::O => f.write_str("O"),
            Tag::B(t) => write!(f, "B-{t}"),
            Tag::I(t) => write!(f, "I-{t}"),
        }
    }
}

impl FromStr for Tag {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || SchemaError::UnknownTag(s.to_string());
        if s == "O" {
            return Ok(Tag::O);
        }
        let (prefix, etype) = s.split_once('-').ok_or_else(unknown)?;
        let etype: EntityType = etype.parse().map_err(|_| unknown())?;
        match prefix {
            "B" => Ok(Tag::B(etype)),
            "I" => Ok(Tag::I(etype)),
            _ => Err(unknown()),
        }
    }
}

impl Serialize for Tag {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Whether `next` may follow `prev` in a well-formed BIO2 sequence.
/// `prev == None` means sequence start.
pub fn transition_allowed(prev: Option<Tag>, next: Tag) -> bool {
    match next {
        Tag::I(t) => matches!(prev, Some(Tag::B(p)) | Some(Tag::I(p)) if p == t),
        _ => true,
    }
}

pub fn is_well_formed(tags: &[Tag]) -> bool {
    let mut prev = None;
    for &tag in tags {
        if !transition_allowed(prev, tag) {
            return false;
        }
        prev = Some(tag);
    }
    true
}

/// An entity mention over token indices `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub etype: EntityType,
}

impl Span {
    pub fn new(start: usize, end: usize, etype: EntityType) -> Self {
        Span { start, end, etype }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Checks that spans are in range, non-empty and pairwise non-overlapping.
/// Returns the spans sorted by start position.
pub fn validate_spans(token_count: usize, spans: &[Span]) -> Result<Vec<Span>, SchemaError> {
    let mut sorted = spans.to_vec();
    sorted.sort();
    let mut offending: Vec<Span> = sorted
        .iter()
        .filter(|s| s.start >= s.end || s.end > token_count)
        .copied()
        .collect();
    for pair in sorted.windows(2) {
        if pair[1].start < pair[0].end {
            offending.extend_from_slice(pair);
        }
    }
    if offending.is_empty() {
        Ok(sorted)
    } else {
        offending.sort();
        offending.dedup();
        Err(SchemaError::InvalidSpans {
            token_count,
            offending,
        })
    }
}

/// Encodes spans as a BIO2 tag sequence of length `token_count`.
pub fn spans_to_iob(token_count: usize, spans: &[Span]) -> Result<Vec<Tag>, SchemaError> {
    let spans = validate_spans(token_count, spans)?;
    let mut tags = vec![Tag::O; token_count];
    for span in spans {
        tags[span.start] = Tag::B(span.etype);
        for tag in &mut tags[span.start + 1..span.end] {
            *tag = Tag::I(span.etype);
        }
    }
    Ok(tags)
}

/// Decodes a tag sequence into spans. Never fails: an `I-T` without a
/// `B-T`/`I-T` predecessor opens a new span as if it were `B-T`.
pub fn iob_to_spans(tags: &[Tag]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<Span> = None;
    for (i, &tag) in tags.iter().enumerate() {
        match tag {
            Tag::I(t) if open.is_some_and(|s| s.etype == t) => {
                if let Some(span) = open.as_mut() {
                    span.end = i + 1;
                }
            }
            Tag::B(t) | Tag::I(t) => {
                spans.extend(open.take());
                open = Some(Span::new(i, i + 1, t));
            }
            Tag::O => spans.extend(open.take()),
        }
    }
    spans.extend(open);
    spans
}

pub fn parse_tags<S: AsRef<str>>(tags: &[S]) -> Result<Vec<Tag>, SchemaError> {
    tags.iter().map(|t| t.as_ref().parse()).collect()
}

/// Token-level agreement: the fraction of positions with identical tags.
/// Two empty sequences agree fully.
pub fn agreement(a: &[Tag], b: &[Tag]) -> Result<f64, SchemaError> {
    if a.len() != b.len() {
        return Err(SchemaError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Ok(1.0);
    }
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len() as f64)
}

/// Annotation workflow state. Moves only forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Draft,
    Submitted,
    Reviewed,
}

impl Status {
    pub const ALL: [Status; 3] = [Status::Draft, Status::Submitted, Status::Reviewed];

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Draft => "draft",
            Status::Submitted => "submitted",
            Status::Reviewed => "reviewed",
        }
    }

    /// Re-saving in the same state is allowed; going backwards is not.
    pub fn check_transition(self, to: Status) -> Result<(), SchemaError> {
        if to < self {
            Err(SchemaError::StatusRegression { from: self, to })
        } else {
            Ok(())
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Status {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Status::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| SchemaError::UnknownStatus(s.to_string()))
    }
}

/// One annotator's version of one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sent_id: String,
    pub annotator_id: String,
    pub spans: Vec<Span>,
    pub status: Status,
    /// Milliseconds since the Unix epoch.
    pub updated_at: u64,
}

/// One sentence of an annotated dataset: normalized tokens with their tags.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSentence {
    pub sent_id: Option<String>,
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
}

impl LabeledSentence {
    pub fn new(sent_id: Option<String>, tokens: Vec<String>, tags: Vec<Tag>) -> Self {
        debug_assert_eq!(tokens.len(), tags.len());
        LabeledSentence {
            sent_id,
            tokens,
            tags,
        }
    }

    pub fn from_spans(
        sent_id: Option<String>,
        tokens: Vec<String>,
        spans: &[Span],
    ) -> Result<Self, SchemaError> {
        let tags = spans_to_iob(tokens.len(), spans)?;
        Ok(LabeledSentence::new(sent_id, tokens, tags))
    }

    pub fn spans(&self) -> Vec<Span> {
        iob_to_spans(&self.tags)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The sentence id, or its position in the dataset when it has none.
    pub fn id_or_index(&self, index: usize) -> String {
        self.sent_id.clone().unwrap_or_else(|| index.to_string())
    }
}

pub type Dataset = Vec<LabeledSentence>;

const SENT_ID_PREFIX: &str = "# sent_id = ";

pub fn read_conll<R: Read>(reader: R) -> Result<Dataset, SchemaError> {
    let mut dataset = Vec::new();
    let mut pending_id: Option<String> = None;
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut saw_content = false;

    let mut flush = |tokens: &mut Vec<String>, tags: &mut Vec<Tag>, id: &mut Option<String>| {
        if !tokens.is_empty() {
            dataset.push(LabeledSentence::new(
                id.take(),
                std::mem::take(tokens),
                std::mem::take(tags),
            ));
        }
    };

    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags, &mut pending_id);
            continue;
        }
        saw_content = true;
        if line.starts_with('#') && !line.contains('\t') {
            if let Some(id) = line.strip_prefix(SENT_ID_PREFIX) {
                if !tokens.is_empty() {
                    return Err(SchemaError::Format {
                        line: line_no,
                        message: "sent_id comment inside a sentence".into(),
                    });
                }
                pending_id = Some(id.trim().to_string());
            }
            continue;
        }
        let columns: Vec<&str> = line.split('\t').collect();
        if columns.len() != 2 {
            return Err(SchemaError::Format {
                line: line_no,
                message: format!("expected 2 tab-separated columns, found {}", columns.len()),
            });
        }
        if columns[0].is_empty() {
            return Err(SchemaError::Format {
                line: line_no,
                message: "empty token".into(),
            });
        }
        let tag: Tag = columns[1].parse().map_err(|_| SchemaError::Format {
            line: line_no,
            message: format!("unknown tag {:?}", columns[1]),
        })?;
        tokens.push(columns[0].to_string());
        tags.push(tag);
    }
    flush(&mut tokens, &mut tags, &mut pending_id);

    if !saw_content || dataset.is_empty() {
        return Err(SchemaError::Format {
            line: 0,
            message: "empty file".into(),
        });
    }
    Ok(dataset)
}

pub fn write_conll<W: Write>(mut writer: W, dataset: &[LabeledSentence]) -> Result<(), SchemaError> {
    for sentence in dataset {
        if let Some(id) = &sentence.sent_id {
            writeln!(writer, "{SENT_ID_PREFIX}{id}")?;
        }
        for (token, tag) in sentence.tokens.iter().zip(&sentence.tags) {
            writeln!(writer, "{token}\t{tag}")?;
        }
        writeln!(writer)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn load_conll(path: impl AsRef<Path>) -> Result<Dataset, SchemaError> {
    read_conll(fs::File::open(path)?)
}

pub fn save_conll(path: impl AsRef<Path>, dataset: &[LabeledSentence]) -> Result<(), SchemaError> {
    let file = fs::File::create(path)?;
    write_conll(std::io::BufWriter::new(file), dataset)
}
