//! Abstract ingestion, sentence splitting and chemistry-aware tokenization.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::iter::Sum;
use std::ops::Add;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("line {line}: field `{field}`: {message}")]
    Field {
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("line {line}: duplicate document id {doc_id:?}")]
    DuplicateId { line: usize, doc_id: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub norm: String,
    /// Byte offsets into the sentence text, end exclusive.
    pub start: usize,
    pub end: usize,
}

impl Token {
    fn new(text: &str, start: usize, end: usize) -> Token {
        let surface = text[start..end].to_string();
        Token {
            norm: surface.to_lowercase(),
            surface,
            start,
            end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub sent_id: String,
    pub doc_id: String,
    pub text: String,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn norms(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.norm.clone()).collect()
    }

    /// Original-casing text of tokens `[start, end)` joined by single spaces.
    pub fn surface(&self, start: usize, end: usize) -> String {
        self.tokens[start..end]
            .iter()
            .map(|t| t.surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub sentences: usize,
    pub tokens: usize,
}

impl Add for CorpusStats {
    type Output = CorpusStats;

    fn add(self, rhs: CorpusStats) -> CorpusStats {
        CorpusStats {
            documents: self.documents + rhs.documents,
            sentences: self.sentences + rhs.sentences,
            tokens: self.tokens + rhs.tokens,
        }
    }
}

impl Sum for CorpusStats {
    fn sum<I: Iterator<Item = CorpusStats>>(iter: I) -> CorpusStats {
        iter.fold(CorpusStats::default(), Add::add)
    }
}

pub const DEFAULT_GUARDS: &[&str] = &["fig.", "figs.", "et al.", "e.g.", "i.e.", "vs.", "eq.", "ref.", "refs.", "no.", "approx.", "ca."];

/// Sentence boundary detector with an abbreviation guard list.
#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    guards: Vec<String>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        SentenceSplitter::new(DEFAULT_GUARDS.iter().copied())
    }
}

impl SentenceSplitter {
    pub fn new<I, S>(guards: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let guards = guards
            .into_iter()
            .map(|g| g.as_ref().trim().to_lowercase())
            .filter(|g| !g.is_empty())
            .collect();
        SentenceSplitter { guards }
    }

    /// Reads a guard list: one entry per line, `#` starts a comment line.
    pub fn from_guard_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(SentenceSplitter::new(
            text.lines().filter(|l| !l.trim_start().starts_with('#')),
        ))
    }

    fn guarded(&self, text: &str, punct_end: usize) -> bool {
        let prefix = text[..punct_end].to_lowercase();
        self.guards.iter().any(|g| {
            prefix.ends_with(g.as_str())
                && prefix[..prefix.len() - g.len()]
                    .chars()
                    .next_back()
                    .is_none_or(|c| !c.is_alphanumeric())
        })
    }

    /// Splits at `.`, `!` or `?` followed by whitespace and then an uppercase
    /// letter or digit, unless the text up to the punctuation ends with a
    /// guard entry. Returned pieces are trimmed and non-empty.
    pub fn split<'a>(&self, text: &'a str) -> Vec<&'a str> {
        let mut out = Vec::new();
        let mut seg_start = 0;
        let mut chars = text.char_indices().peekable();
        while let Some((i, c)) = chars.next() {
            if !matches!(c, '.' | '!' | '?') {
                continue;
            }
            let punct_end = i + c.len_utf8();
            let rest = &text[punct_end..];
            let after_ws = rest.trim_start();
            if after_ws.len() == rest.len() {
                continue;
            }
            let next_is_start = after_ws
                .chars()
                .next()
                .is_some_and(|n| n.is_uppercase() || n.is_ascii_digit());
            if next_is_start && !self.guarded(text, punct_end) {
                let piece = text[seg_start..punct_end].trim();
                if !piece.is_empty() {
                    out.push(piece);
                }
                seg_start = punct_end;
            }
        }
        let tail = text[seg_start..].trim();
        if !tail.is_empty() {
            out.push(tail);
        }
        out
    }
}

pub fn split_sentences(text: &str) -> Vec<&str> {
    SentenceSplitter::default().split(text)
}

fn is_edge_punct(c: char) -> bool {
    matches!(
        c,
        '.' | ',' | ';' | ':' | '!' | '?' | '(' | ')' | '[' | ']' | '{' | '}' | '"' | '\''
    )
}

fn opener_of(c: char) -> Option<char> {
    match c {
        ')' => Some('('),
        ']' => Some('['),
        '}' => Some('{'),
        _ => None,
    }
}

/// Tokenizes one sentence.
///
/// Each whitespace-delimited chunk loses its leading and trailing
/// punctuation (one token per character); a trailing closing bracket stays
/// attached when its opener is inside the chunk, so `poly(3-hexylthiophene)`
/// survives. The remaining core is kept whole, except that every `%` becomes
/// a separate token.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut chunk_start = None;
    for (i, c) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
        if c.is_whitespace() {
            if let Some(start) = chunk_start.take() {
                tokenize_chunk(text, start, i, &mut tokens);
            }
        } else if chunk_start.is_none() {
            chunk_start = Some(i);
        }
    }
    tokens
}

fn tokenize_chunk(text: &str, start: usize, end: usize, out: &mut Vec<Token>) {
    let chunk = &text[start..end];
    let mut lead = 0;
    for (i, c) in chunk.char_indices() {
        if is_edge_punct(c) {
            out.push(Token::new(text, start + i, start + i + c.len_utf8()));
            lead = i + c.len_utf8();
        } else {
            break;
        }
    }
    if lead == chunk.len() {
        return;
    }

    let mut core_end = chunk.len();
    let mut trailing = Vec::new();
    while let Some(c) = chunk[lead..core_end].chars().next_back() {
        if !is_edge_punct(c) {
            break;
        }
        let body = &chunk[lead..core_end - c.len_utf8()];
        if let Some(open) = opener_of(c) {
            let opens = body.matches(open).count();
            let closes = body.matches(c).count();
            if opens > closes {
                break;
            }
        }
        core_end -= c.len_utf8();
        trailing.push((start + core_end, start + core_end + c.len_utf8()));
    }

    let core_start = start + lead;
    let mut piece_start = core_start;
    for (i, c) in chunk[lead..core_end].char_indices() {
        if c == '%' {
            let pos = core_start + i;
            if pos > piece_start {
                out.push(Token::new(text, piece_start, pos));
            }
            out.push(Token::new(text, pos, pos + 1));
            piece_start = pos + 1;
        }
    }
    if start + core_end > piece_start {
        out.push(Token::new(text, piece_start, start + core_end));
    }
    for (s, e) in trailing.into_iter().rev() {
        out.push(Token::new(text, s, e));
    }
}

/// Supported corpus input formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    #[default]
    Jsonl,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(format!("unsupported corpus format {other:?}")),
        }
    }
}

fn string_field(
    record: &serde_json::Map<String, Value>,
    field: &'static str,
    line: usize,
    required: bool,
) -> Result<Option<String>, CorpusError> {
    match record.get(field) {
        None | Some(Value::Null) if !required => Ok(None),
        None => Err(CorpusError::Field {
            line,
            field,
            message: "missing".into(),
        }),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(CorpusError::Field {
            line,
            field,
            message: "expected a string".into(),
        }),
    }
}

/// Parses a JSONL corpus: one object per line with `id`, `abstract` and an
/// optional `title`. Blank lines are skipped.
pub fn read_jsonl<R: Read>(reader: R) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| CorpusError::Record {
            line: line_no,
            message: e.to_string(),
        })?;
        let Value::Object(record) = value else {
            return Err(CorpusError::Record {
                line: line_no,
                message: "expected a JSON object".into(),
            });
        };
        let doc_id = string_field(&record, "id", line_no, true)?.unwrap_or_default();
        if doc_id.trim().is_empty() {
            return Err(CorpusError::Field {
                line: line_no,
                field: "id",
                message: "empty".into(),
            });
        }
        let abstract_text = string_field(&record, "abstract", line_no, true)?.unwrap_or_default();
        if abstract_text.trim().is_empty() {
            return Err(CorpusError::Field {
                line: line_no,
                field: "abstract",
                message: "empty".into(),
            });
        }
        let title = string_field(&record, "title", line_no, false)?;
        if !seen.insert(doc_id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                doc_id,
            });
        }
        docs.push(Document {
            doc_id,
            title,
            abstract_text,
        });
    }
    Ok(docs)
}

/// Splits and tokenizes one document. Sentence ids are `<doc_id>:<n>`,
/// numbered from 0 over the sentences that produced tokens.
pub fn document_sentences(doc: &Document, splitter: &SentenceSplitter) -> Vec<Sentence> {
    splitter
        .split(&doc.abstract_text)
        .into_iter()
        .filter_map(|text| {
            let tokens = tokenize(text);
            (!tokens.is_empty()).then_some((text, tokens))
        })
        .enumerate()
        .map(|(n, (text, tokens))| Sentence {
            sent_id: format!("{}:{n}", doc.doc_id),
            doc_id: doc.doc_id.clone(),
            text: text.to_string(),
            tokens,
        })
        .collect()
}

pub fn corpus_sentences(docs: &[Document], splitter: &SentenceSplitter) -> Vec<Sentence> {
    docs.iter()
        .flat_map(|d| document_sentences(d, splitter))
        .collect()
}

pub fn stats(docs: &[Document], splitter: &SentenceSplitter) -> CorpusStats {
    docs.iter()
        .map(|d| {
            let sentences = document_sentences(d, splitter);
            CorpusStats {
                documents: 1,
                sentences: sentences.len(),
                tokens: sentences.iter().map(|s| s.tokens.len()).sum(),
            }
        })
        .sum()
}

/// Loads a corpus file and computes its statistics.
pub fn ingest_corpus(
    path: impl AsRef<Path>,
    format: CorpusFormat,
    splitter: &SentenceSplitter,
) -> Result<(Vec<Document>, CorpusStats), CorpusError> {
    let docs = match format {
        CorpusFormat::Jsonl => read_jsonl(fs::File::open(path)?)?,
    };
    let stats = stats(&docs, splitter);
    Ok((docs, stats))
}
