//! JSONL-backed annotation store.
//!
//! One file holds every sentence and every annotation record, one JSON
//! object per line. Each mutation rewrites the file to a temporary sibling,
//! syncs it and renames it over the original, so a crash leaves either the
//! previous or the new state on disk. While the service owns a store it
//! holds a `.lock` file next to it; offline commands refuse to touch a
//! locked store.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use omner::corpus::Sentence;
use omner::schema::{
    agreement, spans_to_iob, validate_spans, AnnotationRecord, EntityType, LabeledSentence, SchemaError, Span,
    Status,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown sentence {0:?}")]
    UnknownSentence(String),
    #[error("duplicate sentence id {0:?}")]
    DuplicateSentence(String),
    #[error(transparent)]
    Invalid(#[from] SchemaError),
    #[error("store {} line {line}: {message}", path.display())]
    Format { path: PathBuf, line: usize, message: String },
    #[error("store {} is locked by a running service (remove {} if it is stale)", path.display(), lock.display())]
    Locked { path: PathBuf, lock: PathBuf },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Line {
    Sentence(Sentence),
    Annotation(AnnotationRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairAgreement {
    pub a: String,
    pub b: String,
    pub sentences: usize,
    /// Mean per-sentence tag agreement over the shared sentences.
    pub agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoreStats {
    pub sentences: usize,
    pub annotations: usize,
    /// Span counts per type over the selected (most advanced) annotation of
    /// each sentence.
    pub types: BTreeMap<EntityType, usize>,
    /// Sentence counts per status; `unannotated` for none.
    pub status: BTreeMap<String, usize>,
    pub agreement: Vec<PairAgreement>,
}

#[derive(Debug)]
pub struct Store {
    path: PathBuf,
    sentences: Vec<Sentence>,
    index: HashMap<String, usize>,
    annotations: BTreeMap<(String, String), AnnotationRecord>,
}

pub fn lock_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".lock");
    PathBuf::from(p)
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".tmp");
    PathBuf::from(p)
}

/// Fails when a service currently holds the store at `path`.
pub fn ensure_unlocked(path: &Path) -> Result<(), StoreError> {
    let lock = lock_path(path);
    if lock.exists() {
        return Err(StoreError::Locked {
            path: path.to_path_buf(),
            lock,
        });
    }
    Ok(())
}

/// Removes the lock file when dropped.
#[derive(Debug)]
pub struct StoreLock {
    path: PathBuf,
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

impl Store {
    /// Creates (or replaces) a store holding `sentences` and no annotations.
    pub fn create(path: impl Into<PathBuf>, sentences: Vec<Sentence>) -> Result<Self, StoreError> {
        let path = path.into();
        ensure_unlocked(&path)?;
        let mut index = HashMap::with_capacity(sentences.len());
        for (i, s) in sentences.iter().enumerate() {
            if index.insert(s.sent_id.clone(), i).is_some() {
                return Err(StoreError::DuplicateSentence(s.sent_id.clone()));
            }
        }
        let store = Store {
            path,
            sentences,
            index,
            annotations: BTreeMap::new(),
        };
        store.persist(&store.annotations)?;
        Ok(store)
    }

    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let reader = BufReader::new(fs::File::open(&path)?);
        let mut sentences = Vec::new();
        let mut index = HashMap::new();
        let mut annotations = BTreeMap::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fail = |message: String| StoreError::Format {
                path: path.clone(),
                line: n + 1,
                message,
            };
            match serde_json::from_str::<Line>(&line).map_err(|e| fail(e.to_string()))? {
                Line::Sentence(s) => {
                    if index.insert(s.sent_id.clone(), sentences.len()).is_some() {
                        return Err(fail(format!("duplicate sentence id {:?}", s.sent_id)));
                    }
                    sentences.push(s);
                }
                Line::Annotation(a) => {
                    if !index.contains_key(&a.sent_id) {
                        return Err(fail(format!("annotation for unknown sentence {:?}", a.sent_id)));
                    }
                    annotations.insert((a.sent_id.clone(), a.annotator_id.clone()), a);
                }
            }
        }
        Ok(Store {
            path,
            sentences,
            index,
            annotations,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Takes the service lock; fails if another holder exists.
    pub fn lock(&self) -> Result<StoreLock, StoreError> {
        let lock = lock_path(&self.path);
        match fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(StoreLock { path: lock })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(StoreError::Locked {
                path: self.path.clone(),
                lock,
            }),
            Err(e) => Err(e.into()),
        }
    }

    fn persist(&self, annotations: &BTreeMap<(String, String), AnnotationRecord>) -> Result<(), StoreError> {
        let tmp = tmp_path(&self.path);
        {
            let mut w = std::io::BufWriter::new(fs::File::create(&tmp)?);
            for s in &self.sentences {
                serde_json::to_writer(&mut w, &Line::Sentence(s.clone())).map_err(std::io::Error::from)?;
                w.write_all(b"\n")?;
            }
            for a in annotations.values() {
                serde_json::to_writer(&mut w, &Line::Annotation(a.clone())).map_err(std::io::Error::from)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            w.get_ref().sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        Ok(())
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn sentence(&self, id: &str) -> Result<&Sentence, StoreError> {
        self.index
            .get(id)
            .map(|&i| &self.sentences[i])
            .ok_or_else(|| StoreError::UnknownSentence(id.to_string()))
    }

    pub fn annotations(&self, sent_id: &str) -> Vec<&AnnotationRecord> {
        self.annotations
            .range((sent_id.to_string(), String::new())..)
            .take_while(|((s, _), _)| s == sent_id)
            .map(|(_, a)| a)
            .collect()
    }

    /// The most advanced status among the sentence's annotations.
    pub fn status(&self, sent_id: &str) -> Option<Status> {
        self.annotations(sent_id).iter().map(|a| a.status).max()
    }

    /// The annotation to export for a sentence: the given annotator's, or
    /// else the one with the most advanced status (ties go to the smallest
    /// annotator id).
    pub fn selected(&self, sent_id: &str, annotator: Option<&str>) -> Option<&AnnotationRecord> {
        let all = self.annotations(sent_id);
        match annotator {
            Some(who) => all.into_iter().find(|a| a.annotator_id == who),
            None => all.into_iter().rev().max_by_key(|a| a.status),
        }
    }

    /// Validates and stores an annotation. The store file is rewritten
    /// before the in-memory state changes, so a returned record is durable.
    pub fn put_annotation(
        &mut self,
        sent_id: &str,
        annotator: &str,
        spans: &[Span],
        status: Status,
        updated_at: u64,
    ) -> Result<AnnotationRecord, StoreError> {
        let sentence = self.sentence(sent_id)?;
        let spans = validate_spans(sentence.tokens.len(), spans)?;
        let key = (sent_id.to_string(), annotator.to_string());
        if let Some(prev) = self.annotations.get(&key) {
            prev.status.check_transition(status)?;
        }
        let record = AnnotationRecord {
            sent_id: sent_id.to_string(),
            annotator_id: annotator.to_string(),
            spans,
            status,
            updated_at,
        };
        let mut next = self.annotations.clone();
        next.insert(key, record.clone());
        self.persist(&next)?;
        self.annotations = next;
        Ok(record)
    }

    /// Annotated sentences as a labeled dataset (see [`selected`](Self::selected)).
    pub fn export(&self, annotator: Option<&str>) -> Result<Vec<LabeledSentence>, StoreError> {
        let mut out = Vec::new();
        for s in &self.sentences {
            if let Some(a) = self.selected(&s.sent_id, annotator) {
                out.push(LabeledSentence::new(
                    Some(s.sent_id.clone()),
                    s.norms(),
                    spans_to_iob(s.tokens.len(), &a.spans)?,
                ));
            }
        }
        Ok(out)
    }

    pub fn stats(&self) -> Result<StoreStats, StoreError> {
        let mut types: BTreeMap<EntityType, usize> = EntityType::ALL.iter().map(|&t| (t, 0)).collect();
        let mut status: BTreeMap<String, usize> = ["unannotated", "draft", "submitted", "reviewed"]
            .iter()
            .map(|s| (s.to_string(), 0))
            .collect();
        for s in &self.sentences {
            let key = self.status(&s.sent_id).map_or("unannotated", Status::as_str);
            *status.get_mut(key).expect("all statuses listed") += 1;
            if let Some(a) = self.selected(&s.sent_id, None) {
                for sp in &a.spans {
                    *types.get_mut(&sp.etype).expect("all types listed") += 1;
                }
            }
        }

        let annotators: BTreeSet<&str> = self.annotations.keys().map(|(_, a)| a.as_str()).collect();
        let annotators: Vec<&str> = annotators.into_iter().collect();
        let mut pairs = Vec::new();
        for (i, a) in annotators.iter().enumerate() {
            for b in &annotators[i + 1..] {
                let mut total = 0.0;
                let mut shared = 0;
                for s in &self.sentences {
                    let key = |who: &str| (s.sent_id.clone(), who.to_string());
                    if let (Some(x), Some(y)) = (self.annotations.get(&key(a)), self.annotations.get(&key(b))) {
                        let n = s.tokens.len();
                        total += agreement(&spans_to_iob(n, &x.spans)?, &spans_to_iob(n, &y.spans)?)?;
                        shared += 1;
                    }
                }
                if shared > 0 {
                    pairs.push(PairAgreement {
                        a: a.to_string(),
                        b: b.to_string(),
                        sentences: shared,
                        agreement: total / shared as f64,
                    });
                }
            }
        }
        Ok(StoreStats {
            sentences: self.sentences.len(),
            annotations: self.annotations.len(),
            types,
            status,
            agreement: pairs,
        })
    }
}
