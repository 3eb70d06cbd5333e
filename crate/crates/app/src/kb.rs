//! Knowledge-base export: predicted spans as structured, per-document
//! deduplicated records.

use std::collections::HashMap;
use std::io::Write;

use omner::corpus::Sentence;
use omner::pipeline::NerModel;
use omner::schema::EntityType;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractionRecord {
    pub doc_id: String,
    pub sent_id: String,
    /// Surface text in original casing, tokens joined by single spaces.
    pub text: String,
    #[serde(rename = "type")]
    pub etype: EntityType,
    pub start: usize,
    pub end: usize,
    pub confidence: f64,
}

/// Runs the model over every sentence. Records with the same
/// (doc_id, text, type) collapse into the one with the highest confidence
/// (the earliest on ties), kept at the position of the first occurrence.
pub fn extract_kb(model: &NerModel, sentences: &[Sentence]) -> Vec<ExtractionRecord> {
    let mut out: Vec<ExtractionRecord> = Vec::new();
    let mut seen: HashMap<(String, String, EntityType), usize> = HashMap::new();
    for s in sentences {
        for sp in model.predict_sentence(&s.norms()) {
            let record = ExtractionRecord {
                doc_id: s.doc_id.clone(),
                sent_id: s.sent_id.clone(),
                text: s.surface(sp.start, sp.end),
                etype: sp.etype,
                start: sp.start,
                end: sp.end,
                confidence: sp.confidence,
            };
            let key = (record.doc_id.clone(), record.text.clone(), record.etype);
            match seen.get(&key) {
                Some(&i) => {
                    if record.confidence > out[i].confidence {
                        out[i] = record;
                    }
                }
                None => {
                    seen.insert(key, out.len());
                    out.push(record);
                }
            }
        }
    }
    out
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[ExtractionRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}
