//! Precision / recall / F1 per entity type plus a micro average.
//!
//! The default is exact-match entity scoring: a predicted span counts only
//! when sentence, both boundaries and type agree with a gold span. A
//! token-level variant is offered for comparison.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{EntityType, Span, Tag};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("sentence {0:?} appears in gold but not in predictions")]
    MissingPrediction(String),
    #[error("sentence {0:?} appears in predictions but not in gold")]
    MissingGold(String),
    #[error("sentence {0:?} listed twice")]
    DuplicateId(String),
    #[error("sentence {id:?}: gold has {gold} tokens, prediction has {pred}")]
    Length { id: String, gold: usize, pred: usize },
}

/// Scoring granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Entity,
    Token,
}

impl std::str::FromStr for Granularity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "entity" => Ok(Granularity::Entity),
            "token" => Ok(Granularity::Token),
            _ => Err(format!("unknown granularity {s:?} (expected entity or token)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold count.
    pub support: usize,
    pub predicted: usize,
}

impl Scores {
    pub fn from_counts(tp: usize, gold: usize, predicted: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Scores {
            precision,
            recall,
            f1,
            support: gold,
            predicted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_type: BTreeMap<EntityType, Scores>,
    pub micro: Scores,
}

#[derive(Debug, Default, Clone, Copy)]
struct Counts {
    tp: usize,
    gold: usize,
    pred: usize,
}

impl Metrics {
    fn from_counts(counts: &BTreeMap<EntityType, Counts>) -> Self {
        let mut total = Counts::default();
        let per_type = EntityType::ALL
            .iter()
            .map(|&et| {
                let c = counts.get(&et).copied().unwrap_or_default();
                total.tp += c.tp;
                total.gold += c.gold;
                total.pred += c.pred;
                (et, Scores::from_counts(c.tp, c.gold, c.pred))
            })
            .collect();
        Metrics {
            per_type,
            micro: Scores::from_counts(total.tp, total.gold, total.pred),
        }
    }

    pub fn get(&self, etype: EntityType) -> Scores {
        self.per_type[&etype]
    }

    pub fn micro_f1(&self) -> f64 {
        self.micro.f1
    }

    /// Rows MOL, POLY, PRO, CMT, micro; columns P, R, F1, support.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("type\tP\tR\tF1\tsupport\n");
        let rows = self
            .per_type
            .iter()
            .map(|(et, s)| (et.code(), s))
            .chain(std::iter::once(("micro", &self.micro)));
        for (name, s) in rows {
            let _ = writeln!(
                out,
                "{name}\t{:.4}\t{:.4}\t{:.4}\t{}",
                s.precision, s.recall, s.f1, s.support
            );
        }
        out
    }
}

fn align<'a, T>(
    gold: &'a [(String, T)],
    pred: &'a [(String, T)],
) -> Result<Vec<(&'a str, &'a T, &'a T)>, MetricsError> {
    let mut pred_by_id: HashMap<&str, &T> = HashMap::with_capacity(pred.len());
    for (id, p) in pred {
        if pred_by_id.insert(id.as_str(), p).is_some() {
            return Err(MetricsError::DuplicateId(id.clone()));
        }
    }
    let mut seen = HashSet::with_capacity(gold.len());
    let mut out = Vec::with_capacity(gold.len());
    for (id, g) in gold {
        if !seen.insert(id.as_str()) {
            return Err(MetricsError::DuplicateId(id.clone()));
        }
        let p = pred_by_id
            .get(id.as_str())
            .ok_or_else(|| MetricsError::MissingPrediction(id.clone()))?;
        out.push((id.as_str(), g, *p));
    }
    if let Some((id, _)) = pred.iter().find(|(id, _)| !seen.contains(id.as_str())) {
        return Err(MetricsError::MissingGold(id.clone()));
    }
    Ok(out)
}

/// Exact-match entity scoring over sentences keyed by id.
pub fn entity_f1(
    gold: &[(String, Vec<Span>)],
    pred: &[(String, Vec<Span>)],
) -> Result<Metrics, MetricsError> {
    let mut counts: BTreeMap<EntityType, Counts> = BTreeMap::new();
    for (_, g, p) in align(gold, pred)? {
        // Multiset of unmatched gold spans; each gold span absorbs one prediction.
        let mut remaining: HashMap<&Span, usize> = HashMap::new();
        for s in g {
            *remaining.entry(s).or_default() += 1;
            counts.entry(s.etype).or_default().gold += 1;
        }
        for s in p {
            let c = counts.entry(s.etype).or_default();
            c.pred += 1;
            if let Some(n) = remaining.get_mut(s).filter(|n| **n > 0) {
                *n -= 1;
                c.tp += 1;
            }
        }
    }
    Ok(Metrics::from_counts(&counts))
}

/// Token-level scoring: a token counts for type T in gold/pred when its tag
/// (B or I) carries T; true positives agree on T.
pub fn token_f1(gold: &[(String, Vec<Tag>)], pred: &[(String, Vec<Tag>)]) -> Result<Metrics, MetricsError> {
    let mut counts: BTreeMap<EntityType, Counts> = BTreeMap::new();
    for (id, g, p) in align(gold, pred)? {
        if g.len() != p.len() {
            return Err(MetricsError::Length {
                id: id.to_string(),
                gold: g.len(),
                pred: p.len(),
            });
        }
        for (a, b) in g.iter().zip(p) {
            if let Some(t) = a.entity_type() {
                counts.entry(t).or_default().gold += 1;
            }
            if let Some(t) = b.entity_type() {
                let c = counts.entry(t).or_default();
                c.pred += 1;
                if a.entity_type() == Some(t) {
                    c.tp += 1;
                }
            }
        }
    }
    Ok(Metrics::from_counts(&counts))
}
