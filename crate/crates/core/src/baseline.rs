//! Rule-cascade baseline over event tuples produced by external event
//! extractors.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, EntityTable, KeywordConfig, NameKey};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventTuple {
    pub mention_id: String,
    pub event_type: String,
    #[serde(rename = "agent")]
    pub agent_text: String,
    #[serde(rename = "patient")]
    pub patient_text: String,
    #[serde(with = "flag")]
    pub patient_contains_target: bool,
}

/// Accepts `0`/`1` or booleans; writes `0`/`1`.
mod flag {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            B(bool),
            N(u64),
        }
        match Raw::deserialize(d)? {
            Raw::B(b) => Ok(b),
            Raw::N(0) => Ok(false),
            Raw::N(1) => Ok(true),
            Raw::N(n) => Err(de::Error::custom(format!("expected 0 or 1, got {n}"))),
        }
    }
}

pub fn load_tuples(path: &Path) -> Result<Vec<EventTuple>> {
    let mut out = Vec::new();
    read_jsonl(path, |mut t: EventTuple| {
        t.event_type = t.event_type.to_lowercase();
        out.push(t);
        Ok(())
    })?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RuleLevel {
    R1,
    R2,
    R3,
}

impl FromStr for RuleLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "R1" => Ok(RuleLevel::R1),
            "R2" => Ok(RuleLevel::R2),
            "R3" => Ok(RuleLevel::R3),
            other => Err(Error::Config(format!("unknown rule level {other:?}"))),
        }
    }
}

impl fmt::Display for RuleLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

fn tuple_fires(t: &EventTuple, level: RuleLevel, keywords: &KeywordConfig) -> bool {
    let r1 = t.event_type == "kill";
    let r2 = r1 && t.patient_contains_target;
    let r3 = r2 && keywords.has_police_word(t.agent_text.split_whitespace());
    match level {
        RuleLevel::R1 => r1,
        RuleLevel::R2 => r2,
        RuleLevel::R3 => r3,
    }
}

/// Mention label: whether any of the mention's tuples satisfies `level`.
pub fn apply_rule(tuples: &[&EventTuple], level: RuleLevel, keywords: &KeywordConfig) -> bool {
    tuples.iter().any(|t| tuple_fires(t, level, keywords))
}

/// Entities whose mentions fire the rule (deterministic OR over mentions),
/// among non-historical entities of the table.
pub fn positive_entities(
    tuples: &[EventTuple],
    table: &EntityTable,
    level: RuleLevel,
    keywords: &KeywordConfig,
) -> BTreeSet<NameKey> {
    let mut by_mention: HashMap<&str, Vec<&EventTuple>> = HashMap::new();
    for t in tuples {
        by_mention.entry(t.mention_id.as_str()).or_default().push(t);
    }
    table
        .entities
        .iter()
        .filter(|(_, e)| !e.historical)
        .filter(|(_, e)| {
            e.mention_ids.iter().any(|m| {
                by_mention
                    .get(m.as_str())
                    .is_some_and(|ts| apply_rule(ts, level, keywords))
            })
        })
        .map(|(k, _)| k.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Set-based precision, recall and F1; precision is 0 when nothing is
/// predicted and F1 is 0 when both are 0.
pub fn set_scores(predicted: &BTreeSet<NameKey>, gold: &BTreeSet<NameKey>) -> SetScores {
    let tp = predicted.intersection(gold).count() as f64;
    let precision = if predicted.is_empty() { 0.0 } else { tp / predicted.len() as f64 };
    let recall = if gold.is_empty() { 0.0 } else { tp / gold.len() as f64 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    SetScores {
        precision,
        recall,
        f1,
    }
}

pub fn evaluate_baseline(
    tuples: &[EventTuple],
    table: &EntityTable,
    gold: &BTreeSet<NameKey>,
    level: RuleLevel,
    keywords: &KeywordConfig,
) -> SetScores {
    set_scores(&positive_entities(tuples, table, level, keywords), gold)
}
