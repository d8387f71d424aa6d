//! Corpus data model, interchange ingestion, sentence deduplication, mention
//! cleanup and filtering, entity grouping and distant labeling.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Collapsed symbol for the candidate mention.
pub const TARGET: &str = "TARGET";
/// Collapsed symbol for every other person mention in the sentence.
pub const PERSON: &str = "PERSON";

pub const MIN_SENTENCE_TOKENS: usize = 5;
pub const MAX_SENTENCE_TOKENS: usize = 200;

/// Titles removed from the front of name spans.
pub const TITLES: &[&str] = &["mr.", "mr", "ms.", "ms", "mrs.", "mrs", "sgt.", "sgt", "lt.", "lt"];

/// A `(first, last)` lowercase name pair. Two mentions, or a mention and a
/// gold record, corefer iff their keys are equal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NameKey {
    pub first: String,
    pub last: String,
}

impl NameKey {
    pub fn new(first: &str, last: &str) -> Result<Self> {
        let first = first.trim().to_lowercase();
        let last = last.trim().to_lowercase();
        for part in [&first, &last] {
            if part.is_empty() || part.chars().any(char::is_whitespace) {
                return Err(Error::Validation(format!(
                    "invalid name part {part:?} in ({first:?}, {last:?})"
                )));
            }
        }
        Ok(NameKey { first, last })
    }
}

impl fmt::Display for NameKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.first, self.last)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    Root,
    Index(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub text: String,
    pub pos: Option<String>,
    pub head: Option<Head>,
    pub dep: Option<String>,
}

impl Token {
    pub fn plain(text: impl Into<String>) -> Self {
        Token {
            text: text.into(),
            pos: None,
            head: None,
            dep: None,
        }
    }

    pub fn has_syntax(&self) -> bool {
        self.pos.is_some() && self.head.is_some() && self.dep.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MentionSpan {
    pub mention_id: String,
    pub start: usize,
    pub end: usize,
    pub name: NameKey,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub sent_id: String,
    pub doc_id: String,
    pub download_time: DateTime<Utc>,
    pub tokens: Vec<Token>,
    pub mentions: Vec<MentionSpan>,
}

impl Sentence {
    pub fn token_texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    pub fn has_syntax(&self) -> bool {
        !self.tokens.is_empty() && self.tokens.iter().all(Token::has_syntax)
    }
}

/// One candidate mention with its sentence symbolized around it.
#[derive(Debug, Clone, PartialEq)]
pub struct MentionRecord {
    pub mention_id: String,
    pub name: NameKey,
    /// Token range of the name inside the original sentence, after cleanup.
    pub span: (usize, usize),
    pub symbolized_tokens: Vec<Token>,
    /// Index of the single TARGET token in `symbolized_tokens`.
    pub target: usize,
    pub sentence: Arc<Sentence>,
}

impl MentionRecord {
    pub fn doc_id(&self) -> &str {
        &self.sentence.doc_id
    }

    pub fn download_time(&self) -> DateTime<Utc> {
        self.sentence.download_time
    }

    fn from_span(sentence: &Arc<Sentence>, span: &MentionSpan, range: (usize, usize)) -> Self {
        let (symbolized_tokens, target) = symbolize(sentence, span, range);
        MentionRecord {
            mention_id: span.mention_id.clone(),
            name: span.name.clone(),
            span: range,
            symbolized_tokens,
            target,
            sentence: Arc::clone(sentence),
        }
    }
}

/// Collapses the candidate span to TARGET and every other mention span to
/// PERSON, remapping dependency heads onto the collapsed tokens.
fn symbolize(sentence: &Sentence, target_span: &MentionSpan, range: (usize, usize)) -> (Vec<Token>, usize) {
    let n = sentence.tokens.len();
    // (start, end, is_target)
    let mut spans: Vec<(usize, usize, bool)> = sentence
        .mentions
        .iter()
        .map(|m| {
            if m.mention_id == target_span.mention_id {
                (range.0, range.1, true)
            } else {
                (m.start, m.end, false)
            }
        })
        .collect();
    spans.sort_unstable();

    let mut new_index = vec![0usize; n];
    let mut collapsed: Vec<(usize, usize, bool)> = Vec::new();
    let mut out_len = 0;
    let mut i = 0;
    let mut spans_iter = spans.iter().peekable();
    while i < n {
        if let Some(&&(s, e, is_target)) = spans_iter.peek() {
            if s == i {
                for slot in &mut new_index[s..e] {
                    *slot = out_len;
                }
                collapsed.push((s, e, is_target));
                out_len += 1;
                i = e;
                spans_iter.next();
                continue;
            }
        }
        new_index[i] = out_len;
        out_len += 1;
        i += 1;
    }

    let remap = |head: Option<Head>| -> Option<Head> {
        head.map(|h| match h {
            Head::Root => Head::Root,
            Head::Index(j) => Head::Index(new_index[j]),
        })
    };

    let mut tokens = Vec::with_capacity(out_len);
    let mut target = 0;
    let mut i = 0;
    let mut collapsed_iter = collapsed.iter().peekable();
    while i < n {
        if let Some(&&(s, e, is_target)) = collapsed_iter.peek() {
            if s == i {
                // the span's syntactic head: first token attached outside the span
                let anchor = (s..e)
                    .find(|&k| match sentence.tokens[k].head {
                        Some(Head::Index(h)) => h < s || h >= e,
                        Some(Head::Root) => true,
                        None => false,
                    })
                    .unwrap_or(e - 1);
                let src = &sentence.tokens[anchor];
                let head = match src.head {
                    Some(Head::Index(h)) if h >= s && h < e => Some(Head::Root),
                    other => remap(other),
                };
                if is_target {
                    target = tokens.len();
                }
                tokens.push(Token {
                    text: if is_target { TARGET } else { PERSON }.to_string(),
                    pos: src.pos.clone(),
                    head,
                    dep: src.dep.clone(),
                });
                collapsed_iter.next();
                i = e;
                continue;
            }
        }
        let src = &sentence.tokens[i];
        tokens.push(Token {
            text: src.text.clone(),
            pos: src.pos.clone(),
            head: remap(src.head),
            dep: src.dep.clone(),
        });
        i += 1;
    }
    (tokens, target)
}

/// Parsed corpus: deduplicated or raw sentences plus their mention records.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub sentences: Vec<Arc<Sentence>>,
    pub mentions: Vec<MentionRecord>,
}

impl Corpus {
    /// Builds mention records for every span of every sentence.
    pub fn from_sentences(sentences: Vec<Arc<Sentence>>) -> Self {
        let mentions = sentences
            .iter()
            .flat_map(|s| {
                s.mentions
                    .iter()
                    .map(move |m| MentionRecord::from_span(s, m, (m.start, m.end)))
            })
            .collect();
        Corpus {
            sentences,
            mentions,
        }
    }

    /// Distinct document ids in first-appearance order.
    pub fn doc_ids(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.sentences
            .iter()
            .filter(|s| seen.insert(s.doc_id.as_str()))
            .map(|s| s.doc_id.as_str())
            .collect()
    }
}

// ---- interchange ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocumentLine {
    pub doc_id: String,
    pub download_time: DateTime<Utc>,
    pub sentences: Vec<SentenceLine>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SentenceLine {
    pub sent_id: String,
    pub tokens: Vec<TokenLine>,
    #[serde(default)]
    pub mentions: Vec<MentionLine>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenLine {
    pub t: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<String>,
    /// 0-based index of the head token; -1 marks the root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dep: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MentionLine {
    pub id: String,
    pub start: usize,
    pub end: usize,
    pub first: String,
    pub last: String,
}

fn sentence_from_line(doc: &DocumentLine, line: &SentenceLine) -> Result<Sentence> {
    let n = line.tokens.len();
    let annotated = line.tokens.iter().filter(|t| t.pos.is_some() || t.head.is_some() || t.dep.is_some()).count();
    let full = line
        .tokens
        .iter()
        .filter(|t| t.pos.is_some() && t.head.is_some() && t.dep.is_some())
        .count();
    if annotated != 0 && full != n {
        return Err(Error::Validation(format!(
            "sentence {}: pos/head/dep must be all present or all absent",
            line.sent_id
        )));
    }
    let mut tokens = Vec::with_capacity(n);
    for (i, t) in line.tokens.iter().enumerate() {
        let head = match t.head {
            None => None,
            Some(-1) => Some(Head::Root),
            Some(h) if h >= 0 && (h as usize) < n && h as usize != i => Some(Head::Index(h as usize)),
            Some(h) => {
                return Err(Error::Validation(format!(
                    "sentence {}: token {i} has invalid head {h}",
                    line.sent_id
                )))
            }
        };
        tokens.push(Token {
            text: t.t.clone(),
            pos: t.pos.clone(),
            head,
            dep: t.dep.clone(),
        });
    }
    let mut mentions = Vec::with_capacity(line.mentions.len());
    for m in &line.mentions {
        if m.end <= m.start || m.end > n {
            return Err(Error::Validation(format!(
                "mention {}: span [{}, {}) invalid for sentence of {n} tokens",
                m.id, m.start, m.end
            )));
        }
        let name = NameKey::new(&m.first, &m.last)
            .map_err(|e| Error::Validation(format!("mention {}: {e}", m.id)))?;
        mentions.push(MentionSpan {
            mention_id: m.id.clone(),
            start: m.start,
            end: m.end,
            name,
        });
    }
    let mut sorted: Vec<&MentionSpan> = mentions.iter().collect();
    sorted.sort_by_key(|m| m.start);
    for pair in sorted.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(Error::Validation(format!(
                "mentions {} and {} overlap",
                pair[0].mention_id, pair[1].mention_id
            )));
        }
    }
    Ok(Sentence {
        sent_id: line.sent_id.clone(),
        doc_id: doc.doc_id.clone(),
        download_time: doc.download_time,
        tokens,
        mentions,
    })
}

/// Reads line-delimited JSON records, attaching the line number to errors.
pub(crate) fn read_jsonl<T, F>(path: &Path, mut each: F) -> Result<()>
where
    T: for<'de> Deserialize<'de>,
    F: FnMut(T) -> Result<()>,
{
    let reader = BufReader::new(File::open(path)?);
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wrap = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let value: T = serde_json::from_str(&line).map_err(|e| wrap(e.to_string()))?;
        each(value).map_err(|e| match e {
            Error::Validation(msg) => wrap(msg),
            other => other,
        })?;
    }
    Ok(())
}

fn push_document(
    doc: &DocumentLine,
    sentences: &mut Vec<Arc<Sentence>>,
    mention_ids: &mut BTreeSet<String>,
) -> Result<()> {
    for line in &doc.sentences {
        let sentence = sentence_from_line(doc, line)?;
        for m in &sentence.mentions {
            if !mention_ids.insert(m.mention_id.clone()) {
                return Err(Error::Validation(format!("duplicate mention id {}", m.mention_id)));
            }
        }
        sentences.push(Arc::new(sentence));
    }
    Ok(())
}

/// Loads a documents interchange file.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let mut sentences = Vec::new();
    let mut mention_ids = BTreeSet::new();
    read_jsonl(path, |doc: DocumentLine| push_document(&doc, &mut sentences, &mut mention_ids))?;
    Ok(Corpus::from_sentences(sentences))
}

/// Validates in-memory documents exactly as [`load_corpus`] does.
pub fn corpus_from_documents(docs: &[DocumentLine]) -> Result<Corpus> {
    let mut sentences = Vec::new();
    let mut mention_ids = BTreeSet::new();
    for doc in docs {
        push_document(doc, &mut sentences, &mut mention_ids)?;
    }
    Ok(Corpus::from_sentences(sentences))
}

pub fn write_documents<W: Write>(out: &mut W, docs: &[DocumentLine]) -> Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut *out, doc)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

// ---- dedup / filtering / cleanup ----

/// Keeps, among sentences with identical token text, only the one with the
/// earliest download time (first occurrence on ties). Order is preserved.
pub fn dedup_sentences(sentences: &[Arc<Sentence>]) -> Vec<Arc<Sentence>> {
    let mut best: HashMap<Vec<&str>, usize> = HashMap::new();
    for (i, s) in sentences.iter().enumerate() {
        best.entry(s.token_texts())
            .and_modify(|j| {
                if s.download_time < sentences[*j].download_time {
                    *j = i;
                }
            })
            .or_insert(i);
    }
    let keep: BTreeSet<usize> = best.into_values().collect();
    keep.into_iter().map(|i| Arc::clone(&sentences[i])).collect()
}

/// Applies [`dedup_sentences`] and drops mentions of removed sentences.
pub fn dedup_corpus(corpus: &Corpus) -> Corpus {
    let sentences = dedup_sentences(&corpus.sentences);
    let alive: BTreeSet<(&str, &str)> = sentences
        .iter()
        .map(|s| (s.doc_id.as_str(), s.sent_id.as_str()))
        .collect();
    let mentions = corpus
        .mentions
        .iter()
        .filter(|m| alive.contains(&(m.sentence.doc_id.as_str(), m.sentence.sent_id.as_str())))
        .cloned()
        .collect();
    Corpus {
        sentences,
        mentions,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordConfig {
    pub police_words: BTreeSet<String>,
    pub fatality_words: BTreeSet<String>,
}

pub const DEFAULT_POLICE_WORDS: [&str; 22] = [
    "police", "officer", "officers", "cop", "cops", "detective", "sheriff", "policeman",
    "policemen", "constable", "patrolman", "sergeant", "detectives", "patrolmen", "policewoman",
    "constables", "trooper", "troopers", "sergeants", "lieutenant", "deputies", "deputy",
];

pub const DEFAULT_FATALITY_WORDS: [&str; 21] = [
    "kill", "kills", "killing", "killings", "killed", "shot", "shots", "shoot", "shoots",
    "shooting", "murder", "murders", "murdered", "beat", "beats", "beating", "beaten", "fatal",
    "homicide", "homicides", "gunfire",
];

impl Default for KeywordConfig {
    fn default() -> Self {
        KeywordConfig {
            police_words: DEFAULT_POLICE_WORDS.iter().map(|s| s.to_string()).collect(),
            fatality_words: DEFAULT_FATALITY_WORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl KeywordConfig {
    pub fn validate(&self) -> Result<()> {
        for (label, words) in [("police_words", &self.police_words), ("fatality_words", &self.fatality_words)] {
            if words.is_empty() {
                return Err(Error::Config(format!("{label} is empty")));
            }
            if let Some(w) = words.iter().find(|w| w.to_lowercase() != **w || w.is_empty()) {
                return Err(Error::Config(format!("{label} entry {w:?} is not lowercase")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: KeywordConfig = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn has_police_word<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> bool {
        tokens.into_iter().any(|t| self.police_words.contains(&t.to_lowercase()))
    }

    pub fn has_fatality_word<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> bool {
        tokens.into_iter().any(|t| self.fatality_words.contains(&t.to_lowercase()))
    }
}

/// Keeps mentions whose sentence has 5..=200 tokens and contains at least one
/// police word and one fatality word.
pub fn filter_mentions(mentions: &[MentionRecord], keywords: &KeywordConfig) -> Vec<MentionRecord> {
    mentions
        .iter()
        .filter(|m| {
            let n = m.sentence.tokens.len();
            let texts = || m.symbolized_tokens.iter().map(|t| t.text.as_str());
            (MIN_SENTENCE_TOKENS..=MAX_SENTENCE_TOKENS).contains(&n)
                && keywords.has_police_word(texts())
                && keywords.has_fatality_word(texts())
        })
        .cloned()
        .collect()
}

fn is_title(token: &str) -> bool {
    TITLES.contains(&token.to_lowercase().as_str())
}

fn strip_possessive(s: &str) -> &str {
    s.strip_suffix("'s")
        .or_else(|| s.strip_suffix("’s"))
        .unwrap_or(s)
}

fn clean_text_ok(s: &str) -> bool {
    s.chars()
        .all(|c| c.is_alphabetic() || c == '.' || c == '-' || c == '\'' || c == '’')
}

/// Narrows a name span: leading titles and a trailing possessive token are
/// removed. Returns `None` when the remaining span must be dropped.
pub fn clean_span(tokens: &[&str]) -> Option<(usize, usize)> {
    let mut start = 0;
    let mut end = tokens.len();
    while start < end && is_title(tokens[start]) {
        start += 1;
    }
    if end > start && matches!(tokens[end - 1], "'s" | "’s" | "'") {
        end -= 1;
    }
    let words: Vec<&str> = tokens[start..end]
        .iter()
        .map(|t| strip_possessive(t))
        .filter(|t| !t.is_empty())
        .collect();
    if words.len() < 2 || !words.iter().all(|w| clean_text_ok(w)) {
        return None;
    }
    Some((start, end))
}

/// Drops mentions whose name has digits, disallowed punctuation or a single
/// token, strips titles and possessives, and re-symbolizes survivors.
pub fn clean_mentions(mentions: &[MentionRecord]) -> Vec<MentionRecord> {
    mentions
        .iter()
        .filter_map(|m| {
            let span_tokens: Vec<&str> = m.sentence.tokens[m.span.0..m.span.1]
                .iter()
                .map(|t| t.text.as_str())
                .collect();
            let (s, e) = clean_span(&span_tokens)?;
            let last = strip_possessive(&m.name.last);
            if !clean_text_ok(&m.name.first) || !clean_text_ok(last) {
                return None;
            }
            let name = NameKey::new(&m.name.first, last).ok()?;
            let original = m
                .sentence
                .mentions
                .iter()
                .find(|span| span.mention_id == m.mention_id)?;
            let mut record = MentionRecord::from_span(&m.sentence, original, (m.span.0 + s, m.span.0 + e));
            record.name = name;
            Some(record)
        })
        .collect()
}

/// Full preprocessing: dedup, cleanup, then keyword and length filtering.
pub fn prepare_mentions(corpus: &Corpus, keywords: &KeywordConfig) -> Vec<MentionRecord> {
    let deduped = dedup_corpus(corpus);
    filter_mentions(&clean_mentions(&deduped.mentions), keywords)
}

// ---- gold KB / entities / labels ----

#[derive(Debug, Clone, PartialEq)]
pub struct GoldRecord {
    pub name: NameKey,
    pub location: String,
    pub incident_date: NaiveDate,
    pub source_fields: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldLine {
    pub first: String,
    pub last: String,
    pub location: String,
    pub date: NaiveDate,
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl From<&GoldRecord> for GoldLine {
    fn from(g: &GoldRecord) -> Self {
        GoldLine {
            first: g.name.first.clone(),
            last: g.name.last.clone(),
            location: g.location.clone(),
            date: g.incident_date,
            extra: g.source_fields.clone(),
        }
    }
}

pub fn load_gold(path: &Path) -> Result<Vec<GoldRecord>> {
    let mut out = Vec::new();
    read_jsonl(path, |line: GoldLine| {
        out.push(GoldRecord {
            name: NameKey::new(&line.first, &line.last)?,
            location: line.location,
            incident_date: line.date,
            source_fields: line.extra,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_gold<W: Write>(out: &mut W, gold: &[GoldRecord]) -> Result<()> {
    for g in gold {
        serde_json::to_writer(&mut *out, &GoldLine::from(g))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Inclusive range of incident dates defining the evaluation period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl TestWindow {
    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

impl FromStr for TestWindow {
    type Err = Error;

    /// Parses `YYYY-MM-DD..YYYY-MM-DD`.
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| Error::Config(format!("test window {s:?} is not START..END")))?;
        let parse = |x: &str| {
            NaiveDate::parse_from_str(x.trim(), "%Y-%m-%d")
                .map_err(|e| Error::Config(format!("test window date {x:?}: {e}")))
        };
        let w = TestWindow {
            start: parse(a)?,
            end: parse(b)?,
        };
        if w.end < w.start {
            return Err(Error::Config(format!("test window {s:?} ends before it starts")));
        }
        Ok(w)
    }
}

impl fmt::Display for TestWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityEntry {
    pub mention_ids: Vec<String>,
    pub y_train: bool,
    pub y_test_gold: bool,
    pub historical: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityTable {
    pub entities: BTreeMap<NameKey, EntityEntry>,
}

impl EntityTable {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn get(&self, name: &NameKey) -> Option<&EntityEntry> {
        self.entities.get(name)
    }

    /// Map from mention id to its entity key.
    pub fn mention_index(&self) -> HashMap<&str, &NameKey> {
        self.entities
            .iter()
            .flat_map(|(k, e)| e.mention_ids.iter().map(move |m| (m.as_str(), k)))
            .collect()
    }

    pub fn historical_names(&self) -> BTreeSet<NameKey> {
        self.entities
            .iter()
            .filter(|(_, e)| e.historical)
            .map(|(k, _)| k.clone())
            .collect()
    }
}

/// Groups mentions by name and assigns train, test and historical flags.
pub fn build_entities(
    mentions: &[MentionRecord],
    gold_train: &[GoldRecord],
    gold_test: &[GoldRecord],
    window: &TestWindow,
) -> EntityTable {
    let train_names: BTreeSet<&NameKey> = gold_train.iter().map(|g| &g.name).collect();
    let in_window: BTreeSet<&NameKey> = gold_test
        .iter()
        .filter(|g| window.contains(g.incident_date))
        .map(|g| &g.name)
        .collect();
    let before: BTreeSet<&NameKey> = gold_train
        .iter()
        .chain(gold_test)
        .filter(|g| g.incident_date < window.start)
        .map(|g| &g.name)
        .collect();

    let mut entities: BTreeMap<NameKey, EntityEntry> = BTreeMap::new();
    for m in mentions {
        entities
            .entry(m.name.clone())
            .or_default()
            .mention_ids
            .push(m.mention_id.clone());
    }
    for (name, e) in entities.iter_mut() {
        e.y_train = train_names.contains(name);
        e.y_test_gold = in_window.contains(name);
        e.historical = !e.y_test_gold && before.contains(name);
    }
    EntityTable { entities }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelRule {
    NameOnly,
    NameAndLocation,
}

impl FromStr for LabelRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "name-only" => Ok(LabelRule::NameOnly),
            "name-and-loc" | "name-and-location" => Ok(LabelRule::NameAndLocation),
            other => Err(Error::Config(format!("unknown label rule {other:?}"))),
        }
    }
}

impl fmt::Display for LabelRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelRule::NameOnly => "name-only",
            LabelRule::NameAndLocation => "name-and-loc",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelAssignment {
    pub rule: LabelRule,
    pub z: BTreeMap<String, bool>,
}

impl LabelAssignment {
    pub fn positives(&self) -> BTreeSet<&str> {
        self.z.iter().filter(|(_, &z)| z).map(|(k, _)| k.as_str()).collect()
    }
}

/// Case-insensitive contiguous token-sequence match.
pub fn contains_phrase(tokens: &[Token], phrase: &str) -> bool {
    let needle: Vec<String> = phrase.split_whitespace().map(str::to_lowercase).collect();
    if needle.is_empty() || needle.len() > tokens.len() {
        return false;
    }
    let hay: Vec<String> = tokens.iter().map(|t| t.text.to_lowercase()).collect();
    hay.windows(needle.len()).any(|w| w == needle.as_slice())
}

/// Imputes mention labels from the gold KB under the given rule.
pub fn distant_label(mentions: &[MentionRecord], gold: &[GoldRecord], rule: LabelRule) -> LabelAssignment {
    let mut by_name: HashMap<&NameKey, Vec<&GoldRecord>> = HashMap::new();
    for g in gold {
        by_name.entry(&g.name).or_default().push(g);
    }
    let z = mentions
        .iter()
        .map(|m| {
            let hit = by_name.get(&m.name).is_some_and(|records| match rule {
                LabelRule::NameOnly => true,
                LabelRule::NameAndLocation => records
                    .iter()
                    .any(|g| contains_phrase(&m.sentence.tokens, &g.location)),
            });
            (m.mention_id.clone(), hit)
        })
        .collect();
    LabelAssignment { rule, z }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t(h: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2016, 9, 1, h, 0, 0).unwrap()
    }

    fn sentence(id: &str, text: &str, time: DateTime<Utc>, spans: &[(&str, usize, usize, &str, &str)]) -> Arc<Sentence> {
        Arc::new(Sentence {
            sent_id: id.into(),
            doc_id: format!("d-{id}"),
            download_time: time,
            tokens: text.split_whitespace().map(Token::plain).collect(),
            mentions: spans
                .iter()
                .map(|&(mid, s, e, f, l)| MentionSpan {
                    mention_id: mid.into(),
                    start: s,
                    end: e,
                    name: NameKey::new(f, l).unwrap(),
                })
                .collect(),
        })
    }

    fn texts(tokens: &[Token]) -> Vec<&str> {
        tokens.iter().map(|t| t.text.as_str()).collect()
    }

    #[test]
    fn namekey_rules() {
        let k = NameKey::new("Keith", " SCOTT ").unwrap();
        assert_eq!((k.first.as_str(), k.last.as_str()), ("keith", "scott"));
        assert!(NameKey::new("", "x").is_err());
        assert!(NameKey::new("a b", "x").is_err());
    }

    #[test]
    fn symbolization_collapses_spans() {
        let s = sentence(
            "s",
            "Officer Jane Roe shot and killed Alton Sterling in Baton Rouge .",
            t(0),
            &[("m1", 1, 3, "jane", "roe"), ("m2", 6, 8, "alton", "sterling")],
        );
        let corpus = Corpus::from_sentences(vec![s]);
        let m2 = &corpus.mentions[1];
        assert_eq!(
            texts(&m2.symbolized_tokens),
            ["Officer", "PERSON", "shot", "and", "killed", "TARGET", "in", "Baton", "Rouge", "."]
        );
        assert_eq!(m2.target, 5);
        let m1 = &corpus.mentions[0];
        assert_eq!(m1.symbolized_tokens[m1.target].text, TARGET);
        assert_eq!(m1.symbolized_tokens.iter().filter(|t| t.text == TARGET).count(), 1);
    }

    #[test]
    fn symbolization_remaps_heads() {
        // John(0)->Doe(1) compound, Doe->killed(3) nsubjpass, was(2)->killed aux, killed root, .(4)->killed
        let tokens = [("John", 1), ("Doe", 3), ("was", 3), ("killed", -1), (".", 3)]
            .iter()
            .map(|&(w, h)| Token {
                text: w.into(),
                pos: Some("X".into()),
                head: Some(if h < 0 { Head::Root } else { Head::Index(h as usize) }),
                dep: Some("dep".into()),
            })
            .collect();
        let s = Arc::new(Sentence {
            sent_id: "s".into(),
            doc_id: "d".into(),
            download_time: t(0),
            tokens,
            mentions: vec![MentionSpan {
                mention_id: "m".into(),
                start: 0,
                end: 2,
                name: NameKey::new("john", "doe").unwrap(),
            }],
        });
        let c = Corpus::from_sentences(vec![s]);
        let sym = &c.mentions[0].symbolized_tokens;
        assert_eq!(texts(sym), ["TARGET", "was", "killed", "."]);
        assert_eq!(sym[0].head, Some(Head::Index(2)));
        assert_eq!(sym[1].head, Some(Head::Index(2)));
        assert_eq!(sym[2].head, Some(Head::Root));
        assert_eq!(sym[3].head, Some(Head::Index(2)));
    }

    #[test]
    fn dedup_keeps_earliest() {
        let a = sentence("a", "x y z", t(5), &[]);
        let b = sentence("b", "x y z", t(2), &[]);
        let c = sentence("c", "p q", t(9), &[]);
        let out = dedup_sentences(&[a, b.clone(), c.clone()]);
        assert_eq!(out, vec![b, c]);
    }

    #[test]
    fn dedup_distinct_is_identity() {
        let v = vec![sentence("a", "x", t(1), &[]), sentence("b", "y", t(0), &[])];
        assert_eq!(dedup_sentences(&v), v);
    }

    #[test]
    fn keyword_filter() {
        let kw = KeywordConfig::default();
        let c = Corpus::from_sentences(vec![
            sentence("a", "Officers shot and killed John Doe .", t(0), &[("m1", 4, 6, "john", "doe")]),
            sentence("b", "John Doe attended the meeting .", t(0), &[("m2", 0, 2, "john", "doe")]),
            sentence("c", "Police killed Jo Do", t(0), &[("m3", 2, 4, "jo", "do")]),
        ]);
        let kept = filter_mentions(&c.mentions, &kw);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].mention_id, "m1");
        // idempotent
        assert_eq!(filter_mentions(&kept, &kw), kept);
    }

    #[test]
    fn three_token_sentence_dropped() {
        let kw = KeywordConfig::default();
        let c = Corpus::from_sentences(vec![sentence("a", "police killed Doe", t(0), &[])]);
        assert!(c.mentions.is_empty());
        let s = &c.sentences[0];
        assert!(kw.has_police_word(s.token_texts()) && kw.has_fatality_word(s.token_texts()));
        let c = Corpus::from_sentences(vec![sentence("a", "police killed John Doe", t(0), &[("m", 2, 4, "john", "doe")])]);
        assert!(filter_mentions(&c.mentions, &kw).is_empty());
    }

    #[test]
    fn default_keyword_lists() {
        let kw = KeywordConfig::default();
        assert_eq!(kw.police_words.len(), 22);
        assert_eq!(kw.fatality_words.len(), 21);
        kw.validate().unwrap();
        let bad = KeywordConfig {
            police_words: ["Police".to_string()].into(),
            fatality_words: kw.fatality_words.clone(),
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn clean_titles_possessive() {
        let c = Corpus::from_sentences(vec![sentence(
            "a",
            "police said Mr. John Doe's car was shot",
            t(0),
            &[("m", 2, 5, "John", "Doe's")],
        )]);
        let cleaned = clean_mentions(&c.mentions);
        assert_eq!(cleaned.len(), 1);
        assert_eq!(cleaned[0].name, NameKey::new("john", "doe").unwrap());
        assert_eq!(cleaned[0].span, (3, 5));
        assert_eq!(
            texts(&cleaned[0].symbolized_tokens),
            ["police", "said", "Mr.", "TARGET", "car", "was", "shot"]
        );
    }

    #[test]
    fn clean_drops_bad_names() {
        let c = Corpus::from_sentences(vec![
            sentence("a", "police shot R2D2 yesterday ok", t(0), &[("m1", 2, 3, "r2d2", "r2d2")]),
            sentence("b", "police shot Madonna yesterday ok", t(0), &[("m2", 2, 3, "madonna", "madonna")]),
            sentence("c", "police shot John O'Neil-Smith yesterday", t(0), &[("m3", 2, 4, "john", "o'neil-smith")]),
            sentence("d", "police shot John Doe, yesterday", t(0), &[("m4", 2, 4, "john", "doe,")]),
        ]);
        let ids: Vec<String> = clean_mentions(&c.mentions).into_iter().map(|m| m.mention_id).collect();
        assert_eq!(ids, ["m3"]);
        assert_eq!(clean_span(&["Mr.", "John", "Doe's"]), Some((1, 3)));
        assert_eq!(clean_span(&["Sgt.", "Doe"]), None);
    }

    fn gold(first: &str, last: &str, loc: &str, date: &str) -> GoldRecord {
        GoldRecord {
            name: NameKey::new(first, last).unwrap(),
            location: loc.into(),
            incident_date: NaiveDate::parse_from_str(date, "%Y-%m-%d").unwrap(),
            source_fields: serde_json::Value::Null,
        }
    }

    #[test]
    fn entity_flags() {
        let c = Corpus::from_sentences(vec![
            sentence("a", "police shot Keith Scott today", t(0), &[("m1", 2, 4, "keith", "scott")]),
            sentence("b", "Keith Scott was killed by police", t(1), &[("m2", 0, 2, "keith", "scott")]),
            sentence("c", "police recalled Eric Garner killed before", t(1), &[("m3", 2, 4, "eric", "garner")]),
            sentence("d", "police shot Jane Roe today", t(1), &[("m4", 2, 4, "jane", "roe")]),
        ]);
        let window: TestWindow = "2016-09-01..2016-12-31".parse().unwrap();
        let train = vec![gold("eric", "garner", "New York", "2014-07-17")];
        let test = vec![gold("keith", "scott", "Charlotte", "2016-09-20"), gold("x", "y", "z", "2016-10-01")];
        let table = build_entities(&c.mentions, &train, &test, &window);
        assert_eq!(table.len(), 3);
        let ks = table.get(&NameKey::new("keith", "scott").unwrap()).unwrap();
        assert_eq!(ks.mention_ids, ["m1", "m2"]);
        assert!(ks.y_test_gold && !ks.historical && !ks.y_train);
        let eg = table.get(&NameKey::new("eric", "garner").unwrap()).unwrap();
        assert!(eg.historical && eg.y_train && !eg.y_test_gold);
        let jr = table.get(&NameKey::new("jane", "roe").unwrap()).unwrap();
        assert!(!jr.historical && !jr.y_train && !jr.y_test_gold);
        let total: usize = table.entities.values().map(|e| e.mention_ids.len()).sum();
        assert_eq!(total, c.mentions.len());
    }

    #[test]
    fn in_window_beats_historical() {
        let c = Corpus::from_sentences(vec![sentence("a", "police shot John Doe today", t(0), &[("m", 2, 4, "john", "doe")])]);
        let window: TestWindow = "2016-09-01..2016-12-31".parse().unwrap();
        let g = [gold("john", "doe", "A", "2015-01-01"), gold("john", "doe", "B", "2016-10-01")];
        let table = build_entities(&c.mentions, &g[..1], &g[1..], &window);
        let e = &table.entities.values().next().unwrap();
        assert!(e.y_test_gold && !e.historical);
    }

    #[test]
    fn label_rules() {
        let c = Corpus::from_sentences(vec![
            sentence("a", "Alton Sterling was killed by police in Baton Rouge", t(0), &[("m1", 0, 2, "alton", "sterling")]),
            sentence("b", "Alton Sterling was killed by police", t(0), &[("m2", 0, 2, "alton", "sterling")]),
            sentence("c", "Jane Roe was killed by police in Baton Rouge", t(0), &[("m3", 0, 2, "jane", "roe")]),
            sentence("d", "Alton Sterling was killed by police in BatonRouge", t(0), &[("m4", 0, 2, "alton", "sterling")]),
        ]);
        let g = [gold("alton", "sterling", "Baton Rouge", "2016-07-05")];
        let loc = distant_label(&c.mentions, &g, LabelRule::NameAndLocation);
        let name = distant_label(&c.mentions, &g, LabelRule::NameOnly);
        assert_eq!(loc.positives().into_iter().collect::<Vec<_>>(), ["m1"]);
        assert_eq!(name.positives().into_iter().collect::<Vec<_>>(), ["m1", "m2", "m4"]);
        assert!(!name.z["m3"]);
        assert!(loc.positives().is_subset(&name.positives()));
        assert!("fuzzy".parse::<LabelRule>().is_err());
        assert_eq!("name-and-loc".parse::<LabelRule>().unwrap(), LabelRule::NameAndLocation);
    }

    #[test]
    fn phrase_match_is_case_insensitive_whole_tokens() {
        let toks: Vec<Token> = "in baton ROUGE today".split(' ').map(Token::plain).collect();
        assert!(contains_phrase(&toks, "Baton Rouge"));
        assert!(!contains_phrase(&toks, "Rouge today now"));
        assert!(!contains_phrase(&toks, "aton"));
    }

    #[test]
    fn window_parse() {
        assert!("2016-12-01..2016-09-01".parse::<TestWindow>().is_err());
        assert!("2016-09-01".parse::<TestWindow>().is_err());
        let w: TestWindow = "2016-09-01..2016-12-31".parse().unwrap();
        assert_eq!(w.to_string(), "2016-09-01..2016-12-31");
    }
}
