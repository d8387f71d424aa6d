//! Seeded synthetic corpus and gold KB generator with known mention truth.
//!
//! Sentences come from a small set of parsed templates. Victims of positive
//! entities get at least one event sentence; their remaining mentions are
//! commentary or other-event sentences at `noise_rate`. Negative entities
//! (officers, suspects, bystanders) appear in background sentences that share
//! the police and fatality vocabulary, so every mention survives keyword
//! filtering and the learner has to rely on context.

use std::collections::BTreeSet;
use std::io::Write;

use chrono::{DateTime, Duration, NaiveDate, TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocumentLine, GoldRecord, MentionLine, NameKey, SentenceLine, TestWindow, TokenLine};
use crate::error::{Error, Result};

pub const TRAIN_START: &str = "2016-01-01";
pub const DEFAULT_TEST_WINDOW: &str = "2016-09-01..2016-12-31";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_train_entities: usize,
    pub n_test_entities: usize,
    /// Fraction of each split's entities that are gold victims.
    pub positive_fraction: f64,
    /// Entities killed before the test window that are still mentioned in
    /// test documents.
    pub n_historical: usize,
    /// In-window gold victims never mentioned in the test documents.
    pub missing_gold: usize,
    /// Inclusive mention-count range for positive entities.
    pub positive_mentions: (usize, usize),
    /// Inclusive mention-count range for negative entities.
    pub negative_mentions: (usize, usize),
    /// Probability that a positive entity's mention does not express the event.
    pub noise_rate: f64,
    /// Probability that an event sentence names the incident location.
    pub location_rate: f64,
    pub vocab_size: usize,
    /// Probability that a sentence is syndicated into a later document.
    pub duplicate_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train_entities: 500,
            n_test_entities: 200,
            positive_fraction: 0.3,
            n_historical: 10,
            missing_gold: 10,
            positive_mentions: (1, 6),
            negative_mentions: (1, 4),
            noise_rate: 0.36,
            location_rate: 0.6,
            vocab_size: 200,
            duplicate_rate: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [
            ("positive_fraction", self.positive_fraction),
            ("noise_rate", self.noise_rate),
            ("location_rate", self.location_rate),
            ("duplicate_rate", self.duplicate_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {rate}")));
            }
        }
        for (name, (lo, hi)) in [
            ("positive_mentions", self.positive_mentions),
            ("negative_mentions", self.negative_mentions),
        ] {
            if lo == 0 || lo > hi {
                return Err(Error::Config(format!("{name} range {lo}..={hi} is invalid")));
            }
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be positive".into()));
        }
        Ok(())
    }

    /// Gold victims among the train and test entities.
    pub fn positive_counts(&self) -> (usize, usize) {
        let count = |n: usize| (self.positive_fraction * n as f64).round() as usize;
        (count(self.n_train_entities), count(self.n_test_entities))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthLine {
    pub mention_id: String,
    pub z_true: bool,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train_docs: Vec<DocumentLine>,
    pub test_docs: Vec<DocumentLine>,
    pub gold_train: Vec<GoldRecord>,
    pub gold_test: Vec<GoldRecord>,
    pub truth: Vec<TruthLine>,
    pub window: TestWindow,
}

pub fn write_truth<W: Write>(out: &mut W, truth: &[TruthLine]) -> Result<()> {
    for t in truth {
        serde_json::to_writer(&mut *out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

// ---- templates ----

/// One template element: text (or slot), POS, head element (-1 root), label.
type Elem = (&'static str, &'static str, i32, &'static str);

const SUBJECT: &str = "{V}";
const OFFICER: &str = "{O}";
const CITY: &str = "{C}";
const FILLER: &str = "{W}";

/// Event sentences naming the city.
const EVENT_CITY: &[&[Elem]] = &[
    &[
        ("Police", "NNS", 1, "nsubj"), ("shot", "VBD", -1, "root"), ("and", "CC", 1, "cc"),
        ("killed", "VBD", 1, "conj"), (SUBJECT, "NNP", 3, "dobj"), ("in", "IN", 3, "prep"),
        (CITY, "NNP", 5, "pobj"), ("on", "IN", 3, "prep"), (FILLER, "NN", 7, "pobj"), (".", ".", 1, "punct"),
    ],
    &[
        (SUBJECT, "NNP", 3, "nsubjpass"), ("was", "VBD", 3, "auxpass"), ("fatally", "RB", 3, "advmod"),
        ("shot", "VBN", -1, "root"), ("by", "IN", 3, "prep"), ("officers", "NNS", 4, "pobj"),
        ("in", "IN", 3, "prep"), (CITY, "NNP", 6, "pobj"), ("after", "IN", 3, "prep"), ("a", "DT", 10, "det"),
        (FILLER, "NN", 8, "pobj"), (".", ".", 3, "punct"),
    ],
    &[
        ("Officer", "NNP", 1, "compound"), (OFFICER, "NNP", 2, "nsubj"), ("shot", "VBD", -1, "root"),
        ("and", "CC", 2, "cc"), ("killed", "VBD", 2, "conj"), (SUBJECT, "NNP", 4, "dobj"),
        ("during", "IN", 4, "prep"), ("a", "DT", 9, "det"), (FILLER, "NN", 9, "compound"),
        ("stop", "NN", 6, "pobj"), ("in", "IN", 4, "prep"), (CITY, "NNP", 10, "pobj"), (".", ".", 2, "punct"),
    ],
    &[
        ("Deputies", "NNS", 2, "nsubj"), ("fatally", "RB", 2, "advmod"), ("shot", "VBD", -1, "root"),
        (SUBJECT, "NNP", 2, "dobj"), ("outside", "IN", 2, "prep"), ("a", "DT", 6, "det"),
        (FILLER, "NN", 4, "pobj"), ("in", "IN", 2, "prep"), (CITY, "NNP", 7, "pobj"), (".", ".", 2, "punct"),
    ],
    &[
        (SUBJECT, "NNP", 1, "nsubj"), ("died", "VBD", -1, "root"), ("after", "IN", 6, "mark"),
        ("a", "DT", 5, "det"), ("police", "NN", 5, "compound"), ("officer", "NN", 6, "nsubj"),
        ("shot", "VBD", 1, "advcl"), ("him", "PRP", 6, "dobj"), ("near", "IN", 6, "prep"),
        (CITY, "NNP", 8, "pobj"), (".", ".", 1, "punct"),
    ],
];

/// Event sentences without a location.
const EVENT_PLAIN: &[&[Elem]] = &[
    &[
        ("Police", "NNS", 1, "nsubj"), ("shot", "VBD", -1, "root"), ("and", "CC", 1, "cc"),
        ("killed", "VBD", 1, "conj"), (SUBJECT, "NNP", 3, "dobj"), ("on", "IN", 3, "prep"),
        (FILLER, "NN", 5, "pobj"), (".", ".", 1, "punct"),
    ],
    &[
        (SUBJECT, "NNP", 3, "nsubjpass"), ("was", "VBD", 3, "auxpass"), ("fatally", "RB", 3, "advmod"),
        ("shot", "VBN", -1, "root"), ("by", "IN", 3, "prep"), ("officers", "NNS", 4, "pobj"),
        ("after", "IN", 3, "prep"), ("a", "DT", 8, "det"), (FILLER, "NN", 6, "pobj"), (".", ".", 3, "punct"),
    ],
    &[
        ("Officer", "NNP", 1, "compound"), (OFFICER, "NNP", 2, "nsubj"), ("shot", "VBD", -1, "root"),
        ("and", "CC", 2, "cc"), ("killed", "VBD", 2, "conj"), (SUBJECT, "NNP", 4, "dobj"),
        ("during", "IN", 4, "prep"), ("a", "DT", 9, "det"), (FILLER, "NN", 9, "compound"),
        ("stop", "NN", 6, "pobj"), (".", ".", 2, "punct"),
    ],
];

/// Positive-entity sentences that do not assert a police killing: commentary
/// and killings by others. They reuse the event vocabulary.
const NOISE: &[&[Elem]] = &[
    &[
        ("Relatives", "NNS", 3, "nsubj"), ("of", "IN", 0, "prep"), (SUBJECT, "NNP", 1, "pobj"),
        ("criticized", "VBD", -1, "root"), ("the", "DT", 6, "det"), ("police", "NN", 6, "compound"),
        ("shooting", "NN", 3, "dobj"), ("in", "IN", 6, "prep"), (CITY, "NNP", 7, "pobj"), ("on", "IN", 3, "prep"),
        (FILLER, "NN", 9, "pobj"), (".", ".", 3, "punct"),
    ],
    &[
        ("A", "DT", 1, "det"), ("lawyer", "NN", 4, "nsubj"), ("for", "IN", 1, "prep"), (SUBJECT, "NNP", 2, "pobj"),
        ("said", "VBD", -1, "root"), ("the", "DT", 6, "det"), ("officers", "NNS", 9, "nsubjpass"),
        ("were", "VBD", 9, "auxpass"), ("never", "RB", 9, "neg"), ("charged", "VBN", 4, "ccomp"),
        ("in", "IN", 9, "prep"), ("the", "DT", 12, "det"), ("killing", "NN", 10, "pobj"), (".", ".", 4, "punct"),
    ],
    &[
        ("Police", "NNS", 1, "nsubj"), ("said", "VBD", -1, "root"), (SUBJECT, "NNP", 4, "nsubjpass"),
        ("was", "VBD", 4, "auxpass"), ("shot", "VBN", 1, "ccomp"), ("by", "IN", 4, "prep"), ("a", "DT", 8, "det"),
        (FILLER, "JJ", 8, "amod"), ("neighbor", "NN", 5, "pobj"), ("in", "IN", 4, "prep"),
        (CITY, "NNP", 9, "pobj"), (".", ".", 1, "punct"),
    ],
    &[
        ("A", "DT", 1, "det"), ("vigil", "NN", 4, "nsubj"), ("for", "IN", 1, "prep"), (SUBJECT, "NNP", 2, "pobj"),
        ("drew", "VBD", -1, "root"), ("critics", "NNS", 4, "dobj"), ("of", "IN", 5, "prep"),
        ("police", "NN", 9, "compound"), ("shooting", "NN", 9, "compound"), ("policy", "NN", 6, "pobj"),
        ("on", "IN", 4, "prep"), (FILLER, "NN", 10, "pobj"), (".", ".", 4, "punct"),
    ],
];

/// Sentences about negative entities.
const BACKGROUND: &[&[Elem]] = &[
    &[
        ("Officer", "NNP", 1, "compound"), (SUBJECT, "NNP", 3, "nsubjpass"), ("was", "VBD", 3, "auxpass"),
        ("placed", "VBN", -1, "root"), ("on", "IN", 3, "prep"), ("leave", "NN", 4, "pobj"),
        ("after", "IN", 3, "prep"), ("the", "DT", 8, "det"), ("shooting", "NN", 6, "pobj"), (".", ".", 3, "punct"),
    ],
    &[
        ("Police", "NNS", 1, "nsubj"), ("arrested", "VBD", -1, "root"), (SUBJECT, "NNP", 1, "dobj"),
        ("in", "IN", 1, "prep"), ("connection", "NN", 3, "pobj"), ("with", "IN", 4, "prep"), ("a", "DT", 9, "det"),
        ("fatal", "JJ", 9, "amod"), (FILLER, "NN", 9, "compound"), ("shooting", "NN", 5, "pobj"),
        ("in", "IN", 1, "prep"), (CITY, "NNP", 10, "pobj"), (".", ".", 1, "punct"),
    ],
    &[
        (SUBJECT, "NNP", 2, "nsubjpass"), ("was", "VBD", 2, "auxpass"), ("shot", "VBN", 10, "ccomp"),
        ("and", "CC", 2, "cc"), ("killed", "VBN", 2, "conj"), ("by", "IN", 2, "prep"), ("a", "DT", 7, "det"),
        ("gunman", "NN", 5, "pobj"), (",", ",", 10, "punct"), ("police", "NNS", 10, "nsubj"),
        ("said", "VBD", -1, "root"), (".", ".", 10, "punct"),
    ],
    &[
        ("Sheriff", "NNP", 1, "compound"), (SUBJECT, "NNP", 2, "nsubj"), ("said", "VBD", -1, "root"),
        ("deputies", "NNS", 5, "nsubj"), ("are", "VBP", 5, "aux"), ("investigating", "VBG", 2, "ccomp"),
        ("the", "DT", 8, "det"), (FILLER, "NN", 8, "compound"), ("killing", "NN", 5, "dobj"), (".", ".", 2, "punct"),
    ],
    &[
        (SUBJECT, "NNP", 1, "nsubj"), ("told", "VBD", -1, "root"), ("police", "NNS", 1, "dobj"),
        ("the", "DT", 4, "det"), ("officer", "NN", 5, "nsubj"), ("shot", "VBD", 1, "ccomp"), ("at", "IN", 5, "prep"),
        ("the", "DT", 8, "det"), ("car", "NN", 6, "pobj"), ("in", "IN", 5, "prep"), (CITY, "NNP", 9, "pobj"),
        (".", ".", 1, "punct"),
    ],
];

const CITIES: &[&str] = &[
    "Springfield", "Riverton", "Fairview", "Greenville", "Oak Ridge", "Lake City", "Cedar Falls", "Madison",
    "Franklin", "Clinton", "Georgetown", "Salem", "Bristol", "Dover", "Milton", "Ashland", "Burlington",
    "Manchester", "Oxford", "Kingston",
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ra", "te", "su", "no", "da", "vi", "be", "ro", "ma", "li", "to", "sa", "ne", "ga", "fi",
    "ho", "ju",
];

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Deterministic filler word for vocabulary index `k`.
fn filler_word(k: usize) -> String {
    let n = SYLLABLES.len();
    let mut word = String::new();
    let mut rest = k;
    for _ in 0..3 {
        word.push_str(SYLLABLES[rest % n]);
        rest /= n;
    }
    while rest > 0 {
        word.push_str(SYLLABLES[rest % n]);
        rest /= n;
    }
    word
}

struct Person {
    first: String,
    last: String,
}

fn random_name(rng: &mut ChaCha8Rng, taken: &mut BTreeSet<(String, String)>) -> Person {
    loop {
        let mut part = |k: usize| {
            let s: String = (0..k).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
            capitalize(&s)
        };
        let first = part(2);
        let last = part(3);
        if taken.insert((first.to_lowercase(), last.to_lowercase())) {
            return Person { first, last };
        }
    }
}

/// A template instance: tokens plus the person mentions it contains.
struct Instance {
    tokens: Vec<TokenLine>,
    /// `(start, end, person index, z_true)`.
    mentions: Vec<(usize, usize, usize, bool)>,
}

struct Fill<'a> {
    subject: usize,
    officer: Option<usize>,
    city: &'a str,
    filler: String,
    subject_true: bool,
}

fn instantiate(template: &[Elem], fill: &Fill<'_>, people: &[Person]) -> Instance {
    // Expand elements to tokens; the last token of each element is its head.
    let mut pieces: Vec<Vec<(String, &str)>> = Vec::with_capacity(template.len());
    for &(text, pos, _, _) in template {
        let words: Vec<String> = match text {
            SUBJECT => vec![people[fill.subject].first.clone(), people[fill.subject].last.clone()],
            OFFICER => {
                let p = &people[fill.officer.expect("template needs an officer")];
                vec![p.first.clone(), p.last.clone()]
            }
            CITY => fill.city.split_whitespace().map(str::to_owned).collect(),
            FILLER => vec![fill.filler.clone()],
            _ => vec![text.to_owned()],
        };
        pieces.push(words.into_iter().map(|w| (w, pos)).collect());
    }
    let mut offsets = Vec::with_capacity(pieces.len());
    let mut n = 0;
    for p in &pieces {
        offsets.push(n);
        n += p.len();
    }
    let anchor = |e: usize| offsets[e] + pieces[e].len() - 1;
    let mut tokens = Vec::with_capacity(n);
    let mut mentions = Vec::new();
    for (e, (&(text, _, head, dep), words)) in template.iter().zip(&pieces).enumerate() {
        let last = words.len() - 1;
        for (k, (w, pos)) in words.iter().enumerate() {
            let (h, d) = if k < last {
                (anchor(e) as i64, "compound")
            } else if head < 0 {
                (-1, dep)
            } else {
                (anchor(head as usize) as i64, dep)
            };
            tokens.push(TokenLine {
                t: w.clone(),
                pos: Some((*pos).to_owned()),
                head: Some(h),
                dep: Some(d.to_owned()),
            });
        }
        match text {
            SUBJECT => mentions.push((offsets[e], offsets[e] + 2, fill.subject, fill.subject_true)),
            OFFICER => mentions.push((offsets[e], offsets[e] + 2, fill.officer.expect("checked"), false)),
            _ => {}
        }
    }
    Instance { tokens, mentions }
}

fn needs_officer(t: &[Elem]) -> bool {
    t.iter().any(|e| e.0 == OFFICER)
}

struct SplitPlan {
    /// `(person index, is_victim, city)` for every entity mentioned in the split.
    entities: Vec<(usize, bool, &'static str)>,
    negatives: Vec<usize>,
}

struct Generator<'a> {
    config: &'a SynthConfig,
    rng: ChaCha8Rng,
    people: Vec<Person>,
    taken: BTreeSet<(String, String)>,
}

impl Generator<'_> {
    fn person(&mut self) -> usize {
        let p = random_name(&mut self.rng, &mut self.taken);
        self.people.push(p);
        self.people.len() - 1
    }

    fn city(&mut self) -> &'static str {
        CITIES.choose(&mut self.rng).expect("non-empty")
    }

    fn filler(&mut self) -> String {
        filler_word(self.rng.random_range(0..self.config.vocab_size))
    }

    fn date_in(&mut self, start: NaiveDate, end: NaiveDate) -> NaiveDate {
        let span = (end - start).num_days();
        start + Duration::days(self.rng.random_range(0..=span))
    }

    fn sentences(&mut self, plan: &SplitPlan) -> Vec<Instance> {
        let cfg = self.config;
        let mut out = Vec::new();
        for &(person, victim, city) in &plan.entities {
            let (lo, hi) = if victim { cfg.positive_mentions } else { cfg.negative_mentions };
            let k = self.rng.random_range(lo..=hi);
            let mut noise: Vec<bool> = (0..k).map(|_| victim && self.rng.random_bool(cfg.noise_rate)).collect();
            if victim && noise.iter().all(|&b| b) {
                noise[0] = false;
            }
            for is_noise in noise {
                let (pool, subject_true): (&[&[Elem]], bool) = if !victim {
                    // Commentary and other-killing sentences are not specific
                    // to victims.
                    (if self.rng.random_bool(0.5) { BACKGROUND } else { NOISE }, false)
                } else if is_noise {
                    (NOISE, false)
                } else if self.rng.random_bool(cfg.location_rate) {
                    (EVENT_CITY, true)
                } else {
                    (EVENT_PLAIN, true)
                };
                let usable: Vec<&[Elem]> = pool
                    .iter()
                    .copied()
                    .filter(|t| !needs_officer(t) || !plan.negatives.is_empty())
                    .collect();
                let template = *usable.choose(&mut self.rng).expect("templates without officers exist");
                let officer = if needs_officer(template) {
                    plan.negatives.choose(&mut self.rng).copied()
                } else {
                    None
                };
                // Victims are tied to their incident city; others get any city.
                let city = if victim { city } else { self.city() };
                let fill = Fill {
                    subject: person,
                    officer,
                    city,
                    filler: self.filler(),
                    subject_true,
                };
                out.push(instantiate(template, &fill, &self.people));
            }
        }
        out
    }

    fn documents(
        &mut self,
        prefix: &str,
        mut instances: Vec<Instance>,
        start: DateTime<Utc>,
        truth: &mut Vec<TruthLine>,
    ) -> Vec<DocumentLine> {
        instances.shuffle(&mut self.rng);
        let mut docs = Vec::new();
        let mut iter = instances.into_iter().peekable();
        let mut duplicates: Vec<SentenceLine> = Vec::new();
        let mut dup_truth: Vec<Vec<bool>> = Vec::new();
        while iter.peek().is_some() {
            let size = self.rng.random_range(1..=4);
            let doc_id = format!("{prefix}-d{:05}", docs.len());
            let mut sentences = Vec::new();
            for (s, inst) in iter.by_ref().take(size).enumerate() {
                let sent_id = format!("{doc_id}-s{s}");
                let mut mentions = Vec::with_capacity(inst.mentions.len());
                let mut zs = Vec::with_capacity(inst.mentions.len());
                for (k, &(a, b, p, z)) in inst.mentions.iter().enumerate() {
                    let id = format!("{sent_id}-m{k}");
                    truth.push(TruthLine { mention_id: id.clone(), z_true: z });
                    zs.push(z);
                    mentions.push(MentionLine {
                        id,
                        start: a,
                        end: b,
                        first: self.people[p].first.clone(),
                        last: self.people[p].last.clone(),
                    });
                }
                let line = SentenceLine {
                    sent_id,
                    tokens: inst.tokens,
                    mentions,
                };
                if self.rng.random_bool(self.config.duplicate_rate) {
                    duplicates.push(line.clone());
                    dup_truth.push(zs);
                }
                sentences.push(line);
            }
            let download_time = start + Duration::hours(docs.len() as i64);
            docs.push(DocumentLine {
                doc_id,
                download_time,
                sentences,
            });
        }
        // Syndicated copies arrive after every original.
        let n_original = docs.len() as i64;
        for (j, (mut line, zs)) in duplicates.into_iter().zip(dup_truth).enumerate() {
            let doc_id = format!("{prefix}-syn{j:05}");
            line.sent_id = format!("{doc_id}-s0");
            for (k, (m, z)) in line.mentions.iter_mut().zip(zs).enumerate() {
                m.id = format!("{}-m{k}", line.sent_id);
                truth.push(TruthLine {
                    mention_id: m.id.clone(),
                    z_true: z,
                });
            }
            docs.push(DocumentLine {
                doc_id,
                download_time: start + Duration::hours(n_original + j as i64),
                sentences: vec![line],
            });
        }
        docs
    }
}

fn date(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").expect("valid constant date")
}

/// Generates both splits, their gold KBs and the mention truth table.
pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let window: TestWindow = DEFAULT_TEST_WINDOW.parse()?;
    let train_start = date(TRAIN_START);
    let train_end = window.start - Duration::days(1);
    let mut g = Generator {
        config,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        people: Vec::new(),
        taken: BTreeSet::new(),
    };
    let (n_pos_train, n_pos_test) = config.positive_counts();

    let mut gold_train = Vec::new();
    let mut gold_test = Vec::new();
    let gold = |g: &mut Generator<'_>, person: usize, city: &str, d: NaiveDate| -> Result<GoldRecord> {
        let p = &g.people[person];
        Ok(GoldRecord {
            name: NameKey::new(&p.first, &p.last)?,
            location: city.to_owned(),
            incident_date: d,
            source_fields: serde_json::Value::Null,
        })
    };

    let split = |g: &mut Generator<'_>, n: usize, n_pos: usize| -> SplitPlan {
        let mut entities = Vec::with_capacity(n);
        let mut negatives = Vec::new();
        for i in 0..n {
            let person = g.person();
            let victim = i < n_pos;
            let city = g.city();
            if !victim {
                negatives.push(person);
            }
            entities.push((person, victim, city));
        }
        SplitPlan { entities, negatives }
    };

    let train_plan = split(&mut g, config.n_train_entities, n_pos_train);
    for &(person, victim, city) in &train_plan.entities {
        if victim {
            let d = g.date_in(train_start, train_end);
            gold_train.push(gold(&mut g, person, city, d)?);
        }
    }
    let mut test_plan = split(&mut g, config.n_test_entities, n_pos_test);
    for &(person, victim, city) in &test_plan.entities {
        if victim {
            let d = g.date_in(window.start, window.end);
            gold_test.push(gold(&mut g, person, city, d)?);
        }
    }
    for _ in 0..config.n_historical {
        let person = g.person();
        let city = g.city();
        let d = g.date_in(train_start, train_end);
        gold_train.push(gold(&mut g, person, city, d)?);
        test_plan.entities.push((person, true, city));
    }
    for _ in 0..config.missing_gold {
        let person = g.person();
        let city = g.city();
        let d = g.date_in(window.start, window.end);
        gold_test.push(gold(&mut g, person, city, d)?);
    }

    let mut truth = Vec::new();
    let train_instances = g.sentences(&train_plan);
    let test_instances = g.sentences(&test_plan);
    let train_time = Utc.from_utc_datetime(&train_start.and_hms_opt(6, 0, 0).expect("valid time"));
    let test_time = Utc.from_utc_datetime(&window.start.and_hms_opt(6, 0, 0).expect("valid time"));
    let train_docs = g.documents("train", train_instances, train_time, &mut truth);
    let test_docs = g.documents("test", test_instances, test_time, &mut truth);
    Ok(SynthCorpus {
        train_docs,
        test_docs,
        gold_train,
        gold_test,
        truth,
        window,
    })
}
