//! Feature templates over symbolized mention sentences and signed feature
//! hashing into a fixed-dimension sparse vector.
//!
//! Rendering conventions:
//!
//! * every feature string is namespaced by its template, e.g. `N1|was_shot`;
//! * words are lowercased except the `TARGET`/`PERSON` symbols;
//! * n-gram tokens are joined with `_`, word/POS pairs with `/`;
//! * positions outside the sentence render as [`PAD`];
//! * dependency paths walk the tree as an undirected graph and mark each edge
//!   `→label→` when stepping from a head to its dependent and `←label←` when
//!   stepping from a dependent to its head.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Cursor;
use std::str::FromStr;

use crate::corpus::{Head, MentionRecord, Token, PERSON, TARGET};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DEFAULT_DIM: usize = 450_000;
pub const PAD: &str = "⊥";

const INDEX_SEED: u32 = 0;
const SIGN_SEED: u32 = 0x9e37_79b9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Template {
    D1,
    D2,
    D3,
    D4,
    N1,
    N2,
    N3,
    N4,
    N5,
}

impl Template {
    pub const ALL: [Template; 9] = [
        Template::D1,
        Template::D2,
        Template::D3,
        Template::D4,
        Template::N1,
        Template::N2,
        Template::N3,
        Template::N4,
        Template::N5,
    ];

    pub fn needs_syntax(self) -> bool {
        !matches!(self, Template::N1 | Template::N3)
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Template::ALL
            .into_iter()
            .find(|t| t.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown feature template {s:?}")))
    }
}

/// Non-empty set of enabled templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet(BTreeSet<Template>);

impl TemplateSet {
    pub fn new(templates: impl IntoIterator<Item = Template>) -> Result<Self> {
        let set: BTreeSet<Template> = templates.into_iter().collect();
        if set.is_empty() {
            return Err(Error::Config("feature template set is empty".into()));
        }
        Ok(TemplateSet(set))
    }

    pub fn all() -> Self {
        TemplateSet(Template::ALL.into_iter().collect())
    }

    pub fn ngrams() -> Self {
        TemplateSet([Template::N1, Template::N2, Template::N3, Template::N4, Template::N5].into())
    }

    pub fn dependencies() -> Self {
        TemplateSet([Template::D1, Template::D2, Template::D3, Template::D4].into())
    }

    pub fn contains(&self, t: Template) -> bool {
        self.0.contains(&t)
    }

    pub fn iter(&self) -> impl Iterator<Item = Template> + '_ {
        self.0.iter().copied()
    }

    pub fn is_subset(&self, other: &TemplateSet) -> bool {
        self.0.is_subset(&other.0)
    }
}

impl FromStr for TemplateSet {
    type Err = Error;

    /// Comma-separated template names, or `all`, `ngram`, `dep`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(TemplateSet::all()),
            "ngram" | "ngrams" => Ok(TemplateSet::ngrams()),
            "dep" | "deps" => Ok(TemplateSet::dependencies()),
            list => TemplateSet::new(
                list.split(',')
                    .filter(|p| !p.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<Vec<_>>>()?,
            ),
        }
    }
}

impl fmt::Display for TemplateSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.0.iter().map(Template::to_string).collect();
        f.write_str(&names.join(","))
    }
}

/// Features of one mention plus whether any enabled template was skipped for
/// lack of syntactic annotation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Extraction {
    pub features: Vec<String>,
    pub missing_syntax: bool,
}

fn word(t: &Token) -> String {
    if t.text == TARGET || t.text == PERSON {
        t.text.clone()
    } else {
        t.text.to_lowercase()
    }
}

fn word_pos(t: &Token) -> String {
    format!("{}/{}", word(t), t.pos.as_deref().unwrap_or(PAD))
}

fn distance_bucket(d: usize) -> String {
    if d >= 5 {
        "5+".to_string()
    } else {
        d.to_string()
    }
}

/// Extracts the feature-string multiset of a mention.
pub fn extract_features(mention: &MentionRecord, templates: &TemplateSet) -> Extraction {
    extract_from_tokens(&mention.symbolized_tokens, mention.target, templates)
}

pub fn extract_from_tokens(tokens: &[Token], target: usize, templates: &TemplateSet) -> Extraction {
    let syntax = !tokens.is_empty() && tokens.iter().all(Token::has_syntax);
    let mut out = Extraction::default();
    let words: Vec<String> = tokens.iter().map(word).collect();
    let tagged: Vec<String> = tokens.iter().map(word_pos).collect();

    for template in templates.iter() {
        if template.needs_syntax() && !syntax {
            out.missing_syntax = true;
            continue;
        }
        let f = &mut out.features;
        match template {
            Template::N1 => ngrams(&words, |s, _, _| f.push(format!("N1|{s}"))),
            Template::N2 => ngrams(&tagged, |s, _, _| f.push(format!("N2|{s}"))),
            Template::N3 => ngrams(&words, |s, start, end| {
                if end <= target {
                    f.push(format!("N3|L{}|{s}", distance_bucket(target - (end - 1))));
                } else if start > target {
                    f.push(format!("N3|R{}|{s}", distance_bucket(start - target)));
                }
            }),
            Template::N4 => {
                let window: Vec<&str> = window_positions(tokens.len(), target)
                    .map(|p| p.map_or(PAD, |i| tokens[i].pos.as_deref().unwrap_or(PAD)))
                    .collect();
                f.push(format!("N4|{}", window.join("_")));
            }
            Template::N5 => {
                for (offset, p) in (-2i64..=2).zip(window_positions(tokens.len(), target)) {
                    let wp = p.map_or_else(|| format!("{PAD}/{PAD}"), |i| tagged[i].clone());
                    f.push(format!("N5|{offset}|{wp}"));
                }
            }
            Template::D1 | Template::D2 | Template::D3 => {
                let graph = DepGraph::new(tokens);
                for path in graph.simple_paths(3) {
                    if path.contains(&target) {
                        f.push(format!("{template}|{}", graph.render(&path, template)));
                    }
                }
            }
            Template::D4 => {
                let graph = DepGraph::new(tokens);
                for path in graph.simple_paths(2) {
                    f.push(format!("D4|{}", graph.render(&path, template)));
                }
            }
        }
    }
    out
}

/// Calls `emit(joined, start, end)` for every 1-, 2- and 3-gram.
fn ngrams<F: FnMut(&str, usize, usize)>(items: &[String], mut emit: F) {
    for n in 1..=3 {
        for start in 0..items.len().saturating_sub(n - 1) {
            let end = start + n;
            emit(&items[start..end].join("_"), start, end);
        }
    }
}

fn window_positions(len: usize, center: usize) -> impl Iterator<Item = Option<usize>> {
    (-2i64..=2).map(move |o| {
        let p = center as i64 + o;
        (p >= 0 && (p as usize) < len).then_some(p as usize)
    })
}

/// Undirected view of a dependency tree.
struct DepGraph<'a> {
    tokens: &'a [Token],
    adjacent: Vec<Vec<usize>>,
}

impl<'a> DepGraph<'a> {
    fn new(tokens: &'a [Token]) -> Self {
        let mut adjacent = vec![Vec::new(); tokens.len()];
        for (i, t) in tokens.iter().enumerate() {
            if let Some(Head::Index(h)) = t.head {
                if h < tokens.len() && h != i {
                    adjacent[i].push(h);
                    adjacent[h].push(i);
                }
            }
        }
        for a in &mut adjacent {
            a.sort_unstable();
            a.dedup();
        }
        DepGraph { tokens, adjacent }
    }

    /// Every simple path with exactly `edges` edges, each undirected path
    /// reported once (first node index below last node index).
    fn simple_paths(&self, edges: usize) -> Vec<Vec<usize>> {
        fn walk(g: &DepGraph, path: &mut Vec<usize>, edges: usize, out: &mut Vec<Vec<usize>>) {
            if path.len() == edges + 1 {
                if path[0] < path[edges] {
                    out.push(path.clone());
                }
                return;
            }
            let last = *path.last().unwrap();
            for &next in &g.adjacent[last] {
                if !path.contains(&next) {
                    path.push(next);
                    walk(g, path, edges, out);
                    path.pop();
                }
            }
        }
        let mut out = Vec::new();
        for start in 0..self.tokens.len() {
            let mut path = vec![start];
            walk(self, &mut path, edges, &mut out);
        }
        out
    }

    fn node(&self, i: usize, template: Template) -> String {
        let t = &self.tokens[i];
        match template {
            Template::D2 => word(t),
            _ => word_pos(t),
        }
    }

    fn edge(&self, from: usize, to: usize, template: Template) -> String {
        let with_label = !matches!(template, Template::D3);
        let (dependent, down) = if self.tokens[to].head == Some(Head::Index(from)) {
            (to, true)
        } else {
            (from, false)
        };
        let arrow = if down { "→" } else { "←" };
        if with_label {
            let label = self.tokens[dependent].dep.as_deref().unwrap_or(PAD);
            format!("{arrow}{label}{arrow}")
        } else {
            arrow.to_string()
        }
    }

    fn render_dir(&self, path: &[usize], template: Template) -> String {
        let mut s = self.node(path[0], template);
        for w in path.windows(2) {
            s.push_str(&self.edge(w[0], w[1], template));
            s.push_str(&self.node(w[1], template));
        }
        s
    }

    /// Renders in the direction whose first endpoint sorts lower.
    fn render(&self, path: &[usize], template: Template) -> String {
        let forward = self.render_dir(path, template);
        let rev: Vec<usize> = path.iter().rev().copied().collect();
        let backward = self.render_dir(&rev, template);
        let first_f = self.node(path[0], template);
        let first_b = self.node(rev[0], template);
        match first_f.cmp(&first_b) {
            std::cmp::Ordering::Less => forward,
            std::cmp::Ordering::Greater => backward,
            std::cmp::Ordering::Equal => forward.min(backward),
        }
    }
}

/// Sparse vector with sorted, distinct, non-zero entries.
#[derive(Debug, Clone, PartialEq)]
pub struct HashedVector<T> {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<T>,
}

impl<T: Real> HashedVector<T> {
    pub fn zeros(dim: usize) -> Self {
        HashedVector {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from possibly repeated `(index, value)` pairs, summing repeats
    /// and dropping exact zeros.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (usize, T)>) -> Result<Self> {
        let mut acc: BTreeMap<usize, T> = BTreeMap::new();
        for (i, v) in pairs {
            if i >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: i + 1,
                });
            }
            if !v.is_finite() {
                return Err(Error::Validation(format!("non-finite feature value at index {i}")));
            }
            let slot = acc.entry(i).or_insert_with(T::zero);
            *slot = *slot + v;
        }
        let (indices, values) = acc
            .into_iter()
            .filter(|(_, v)| !v.is_zero())
            .map(|(i, v)| (i as u32, v))
            .unzip();
        Ok(HashedVector { dim, indices, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }

    pub fn get(&self, index: usize) -> T {
        match self.indices.binary_search(&(index as u32)) {
            Ok(p) => self.values[p],
            Err(_) => T::zero(),
        }
    }

    pub fn dot(&self, dense: &[T]) -> T {
        self.iter().fold(T::zero(), |acc, (i, v)| acc + dense[i] * v)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        HashedVector::from_pairs(self.dim, self.iter().chain(other.iter()))
    }
}

fn murmur(s: &str, seed: u32) -> u32 {
    murmur3::murmur3_32(&mut Cursor::new(s.as_bytes()), seed).expect("in-memory read")
}

/// Bucket of a feature string.
pub fn feature_index(s: &str, dim: usize) -> usize {
    (murmur(s, INDEX_SEED) as u64 % dim as u64) as usize
}

/// Sign of a feature string, from an independent seed.
pub fn feature_sign(s: &str) -> i8 {
    if murmur(s, SIGN_SEED) & 1 == 0 {
        1
    } else {
        -1
    }
}

/// Signed hashing trick: each string adds `sign(s)` at `index(s)`.
pub fn hash_features<T: Real, S: AsRef<str>>(strings: &[S], dim: usize) -> Result<HashedVector<T>> {
    if dim == 0 {
        return Err(Error::Config("hash dimension must be positive".into()));
    }
    if dim > u32::MAX as usize {
        return Err(Error::Config(format!("hash dimension {dim} exceeds u32 range")));
    }
    HashedVector::from_pairs(
        dim,
        strings.iter().map(|s| {
            let s = s.as_ref();
            (feature_index(s, dim), if feature_sign(s) > 0 { T::one() } else { -T::one() })
        }),
    )
}

/// Template set plus hashing dimension.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub templates: TemplateSet,
    pub dim: usize,
}

impl Featurizer {
    pub fn new(templates: TemplateSet, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("hash dimension must be positive".into()));
        }
        Ok(Featurizer { templates, dim })
    }

    /// Vectors for each mention, and the number of mentions that lacked the
    /// syntactic annotations some enabled template needed.
    pub fn vectorize<T: Real>(&self, mentions: &[MentionRecord]) -> Result<(Vec<HashedVector<T>>, usize)> {
        let mut missing = 0;
        let mut out = Vec::with_capacity(mentions.len());
        for m in mentions {
            let ex = extract_features(m, &self.templates);
            missing += usize::from(ex.missing_syntax);
            out.push(hash_features(&ex.features, self.dim)?);
        }
        Ok((out, missing))
    }
}
