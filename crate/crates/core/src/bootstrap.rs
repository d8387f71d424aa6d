//! Bootstrap standard errors and paired significance tests over test-set
//! ranking metrics.
//!
//! Replicate `b` of a run with seed `s` draws from a ChaCha8 generator seeded
//! with `s` on stream `b`, so replicates are independent of evaluation order
//! and of the number of worker threads, and every model evaluated with the
//! same `(s, b)` sees the same resampled test set.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::NameKey;
use crate::error::{Error, Result};
use crate::eval::{pr_curve_scored, pr_metrics};
use crate::scalar::{softplus, Real};

pub const DEFAULT_REPLICATES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleScheme {
    Entities,
    Documents,
    DocumentsDedup,
}

impl FromStr for ResampleScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entities" | "1" => Ok(ResampleScheme::Entities),
            "documents" | "2" => Ok(ResampleScheme::Documents),
            "documents-dedup" | "3" => Ok(ResampleScheme::DocumentsDedup),
            other => Err(Error::Config(format!("unknown resampling scheme {other:?}"))),
        }
    }
}

impl fmt::Display for ResampleScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResampleScheme::Entities => "entities",
            ResampleScheme::Documents => "documents",
            ResampleScheme::DocumentsDedup => "documents-dedup",
        })
    }
}

/// Test mention metadata needed for resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct TestMention {
    pub name: NameKey,
    pub doc_id: String,
    pub sent_id: String,
    /// Sentence text used to detect literal duplicates.
    pub sentence_key: String,
    pub download_time: DateTime<Utc>,
}

/// Test set structure shared by every model being compared. Historical
/// entities are expected to be removed beforehand.
#[derive(Debug, Clone)]
pub struct TestLayout {
    pub mentions: Vec<TestMention>,
    pub gold: BTreeSet<NameKey>,
    entities: Vec<(NameKey, Vec<usize>)>,
    documents: Vec<Vec<usize>>,
    missing_gold: usize,
}

impl TestLayout {
    pub fn new(mentions: Vec<TestMention>, gold: BTreeSet<NameKey>) -> Result<Self> {
        if mentions.is_empty() {
            return Err(Error::Empty("test corpus"));
        }
        if gold.is_empty() {
            return Err(Error::Empty("gold set"));
        }
        let mut by_entity: BTreeMap<NameKey, Vec<usize>> = BTreeMap::new();
        let mut by_doc: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, m) in mentions.iter().enumerate() {
            by_entity.entry(m.name.clone()).or_default().push(i);
            by_doc.entry(m.doc_id.as_str()).or_default().push(i);
        }
        let documents = by_doc.into_values().collect();
        let missing_gold = gold.iter().filter(|g| !by_entity.contains_key(*g)).count();
        Ok(TestLayout {
            entities: by_entity.into_iter().collect(),
            documents,
            missing_gold,
            mentions,
            gold,
        })
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_documents(&self) -> usize {
        self.documents.len()
    }

    /// The unresampled data as a replicate.
    pub fn original(&self) -> Replicate {
        Replicate {
            instances: self.entities.clone(),
            n_gold: self.gold.len(),
            documents: (0..self.documents.len()).collect(),
        }
    }

    fn group(&self, mention_ids: impl IntoIterator<Item = usize>) -> Vec<(NameKey, Vec<usize>)> {
        let mut groups: BTreeMap<&NameKey, Vec<usize>> = BTreeMap::new();
        for i in mention_ids {
            groups.entry(&self.mentions[i].name).or_default().push(i);
        }
        groups.into_iter().map(|(k, v)| (k.clone(), v)).collect()
    }

    /// Removes literal duplicate sentences, keeping the earliest download.
    fn dedup_sentences(&self, mention_ids: Vec<usize>) -> Vec<usize> {
        let mut best: HashMap<&str, (DateTime<Utc>, &str, &str)> = HashMap::new();
        for &i in &mention_ids {
            let m = &self.mentions[i];
            let cand = (m.download_time, m.doc_id.as_str(), m.sent_id.as_str());
            best.entry(m.sentence_key.as_str())
                .and_modify(|b| {
                    if cand < *b {
                        *b = cand;
                    }
                })
                .or_insert(cand);
        }
        mention_ids
            .into_iter()
            .filter(|&i| {
                let m = &self.mentions[i];
                let b = best[m.sentence_key.as_str()];
                (b.1, b.2) == (m.doc_id.as_str(), m.sent_id.as_str())
            })
            .collect()
    }
}

/// One resampled test set: entity instances with mention indices into the
/// layout (repeats allowed), plus the recall denominator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replicate {
    pub instances: Vec<(NameKey, Vec<usize>)>,
    pub n_gold: usize,
    /// Drawn document indices (entity scheme: all documents).
    pub documents: Vec<usize>,
}

pub fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Replicate `index` of the stream defined by `seed`.
pub fn resample_indexed(layout: &TestLayout, scheme: ResampleScheme, seed: u64, index: usize) -> Replicate {
    let mut rng = replicate_rng(seed, index);
    match scheme {
        ResampleScheme::Entities => {
            let n = layout.entities.len();
            let instances: Vec<(NameKey, Vec<usize>)> = (0..n)
                .map(|_| layout.entities[rng.random_range(0..n)].clone())
                .collect();
            let drawn_gold = instances.iter().filter(|(k, _)| layout.gold.contains(k)).count();
            Replicate {
                instances,
                n_gold: layout.missing_gold + drawn_gold,
                documents: (0..layout.documents.len()).collect(),
            }
        }
        ResampleScheme::Documents | ResampleScheme::DocumentsDedup => {
            let n = layout.documents.len();
            let mut docs: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mentions: Vec<usize> = if scheme == ResampleScheme::DocumentsDedup {
                docs.sort_unstable();
                docs.dedup();
                let ids = docs.iter().flat_map(|&d| layout.documents[d].iter().copied()).collect();
                layout.dedup_sentences(ids)
            } else {
                docs.iter().flat_map(|&d| layout.documents[d].iter().copied()).collect()
            };
            Replicate {
                instances: layout.group(mentions),
                n_gold: layout.gold.len(),
                documents: docs,
            }
        }
    }
}

/// First replicate of the stream for `seed`.
pub fn resample(layout: &TestLayout, scheme: ResampleScheme, seed: u64) -> Replicate {
    resample_indexed(layout, scheme, seed, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Auprc,
    MaxF1,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auprc" => Ok(Metric::Auprc),
            "f1" | "max-f1" => Ok(Metric::MaxF1),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

/// Scores a model on a replicate. `logits` holds one mention logit per
/// layout mention; entities are ranked by `Σ softplus(logit)`, the
/// log-complement of the noisy-or.
pub fn replicate_metric<T: Real>(
    layout: &TestLayout,
    replicate: &Replicate,
    logits: &[T],
    metric: Metric,
) -> Result<T> {
    if logits.len() != layout.mentions.len() {
        return Err(Error::LengthMismatch {
            left: logits.len(),
            right: layout.mentions.len(),
        });
    }
    let mut scored: Vec<(T, bool, &NameKey)> = replicate
        .instances
        .iter()
        .map(|(name, idx)| {
            let score = idx.iter().fold(T::zero(), |a, &i| a + softplus(logits[i]));
            (score, layout.gold.contains(name), name)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.2.cmp(b.2))
    });
    let flat: Vec<(T, bool)> = scored.iter().map(|&(s, g, _)| (s, g)).collect();
    let curve = pr_curve_scored(&flat, replicate.n_gold.max(1))?;
    let (auprc, f1) = pr_metrics(&curve);
    Ok(match metric {
        Metric::Auprc => auprc,
        Metric::MaxF1 => f1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult<T> {
    pub b: usize,
    pub point: T,
    pub se: T,
    pub replicates: Option<Vec<T>>,
    pub seed: u64,
}

/// Sample standard deviation (denominator `n - 1`).
pub fn sample_sd<T: Real>(values: &[T]) -> T {
    let n = values.len();
    if n < 2 {
        return T::zero();
    }
    let mean = values.iter().copied().sum::<T>() / T::from_usize_lossy(n);
    let ss = values.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean));
    (ss / T::from_usize_lossy(n - 1)).sqrt()
}

/// Evaluates `eval_fn` on `b` replicates (in parallel, results in replicate
/// order) and reports the point estimate and bootstrap standard error.
pub fn metric_se<T, F>(
    eval_fn: F,
    layout: &TestLayout,
    scheme: ResampleScheme,
    b: usize,
    seed: u64,
    keep_replicates: bool,
) -> Result<BootstrapResult<T>>
where
    T: Real,
    F: Fn(&Replicate) -> Result<T> + Sync,
{
    if b < 2 {
        return Err(Error::Config(format!("bootstrap needs b >= 2, got {b}")));
    }
    let point = eval_fn(&layout.original())?;
    let values = (0..b)
        .into_par_iter()
        .map(|index| {
            let rep = resample_indexed(layout, scheme, seed, index);
            eval_fn(&rep).map_err(|e| Error::Replicate {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(BootstrapResult {
        b,
        point,
        se: sample_sd(&values),
        replicates: keep_replicates.then_some(values),
        seed,
    })
}

/// Metric of each model on each replicate; row `m` holds model `m`'s values.
pub fn paired_replicates<T: Real>(
    layout: &TestLayout,
    models: &[&[T]],
    metric: Metric,
    scheme: ResampleScheme,
    b: usize,
    seed: u64,
) -> Result<Vec<Vec<T>>> {
    let per_rep = (0..b)
        .into_par_iter()
        .map(|index| {
            let rep = resample_indexed(layout, scheme, seed, index);
            models
                .iter()
                .map(|logits| replicate_metric(layout, &rep, logits, metric))
                .collect::<Result<Vec<T>>>()
                .map_err(|e| Error::Replicate {
                    index,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<Vec<T>>>>()?;
    Ok((0..models.len())
        .map(|m| per_rep.iter().map(|row| row[m]).collect())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseP {
    /// Fraction of replicates with `metric_j - metric_i <= 0`.
    pub p_ij: f64,
    /// Fraction of replicates with `metric_j - metric_i > 0`.
    pub p_ji: f64,
    pub p_one_sided_min: f64,
    pub p_two_sided: f64,
}

/// One-sided bootstrap p-values for `T = metric_j - metric_i`. Ties
/// (`T = 0`) count toward `p_ij`, so identical models give `p_ij = 1`,
/// `p_ji = 0` and a minimum of 0.
pub fn pairwise_pvalue<T: Real>(metric_i: &[T], metric_j: &[T]) -> Result<PairwiseP> {
    if metric_i.len() != metric_j.len() {
        return Err(Error::LengthMismatch {
            left: metric_i.len(),
            right: metric_j.len(),
        });
    }
    if metric_i.is_empty() {
        return Err(Error::Empty("bootstrap replicates"));
    }
    let b = metric_i.len() as f64;
    let le = metric_i
        .iter()
        .zip(metric_j)
        .filter(|(&mi, &mj)| mj - mi <= T::zero())
        .count() as f64;
    let p_ij = le / b;
    let p_ji = (b - le) / b;
    let p_min = p_ij.min(p_ji);
    Ok(PairwiseP {
        p_ij,
        p_ji,
        p_one_sided_min: p_min,
        p_two_sided: (2.0 * p_min).min(1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub model_i: String,
    pub model_j: String,
    pub p_one_sided_min: f64,
    pub p_two_sided: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub point: f64,
    pub se: f64,
}

/// Serialized bootstrap report. `point`/`se` refer to the first model;
/// `models` lists every model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub scheme: ResampleScheme,
    pub metric: Metric,
    pub b: usize,
    pub seed: u64,
    pub point: f64,
    pub se: f64,
    pub models: Vec<ModelReport>,
    pub pairs: Vec<PairReport>,
}

/// Runs SE estimation and all pairwise tests over one shared replicate stream.
pub fn bootstrap_report<T: Real>(
    layout: &TestLayout,
    models: &[(String, Vec<T>)],
    metric: Metric,
    scheme: ResampleScheme,
    b: usize,
    seed: u64,
) -> Result<BootstrapReport> {
    if models.is_empty() {
        return Err(Error::Empty("models"));
    }
    if b < 2 {
        return Err(Error::Config(format!("bootstrap needs b >= 2, got {b}")));
    }
    let logits: Vec<&[T]> = models.iter().map(|(_, l)| l.as_slice()).collect();
    let reps = paired_replicates(layout, &logits, metric, scheme, b, seed)?;
    let original = layout.original();
    let mut model_reports = Vec::with_capacity(models.len());
    for ((name, l), values) in models.iter().zip(&reps) {
        model_reports.push(ModelReport {
            model: name.clone(),
            point: replicate_metric(layout, &original, l, metric)?.to_f64_lossy(),
            se: sample_sd(values).to_f64_lossy(),
        });
    }
    let mut pairs = Vec::new();
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            let p = pairwise_pvalue(&reps[i], &reps[j])?;
            pairs.push(PairReport {
                model_i: models[i].0.clone(),
                model_j: models[j].0.clone(),
                p_one_sided_min: p.p_one_sided_min,
                p_two_sided: p.p_two_sided,
            });
        }
    }
    Ok(BootstrapReport {
        scheme,
        metric,
        b,
        seed,
        point: model_reports[0].point,
        se: model_reports[0].se,
        models: model_reports,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn mention(name: usize, doc: usize, text: &str, hour: u32) -> TestMention {
        TestMention {
            name: NameKey::new(&format!("e{name}"), "x").unwrap(),
            doc_id: format!("d{doc}"),
            sent_id: format!("s{doc}-{text}"),
            sentence_key: text.to_string(),
            download_time: Utc.with_ymd_and_hms(2016, 10, 1, hour, 0, 0).unwrap(),
        }
    }

    fn layout() -> TestLayout {
        let mentions = vec![
            mention(0, 0, "a", 1),
            mention(1, 0, "b", 1),
            mention(0, 1, "a", 2),
            mention(2, 2, "c", 3),
            mention(3, 3, "d", 4),
        ];
        let gold = [NameKey::new("e0", "x").unwrap(), NameKey::new("e9", "x").unwrap()].into();
        TestLayout::new(mentions, gold).unwrap()
    }

    #[test]
    fn seeded_resampling_is_deterministic() {
        let l = layout();
        for scheme in [ResampleScheme::Entities, ResampleScheme::Documents, ResampleScheme::DocumentsDedup] {
            assert_eq!(resample(&l, scheme, 7), resample(&l, scheme, 7));
        }
    }

    #[test]
    fn single_document_documents_scheme() {
        let l = TestLayout::new(
            vec![mention(0, 0, "a", 1), mention(1, 0, "b", 1)],
            [NameKey::new("e0", "x").unwrap()].into(),
        )
        .unwrap();
        let r = resample(&l, ResampleScheme::Documents, 3);
        assert_eq!(r, l.original());
    }

    #[test]
    fn dedup_scheme_has_unique_documents_and_sentences() {
        let l = layout();
        for seed in 0..50 {
            let r = resample(&l, ResampleScheme::DocumentsDedup, seed);
            let set: BTreeSet<_> = r.documents.iter().collect();
            assert_eq!(set.len(), r.documents.len());
            let mut keys = BTreeSet::new();
            for (_, idx) in &r.instances {
                for &i in idx {
                    // no literal duplicate sentence survives within one replicate
                    assert!(keys.insert(l.mentions[i].sentence_key.clone()));
                }
            }
        }
    }

    #[test]
    fn dedup_prefers_earliest_copy() {
        let l = layout();
        let ids = l.dedup_sentences(vec![0, 1, 2]);
        assert_eq!(ids, vec![0, 1]);
    }

    #[test]
    fn entity_scheme_counts_gold() {
        let l = layout();
        for seed in 0..20 {
            let r = resample(&l, ResampleScheme::Entities, seed);
            assert_eq!(r.instances.len(), l.n_entities());
            let drawn = r.instances.iter().filter(|(k, _)| l.gold.contains(k)).count();
            assert_eq!(r.n_gold, 1 + drawn);
        }
    }

    #[test]
    fn constant_metric_has_zero_se() {
        let l = layout();
        let r = metric_se(|_| Ok(0.5f64), &l, ResampleScheme::Entities, 100, 1, false).unwrap();
        assert_eq!(r.se, 0.0);
        assert_eq!(r.point, 0.5);
        assert!(metric_se(|_| Ok(0.5f64), &l, ResampleScheme::Entities, 1, 1, false).is_err());
    }

    #[test]
    fn replicate_failure_reports_index() {
        let l = layout();
        let original = l.original();
        let err = metric_se(
            |r: &Replicate| {
                if r.instances != original.instances {
                    Err(Error::Empty("forced"))
                } else {
                    Ok(0.0f64)
                }
            },
            &l,
            ResampleScheme::Entities,
            10,
            3,
            false,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Replicate { .. }));
    }

    #[test]
    fn pvalue_cases() {
        let better = pairwise_pvalue(&[0.1, 0.2, 0.3], &[0.2, 0.3, 0.4]).unwrap();
        assert_eq!((better.p_ij, better.p_one_sided_min), (0.0, 0.0));
        let same = pairwise_pvalue(&[0.1, 0.2], &[0.1, 0.2]).unwrap();
        assert_eq!((same.p_ij, same.p_ji, same.p_one_sided_min), (1.0, 0.0, 0.0));
        let mixed = pairwise_pvalue(&[0.1, 0.5, 0.3, 0.2], &[0.2, 0.4, 0.3, 0.1]).unwrap();
        assert_eq!((mixed.p_ij, mixed.p_ji, mixed.p_two_sided), (0.75, 0.25, 0.5));
        assert!(pairwise_pvalue(&[0.1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn scheme_parse() {
        assert_eq!("documents-dedup".parse::<ResampleScheme>().unwrap(), ResampleScheme::DocumentsDedup);
        assert!("bogus".parse::<ResampleScheme>().is_err());
    }
}
