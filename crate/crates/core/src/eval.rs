//! Ranked-entity evaluation: historical exclusion, precision-recall curve,
//! trapezoidal AUPRC, maximum F1 and the data upper bound on recall.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{EntityTable, NameKey};
use crate::disjunction::EntityPrediction;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve<T> {
    /// `(recall, precision)`, starting at the `(0, 1)` anchor.
    pub points: Vec<(T, T)>,
    pub n_gold: usize,
    pub n_ranked: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<T> {
    pub auprc: T,
    pub max_f1: T,
    pub upper_bound_recall: T,
    pub n_excluded_historical: usize,
}

/// Drops entities flagged historical; returns the survivors and the count
/// removed.
pub fn exclude_historical<T: Clone>(
    predictions: &[EntityPrediction<T>],
    table: &EntityTable,
) -> (Vec<EntityPrediction<T>>, usize) {
    let historical = table.historical_names();
    let kept: Vec<_> = predictions
        .iter()
        .filter(|p| !historical.contains(&p.name))
        .cloned()
        .collect();
    let removed = predictions.len() - kept.len();
    (kept, removed)
}

/// Curve from `(score, is_gold)` pairs already sorted by descending score.
/// Equal scores form a single threshold step.
pub fn pr_curve_scored<T: Real>(scored: &[(T, bool)], n_gold: usize) -> Result<PrCurve<T>> {
    if n_gold == 0 {
        return Err(Error::Empty("gold set"));
    }
    let gold = T::from_usize_lossy(n_gold);
    let mut points = vec![(T::zero(), T::one())];
    let mut tp = 0usize;
    let mut k = 0;
    while k < scored.len() {
        let score = scored[k].0;
        while k < scored.len() && scored[k].0 == score {
            tp += usize::from(scored[k].1);
            k += 1;
        }
        let tp_t = T::from_usize_lossy(tp);
        points.push((tp_t / gold, tp_t / T::from_usize_lossy(k)));
    }
    Ok(PrCurve {
        points,
        n_gold,
        n_ranked: scored.len(),
    })
}

/// Curve for a ranking (in log-complement order) against a gold name set.
pub fn pr_curve<T: Real>(ranked: &[EntityPrediction<T>], gold: &BTreeSet<NameKey>) -> Result<PrCurve<T>> {
    let scored: Vec<(T, bool)> = ranked
        .iter()
        .map(|p| (p.log_complement, gold.contains(&p.name)))
        .collect();
    pr_curve_scored(&scored, gold.len())
}

/// Trapezoidal area under the curve and the maximum F1 over its points.
pub fn pr_metrics<T: Real>(curve: &PrCurve<T>) -> (T, T) {
    let two = T::lit(2.0);
    let auprc = curve
        .points
        .windows(2)
        .fold(T::zero(), |acc, w| acc + (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / two);
    let max_f1 = curve
        .points
        .iter()
        .map(|&(r, p)| if p + r > T::zero() { two * p * r / (p + r) } else { T::zero() })
        .fold(T::zero(), T::max);
    (auprc, max_f1)
}

/// Fraction of gold names that occur as corpus entities at all.
pub fn recall_upper_bound<T: Real>(gold: &BTreeSet<NameKey>, table: &EntityTable) -> Result<T> {
    if gold.is_empty() {
        return Err(Error::Empty("gold set"));
    }
    let present = gold.iter().filter(|g| table.entities.contains_key(*g)).count();
    Ok(T::from_usize_lossy(present) / T::from_usize_lossy(gold.len()))
}

/// Full evaluation of a ranking against the in-window gold names.
pub fn evaluate<T: Real>(
    predictions: &[EntityPrediction<T>],
    table: &EntityTable,
    gold: &BTreeSet<NameKey>,
) -> Result<(EvalReport<T>, PrCurve<T>)> {
    let (kept, n_excluded) = exclude_historical(predictions, table);
    let curve = pr_curve(&kept, gold)?;
    let (auprc, max_f1) = pr_metrics(&curve);
    let report = EvalReport {
        auprc,
        max_f1,
        upper_bound_recall: recall_upper_bound(gold, table)?,
        n_excluded_historical: n_excluded,
    };
    Ok((report, curve))
}

pub fn write_curve_csv<T: Real, W: Write>(out: &mut W, curve: &PrCurve<T>) -> Result<()> {
    writeln!(out, "recall,precision")?;
    for (r, p) in &curve.points {
        writeln!(out, "{r},{p}")?;
    }
    Ok(())
}
