//! Entity-level aggregation of mention probabilities, exact posteriors of the
//! latent disjunction, and the EM training driver.
//!
//! An entity is positive iff at least one of its mentions is. With
//! independent mention probabilities `p_i` the entity marginal is the
//! noisy-or `1 - Π(1 - p_i)`, and given a positive entity each mention's
//! posterior is `p_i / noisy_or`. Rankings use `-Σ log(1 - p_i)`, which keeps
//! resolution where the noisy-or itself rounds to 1.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::{
    prob_from_logit, train_weighted, train_weighted_from, MentionModel, TrainConfig, WeightedExample,
};
use crate::corpus::NameKey;
use crate::error::{Error, Result};
use crate::features::HashedVector;
use crate::scalar::{softplus, Real};

/// Value substituted for `log 0` inside [`elbo`].
pub const LOG_ZERO_SENTINEL: f64 = -1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    NoisyOr,
    Max,
    Mean,
    /// Not a probability; only meaningful for ranking.
    Sum,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "noisy-or" | "noisyor" => Ok(Strategy::NoisyOr),
            "max" => Ok(Strategy::Max),
            "mean" => Ok(Strategy::Mean),
            "sum" => Ok(Strategy::Sum),
            other => Err(Error::Config(format!("unknown aggregation strategy {other:?}"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::NoisyOr => "noisy-or",
            Strategy::Max => "max",
            Strategy::Mean => "mean",
            Strategy::Sum => "sum",
        })
    }
}

fn check_probs<T: Real>(probs: &[T]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Empty("aggregate needs at least one probability"));
    }
    if let Some(p) = probs.iter().find(|p| !(**p >= T::zero() && **p <= T::one())) {
        return Err(Error::Validation(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// `Σ log(1 - p_i)`, the log probability that every disjunct is false.
fn log_all_false<T: Real>(probs: &[T]) -> T {
    probs.iter().fold(T::zero(), |acc, &p| acc + (-p).ln_1p())
}

/// `1 - Π(1 - p_i)`.
pub fn noisy_or<T: Real>(probs: &[T]) -> T {
    -log_all_false(probs).exp_m1()
}

pub fn aggregate<T: Real>(probs: &[T], strategy: Strategy) -> Result<T> {
    check_probs(probs)?;
    Ok(match strategy {
        Strategy::NoisyOr => noisy_or(probs),
        Strategy::Max => probs.iter().copied().fold(T::zero(), T::max),
        Strategy::Mean => probs.iter().copied().sum::<T>() / T::from_usize_lossy(probs.len()),
        Strategy::Sum => probs.iter().copied().sum(),
    })
}

/// `-Σ log(1 - p_i)`; `+∞` when some `p_i == 1`.
pub fn log_complement_score<T: Real>(probs: &[T]) -> T {
    -log_all_false(probs)
}

/// Posterior `q(z_i = 1)` for the mentions of one entity.
pub fn e_step<T: Real>(y: bool, probs: &[T]) -> Result<Vec<T>> {
    if !y {
        return Ok(vec![T::zero(); probs.len()]);
    }
    check_probs(probs)?;
    let denom = noisy_or(probs);
    if !(denom > T::zero()) {
        return Err(Error::Contradiction);
    }
    Ok(probs.iter().map(|&p| (p / denom).min(T::one())).collect())
}

/// Same posterior computed from mention logits.
pub fn e_step_logits<T: Real>(y: bool, logits: &[T]) -> Result<Vec<T>> {
    if !y {
        return Ok(vec![T::zero(); logits.len()]);
    }
    if logits.is_empty() {
        return Err(Error::Empty("positive entity without mentions"));
    }
    let log_denom = log_noisy_or_logits(logits);
    if !log_denom.is_finite() {
        return Err(Error::Contradiction);
    }
    Ok(logits
        .iter()
        .map(|&z| (-softplus(-z) - log_denom).exp().min(T::one()))
        .collect())
}

/// `log(1 - Π σ(-z_i))`.
fn log_noisy_or_logits<T: Real>(logits: &[T]) -> T {
    let log_all_false = logits.iter().fold(T::zero(), |acc, &z| acc - softplus(z));
    (-log_all_false.exp_m1()).ln()
}

/// Log marginal likelihood `log P(y_e | x)` of one entity from its mention
/// logits. This equals the exact evidence lower bound at the exact posterior.
pub fn entity_log_likelihood<T: Real>(y: bool, logits: &[T]) -> T {
    if y {
        log_noisy_or_logits(logits)
    } else {
        logits.iter().fold(T::zero(), |acc, &z| acc - softplus(z))
    }
}

fn clamped_ln<T: Real>(x: T) -> T {
    if x > T::zero() {
        x.ln()
    } else {
        T::lit(LOG_ZERO_SENTINEL)
    }
}

fn binary_entropy<T: Real>(q: T) -> T {
    let term = |a: T| if a > T::zero() { -a * a.ln() } else { T::zero() };
    term(q) + term(T::one() - q)
}

/// Factored evidence lower bound
/// `Σ_i [q_i log p_i + (1 - q_i) log(1 - p_i)] + Σ_i H(q_i)`.
///
/// `labels[i]` is the label of mention `i`'s entity; a positive posterior on
/// a mention of a negative entity is rejected.
pub fn elbo<T: Real>(posterior: &[T], probs: &[T], labels: &[bool]) -> Result<T> {
    if posterior.len() != probs.len() {
        return Err(Error::LengthMismatch {
            left: posterior.len(),
            right: probs.len(),
        });
    }
    if labels.len() != probs.len() {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: probs.len(),
        });
    }
    let mut total = T::zero();
    for ((&q, &p), &y) in posterior.iter().zip(probs).zip(labels) {
        if !y && q != T::zero() {
            return Err(Error::Validation("posterior of a negative entity must be clamped to 0".into()));
        }
        let mut term = binary_entropy(q);
        if q > T::zero() {
            term = term + q * clamped_ln(p);
        }
        if q < T::one() {
            term = term + (T::one() - q) * clamped_ln(T::one() - p);
        }
        total = total + term;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityPrediction<T> {
    pub name: NameKey,
    pub prob: T,
    pub log_complement: T,
    pub n_mentions: usize,
}

/// Descending log-complement, then ascending name.
pub fn ranking_order<T: Real>(a: &EntityPrediction<T>, b: &EntityPrediction<T>) -> Ordering {
    b.log_complement
        .partial_cmp(&a.log_complement)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.name.cmp(&b.name))
}

pub fn sort_predictions<T: Real>(preds: &mut [EntityPrediction<T>]) {
    preds.sort_by(ranking_order);
}

/// Ranks entities from their mention logits.
pub fn rank_from_logits<T: Real>(groups: BTreeMap<NameKey, Vec<T>>) -> Vec<EntityPrediction<T>> {
    let mut preds: Vec<_> = groups
        .into_iter()
        .map(|(name, logits)| {
            let log_complement = logits.iter().fold(T::zero(), |acc, &z| acc + softplus(z));
            EntityPrediction {
                name,
                prob: -(-log_complement).exp_m1(),
                log_complement,
                n_mentions: logits.len(),
            }
        })
        .collect();
    sort_predictions(&mut preds);
    preds
}

/// Ranks entities from mention probabilities.
pub fn rank_from_probs<T: Real>(groups: BTreeMap<NameKey, Vec<T>>) -> Result<Vec<EntityPrediction<T>>> {
    let mut preds = Vec::with_capacity(groups.len());
    for (name, probs) in groups {
        check_probs(&probs)?;
        preds.push(EntityPrediction {
            name,
            prob: noisy_or(&probs),
            log_complement: log_complement_score(&probs),
            n_mentions: probs.len(),
        });
    }
    sort_predictions(&mut preds);
    Ok(preds)
}

/// Scores every entity: mention logits are grouped by name and aggregated.
pub fn predict_entities<T: Real>(
    model: &MentionModel<T>,
    names: &[&NameKey],
    vectors: &[HashedVector<T>],
) -> Result<Vec<EntityPrediction<T>>> {
    if names.len() != vectors.len() {
        return Err(Error::LengthMismatch {
            left: names.len(),
            right: vectors.len(),
        });
    }
    let mut groups: BTreeMap<NameKey, Vec<T>> = BTreeMap::new();
    for (name, x) in names.iter().zip(vectors) {
        groups.entry((*name).clone()).or_default().push(model.logit(x)?);
    }
    Ok(rank_from_logits(groups))
}

/// Predictions using an alternative aggregation; ordering by the aggregated
/// value (ties by name). `log_complement` is still reported.
pub fn predict_entities_with<T: Real>(
    model: &MentionModel<T>,
    names: &[&NameKey],
    vectors: &[HashedVector<T>],
    strategy: Strategy,
) -> Result<Vec<EntityPrediction<T>>> {
    if strategy == Strategy::NoisyOr {
        return predict_entities(model, names, vectors);
    }
    let mut groups: BTreeMap<NameKey, Vec<T>> = BTreeMap::new();
    for (name, x) in names.iter().zip(vectors) {
        groups.entry((*name).clone()).or_default().push(model.predict_prob(x)?);
    }
    let mut scored = Vec::with_capacity(groups.len());
    for (name, probs) in groups {
        let value = aggregate(&probs, strategy)?;
        scored.push((
            value,
            EntityPrediction {
                name,
                prob: value,
                log_complement: log_complement_score(&probs),
                n_mentions: probs.len(),
            },
        ));
    }
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.1.name.cmp(&b.1.name))
    });
    Ok(scored.into_iter().map(|(_, p)| p).collect())
}

/// Per-mention soft labels, aligned with the training mentions.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTable<T> {
    pub mention_ids: Vec<String>,
    pub q: Vec<T>,
}

impl<T: Real> PosteriorTable<T> {
    pub fn get(&self, mention_id: &str) -> Option<T> {
        self.mention_ids
            .iter()
            .position(|m| m == mention_id)
            .map(|i| self.q[i])
    }
}

/// Training mentions grouped into entities.
#[derive(Debug, Clone)]
pub struct EmProblem<T> {
    pub mention_ids: Vec<String>,
    pub vectors: Vec<HashedVector<T>>,
    /// Entity index of each mention.
    pub entity_of: Vec<usize>,
    /// Entity labels `y_e`.
    pub entity_labels: Vec<bool>,
    /// Hard distant labels used for the initial model.
    pub hard_labels: Vec<bool>,
}

impl<T: Real> EmProblem<T> {
    pub fn validate(&self) -> Result<()> {
        let n = self.vectors.len();
        for len in [self.mention_ids.len(), self.entity_of.len(), self.hard_labels.len()] {
            if len != n {
                return Err(Error::LengthMismatch { left: len, right: n });
            }
        }
        if let Some(&e) = self.entity_of.iter().find(|&&e| e >= self.entity_labels.len()) {
            return Err(Error::Validation(format!("entity index {e} out of range")));
        }
        if n == 0 {
            return Err(Error::Empty("no training mentions"));
        }
        Ok(())
    }

    fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.entity_labels.len()];
        for (i, &e) in self.entity_of.iter().enumerate() {
            members[e].push(i);
        }
        members
    }

    pub fn hard_examples(&self, labels: &[bool]) -> Vec<WeightedExample<T>> {
        self.vectors
            .iter()
            .zip(labels)
            .map(|(x, &z)| WeightedExample::hard(x.clone(), z))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub train: TrainConfig,
    pub max_rounds: usize,
    /// Stop once the objective changes by less than this between rounds.
    pub elbo_tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            train: TrainConfig::default(),
            max_rounds: 100,
            elbo_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmState<T> {
    /// Number of completed M-steps after the hard initialization.
    pub round: usize,
    pub model: MentionModel<T>,
    pub posterior: PosteriorTable<T>,
    /// Objective after each E-step: the exact evidence lower bound (the log
    /// marginal likelihood of the entity labels) minus the L2 penalty.
    /// Entry `r` is evaluated at the model of round `r`.
    pub elbo_history: Vec<T>,
    pub converged: bool,
}

struct EStepResult<T> {
    q: Vec<T>,
    objective: T,
}

fn penalty<T: Real>(model: &MentionModel<T>, c: f64) -> T {
    model.weights.iter().fold(T::zero(), |a, &w| a + w * w) / (T::lit(2.0) * T::lit(c))
}

fn run_e_step<T: Real>(
    problem: &EmProblem<T>,
    members: &[Vec<usize>],
    model: &MentionModel<T>,
    c: f64,
) -> Result<EStepResult<T>> {
    let logits = problem
        .vectors
        .iter()
        .map(|x| model.logit(x))
        .collect::<Result<Vec<T>>>()?;
    let mut q = vec![T::zero(); logits.len()];
    let mut objective = -penalty(model, c);
    for (e, idx) in members.iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let y = problem.entity_labels[e];
        let z: Vec<T> = idx.iter().map(|&i| logits[i]).collect();
        for (&i, qi) in idx.iter().zip(e_step_logits(y, &z)?) {
            q[i] = qi;
        }
        objective = objective + entity_log_likelihood(y, &z);
    }
    if !objective.is_finite() {
        return Err(Error::NonFinite { iteration: 0 });
    }
    Ok(EStepResult { q, objective })
}

/// Hard-label initialization followed by exact E-steps and full M-steps.
pub fn em_train<T: Real>(problem: &EmProblem<T>, config: &EmConfig) -> Result<EmState<T>> {
    problem.validate()?;
    let dim = problem.vectors[0].dim();
    let members = problem.members();
    let c = config.train.c;

    let mut model = train_weighted(&problem.hard_examples(&problem.hard_labels), dim, &config.train)?.model;
    let mut history: Vec<T> = Vec::new();
    let mut round = 0;
    let mut converged = false;
    let q = loop {
        let step = run_e_step(problem, &members, &model, c)?;
        if let Some(&prev) = history.last() {
            if (step.objective - prev).abs() < T::lit(config.elbo_tol) {
                converged = true;
            }
        }
        history.push(step.objective);
        if converged || round >= config.max_rounds {
            break step.q;
        }
        let examples: Vec<WeightedExample<T>> = problem
            .vectors
            .iter()
            .zip(&step.q)
            .map(|(x, &qi)| WeightedExample::soft(x.clone(), qi))
            .collect();
        model = train_weighted_from(&model, &examples, &config.train)?.model;
        round += 1;
    };
    Ok(EmState {
        round,
        model,
        posterior: PosteriorTable {
            mention_ids: problem.mention_ids.clone(),
            q,
        },
        elbo_history: history,
        converged,
    })
}

/// Mention probabilities clamped away from 0 and 1.
pub fn mention_probs<T: Real>(model: &MentionModel<T>, vectors: &[HashedVector<T>]) -> Result<Vec<T>> {
    vectors.iter().map(|x| model.logit(x).map(prob_from_logit)).collect()
}
