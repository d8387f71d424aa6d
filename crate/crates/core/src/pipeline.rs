//! End-to-end glue: prepared train/test corpora, training problems for the
//! hard and EM learners, entity predictions and bootstrap layouts.

use std::collections::{BTreeMap, BTreeSet};

use crate::bootstrap::{TestLayout, TestMention};
use crate::classifier::{train_weighted, MentionModel, TrainConfig, TrainOutcome};
use crate::corpus::{
    build_entities, distant_label, prepare_mentions, Corpus, EntityTable, GoldRecord, KeywordConfig, LabelRule,
    MentionRecord, NameKey, TestWindow,
};
use crate::disjunction::{em_train, predict_entities_with, EmConfig, EmProblem, EmState, EntityPrediction, Strategy};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::features::{Featurizer, HashedVector};
use crate::scalar::Real;

/// Prepared mentions of both splits and the entity table built over them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<MentionRecord>,
    pub test: Vec<MentionRecord>,
    pub gold_train: Vec<GoldRecord>,
    pub gold_test: Vec<GoldRecord>,
    pub window: TestWindow,
    /// Entities of the test split, with gold and historical flags.
    pub test_entities: EntityTable,
}

impl Dataset {
    pub fn new(
        train: &Corpus,
        test: &Corpus,
        gold_train: Vec<GoldRecord>,
        gold_test: Vec<GoldRecord>,
        window: TestWindow,
        keywords: &KeywordConfig,
    ) -> Self {
        let train = prepare_mentions(train, keywords);
        let test = prepare_mentions(test, keywords);
        let test_entities = build_entities(&test, &gold_train, &gold_test, &window);
        Dataset {
            train,
            test,
            gold_train,
            gold_test,
            window,
            test_entities,
        }
    }

    /// Names of in-window gold incidents.
    pub fn test_gold(&self) -> BTreeSet<NameKey> {
        self.gold_test
            .iter()
            .filter(|g| self.window.contains(g.incident_date))
            .map(|g| g.name.clone())
            .collect()
    }
}

/// Groups training mentions by entity, with `y_e` from the training KB and
/// hard mention labels from `rule`.
pub fn em_problem<T: Real>(
    mentions: &[MentionRecord],
    gold_train: &[GoldRecord],
    rule: LabelRule,
    featurizer: &Featurizer,
) -> Result<EmProblem<T>> {
    if mentions.is_empty() {
        return Err(Error::Empty("no training mentions"));
    }
    let gold_names: BTreeSet<&NameKey> = gold_train.iter().map(|g| &g.name).collect();
    let mut entity_ids: BTreeMap<&NameKey, usize> = BTreeMap::new();
    for m in mentions {
        let next = entity_ids.len();
        entity_ids.entry(&m.name).or_insert(next);
    }
    let mut entity_labels = vec![false; entity_ids.len()];
    for (name, &e) in &entity_ids {
        entity_labels[e] = gold_names.contains(name);
    }
    let labels = distant_label(mentions, gold_train, rule);
    let (vectors, _) = featurizer.vectorize(mentions)?;
    Ok(EmProblem {
        mention_ids: mentions.iter().map(|m| m.mention_id.clone()).collect(),
        vectors,
        entity_of: mentions.iter().map(|m| entity_ids[&m.name]).collect(),
        entity_labels,
        hard_labels: mentions.iter().map(|m| labels.z[&m.mention_id]).collect(),
    })
}

/// Logistic regression on hard distant labels.
pub fn train_hard<T: Real>(problem: &EmProblem<T>, config: &TrainConfig) -> Result<TrainOutcome<T>> {
    problem.validate()?;
    train_weighted(&problem.hard_examples(&problem.hard_labels), problem.vectors[0].dim(), config)
}

/// Disjunction model trained by EM from the hard-label initialization.
pub fn train_em<T: Real>(problem: &EmProblem<T>, config: &EmConfig) -> Result<EmState<T>> {
    em_train(problem, config)
}

/// Ranks every test entity under `model`.
pub fn predict<T: Real>(
    model: &MentionModel<T>,
    mentions: &[MentionRecord],
    featurizer: &Featurizer,
    strategy: Strategy,
) -> Result<Vec<EntityPrediction<T>>> {
    if model.dim() != featurizer.dim {
        return Err(Error::DimensionMismatch {
            expected: featurizer.dim,
            actual: model.dim(),
        });
    }
    let (vectors, _) = featurizer.vectorize(mentions)?;
    let names: Vec<&NameKey> = mentions.iter().map(|m| &m.name).collect();
    predict_entities_with(model, &names, &vectors, strategy)
}

/// Test mentions of non-historical entities, in corpus order.
pub fn evaluation_mentions<'a>(mentions: &'a [MentionRecord], table: &EntityTable) -> Vec<&'a MentionRecord> {
    let historical = table.historical_names();
    mentions.iter().filter(|m| !historical.contains(&m.name)).collect()
}

/// Bootstrap layout over the evaluation mentions. Their order matches the
/// logits produced by [`mention_logits`] on the same slice.
pub fn test_layout(mentions: &[&MentionRecord], gold: BTreeSet<NameKey>) -> Result<TestLayout> {
    let rows = mentions
        .iter()
        .map(|m| TestMention {
            name: m.name.clone(),
            doc_id: m.sentence.doc_id.clone(),
            sent_id: m.sentence.sent_id.clone(),
            sentence_key: m.sentence.token_texts().join(" "),
            download_time: m.sentence.download_time,
        })
        .collect();
    TestLayout::new(rows, gold)
}

pub fn mention_logits<T: Real>(
    model: &MentionModel<T>,
    mentions: &[&MentionRecord],
    featurizer: &Featurizer,
) -> Result<Vec<T>> {
    let owned: Vec<MentionRecord> = mentions.iter().map(|m| (*m).clone()).collect();
    let (vectors, _): (Vec<HashedVector<T>>, _) = featurizer.vectorize(&owned)?;
    vectors.iter().map(|x| model.logit(x)).collect()
}

/// Noisy-or predictions of `model` on the test split, scored against the
/// in-window gold names.
pub fn evaluate_dataset<T: Real>(
    model: &MentionModel<T>,
    dataset: &Dataset,
    featurizer: &Featurizer,
) -> Result<EvalReport<T>> {
    let predictions = predict(model, &dataset.test, featurizer, Strategy::NoisyOr)?;
    Ok(evaluate(&predictions, &dataset.test_entities, &dataset.test_gold())?.0)
}
