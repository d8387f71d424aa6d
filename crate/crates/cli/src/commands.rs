//! Subcommand implementations. Each one validates its inputs, writes its
//! artifacts atomically into `--out` and appends a manifest record.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use entity_events::baseline::{load_tuples, positive_entities, set_scores, RuleLevel};
use entity_events::bootstrap::{bootstrap_report, Metric, ResampleScheme};
use entity_events::classifier::TrainConfig;
use entity_events::corpus::{
    build_entities, clean_mentions, dedup_corpus, distant_label, filter_mentions, load_corpus, load_gold,
    prepare_mentions, write_documents, write_gold, EntityTable, GoldRecord, KeywordConfig, LabelRule, MentionRecord,
    NameKey, TestWindow,
};
use entity_events::disjunction::{EmConfig, EntityPrediction, Strategy};
use entity_events::eval::{evaluate, write_curve_csv};
use entity_events::features::{extract_features, Featurizer};
use entity_events::pipeline::{em_problem, evaluation_mentions, mention_logits, predict, test_layout, train_em, train_hard};
use entity_events::synthgen::{generate, write_truth, SynthConfig};
use entity_events::MentionModel;

use crate::output::{append_manifest, ensure_dir, sha256_file, write_atomic, write_json, RunRecord};
use crate::{
    BaselineArgs, BootstrapArgs, Command, CorpusArgs, EvalArgs, FeatureArgs, GoldArgs, IngestArgs, LabelArgs,
    PredictArgs, SynthArgs, TrainArgs, TrainEmArgs,
};

const MODEL_FILE: &str = "model.bin";
const MODEL_META: &str = "model.meta.json";

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Label(a) => label(a),
        Command::TrainHard(a) => train_hard_cmd(a),
        Command::TrainEm(a) => train_em_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Bootstrap(a) => bootstrap_cmd(a),
        Command::Baseline(a) => baseline_cmd(a),
        Command::Synth(a) => synth_cmd(a),
    }
}

// ---- shared helpers ----

fn parse<T>(value: &str, flag: &str) -> Result<T>
where
    T: FromStr<Err = entity_events::Error>,
{
    value.parse().with_context(|| format!("invalid --{flag}"))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("missing input: {what} file {} does not exist", path.display());
    }
    Ok(())
}

fn keywords(args: &CorpusArgs) -> Result<KeywordConfig> {
    match &args.keywords {
        Some(path) => KeywordConfig::load(path).with_context(|| format!("loading keywords {}", path.display())),
        None => Ok(KeywordConfig::default()),
    }
}

fn prepared(args: &CorpusArgs) -> Result<Vec<MentionRecord>> {
    require_file(&args.corpus, "corpus")?;
    let corpus = load_corpus(&args.corpus).with_context(|| format!("loading corpus {}", args.corpus.display()))?;
    Ok(prepare_mentions(&corpus, &keywords(args)?))
}

fn gold(path: &Path, what: &str) -> Result<Vec<GoldRecord>> {
    require_file(path, what)?;
    load_gold(path).with_context(|| format!("loading {what} {}", path.display()))
}

struct TestSplit {
    mentions: Vec<MentionRecord>,
    table: EntityTable,
    gold: BTreeSet<NameKey>,
}

fn test_split(corpus: &CorpusArgs, args: &GoldArgs) -> Result<TestSplit> {
    let window: TestWindow = parse(&args.test_window, "test-window")?;
    let gold_train = gold(&args.gold_train, "gold-train")?;
    let gold_test = gold(&args.gold_test, "gold-test")?;
    let mentions = prepared(corpus)?;
    let table = build_entities(&mentions, &gold_train, &gold_test, &window);
    let gold = gold_test
        .iter()
        .filter(|g| window.contains(g.incident_date))
        .map(|g| g.name.clone())
        .collect::<BTreeSet<_>>();
    if gold.is_empty() {
        bail!("no gold incidents fall inside the test window {window}");
    }
    Ok(TestSplit { mentions, table, gold })
}

fn featurizer(args: &FeatureArgs) -> Result<Featurizer> {
    Ok(Featurizer::new(parse(&args.templates, "templates")?, args.dim)?)
}

fn write_jsonl<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<PathBuf> {
    write_atomic(dir, name, |out| {
        for row in rows {
            serde_json::to_writer(&mut *out, row)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    })
}

fn finish<A: Serialize>(
    out: &Path,
    command: &str,
    args: &A,
    inputs: &[&Path],
    seed: Option<u64>,
    started: Instant,
    outputs: &[PathBuf],
) -> Result<()> {
    let mut input_digests = BTreeMap::new();
    for path in inputs {
        input_digests.insert(path.display().to_string(), sha256_file(path)?);
    }
    let outputs = outputs
        .iter()
        .map(|p| p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()))
        .collect();
    append_manifest(
        out,
        RunRecord {
            command: command.to_owned(),
            config: serde_json::to_value(args)?,
            input_digests,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            wall_time_secs: started.elapsed().as_secs_f64(),
            outputs,
        },
    )
}

fn corpus_inputs(c: &CorpusArgs) -> Vec<&Path> {
    let mut v = vec![c.corpus.as_path()];
    v.extend(c.keywords.as_deref());
    v
}

// ---- model files ----

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    kind: String,
    templates: String,
    dim: usize,
    rule: String,
    c: f64,
}

fn save_model(out: &Path, model: &MentionModel, meta: &ModelMeta) -> Result<Vec<PathBuf>> {
    let bytes = model.to_bytes();
    let model_path = write_atomic(out, MODEL_FILE, |w| {
        w.write_all(&bytes)?;
        Ok(())
    })?;
    Ok(vec![model_path, write_json(out, MODEL_META, meta)?])
}

fn load_model(path: &Path) -> Result<(MentionModel, Option<ModelMeta>)> {
    require_file(path, "model")?;
    let model = MentionModel::load(path).with_context(|| format!("loading model {}", path.display()))?;
    let meta_path = path.with_file_name(MODEL_META);
    let meta = if meta_path.is_file() {
        let file = File::open(&meta_path)?;
        Some(serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", meta_path.display()))?)
    } else {
        None
    };
    Ok((model, meta))
}

fn model_featurizer(model: &MentionModel, meta: Option<&ModelMeta>, templates: Option<&str>) -> Result<Featurizer> {
    let templates = templates
        .map(str::to_owned)
        .or_else(|| meta.map(|m| m.templates.clone()))
        .unwrap_or_else(|| "all".to_owned());
    featurizer(&FeatureArgs {
        templates,
        dim: model.dim(),
    })
}

// ---- ingest / label ----

#[derive(Serialize)]
struct MentionRow<'a> {
    mention_id: &'a str,
    first: &'a str,
    last: &'a str,
    doc_id: &'a str,
    sent_id: &'a str,
    symbolized: String,
}

#[derive(Serialize)]
struct IngestStats {
    n_documents: usize,
    n_sentences: usize,
    n_sentences_after_dedup: usize,
    n_mentions: usize,
    n_mentions_after_dedup: usize,
    n_mentions_after_cleanup: usize,
    n_mentions_kept: usize,
    n_entities: usize,
    n_missing_syntax: usize,
}

#[derive(Serialize)]
struct FeatureRow<'a> {
    mention_id: &'a str,
    features: Vec<String>,
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let started = Instant::now();
    require_file(&a.corpus.corpus, "corpus")?;
    let fz = featurizer(&a.features)?;
    let corpus = load_corpus(&a.corpus.corpus).with_context(|| format!("loading corpus {}", a.corpus.corpus.display()))?;
    let deduped = dedup_corpus(&corpus);
    let cleaned = clean_mentions(&deduped.mentions);
    let kept = filter_mentions(&cleaned, &keywords(&a.corpus)?);
    let extractions: Vec<_> = kept.iter().map(|m| extract_features(m, &fz.templates)).collect();
    let stats = IngestStats {
        n_documents: corpus.doc_ids().len(),
        n_sentences: corpus.sentences.len(),
        n_sentences_after_dedup: deduped.sentences.len(),
        n_mentions: corpus.mentions.len(),
        n_mentions_after_dedup: deduped.mentions.len(),
        n_mentions_after_cleanup: cleaned.len(),
        n_mentions_kept: kept.len(),
        n_entities: kept.iter().map(|m| &m.name).collect::<BTreeSet<_>>().len(),
        n_missing_syntax: extractions.iter().filter(|e| e.missing_syntax).count(),
    };
    ensure_dir(&a.out)?;
    let rows: Vec<MentionRow> = kept
        .iter()
        .map(|m| MentionRow {
            mention_id: &m.mention_id,
            first: &m.name.first,
            last: &m.name.last,
            doc_id: &m.sentence.doc_id,
            sent_id: &m.sentence.sent_id,
            symbolized: m.symbolized_tokens.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" "),
        })
        .collect();
    let mut outputs = vec![write_jsonl(&a.out, "mentions.jsonl", &rows)?, write_json(&a.out, "ingest.json", &stats)?];
    if a.dump_features {
        let rows: Vec<FeatureRow> = kept
            .iter()
            .zip(extractions)
            .map(|(m, e)| FeatureRow {
                mention_id: &m.mention_id,
                features: e.features,
            })
            .collect();
        outputs.push(write_jsonl(&a.out, "features.jsonl", &rows)?);
    }
    println!(
        "kept {} of {} mentions ({} entities); {} lacked syntax",
        stats.n_mentions_kept, stats.n_mentions, stats.n_entities, stats.n_missing_syntax
    );
    finish(&a.out, "ingest", a, &corpus_inputs(&a.corpus), None, started, &outputs)
}

#[derive(Serialize)]
struct LabelRow<'a> {
    mention_id: &'a str,
    first: &'a str,
    last: &'a str,
    z: bool,
}

fn label(a: &LabelArgs) -> Result<()> {
    let started = Instant::now();
    let rule: LabelRule = parse(&a.rule, "rule")?;
    let gold_train = gold(&a.gold_train, "gold-train")?;
    let mentions = prepared(&a.corpus)?;
    let labels = distant_label(&mentions, &gold_train, rule);
    let rows: Vec<LabelRow> = mentions
        .iter()
        .map(|m| LabelRow {
            mention_id: &m.mention_id,
            first: &m.name.first,
            last: &m.name.last,
            z: labels.z[&m.mention_id],
        })
        .collect();
    let n_positive = labels.positives().len();
    ensure_dir(&a.out)?;
    let outputs = vec![
        write_jsonl(&a.out, "labels.jsonl", &rows)?,
        write_json(
            &a.out,
            "label.json",
            &serde_json::json!({ "rule": rule.to_string(), "n_mentions": rows.len(), "n_positive": n_positive }),
        )?,
    ];
    println!("{n_positive} of {} mentions labeled positive under {rule}", rows.len());
    let mut inputs = corpus_inputs(&a.corpus);
    inputs.push(&a.gold_train);
    finish(&a.out, "label", a, &inputs, None, started, &outputs)
}

// ---- training ----

fn train_config(a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        c: a.c,
        seed: a.seed,
        ..TrainConfig::default()
    }
}

fn train_inputs(a: &TrainArgs) -> Vec<&Path> {
    let mut v = corpus_inputs(&a.corpus);
    v.push(&a.gold_train);
    v
}

fn meta(a: &TrainArgs, kind: &str) -> ModelMeta {
    ModelMeta {
        kind: kind.to_owned(),
        templates: a.features.templates.clone(),
        dim: a.features.dim,
        rule: a.rule.clone(),
        c: a.c,
    }
}

fn train_hard_cmd(a: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    let rule: LabelRule = parse(&a.rule, "rule")?;
    let config = train_config(a);
    config.validate()?;
    let fz = featurizer(&a.features)?;
    let gold_train = gold(&a.gold_train, "gold-train")?;
    let mentions = prepared(&a.corpus)?;
    let problem = em_problem::<f64>(&mentions, &gold_train, rule, &fz)?;
    let outcome = train_hard(&problem, &config)?;
    ensure_dir(&a.out)?;
    let mut outputs = save_model(&a.out, &outcome.model, &meta(a, "hard"))?;
    let report = serde_json::json!({
        "n_mentions": problem.vectors.len(),
        "n_entities": problem.entity_labels.len(),
        "n_positive_labels": problem.hard_labels.iter().filter(|&&z| z).count(),
        "iterations": outcome.iterations,
        "loss": outcome.loss,
        "grad_norm": outcome.grad_norm,
        "converged": outcome.converged,
    });
    outputs.push(write_json(&a.out, "train.json", &report)?);
    println!(
        "trained on {} mentions in {} iterations (converged: {})",
        problem.vectors.len(),
        outcome.iterations,
        outcome.converged
    );
    finish(&a.out, "train-hard", a, &train_inputs(a), Some(a.seed), started, &outputs)
}

#[derive(Serialize)]
struct PosteriorRow<'a> {
    mention_id: &'a str,
    q: f64,
}

fn train_em_cmd(a: &TrainEmArgs) -> Result<()> {
    let started = Instant::now();
    let t = &a.train;
    let rule: LabelRule = parse(&t.rule, "rule")?;
    let config = EmConfig {
        train: train_config(t),
        max_rounds: a.max_rounds,
        ..EmConfig::default()
    };
    config.train.validate()?;
    let fz = featurizer(&t.features)?;
    let gold_train = gold(&t.gold_train, "gold-train")?;
    let mentions = prepared(&t.corpus)?;
    let problem = em_problem::<f64>(&mentions, &gold_train, rule, &fz)?;
    let state = train_em(&problem, &config)?;
    ensure_dir(&t.out)?;
    let mut outputs = save_model(&t.out, &state.model, &meta(t, "em"))?;
    let rows: Vec<PosteriorRow> = state
        .posterior
        .mention_ids
        .iter()
        .zip(&state.posterior.q)
        .map(|(m, &q)| PosteriorRow { mention_id: m, q })
        .collect();
    outputs.push(write_jsonl(&t.out, "posteriors.jsonl", &rows)?);
    let report = serde_json::json!({
        "n_mentions": problem.vectors.len(),
        "n_entities": problem.entity_labels.len(),
        "rounds": state.round,
        "converged": state.converged,
        "elbo_history": state.elbo_history,
    });
    outputs.push(write_json(&t.out, "em.json", &report)?);
    println!("EM finished after {} rounds (converged: {})", state.round, state.converged);
    finish(&t.out, "train-em", a, &train_inputs(t), Some(t.seed), started, &outputs)
}

// ---- prediction / evaluation ----

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    first: String,
    last: String,
    prob: f64,
    log_complement: f64,
    n_mentions: usize,
    rank: usize,
}

fn predict_cmd(a: &PredictArgs) -> Result<()> {
    let started = Instant::now();
    let strategy: Strategy = parse(&a.strategy, "strategy")?;
    let (model, meta) = load_model(&a.model)?;
    let fz = model_featurizer(&model, meta.as_ref(), a.templates.as_deref())?;
    let mentions = prepared(&a.corpus)?;
    let predictions = predict(&model, &mentions, &fz, strategy)?;
    let rows: Vec<PredictionRow> = predictions
        .iter()
        .enumerate()
        .map(|(i, p)| PredictionRow {
            first: p.name.first.clone(),
            last: p.name.last.clone(),
            prob: p.prob,
            log_complement: p.log_complement,
            n_mentions: p.n_mentions,
            rank: i + 1,
        })
        .collect();
    ensure_dir(&a.out)?;
    let outputs = vec![write_jsonl(&a.out, "predictions.jsonl", &rows)?];
    println!("ranked {} entities from {} mentions", rows.len(), mentions.len());
    let mut inputs = corpus_inputs(&a.corpus);
    inputs.push(&a.model);
    finish(&a.out, "predict", a, &inputs, None, started, &outputs)
}

fn load_predictions(path: &Path) -> Result<Vec<EntityPrediction<f64>>> {
    let reader = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: PredictionRow =
            serde_json::from_str(&line).with_context(|| format!("{}:{}: bad prediction line", path.display(), i + 1))?;
        rows.push(row);
    }
    rows.sort_by_key(|r| r.rank);
    rows.into_iter()
        .map(|r| {
            Ok(EntityPrediction {
                name: NameKey::new(&r.first, &r.last)?,
                prob: r.prob,
                log_complement: r.log_complement,
                n_mentions: r.n_mentions,
            })
        })
        .collect()
}

fn gold_inputs<'a>(corpus: &'a CorpusArgs, gold: &'a GoldArgs) -> Vec<&'a Path> {
    let mut v = corpus_inputs(corpus);
    v.push(&gold.gold_train);
    v.push(&gold.gold_test);
    v
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let started = Instant::now();
    let predictions_path = a
        .predictions
        .as_deref()
        .ok_or_else(|| anyhow!("missing input: --predictions (the predictions.jsonl written by `predict`)"))?;
    require_file(predictions_path, "predictions")?;
    let predictions = load_predictions(predictions_path)?;
    let split = test_split(&a.corpus, &a.gold)?;
    let (report, curve) = evaluate(&predictions, &split.table, &split.gold)?;
    ensure_dir(&a.out)?;
    let summary = serde_json::json!({
        "auprc": report.auprc,
        "max_f1": report.max_f1,
        "upper_bound_recall": report.upper_bound_recall,
        "n_excluded_historical": report.n_excluded_historical,
        "n_gold": split.gold.len(),
        "n_ranked": curve.n_ranked,
    });
    let outputs = vec![
        write_json(&a.out, "eval.json", &summary)?,
        write_atomic(&a.out, "pr_curve.csv", |w| Ok(write_curve_csv(w, &curve)?))?,
    ];
    println!("{}", serde_json::to_string(&summary)?);
    let mut inputs = gold_inputs(&a.corpus, &a.gold);
    inputs.push(predictions_path);
    finish(&a.out, "eval", a, &inputs, None, started, &outputs)
}

fn bootstrap_cmd(a: &BootstrapArgs) -> Result<()> {
    let started = Instant::now();
    let scheme: ResampleScheme = parse(&a.scheme, "scheme")?;
    let metric: Metric = parse(&a.metric, "metric")?;
    let split = test_split(&a.corpus, &a.gold)?;
    let mentions = evaluation_mentions(&split.mentions, &split.table);
    let layout = test_layout(&mentions, split.gold.clone())?;
    let mut models = Vec::with_capacity(a.models.len());
    for path in &a.models {
        let (model, meta) = load_model(path)?;
        let fz = model_featurizer(&model, meta.as_ref(), a.templates.as_deref())?;
        models.push((path.display().to_string(), mention_logits(&model, &mentions, &fz)?));
    }
    let report = bootstrap_report(&layout, &models, metric, scheme, a.b, a.seed)?;
    ensure_dir(&a.out)?;
    let outputs = vec![write_json(&a.out, "bootstrap.json", &report)?];
    println!("{}: point {:.4}, se {:.4} over B={}", models[0].0, report.point, report.se, a.b);
    let mut inputs = gold_inputs(&a.corpus, &a.gold);
    inputs.extend(a.models.iter().map(PathBuf::as_path));
    finish(&a.out, "bootstrap", a, &inputs, Some(a.seed), started, &outputs)
}

fn baseline_cmd(a: &BaselineArgs) -> Result<()> {
    let started = Instant::now();
    require_file(&a.tuples, "tuples")?;
    let tuples = load_tuples(&a.tuples).with_context(|| format!("loading tuples {}", a.tuples.display()))?;
    let split = test_split(&a.corpus, &a.gold)?;
    let kw = keywords(&a.corpus)?;
    let levels: Vec<_> = [RuleLevel::R1, RuleLevel::R2, RuleLevel::R3]
        .into_iter()
        .map(|level| {
            let predicted = positive_entities(&tuples, &split.table, level, &kw);
            let s = set_scores(&predicted, &split.gold);
            serde_json::json!({
                "level": level.to_string(),
                "n_predicted": predicted.len(),
                "precision": s.precision,
                "recall": s.recall,
                "f1": s.f1,
            })
        })
        .collect();
    ensure_dir(&a.out)?;
    let report = serde_json::json!({ "n_gold": split.gold.len(), "levels": levels });
    let outputs = vec![write_json(&a.out, "baseline.json", &report)?];
    println!("{}", serde_json::to_string(&report)?);
    let mut inputs = gold_inputs(&a.corpus, &a.gold);
    inputs.push(&a.tuples);
    finish(&a.out, "baseline", a, &inputs, None, started, &outputs)
}

// ---- synthetic data ----

fn synth_cmd(a: &SynthArgs) -> Result<()> {
    let started = Instant::now();
    let config = SynthConfig {
        n_train_entities: a.n_train,
        n_test_entities: a.n_test,
        positive_fraction: a.positive_fraction,
        noise_rate: a.noise_rate,
        location_rate: a.location_rate,
        duplicate_rate: a.duplicate_rate,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let corpus = generate(&config)?;
    ensure_dir(&a.out)?;
    let outputs = vec![
        write_atomic(&a.out, "train_docs.jsonl", |w| Ok(write_documents(w, &corpus.train_docs)?))?,
        write_atomic(&a.out, "test_docs.jsonl", |w| Ok(write_documents(w, &corpus.test_docs)?))?,
        write_atomic(&a.out, "gold_train.jsonl", |w| Ok(write_gold(w, &corpus.gold_train)?))?,
        write_atomic(&a.out, "gold_test.jsonl", |w| Ok(write_gold(w, &corpus.gold_test)?))?,
        write_atomic(&a.out, "truth.jsonl", |w| Ok(write_truth(w, &corpus.truth)?))?,
        write_json(
            &a.out,
            "synth.json",
            &serde_json::json!({ "config": config, "test_window": corpus.window.to_string() }),
        )?,
    ];
    println!(
        "wrote {} train and {} test documents; test window {}",
        corpus.train_docs.len(),
        corpus.test_docs.len(),
        corpus.window
    );
    finish(&a.out, "synth", a, &[], Some(a.seed), started, &outputs)
}
