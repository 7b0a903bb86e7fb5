use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractor::{ConceptExtractor, ExtractorConfig};
use crate::io;
use crate::ontology::Ontology;
use crate::rng::derive_seed;
use crate::session::{
    augmented_training_set, finalize_session, oracle_records, plan_session, Components, PendingItem, SessionConfig,
    SessionPlan, SessionTrace,
};
use crate::sir::{self, DatasetParams, RetrieverModel, SirTrainParams};
use crate::synth::{
    default_task_specs, gen_corpus, gen_ontology, gen_task, mention_key, Corpus, CorpusParams,
    OntologyParams, TaskSpec, TaskSplit,
};

use super::baselines::{baseline_select, BaselineContext, Strategy};
use super::classifier::{train_classifier, SpanClassifier};
use super::metrics::Metrics;

/// How target types and their splits are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskParams {
    /// Depth (edge hops from the root) of each target type's root concept.
    pub target_depth: usize,
    pub skew: f64,
    /// Share of the non-illustrative instances that form the pool; the rest
    /// is the test split.
    pub pool_fraction: f64,
    /// Minimum corpus mentions under a type's illustrative source.
    pub min_source_mentions: u64,
}

impl Default for TaskParams {
    fn default() -> Self {
        TaskParams { target_depth: 3, skew: 1.0, pool_fraction: 0.5, min_source_mentions: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub n_seeds: usize,
    pub strategies: Vec<Strategy>,
    pub task: TaskParams,
    pub session: SessionConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            n_seeds: 10,
            strategies: vec![Strategy::Vanilla, Strategy::Random, Strategy::Supercd],
            task: TaskParams::default(),
            session: SessionConfig::default(),
        }
    }
}

/// Generation settings for the synthetic ontology, corpus and retriever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct WorldConfig {
    pub ontology: OntologyParams,
    pub corpus: CorpusParams,
    pub extractor: ExtractorConfig,
    pub sir_data: DatasetParams,
    pub sir_train: SirTrainParams,
}

/// Fixed artifacts shared by every benchmark cell.
#[derive(Debug, Clone)]
pub struct World {
    pub ontology: Ontology,
    pub corpus: Corpus,
    pub extractor: ConceptExtractor,
    pub retriever: RetrieverModel,
    /// Mean retriever loss per training epoch.
    pub retriever_losses: Vec<f64>,
}

impl World {
    pub fn generate(config: &WorldConfig) -> Result<World> {
        let ontology = gen_ontology(&config.ontology)?;
        let (ontology, corpus) = gen_corpus(&ontology, &config.corpus)?;
        let (retriever, retriever_losses) = train_retriever(&ontology, &corpus, &config.sir_data, &config.sir_train)?;
        Ok(World {
            ontology,
            corpus,
            extractor: ConceptExtractor::oracle(config.extractor.clone()),
            retriever,
            retriever_losses,
        })
    }

    pub fn components(&self) -> Components<'_> {
        Components {
            ontology: &self.ontology,
            corpus: &self.corpus,
            extractor: &self.extractor,
            retriever: &self.retriever,
        }
    }
}

/// Builds the contrastive dataset and trains a fresh retriever on it.
pub fn train_retriever(
    ontology: &Ontology,
    corpus: &Corpus,
    data: &DatasetParams,
    params: &SirTrainParams,
) -> Result<(RetrieverModel, Vec<f64>)> {
    params.check()?;
    let ds = sir::build_dataset(ontology, corpus, data)?;
    let init = RetrieverModel::init(sir::vocabulary(corpus, ontology), params.d, params.init_std, params.seed)?;
    let pairs = sir::encode_pairs(&init, &ds.pairs, corpus, ontology)?;
    let out = sir::train(init, &pairs, params.lr, params.epochs, params.seed)?;
    Ok((out.model, out.epoch_losses))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub seed: u64,
    pub strategy: Strategy,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub unseen_f1: f64,
    pub coverage: usize,
    pub budget_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub mean_unseen_f1: f64,
    pub mean_coverage: f64,
    pub mean_budget_used: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub types: Vec<TaskSpec>,
    pub rows: Vec<BenchmarkRow>,
    pub summary: Vec<StrategySummary>,
}

impl BenchmarkReport {
    pub fn summary_of(&self, strategy: Strategy) -> Option<&StrategySummary> {
        self.summary.iter().find(|s| s.strategy == strategy)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        io::to_json_pretty(self)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        io::write_atomic(&dir.join(format!("{stem}.csv")), self.to_csv()?.as_bytes())?;
        io::write_atomic(&dir.join(format!("{stem}.json")), self.to_json()?.as_bytes())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        io::read_json(path)
    }
}

/// Per-strategy means (and F1 standard deviation) over the rows.
pub fn summarize(rows: &[BenchmarkRow], strategies: &[Strategy]) -> Vec<StrategySummary> {
    strategies
        .iter()
        .map(|&strategy| {
            let cells: Vec<&BenchmarkRow> = rows.iter().filter(|r| r.strategy == strategy).collect();
            let n = cells.len().max(1) as f64;
            let mean = |f: &dyn Fn(&BenchmarkRow) -> f64| cells.iter().map(|r| f(r)).sum::<f64>() / n;
            let mean_f1 = mean(&|r| r.f1);
            let var = cells.iter().map(|r| (r.f1 - mean_f1).powi(2)).sum::<f64>() / n;
            StrategySummary {
                strategy,
                mean_f1,
                std_f1: var.sqrt(),
                mean_unseen_f1: mean(&|r| r.unseen_f1),
                mean_coverage: mean(&|r| r.coverage as f64),
                mean_budget_used: mean(&|r| r.budget_used as f64),
            }
        })
        .collect()
}

/// Concepts in the closure of any illustrative mention.
pub fn illustrative_closure_union(task: &TaskSplit, world: &World) -> Result<BTreeSet<usize>> {
    let ont = &world.ontology;
    let mut seen = BTreeSet::new();
    for id in &task.illustrative {
        for m in &world.corpus.get(id)?.mentions {
            seen.extend(ont.closure_idx(&ont.indices(&m.concepts)?));
        }
    }
    Ok(seen)
}

/// Metrics over test mentions whose closure reaches outside the
/// illustrative closure union.
pub fn unseen_metrics(clf: &SpanClassifier, task: &TaskSplit, world: &World, seen: &BTreeSet<usize>) -> Result<Metrics> {
    let ont = &world.ontology;
    let mut pairs = Vec::new();
    for id in &task.test {
        for m in &world.corpus.get(id)?.mentions {
            let closure = ont.closure_idx(&ont.indices(&m.concepts)?);
            if closure.iter().any(|c| !seen.contains(c)) {
                pairs.push((clf.predict(&m.feature), task.label(&mention_key(id, m.span))?));
            }
        }
    }
    Ok(Metrics::from_pairs(pairs))
}

/// Distinct direct concepts of the selected instances' mentions that lie
/// outside the illustrative closure union.
pub fn coverage(selected: &[String], world: &World, seen: &BTreeSet<usize>) -> Result<usize> {
    let ont = &world.ontology;
    let mut tail = BTreeSet::new();
    for id in selected {
        for m in &world.corpus.get(id)?.mentions {
            tail.extend(ont.indices(&m.concepts)?.into_iter().filter(|c| !seen.contains(c)));
        }
    }
    Ok(tail.len())
}

/// Outcome of one strategy on one target type.
struct TypeCell {
    test: Metrics,
    unseen: Metrics,
    coverage: usize,
    budget_used: usize,
}

fn run_cell(world: &World, task: &TaskSplit, strategy: Strategy, session: &SessionConfig) -> Result<TypeCell> {
    let parts = world.components();
    let (classifier, selected, test) = match strategy {
        Strategy::Vanilla => {
            let data = augmented_training_set(task, &[], &world.corpus)?;
            let clf = train_classifier(&data, &session.classifier)?;
            let test = crate::session::evaluate_on(&clf, task, &task.test, &world.corpus)?;
            (clf, Vec::new(), test)
        }
        Strategy::Supercd => {
            let plan = plan_session(task, session, parts)?;
            let records = oracle_records(&plan, task, parts)?;
            let result = finalize_session(plan, records, task, session, &world.corpus)?;
            (result.classifier, result.selected, result.test_metrics)
        }
        baseline => {
            let pool = world.corpus.resolve(&task.pool)?;
            let illustrative = augmented_training_set(task, &[], &world.corpus)?;
            let ctx = BaselineContext {
                pool: &pool,
                illustrative: &illustrative,
                classifier: session.classifier,
                seed: session.seed,
            };
            let selected = baseline_select(baseline, &ctx, session.budget)?;
            let plan = plan_from_selection(selected, &world.corpus)?;
            let records = oracle_records(&plan, task, parts)?;
            let result = finalize_session(plan, records, task, session, &world.corpus)?;
            (result.classifier, result.selected, result.test_metrics)
        }
    };
    let seen = illustrative_closure_union(task, world)?;
    Ok(TypeCell {
        test,
        unseen: unseen_metrics(&classifier, task, world, &seen)?,
        coverage: coverage(&selected, world, &seen)?,
        budget_used: selected.len(),
    })
}

/// A plan whose selection came from elsewhere (a baseline).
pub fn plan_from_selection(selected: Vec<String>, corpus: &Corpus) -> Result<SessionPlan> {
    let pending = selected
        .iter()
        .map(|id| Ok(PendingItem { instance_id: id.clone(), mention_keys: corpus.get(id)?.mention_keys() }))
        .collect::<Result<_>>()?;
    Ok(SessionPlan {
        selected,
        pending,
        trace: SessionTrace {
            extract: Vec::new(),
            common_concepts: Default::default(),
            superposition_sets: Vec::new(),
            ordered_queries: Vec::new(),
            picks: Vec::new(),
            fallback: None,
        },
    })
}

/// Task split of type `t` for benchmark seed `seed`.
pub fn benchmark_task(world: &World, spec: &TaskSpec, config: &BenchmarkConfig, seed: u64, t: usize) -> Result<TaskSplit> {
    gen_task(&world.corpus, &world.ontology, spec, config.task.pool_fraction, derive_seed(seed, &format!("task:{t}")))
}

/// Every (seed, strategy) cell, micro-aggregated over the target types.
pub fn run_benchmark(world: &World, config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if config.n_seeds == 0 {
        return Err(Error::Parameter("n_seeds must be >= 1".into()));
    }
    config.session.check()?;
    let specs = default_task_specs(
        &world.ontology,
        config.session.n_types,
        config.task.target_depth,
        config.session.shots,
        config.task.skew,
        config.task.min_source_mentions,
    )?;

    let per_seed: Vec<Vec<BenchmarkRow>> = (0..config.n_seeds as u64)
        .into_par_iter()
        .map(|seed| {
            let tasks: Vec<TaskSplit> = specs
                .iter()
                .enumerate()
                .map(|(t, spec)| benchmark_task(world, spec, config, seed, t))
                .collect::<Result<_>>()?;
            config
                .strategies
                .iter()
                .map(|&strategy| {
                    let mut test = Metrics::default();
                    let mut unseen = Metrics::default();
                    let (mut cov, mut used) = (0, 0);
                    for (t, task) in tasks.iter().enumerate() {
                        let session = SessionConfig {
                            seed: derive_seed(seed, &format!("{strategy}:{t}")),
                            ..config.session.clone()
                        };
                        let cell = run_cell(world, task, strategy, &session).map_err(|e| Error::Cell {
                            seed,
                            strategy: strategy.to_string(),
                            source: Box::new(e),
                        })?;
                        test += cell.test;
                        unseen += cell.unseen;
                        cov += cell.coverage;
                        used += cell.budget_used;
                    }
                    Ok(BenchmarkRow {
                        seed,
                        strategy,
                        f1: test.f1,
                        precision: test.precision,
                        recall: test.recall,
                        unseen_f1: unseen.f1,
                        coverage: cov,
                        budget_used: used,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<BenchmarkRow> = per_seed.into_iter().flatten().collect();
    Ok(BenchmarkReport {
        config: config.clone(),
        types: specs,
        summary: summarize(&rows, &config.strategies),
        rows,
    })
}
