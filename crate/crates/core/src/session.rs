//! One active-learning session for one target type: extract concepts from
//! the illustrative mentions, build "A but not B" queries, retrieve pool
//! instances for them, collect annotations and train the augmented model.
//!
//! The session is split into [`plan_session`] (everything up to the pending
//! annotation queue) and [`finalize_session`] so a human annotator can sit
//! between the two; [`run_session`] joins them with the oracle annotator.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StageExt};
use crate::extractor::{common_concepts, CommonConceptSet, CommonParams, ConceptExtractor};
use crate::fsner::{train_classifier, ClassifierParams, Metrics, SpanClassifier};
use crate::ontology::{Ontology, SuperpositionQuery};
use crate::rng::stage_rng;
use crate::sir::{EncodedPool, RetrieverModel};
use crate::superposition::{build_queries, build_sets, order_queries, retriever_tokens, QueryOrdering, SuperpositionSet};
use crate::synth::{is_target, mention_key, Corpus, Instance, TaskSplit};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotatorKind {
    #[default]
    Oracle,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Illustrative shots per type (K).
    pub shots: usize,
    /// Annotatable sentences per type (M).
    pub budget: usize,
    /// Number of target types (N); the total budget is M × N.
    pub n_types: usize,
    pub annotator: AnnotatorKind,
    pub seed: u64,
    pub common: CommonParams,
    pub ordering: QueryOrdering,
    pub classifier: ClassifierParams,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            shots: 5,
            budget: 5,
            n_types: 3,
            annotator: AnnotatorKind::Oracle,
            seed: 0,
            common: CommonParams::default(),
            // Sessions ask about the rarest exclusions first: those sit nearest
            // the illustrative concepts and retrieve the most ambiguous texts.
            ordering: QueryOrdering { descending: false, ..QueryOrdering::default() },
            classifier: ClassifierParams::default(),
        }
    }
}

impl SessionConfig {
    pub fn total_budget(&self) -> usize {
        self.budget * self.n_types
    }

    /// Every offending field, as `field: reason`.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.shots == 0 {
            out.push("shots: must be >= 1".to_string());
        }
        if self.n_types == 0 {
            out.push("n_types: must be >= 1".to_string());
        }
        if !(self.common.tau > 0.0 && self.common.tau <= 1.0) {
            out.push(format!("common.tau: {} outside (0, 1]", self.common.tau));
        }
        if self.common.m_cap == 0 {
            out.push("common.m_cap: must be >= 1".to_string());
        }
        if let Err(e) = self.classifier.check() {
            out.push(format!("classifier: {e}"));
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Parameter(problems.join("; ")))
        }
    }
}

/// Per-mention decisions for one annotated instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub instance_id: String,
    /// mention key → belongs to the target type.
    pub decisions: BTreeMap<String, bool>,
    pub annotator: String,
    /// Unix milliseconds; absent for oracle records so that oracle runs are
    /// reproducible byte for byte.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

/// Everything a session needs besides its task and configuration.
#[derive(Clone, Copy)]
pub struct Components<'a> {
    pub ontology: &'a Ontology,
    pub corpus: &'a Corpus,
    pub extractor: &'a ConceptExtractor,
    pub retriever: &'a RetrieverModel,
}

/// One selection: which query picked which instance with what score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub query: usize,
    pub instance_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedMention {
    pub mention_key: String,
    pub concepts: Vec<String>,
}

/// Intermediate outputs of every selection stage, for audits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub extract: Vec<ExtractedMention>,
    pub common_concepts: CommonConceptSet,
    pub superposition_sets: Vec<SuperpositionSet>,
    pub ordered_queries: Vec<SuperpositionQuery>,
    pub picks: Vec<Pick>,
    /// Why SuperCD selection was replaced by random selection, if it was.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

/// A pool instance waiting for a decision on each of its mentions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingItem {
    pub instance_id: String,
    pub mention_keys: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub selected: Vec<String>,
    pub pending: Vec<PendingItem>,
    pub trace: SessionTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    /// Selected pool instances in selection order.
    pub selected: Vec<String>,
    pub records: Vec<AnnotationRecord>,
    /// Illustrative instances followed by the annotated ones.
    pub augmented: Vec<String>,
    pub trace: SessionTrace,
    pub classifier: SpanClassifier,
    /// Classifier quality on the task's test split.
    pub test_metrics: Metrics,
}

impl SessionResult {
    /// A copy with annotator tags and timestamps blanked, for comparing runs
    /// that differ only in who annotated.
    pub fn without_provenance(&self) -> SessionResult {
        let mut out = self.clone();
        for r in &mut out.records {
            r.annotator.clear();
            r.timestamp = None;
        }
        out
    }
}

/// Round-robin over the ordered queries, each turn taking that query's best
/// not-yet-selected pool instance. With more queries than budget only the
/// first `budget` queries pick, once each.
pub fn select_candidates<S: AsRef<str>>(
    model: &RetrieverModel,
    queries: &[Vec<S>],
    pool: &EncodedPool,
    budget: usize,
) -> Result<Vec<Pick>> {
    let budget = budget.min(pool.len());
    let used = &queries[..queries.len().min(budget)];
    let rankings: Vec<Vec<(usize, f64)>> = used
        .iter()
        .map(|q| Ok(pool.ranking(&model.encode(q)?)))
        .collect::<Result<_>>()?;
    let mut cursors = vec![0usize; rankings.len()];
    let mut taken = HashSet::new();
    let mut picks = Vec::with_capacity(budget);
    'rounds: while picks.len() < budget {
        let mut progressed = false;
        for (qi, ranking) in rankings.iter().enumerate() {
            if picks.len() == budget {
                break 'rounds;
            }
            while let Some(&(pos, score)) = ranking.get(cursors[qi]) {
                cursors[qi] += 1;
                if taken.insert(pos) {
                    picks.push(Pick { query: qi, instance_id: pool.ids()[pos].clone(), score });
                    progressed = true;
                    break;
                }
            }
        }
        if !progressed {
            break;
        }
    }
    Ok(picks)
}

/// Labels each mention by membership of its closure in the target set.
pub fn annotate_oracle(instance: &Instance, target: &[usize], ontology: &Ontology) -> Result<AnnotationRecord> {
    let mut decisions = BTreeMap::new();
    for m in &instance.mentions {
        let closure = ontology.closure_idx(&ontology.indices(&m.concepts)?);
        decisions.insert(mention_key(&instance.id, m.span), is_target(&closure, target));
    }
    Ok(AnnotationRecord { instance_id: instance.id.clone(), decisions, annotator: "oracle".into(), timestamp: None })
}

fn check_task(task: &TaskSplit, corpus: &Corpus) -> Result<()> {
    let mut seen = HashSet::new();
    for id in task.illustrative.iter().chain(&task.pool).chain(&task.test) {
        corpus.position(id)?;
        if !seen.insert(id.as_str()) {
            return Err(Error::Data(format!("instance {id} appears in more than one task split")));
        }
    }
    Ok(())
}

/// Runs extraction through selection and lists what needs annotating.
pub fn plan_session(task: &TaskSplit, config: &SessionConfig, parts: Components<'_>) -> Result<SessionPlan> {
    config.check()?;
    check_task(task, parts.corpus).stage("task")?;
    let ont = parts.ontology;

    let mut extract = Vec::new();
    for id in &task.illustrative {
        let inst = parts.corpus.get(id)?;
        for (i, m) in inst.mentions.iter().enumerate() {
            let key = mention_key(id, m.span);
            if task.label(&key)? {
                let concepts = parts.extractor.extract(inst, i, ont).stage("extract")?;
                extract.push(ExtractedMention { mention_key: key, concepts });
            }
        }
    }
    let outputs: Vec<Vec<String>> = extract.iter().map(|e| e.concepts.clone()).collect();
    let common = common_concepts(&outputs, ont, config.common);
    let mut trace = SessionTrace {
        extract,
        common_concepts: common.clone(),
        superposition_sets: Vec::new(),
        ordered_queries: Vec::new(),
        picks: Vec::new(),
        fallback: None,
    };

    let pool: Vec<&Instance> = parts.corpus.resolve(&task.pool)?;
    let selected: Vec<String> = match build_sets(&common) {
        Ok(sets) => {
            let queries = order_queries(&build_queries(&sets), &common, ont, config.ordering);
            let tokens: Vec<Vec<String>> =
                queries.iter().map(|q| retriever_tokens(q, ont)).collect::<Result<_>>().stage("query")?;
            let encoded = EncodedPool::new(parts.retriever, &pool).stage("retrieve")?;
            let picks = select_candidates(parts.retriever, &tokens, &encoded, config.budget).stage("select")?;
            trace.superposition_sets = sets;
            trace.ordered_queries = queries;
            trace.picks = picks;
            trace.picks.iter().map(|p| p.instance_id.clone()).collect()
        }
        Err(Error::InsufficientConcepts { found }) => {
            trace.fallback = Some(format!("{found} common concept(s); selected randomly"));
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.shuffle(&mut stage_rng(config.seed, "session-fallback"));
            order.truncate(config.budget);
            order.into_iter().map(|i| pool[i].id.clone()).collect()
        }
        Err(e) => return Err(e.at_stage("superposition")),
    };

    let pending = selected
        .iter()
        .map(|id: &String| {
            Ok(PendingItem { instance_id: id.clone(), mention_keys: parts.corpus.get(id)?.mention_keys() })
        })
        .collect::<Result<_>>()?;
    Ok(SessionPlan { selected, pending, trace })
}

/// Oracle records for every pending instance.
pub fn oracle_records(plan: &SessionPlan, task: &TaskSplit, parts: Components<'_>) -> Result<Vec<AnnotationRecord>> {
    let target = task.target_idx(parts.ontology)?;
    plan.selected
        .iter()
        .map(|id| annotate_oracle(parts.corpus.get(id)?, &target, parts.ontology))
        .collect()
}

/// Labeled mention features of the illustrative set plus the annotated
/// instances.
pub fn augmented_training_set(
    task: &TaskSplit,
    records: &[AnnotationRecord],
    corpus: &Corpus,
) -> Result<Vec<(Vec<f64>, bool)>> {
    let mut data = Vec::new();
    for id in &task.illustrative {
        for m in &corpus.get(id)?.mentions {
            data.push((m.feature.clone(), task.label(&mention_key(id, m.span))?));
        }
    }
    for r in records {
        for m in &corpus.get(&r.instance_id)?.mentions {
            let key = mention_key(&r.instance_id, m.span);
            let label = r
                .decisions
                .get(&key)
                .ok_or_else(|| Error::Data(format!("annotation of {} misses mention {key}", r.instance_id)))?;
            data.push((m.feature.clone(), *label));
        }
    }
    Ok(data)
}

/// Test-split metrics of a classifier.
pub fn evaluate_on(clf: &SpanClassifier, task: &TaskSplit, ids: &[String], corpus: &Corpus) -> Result<Metrics> {
    let mut pairs = Vec::new();
    for id in ids {
        for m in &corpus.get(id)?.mentions {
            pairs.push((clf.predict(&m.feature), task.label(&mention_key(id, m.span))?));
        }
    }
    Ok(Metrics::from_pairs(pairs))
}

/// Checks that the records cover exactly the planned instances, then trains
/// and evaluates the augmented classifier.
pub fn finalize_session(
    plan: SessionPlan,
    mut records: Vec<AnnotationRecord>,
    task: &TaskSplit,
    config: &SessionConfig,
    corpus: &Corpus,
) -> Result<SessionResult> {
    let position: BTreeMap<&str, usize> =
        plan.selected.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut covered = BTreeSet::new();
    for r in &records {
        let Some(&i) = position.get(r.instance_id.as_str()) else {
            return Err(Error::Data(format!("annotation for unselected instance {}", r.instance_id)));
        };
        if !covered.insert(i) {
            return Err(Error::Data(format!("instance {} annotated twice", r.instance_id)));
        }
        let expected: BTreeSet<&String> = plan.pending[i].mention_keys.iter().collect();
        let got: BTreeSet<&String> = r.decisions.keys().collect();
        if expected != got {
            return Err(Error::Data(format!("annotation of {} does not match its mentions", r.instance_id)));
        }
    }
    if covered.len() != plan.selected.len() {
        return Err(Error::Data(format!(
            "{} of {} selected instances are annotated",
            covered.len(),
            plan.selected.len()
        )));
    }
    records.sort_by_key(|r| position[r.instance_id.as_str()]);

    let data = augmented_training_set(task, &records, corpus).stage("augment")?;
    let classifier = train_classifier(&data, &config.classifier).stage("train")?;
    let test_metrics = evaluate_on(&classifier, task, &task.test, corpus).stage("evaluate")?;
    let augmented = task.illustrative.iter().chain(&plan.selected).cloned().collect();
    Ok(SessionResult { selected: plan.selected, records, augmented, trace: plan.trace, classifier, test_metrics })
}

/// The whole pipeline with the oracle annotator.
pub fn run_session(task: &TaskSplit, config: &SessionConfig, parts: Components<'_>) -> Result<SessionResult> {
    let plan = plan_session(task, config, parts)?;
    let records = oracle_records(&plan, task, parts).stage("annotate")?;
    finalize_session(plan, records, task, config, parts.corpus)
}
