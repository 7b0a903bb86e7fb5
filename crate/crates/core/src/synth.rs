//! Seeded synthetic taxonomies, corpora and few-shot tasks.
//!
//! Sentences are laid out so that text is informative of concepts: every
//! mention is followed by one signature token per concept in its closure.
//! Mention features are noisy sums of per-concept latent vectors, so mentions
//! with overlapping closures are close in feature space.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::ontology::{Concept, Ontology, RawOntology};
use crate::rng::stage_rng;

const FILLERS: [&str; 24] = [
    "the", "a", "of", "in", "at", "and", "was", "is", "to", "with", "from", "near", "for", "by",
    "on", "its", "their", "which", "has", "been", "new", "local", "said", "after",
];

/// Number of distinct entity surface tokens (`w0000`..).
const SURFACE_VOCAB: usize = 3000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OntologyParams {
    pub n_concepts: usize,
    /// Maximum number of subclass hops from the root.
    pub depth: usize,
    pub branching: (usize, usize),
    pub extra_parent_prob: f64,
    pub seed: u64,
}

impl Default for OntologyParams {
    fn default() -> Self {
        OntologyParams {
            n_concepts: 200,
            depth: 5,
            branching: (2, 4),
            extra_parent_prob: 0.1,
            seed: 7,
        }
    }
}

fn capacity(depth: usize, hi: usize) -> usize {
    let mut total: usize = 0;
    let mut level: usize = 1;
    for _ in 0..=depth {
        total = total.saturating_add(level);
        level = level.saturating_mul(hi);
    }
    total
}

pub fn gen_ontology(params: &OntologyParams) -> Result<Ontology> {
    let OntologyParams {
        n_concepts: n,
        depth,
        branching: (lo, hi),
        extra_parent_prob,
        seed,
    } = *params;
    if depth < 2 || n < depth {
        return Err(Error::Parameter(format!(
            "need n_concepts >= depth >= 2, got n_concepts={n}, depth={depth}"
        )));
    }
    if lo == 0 || lo > hi {
        return Err(Error::Parameter(format!("bad branching range [{lo}, {hi}]")));
    }
    if !(0.0..=1.0).contains(&extra_parent_prob) {
        return Err(Error::Parameter(format!(
            "extra_parent_prob {extra_parent_prob} outside [0, 1]"
        )));
    }
    if capacity(depth, hi) < n {
        return Err(Error::Parameter(format!(
            "branching at most {hi} cannot reach {n} concepts within depth {depth}"
        )));
    }

    let mut rng = stage_rng(seed, "ontology");
    let mut level = vec![0usize];
    let mut parent: Vec<Option<usize>> = vec![None];
    let mut n_children = vec![0usize];

    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        if level.len() == n {
            break;
        }
        if level[u] == depth {
            continue;
        }
        let b = rng.random_range(lo..=hi).min(n - level.len());
        for _ in 0..b {
            let c = level.len();
            level.push(level[u] + 1);
            parent.push(Some(u));
            n_children.push(0);
            n_children[u] += 1;
            queue.push_back(c);
        }
    }
    // Random draws may exhaust the frontier early; top up breadth-first
    // within the branching cap.
    while level.len() < n {
        let before = level.len();
        for u in 0..before {
            if level.len() == n {
                break;
            }
            if level[u] < depth && n_children[u] < hi {
                level.push(level[u] + 1);
                parent.push(Some(u));
                n_children.push(0);
                n_children[u] += 1;
            }
        }
        if level.len() == before {
            return Err(Error::Parameter(format!(
                "cannot place {n} concepts within depth {depth}"
            )));
        }
    }

    let mut by_level: Vec<Vec<usize>> = vec![Vec::new(); depth + 1];
    for (i, &l) in level.iter().enumerate() {
        by_level[l].push(i);
    }

    let mut raw = RawOntology::default();
    for i in 0..n {
        raw.concepts.push(Concept::new(format!("C{i:04}"), format!("concept{i:04}")));
    }
    let mut extra_rng = stage_rng(seed, "ontology-extra-parents");
    for i in 1..n {
        let p = parent[i].expect("non-root");
        raw.edges.push((format!("C{i:04}"), format!("C{p:04}")));
        let roll: f64 = extra_rng.random();
        if roll < extra_parent_prob {
            let candidates: Vec<usize> = by_level[level[i] - 1]
                .iter()
                .copied()
                .filter(|&c| c != p)
                .collect();
            if let Some(&q) = candidates.get(extra_rng.random_range(0..candidates.len().max(1))) {
                raw.edges.push((format!("C{i:04}"), format!("C{q:04}")));
            }
        }
    }
    Ontology::from_raw(raw)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mention {
    /// Token span, end exclusive.
    pub span: (usize, usize),
    /// Direct (gold) concepts.
    pub concepts: Vec<String>,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub tokens: Vec<String>,
    pub mentions: Vec<Mention>,
}

pub fn mention_key(instance_id: &str, span: (usize, usize)) -> String {
    format!("{instance_id}:{}:{}", span.0, span.1)
}

impl Instance {
    pub fn mention_keys(&self) -> Vec<String> {
        self.mentions
            .iter()
            .map(|m| mention_key(&self.id, m.span))
            .collect()
    }

    /// Tokens from the start of mention `i` up to the next mention (or the
    /// end of the sentence): the mention plus its local context.
    pub fn mention_context(&self, i: usize) -> &[String] {
        let start = self.mentions[i].span.0;
        let end = self
            .mentions
            .iter()
            .map(|m| m.span.0)
            .filter(|&s| s > start)
            .min()
            .unwrap_or(self.tokens.len());
        &self.tokens[start..end]
    }

    /// Checks token and span invariants.
    pub fn check(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Data(format!("instance {} has no tokens", self.id)));
        }
        let mut spans: Vec<(usize, usize)> = self.mentions.iter().map(|m| m.span).collect();
        spans.sort_unstable();
        for (s, e) in &spans {
            if s >= e || *e > self.tokens.len() {
                return Err(Error::Data(format!("instance {}: bad span [{s}, {e})", self.id)));
            }
        }
        if spans.windows(2).any(|w| w[0].1 > w[1].0) {
            return Err(Error::Data(format!("instance {}: overlapping spans", self.id)));
        }
        if self.mentions.iter().any(|m| m.concepts.is_empty()) {
            return Err(Error::Data(format!("instance {}: mention without concepts", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    instances: Vec<Instance>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(instances: Vec<Instance>) -> Result<Corpus> {
        let mut index = HashMap::with_capacity(instances.len());
        for (i, inst) in instances.iter().enumerate() {
            inst.check()?;
            if index.insert(inst.id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate instance id {}", inst.id)));
            }
        }
        Ok(Corpus { instances, index })
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn position(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownInstance(id.to_string()))
    }

    pub fn get(&self, id: &str) -> Result<&Instance> {
        Ok(&self.instances[self.position(id)?])
    }

    pub fn resolve<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<&Instance>> {
        ids.iter().map(|id| self.get(id.as_ref())).collect()
    }

    /// Closure (concept indices, sorted) of every mention, per instance.
    pub fn closures(&self, ontology: &Ontology) -> Result<Vec<Vec<Vec<usize>>>> {
        self.instances
            .iter()
            .map(|inst| {
                inst.mentions
                    .iter()
                    .map(|m| Ok(ontology.closure_idx(&ontology.indices(&m.concepts)?)))
                    .collect()
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        io::to_jsonl(&self.instances).expect("plain records")
    }

    pub fn load(path: &Path) -> Result<Corpus> {
        Corpus::new(io::read_jsonl(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_jsonl().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusParams {
    pub n_sentences: usize,
    pub zipf_s: f64,
    pub signature_tokens_per_concept: usize,
    pub noise_sigma: f64,
    pub d_f: usize,
    /// Probability that a sentence carries a second mention.
    pub second_mention_prob: f64,
    pub seed: u64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            n_sentences: 20_000,
            zipf_s: 1.1,
            signature_tokens_per_concept: 2,
            noise_sigma: 0.05,
            d_f: 32,
            second_mention_prob: 0.5,
            seed: 3,
        }
    }
}

/// Lowercase, whitespace-free form of a concept name.
pub fn name_slug(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("_")
}

/// The `j`-th signature token of a concept. Token 0 is the name slug itself,
/// which is what ties sentence text to query utterances.
pub fn signature_token(name: &str, j: usize) -> String {
    let slug = name_slug(name);
    if j == 0 {
        slug
    } else {
        format!("{slug}#{j}")
    }
}

/// Leaves in Zipf rank order (rank 1 first) for a given corpus seed.
pub fn zipf_leaf_order(ontology: &Ontology, seed: u64) -> Vec<usize> {
    let mut leaves = ontology.leaves();
    leaves.shuffle(&mut stage_rng(seed, "zipf-rank"));
    leaves
}

/// Per-concept latent vectors, `N(0, 1/d_f)` per coordinate.
pub fn latent_vectors(ontology: &Ontology, d_f: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stage_rng(seed, "latent");
    let normal = Normal::new(0.0, 1.0 / (d_f as f64).sqrt()).expect("positive std");
    (0..ontology.len())
        .map(|_| (0..d_f).map(|_| normal.sample(&mut rng)).collect())
        .collect()
}

/// Generates a corpus and returns it with a copy of the ontology whose
/// `corpus_frequency` counts mentions whose closure contains each concept.
pub fn gen_corpus(ontology: &Ontology, params: &CorpusParams) -> Result<(Ontology, Corpus)> {
    if params.n_sentences == 0 {
        return Err(Error::Parameter("n_sentences must be >= 1".into()));
    }
    if !(params.zipf_s > 0.0) {
        return Err(Error::Parameter(format!("zipf_s must be > 0, got {}", params.zipf_s)));
    }
    if params.d_f == 0 || params.signature_tokens_per_concept == 0 {
        return Err(Error::Parameter(
            "d_f and signature_tokens_per_concept must be >= 1".into(),
        ));
    }
    if !(params.noise_sigma >= 0.0) {
        return Err(Error::Parameter("noise_sigma must be >= 0".into()));
    }

    let latent = latent_vectors(ontology, params.d_f, params.seed);
    let order = zipf_leaf_order(ontology, params.seed);
    let weights: Vec<f64> = (1..=order.len())
        .map(|r| 1.0 / (r as f64).powf(params.zipf_s))
        .collect();
    let leaf_dist = WeightedIndex::new(&weights).map_err(|e| Error::Parameter(e.to_string()))?;
    let noise = Normal::new(0.0, params.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Parameter(e.to_string()))?;
    let clamp = 3.0 * params.noise_sigma;

    let mut rng = stage_rng(params.seed, "corpus");
    let mut freq = vec![0u64; ontology.len()];
    let mut instances = Vec::with_capacity(params.n_sentences);

    for s in 0..params.n_sentences {
        let n_mentions = if rng.random_bool(params.second_mention_prob) { 2 } else { 1 };
        let mut tokens: Vec<String> = Vec::new();
        for _ in 0..rng.random_range(0..=2) {
            tokens.push(FILLERS[rng.random_range(0..FILLERS.len())].to_string());
        }
        let mut mentions = Vec::with_capacity(n_mentions);
        for _ in 0..n_mentions {
            let leaf = order[leaf_dist.sample(&mut rng)];
            let start = tokens.len();
            for _ in 0..rng.random_range(1..=3) {
                tokens.push(format!("w{:04}", rng.random_range(0..SURFACE_VOCAB)));
            }
            let span = (start, tokens.len());

            let mut closure = ontology.ancestors_of(leaf).to_vec();
            closure.shuffle(&mut rng);
            for &c in &closure {
                let j = rng.random_range(0..params.signature_tokens_per_concept);
                tokens.push(signature_token(ontology.name(c), j));
                freq[c] += 1;
            }
            for _ in 0..rng.random_range(1..=3) {
                tokens.push(FILLERS[rng.random_range(0..FILLERS.len())].to_string());
            }

            let mut feature = vec![0.0; params.d_f];
            for &c in ontology.ancestors_of(leaf) {
                for (f, z) in feature.iter_mut().zip(&latent[c]) {
                    *f += z;
                }
            }
            if params.noise_sigma > 0.0 {
                for f in feature.iter_mut() {
                    *f += noise.sample(&mut rng).clamp(-clamp, clamp);
                }
            }
            normalize(&mut feature);
            mentions.push(Mention {
                span,
                concepts: vec![ontology.id(leaf).to_string()],
                feature,
            });
        }
        instances.push(Instance {
            id: format!("s{s:06}"),
            tokens,
            mentions,
        });
    }

    Ok((ontology.with_frequencies(&freq)?, Corpus::new(instances)?))
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Concepts making up the target type; a mention is positive when its
    /// closure meets this set.
    pub target_concepts: BTreeSet<String>,
    /// Concept the skewed illustrative shots are drawn from.
    pub illustrative_source: String,
    pub k: usize,
    pub skew: f64,
}

impl TaskSpec {
    /// Target type = subtree of `root`, shots drawn from `source`'s subtree.
    pub fn subtree(ontology: &Ontology, root: &str, source: &str, k: usize, skew: f64) -> Result<Self> {
        let r = ontology.idx(root)?;
        ontology.idx(source)?;
        Ok(TaskSpec {
            target_concepts: ontology.ids_of(&ontology.subtree_idx(r)),
            illustrative_source: source.to_string(),
            k,
            skew,
        })
    }

    fn check(&self, ontology: &Ontology) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Parameter("K must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.skew) {
            return Err(Error::Parameter(format!("skew {} outside [0, 1]", self.skew)));
        }
        for c in &self.target_concepts {
            ontology.idx(c)?;
        }
        ontology.idx(&self.illustrative_source)?;
        if !self.target_concepts.contains(&self.illustrative_source) {
            return Err(Error::Parameter(format!(
                "illustrative source {} is not part of the target type",
                self.illustrative_source
            )));
        }
        Ok(())
    }
}

/// Illustrative / pool / test partition of a corpus for one target type.
/// Serializes to the task file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSplit {
    pub target: Vec<String>,
    pub illustrative: Vec<String>,
    pub pool: Vec<String>,
    pub test: Vec<String>,
    /// Gold labels of illustrative and test mentions, keyed `id:start:end`.
    pub labels: BTreeMap<String, bool>,
}

impl TaskSplit {
    pub fn load(path: &Path) -> Result<TaskSplit> {
        io::read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, io::to_json_pretty(self)?.as_bytes())
    }

    pub fn target_idx(&self, ontology: &Ontology) -> Result<Vec<usize>> {
        let mut t = ontology.indices(&self.target)?;
        t.sort_unstable();
        Ok(t)
    }

    pub fn label(&self, key: &str) -> Result<bool> {
        self.labels
            .get(key)
            .copied()
            .ok_or_else(|| Error::Data(format!("no gold label for mention {key}")))
    }
}

/// Whether a mention with this (sorted) closure belongs to the target type.
pub fn is_target(closure: &[usize], target: &[usize]) -> bool {
    target.iter().any(|t| closure.binary_search(t).is_ok())
}

pub fn gen_task(
    corpus: &Corpus,
    ontology: &Ontology,
    spec: &TaskSpec,
    pool_fraction: f64,
    seed: u64,
) -> Result<TaskSplit> {
    spec.check(ontology)?;
    if !(0.0..=1.0).contains(&pool_fraction) {
        return Err(Error::Parameter(format!("pool_fraction {pool_fraction} outside [0, 1]")));
    }
    let mut target: Vec<usize> = spec
        .target_concepts
        .iter()
        .map(|c| ontology.idx(c))
        .collect::<Result<_>>()?;
    target.sort_unstable();
    let source = ontology.idx(&spec.illustrative_source)?;

    let closures = corpus.closures(ontology)?;
    let mut target_pos = Vec::new();
    let mut source_pos = Vec::new();
    for (i, mentions) in closures.iter().enumerate() {
        let positives: Vec<&Vec<usize>> = mentions.iter().filter(|c| is_target(c, &target)).collect();
        if positives.is_empty() {
            continue;
        }
        target_pos.push(i);
        if positives.iter().all(|c| c.binary_search(&source).is_ok()) {
            source_pos.push(i);
        }
    }
    if source_pos.len() < spec.k {
        return Err(Error::Data(format!(
            "need {} positives of {} but only {} available",
            spec.k,
            spec.illustrative_source,
            source_pos.len()
        )));
    }

    let mut rng = stage_rng(seed, "task");
    source_pos.shuffle(&mut rng);
    target_pos.shuffle(&mut rng);
    let mut chosen: Vec<usize> = Vec::with_capacity(spec.k);
    let mut taken = vec![false; corpus.len()];
    let (mut si, mut ti) = (0usize, 0usize);
    fn next(list: &[usize], cursor: &mut usize, taken: &[bool]) -> Option<usize> {
        while *cursor < list.len() {
            let c = list[*cursor];
            *cursor += 1;
            if !taken[c] {
                return Some(c);
            }
        }
        None
    }
    while chosen.len() < spec.k {
        let from_source = rng.random_bool(spec.skew);
        let pick = if from_source {
            next(&source_pos, &mut si, &taken)
        } else {
            next(&target_pos, &mut ti, &taken)
        };
        let pick = match pick.or_else(|| next(&source_pos, &mut si, &taken)) {
            Some(p) => p,
            None => {
                return Err(Error::Data(format!(
                    "ran out of positives after {} illustrative instances",
                    chosen.len()
                )))
            }
        };
        taken[pick] = true;
        chosen.push(pick);
    }

    let mut rest: Vec<usize> = (0..corpus.len()).filter(|&i| !taken[i]).collect();
    rest.shuffle(&mut rng);
    let n_pool = ((rest.len() as f64) * pool_fraction).round() as usize;
    let (pool, test) = rest.split_at(n_pool.min(rest.len()));
    let mut pool = pool.to_vec();
    let mut test = test.to_vec();
    pool.sort_unstable();
    test.sort_unstable();

    let mut labels = BTreeMap::new();
    for &i in chosen.iter().chain(test.iter()) {
        let inst = &corpus.instances()[i];
        for (m, closure) in inst.mentions.iter().zip(&closures[i]) {
            labels.insert(mention_key(&inst.id, m.span), is_target(closure, &target));
        }
    }
    let ids = |v: &[usize]| -> Vec<String> {
        v.iter().map(|&i| corpus.instances()[i].id.clone()).collect()
    };
    Ok(TaskSplit {
        target: target.iter().map(|&t| ontology.id(t).to_string()).collect(),
        illustrative: ids(&chosen),
        pool: ids(&pool),
        test: ids(&test),
        labels,
    })
}

/// Picks up to `n_types` disjoint subtree-shaped target types rooted at
/// `target_depth`, each with its most frequent child as illustrative source.
/// Candidates need at least two children and `min_source_mentions` mentions
/// under the source.
pub fn default_task_specs(
    ontology: &Ontology,
    n_types: usize,
    target_depth: usize,
    k: usize,
    skew: f64,
    min_source_mentions: u64,
) -> Result<Vec<TaskSpec>> {
    let mut candidates: Vec<usize> = (0..ontology.len())
        .filter(|&c| ontology.depth(c) == target_depth && ontology.children(c).len() >= 2)
        .collect();
    candidates.sort_by(|&a, &b| {
        ontology
            .frequency(b)
            .cmp(&ontology.frequency(a))
            .then(a.cmp(&b))
    });
    let mut used = vec![false; ontology.len()];
    let mut specs = Vec::new();
    for c in candidates {
        if specs.len() == n_types {
            break;
        }
        let subtree = ontology.subtree_idx(c);
        if subtree.iter().any(|&s| used[s]) {
            continue;
        }
        let source = ontology
            .children(c)
            .iter()
            .copied()
            .max_by(|&a, &b| {
                ontology
                    .frequency(a)
                    .cmp(&ontology.frequency(b))
                    .then(b.cmp(&a))
            })
            .expect("has children");
        if ontology.frequency(source) < min_source_mentions {
            continue;
        }
        for s in subtree {
            used[s] = true;
        }
        specs.push(TaskSpec::subtree(
            ontology,
            ontology.id(c),
            ontology.id(source),
            k,
            skew,
        )?);
    }
    if specs.len() < n_types {
        return Err(Error::Data(format!(
            "only {} of {n_types} target types qualify at depth {target_depth}",
            specs.len()
        )));
    }
    Ok(specs)
}
