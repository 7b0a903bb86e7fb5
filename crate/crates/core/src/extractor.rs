//! Concept extraction (`C_i = CE(x_i)`) and common-concept aggregation.
//!
//! Two backends: an ontology oracle with configurable omission/spurious
//! noise, and a learned one-vs-rest logistic model over bag-of-token counts
//! of the mention's local context.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::ontology::Ontology;
use crate::rng::{derive_seed, stage_rng};
use crate::synth::Instance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Oracle,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorConfig {
    pub backend: Backend,
    /// Probability that each strict ancestor is omitted (oracle only).
    pub p_drop: f64,
    /// Probability that one spurious concept is appended (oracle only).
    pub p_spur: f64,
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            backend: Backend::Oracle,
            p_drop: 0.1,
            p_spur: 0.05,
            seed: 0,
        }
    }
}

impl ExtractorConfig {
    pub fn check(&self) -> Result<()> {
        for (name, p) in [("p_drop", self.p_drop), ("p_spur", self.p_spur)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Parameter(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// One-vs-rest logistic concept classifier over token counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedExtractor {
    pub vocab: Vec<String>,
    pub concepts: Vec<String>,
    /// `concepts × vocab`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    #[serde(skip)]
    token_index: HashMap<String, usize>,
}

/// Sparse bag-of-token counts.
pub type TokenCounts = Vec<(usize, f64)>;

impl LearnedExtractor {
    pub fn zeros(vocab: Vec<String>, concepts: Vec<String>) -> Self {
        let (v, c) = (vocab.len(), concepts.len());
        let mut model = LearnedExtractor {
            vocab,
            concepts,
            weights: vec![vec![0.0; v]; c],
            bias: vec![0.0; c],
            token_index: HashMap::new(),
        };
        model.reindex();
        model
    }

    fn reindex(&mut self) {
        self.token_index = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn counts<S: AsRef<str>>(&self, tokens: &[S]) -> TokenCounts {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for t in tokens {
            if let Some(&i) = self.token_index.get(t.as_ref()) {
                *acc.entry(i).or_default() += 1.0;
            }
        }
        acc.into_iter().collect()
    }

    fn logit(&self, c: usize, x: &TokenCounts) -> f64 {
        let w = &self.weights[c];
        self.bias[c] + x.iter().map(|&(t, v)| w[t] * v).sum::<f64>()
    }

    /// Per-concept probabilities for a token sequence.
    pub fn scores<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        let x = self.counts(tokens);
        (0..self.concepts.len())
            .map(|c| sigmoid(self.logit(c, &x)))
            .collect()
    }

    pub fn predict<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        self.scores(tokens)
            .into_iter()
            .zip(&self.concepts)
            .filter(|(p, _)| *p >= 0.5)
            .map(|(_, c)| c.clone())
            .collect()
    }

    /// Mean binary cross-entropy over all (example, concept) cells.
    pub fn objective(&self, data: &[(TokenCounts, Vec<bool>)]) -> f64 {
        let cells = (data.len() * self.concepts.len()).max(1) as f64;
        let mut total = 0.0;
        for (x, y) in data {
            for c in 0..self.concepts.len() {
                let z = self.logit(c, x);
                total += softplus(z) - if y[c] { z } else { 0.0 };
            }
        }
        total / cells
    }

    /// Gradient of [`objective`](Self::objective) w.r.t. weights and bias.
    pub fn gradient(&self, data: &[(TokenCounts, Vec<bool>)]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let cells = (data.len() * self.concepts.len()).max(1) as f64;
        let mut gw = vec![vec![0.0; self.vocab.len()]; self.concepts.len()];
        let mut gb = vec![0.0; self.concepts.len()];
        for (x, y) in data {
            for c in 0..self.concepts.len() {
                let g = (sigmoid(self.logit(c, x)) - if y[c] { 1.0 } else { 0.0 }) / cells;
                gb[c] += g;
                for &(t, v) in x {
                    gw[c][t] += g * v;
                }
            }
        }
        (gw, gb)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut model: LearnedExtractor = io::read_json(path)?;
        if model.weights.len() != model.concepts.len() || model.bias.len() != model.concepts.len() {
            return Err(Error::Data("checkpoint weight rows do not match concepts".into()));
        }
        if model.weights.iter().any(|row| row.len() != model.vocab.len()) {
            return Err(Error::Data("checkpoint weight columns do not match vocab".into()));
        }
        model.reindex();
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_json()?.as_bytes())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorTrainParams {
    pub epochs: usize,
    /// Full-batch step size; `None` picks `1/L` from the feature norms, which
    /// makes every step a descent step.
    pub lr: Option<f64>,
}

impl Default for ExtractorTrainParams {
    fn default() -> Self {
        ExtractorTrainParams {
            epochs: 100,
            lr: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExtractorTraining {
    pub model: LearnedExtractor,
    /// Objective before each epoch, then after the last one.
    pub losses: Vec<f64>,
}

/// Fits the learned backend on `(tokens, concepts)` pairs by full-batch
/// gradient descent from zero weights.
pub fn train_extractor(
    pairs: &[(Vec<String>, Vec<String>)],
    ontology: &Ontology,
    params: &ExtractorTrainParams,
) -> Result<ExtractorTraining> {
    if pairs.is_empty() {
        return Err(Error::Data("no training pairs for the concept extractor".into()));
    }
    let mut concept_idx: Vec<usize> = Vec::new();
    for (_, concepts) in pairs {
        for c in concepts {
            concept_idx.push(ontology.idx(c)?);
        }
    }
    concept_idx.sort_unstable();
    concept_idx.dedup();
    let concepts: Vec<String> = concept_idx.iter().map(|&c| ontology.id(c).to_string()).collect();
    let position: HashMap<String, usize> = concepts
        .iter()
        .enumerate()
        .map(|(i, c)| (c.clone(), i))
        .collect();

    let mut vocab: Vec<String> = pairs.iter().flat_map(|(t, _)| t.iter().cloned()).collect();
    vocab.sort_unstable();
    vocab.dedup();

    let mut model = LearnedExtractor::zeros(vocab, concepts);
    let data: Vec<(TokenCounts, Vec<bool>)> = pairs
        .iter()
        .map(|(tokens, cs)| {
            let mut y = vec![false; model.concepts.len()];
            for c in cs {
                y[position[c]] = true;
            }
            (model.counts(tokens), y)
        })
        .collect();

    let lr = match params.lr {
        Some(lr) => lr,
        None => {
            let max_sq = data
                .iter()
                .map(|(x, _)| 1.0 + x.iter().map(|(_, v)| v * v).sum::<f64>())
                .fold(1.0, f64::max);
            4.0 * model.concepts.len() as f64 / max_sq
        }
    };

    let mut losses = Vec::with_capacity(params.epochs + 1);
    for epoch in 0..params.epochs {
        losses.push(model.objective(&data));
        let (gw, gb) = model.gradient(&data);
        for (row, grow) in model.weights.iter_mut().zip(&gw) {
            for (w, g) in row.iter_mut().zip(grow) {
                *w -= lr * g;
            }
        }
        for (b, g) in model.bias.iter_mut().zip(&gb) {
            *b -= lr * g;
        }
        if !losses[epoch].is_finite() {
            return Err(Error::Numeric(format!("extractor loss diverged at epoch {epoch} (lr {lr})")));
        }
    }
    losses.push(model.objective(&data));
    Ok(ExtractorTraining { model, losses })
}

/// `(context tokens, closure concepts)` pairs for every mention in a corpus.
pub fn training_pairs(instances: &[Instance], ontology: &Ontology) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    let mut out = Vec::new();
    for inst in instances {
        for (i, m) in inst.mentions.iter().enumerate() {
            let closure = ontology.closure_idx(&ontology.indices(&m.concepts)?);
            out.push((
                inst.mention_context(i).to_vec(),
                closure.iter().map(|&c| ontology.id(c).to_string()).collect(),
            ));
        }
    }
    Ok(out)
}

/// A configured extractor: the oracle, or the learned model.
#[derive(Debug, Clone)]
pub struct ConceptExtractor {
    pub config: ExtractorConfig,
    pub model: Option<LearnedExtractor>,
}

impl ConceptExtractor {
    pub fn oracle(config: ExtractorConfig) -> Self {
        ConceptExtractor { config, model: None }
    }

    pub fn learned(config: ExtractorConfig, model: LearnedExtractor) -> Self {
        ConceptExtractor {
            config: ExtractorConfig {
                backend: Backend::Learned,
                ..config
            },
            model: Some(model),
        }
    }

    /// Concepts of mention `mention` of `instance`.
    pub fn extract(&self, instance: &Instance, mention: usize, ontology: &Ontology) -> Result<Vec<String>> {
        self.config.check()?;
        let m = instance.mentions.get(mention).ok_or_else(|| {
            Error::Data(format!("instance {} has no mention {mention}", instance.id))
        })?;
        match self.config.backend {
            Backend::Oracle => {
                let seed = derive_seed(self.config.seed, &format!("extract:{}:{mention}", instance.id));
                let mut rng = stage_rng(seed, "oracle-ce");
                let direct = ontology.indices(&m.concepts)?;
                let closure = ontology.closure_idx(&direct);
                let mut out: Vec<String> = m.concepts.clone();
                for &c in &closure {
                    if direct.contains(&c) {
                        continue;
                    }
                    if rng.random::<f64>() >= self.config.p_drop {
                        out.push(ontology.id(c).to_string());
                    }
                }
                if rng.random::<f64>() < self.config.p_spur {
                    let candidates: Vec<usize> = (0..ontology.len())
                        .filter(|c| closure.binary_search(c).is_err())
                        .collect();
                    if !candidates.is_empty() {
                        let c = candidates[rng.random_range(0..candidates.len())];
                        out.push(ontology.id(c).to_string());
                    }
                }
                Ok(out)
            }
            Backend::Learned => {
                let model = self
                    .model
                    .as_ref()
                    .ok_or_else(|| Error::Parameter("learned backend selected without a model".into()))?;
                let out = model.predict(instance.mention_context(mention));
                for c in &out {
                    ontology.idx(c)?;
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommonConceptSet {
    /// Ordered by count desc, corpus frequency desc, id asc.
    pub concepts: Vec<String>,
    /// Appearance counts over the extractor outputs, aligned with `concepts`.
    pub counts: Vec<usize>,
}

impl CommonConceptSet {
    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn count_of(&self, id: &str) -> Option<usize> {
        self.concepts.iter().position(|c| c == id).map(|i| self.counts[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommonParams {
    pub tau: f64,
    pub m_cap: usize,
}

impl Default for CommonParams {
    fn default() -> Self {
        CommonParams { tau: 0.5, m_cap: 8 }
    }
}

/// Concepts appearing in at least `ceil(tau * n)` of the `n` extractor
/// outputs. The ontology root is dropped: every mention is an instance of it,
/// so it can neither discriminate nor be excluded.
pub fn common_concepts(outputs: &[Vec<String>], ontology: &Ontology, params: CommonParams) -> CommonConceptSet {
    let n = outputs.len();
    let threshold = (((params.tau * n as f64) - 1e-9).ceil().max(1.0)) as usize;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for out in outputs {
        let mut distinct: Vec<&str> = out.iter().map(String::as_str).collect();
        distinct.sort_unstable();
        distinct.dedup();
        for c in distinct {
            *counts.entry(c).or_default() += 1;
        }
    }
    let root = ontology.root_id();
    let freq = |id: &str| ontology.idx(id).map(|i| ontology.frequency(i)).unwrap_or(0);
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(c, k)| k >= threshold && c != root)
        .collect();
    kept.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then_with(|| freq(b.0).cmp(&freq(a.0)))
            .then_with(|| a.0.cmp(b.0))
    });
    kept.truncate(params.m_cap);
    CommonConceptSet {
        concepts: kept.iter().map(|(c, _)| c.to_string()).collect(),
        counts: kept.iter().map(|&(_, k)| k).collect(),
    }
}
