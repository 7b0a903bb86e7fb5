use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::seq::{IndexedRandom, IteratorRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::ontology::{Ontology, SuperpositionQuery};
use crate::rng::stage_rng;
use crate::superposition::retriever_tokens;
use crate::synth::Corpus;

use super::model::{EncodedPair, RetrieverModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NegativeKind {
    /// An instance with a mention of the excluded concept.
    #[serde(rename = "excl")]
    Excluded,
    #[serde(rename = "rand")]
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Negative {
    pub id: String,
    pub kind: NegativeKind,
}

/// A query, one instance satisfying it, and instances that do not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub query: SuperpositionQuery,
    #[serde(rename = "pos")]
    pub positive: String,
    #[serde(rename = "negs")]
    pub negatives: Vec<Negative>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetParams {
    pub n_pairs: usize,
    pub n_neg_excluded: usize,
    pub n_neg_random: usize,
    pub max_included: usize,
    /// Also list the sampled target concept among the included ones.
    pub include_target: bool,
    pub seed: u64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            n_pairs: 10_000,
            n_neg_excluded: 10,
            n_neg_random: 10,
            max_included: 4,
            include_target: false,
            seed: 11,
        }
    }
}

impl DatasetParams {
    pub fn check(&self) -> Result<()> {
        if self.max_included == 0 {
            return Err(Error::Parameter("max_included must be >= 1".into()));
        }
        if self.n_neg_excluded + self.n_neg_random == 0 {
            return Err(Error::Parameter("at least one negative per pair is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SirDataset {
    pub pairs: Vec<TrainingPair>,
    /// Draws abandoned because no sibling outside the mention closure exists.
    pub skipped: usize,
    /// Emitted pairs with fewer negatives than requested.
    pub short_negatives: usize,
    pub requested: usize,
}

impl SirDataset {
    pub fn warnings(&self) -> usize {
        self.skipped + self.short_negatives + self.missing()
    }

    /// Requested pairs that were not produced.
    pub fn missing(&self) -> usize {
        self.requested.saturating_sub(self.pairs.len())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        io::to_jsonl(&self.pairs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_jsonl()?.as_bytes())
    }
}

pub fn load_pairs(path: &Path) -> Result<Vec<TrainingPair>> {
    io::read_jsonl(path)
}

/// Closure-indexed view of a corpus used to test queries against instances.
pub struct CorpusIndex<'a> {
    pub ontology: &'a Ontology,
    pub corpus: &'a Corpus,
    /// Per instance, per mention: sorted closure indices.
    pub closures: Vec<Vec<Vec<usize>>>,
    /// Per concept: instances with at least one mention under it.
    pub by_concept: Vec<Vec<usize>>,
}

impl<'a> CorpusIndex<'a> {
    pub fn new(ontology: &'a Ontology, corpus: &'a Corpus) -> Result<Self> {
        let closures = corpus.closures(ontology)?;
        let mut by_concept = vec![Vec::new(); ontology.len()];
        for (i, inst) in closures.iter().enumerate() {
            let seen: BTreeSet<usize> = inst.iter().flatten().copied().collect();
            for c in seen {
                by_concept[c].push(i);
            }
        }
        Ok(CorpusIndex { ontology, corpus, closures, by_concept })
    }

    /// Whether some mention of instance `i` satisfies the query.
    pub fn satisfies(&self, i: usize, excluded: usize, included: &[usize]) -> bool {
        self.closures[i]
            .iter()
            .any(|cl| Ontology::satisfies_closure(cl, excluded, included))
    }

    pub fn satisfies_query(&self, i: usize, query: &SuperpositionQuery) -> Result<bool> {
        let e = self.ontology.idx(&query.excluded)?;
        let inc = self.ontology.indices(&query.included)?;
        Ok(self.satisfies(i, e, &inc))
    }

    pub fn mentions_concept(&self, i: usize, c: usize) -> bool {
        self.closures[i].iter().any(|cl| cl.binary_search(&c).is_ok())
    }
}

/// Samples contrastive training pairs: the excluded concept is a sibling of a
/// concept the positive mention has, the included list starts with a parent
/// they share and is padded with ancestors/descendants of the excluded one.
pub fn build_dataset(ontology: &Ontology, corpus: &Corpus, params: &DatasetParams) -> Result<SirDataset> {
    params.check()?;
    let mut out = SirDataset { pairs: Vec::new(), skipped: 0, short_negatives: 0, requested: params.n_pairs };
    if params.n_pairs == 0 {
        return Ok(out);
    }
    if corpus.is_empty() {
        return Err(Error::Data("cannot build a retriever dataset from an empty corpus".into()));
    }
    let index = CorpusIndex::new(ontology, corpus)?;
    let root = ontology.root();
    let mut rng = stage_rng(params.seed, "sir-dataset");
    let max_draws = params.n_pairs * 20 + 100;
    let mut draws = 0;

    while out.pairs.len() < params.n_pairs && draws < max_draws {
        draws += 1;
        let i = rng.random_range(0..corpus.len());
        let closures = &index.closures[i];
        if closures.is_empty() {
            out.skipped += 1;
            continue;
        }
        let closure = &closures[rng.random_range(0..closures.len())];
        let targets: Vec<usize> = closure.iter().copied().filter(|&c| c != root).collect();
        if targets.is_empty() {
            out.skipped += 1;
            continue;
        }

        let mut picked = None;
        for _ in 0..10 {
            let t = *targets.choose(&mut rng).expect("non-empty");
            let sibs: Vec<usize> = ontology
                .siblings_idx(t)
                .into_iter()
                .filter(|s| closure.binary_search(s).is_err())
                .collect();
            if let Some(&e) = sibs.choose(&mut rng) {
                picked = Some((t, e));
                break;
            }
        }
        let Some((t, e)) = picked else {
            out.skipped += 1;
            continue;
        };

        let shared: Vec<usize> = ontology
            .parents(t)
            .iter()
            .copied()
            .filter(|p| ontology.parents(e).contains(p))
            .collect();
        let parent = *shared.choose(&mut rng).expect("siblings share a parent");
        let mut included = vec![parent];
        let extra: BTreeSet<usize> = ontology
            .ancestors_of(e)
            .iter()
            .copied()
            .chain(ontology.descendants_idx(e))
            .filter(|&c| c != e && c != root && c != parent)
            .collect();
        let mut extra = extra.into_iter().choose_multiple(&mut rng, params.max_included - 1);
        // choose_multiple does not promise an order; fix one for reproducibility
        extra.sort_unstable();
        included.extend(extra);
        if params.include_target && !included.contains(&t) {
            included.push(t);
        }

        debug_assert!(index.satisfies(i, e, &included));
        let mut taken: HashSet<usize> = HashSet::from([i]);
        let mut negatives = Vec::new();
        let candidates = &index.by_concept[e];
        let mut tries = 0;
        let mut n_excl = 0;
        while n_excl < params.n_neg_excluded && tries < params.n_neg_excluded * 10 && !candidates.is_empty() {
            tries += 1;
            let j = *candidates.choose(&mut rng).expect("non-empty");
            if !taken.contains(&j) && !index.satisfies(j, e, &included) {
                taken.insert(j);
                negatives.push(Negative { id: corpus.instances()[j].id.clone(), kind: NegativeKind::Excluded });
                n_excl += 1;
            }
        }
        let mut tries = 0;
        let mut n_rand = 0;
        while n_rand < params.n_neg_random && tries < params.n_neg_random * 10 {
            tries += 1;
            let j = rng.random_range(0..corpus.len());
            if !taken.contains(&j) && !index.satisfies(j, e, &included) {
                taken.insert(j);
                negatives.push(Negative { id: corpus.instances()[j].id.clone(), kind: NegativeKind::Random });
                n_rand += 1;
            }
        }
        if negatives.is_empty() {
            out.skipped += 1;
            continue;
        }
        if n_excl < params.n_neg_excluded || n_rand < params.n_neg_random {
            out.short_negatives += 1;
        }
        out.pairs.push(TrainingPair {
            query: SuperpositionQuery {
                excluded: ontology.id(e).to_string(),
                included: included.iter().map(|&c| ontology.id(c).to_string()).collect(),
            },
            positive: corpus.instances()[i].id.clone(),
            negatives,
        });
    }
    if out.warnings() > 0 {
        log::warn!(
            "retriever dataset: {} pairs, {} skipped draws, {} pairs short of negatives, {} missing",
            out.pairs.len(),
            out.skipped,
            out.short_negatives,
            out.missing()
        );
    }
    Ok(out)
}

/// Checks the pair invariants against the corpus: the positive satisfies
/// the query, every negative fails it, excluded-kind negatives mention the
/// excluded concept.
pub fn check_pair(index: &CorpusIndex<'_>, pair: &TrainingPair) -> Result<()> {
    pair.query.check()?;
    let bad = |why: String| Err(Error::Data(format!("training pair for {}: {why}", pair.positive)));
    if pair.negatives.is_empty() {
        return bad("no negatives".into());
    }
    let pos = index.corpus.position(&pair.positive)?;
    if !index.satisfies_query(pos, &pair.query)? {
        return bad("positive fails the query".into());
    }
    let e = index.ontology.idx(&pair.query.excluded)?;
    for neg in &pair.negatives {
        let j = index.corpus.position(&neg.id)?;
        if index.satisfies_query(j, &pair.query)? {
            return bad(format!("negative {} satisfies the query", neg.id));
        }
        if neg.kind == NegativeKind::Excluded && !index.mentions_concept(j, e) {
            return bad(format!("negative {} lacks the excluded concept", neg.id));
        }
    }
    Ok(())
}

/// Token ids for every pair, ready for training.
pub fn encode_pairs(
    model: &RetrieverModel,
    pairs: &[TrainingPair],
    corpus: &Corpus,
    ontology: &Ontology,
) -> Result<Vec<EncodedPair>> {
    pairs
        .iter()
        .map(|p| {
            Ok(EncodedPair {
                query: model.token_ids(&retriever_tokens(&p.query, ontology)?),
                positive: model.token_ids(&corpus.get(&p.positive)?.tokens),
                negatives: p
                    .negatives
                    .iter()
                    .map(|n| Ok(model.token_ids(&corpus.get(&n.id)?.tokens)))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::locations;
    use crate::synth::{Instance, Mention};

    fn inst(id: &str, tokens: &str, concept: &str) -> Instance {
        let tokens: Vec<String> = tokens.split(' ').map(String::from).collect();
        Instance {
            id: id.into(),
            mentions: vec![Mention { span: (0, 1), concepts: vec![concept.into()], feature: vec![1.0] }],
            tokens,
        }
    }

    fn fig4_corpus() -> Corpus {
        Corpus::new(vec![
            inst("yellowstone", "yellowstone park location entity", "NationalPark"),
            inst("france", "france country gpe location entity", "Country"),
            inst("paris", "paris city gpe location entity", "City"),
            inst("hyde", "hyde park location entity", "Park"),
        ])
        .unwrap()
    }

    #[test]
    fn fig4_style_pairs() {
        let ont = locations();
        let corpus = fig4_corpus();
        let params = DatasetParams { n_pairs: 200, n_neg_excluded: 2, n_neg_random: 2, ..Default::default() };
        let ds = build_dataset(&ont, &corpus, &params).unwrap();
        let index = CorpusIndex::new(&ont, &corpus).unwrap();
        let mut saw_fig4 = false;
        for pair in &ds.pairs {
            check_pair(&index, pair).unwrap();
            if pair.positive == "yellowstone" && pair.query.excluded == "GPE" {
                assert!(pair.query.included.contains(&"Location".to_string()));
                assert!(pair.negatives.iter().any(|n| n.kind == NegativeKind::Excluded));
                saw_fig4 = true;
            }
        }
        assert!(saw_fig4);
    }

    #[test]
    fn zero_pairs() {
        let ds = build_dataset(&locations(), &fig4_corpus(), &DatasetParams { n_pairs: 0, ..Default::default() })
            .unwrap();
        assert!(ds.pairs.is_empty());
        assert_eq!(ds.warnings(), 0);
    }

    #[test]
    fn pair_json_layout() {
        let pair = TrainingPair {
            query: SuperpositionQuery { excluded: "GPE".into(), included: vec!["Location".into()] },
            positive: "yellowstone".into(),
            negatives: vec![Negative { id: "france".into(), kind: NegativeKind::Excluded }],
        };
        assert_eq!(
            serde_json::to_string(&pair).unwrap(),
            r#"{"query":{"excluded":"GPE","included":["Location"]},"pos":"yellowstone","negs":[{"id":"france","kind":"excl"}]}"#
        );
    }

    #[test]
    fn deterministic() {
        let params = DatasetParams { n_pairs: 50, n_neg_excluded: 2, n_neg_random: 2, ..Default::default() };
        let a = build_dataset(&locations(), &fig4_corpus(), &params).unwrap();
        let b = build_dataset(&locations(), &fig4_corpus(), &params).unwrap();
        assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
    }
}
