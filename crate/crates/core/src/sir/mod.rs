//! Superposition instance retriever: a mean-pooled token-embedding encoder
//! shared by texts and queries, trained contrastively on pairs sampled from
//! the ontology, and an exact top-k search over a pool.

mod dataset;
mod model;
mod retrieve;
mod train;

pub use dataset::{
    build_dataset, check_pair, encode_pairs, load_pairs, CorpusIndex, DatasetParams, Negative, NegativeKind,
    SirDataset, TrainingPair,
};
pub use model::{
    loss, loss_gradient, pair_loss, score, score_gradient, Checkpoint, EncodedPair, RetrieverModel,
    SparseGradient, TokenRef, COMMA, SEPARATOR, UNK,
};
pub use retrieve::{retrieve, EncodedPool};
pub use train::{train, SirTrainParams, SirTraining};

use crate::error::Result;
use crate::ontology::Ontology;
use crate::superposition::{retriever_tokens, tokenize};
use crate::synth::Corpus;

/// Every token the retriever can meet: corpus tokens plus the tokens of
/// every concept name.
pub fn vocabulary(corpus: &Corpus, ontology: &Ontology) -> Vec<String> {
    let mut v: Vec<String> = corpus
        .instances()
        .iter()
        .flat_map(|i| i.tokens.iter().cloned())
        .chain(ontology.concepts().iter().flat_map(|c| tokenize(&c.name)))
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Fraction of the top-`k` pool instances that satisfy each query, averaged
/// over the queries.
pub fn precision_at_k(
    model: &RetrieverModel,
    queries: &[crate::ontology::SuperpositionQuery],
    index: &CorpusIndex<'_>,
    pool: &EncodedPool,
    k: usize,
) -> Result<f64> {
    if queries.is_empty() || k == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for q in queries {
        let qv = model.encode(&retriever_tokens(q, index.ontology)?)?;
        let top = pool.top_k(&qv, k);
        let mut hits = 0;
        for (id, _) in &top {
            if index.satisfies_query(index.corpus.position(id)?, q)? {
                hits += 1;
            }
        }
        total += hits as f64 / k.min(pool.len()).max(1) as f64;
    }
    Ok(total / queries.len() as f64)
}
