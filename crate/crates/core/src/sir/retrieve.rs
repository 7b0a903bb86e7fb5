use rayon::prelude::*;

use crate::error::Result;
use crate::synth::Instance;

use super::model::{dot, RetrieverModel};

/// Pool instances with their encodings precomputed, so one pool can be
/// ranked against many queries.
#[derive(Debug, Clone)]
pub struct EncodedPool {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl EncodedPool {
    pub fn new(model: &RetrieverModel, pool: &[&Instance]) -> Result<Self> {
        let vectors = pool
            .par_iter()
            .map(|inst| model.encode(&inst.tokens))
            .collect::<Result<Vec<_>>>()?;
        Ok(EncodedPool { ids: pool.iter().map(|i| i.id.clone()).collect(), vectors })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn scores(&self, query: &[f64]) -> Vec<f64> {
        self.vectors.par_iter().map(|x| dot(x, query)).collect()
    }

    /// Every pool position, best first: score descending, id ascending.
    pub fn ranking(&self, query: &[f64]) -> Vec<(usize, f64)> {
        let scores = self.scores(query);
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| self.ids[a].cmp(&self.ids[b])));
        order.into_iter().map(|i| (i, scores[i])).collect()
    }

    pub fn top_k(&self, query: &[f64], k: usize) -> Vec<(String, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut ranked = self.ranking(query);
        ranked.truncate(k);
        ranked.into_iter().map(|(i, s)| (self.ids[i].clone(), s)).collect()
    }
}

/// Exhaustive top-`k` of `pool` for the tokenized query.
pub fn retrieve<S: AsRef<str>>(
    model: &RetrieverModel,
    query_tokens: &[S],
    pool: &[&Instance],
    k: usize,
) -> Result<Vec<(String, f64)>> {
    let q = model.encode(query_tokens)?;
    if k == 0 {
        return Ok(Vec::new());
    }
    Ok(EncodedPool::new(model, pool)?.top_k(&q, k))
}
