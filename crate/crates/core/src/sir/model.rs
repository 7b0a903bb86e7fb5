use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::rng::stage_rng;
use crate::superposition::EXCLUDED_MARK;

pub const UNK: &str = "<unk>";
pub const SEPARATOR: &str = "|";
pub const COMMA: &str = ",";

/// Token-embedding table shared by texts and queries. A sequence is encoded
/// as the mean of its token rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrieverModel {
    d: usize,
    vocab: Vec<String>,
    /// Row-major `|vocab| × d`.
    emb: Vec<f64>,
    index: HashMap<String, usize>,
}

/// On-disk layout of a retriever checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub d: usize,
    pub vocab: Vec<String>,
    pub emb: Vec<Vec<f64>>,
}

impl RetrieverModel {
    /// Random `N(0, init_std²)` embeddings over `tokens` plus the reserved
    /// `<unk>`, `|` and `,` rows (which come first).
    pub fn init(tokens: impl IntoIterator<Item = String>, d: usize, init_std: f64, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Parameter("embedding dimension must be >= 1".into()));
        }
        let mut rest: Vec<String> = tokens
            .into_iter()
            .filter(|t| t != UNK && t != SEPARATOR && t != COMMA)
            .collect();
        rest.sort_unstable();
        rest.dedup();
        let mut vocab = vec![UNK.to_string(), SEPARATOR.to_string(), COMMA.to_string()];
        vocab.extend(rest);

        let normal = Normal::new(0.0, init_std).map_err(|e| Error::Parameter(e.to_string()))?;
        let mut rng = stage_rng(seed, "sir-init");
        let emb = (0..vocab.len() * d).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self::assemble(d, vocab, emb))
    }

    fn assemble(d: usize, vocab: Vec<String>, emb: Vec<f64>) -> Self {
        let index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        RetrieverModel { d, vocab, emb, index }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.d == 0 || ckpt.emb.len() != ckpt.vocab.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} rows for {} tokens (d = {})",
                ckpt.emb.len(),
                ckpt.vocab.len(),
                ckpt.d
            )));
        }
        for required in [UNK, SEPARATOR, COMMA] {
            if !ckpt.vocab.iter().any(|t| t == required) {
                return Err(Error::Data(format!("checkpoint vocab lacks `{required}`")));
            }
        }
        let mut emb = Vec::with_capacity(ckpt.vocab.len() * ckpt.d);
        for row in &ckpt.emb {
            if row.len() != ckpt.d {
                return Err(Error::Shape { left: row.len(), right: ckpt.d });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric("non-finite embedding in checkpoint".into()));
            }
            emb.extend_from_slice(row);
        }
        Ok(Self::assemble(ckpt.d, ckpt.vocab, emb))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            d: self.d,
            vocab: self.vocab.clone(),
            emb: self.emb.chunks(self.d).map(<[f64]>::to_vec).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(io::read_json(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_checkpoint())? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.emb[i * self.d..(i + 1) * self.d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.emb[i * self.d..(i + 1) * self.d]
    }

    /// Flat row-major view of the table.
    pub fn table(&self) -> &[f64] {
        &self.emb
    }

    pub fn table_mut(&mut self) -> &mut [f64] {
        &mut self.emb
    }

    pub fn token_id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    /// Row and weight of every token. Tokens carrying [`EXCLUDED_MARK`] use
    /// the row of the unmarked token with a negative weight, scaled so that
    /// the encoding is `mean(unmarked rows) − mean(marked rows)`; without
    /// marked tokens every weight is 1 and the encoding is the plain mean.
    /// Unknown tokens map to the `<unk>` row.
    pub fn token_ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenRef> {
        let marked = |t: &str| t.len() > EXCLUDED_MARK.len() && t.starts_with(EXCLUDED_MARK);
        let n = tokens.len() as f64;
        let n_excl = tokens.iter().filter(|t| marked(t.as_ref())).count() as f64;
        let n_incl = n - n_excl;
        tokens
            .iter()
            .map(|t| {
                let t = t.as_ref();
                if marked(t) {
                    (self.token_id(&t[EXCLUDED_MARK.len()..]), -n / n_excl)
                } else if n_excl > 0.0 {
                    (self.token_id(t), n / n_incl)
                } else {
                    (self.token_id(t), 1.0)
                }
            })
            .collect()
    }

    /// `Σ w_i · E[row_i] / n` over the `n` token occurrences.
    pub fn encode_ids(&self, ids: &[TokenRef]) -> Result<Vec<f64>> {
        if ids.is_empty() {
            return Err(Error::EmptyEncoding);
        }
        let mut out = vec![0.0; self.d];
        for &(i, w) in ids {
            for (o, e) in out.iter_mut().zip(self.row(i)) {
                *o += w * e;
            }
        }
        let n = ids.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        Ok(out)
    }

    /// Weighted mean of the token rows; see [`RetrieverModel::token_ids`].
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<f64>> {
        self.encode_ids(&self.token_ids(tokens))
    }
}

/// Inner product.
pub fn score(x: &[f64], q: &[f64]) -> Result<f64> {
    if x.len() != q.len() {
        return Err(Error::Shape { left: x.len(), right: q.len() });
    }
    Ok(dot(x, q))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-log(e^{s+} / (e^{s+} + Σ e^{s-}))`, evaluated with the maximum score
/// subtracted. Zero when there are no negatives.
pub fn loss(s_pos: f64, s_negs: &[f64]) -> Result<f64> {
    if !s_pos.is_finite() || s_negs.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("contrastive loss on non-finite score".into()));
    }
    if s_negs.is_empty() {
        return Ok(0.0);
    }
    let m = s_negs.iter().copied().fold(s_pos, f64::max);
    let sum: f64 = (s_pos - m).exp() + s_negs.iter().map(|s| (s - m).exp()).sum::<f64>();
    Ok((m - s_pos + sum.ln()).max(0.0))
}

/// `∂L/∂s_i = softmax(s)_i - [i = 0]`, with the positive score at index 0.
pub fn score_gradient(s_pos: f64, s_negs: &[f64]) -> Vec<f64> {
    let m = s_negs.iter().copied().fold(s_pos, f64::max);
    let mut p: Vec<f64> = std::iter::once(s_pos)
        .chain(s_negs.iter().copied())
        .map(|s| (s - m).exp())
        .collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p[0] -= 1.0;
    p
}

/// Gradient rows keyed by token id; rows of tokens absent from every input
/// sequence are implicitly zero.
pub type SparseGradient = BTreeMap<usize, Vec<f64>>;

/// A token occurrence: embedding row and its signed weight in the mean.
pub type TokenRef = (usize, f64);

/// One contrastive example as token references.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPair {
    pub query: Vec<TokenRef>,
    pub positive: Vec<TokenRef>,
    pub negatives: Vec<Vec<TokenRef>>,
}

/// Loss of one example and its gradient over the embedding table,
/// backpropagated through the inner products and the mean pooling.
pub fn loss_gradient(model: &RetrieverModel, pair: &EncodedPair) -> Result<(f64, SparseGradient)> {
    let q = model.encode_ids(&pair.query)?;
    let mut docs = Vec::with_capacity(pair.negatives.len() + 1);
    docs.push(model.encode_ids(&pair.positive)?);
    for neg in &pair.negatives {
        docs.push(model.encode_ids(neg)?);
    }
    let scores: Vec<f64> = docs.iter().map(|x| dot(x, &q)).collect();
    let value = loss(scores[0], &scores[1..])?;
    let mut grad = SparseGradient::new();
    if pair.negatives.is_empty() {
        return Ok((value, grad));
    }
    let g = score_gradient(scores[0], &scores[1..]);
    let d = model.dim();

    // dL/dq = Σ_j g_j x_j, spread over the query tokens by their weights
    let mut dq = vec![0.0; d];
    for (gj, x) in g.iter().zip(&docs) {
        for (a, b) in dq.iter_mut().zip(x) {
            *a += gj * b;
        }
    }
    let n_q = pair.query.len() as f64;
    for &(t, w) in &pair.query {
        let row = grad.entry(t).or_insert_with(|| vec![0.0; d]);
        for (r, v) in row.iter_mut().zip(&dq) {
            *r += v * w / n_q;
        }
    }
    // dL/dx_j = g_j q, spread over the tokens of sequence j
    let seqs = std::iter::once(&pair.positive).chain(pair.negatives.iter());
    for (gj, seq) in g.iter().zip(seqs) {
        let n = seq.len() as f64;
        for &(t, w) in seq {
            let scale = gj * w / n;
            let row = grad.entry(t).or_insert_with(|| vec![0.0; d]);
            for (r, v) in row.iter_mut().zip(&q) {
                *r += v * scale;
            }
        }
    }
    Ok((value, grad))
}

/// Loss of one example without the gradient.
pub fn pair_loss(model: &RetrieverModel, pair: &EncodedPair) -> Result<f64> {
    let q = model.encode_ids(&pair.query)?;
    let s_pos = dot(&model.encode_ids(&pair.positive)?, &q);
    let s_negs: Vec<f64> = pair
        .negatives
        .iter()
        .map(|n| model.encode_ids(n).map(|x| dot(&x, &q)))
        .collect::<Result<_>>()?;
    loss(s_pos, &s_negs)
}
