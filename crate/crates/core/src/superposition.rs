//! "A but not B" superposition sets over the common concepts, grouped into
//! one retrieval query per excluded concept.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractor::CommonConceptSet;
use crate::ontology::{Ontology, SuperpositionQuery};

/// `(a, not_b)`: instances of `a` that are not instances of `not_b`.
pub type SuperpositionSet = (String, String);

/// All ordered pairs `(c_i, not c_j)`, `i != j`, in common-concept order.
pub fn build_sets(common: &CommonConceptSet) -> Result<Vec<SuperpositionSet>> {
    let m = common.len();
    if m < 2 {
        return Err(Error::InsufficientConcepts { found: m });
    }
    let c = &common.concepts;
    let mut sets = Vec::with_capacity(m * (m - 1));
    for i in 0..m {
        for j in 0..m {
            if i != j {
                sets.push((c[i].clone(), c[j].clone()));
            }
        }
    }
    Ok(sets)
}

/// Merges every set sharing an excluded concept into one query. Queries and
/// their included lists follow the order concepts first appear in `sets`.
pub fn build_queries(sets: &[SuperpositionSet]) -> Vec<SuperpositionQuery> {
    let mut order: Vec<&str> = Vec::new();
    for (a, b) in sets {
        for c in [a, b] {
            if !order.contains(&c.as_str()) {
                order.push(c);
            }
        }
    }
    order
        .iter()
        .filter_map(|&excluded| {
            let mut included: Vec<String> = Vec::new();
            for (a, b) in sets {
                if b == excluded && !included.contains(a) {
                    included.push(a.clone());
                }
            }
            (!included.is_empty()).then(|| SuperpositionQuery {
                excluded: excluded.to_string(),
                included,
            })
        })
        .collect()
}

/// Inverse of [`build_queries`]: the `(included, not excluded)` pairs.
pub fn flatten_queries(queries: &[SuperpositionQuery]) -> Vec<SuperpositionSet> {
    queries
        .iter()
        .flat_map(|q| q.included.iter().map(move |a| (a.clone(), q.excluded.clone())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderKey {
    /// Appearance count of the excluded concept among the extractor outputs.
    IllustrativeCount,
    /// Corpus frequency of the excluded concept.
    CorpusFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryOrdering {
    pub key: OrderKey,
    pub descending: bool,
}

impl Default for QueryOrdering {
    fn default() -> Self {
        QueryOrdering {
            key: OrderKey::IllustrativeCount,
            descending: true,
        }
    }
}

/// Sorts queries by the ordering key of their excluded concept, then by the
/// other frequency signal (descending), then by id.
pub fn order_queries(
    queries: &[SuperpositionQuery],
    common: &CommonConceptSet,
    ontology: &Ontology,
    ordering: QueryOrdering,
) -> Vec<SuperpositionQuery> {
    let count = |q: &SuperpositionQuery| common.count_of(&q.excluded).unwrap_or(0) as u64;
    let freq = |q: &SuperpositionQuery| {
        ontology
            .idx(&q.excluded)
            .map(|i| ontology.frequency(i))
            .unwrap_or(0)
    };
    let (primary, secondary): (&dyn Fn(&SuperpositionQuery) -> u64, &dyn Fn(&SuperpositionQuery) -> u64) =
        match ordering.key {
            OrderKey::IllustrativeCount => (&count, &freq),
            OrderKey::CorpusFrequency => (&freq, &count),
        };
    let mut out = queries.to_vec();
    out.sort_by(|a, b| {
        let first = primary(a).cmp(&primary(b));
        let first = if ordering.descending { first.reverse() } else { first };
        first
            .then_with(|| secondary(b).cmp(&secondary(a)))
            .then_with(|| a.excluded.cmp(&b.excluded))
    });
    out
}

/// `"<excluded> | <inc1>, <inc2>, ..."` using concept display names.
pub fn serialize_query(query: &SuperpositionQuery, ontology: &Ontology) -> Result<String> {
    let name = |id: &str| ontology.idx(id).map(|i| ontology.name(i).to_string());
    let included: Vec<String> = query.included.iter().map(|c| name(c)).collect::<Result<_>>()?;
    Ok(format!("{} | {}", name(&query.excluded)?, included.join(", ")))
}

/// Lowercases and splits on whitespace; `|` and `,` are standalone tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() || ch == '|' || ch == ',' {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        } else {
            cur.extend(ch.to_lowercase());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// The tokenized utterance.
pub fn query_tokens(query: &SuperpositionQuery, ontology: &Ontology) -> Result<Vec<String>> {
    Ok(tokenize(&serialize_query(query, ontology)?))
}

/// Prefix marking a query token as part of the excluded concept's name.
pub const EXCLUDED_MARK: &str = "!";

/// Tags every token before the first `|` with [`EXCLUDED_MARK`].
///
/// A mean-pooled encoder sees a query as a bag of tokens, so without the tag
/// "B | A" and "A | B" encode identically and the excluded concept can only
/// raise scores. The retriever subtracts tagged tokens' rows instead of
/// adding them.
pub fn mark_excluded(tokens: Vec<String>) -> Vec<String> {
    let Some(sep) = tokens.iter().position(|t| t == "|") else {
        return tokens;
    };
    tokens
        .into_iter()
        .enumerate()
        .map(|(i, t)| if i < sep { format!("{EXCLUDED_MARK}{t}") } else { t })
        .collect()
}

/// Retriever input for a query: the tokenized utterance with the excluded
/// side tagged.
pub fn retriever_tokens(query: &SuperpositionQuery, ontology: &Ontology) -> Result<Vec<String>> {
    Ok(mark_excluded(query_tokens(query, ontology)?))
}
