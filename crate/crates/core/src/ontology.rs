//! Concept taxonomy: a rooted DAG of subclass edges with per-concept corpus
//! frequencies.
//!
//! A mention "is" every concept in the closure of its direct concepts, which
//! is reflexive: `closure({University}) = {University, EduIns, ..., Entity}`.
//! The graph is validated once on construction and never mutated afterwards.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: String,
    pub name: String,
    pub corpus_frequency: u64,
}

impl Concept {
    pub fn new(id: impl Into<String>, name: impl Into<String>) -> Self {
        Concept {
            id: id.into(),
            name: name.into(),
            corpus_frequency: 0,
        }
    }
}

/// "Query for instances of any `included` concept that are not `excluded`".
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SuperpositionQuery {
    pub excluded: String,
    pub included: Vec<String>,
}

impl SuperpositionQuery {
    pub fn new(excluded: impl Into<String>, included: Vec<String>) -> Result<Self> {
        let q = SuperpositionQuery {
            excluded: excluded.into(),
            included,
        };
        q.check()?;
        Ok(q)
    }

    /// Checks the structural invariants (non-empty, duplicate-free included
    /// list that does not contain the excluded concept).
    pub fn check(&self) -> Result<()> {
        if self.included.is_empty() {
            return Err(Error::Parameter("query has no included concepts".into()));
        }
        if self.included.contains(&self.excluded) {
            return Err(Error::Parameter(format!(
                "excluded concept `{}` also listed as included",
                self.excluded
            )));
        }
        let distinct: BTreeSet<&String> = self.included.iter().collect();
        if distinct.len() != self.included.len() {
            return Err(Error::Parameter("duplicate included concepts".into()));
        }
        Ok(())
    }
}

/// An unvalidated concept graph, as read from disk or assembled by hand.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawOntology {
    pub concepts: Vec<Concept>,
    /// `(child, parent)` subclass pairs.
    pub edges: Vec<(String, String)>,
}

impl RawOntology {
    pub fn concept(mut self, id: &str, name: &str) -> Self {
        self.concepts.push(Concept::new(id, name));
        self
    }

    pub fn edge(mut self, child: &str, parent: &str) -> Self {
        self.edges.push((child.to_string(), parent.to_string()));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateId(String),
    EmptyName(String),
    DanglingEdge { child: String, parent: String },
    /// Path along child→parent edges, first node repeated at the end.
    Cycle(Vec<String>),
    NoRoot,
    MultipleRoots(Vec<String>),
    Unreachable(Vec<String>),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId(id) => write!(f, "duplicate concept id `{id}`"),
            Violation::EmptyName(id) => write!(f, "concept `{id}` has an empty name"),
            Violation::DanglingEdge { child, parent } => {
                write!(f, "edge ({child}, {parent}) references an unknown concept")
            }
            Violation::Cycle(path) => write!(f, "cycle: {}", path.join(" -> ")),
            Violation::NoRoot => write!(f, "no root: every concept has a parent"),
            Violation::MultipleRoots(ids) => write!(f, "multiple roots: {}", ids.join(", ")),
            Violation::Unreachable(ids) => {
                write!(f, "concepts not reaching the root: {}", ids.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Checks every structural invariant of a concept graph and reports all
/// violations found, rather than stopping at the first.
pub fn validate(raw: &RawOntology) -> Result<(), ValidationReport> {
    let mut violations = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, c) in raw.concepts.iter().enumerate() {
        if index.insert(c.id.as_str(), i).is_some() {
            violations.push(Violation::DuplicateId(c.id.clone()));
        }
        if c.name.trim().is_empty() {
            violations.push(Violation::EmptyName(c.id.clone()));
        }
    }

    let n = raw.concepts.len();
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (child, parent) in &raw.edges {
        match (index.get(child.as_str()), index.get(parent.as_str())) {
            (Some(&c), Some(&p)) => {
                if !parents[c].contains(&p) {
                    parents[c].push(p);
                }
            }
            _ => violations.push(Violation::DanglingEdge {
                child: child.clone(),
                parent: parent.clone(),
            }),
        }
    }

    let cycle = find_cycle(&parents);
    if let Some(path) = &cycle {
        violations.push(Violation::Cycle(
            path.iter().map(|&i| raw.concepts[i].id.clone()).collect(),
        ));
    }

    let roots: Vec<usize> = (0..n).filter(|&i| parents[i].is_empty()).collect();
    match roots.len() {
        0 if n > 0 => violations.push(Violation::NoRoot),
        0 | 1 => {}
        _ => violations.push(Violation::MultipleRoots(
            roots.iter().map(|&i| raw.concepts[i].id.clone()).collect(),
        )),
    }
    if n == 0 {
        violations.push(Violation::NoRoot);
    }

    if cycle.is_none() && roots.len() == 1 {
        // With no cycles every upward walk ends at a parentless node, so this
        // only fires for graphs the other checks already reject; kept for
        // completeness of the report.
        let children = invert(&parents);
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([roots[0]]);
        seen[roots[0]] = true;
        while let Some(u) = queue.pop_front() {
            for &c in &children[u] {
                if !seen[c] {
                    seen[c] = true;
                    queue.push_back(c);
                }
            }
        }
        let missing: Vec<String> = (0..n)
            .filter(|&i| !seen[i])
            .map(|i| raw.concepts[i].id.clone())
            .collect();
        if !missing.is_empty() {
            violations.push(Violation::Unreachable(missing));
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(ValidationReport { violations })
    }
}

fn invert(parents: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut children = vec![Vec::new(); parents.len()];
    for (c, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(c);
        }
    }
    children
}

/// Iterative three-colour DFS along child→parent edges. Returns the first
/// cycle found as a closed node path.
fn find_cycle(parents: &[Vec<usize>]) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Gray,
        Black,
    }
    let n = parents.len();
    let mut color = vec![Color::White; n];
    for start in 0..n {
        if color[start] != Color::White {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
        color[start] = Color::Gray;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if *next < parents[node].len() {
                let p = parents[node][*next];
                *next += 1;
                match color[p] {
                    Color::White => {
                        color[p] = Color::Gray;
                        stack.push((p, 0));
                    }
                    Color::Gray => {
                        let pos = stack.iter().position(|&(v, _)| v == p).unwrap_or(0);
                        let mut path: Vec<usize> = stack[pos..].iter().map(|&(v, _)| v).collect();
                        path.push(p);
                        return Some(path);
                    }
                    Color::Black => {}
                }
            } else {
                color[node] = Color::Black;
                stack.pop();
            }
        }
    }
    None
}

/// A validated, immutable concept taxonomy.
#[derive(Debug, Clone)]
pub struct Ontology {
    concepts: Vec<Concept>,
    index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    /// Reflexive ancestor set of each concept, sorted.
    ancestors: Vec<Vec<usize>>,
    /// Length of the shortest path to the root.
    depth: Vec<usize>,
    root: usize,
}

impl PartialEq for Ontology {
    fn eq(&self, other: &Self) -> bool {
        self.concepts == other.concepts && self.edges == other.edges
    }
}

impl Ontology {
    pub fn from_raw(raw: RawOntology) -> Result<Self> {
        validate(&raw).map_err(Error::Validation)?;
        let index: HashMap<String, usize> = raw
            .concepts
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.clone(), i))
            .collect();
        let n = raw.concepts.len();
        let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut edges = Vec::with_capacity(raw.edges.len());
        for (child, parent) in &raw.edges {
            let (c, p) = (index[child], index[parent]);
            if !parents[c].contains(&p) {
                parents[c].push(p);
                edges.push((c, p));
            }
        }
        let children = invert(&parents);
        let root = (0..n).find(|&i| parents[i].is_empty()).expect("validated");

        let mut depth = vec![usize::MAX; n];
        depth[root] = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &c in &children[u] {
                if depth[c] == usize::MAX {
                    depth[c] = depth[u] + 1;
                    queue.push_back(c);
                }
            }
        }

        // Ancestor sets in topological order: every parent is finalized
        // before its children because a DAG admits a parent-first order.
        let topo = topological_parent_first(&parents, &children, root);
        let mut ancestors: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &u in &topo {
            let mut set = vec![u];
            for &p in &parents[u] {
                set.extend_from_slice(&ancestors[p]);
            }
            set.sort_unstable();
            set.dedup();
            ancestors[u] = set;
        }

        Ok(Ontology {
            concepts: raw.concepts,
            index,
            edges,
            parents,
            children,
            ancestors,
            depth,
            root,
        })
    }

    pub fn to_raw(&self) -> RawOntology {
        RawOntology {
            concepts: self.concepts.clone(),
            edges: self
                .edges
                .iter()
                .map(|&(c, p)| (self.concepts[c].id.clone(), self.concepts[p].id.clone()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn concept(&self, idx: usize) -> &Concept {
        &self.concepts[idx]
    }

    pub fn id(&self, idx: usize) -> &str {
        &self.concepts[idx].id
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.concepts[idx].name
    }

    pub fn idx(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownConcept(id.to_string()))
    }

    pub fn indices<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<usize>> {
        ids.iter().map(|id| self.idx(id.as_ref())).collect()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn root_id(&self) -> &str {
        &self.concepts[self.root].id
    }

    pub fn parents(&self, idx: usize) -> &[usize] {
        &self.parents[idx]
    }

    pub fn children(&self, idx: usize) -> &[usize] {
        &self.children[idx]
    }

    pub fn depth(&self, idx: usize) -> usize {
        self.depth[idx]
    }

    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn is_leaf(&self, idx: usize) -> bool {
        self.children[idx].is_empty()
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_leaf(i)).collect()
    }

    pub fn frequency(&self, idx: usize) -> u64 {
        self.concepts[idx].corpus_frequency
    }

    /// Edges as `(child, parent)` index pairs, in load order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Reflexive ancestors of a single concept, sorted by index.
    pub fn ancestors_of(&self, idx: usize) -> &[usize] {
        &self.ancestors[idx]
    }

    /// Reflexive-transitive closure of a set of concepts, sorted by index.
    pub fn closure_idx(&self, direct: &[usize]) -> Vec<usize> {
        match direct {
            [] => Vec::new(),
            [one] => self.ancestors[*one].clone(),
            _ => {
                let mut out: Vec<usize> = direct
                    .iter()
                    .flat_map(|&d| self.ancestors[d].iter().copied())
                    .collect();
                out.sort_unstable();
                out.dedup();
                out
            }
        }
    }

    pub fn closure<S: AsRef<str>>(&self, direct: &[S]) -> Result<BTreeSet<String>> {
        let idx = self.indices(direct)?;
        Ok(self.ids_of(&self.closure_idx(&idx)))
    }

    /// Concepts sharing at least one parent with `idx`, excluding itself.
    pub fn siblings_idx(&self, idx: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.parents[idx]
            .iter()
            .flat_map(|&p| self.children[p].iter().copied())
            .filter(|&c| c != idx)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn siblings(&self, id: &str) -> Result<BTreeSet<String>> {
        Ok(self.ids_of(&self.siblings_idx(self.idx(id)?)))
    }

    /// Strict descendants of `idx`, sorted.
    pub fn descendants_idx(&self, idx: usize) -> Vec<usize> {
        let mut seen = vec![false; self.len()];
        let mut out = Vec::new();
        let mut stack: Vec<usize> = self.children[idx].clone();
        while let Some(u) = stack.pop() {
            if !seen[u] {
                seen[u] = true;
                out.push(u);
                stack.extend_from_slice(&self.children[u]);
            }
        }
        out.sort_unstable();
        out
    }

    pub fn descendants(&self, id: &str) -> Result<BTreeSet<String>> {
        Ok(self.ids_of(&self.descendants_idx(self.idx(id)?)))
    }

    /// `{idx} ∪ descendants(idx)`: the concept set of a subtree-shaped type.
    pub fn subtree_idx(&self, idx: usize) -> Vec<usize> {
        let mut out = self.descendants_idx(idx);
        out.push(idx);
        out.sort_unstable();
        out
    }

    /// Satisfaction on a precomputed closure (sorted).
    pub fn satisfies_closure(closure: &[usize], excluded: usize, included: &[usize]) -> bool {
        closure.binary_search(&excluded).is_err()
            && included.iter().any(|c| closure.binary_search(c).is_ok())
    }

    pub fn satisfies<S: AsRef<str>>(&self, direct: &[S], query: &SuperpositionQuery) -> Result<bool> {
        query.check()?;
        let closure = self.closure_idx(&self.indices(direct)?);
        let excluded = self.idx(&query.excluded)?;
        let included = self.indices(&query.included)?;
        Ok(Self::satisfies_closure(&closure, excluded, &included))
    }

    pub fn ids_of(&self, idx: &[usize]) -> BTreeSet<String> {
        idx.iter().map(|&i| self.concepts[i].id.clone()).collect()
    }

    /// A copy with `corpus_frequency` replaced, one entry per concept index.
    pub fn with_frequencies(&self, freqs: &[u64]) -> Result<Ontology> {
        if freqs.len() != self.len() {
            return Err(Error::Shape {
                left: freqs.len(),
                right: self.len(),
            });
        }
        let mut out = self.clone();
        for (c, &f) in out.concepts.iter_mut().zip(freqs) {
            c.corpus_frequency = f;
        }
        Ok(out)
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = String::new();
        for c in &self.concepts {
            let rec = Record::Concept {
                id: c.id.clone(),
                name: c.name.clone(),
                freq: c.corpus_frequency,
            };
            buf.push_str(&serde_json::to_string(&rec).expect("plain record"));
            buf.push('\n');
        }
        for &(c, p) in &self.edges {
            let rec = Record::Edge {
                child: self.concepts[c].id.clone(),
                parent: self.concepts[p].id.clone(),
            };
            buf.push_str(&serde_json::to_string(&rec).expect("plain record"));
            buf.push('\n');
        }
        buf
    }

    pub fn from_records(records: Vec<Record>) -> Result<Ontology> {
        let mut raw = RawOntology::default();
        for rec in records {
            match rec {
                Record::Concept { id, name, freq } => raw.concepts.push(Concept {
                    id,
                    name,
                    corpus_frequency: freq,
                }),
                Record::Edge { child, parent } => raw.edges.push((child, parent)),
            }
        }
        Ontology::from_raw(raw)
    }

    pub fn load(path: &Path) -> Result<Ontology> {
        Ontology::from_records(io::read_jsonl(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_jsonl().as_bytes())
    }
}

/// Kahn's algorithm from the root downward; a node is emitted once all of its
/// parents have been.
fn topological_parent_first(parents: &[Vec<usize>], children: &[Vec<usize>], root: usize) -> Vec<usize> {
    let mut pending: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut order = Vec::with_capacity(parents.len());
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &c in &children[u] {
            pending[c] -= 1;
            if pending[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    order
}

/// One line of the ontology JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Record {
    Concept { id: String, name: String, freq: u64 },
    Edge { child: String, parent: String },
}
