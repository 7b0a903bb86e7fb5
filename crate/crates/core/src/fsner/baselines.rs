use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stage_rng;
use crate::synth::Instance;

use super::classifier::{train_classifier, ClassifierParams};

/// How the annotation budget is spent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Illustrative instances only; no budget is spent.
    Vanilla,
    Random,
    Supercd,
    Kmeans,
    Entropy,
}

impl Strategy {
    pub const ALL: [Strategy; 5] =
        [Strategy::Vanilla, Strategy::Random, Strategy::Supercd, Strategy::Kmeans, Strategy::Entropy];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Vanilla => "vanilla",
            Strategy::Random => "random",
            Strategy::Supercd => "supercd",
            Strategy::Kmeans => "kmeans",
            Strategy::Entropy => "entropy",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown strategy `{s}`")))
    }
}

/// Inputs the pool-based baselines may look at.
pub struct BaselineContext<'a> {
    pub pool: &'a [&'a Instance],
    /// Labeled illustrative mentions (entropy baseline).
    pub illustrative: &'a [(Vec<f64>, bool)],
    pub classifier: ClassifierParams,
    pub seed: u64,
}

/// Selects `budget` pool instances with a non-SuperCD strategy.
pub fn baseline_select(strategy: Strategy, ctx: &BaselineContext<'_>, budget: usize) -> Result<Vec<String>> {
    let budget = if budget > ctx.pool.len() {
        log::warn!("budget {budget} exceeds the pool ({}); clamping", ctx.pool.len());
        ctx.pool.len()
    } else {
        budget
    };
    let picks = match strategy {
        Strategy::Vanilla => Vec::new(),
        Strategy::Random => random_select(ctx.pool.len(), budget, ctx.seed),
        Strategy::Kmeans => kmeans_select(ctx.pool, budget, ctx.seed),
        Strategy::Entropy => entropy_select(ctx, budget)?,
        Strategy::Supercd => {
            return Err(Error::Parameter("supercd selection runs through a session, not a baseline".into()))
        }
    };
    Ok(picks.into_iter().map(|i| ctx.pool[i].id.clone()).collect())
}

/// Seeded uniform sample of `budget` positions without replacement.
pub fn random_select(n: usize, budget: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stage_rng(seed, "random-select"));
    order.truncate(budget.min(n));
    order
}

/// Mean of the instance's mention features (zeros without mentions).
pub fn sentence_feature(inst: &Instance) -> Vec<f64> {
    let d = inst.mentions.first().map_or(0, |m| m.feature.len());
    let mut out = vec![0.0; d];
    for m in &inst.mentions {
        out.iter_mut().zip(&m.feature).for_each(|(o, f)| *o += f);
    }
    let n = inst.mentions.len().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = dist2(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

/// Lloyd's k-means (`k = budget`, 50 iterations, farthest-point seeding from
/// a random first center) over sentence features; returns the instance
/// nearest to each centroid, skipping instances already picked.
pub fn kmeans_select(pool: &[&Instance], budget: usize, seed: u64) -> Vec<usize> {
    let points: Vec<Vec<f64>> = pool.iter().map(|i| sentence_feature(i)).collect();
    kmeans_pick(&points, budget, seed)
}

pub(crate) fn kmeans_pick(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let k = k.min(points.len());
    if k == 0 {
        return Vec::new();
    }
    let mut rng = stage_rng(seed, "kmeans-init");
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut closest: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let mut far = 0;
        for (i, &d) in closest.iter().enumerate() {
            if d > closest[far] {
                far = i;
            }
        }
        let c = points[far].clone();
        closest.iter_mut().zip(points).for_each(|(d, p)| *d = d.min(dist2(p, &c)));
        centers.push(c);
    }

    let dim = points[0].len();
    for _ in 0..50 {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for p in points {
            let j = nearest(p, &centers);
            counts[j] += 1;
            sums[j].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        let mut moved = false;
        for j in 0..k {
            if counts[j] == 0 {
                continue; // an empty cluster keeps its center
            }
            let mean: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            moved |= mean != centers[j];
            centers[j] = mean;
        }
        if !moved {
            break;
        }
    }

    let mut taken = vec![false; points.len()];
    let mut picks = Vec::with_capacity(k);
    for c in &centers {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = dist2(p, c);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        if let Some((i, _)) = best {
            taken[i] = true;
            picks.push(i);
        }
    }
    picks
}

pub fn binary_entropy(p: f64) -> f64 {
    let h = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.ln() };
    h(p) + h(1.0 - p)
}

/// Sentences whose mentions the vanilla classifier is least sure about
/// (highest mean predictive entropy; ties by id).
fn entropy_select(ctx: &BaselineContext<'_>, budget: usize) -> Result<Vec<usize>> {
    let clf = train_classifier(ctx.illustrative, &ctx.classifier)?;
    let entropy: Vec<f64> = ctx
        .pool
        .iter()
        .map(|inst| {
            let n = inst.mentions.len().max(1) as f64;
            inst.mentions.iter().map(|m| binary_entropy(clf.probability(&m.feature))).sum::<f64>() / n
        })
        .collect();
    let mut order: Vec<usize> = (0..ctx.pool.len()).collect();
    order.sort_by(|&a, &b| entropy[b].total_cmp(&entropy[a]).then_with(|| ctx.pool[a].id.cmp(&ctx.pool[b].id)));
    order.truncate(budget);
    Ok(order)
}
