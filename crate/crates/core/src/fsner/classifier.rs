use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractor::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierParams {
    /// L2 penalty on the weights (not the bias).
    pub l2: f64,
    /// Stop once the gradient's Euclidean norm falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        ClassifierParams { l2: 1e-3, tol: 1e-6, max_iter: 2000 }
    }
}

impl ClassifierParams {
    pub fn check(&self) -> Result<()> {
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::Parameter(format!("l2 must be >= 0, got {}", self.l2)));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::Parameter(format!("tol must be > 0, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Binary logistic classifier over mention features for one target type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Set when training saw a single class; the classifier then always
    /// predicts that class.
    pub constant: Option<bool>,
    pub iterations: usize,
    pub converged: bool,
}

impl SpanClassifier {
    pub fn is_degenerate(&self) -> bool {
        self.constant.is_some()
    }

    pub fn probability(&self, feature: &[f64]) -> f64 {
        match self.constant {
            Some(true) => 1.0,
            Some(false) => 0.0,
            None => sigmoid(self.bias + dot(&self.weights, feature)),
        }
    }

    /// Positive iff the probability strictly exceeds one half.
    pub fn predict(&self, feature: &[f64]) -> bool {
        self.probability(feature) > 0.5
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Full-batch gradient descent on the mean log-loss plus `l2/2 · |w|²`,
/// from zero, with step `1 / L` for the smoothness bound
/// `L = (1 + max |x|²) / 4 + l2`.
pub fn train_classifier(data: &[(Vec<f64>, bool)], params: &ClassifierParams) -> Result<SpanClassifier> {
    params.check()?;
    let Some((first, _)) = data.first() else {
        return Err(Error::Data("cannot train a classifier without labeled mentions".into()));
    };
    let d = first.len();
    if let Some((x, _)) = data.iter().find(|(x, _)| x.len() != d) {
        return Err(Error::Shape { left: x.len(), right: d });
    }
    if data.iter().flat_map(|(x, _)| x).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite mention feature".into()));
    }
    let positives = data.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == data.len() {
        return Ok(SpanClassifier {
            weights: vec![0.0; d],
            bias: 0.0,
            constant: Some(positives > 0),
            iterations: 0,
            converged: true,
        });
    }

    let max_sq = data.iter().map(|(x, _)| dot(x, x)).fold(0.0, f64::max);
    let step = 1.0 / ((1.0 + max_sq) / 4.0 + params.l2);
    let n = data.len() as f64;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut gw = vec![0.0; d];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        gw.iter_mut().zip(&w).for_each(|(g, wi)| *g = params.l2 * wi);
        let mut gb = 0.0;
        for (x, y) in data {
            let r = (sigmoid(b + dot(&w, x)) - if *y { 1.0 } else { 0.0 }) / n;
            gb += r;
            gw.iter_mut().zip(x).for_each(|(g, xi)| *g += r * xi);
        }
        let norm = (gb * gb + dot(&gw, &gw)).sqrt();
        if norm < params.tol {
            converged = true;
            break;
        }
        w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= step * g);
        b -= step * gb;
        iterations += 1;
    }
    Ok(SpanClassifier { weights: w, bias: b, constant: None, iterations, converged })
}

/// Mean log-loss plus the L2 term; the quantity `train_classifier` descends.
pub fn classifier_objective(clf: &SpanClassifier, data: &[(Vec<f64>, bool)], l2: f64) -> f64 {
    let n = data.len() as f64;
    let nll: f64 = data
        .iter()
        .map(|(x, y)| {
            let z = clf.bias + dot(&clf.weights, x);
            crate::extractor::softplus(if *y { -z } else { z })
        })
        .sum::<f64>()
        / n;
    nll + 0.5 * l2 * dot(&clf.weights, &clf.weights)
}
