//! Two-way linear softmax classifier over frozen question embeddings,
//! trained with mini-batch gradient descent on cross-entropy plus an L2
//! penalty on the weights.
//!
//! Class 0 is known, class 1 is unknown.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{query_embedding, ElicitError, Elicitation, Elicitor};
use crate::io::DataError;
use crate::retrieval::Embedding;
use crate::types::{Question, SelfKnowledgeLabel};

const CLASSES: [SelfKnowledgeLabel; 2] = [SelfKnowledgeLabel::Known, SelfKnowledgeLabel::Unknown];

#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    dim: usize,
    /// Row `c` holds the weights of class `c`.
    weights: [Vec<f64>; 2],
    bias: [f64; 2],
}

/// On-disk JSON shape.
#[derive(Serialize, Deserialize)]
struct ClassifierFile {
    dim: usize,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    class_order: Vec<String>,
}

impl LinearClassifier {
    /// All-zero parameters.
    pub fn zeros(dim: usize) -> Self {
        Self { dim, weights: [vec![0.0; dim], vec![0.0; dim]], bias: [0.0; 2] }
    }

    pub fn from_parts(weights: [Vec<f64>; 2], bias: [f64; 2]) -> Result<Self, ElicitError> {
        let dim = weights[0].len();
        if dim == 0 || weights[1].len() != dim {
            return Err(ElicitError::DimMismatch { expected: dim, got: weights[1].len() });
        }
        if weights.iter().flatten().chain(&bias).any(|v| !v.is_finite()) {
            return Err(ElicitError::BadParams("non-finite classifier parameter".into()));
        }
        Ok(Self { dim, weights, bias })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[Vec<f64>; 2] {
        &self.weights
    }

    pub fn bias(&self) -> [f64; 2] {
        self.bias
    }

    pub fn logits(&self, x: &[f64]) -> [f64; 2] {
        let row = |c: usize| self.weights[c].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[c];
        [row(0), row(1)]
    }

    /// Class probabilities `[p_known, p_unknown]`.
    pub fn probabilities(&self, x: &[f64]) -> [f64; 2] {
        softmax(self.logits(x))
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let file = ClassifierFile {
            dim: self.dim,
            w: self.weights.to_vec(),
            b: self.bias.to_vec(),
            class_order: vec!["known".into(), "unknown".into()],
        };
        let text = serde_json::to_string_pretty(&file).expect("serializable classifier");
        std::fs::write(path, text + "\n").map_err(|e| DataError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, ElicitError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ElicitError::BadParams(format!("{}: {e}", path.display())))?;
        let file: ClassifierFile =
            serde_json::from_str(&text).map_err(|e| ElicitError::BadParams(format!("{}: {e}", path.display())))?;
        if file.class_order != ["known", "unknown"] {
            return Err(ElicitError::BadParams(format!("unsupported class order {:?}", file.class_order)));
        }
        let [w0, w1]: [Vec<f64>; 2] = file
            .w
            .try_into()
            .map_err(|_| ElicitError::BadParams("W must have two rows".into()))?;
        let b: [f64; 2] = file
            .b
            .try_into()
            .map_err(|_| ElicitError::BadParams("b must have two entries".into()))?;
        let clf = Self::from_parts([w0, w1], b)?;
        if clf.dim != file.dim {
            return Err(ElicitError::DimMismatch { expected: file.dim, got: clf.dim });
        }
        Ok(clf)
    }
}

fn softmax(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

fn features(e: &Embedding) -> Vec<f64> {
    e.values().iter().map(|v| *v as f64).collect()
}

/// Predicted label and its probability. An exact tie goes to unknown.
pub fn classify(clf: &LinearClassifier, embedding: &Embedding) -> Result<(SelfKnowledgeLabel, f64), ElicitError> {
    if embedding.dim() != clf.dim {
        return Err(ElicitError::DimMismatch { expected: clf.dim, got: embedding.dim() });
    }
    let [p_known, p_unknown] = clf.probabilities(&features(embedding));
    Ok(if p_known > p_unknown {
        (SelfKnowledgeLabel::Known, p_known)
    } else {
        (SelfKnowledgeLabel::Unknown, p_unknown)
    })
}

/// Gradient of [`objective`] with respect to the classifier parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: [Vec<f64>; 2],
    pub bias: [f64; 2],
}

/// Mean cross-entropy over the batch plus `l2 / 2 * |W|^2`.
pub fn objective(clf: &LinearClassifier, xs: &[Vec<f64>], ys: &[usize], l2: f64) -> f64 {
    objective_and_gradient(clf, xs, ys, l2).0
}

/// Objective and its analytic gradient: `dL/dz = p - onehot(y)`, averaged
/// over the batch, plus `l2 * W` on the weights.
pub fn objective_and_gradient(clf: &LinearClassifier, xs: &[Vec<f64>], ys: &[usize], l2: f64) -> (f64, Gradient) {
    let mut grad = Gradient { weights: [vec![0.0; clf.dim], vec![0.0; clf.dim]], bias: [0.0; 2] };
    let batch = xs.len().max(1) as f64;
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z = clf.logits(x);
        let m = z[0].max(z[1]);
        let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
        loss += lse - z[y];
        let p = softmax(z);
        for (c, pc) in p.into_iter().enumerate() {
            let delta = (pc - if c == y { 1.0 } else { 0.0 }) / batch;
            grad.bias[c] += delta;
            for (g, v) in grad.weights[c].iter_mut().zip(x) {
                *g += delta * v;
            }
        }
    }
    let mut penalty = 0.0;
    for c in 0..2 {
        for (g, w) in grad.weights[c].iter_mut().zip(&clf.weights[c]) {
            *g += l2 * w;
            penalty += w * w;
        }
    }
    (loss / batch + 0.5 * l2 * penalty, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub l2: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self { learning_rate: 0.1, epochs: 200, batch_size: 16, seed: 0, l2: 1e-4 }
    }
}

/// Per-epoch full-batch objective; entry 0 is the untrained model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
}

/// Fits a classifier from zero initialization.
///
/// Examples are reshuffled every epoch from a seeded RNG, so training is
/// reproducible. The parameters with the lowest full-batch objective seen
/// (including the initial ones) are returned, which keeps the final loss at
/// or below the initial loss.
pub fn train_classifier(
    examples: &[(Embedding, SelfKnowledgeLabel)],
    params: &TrainParams,
) -> Result<(LinearClassifier, TrainReport), ElicitError> {
    if !(params.learning_rate > 0.0 && params.learning_rate.is_finite()) {
        return Err(ElicitError::BadParams("learning_rate must be positive".into()));
    }
    if params.batch_size == 0 {
        return Err(ElicitError::BadParams("batch_size must be positive".into()));
    }
    if !(params.l2 >= 0.0 && params.l2.is_finite()) {
        return Err(ElicitError::BadParams("l2 must be non-negative".into()));
    }
    let dim = examples.first().map(|(e, _)| e.dim()).ok_or(ElicitError::SingleClassData)?;
    let mut xs = Vec::with_capacity(examples.len());
    let mut ys = Vec::with_capacity(examples.len());
    for (e, label) in examples {
        if e.dim() != dim {
            return Err(ElicitError::DimMismatch { expected: dim, got: e.dim() });
        }
        let y = CLASSES
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| ElicitError::DiscardedExample(e.id.clone()))?;
        xs.push(features(e));
        ys.push(y);
    }
    if !ys.contains(&0) || !ys.contains(&1) {
        return Err(ElicitError::SingleClassData);
    }

    let mut clf = LinearClassifier::zeros(dim);
    let mut best = (objective(&clf, &xs, &ys, params.l2), clf.clone(), 0);
    let mut losses = vec![best.0];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut bx = Vec::with_capacity(params.batch_size);
    let mut by = Vec::with_capacity(params.batch_size);

    for epoch in 1..=params.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(params.batch_size) {
            bx.clear();
            by.clear();
            for &i in chunk {
                bx.push(xs[i].clone());
                by.push(ys[i]);
            }
            let (_, g) = objective_and_gradient(&clf, &bx, &by, params.l2);
            for c in 0..2 {
                for (w, gw) in clf.weights[c].iter_mut().zip(&g.weights[c]) {
                    *w -= params.learning_rate * gw;
                }
                clf.bias[c] -= params.learning_rate * g.bias[c];
            }
        }
        let loss = objective(&clf, &xs, &ys, params.l2);
        losses.push(loss);
        if loss < best.0 {
            best = (loss, clf.clone(), epoch);
        }
    }
    let (_, clf, best_epoch) = best;
    Ok((clf, TrainReport { losses, best_epoch }))
}

pub struct ClassifierElicitor {
    clf: LinearClassifier,
    queries: Arc<HashMap<String, Embedding>>,
}

impl ClassifierElicitor {
    pub fn new(clf: LinearClassifier, queries: Arc<HashMap<String, Embedding>>) -> Self {
        Self { clf, queries }
    }
}

impl Elicitor for ClassifierElicitor {
    fn name(&self) -> &str {
        "cls"
    }

    fn elicit(&self, question: &Question) -> Result<Elicitation, ElicitError> {
        let (label, p) = classify(&self.clf, query_embedding(&self.queries, question)?)?;
        Ok(Elicitation { label, probability: Some(p), warning: false })
    }
}
