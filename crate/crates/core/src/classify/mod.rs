//! Multinomial logistic regression, histogram gradient-boosted trees, and
//! confidence-threshold routing.

pub mod gbdt;
pub mod logreg;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Persist;
use crate::matrix::Matrix;

pub use gbdt::{train_gbdt, GbdtConfig, GbdtModel};
pub use logreg::{train_logreg, LogRegConfig, LogRegModel};

/// In-place softmax with max subtraction.
pub fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_training_data(x: &Matrix, y: &[usize], num_classes: usize) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::invalid(format!("{} rows but {} labels", x.rows(), y.len())));
    }
    if num_classes < 2 {
        return Err(Error::invalid("need at least 2 classes"));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= num_classes) {
        return Err(Error::invalid(format!("label {bad} out of range for {num_classes} classes")));
    }
    let first = y.first().copied();
    if y.iter().all(|&c| Some(c) == first) {
        return Err(Error::invalid("training labels contain a single class"));
    }
    if !x.all_finite() {
        return Err(Error::invalid("non-finite feature value"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierConfig {
    Logreg(LogRegConfig),
    Gbdt(GbdtConfig),
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig::Logreg(LogRegConfig::default())
    }
}

impl ClassifierConfig {
    pub fn short_name(&self) -> &'static str {
        match self {
            ClassifierConfig::Logreg(_) => "LR",
            ClassifierConfig::Gbdt(_) => "GBDT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierModel {
    Logreg(LogRegModel),
    Gbdt(GbdtModel),
}

impl Persist for ClassifierModel {
    const KIND: &'static str = "classifier";
}

/// Trains the configured classifier. Output always has `class_labels.len()`
/// columns, including classes absent from `y`.
pub fn train(config: &ClassifierConfig, x: &Matrix, y: &[usize], class_labels: &[String]) -> Result<ClassifierModel> {
    Ok(match config {
        ClassifierConfig::Logreg(c) => ClassifierModel::Logreg(train_logreg(x, y, class_labels, c)?),
        ClassifierConfig::Gbdt(c) => ClassifierModel::Gbdt(train_gbdt(x, y, class_labels, c)?),
    })
}

impl ClassifierModel {
    pub fn class_labels(&self) -> &[String] {
        match self {
            ClassifierModel::Logreg(m) => &m.class_labels,
            ClassifierModel::Gbdt(m) => &m.class_labels,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_labels().len()
    }

    pub fn num_features(&self) -> usize {
        match self {
            ClassifierModel::Logreg(m) => m.num_features(),
            ClassifierModel::Gbdt(m) => m.num_features,
        }
    }

    /// Row-wise class probabilities.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            ClassifierModel::Logreg(m) => m.predict_proba(x),
            ClassifierModel::Gbdt(m) => m.predict_proba(x),
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.predict_proba(x)?.iter_rows().map(argmax).collect())
    }

    pub fn route(&self, row: &[f64], threshold: f64) -> Result<RoutingDecision> {
        let x = Matrix::from_vec(1, row.len(), row.to_vec())?;
        let p = self.predict_proba(&x)?;
        Ok(route_probabilities(p.row(0), threshold))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "lowercase")]
pub enum RoutingDecision {
    /// Confident enough to route automatically.
    Auto { class: usize, probability: f64 },
    /// Left to a human expert.
    Defer { probability: f64 },
}

/// `Auto` when the top probability reaches `threshold` (inclusive).
pub fn route_probabilities(probs: &[f64], threshold: f64) -> RoutingDecision {
    let class = argmax(probs);
    let probability = probs[class];
    if probability >= threshold {
        RoutingDecision::Auto { class, probability }
    } else {
        RoutingDecision::Defer { probability }
    }
}
