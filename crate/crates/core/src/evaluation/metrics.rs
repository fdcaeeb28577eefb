//! Confusion matrix and per-class precision, recall and F1.

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_classes: usize,
    pub n: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<u64>>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    /// Classes never predicted; their precision is reported as 0.
    pub precision_undefined: Vec<bool>,
    /// Classes absent from the truth; their recall is reported as 0.
    pub recall_undefined: Vec<bool>,
}

impl Metrics {
    pub fn macro_recall(&self) -> f64 {
        self.recall.iter().sum::<f64>() / self.n_classes as f64
    }

    pub fn macro_f1(&self) -> f64 {
        self.f1.iter().sum::<f64>() / self.n_classes as f64
    }
}

pub fn metrics(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Metrics, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::Metrics(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= n_classes || p >= n_classes {
            return Err(EvalError::Metrics(format!("label pair ({t}, {p}) outside 0..{n_classes}")));
        }
        confusion[t][p] += 1;
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut m = Metrics {
        n_classes,
        n: y_true.len(),
        accuracy: ratio((0..n_classes).map(|c| confusion[c][c]).sum(), y_true.len() as u64),
        precision: Vec::with_capacity(n_classes),
        recall: Vec::with_capacity(n_classes),
        f1: Vec::with_capacity(n_classes),
        precision_undefined: Vec::with_capacity(n_classes),
        recall_undefined: Vec::with_capacity(n_classes),
        confusion: Vec::new(),
    };
    for c in 0..n_classes {
        let tp = confusion[c][c];
        let predicted: u64 = (0..n_classes).map(|t| confusion[t][c]).sum();
        let actual: u64 = confusion[c].iter().sum();
        let (p, r) = (ratio(tp, predicted), ratio(tp, actual));
        m.precision.push(p);
        m.recall.push(r);
        m.f1.push(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
        m.precision_undefined.push(predicted == 0);
        m.recall_undefined.push(actual == 0);
    }
    m.confusion = confusion;
    Ok(m)
}
