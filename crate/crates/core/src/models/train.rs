//! Mini-batch training and batched inference.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lda::{lda_fit, LdaModel};
use super::net::{build, forward, ModelParams};
use super::{ModelError, ModelSpec};
use crate::datamodel::{EegDataset, LabelKind};
use crate::tensor::{Adam, Mode, Tape, Tensor};

const INFERENCE_BATCH: usize = 128;

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Replaces `spec.train.epochs` when set.
    pub epochs: Option<usize>,
    /// Stop after the first epoch whose eval-mode accuracy on the training
    /// trials reaches this value.
    pub stop_at_train_accuracy: Option<f64>,
    /// Record eval-mode training accuracy after every epoch.
    pub track_train_accuracy: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Mean mini-batch loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Eval-mode training accuracy per epoch, when tracked.
    pub train_accuracy: Vec<f64>,
    pub steps: u64,
}

fn label_kind(spec: &ModelSpec) -> Result<LabelKind, ModelError> {
    LabelKind::from_n_classes(spec.n_classes)
        .ok_or_else(|| ModelError::Spec(format!("no label set with {} classes", spec.n_classes)))
}

/// Train `params` in place on the trials `train_idx` of `data`.
///
/// Trials are reshuffled every epoch from `rng`, which also drives dropout.
/// Frozen parameters receive no updates.
pub fn fit(
    params: &mut ModelParams<f32>,
    data: &EegDataset,
    train_idx: &[usize],
    opts: &FitOptions,
    rng: &mut ChaCha8Rng,
) -> Result<TrainReport, ModelError> {
    let spec = params.spec.clone();
    let labels = data.labels(label_kind(&spec)?);
    let trainable: Vec<usize> = (0..params.params.len()).filter(|&i| !params.params[i].frozen).collect();
    let mut adam = Adam::new(spec.train.adam);
    let epochs = opts.epochs.unwrap_or(spec.train.epochs);
    let mut order = train_idx.to_vec();
    let mut report = TrainReport::default();
    for epoch in 0..epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for (batch, chunk) in order.chunks(spec.train.batch_size).enumerate() {
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let x = tape.constant(data.batch::<f32>(chunk));
            let out = forward(params, &mut tape, x, Mode::Train, Some(rng), true)?;
            let loss = tape.softmax_cross_entropy(out.logits, &y)?;
            let value = f64::from(tape.value(loss).item());
            if !value.is_finite() {
                return Err(ModelError::Divergence { epoch, batch });
            }
            loss_sum += value;
            n_batches += 1;
            if trainable.is_empty() {
                continue;
            }
            tape.backward(loss)?;
            let zeros: Vec<Tensor<f32>>;
            let mut grads = Vec::with_capacity(trainable.len());
            let mut missing = Vec::new();
            for &i in &trainable {
                match tape.grad(out.param_vars[i]) {
                    Some(g) => grads.push(Some(g)),
                    None => {
                        grads.push(None);
                        missing.push(i);
                    }
                }
            }
            zeros = missing.iter().map(|&i| Tensor::zeros(params.params[i].value.shape())).collect();
            let mut z = zeros.iter();
            let grads: Vec<&Tensor<f32>> = grads
                .into_iter()
                .map(|g| g.unwrap_or_else(|| z.next().expect("one zero per missing gradient")))
                .collect();
            let mut values: Vec<&mut Tensor<f32>> = params
                .params
                .iter_mut()
                .filter(|p| !p.frozen)
                .map(|p| &mut p.value)
                .collect();
            adam.step(&mut values, &grads)?;
        }
        report.epoch_loss.push(loss_sum / n_batches.max(1) as f64);
        report.epochs_run = epoch + 1;
        log::debug!("epoch {epoch}: loss {:.4}", report.epoch_loss[epoch]);
        if opts.track_train_accuracy || opts.stop_at_train_accuracy.is_some() {
            let pred = predict(params, data, train_idx)?;
            let correct = pred.iter().zip(train_idx).filter(|(p, &i)| **p == labels[i]).count();
            let acc = correct as f64 / train_idx.len().max(1) as f64;
            report.train_accuracy.push(acc);
            if opts.stop_at_train_accuracy.is_some_and(|target| acc >= target) {
                break;
            }
        }
    }
    report.steps = adam.steps();
    Ok(report)
}

/// Eval-mode logits for `idx`, row-major `[idx.len(), n_classes]`.
pub fn predict_logits(params: &mut ModelParams<f32>, data: &EegDataset, idx: &[usize]) -> Result<Vec<f32>, ModelError> {
    let mut out = Vec::with_capacity(idx.len() * params.spec.n_classes);
    for chunk in idx.chunks(INFERENCE_BATCH) {
        let mut tape = Tape::new();
        let x = tape.constant(data.batch::<f32>(chunk));
        let f = forward(params, &mut tape, x, Mode::Eval, None, false)?;
        out.extend_from_slice(tape.value(f.logits).data());
    }
    Ok(out)
}

pub fn predict(params: &mut ModelParams<f32>, data: &EegDataset, idx: &[usize]) -> Result<Vec<usize>, ModelError> {
    let logits = predict_logits(params, data, idx)?;
    Ok(argmax_rows(&logits, params.spec.n_classes))
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows<T: PartialOrd + Copy>(values: &[T], n_cols: usize) -> Vec<usize> {
    values
        .chunks(n_cols)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate().skip(1) {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// A fitted model of any kind.
#[derive(Debug, Clone)]
pub enum Trained {
    Net(ModelParams<f32>),
    Lda(LdaModel),
}

fn flat_features(data: &EegDataset, idx: &[usize]) -> Vec<f64> {
    idx.iter().flat_map(|&i| data.trial(i).iter().map(|&v| f64::from(v))).collect()
}

/// Build and train the model described by `spec`. LDA has no report.
pub fn fit_spec(
    spec: &ModelSpec,
    data: &EegDataset,
    train_idx: &[usize],
    opts: &FitOptions,
    rng: &mut ChaCha8Rng,
) -> Result<(Trained, Option<TrainReport>), ModelError> {
    spec.validate()?;
    let kind = label_kind(spec)?;
    if !spec.variant.is_network() {
        let labels = data.labels(kind);
        let y: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
        let p = data.n_channels() * data.n_samples();
        let model = lda_fit(&flat_features(data, train_idx), p, &y, spec.n_classes)?;
        return Ok((Trained::Lda(model), None));
    }
    let mut params = build::<f32>(spec, rng)?;
    let report = fit(&mut params, data, train_idx, opts, rng)?;
    Ok((Trained::Net(params), Some(report)))
}

pub fn predict_trained(model: &mut Trained, data: &EegDataset, idx: &[usize]) -> Result<Vec<usize>, ModelError> {
    match model {
        Trained::Net(p) => predict(p, data, idx),
        Trained::Lda(m) => Ok(super::lda::lda_predict(m, &flat_features(data, idx))),
    }
}
