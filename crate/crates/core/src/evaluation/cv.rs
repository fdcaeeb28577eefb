//! Fold-level training and evaluation, method comparison and the
//! category-to-exemplar transfer experiment.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{make_folds, FoldPlan, Stratification};
use super::metrics::{metrics, Metrics};
use super::stats::{mean_std, paired_ttest, stars, TTest};
use super::EvalError;
use crate::datamodel::{EegDataset, LabelKind, N_EXEMPLARS};
use crate::models::{
    build, fit, fit_spec, predict, predict_trained, transfer_adapt, FitOptions, ModelError, ModelKind, ModelSpec,
    TrainReport,
};

#[derive(Debug, Clone)]
pub struct CvOptions {
    pub fit: FitOptions,
    /// Worker threads over folds; 1 runs folds in order on the caller.
    pub threads: usize,
    /// Stop at the first failed fold instead of recording it and going on.
    pub abort_on_failure: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            fit: FitOptions::default(),
            threads: 1,
            abort_on_failure: true,
        }
    }
}

/// What a fold produces before scoring.
#[derive(Debug, Clone, Default)]
pub struct FoldOutcome {
    pub predictions: Vec<usize>,
    pub train: Option<TrainReport>,
    pub frozen_unchanged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
    pub metrics: Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frozen_unchanged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedFold {
    pub fold: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subject_id: String,
    pub method: String,
    pub n_classes: usize,
    pub spec: ModelSpec,
    pub k: usize,
    pub seed: u64,
    pub stratification: Stratification,
    pub folds: Vec<FoldResult>,
    pub failed_folds: Vec<FailedFold>,
    pub mean_accuracy: f64,
    /// Population standard deviation over folds.
    pub std_accuracy: f64,
    /// Per-class values averaged over folds.
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    /// Summed over folds, `[true][predicted]`.
    pub confusion_counts: Vec<Vec<u64>>,
    /// `confusion_counts` with every nonempty row scaled to sum 1.
    pub confusion_normalized: Vec<Vec<f64>>,
    /// Accuracy over all test trials pooled.
    pub pooled_accuracy: f64,
    /// Accuracy on the test trials of each exemplar; `None` without any.
    pub per_exemplar_accuracy: Vec<Option<f64>>,
    pub chance_level: f64,
}

/// Per-fold stream seed derived from the run seed, subject and fold.
pub fn fold_seed(seed: u64, subject: &str, fold: usize) -> u64 {
    let mut h = DefaultHasher::new();
    (seed, subject, fold).hash(&mut h);
    h.finish()
}

fn label_kind(n_classes: usize) -> Result<LabelKind, EvalError> {
    LabelKind::from_n_classes(n_classes).ok_or_else(|| EvalError::Metrics(format!("no label set with {n_classes} classes")))
}

fn run_parallel<R: Send>(threads: usize, n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    if threads <= 1 {
        return (0..n).map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); running sequentially");
            (0..n).map(f).collect()
        }
    }
}

/// Run `fold_fn` on every fold of `plan` and aggregate the scores against
/// the labels implied by `n_classes`.
pub fn evaluate_folds<F>(
    d: &EegDataset,
    plan: &FoldPlan,
    spec: &ModelSpec,
    method: &str,
    opts: &CvOptions,
    fold_fn: F,
) -> Result<EvalReport, EvalError>
where
    F: Fn(usize, &[usize], &[usize], &mut ChaCha8Rng) -> Result<FoldOutcome, ModelError> + Sync,
{
    if plan.n_trials != d.n_trials() {
        return Err(EvalError::Folds(format!(
            "plan covers {} trials, dataset has {}",
            plan.n_trials,
            d.n_trials()
        )));
    }
    let n_classes = spec.n_classes;
    let labels = d.labels(label_kind(n_classes)?);
    let subject = d.subject_id();
    let outcomes = run_parallel(opts.threads, plan.k, |f| {
        let seed = fold_seed(plan.seed, subject, f);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = plan.train(f);
        let test = &plan.test[f];
        log::info!("{subject} {method} fold {}/{}: {} train, {} test", f + 1, plan.k, train.len(), test.len());
        (seed, train.len(), fold_fn(f, &train, test, &mut rng))
    });

    let mut folds = Vec::new();
    let mut failed_folds = Vec::new();
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    let mut exemplar_hits = vec![(0usize, 0usize); N_EXEMPLARS];
    for (f, (seed, n_train, outcome)) in outcomes.into_iter().enumerate() {
        let outcome = match outcome {
            Ok(o) => o,
            Err(source) if opts.abort_on_failure => return Err(EvalError::FoldFailed { fold: f, source }),
            Err(e) => {
                log::error!("fold {f} failed: {e}");
                failed_folds.push(FailedFold {
                    fold: f,
                    error: e.to_string(),
                });
                continue;
            }
        };
        let test = &plan.test[f];
        let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        let m = metrics(&truth, &outcome.predictions, n_classes)?;
        for (row, fold_row) in confusion.iter_mut().zip(&m.confusion) {
            for (a, b) in row.iter_mut().zip(fold_row) {
                *a += b;
            }
        }
        for ((&i, &t), &p) in test.iter().zip(&truth).zip(&outcome.predictions) {
            let e = usize::from(d.exemplar_labels()[i]);
            exemplar_hits[e].1 += 1;
            exemplar_hits[e].0 += usize::from(t == p);
        }
        folds.push(FoldResult {
            fold: f,
            seed,
            n_train,
            n_test: test.len(),
            accuracy: m.accuracy,
            metrics: m,
            train: outcome.train,
            frozen_unchanged: outcome.frozen_unchanged,
        });
    }
    if folds.is_empty() {
        return Err(EvalError::Folds("every fold failed".into()));
    }

    let acc: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&acc);
    let fold_mean = |get: fn(&Metrics) -> &Vec<f64>| -> Vec<f64> {
        (0..n_classes)
            .map(|c| folds.iter().map(|f| get(&f.metrics)[c]).sum::<f64>() / folds.len() as f64)
            .collect()
    };
    let total: u64 = confusion.iter().flatten().sum();
    let trace: u64 = (0..n_classes).map(|c| confusion[c][c]).sum();
    Ok(EvalReport {
        subject_id: subject.to_string(),
        method: method.to_string(),
        n_classes,
        spec: spec.clone(),
        k: plan.k,
        seed: plan.seed,
        stratification: plan.stratification,
        precision: fold_mean(|m| &m.precision),
        recall: fold_mean(|m| &m.recall),
        f1: fold_mean(|m| &m.f1),
        confusion_normalized: confusion
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter().map(|&v| if s == 0 { 0.0 } else { v as f64 / s as f64 }).collect()
            })
            .collect(),
        pooled_accuracy: trace as f64 / total.max(1) as f64,
        confusion_counts: confusion,
        per_exemplar_accuracy: exemplar_hits
            .iter()
            .map(|&(hit, n)| (n > 0).then(|| hit as f64 / n as f64))
            .collect(),
        chance_level: 1.0 / n_classes as f64,
        folds,
        failed_folds,
        mean_accuracy,
        std_accuracy,
    })
}

/// Train on nine folds and test on the tenth, for each rotation of `plan`.
pub fn run_cv(d: &EegDataset, spec: &ModelSpec, plan: &FoldPlan, opts: &CvOptions) -> Result<EvalReport, EvalError> {
    spec.validate()?;
    if d.n_channels() != spec.n_channels || d.n_samples() != spec.n_samples {
        return Err(EvalError::Mismatch(format!(
            "dataset is {} x {}, model expects {} x {}",
            d.n_channels(),
            d.n_samples(),
            spec.n_channels,
            spec.n_samples
        )));
    }
    evaluate_folds(d, plan, spec, spec.variant.name(), opts, |_, train, test, rng| {
        let (mut model, report) = fit_spec(spec, d, train, &opts.fit, rng)?;
        Ok(FoldOutcome {
            predictions: predict_trained(&mut model, d, test)?,
            train: report,
            frozen_unchanged: None,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    /// Mean CV accuracy of each subject, aligned with the report's subjects.
    pub per_subject: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Against the reference method; absent for the reference itself and
    /// with fewer than two subjects.
    pub test: Option<TTest>,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub n_classes: usize,
    pub k: usize,
    pub seed: u64,
    pub subjects: Vec<String>,
    pub reference: String,
    pub rows: Vec<ComparisonRow>,
}

/// Tabulate per-subject accuracies and test every method against `reference`.
pub fn summarize_comparison(
    n_classes: usize,
    k: usize,
    seed: u64,
    subjects: &[String],
    results: &[(String, Vec<(String, f64)>)],
    reference: &str,
) -> Result<ComparisonReport, EvalError> {
    let mut aligned = Vec::with_capacity(results.len());
    for (method, per) in results {
        if per.len() != subjects.len() {
            return Err(EvalError::Mismatch(format!(
                "{method} has {} subjects, expected {}",
                per.len(),
                subjects.len()
            )));
        }
        let row: Result<Vec<f64>, EvalError> = subjects
            .iter()
            .map(|s| {
                per.iter()
                    .find(|(name, _)| name == s)
                    .map(|(_, a)| *a)
                    .ok_or_else(|| EvalError::Mismatch(format!("{method} lacks subject {s}")))
            })
            .collect();
        aligned.push((method.clone(), row?));
    }
    let ref_acc = aligned
        .iter()
        .find(|(m, _)| m == reference)
        .map(|(_, a)| a.clone())
        .ok_or_else(|| EvalError::Mismatch(format!("reference method {reference} missing")))?;
    let mut rows = Vec::with_capacity(aligned.len());
    for (i, (method, acc)) in aligned.into_iter().enumerate() {
        let (mean, std) = mean_std(&acc);
        let is_reference = method == reference && results.iter().position(|(m, _)| m == reference) == Some(i);
        let test = if is_reference || subjects.len() < 2 {
            None
        } else {
            Some(paired_ttest(&ref_acc, &acc)?)
        };
        let stars = test.as_ref().map_or("", |t| stars(t.p)).to_string();
        rows.push(ComparisonRow {
            method,
            per_subject: acc,
            mean,
            std,
            test,
            stars,
        });
    }
    Ok(ComparisonReport {
        n_classes,
        k,
        seed,
        subjects: subjects.to_vec(),
        reference: reference.to_string(),
        rows,
    })
}

/// Cross-validate every spec on every subject with one shared fold plan per
/// subject. The reference is the first attention model, else the first spec.
pub fn compare_methods(
    subjects: &[EegDataset],
    specs: &[ModelSpec],
    k: usize,
    seed: u64,
    opts: &CvOptions,
) -> Result<(ComparisonReport, Vec<EvalReport>), EvalError> {
    let first = specs.first().ok_or_else(|| EvalError::Mismatch("no methods to compare".into()))?;
    if specs.iter().any(|s| s.n_classes != first.n_classes) {
        return Err(EvalError::Mismatch("methods disagree on the number of classes".into()));
    }
    let mut names: Vec<String> = Vec::with_capacity(specs.len());
    for s in specs {
        let base = s.variant.name();
        let mut name = base.to_string();
        let mut n = 1;
        while names.contains(&name) {
            n += 1;
            name = format!("{base}#{n}");
        }
        names.push(name);
    }
    let reference = specs
        .iter()
        .position(|s| s.variant == ModelKind::AttentionCnn)
        .map_or(names[0].clone(), |i| names[i].clone());
    let subject_ids: Vec<String> = subjects.iter().map(|d| d.subject_id().to_string()).collect();
    let mut evals = Vec::new();
    let mut results: Vec<(String, Vec<(String, f64)>)> = names.iter().map(|n| (n.clone(), Vec::new())).collect();
    for d in subjects {
        let plan = make_folds(d, k, seed)?;
        for (i, spec) in specs.iter().enumerate() {
            let mut report = run_cv(d, spec, &plan, opts)?;
            report.method = names[i].clone();
            results[i].1.push((d.subject_id().to_string(), report.mean_accuracy));
            evals.push(report);
        }
    }
    let cmp = summarize_comparison(first.n_classes, k, seed, &subject_ids, &results, &reference)?;
    Ok((cmp, evals))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFold {
    pub fold: usize,
    pub scratch_accuracy: f64,
    pub transferred_accuracy: f64,
    pub frozen_unchanged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub from_scratch: EvalReport,
    pub transferred: EvalReport,
    pub folds: Vec<TransferFold>,
    /// Mean transferred minus mean from-scratch accuracy.
    pub mean_difference: f64,
    /// `"lower"`, `"higher"` or `"equal"` for the transferred model.
    pub direction: String,
    pub frozen_unchanged: bool,
}

/// Per fold: train a category model, freeze its trunk, refit the head on
/// exemplar labels, and score it next to an exemplar model trained from
/// scratch on the same split.
pub fn transfer_experiment(
    d: &EegDataset,
    base_spec: &ModelSpec,
    plan: &FoldPlan,
    opts: &CvOptions,
    fine_tune_epochs: Option<usize>,
) -> Result<TransferReport, EvalError> {
    if base_spec.n_classes != crate::datamodel::N_CATEGORIES {
        return Err(EvalError::Mismatch("transfer starts from a category model".into()));
    }
    if !matches!(base_spec.variant, ModelKind::AttentionCnn | ModelKind::PlainCnn) {
        return Err(ModelError::Spec(format!("transfer needs a CNN variant, got {}", base_spec.variant.name())).into());
    }
    let mut target = base_spec.clone();
    target.n_classes = N_EXEMPLARS;
    let from_scratch = run_cv(d, &target, plan, opts)?;
    let fine_tune = FitOptions {
        epochs: fine_tune_epochs.or(opts.fit.epochs),
        ..opts.fit.clone()
    };
    let method = format!("{}_transfer", base_spec.variant.name());
    let transferred = evaluate_folds(d, plan, &target, &method, opts, |_, train, test, rng| {
        let mut base = build::<f32>(base_spec, rng)?;
        fit(&mut base, d, train, &opts.fit, rng)?;
        let mut adapted = transfer_adapt(&base, N_EXEMPLARS, rng)?;
        let before = adapted.frozen_digest();
        let report = fit(&mut adapted, d, train, &fine_tune, rng)?;
        let unchanged = adapted.frozen_digest() == before;
        Ok(FoldOutcome {
            predictions: predict(&mut adapted, d, test)?,
            train: Some(report),
            frozen_unchanged: Some(unchanged),
        })
    })?;
    let folds: Vec<TransferFold> = transferred
        .folds
        .iter()
        .filter_map(|t| {
            let s = from_scratch.folds.iter().find(|s| s.fold == t.fold)?;
            Some(TransferFold {
                fold: t.fold,
                scratch_accuracy: s.accuracy,
                transferred_accuracy: t.accuracy,
                frozen_unchanged: t.frozen_unchanged.unwrap_or(false),
            })
        })
        .collect();
    let mean_difference = transferred.mean_accuracy - from_scratch.mean_accuracy;
    let direction = match mean_difference.partial_cmp(&0.0) {
        Some(std::cmp::Ordering::Less) => "lower",
        Some(std::cmp::Ordering::Greater) => "higher",
        _ => "equal",
    };
    Ok(TransferReport {
        frozen_unchanged: folds.iter().all(|f| f.frozen_unchanged),
        folds,
        mean_difference,
        direction: direction.to_string(),
        from_scratch,
        transferred,
    })
}
