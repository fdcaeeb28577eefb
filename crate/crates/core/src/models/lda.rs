//! Shrinkage linear discriminant analysis on flattened trials.
//!
//! The pooled within-class covariance is shrunk toward a scaled identity
//! with the Ledoit-Wolf intensity. With fewer trials than features the
//! solve goes through the `n x n` Gram matrix and the Woodbury identity.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub n_features: usize,
    pub n_classes: usize,
    /// Ledoit-Wolf shrinkage intensity in `[0, 1]`.
    pub shrinkage: f64,
    /// Empirical class frequencies.
    pub priors: Vec<f64>,
    /// Row-major `[n_classes, n_features]` class means.
    pub means: Vec<f64>,
    /// Row-major `[n_classes, n_features]`.
    pub coef: Vec<f64>,
    pub intercept: Vec<f64>,
}

/// Ledoit-Wolf intensity for centered rows `xc`, given the smaller of the
/// two cross products (`xc xc^T` or `xc^T xc`); both have the same
/// Frobenius norm.
fn ledoit_wolf(xc: &DMatrix<f64>, cross: &DMatrix<f64>) -> (f64, f64) {
    let (n, p) = (xc.nrows() as f64, xc.ncols() as f64);
    let row_sq: Vec<f64> = xc.row_iter().map(|r| r.norm_squared()).collect();
    let trace = row_sq.iter().sum::<f64>() / n;
    let mu = trace / p;
    let fourth: f64 = row_sq.iter().map(|s| s * s).sum();
    let s_frob2 = cross.norm_squared() / (n * n);
    let beta = (fourth / n - s_frob2) / (p * n);
    let delta = (s_frob2 - 2.0 * mu * trace + p * mu * mu) / p;
    let beta = beta.min(delta);
    let lambda = if beta <= 0.0 || delta <= 0.0 { 0.0 } else { (beta / delta).clamp(0.0, 1.0) };
    (lambda, mu)
}

/// `x` is row-major `[labels.len(), n_features]`.
pub fn lda_fit(x: &[f64], n_features: usize, labels: &[usize], n_classes: usize) -> Result<LdaModel, ModelError> {
    fit_with(x, n_features, labels, n_classes, labels.len() < n_features)
}

fn fit_with(
    x: &[f64],
    n_features: usize,
    labels: &[usize],
    n_classes: usize,
    woodbury: bool,
) -> Result<LdaModel, ModelError> {
    let n = labels.len();
    let p = n_features;
    if x.len() != n * p || p == 0 {
        return Err(ModelError::Spec(format!("LDA input of {} values for {n} x {p}", x.len())));
    }
    if n <= n_classes {
        return Err(ModelError::TooFewTrials {
            needed: n_classes + 1,
            got: n,
        });
    }
    let mut counts = vec![0usize; n_classes];
    for &y in labels {
        *counts
            .get_mut(y)
            .ok_or_else(|| ModelError::Spec(format!("label {y} outside 0..{n_classes}")))? += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(ModelError::ClassAbsent(k));
    }
    let mut means = DMatrix::<f64>::zeros(n_classes, p);
    for (row, &y) in x.chunks_exact(p).zip(labels) {
        for (m, v) in means.row_mut(y).iter_mut().zip(row) {
            *m += v;
        }
    }
    for (k, &c) in counts.iter().enumerate() {
        means.row_mut(k).scale_mut(1.0 / c as f64);
    }
    let mut xc = DMatrix::from_row_slice(n, p, x);
    for (i, &y) in labels.iter().enumerate() {
        let m = means.row(y).clone_owned();
        let mut r = xc.row_mut(i);
        r -= m;
    }

    let cross = if woodbury { &xc * xc.transpose() } else { xc.transpose() * &xc };
    let (lambda, mu) = ledoit_wolf(&xc, &cross);
    // Shrunk covariance a*I + b*xc^T xc.
    let a = lambda * mu;
    let b = (1.0 - lambda) / n as f64;
    let mt = means.transpose();
    let w = if woodbury {
        if a <= 0.0 {
            return Err(ModelError::Singular);
        }
        // (aI + b X^T X)^-1 = (1/a) [I - X^T (a/b I + X X^T)^-1 X]
        let mut inner = cross;
        if b > 0.0 {
            for i in 0..n {
                inner[(i, i)] += a / b;
            }
            let chol = inner.cholesky().ok_or(ModelError::Singular)?;
            let xm = &xc * &mt;
            (mt - xc.transpose() * chol.solve(&xm)) / a
        } else {
            mt / a
        }
    } else {
        let mut sigma = cross * b;
        for i in 0..p {
            sigma[(i, i)] += a;
        }
        sigma.cholesky().ok_or(ModelError::Singular)?.solve(&mt)
    };
    let priors: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let intercept = (0..n_classes)
        .map(|k| -0.5 * means.row(k).transpose().dot(&w.column(k)) + priors[k].ln())
        .collect();
    Ok(LdaModel {
        n_features: p,
        n_classes,
        shrinkage: lambda,
        priors,
        means: row_major(&means),
        coef: row_major(&w.transpose()),
        intercept,
    })
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect()
}

/// Discriminant scores, row-major `[n, n_classes]`.
pub fn lda_scores(model: &LdaModel, x: &[f64]) -> Vec<f64> {
    let n = x.len() / model.n_features;
    let xm = DMatrix::from_row_slice(n, model.n_features, x);
    let coef = DMatrix::from_row_slice(model.n_classes, model.n_features, &model.coef);
    let mut s = xm * coef.transpose();
    for mut row in s.row_iter_mut() {
        for (v, b) in row.iter_mut().zip(&model.intercept) {
            *v += b;
        }
    }
    row_major(&s)
}

pub fn lda_predict(model: &LdaModel, x: &[f64]) -> Vec<usize> {
    super::argmax_rows(&lda_scores(model, x), model.n_classes)
}
