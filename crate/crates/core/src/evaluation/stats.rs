//! Summary statistics and the paired t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};
use statrs::function::beta::beta_reg;

use super::EvalError;

/// Mean and population standard deviation (divisor `n`).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    /// Two-tailed.
    pub p: f64,
    pub mean_diff: f64,
    /// All differences equal and nonzero: `t` is infinite and `p` is 0.
    pub degenerate: bool,
}

/// Paired two-tailed t-test on `a - b` with the sample standard deviation.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest, EvalError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(EvalError::Stats(format!(
            "paired test needs two equal samples of size >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let df = d.len() - 1;
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if sd == 0.0 {
        let degenerate = mean != 0.0;
        return Ok(TTest {
            t: if degenerate { mean.signum() * f64::INFINITY } else { 0.0 },
            df,
            p: if degenerate { 0.0 } else { 1.0 },
            mean_diff: mean,
            degenerate,
        });
    }
    let t = mean / (sd / n.sqrt());
    let nu = df as f64;
    let p = beta_reg(nu / 2.0, 0.5, nu / (nu + t * t)).clamp(0.0, 1.0);
    Ok(TTest {
        t,
        df,
        p,
        mean_diff: mean,
        degenerate: false,
    })
}

/// `"**"` below 0.01, `"*"` below 0.05.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Central binomial interval of the success proportion: the smallest and
/// largest counts whose tails each hold at most `(1 - level) / 2`.
pub fn binomial_interval(n: u64, p: f64, level: f64) -> (f64, f64) {
    let dist = Binomial::new(p, n).expect("valid binomial parameters");
    let tail = (1.0 - level) / 2.0;
    let lo = (0..=n).find(|&k| dist.cdf(k) > tail).unwrap_or(0);
    let hi = (0..=n).find(|&k| dist.cdf(k) >= 1.0 - tail).unwrap_or(n);
    (lo as f64 / n as f64, hi as f64 / n as f64)
}
