//! Analytic-versus-central-difference gradient comparison.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::lstm::{lstm_cell, lstm_layer, LstmWeights};
use super::{BnRunning, Mode, Scalar, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub dtype: &'static str,
    pub instances: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Relative error with a small absolute floor so that exact zeros compare sanely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    diff / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn step_size<T: Scalar>() -> f64 {
    T::epsilon().to_f64().unwrap().cbrt()
}

/// Max relative error of `d(sum(r ⊙ f(inputs)))/d inputs` for a fixed random `r`.
///
/// `f` must be deterministic: it is re-evaluated for every perturbed input element.
pub fn max_relative_error<T, F>(inputs: &[Tensor<T>], seed: u64, f: F) -> Result<(f64, usize), TensorError>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, TensorError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let projected = |tape: &mut Tape<T>, vars: &[Var], weights: &Tensor<T>| -> Result<Var, TensorError> {
        let out = f(tape, vars)?;
        let wv = tape.constant(weights.clone());
        let prod = tape.mul(out, wv)?;
        Ok(tape.sum_all(prod))
    };

    // Draw the projection once, from the output shape of a dry run.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out_shape = tape_shape_of(&mut tape, &vars, &f)?;
    let weights = Tensor::from_fn(&out_shape, |_| T::lit(rng.random::<f64>() * 2.0 - 1.0));

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = projected(&mut tape, &vars, &weights)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| match tape.grad(*v) {
            Some(g) => g.data().iter().map(|x| x.to_f64().unwrap()).collect(),
            None => vec![0.0; t.len()],
        })
        .collect();

    let h = step_size::<T>();
    let eval = |perturbed: &[Tensor<T>]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let loss = projected(&mut tape, &vars, &weights)?;
        Ok(tape.value(loss).item().to_f64().unwrap())
    };
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for e in 0..input.len() {
            let orig = input.data()[e];
            work[k].data_mut()[e] = orig + T::lit(h);
            let plus = eval(&work)?;
            work[k].data_mut()[e] = orig - T::lit(h);
            let minus = eval(&work)?;
            work[k].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(analytic[k][e], numeric));
            checked += 1;
        }
    }
    Ok((worst, checked))
}

fn tape_shape_of<T, F>(tape: &mut Tape<T>, vars: &[Var], f: &F) -> Result<Vec<usize>, TensorError>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, TensorError>,
{
    let out = f(tape, vars)?;
    Ok(tape.shape(out).to_vec())
}

/// Run `f` on `instances` seeded input sets and aggregate the worst error.
pub fn gradient_check<T, G, F>(
    name: &str,
    instances: usize,
    tolerance: f64,
    mut make_inputs: G,
    f: F,
) -> Result<GradCheckReport, TensorError>
where
    T: Scalar,
    G: FnMut(&mut ChaCha8Rng) -> Vec<Tensor<T>>,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, TensorError>,
{
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..instances as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + 1);
        let inputs = make_inputs(&mut rng);
        let (err, n) = max_relative_error(&inputs, seed, &f)?;
        worst = worst.max(err);
        checked += n;
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        dtype: T::DTYPE,
        instances,
        checked,
        max_rel_error: worst,
        tolerance,
        passed: worst < tolerance,
    })
}

/// Uniform values in `[-1, 1]`.
pub fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random::<f64>() * 2.0 - 1.0))
}

/// Uniform magnitudes in `[0.2, 1]` with random sign, keeping clear of kinks at zero.
pub fn away_from_zero<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let m = 0.2 + 0.8 * rng.random::<f64>();
        T::lit(if rng.random::<bool>() { m } else { -m })
    })
}

/// Gradient checks for every differentiable primitive, `instances` seeds each.
pub fn standard_battery<T: Scalar>(instances: usize, tolerance: f64) -> Result<Vec<GradCheckReport>, TensorError> {
    let mut out = Vec::new();
    out.push(gradient_check::<T, _, _>(
        "conv2d",
        instances,
        tolerance,
        |r| vec![uniform(r, &[2, 2, 4, 6]), uniform(r, &[3, 2, 2, 3]), uniform(r, &[3])],
        |t, v| t.conv2d(v[0], v[1], Some(v[2])),
    )?);
    out.push(gradient_check::<T, _, _>(
        "conv2d_lowered",
        instances,
        tolerance,
        |r| vec![uniform(r, &[2, 2, 4, 6]), uniform(r, &[3, 2, 3, 3]), uniform(r, &[3])],
        |t, v| t.conv2d(v[0], v[1], Some(v[2])),
    )?);
    out.push(gradient_check::<T, _, _>(
        "conv2d_wide_plane",
        instances,
        tolerance,
        |r| vec![uniform(r, &[2, 2, 4, 130]), uniform(r, &[2, 2, 3, 3]), uniform(r, &[2])],
        |t, v| t.conv2d(v[0], v[1], Some(v[2])),
    )?);
    out.push(gradient_check::<T, _, _>(
        "conv2d_spatial",
        instances,
        tolerance,
        |r| vec![uniform(r, &[2, 3, 6, 5]), uniform(r, &[2, 3, 6, 1]), uniform(r, &[2])],
        |t, v| t.conv2d(v[0], v[1], Some(v[2])),
    )?);
    out.push(gradient_check::<T, _, _>(
        "batch_norm_relu",
        instances,
        tolerance,
        |r| vec![uniform(r, &[4, 3, 1, 5]), uniform(r, &[3]), uniform(r, &[3])],
        |t, v| {
            let mut run = BnRunning::new(3);
            t.batch_norm_relu(v[0], v[1], v[2], &mut run, Mode::Train)
        },
    )?);
    out.push(gradient_check::<T, _, _>(
        "batch_norm_train",
        instances,
        tolerance,
        |r| vec![uniform(r, &[4, 3, 1, 5]), uniform(r, &[3]), uniform(r, &[3])],
        |t, v| {
            let mut run = BnRunning::new(3);
            t.batch_norm(v[0], v[1], v[2], &mut run, Mode::Train)
        },
    )?);
    out.push(gradient_check::<T, _, _>(
        "batch_norm_eval",
        instances,
        tolerance,
        |r| vec![uniform(r, &[3, 4]), uniform(r, &[4]), uniform(r, &[4])],
        |t, v| {
            let mut run = BnRunning {
                mean: vec![T::lit(0.1), T::lit(-0.2), T::lit(0.0), T::lit(0.3)],
                var: vec![T::lit(0.5), T::lit(1.5), T::lit(2.0), T::lit(0.8)],
            };
            t.batch_norm(v[0], v[1], v[2], &mut run, Mode::Eval)
        },
    )?);
    out.push(gradient_check::<T, _, _>(
        "linear",
        instances,
        tolerance,
        |r| vec![uniform(r, &[3, 5]), uniform(r, &[4, 5]), uniform(r, &[4])],
        |t, v| t.linear(v[0], v[1], Some(v[2])),
    )?);
    out.push(gradient_check::<T, _, _>(
        "relu",
        instances,
        tolerance,
        |r| vec![away_from_zero(r, &[3, 7])],
        |t, v| Ok(t.relu(v[0])),
    )?);
    out.push(gradient_check::<T, _, _>(
        "dropout",
        instances,
        tolerance,
        |r| vec![uniform(r, &[4, 6])],
        |t, v| {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            t.dropout(v[0], 0.5, Mode::Train, &mut rng)
        },
    )?);
    out.push(gradient_check::<T, _, _>(
        "concat_flatten",
        instances,
        tolerance,
        |r| vec![uniform(r, &[2, 3, 1, 2]), uniform(r, &[2, 4])],
        |t, v| {
            let a = t.flatten(v[0])?;
            let c = t.concat(&[a, v[1]], 1)?;
            Ok(t.tanh(c))
        },
    )?);
    out.push(gradient_check::<T, _, _>(
        "square_pool_log",
        instances,
        tolerance,
        |r| vec![away_from_zero(r, &[2, 3, 9])],
        |t, v| {
            let s = t.square(v[0]);
            let p = t.avg_pool_last(s, 3, 2)?;
            Ok(t.log_clamped(p, 1e-6))
        },
    )?);
    out.push(gradient_check::<T, _, _>(
        "softmax_cross_entropy",
        instances,
        tolerance,
        |r| vec![uniform(r, &[5, 6]).map(|x| x * T::lit(3.0))],
        |t, v| t.softmax_cross_entropy(v[0], &[0, 5, 2, 2, 3]),
    )?);
    out.push(gradient_check::<T, _, _>(
        "lstm_cell",
        instances,
        tolerance,
        |r| {
            vec![
                uniform(r, &[2, 3]),
                uniform(r, &[2, 2]),
                uniform(r, &[2, 2]),
                uniform(r, &[8, 3]),
                uniform(r, &[8, 2]),
                uniform(r, &[8]),
            ]
        },
        |t, v| {
            let w = LstmWeights {
                w_ih: v[3],
                w_hh: v[4],
                bias: v[5],
            };
            let (h, c) = lstm_cell(t, v[0], v[1], v[2], &w)?;
            t.concat(&[h, c], 1)
        },
    )?);
    out.push(gradient_check::<T, _, _>(
        "lstm_layer",
        instances,
        tolerance,
        |r| vec![uniform(r, &[2, 4, 3]), uniform(r, &[8, 3]), uniform(r, &[8, 2]), uniform(r, &[8])],
        |t, v| {
            let w = LstmWeights {
                w_ih: v[1],
                w_hh: v[2],
                bias: v[3],
            };
            lstm_layer(t, v[0], &w)
        },
    )?);
    out.push(gradient_check::<T, _, _>(
        "conv_bn_relu_chain",
        instances,
        tolerance,
        |r| {
            vec![
                uniform(r, &[3, 1, 3, 6]),
                uniform(r, &[2, 1, 1, 3]),
                uniform(r, &[2]),
                uniform(r, &[2]),
                uniform(r, &[2]),
            ]
        },
        |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]))?;
            let mut run = BnRunning::new(2);
            let y = t.batch_norm(y, v[3], v[4], &mut run, Mode::Train)?;
            Ok(t.sigmoid(y))
        },
    )?);
    Ok(out)
}
