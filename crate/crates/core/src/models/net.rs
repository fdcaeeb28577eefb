//! Network definitions, parameter storage and checkpointing.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, ModelKind, ModelSpec};
use crate::datamodel::apply_mask;
use crate::tensor::checkpoint::{read_checkpoint, write_checkpoint};
use crate::tensor::lstm::{lstm_layer, LstmWeights};
use crate::tensor::{BnRunning, Mode, Scalar, Tape, Tensor, Var};

/// `(features, height, width)` after each of the five block layers for a
/// `124 x 32` input. Flattening the last entry gives 1200 features.
pub const BLOCK_CHAIN: [(usize, usize, usize); 5] = [(20, 124, 28), (20, 1, 28), (40, 1, 24), (100, 1, 15), (200, 1, 6)];

/// Filters, kernel (`None` = full-height spatial kernel) and leading dropout per layer.
const BLOCK_LAYERS: [(usize, Option<(usize, usize)>, bool); 5] = [
    (20, Some((1, 5)), false),
    (20, None, false),
    (40, Some((1, 5)), true),
    (100, Some((1, 10)), true),
    (200, Some((1, 10)), true),
];

const HEAD: &str = "head";
const LOG_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Frozen parameters are excluded from the optimizer and run their
    /// batch norms in eval mode.
    pub frozen: bool,
}

/// Trainable state of one network: parameters in a fixed declaration
/// order plus batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    pub spec: ModelSpec,
    pub params: Vec<Param<T>>,
    pub running: Vec<(String, BnRunning<T>)>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Input width of the classifier head.
    pub fn head_inputs(&self) -> usize {
        self.get("head.weight").map_or(0, |p| p.value.shape()[1])
    }

    /// Order-sensitive digest of every frozen parameter's bits.
    pub fn frozen_digest(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for p in self.params.iter().filter(|p| p.frozen) {
            p.name.hash(&mut h);
            for v in p.value.data() {
                v.to_f64().unwrap_or(f64::NAN).to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Result of one forward pass.
pub struct ForwardOutput {
    pub logits: Var,
    /// Tape variables of the parameters, aligned with `ModelParams::params`.
    pub param_vars: Vec<Var>,
    /// Named intermediate features: every CNN layer output and the flattened branch outputs.
    pub features: Vec<(String, Var)>,
    /// Output shape after every layer.
    pub trace: Vec<(String, Vec<usize>)>,
}

enum Init {
    He(usize),
    Uniform(f64),
    Zeros,
    Ones,
}

impl Init {
    fn sample<T: Scalar>(&self, rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
        let bound = match *self {
            Init::Zeros => return Tensor::zeros(shape),
            Init::Ones => return Tensor::ones(shape),
            Init::He(fan_in) => (6.0 / fan_in.max(1) as f64).sqrt(),
            Init::Uniform(b) => b,
        };
        Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..bound)))
    }
}

enum Store<'a, T: Scalar> {
    Build {
        rng: &'a mut ChaCha8Rng,
        params: Vec<Param<T>>,
        running: Vec<(String, BnRunning<T>)>,
    },
    Bind {
        params: &'a [Param<T>],
        running: &'a mut [(String, BnRunning<T>)],
        vars: Vec<Var>,
        next_param: usize,
        next_bn: usize,
        need_grad: bool,
    },
}

struct Ctx<'a, T: Scalar> {
    tape: &'a mut Tape<T>,
    mode: Mode,
    dropout: f64,
    rng: Option<&'a mut ChaCha8Rng>,
    store: Store<'a, T>,
    trace: Vec<(String, Vec<usize>)>,
    features: Vec<(String, Var)>,
}

impl<T: Scalar> Ctx<'_, T> {
    fn param(&mut self, name: String, shape: &[usize], init: Init) -> Result<(Var, bool), ModelError> {
        match &mut self.store {
            Store::Build { rng, params, .. } => {
                let value = init.sample::<T>(rng, shape);
                let v = self.tape.constant(value.clone());
                params.push(Param {
                    name,
                    value,
                    frozen: false,
                });
                Ok((v, false))
            }
            Store::Bind {
                params,
                vars,
                next_param,
                need_grad,
                ..
            } => {
                let p = params
                    .get(*next_param)
                    .ok_or_else(|| ModelError::Architecture(format!("missing parameter {name}")))?;
                if p.name != name || p.value.shape() != shape {
                    return Err(ModelError::Architecture(format!(
                        "parameter {} {:?} where {name} {shape:?} was expected",
                        p.name,
                        p.value.shape()
                    )));
                }
                let v = self.tape.leaf(p.value.clone(), *need_grad && !p.frozen);
                vars.push(v);
                *next_param += 1;
                Ok((v, p.frozen))
            }
        }
    }

    fn next_frozen(&self) -> bool {
        match &self.store {
            Store::Build { .. } => false,
            Store::Bind { params, next_param, .. } => params.get(*next_param).is_some_and(|p| p.frozen),
        }
    }

    fn record(&mut self, name: impl Into<String>, v: Var) {
        self.trace.push((name.into(), self.tape.shape(v).to_vec()));
    }

    fn conv(&mut self, x: Var, name: &str, filters: usize, kh: usize, kw: usize, bias: bool) -> Result<Var, ModelError> {
        let c = self.tape.shape(x)[1];
        let (k, _) = self.param(format!("{name}.weight"), &[filters, c, kh, kw], Init::He(c * kh * kw))?;
        let b = if bias {
            Some(self.param(format!("{name}.bias"), &[filters], Init::Zeros)?.0)
        } else {
            None
        };
        Ok(self.tape.conv2d(x, k, b)?)
    }

    fn batch_norm(&mut self, x: Var, name: &str, relu: bool) -> Result<Var, ModelError> {
        let f = self.tape.shape(x)[1];
        let (gamma, frozen) = self.param(format!("{name}.gamma"), &[f], Init::Ones)?;
        let (beta, _) = self.param(format!("{name}.beta"), &[f], Init::Zeros)?;
        let mode = if frozen { Mode::Eval } else { self.mode };
        let running = match &mut self.store {
            Store::Build { running, .. } => {
                running.push((name.to_string(), BnRunning::new(f)));
                &mut running.last_mut().expect("just pushed").1
            }
            Store::Bind { running, next_bn, .. } => {
                let slot = running
                    .get_mut(*next_bn)
                    .filter(|(n, r)| n == name && r.mean.len() == f)
                    .ok_or_else(|| ModelError::Architecture(format!("running statistics for {name}")))?;
                *next_bn += 1;
                &mut slot.1
            }
        };
        let y = if relu {
            self.tape.batch_norm_relu(x, gamma, beta, running, mode)?
        } else {
            self.tape.batch_norm(x, gamma, beta, running, mode)?
        };
        Ok(y)
    }

    fn dropout(&mut self, x: Var) -> Result<Var, ModelError> {
        if self.mode == Mode::Eval || self.dropout == 0.0 || self.next_frozen() {
            return Ok(x);
        }
        let rng = self
            .rng
            .as_deref_mut()
            .ok_or_else(|| ModelError::Spec("train-mode forward needs a dropout stream".into()))?;
        Ok(self.tape.dropout(x, self.dropout, Mode::Train, rng)?)
    }

    fn linear(&mut self, x: Var, name: &str, out: usize) -> Result<Var, ModelError> {
        let d = self.tape.shape(x)[1];
        let (w, _) = self.param(format!("{name}.weight"), &[out, d], Init::He(d))?;
        let (b, _) = self.param(format!("{name}.bias"), &[out], Init::Zeros)?;
        Ok(self.tape.linear(x, w, Some(b))?)
    }

    /// Five conv, batch-norm, ReLU layers; the second convolves across the full height.
    fn cnn_block(&mut self, mut x: Var, prefix: &str) -> Result<Var, ModelError> {
        for (i, &(filters, kernel, drop)) in BLOCK_LAYERS.iter().enumerate() {
            let name = format!("{prefix}.l{}", i + 1);
            if drop {
                x = self.dropout(x)?;
            }
            let (kh, kw) = kernel.unwrap_or((self.tape.shape(x)[2], 1));
            x = self.conv(x, &name, filters, kh, kw, true)?;
            x = self.batch_norm(x, &format!("{name}.bn"), true)?;
            self.record(name.clone(), x);
            self.features.push((name, x));
        }
        let flat = self.tape.flatten(x)?;
        self.record(format!("{prefix}.flatten"), flat);
        self.features.push((format!("{prefix}.flatten"), flat));
        Ok(flat)
    }

    fn lstm_sequence(&mut self, x: Var, spec: &ModelSpec) -> Result<Var, ModelError> {
        let s = self.tape.shape(x).to_vec();
        let seq = self.tape.reshape(x, &[s[0], s[2], s[3]])?;
        let mut seq = self.tape.swap_last2(seq)?;
        self.record("lstm.input", seq);
        let hid = spec.lstm.hidden;
        let bound = 1.0 / (hid as f64).sqrt();
        for l in 0..spec.lstm.layers {
            let d = self.tape.shape(seq)[2];
            let name = format!("lstm.l{}", l + 1);
            let w = LstmWeights {
                w_ih: self.param(format!("{name}.w_ih"), &[4 * hid, d], Init::Uniform(bound))?.0,
                w_hh: self.param(format!("{name}.w_hh"), &[4 * hid, hid], Init::Uniform(bound))?.0,
                bias: self.param(format!("{name}.bias"), &[4 * hid], Init::Uniform(bound))?.0,
            };
            seq = lstm_layer(self.tape, seq, &w)?;
            self.record(name, seq);
        }
        Ok(seq)
    }

    fn network(&mut self, x: Var, spec: &ModelSpec) -> Result<Var, ModelError> {
        let n = self.tape.shape(x)[0];
        let features = match spec.variant {
            ModelKind::AttentionCnn => {
                let mask = spec.mask.as_ref().ok_or_else(|| ModelError::Spec("missing mask".into()))?;
                let full = self.cnn_block(x, "full")?;
                let masked_input = apply_mask(self.tape.value(x), mask)?;
                let xm = self.tape.constant(masked_input);
                let masked = self.cnn_block(xm, "masked")?;
                let joined = self.tape.concat(&[full, masked], 1)?;
                self.record("concat", joined);
                joined
            }
            ModelKind::PlainCnn => self.cnn_block(x, "full")?,
            ModelKind::ShallowConvnet => {
                let sc = &spec.shallow;
                let y = self.conv(x, "temporal", sc.filters, 1, sc.temporal_kernel, true)?;
                self.record("temporal", y);
                let h = self.tape.shape(y)[2];
                let y = self.conv(y, "spatial", sc.filters, h, 1, false)?;
                self.record("spatial", y);
                let y = self.batch_norm(y, "spatial.bn", false)?;
                let y = self.tape.square(y);
                let y = self.tape.avg_pool_last(y, sc.pool, sc.stride)?;
                self.record("pool", y);
                let y = self.tape.log_clamped(y, LOG_FLOOR);
                let y = self.dropout(y)?;
                let flat = self.tape.flatten(y)?;
                self.record("flatten", flat);
                flat
            }
            ModelKind::Lstm => {
                let seq = self.lstm_sequence(x, spec)?;
                let steps = self.tape.shape(seq)[1];
                let last = self.tape.narrow(seq, 1, steps - 1, 1)?;
                let last = self.tape.reshape(last, &[n, spec.lstm.hidden])?;
                self.record("lstm.last", last);
                last
            }
            ModelKind::LstmCnn => {
                let seq = self.lstm_sequence(x, spec)?;
                let s = self.tape.shape(seq).to_vec();
                let img = self.tape.swap_last2(seq)?;
                let img = self.tape.reshape(img, &[n, 1, s[2], s[1]])?;
                self.record("lstm.image", img);
                self.cnn_block(img, "full")?
            }
            ModelKind::Lda => return Err(ModelError::Spec("lda is not a network".into())),
        };
        let logits = self.linear(features, HEAD, spec.n_classes)?;
        self.record("logits", logits);
        Ok(logits)
    }
}

fn check_input(spec: &ModelSpec, shape: &[usize]) -> Result<(), ModelError> {
    if shape.len() != 4 || shape[1] != 1 || shape[2] != spec.n_channels || shape[3] != spec.n_samples {
        return Err(ModelError::Architecture(format!(
            "input {shape:?}, expected [N, 1, {}, {}]",
            spec.n_channels, spec.n_samples
        )));
    }
    Ok(())
}

/// Compare the recorded block shapes against the fixed chain for `124 x 32` input.
fn verify_chain(spec: &ModelSpec, trace: &[(String, Vec<usize>)]) -> Result<(), ModelError> {
    if spec.n_channels != 124 || spec.n_samples != 32 {
        return Ok(());
    }
    let blocks: &[&str] = match spec.variant {
        ModelKind::AttentionCnn => &["full", "masked"],
        ModelKind::PlainCnn | ModelKind::LstmCnn => &["full"],
        _ => &[],
    };
    let first_height = if spec.variant == ModelKind::LstmCnn { spec.lstm.hidden } else { 124 };
    for prefix in blocks {
        for (i, &(f, h, w)) in BLOCK_CHAIN.iter().enumerate() {
            let h = if i == 0 { first_height } else { h };
            let name = format!("{prefix}.l{}", i + 1);
            let got = trace.iter().find(|(n, _)| *n == name).map(|(_, s)| &s[1..]);
            if got != Some(&[f, h, w][..]) {
                return Err(ModelError::Architecture(format!("{name}: {got:?}, expected [{f}, {h}, {w}]")));
            }
        }
    }
    if !blocks.is_empty() {
        let width = trace.iter().find(|(n, _)| n == "logits").map(|_| ());
        let head_in = 1200 * blocks.len();
        let flat: usize = trace
            .iter()
            .filter(|(n, _)| n.ends_with(".flatten"))
            .map(|(_, s)| s[1])
            .sum();
        if width.is_none() || flat != head_in {
            return Err(ModelError::Architecture(format!("head input {flat}, expected {head_in}")));
        }
    }
    Ok(())
}

/// Allocate and initialize parameters; fails if the layer shapes do not chain.
pub fn build<T: Scalar>(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Result<ModelParams<T>, ModelError> {
    spec.validate()?;
    if !spec.variant.is_network() {
        return Err(ModelError::Spec("lda has no network parameters".into()));
    }
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 1, spec.n_channels, spec.n_samples]));
    let mut ctx = Ctx {
        tape: &mut tape,
        mode: Mode::Eval,
        dropout: spec.train.dropout,
        rng: None,
        store: Store::Build {
            rng,
            params: Vec::new(),
            running: Vec::new(),
        },
        trace: Vec::new(),
        features: Vec::new(),
    };
    ctx.network(x, spec)?;
    verify_chain(spec, &ctx.trace)?;
    let Store::Build { params, running, .. } = ctx.store else {
        unreachable!("build context")
    };
    Ok(ModelParams {
        spec: spec.clone(),
        params,
        running,
    })
}

/// Run the network on `x[N,1,C,T]`. Train mode needs `rng` for dropout.
pub fn forward<T: Scalar>(
    params: &mut ModelParams<T>,
    tape: &mut Tape<T>,
    x: Var,
    mode: Mode,
    rng: Option<&mut ChaCha8Rng>,
    need_grad: bool,
) -> Result<ForwardOutput, ModelError> {
    let ModelParams {
        spec,
        params: ps,
        running,
    } = params;
    check_input(spec, tape.shape(x))?;
    let mut ctx = Ctx {
        tape,
        mode,
        dropout: spec.train.dropout,
        rng,
        store: Store::Bind {
            params: ps,
            running,
            vars: Vec::with_capacity(ps.len()),
            next_param: 0,
            next_bn: 0,
            need_grad,
        },
        trace: Vec::new(),
        features: Vec::new(),
    };
    let logits = ctx.network(x, spec)?;
    let Store::Bind { vars, next_param, .. } = ctx.store else {
        unreachable!("bind context")
    };
    if next_param != ps.len() {
        return Err(ModelError::Architecture(format!(
            "{} of {} parameters used",
            next_param,
            ps.len()
        )));
    }
    Ok(ForwardOutput {
        logits,
        param_vars: vars,
        features: ctx.features,
        trace: ctx.trace,
    })
}

/// Freeze everything but the head and replace the head with a fresh
/// `head_inputs -> new_n_classes` layer.
pub fn transfer_adapt(
    trained: &ModelParams<f32>,
    new_n_classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ModelParams<f32>, ModelError> {
    if !matches!(trained.spec.variant, ModelKind::AttentionCnn | ModelKind::PlainCnn) {
        return Err(ModelError::Spec(format!(
            "transfer needs a CNN variant, got {}",
            trained.spec.variant.name()
        )));
    }
    let mut spec = trained.spec.clone();
    spec.n_classes = new_n_classes;
    spec.validate()?;
    let d = trained.head_inputs();
    let mut params = Vec::with_capacity(trained.params.len());
    for p in &trained.params {
        let value = match p.name.as_str() {
            "head.weight" => Init::He(d).sample(rng, &[new_n_classes, d]),
            "head.bias" => Tensor::zeros(&[new_n_classes]),
            _ => {
                params.push(Param {
                    frozen: true,
                    ..p.clone()
                });
                continue;
            }
        };
        params.push(Param {
            name: p.name.clone(),
            value,
            frozen: false,
        });
    }
    Ok(ModelParams {
        spec,
        params,
        running: trained.running.clone(),
    })
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    spec: ModelSpec,
    seed: u64,
    epoch: usize,
    frozen: Vec<String>,
}

/// Parameters followed by running statistics, in declaration order.
pub fn save_params<W: Write>(w: W, params: &ModelParams<f32>, seed: u64, epoch: usize) -> Result<(), ModelError> {
    let meta = CheckpointMeta {
        spec: params.spec.clone(),
        seed,
        epoch,
        frozen: params.params.iter().filter(|p| p.frozen).map(|p| p.name.clone()).collect(),
    };
    let meta = serde_json::to_value(&meta).map_err(crate::datamodel::FormatError::from)?;
    let stats: Vec<(String, Tensor<f32>)> = params
        .running
        .iter()
        .flat_map(|(name, r)| {
            [
                (format!("{name}.running_mean"), Tensor::new(&[r.mean.len()], r.mean.clone())),
                (format!("{name}.running_var"), Tensor::new(&[r.var.len()], r.var.clone())),
            ]
        })
        .map(|(n, t)| (n, t.expect("vector extent")))
        .collect();
    let mut tensors: Vec<(&str, &Tensor<f32>)> = params.params.iter().map(|p| (p.name.as_str(), &p.value)).collect();
    tensors.extend(stats.iter().map(|(n, t)| (n.as_str(), t)));
    write_checkpoint(w, &meta, &tensors)?;
    Ok(())
}

/// Returns the parameters with the seed and epoch recorded at save time.
pub fn load_params<R: Read>(r: R) -> Result<(ModelParams<f32>, u64, usize), ModelError> {
    let (meta, tensors) = read_checkpoint(r)?;
    let meta: CheckpointMeta = serde_json::from_value(meta).map_err(crate::datamodel::FormatError::from)?;
    let mut params = build::<f32>(&meta.spec, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut it = tensors.into_iter();
    let mismatch = |what: &str| ModelError::Architecture(format!("checkpoint does not match spec at {what}"));
    for p in &mut params.params {
        let (name, t) = it.next().ok_or_else(|| mismatch(&p.name))?;
        if name != p.name || t.shape() != p.value.shape() {
            return Err(mismatch(&p.name));
        }
        p.value = t;
        p.frozen = meta.frozen.contains(&p.name);
    }
    for (name, r) in &mut params.running {
        for (suffix, dst) in [("running_mean", &mut r.mean), ("running_var", &mut r.var)] {
            let (n, t) = it.next().ok_or_else(|| mismatch(name))?;
            if n != format!("{name}.{suffix}") || t.len() != dst.len() {
                return Err(mismatch(&n));
            }
            *dst = t.into_data();
        }
    }
    if it.next().is_some() {
        return Err(mismatch("trailing tensors"));
    }
    Ok((params, meta.seed, meta.epoch))
}
