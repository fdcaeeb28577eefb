use rand::Rng;

use super::conv::{self, ConvGeometry};
use super::{fast_sum, matmul, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Train/eval switch for batch norm and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running mean/variance of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnRunning<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BnRunning<T> {
    pub fn new(features: usize) -> Self {
        BnRunning {
            mean: vec![T::zero(); features],
            var: vec![T::one(); features],
        }
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        k: Var,
        b: Option<Var>,
        cols: Vec<T>,
        geom: ConvGeometry,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        /// Statistics used for normalization; `xhat` is recomputed from `x`.
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
        spatial: usize,
        /// Output was passed through ReLU in the same op.
        relu: bool,
    },
    /// Elementwise product with a constant (dropout masks).
    ConstMul { x: Var, factor: Vec<T> },
    Relu { x: Var },
    Sigmoid { x: Var },
    Tanh { x: Var },
    Square { x: Var },
    LogClamp { x: Var, min: T },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: T },
    Linear { x: Var, w: Var, b: Option<Var> },
    Reshape { x: Var },
    Concat { inputs: Vec<Var>, outer: usize, chunks: Vec<usize> },
    Narrow { x: Var, outer: usize, src_chunk: usize, offset: usize },
    SwapLast2 { x: Var, batch: usize, rows: usize, cols: usize },
    AvgPoolLast { x: Var, kernel: usize, stride: usize, w_in: usize, w_out: usize },
    SumAll { x: Var },
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Vec<T> },
}

/// Execution record for one forward/backward pass.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order; `backward` walks it from the loss down to index 0.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input. Only leaves created with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.nodes[x.0].value.map(f);
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, rg, op)
    }

    // ----------------------------------------------------------------------
    // operations

    /// Valid, stride-1 cross-correlation of `x[N,C,H,W]` with `k[F,C,kh,kw]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(k).to_vec();
        if xs.len() != 4 || ks.len() != 4 {
            return Err(TensorError::shape(
                "conv2d",
                "input [N,C,H,W] and kernel [F,C,kh,kw]",
                (xs, ks),
            ));
        }
        if ks[1] != xs[1] {
            return Err(TensorError::shape(
                "conv2d",
                format!("kernel with {} input channels", xs[1]),
                ks,
            ));
        }
        if ks[2] > xs[2] || ks[3] > xs[3] || ks[2] == 0 || ks[3] == 0 {
            return Err(TensorError::shape(
                "conv2d",
                format!("kernel extent within input {}x{}", xs[2], xs[3]),
                ks,
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [ks[0]] {
                return Err(TensorError::shape(
                    "conv2d",
                    format!("bias [{}]", ks[0]),
                    self.shape(b),
                ));
            }
        }
        let geom = ConvGeometry {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            f: ks[0],
            kh: ks[2],
            kw: ks[3],
        };
        let (y, cols) = conv::forward(
            self.value(x).data(),
            self.value(k).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let mut inputs = vec![x, k];
        inputs.extend(b);
        let rg = self.any_grad(&inputs);
        let value = Tensor::new(&[geom.n, geom.f, geom.out_h(), geom.out_w()], y)?;
        let cols = if rg { cols } else { Vec::new() };
        Ok(self.push(value, rg, Op::Conv2d { x, k, b, cols, geom }))
    }

    /// Batch normalization over every axis but axis 1.
    ///
    /// In train mode the batch statistics normalize the input and are
    /// folded into `running` by exponential moving average; eval mode uses
    /// `running` as-is.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut BnRunning<T>,
        mode: Mode,
    ) -> Result<Var, TensorError> {
        self.batch_norm_impl(x, gamma, beta, running, mode, false)
    }

    /// `relu(batch_norm(x))` as a single node, saving one full-size pass.
    pub fn batch_norm_relu(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut BnRunning<T>,
        mode: Mode,
    ) -> Result<Var, TensorError> {
        self.batch_norm_impl(x, gamma, beta, running, mode, true)
    }

    fn batch_norm_impl(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut BnRunning<T>,
        mode: Mode,
        relu: bool,
    ) -> Result<Var, TensorError> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(TensorError::shape("batch_norm", "rank >= 2", xs));
        }
        let (n, f) = (xs[0], xs[1]);
        let spatial: usize = xs[2..].iter().product();
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [f] {
                return Err(TensorError::shape(
                    "batch_norm",
                    format!("{name} [{f}]"),
                    self.shape(v),
                ));
            }
        }
        if running.mean.len() != f || running.var.len() != f {
            return Err(TensorError::shape(
                "batch_norm",
                format!("running stats for {f} features"),
                running.mean.len(),
            ));
        }
        let eps = T::lit(BN_EPS);
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let count = n * spatial;
        let batch_stats = mode == Mode::Train;
        let mut mean = vec![T::zero(); f];
        let mut var = vec![T::zero(); f];
        if batch_stats {
            if count == 0 {
                return Err(TensorError::param("batch_norm", "empty batch"));
            }
            let inv_count = T::one() / T::from_usize(count).unwrap();
            for c in 0..f {
                let mut s = T::zero();
                for i in 0..n {
                    let off = (i * f + c) * spatial;
                    s += fast_sum(&xv[off..off + spatial]);
                }
                mean[c] = s * inv_count;
                let mut ss = T::zero();
                for i in 0..n {
                    let off = (i * f + c) * spatial;
                    ss += sum_sq_dev(&xv[off..off + spatial], mean[c]);
                }
                var[c] = ss * inv_count;
            }
        } else {
            mean.copy_from_slice(&running.mean);
            var.copy_from_slice(&running.var);
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut y = vec![T::zero(); xv.len()];
        for i in 0..n {
            for c in 0..f {
                let off = (i * f + c) * spatial;
                // y = gamma * (v - mean) * inv_std + beta, folded into one multiply-add
                let scale = g[c] * inv_std[c];
                let shift = bt[c] - scale * mean[c];
                let dst = &mut y[off..off + spatial];
                if relu {
                    for (o, &v) in dst.iter_mut().zip(&xv[off..off + spatial]) {
                        let a = scale * v + shift;
                        *o = if a > T::zero() { a } else { T::zero() };
                    }
                } else {
                    for (o, &v) in dst.iter_mut().zip(&xv[off..off + spatial]) {
                        *o = scale * v + shift;
                    }
                }
            }
        }
        if batch_stats {
            let mom = T::lit(BN_MOMENTUM);
            let unbias = if count > 1 {
                T::from_usize(count).unwrap() / T::from_usize(count - 1).unwrap()
            } else {
                T::one()
            };
            for c in 0..f {
                running.mean[c] = (T::one() - mom) * running.mean[c] + mom * mean[c];
                running.var[c] = (T::one() - mom) * running.var[c] + mom * var[c] * unbias;
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        let value = Tensor::new(&xs, y)?;
        Ok(self.push(
            value,
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
                spatial,
                relu,
            },
        ))
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::param("dropout", format!("p = {p} outside [0, 1)")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let factor: Vec<T> = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&factor).map(|(&a, &m)| a * m).collect();
        let value = Tensor::new(xv.shape(), data)?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(value, rg, Op::ConstMul { x, factor }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh { x })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square { x })
    }

    /// `ln(max(x, min))`; the gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, x: Var, min: f64) -> Var {
        let min = T::lit(min);
        self.unary(x, move |v| v.max(min).ln(), Op::LogClamp { x, min })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::lit(c);
        self.unary(x, move |v| v * c, Op::Scale { x, c })
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(TensorError::shape(name, format!("{:?}", av.shape()), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Mul { a, b }))
    }

    /// `x · wᵀ + b` for `x[N,D]`, `w[O,D]`, `b[O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(TensorError::shape(
                "linear",
                "input [N,D] and weight [O,D]",
                (xs, ws),
            ));
        }
        let (n, d, o) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(TensorError::shape("linear", format!("bias [{o}]"), self.shape(b)));
            }
        }
        let mut y = vec![T::zero(); n * o];
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in y.chunks_exact_mut(o) {
                row.copy_from_slice(bv);
            }
        }
        matmul(
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut y,
            n,
            d,
            o,
            T::one(),
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.any_grad(&inputs);
        let value = Tensor::new(&[n, o], y)?;
        Ok(self.push(value, rg, Op::Linear { x, w, b }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(value, rg, Op::Reshape { x }))
    }

    /// Collapse every axis after the first.
    pub fn flatten(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.shape(x);
        if s.is_empty() {
            return Err(TensorError::shape("flatten", "rank >= 1", s));
        }
        let n = s[0];
        let rest: usize = s[1..].iter().product();
        self.reshape(x, &[n, rest])
    }

    /// Join tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::param("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::Index {
                op: "concat",
                index: axis,
                bound: base.len(),
            });
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let agrees = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !agrees {
                return Err(TensorError::shape(
                    "concat",
                    format!("extents {base:?} except axis {axis}"),
                    s,
                ));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let chunks: Vec<usize> = inputs.iter().map(|v| self.shape(*v)[axis] * inner).collect();
        let width: usize = chunks.iter().sum();
        let mut data = Vec::with_capacity(outer * width);
        for o in 0..outer {
            for (v, &c) in inputs.iter().zip(&chunks) {
                data.extend_from_slice(&self.value(*v).data()[o * c..(o + 1) * c]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.any_grad(inputs);
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(
            value,
            rg,
            Op::Concat {
                inputs: inputs.to_vec(),
                outer,
                chunks,
            },
        ))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(TensorError::Index {
                op: "narrow",
                index: axis,
                bound: s.len(),
            });
        }
        if start + len > s[axis] {
            return Err(TensorError::Index {
                op: "narrow",
                index: start + len,
                bound: s[axis],
            });
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let src_chunk = s[axis] * inner;
        let chunk = len * inner;
        let offset = start * inner;
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(outer * chunk);
        for o in 0..outer {
            data.extend_from_slice(&xv[o * src_chunk + offset..o * src_chunk + offset + chunk]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.nodes[x.0].requires_grad;
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(
            value,
            rg,
            Op::Narrow {
                x,
                outer,
                src_chunk,
                offset,
            },
        ))
    }

    /// Transpose the last two axes.
    pub fn swap_last2(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(TensorError::shape("swap_last2", "rank >= 2", s));
        }
        let r = s[s.len() - 2];
        let c = s[s.len() - 1];
        let batch: usize = s[..s.len() - 2].iter().product();
        let xv = self.value(x).data();
        let mut data = vec![T::zero(); xv.len()];
        transpose_blocks(xv, &mut data, batch, r, c);
        let mut shape = s;
        let l = shape.len();
        shape.swap(l - 2, l - 1);
        let rg = self.nodes[x.0].requires_grad;
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(
            value,
            rg,
            Op::SwapLast2 {
                x,
                batch,
                rows: r,
                cols: c,
            },
        ))
    }

    /// Mean pooling along the last axis.
    pub fn avg_pool_last(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        let w_in = *s
            .last()
            .ok_or_else(|| TensorError::shape("avg_pool", "rank >= 1", &s))?;
        if kernel == 0 || stride == 0 || kernel > w_in {
            return Err(TensorError::param(
                "avg_pool",
                format!("kernel {kernel}, stride {stride} on width {w_in}"),
            ));
        }
        let w_out = (w_in - kernel) / stride + 1;
        let rows = self.value(x).len() / w_in;
        let xv = self.value(x).data();
        let inv = T::one() / T::from_usize(kernel).unwrap();
        let mut data = Vec::with_capacity(rows * w_out);
        for r in 0..rows {
            let row = &xv[r * w_in..(r + 1) * w_in];
            for o in 0..w_out {
                let sum: T = row[o * stride..o * stride + kernel].iter().copied().sum();
                data.push(sum * inv);
            }
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = w_out;
        let rg = self.nodes[x.0].requires_grad;
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(
            value,
            rg,
            Op::AvgPoolLast {
                x,
                kernel,
                stride,
                w_in,
                w_out,
            },
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        let rg = self.nodes[x.0].requires_grad;
        self.push(Tensor::scalar(total), rg, Op::SumAll { x })
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[1] < 2 {
            return Err(TensorError::shape("softmax_cross_entropy", "[N, C] with C >= 2", s));
        }
        let (n, c) = (s[0], s[1]);
        if labels.len() != n {
            return Err(TensorError::shape(
                "softmax_cross_entropy",
                format!("{n} labels"),
                labels.len(),
            ));
        }
        if n == 0 {
            return Err(TensorError::param("softmax_cross_entropy", "empty batch"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::Index {
                op: "softmax_cross_entropy",
                index: bad,
                bound: c,
            });
        }
        let probs = softmax_rows(self.value(logits).data(), c);
        let lv = self.value(logits).data();
        let mut loss = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            let row = &lv[i * c..(i + 1) * c];
            loss += log_sum_exp(row) - row[y];
        }
        loss /= T::from_usize(n).unwrap();
        let rg = self.nodes[logits.0].requires_grad;
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    // ----------------------------------------------------------------------
    // backward

    /// Reverse-mode sweep from a one-element `loss`.
    ///
    /// Gradients of leaves and of `loss` itself are retained; intermediate
    /// gradients are released once propagated.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::shape("backward", "one-element loss", self.shape(loss)));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let root = loss.0;
        self.nodes[root].grad = Some(Tensor::ones(self.nodes[root].value.shape()));
        if !self.nodes[root].requires_grad {
            return Ok(());
        }
        for i in (0..=root).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let grad = match if i == root { node.grad.clone() } else { node.grad.take() } {
                Some(g) => g,
                None => continue,
            };
            let contributions = backward_op(&node.op, &node.value, grad.data(), before);
            for (var, delta) in contributions {
                let target = &mut before[var.0];
                if !target.requires_grad {
                    continue;
                }
                match &mut target.grad {
                    Some(g) => g.add_assign(&delta),
                    None => {
                        target.grad = Some(Tensor {
                            shape: target.value.shape().to_vec(),
                            data: delta,
                        })
                    }
                }
            }
        }
        Ok(())
    }
}

/// `Σ (x_i - m)^2` with the accumulation scheme of `fast_sum`.
fn sum_sq_dev<T: Scalar>(xs: &[T], m: T) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = xs.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for k in 0..8 {
            let d = c[k] - m;
            acc[k] += d * d;
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for &v in tail {
        s += (v - m) * (v - m);
    }
    s
}

fn transpose_blocks<T: Copy>(src: &[T], dst: &mut [T], batch: usize, rows: usize, cols: usize) {
    for b in 0..batch {
        let s = &src[b * rows * cols..(b + 1) * rows * cols];
        let d = &mut dst[b * rows * cols..(b + 1) * rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                d[c * rows + r] = s[r * cols + c];
            }
        }
    }
}

pub(crate) fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::infinity() {
        return m;
    }
    m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

/// Row-wise softmax of a `[N, C]` buffer.
pub fn softmax_rows<T: Scalar>(logits: &[T], c: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(c) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
        let s: T = e.iter().copied().sum();
        out.extend(e.into_iter().map(|v| v / s));
    }
    out
}

fn ew<T: Scalar>(g: &[T], other: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    g.iter().zip(other).map(|(&a, &b)| f(a, b)).collect()
}

fn backward_op<T: Scalar>(op: &Op<T>, out: &Tensor<T>, g: &[T], nodes: &[Node<T>]) -> Vec<(Var, Vec<T>)> {
    let val = |v: &Var| nodes[v.0].value.data();
    let needs = |v: &Var| nodes[v.0].requires_grad;
    let mut res = Vec::new();
    match op {
        Op::Leaf => {}
        Op::Conv2d { x, k, b, cols, geom } => {
            let grads = conv::backward(
                g,
                val(x),
                val(k),
                cols,
                geom,
                (needs(x), needs(k), b.as_ref().is_some_and(needs)),
            );
            if let Some(d) = grads.input {
                res.push((*x, d));
            }
            if let Some(d) = grads.kernel {
                res.push((*k, d));
            }
            if let (Some(b), Some(d)) = (b, grads.bias) {
                res.push((*b, d));
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            mean,
            inv_std,
            batch_stats,
            spatial,
            relu,
        } => {
            let f = inv_std.len();
            let n = g.len() / (f * spatial);
            let gm = val(gamma);
            let bt = val(beta);
            let xv = val(x);
            // The fused ReLU gate is recomputed from x: y > 0 iff scale*x + shift > 0.
            let gate = |gv: T, v: T, c: usize| {
                if !*relu {
                    return gv;
                }
                let scale = gm[c] * inv_std[c];
                if scale * v + (bt[c] - scale * mean[c]) > T::zero() {
                    gv
                } else {
                    T::zero()
                }
            };
            let mut dgamma = vec![T::zero(); f];
            let mut dbeta = vec![T::zero(); f];
            for i in 0..n {
                for c in 0..f {
                    let off = (i * f + c) * spatial;
                    let m = mean[c];
                    let (mut sg, mut sgh) = (T::zero(), T::zero());
                    for (&gv, &v) in g[off..off + spatial].iter().zip(&xv[off..off + spatial]) {
                        let gg = gate(gv, v, c);
                        sg += gg;
                        sgh += gg * (v - m);
                    }
                    dgamma[c] += sgh * inv_std[c];
                    dbeta[c] += sg;
                }
            }
            if needs(x) {
                let mut dx = vec![T::zero(); g.len()];
                let cnt = T::from_usize(n * spatial).unwrap();
                for i in 0..n {
                    for c in 0..f {
                        let off = (i * f + c) * spatial;
                        let dst = &mut dx[off..off + spatial];
                        let it = g[off..off + spatial].iter().zip(&xv[off..off + spatial]);
                        if *batch_stats {
                            // dxhat = g * gamma; its batch sums reduce to dbeta and dgamma.
                            let (m, is) = (mean[c], inv_std[c]);
                            let k = gm[c] * is / cnt;
                            let (db, dgh) = (dbeta[c], dgamma[c] * is);
                            for (d, (&gv, &v)) in dst.iter_mut().zip(it) {
                                *d = k * (cnt * gate(gv, v, c) - db - (v - m) * dgh);
                            }
                        } else {
                            let k = gm[c] * inv_std[c];
                            for (d, (&gv, &v)) in dst.iter_mut().zip(it) {
                                *d = gate(gv, v, c) * k;
                            }
                        }
                    }
                }
                res.push((*x, dx));
            }
            res.push((*gamma, dgamma));
            res.push((*beta, dbeta));
        }
        Op::ConstMul { x, factor } => res.push((*x, ew(g, factor, |a, b| a * b))),
        Op::Relu { x } => res.push((
            *x,
            ew(g, val(x), |a, v| if v > T::zero() { a } else { T::zero() }),
        )),
        Op::Sigmoid { x } => res.push((*x, ew(g, out.data(), |a, y| a * y * (T::one() - y)))),
        Op::Tanh { x } => res.push((*x, ew(g, out.data(), |a, y| a * (T::one() - y * y)))),
        Op::Square { x } => res.push((*x, ew(g, val(x), |a, v| a * (v + v)))),
        Op::LogClamp { x, min } => res.push((
            *x,
            ew(g, val(x), |a, v| if v > *min { a / v } else { T::zero() }),
        )),
        Op::Scale { x, c } => res.push((*x, g.iter().map(|&a| a * *c).collect())),
        Op::Add { a, b } => {
            res.push((*a, g.to_vec()));
            res.push((*b, g.to_vec()));
        }
        Op::Mul { a, b } => {
            if needs(a) {
                res.push((*a, ew(g, val(b), |x, y| x * y)));
            }
            if needs(b) {
                res.push((*b, ew(g, val(a), |x, y| x * y)));
            }
        }
        Op::Linear { x, w, b } => {
            let xs = nodes[x.0].value.shape();
            let (n, d) = (xs[0], xs[1]);
            let o = nodes[w.0].value.shape()[0];
            if needs(x) {
                let mut dx = vec![T::zero(); n * d];
                matmul(g, false, val(w), false, &mut dx, n, o, d, T::zero());
                res.push((*x, dx));
            }
            if needs(w) {
                let mut dw = vec![T::zero(); o * d];
                matmul(g, true, val(x), false, &mut dw, o, n, d, T::zero());
                res.push((*w, dw));
            }
            if let Some(b) = b {
                let mut db = vec![T::zero(); o];
                for row in g.chunks_exact(o) {
                    for (acc, &v) in db.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                res.push((*b, db));
            }
        }
        Op::Reshape { x } => res.push((*x, g.to_vec())),
        Op::Concat {
            inputs,
            outer,
            chunks,
        } => {
            let width: usize = chunks.iter().sum();
            let mut start = 0;
            for (v, &c) in inputs.iter().zip(chunks) {
                if needs(v) {
                    let mut d = Vec::with_capacity(outer * c);
                    for o in 0..*outer {
                        d.extend_from_slice(&g[o * width + start..o * width + start + c]);
                    }
                    res.push((*v, d));
                }
                start += c;
            }
        }
        Op::Narrow {
            x,
            outer,
            src_chunk,
            offset,
        } => {
            let chunk = g.len() / outer.max(&1);
            let mut d = vec![T::zero(); outer * src_chunk];
            for o in 0..*outer {
                d[o * src_chunk + offset..o * src_chunk + offset + chunk]
                    .copy_from_slice(&g[o * chunk..(o + 1) * chunk]);
            }
            res.push((*x, d));
        }
        Op::SwapLast2 {
            x,
            batch,
            rows,
            cols,
        } => {
            let mut d = vec![T::zero(); g.len()];
            transpose_blocks(g, &mut d, *batch, *cols, *rows);
            res.push((*x, d));
        }
        Op::AvgPoolLast {
            x,
            kernel,
            stride,
            w_in,
            w_out,
        } => {
            let rows = g.len() / w_out;
            let inv = T::one() / T::from_usize(*kernel).unwrap();
            let mut d = vec![T::zero(); rows * w_in];
            for r in 0..rows {
                for o in 0..*w_out {
                    let v = g[r * w_out + o] * inv;
                    for e in &mut d[r * w_in + o * stride..r * w_in + o * stride + kernel] {
                        *e += v;
                    }
                }
            }
            res.push((*x, d));
        }
        Op::SumAll { x } => res.push((*x, vec![g[0]; nodes[x.0].value.len()])),
        Op::SoftmaxCe {
            logits,
            labels,
            probs,
        } => {
            let n = labels.len();
            let c = probs.len() / n;
            let scale = g[0] / T::from_usize(n).unwrap();
            let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
            for (i, &y) in labels.iter().enumerate() {
                d[i * c + y] -= scale;
            }
            res.push((*logits, d));
        }
    }
    res
}
