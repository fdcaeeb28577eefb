//! Valid, stride-1 2-D cross-correlation.
//!
//! Tiny patches are convolved directly. Everything else is lowered to GEMM:
//! one product per sample when the output plane is large, a single batched
//! product over `[C*kh*kw, N*Ho*Wo]` when it is small. Full-height spatial
//! kernels need no lowering at all since each `[C*H, W]` sample already is
//! its patch matrix.

use super::{matmul, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        self.h - self.kh + 1
    }

    pub fn out_w(&self) -> usize {
        self.w - self.kw + 1
    }

    /// Output positions per sample.
    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Rows of the lowered input matrix (`C * kh * kw`).
    pub fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    /// Small output planes use one batched GEMM instead of one per sample.
    pub fn batched(&self) -> bool {
        !self.identity_lowering() && self.positions() < BATCHED_BELOW
    }

    /// A full-height, one-column kernel lowers each sample to itself.
    pub fn identity_lowering(&self) -> bool {
        self.kh == self.h && self.kw == 1
    }

    /// Offset of lowered row `row` of sample `n` in the `cols` buffer.
    fn col_offset(&self, n: usize, row: usize) -> usize {
        let p = self.positions();
        if self.batched() {
            row * self.n * p + n * p
        } else {
            (n * self.patch() + row) * p
        }
    }
}

const BATCHED_BELOW: usize = 256;

/// Lower `x[N,C,H,W]` to patch rows, laid out per [`ConvGeometry::col_offset`].
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let p = g.positions();
    let mut cols = vec![T::zero(); g.n * g.patch() * p];
    for n in 0..g.n {
        for c in 0..g.c {
            let plane = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let row = (c * g.kh + i) * g.kw + j;
                    let off = g.col_offset(n, row);
                    let dst_row = &mut cols[off..off + p];
                    for oh in 0..ho {
                        let src = &plane[(oh + i) * g.w + j..(oh + i) * g.w + j + wo];
                        dst_row[oh * wo..(oh + 1) * wo].copy_from_slice(src);
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add patch rows back into `dx[N,C,H,W]`.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let p = g.positions();
    for n in 0..g.n {
        for c in 0..g.c {
            let base = (n * g.c + c) * g.h * g.w;
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let row = (c * g.kh + i) * g.kw + j;
                    let off = g.col_offset(n, row);
                    let src_row = &cols[off..off + p];
                    for oh in 0..ho {
                        let dst = base + (oh + i) * g.w + j;
                        let src = &src_row[oh * wo..(oh + 1) * wo];
                        for (d, &s) in dx[dst..dst + wo].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

/// Patches at most this large are convolved directly instead of via GEMM.
const DIRECT_PATCH: usize = 16;

impl ConvGeometry {
    /// Whether the direct (im2col-free) path is used.
    pub fn direct(&self) -> bool {
        self.patch() <= DIRECT_PATCH
    }
}

/// Forward pass; returns `(y[N,F,Ho,Wo], cols)` where `cols` is empty on the direct path.
pub(crate) fn forward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
    g: &ConvGeometry,
) -> (Vec<T>, Vec<T>) {
    if g.direct() {
        return (direct_forward(x, kernel, bias, g), Vec::new());
    }
    let cols = if g.identity_lowering() { Vec::new() } else { im2col(x, g) };
    let cols_ref = if g.identity_lowering() { x } else { &cols[..] };
    let p = g.positions();
    let kp = g.patch() * p;
    let fp = g.f * p;
    let mut y = vec![T::zero(); g.n * fp];
    if g.batched() {
        let np = g.n * p;
        let mut tmp = vec![T::zero(); g.f * np];
        matmul(kernel, false, &cols, false, &mut tmp, g.f, g.patch(), np, T::zero());
        for f in 0..g.f {
            let bf = bias.map_or(T::zero(), |b| b[f]);
            for n in 0..g.n {
                let src = &tmp[f * np + n * p..f * np + (n + 1) * p];
                for (o, &v) in y[n * fp + f * p..n * fp + (f + 1) * p].iter_mut().zip(src) {
                    *o = v + bf;
                }
            }
        }
        return (y, cols);
    }
    for n in 0..g.n {
        let out = &mut y[n * fp..(n + 1) * fp];
        if let Some(b) = bias {
            for (row, &bf) in out.chunks_exact_mut(p).zip(b) {
                row.fill(bf);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        matmul(kernel, false, &cols_ref[n * kp..(n + 1) * kp], false, out, g.f, g.patch(), p, beta);
    }
    (y, cols)
}

// The direct path works on flattened planes. With `span = (Ho-1)*W + Wo`,
// output (oh, ow) sits at flat offset `oh*W + ow` of a span-long buffer and
// tap (i, j) is a shift by `i*W + j`, so every tap is one long axpy or dot.
// Offsets with `ow >= Wo` are scratch and never leave the buffer.

fn span(g: &ConvGeometry) -> usize {
    (g.out_h() - 1) * g.w + g.out_w()
}

fn direct_forward<T: Scalar>(x: &[T], kernel: &[T], bias: Option<&[T]>, g: &ConvGeometry) -> Vec<T> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let p = g.positions();
    let hw = g.h * g.w;
    let len = span(g);
    let mut acc = vec![T::zero(); len];
    let mut y = vec![T::zero(); g.n * g.f * p];
    for n in 0..g.n {
        for f in 0..g.f {
            acc.fill(bias.map_or(T::zero(), |b| b[f]));
            for c in 0..g.c {
                let plane = &x[(n * g.c + c) * hw..(n * g.c + c + 1) * hw];
                for i in 0..g.kh {
                    for j in 0..g.kw {
                        let kv = kernel[((f * g.c + c) * g.kh + i) * g.kw + j];
                        let shift = i * g.w + j;
                        for (a, &v) in acc.iter_mut().zip(&plane[shift..shift + len]) {
                            *a += kv * v;
                        }
                    }
                }
            }
            let out = &mut y[(n * g.f + f) * p..(n * g.f + f + 1) * p];
            for oh in 0..ho {
                out[oh * wo..(oh + 1) * wo].copy_from_slice(&acc[oh * g.w..oh * g.w + wo]);
            }
        }
    }
    y
}

fn direct_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    kernel: &[T],
    g: &ConvGeometry,
    need_input: bool,
    need_kernel: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let p = g.positions();
    let hw = g.h * g.w;
    let len = span(g);
    let mut dk = need_kernel.then(|| vec![T::zero(); g.f * g.patch()]);
    let mut dx = need_input.then(|| vec![T::zero(); x.len()]);
    let mut gexp = vec![T::zero(); len];
    for n in 0..g.n {
        for f in 0..g.f {
            let gout = &dy[(n * g.f + f) * p..(n * g.f + f + 1) * p];
            for oh in 0..ho {
                gexp[oh * g.w..oh * g.w + wo].copy_from_slice(&gout[oh * wo..(oh + 1) * wo]);
            }
            for c in 0..g.c {
                let base = (n * g.c + c) * hw;
                for i in 0..g.kh {
                    for j in 0..g.kw {
                        let ki = ((f * g.c + c) * g.kh + i) * g.kw + j;
                        let start = base + i * g.w + j;
                        if let Some(dk) = dk.as_mut() {
                            dk[ki] += super::fast_dot(&gexp, &x[start..start + len]);
                        }
                        if let Some(dx) = dx.as_mut() {
                            let kv = kernel[ki];
                            for (d, &gv) in dx[start..start + len].iter_mut().zip(&gexp) {
                                *d += kv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dk)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    kernel: &[T],
    cols: &[T],
    g: &ConvGeometry,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let p = g.positions();
    let kp = g.patch() * p;
    let fp = g.f * p;
    let bias = need.2.then(|| {
        let mut db = vec![T::zero(); g.f];
        for sample in dy.chunks_exact(fp) {
            for (acc, row) in db.iter_mut().zip(sample.chunks_exact(p)) {
                *acc += super::fast_sum(row);
            }
        }
        db
    });
    if g.direct() {
        let (input, kernel) = direct_backward(dy, x, kernel, g, need.0, need.1);
        return ConvGrads { input, kernel, bias };
    }
    if g.batched() {
        let np = g.n * p;
        let mut dyb = vec![T::zero(); g.f * np];
        for n in 0..g.n {
            for f in 0..g.f {
                dyb[f * np + n * p..f * np + (n + 1) * p].copy_from_slice(&dy[n * fp + f * p..n * fp + (f + 1) * p]);
            }
        }
        let kernel_grad = need.1.then(|| {
            let mut dk = vec![T::zero(); g.f * g.patch()];
            matmul(&dyb, false, cols, true, &mut dk, g.f, np, g.patch(), T::zero());
            dk
        });
        let input = need.0.then(|| {
            let mut dcols = vec![T::zero(); g.patch() * np];
            matmul(kernel, true, &dyb, false, &mut dcols, g.patch(), g.f, np, T::zero());
            let mut dx = vec![T::zero(); g.n * g.c * g.h * g.w];
            col2im(&dcols, g, &mut dx);
            dx
        });
        return ConvGrads { input, kernel: kernel_grad, bias };
    }
    let cols = if g.identity_lowering() { x } else { cols };
    let kernel_grad = need.1.then(|| {
        let mut dk = vec![T::zero(); g.f * g.patch()];
        for n in 0..g.n {
            matmul(
                &dy[n * fp..(n + 1) * fp],
                false,
                &cols[n * kp..(n + 1) * kp],
                true,
                &mut dk,
                g.f,
                p,
                g.patch(),
                T::one(),
            );
        }
        dk
    });
    let input = need.0.then(|| {
        let mut dcols = vec![T::zero(); g.n * kp];
        if g.identity_lowering() {
            for n in 0..g.n {
                let (dyn_, dxn) = (&dy[n * fp..(n + 1) * fp], &mut dcols[n * kp..(n + 1) * kp]);
                matmul(kernel, true, dyn_, false, dxn, g.patch(), g.f, p, T::zero());
            }
            return dcols;
        }
        for n in 0..g.n {
            matmul(
                kernel,
                true,
                &dy[n * fp..(n + 1) * fp],
                false,
                &mut dcols[n * kp..(n + 1) * kp],
                g.patch(),
                g.f,
                p,
                T::zero(),
            );
        }
        let mut dx = vec![T::zero(); g.n * g.c * g.h * g.w];
        col2im(&dcols, g, &mut dx);
        dx
    });
    ConvGrads {
        input,
        kernel: kernel_grad,
        bias,
    }
}
