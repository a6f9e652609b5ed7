//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Operations append nodes to a [`Tape`]; node indices ([`Var`]) are handed
//! back to the caller. Because every node is appended after its parents, the
//! tape order is already topological and [`Tape::backward`] is a single
//! reverse sweep that visits each node exactly once. Gradients of fan-out
//! nodes accumulate additively.
//!
//! Conventions:
//! - `conv1d` / `conv2d` compute true convolution (kernel flipped), stride
//!   `s`, zero "same" padding: output length is `ceil(n / s)` per axis and
//!   kernel sizes must be odd.
//! - `softmax` subtracts the lane maximum before exponentiation.
//! - every operation rejects non-finite outputs with a numerical error.

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};
use crate::tensor::Tensor;

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Running mean/variance tracked by batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

impl<S: Scalar> BnStats<S> {
    /// Fresh statistics for `channels` channels (mean 0, variance 1).
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![S::zero(); channels],
            var: vec![S::one(); channels],
        }
    }
}

#[derive(Clone, Debug)]
struct BnSaved<S> {
    xhat: Tensor<S>,
    inv_std: Vec<S>,
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    Add(usize, usize),
    AddColBias(usize, usize),
    Mul(usize, usize),
    Scale(usize, S),
    MatMul(usize, usize),
    Transpose(usize),
    Conv1d {
        x: usize,
        w: usize,
        b: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        stride: usize,
    },
    MaxPool1d {
        x: usize,
        argmax: Vec<usize>,
    },
    GlobalAvgPool2d(usize),
    Relu(usize),
    Tanh(usize),
    Softmax {
        x: usize,
        axis: usize,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        saved: BnSaved<S>,
    },
    BatchNormEval {
        x: usize,
        gamma: usize,
        beta: usize,
        saved: BnSaved<S>,
    },
    Concat {
        xs: Vec<usize>,
        axis: usize,
    },
    Slice {
        x: usize,
        start: Vec<usize>,
    },
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    MeanAxis {
        x: usize,
        axis: usize,
    },
    ScaleChannels {
        x: usize,
        a: usize,
    },
    CrossEntropy {
        logits: usize,
        label: usize,
    },
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    grad: Option<Tensor<S>>,
    requires_grad: bool,
    op: Op<S>,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

fn lane_dims(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Shape(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Output index range `[lo, hi)` such that `o*stride + offset` lands inside
/// `[0, size_in)`, clipped to `[0, size_out)`.
fn conv_span(stride: usize, offset: isize, size_in: usize, size_out: usize) -> (usize, usize) {
    let st = stride as isize;
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) + st - 1) / st
    };
    let hi_num = size_in as isize - 1 - offset;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num / st + 1).min(size_out as isize);
    if hi <= lo {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts an input tensor.
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Inserts a non-differentiable input.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated by the last `backward` call, if the node was on
    /// the differentiated path.
    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, value: Tensor<S>, parents: &[usize], op: Op<S>) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numerical(format!(
                "non-finite value produced by {}",
                op_name(&op)
            )));
        }
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    // ---- elementwise and linear algebra ----

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(value, &[a.0, b.0], Op::Add(a.0, b.0))
    }

    /// Adds a length-`r` vector to every column of an `r x c` matrix.
    pub fn add_col_bias(&mut self, m: Var, bias: Var) -> Result<Var> {
        let (tm, tb) = (&self.nodes[m.0].value, &self.nodes[bias.0].value);
        if tm.rank() != 2 || tb.rank() != 1 || tb.shape()[0] != tm.shape()[0] {
            return Err(Error::Shape(format!(
                "add_col_bias: {:?} vs {:?}",
                tm.shape(),
                tb.shape()
            )));
        }
        let (r, c) = (tm.shape()[0], tm.shape()[1]);
        let mut data = tm.data().to_vec();
        for i in 0..r {
            let bv = tb.data()[i];
            for v in &mut data[i * c..(i + 1) * c] {
                *v += bv;
            }
        }
        let value = Tensor::new(vec![r, c], data)?;
        self.push(value, &[m.0, bias.0], Op::AddColBias(m.0, bias.0))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "mul: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(value, &[a.0, b.0], Op::Mul(a.0, b.0))
    }

    /// Multiplication by a compile-time-known constant.
    pub fn scale(&mut self, a: Var, k: S) -> Result<Var> {
        let value = self.nodes[a.0].value.map(|v| v * k);
        self.push(value, &[a.0], Op::Scale(a.0, k))
    }

    /// Rank-2 matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::Shape(format!(
                "matmul: {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let value = Tensor::new(vec![m, n], mm_nn(ta.data(), tb.data(), m, k, n))?;
        self.push(value, &[a.0, b.0], Op::MatMul(a.0, b.0))
    }

    /// Rank-2 transpose.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        if ta.rank() != 2 {
            return Err(Error::Shape(format!("transpose: {:?}", ta.shape())));
        }
        let (r, c) = (ta.shape()[0], ta.shape()[1]);
        let mut data = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = ta.data()[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], data)?;
        self.push(value, &[a.0], Op::Transpose(a.0))
    }

    // ---- convolution and pooling ----

    /// 1D convolution: input `[c_in, n]`, kernel `[c_out, c_in, k]` with odd
    /// `k`, bias `[c_out]`; stride 1, zero same-padding, kernel flipped.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
        );
        if tx.rank() != 2 || tw.rank() != 3 || tb.rank() != 1 {
            return Err(Error::Shape(format!(
                "conv1d: x {:?}, w {:?}, b {:?}",
                tx.shape(),
                tw.shape(),
                tb.shape()
            )));
        }
        let (c_in, n) = (tx.shape()[0], tx.shape()[1]);
        let (c_out, wc_in, k) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
        if wc_in != c_in || tb.shape()[0] != c_out {
            return Err(Error::Shape(format!(
                "conv1d: kernel {:?} does not fit input {:?}",
                tw.shape(),
                tx.shape()
            )));
        }
        if k % 2 == 0 || k == 0 {
            return Err(Error::Shape(format!("conv1d: kernel size {k} must be odd")));
        }
        let center = (k - 1) / 2;
        let mut out = vec![S::zero(); c_out * n];
        for co in 0..c_out {
            let bias = tb.data()[co];
            let row = &mut out[co * n..(co + 1) * n];
            row.fill(bias);
            for ci in 0..c_in {
                let xrow = &tx.data()[ci * n..(ci + 1) * n];
                for j in 0..k {
                    let wv = tw.data()[(co * c_in + ci) * k + j];
                    let shift = center as isize - j as isize;
                    let (t0, t1) = conv_span(1, shift, n, n);
                    for t in t0..t1 {
                        row[t] += wv * xrow[(t as isize + shift) as usize];
                    }
                }
            }
        }
        let value = Tensor::new(vec![c_out, n], out)?;
        self.push(
            value,
            &[x.0, w.0, b.0],
            Op::Conv1d {
                x: x.0,
                w: w.0,
                b: b.0,
            },
        )
    }

    /// 2D convolution: input `[c_in, h, w]`, kernel `[c_out, c_in, kh, kw]`
    /// with odd sizes, bias `[c_out]`; zero same-padding and the given
    /// stride, so the output is `[c_out, ceil(h/s), ceil(w/s)]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (tx, tw, tb) = (
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
        );
        if tx.rank() != 3 || tw.rank() != 4 || tb.rank() != 1 {
            return Err(Error::Shape(format!(
                "conv2d: x {:?}, w {:?}, b {:?}",
                tx.shape(),
                tw.shape(),
                tb.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Shape("conv2d: stride must be at least 1".into()));
        }
        let (c_in, h, wd) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (c_out, wc_in, kh, kw) = (
            tw.shape()[0],
            tw.shape()[1],
            tw.shape()[2],
            tw.shape()[3],
        );
        if wc_in != c_in || tb.shape()[0] != c_out {
            return Err(Error::Shape(format!(
                "conv2d: kernel {:?} does not fit input {:?}",
                tw.shape(),
                tx.shape()
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape(format!(
                "conv2d: kernel {kh}x{kw} must have odd sizes"
            )));
        }
        let oh = h.div_ceil(stride);
        let ow = wd.div_ceil(stride);
        let pad_h = ((oh - 1) * stride + kh).saturating_sub(h) / 2;
        let pad_w = ((ow - 1) * stride + kw).saturating_sub(wd) / 2;
        let mut out = vec![S::zero(); c_out * oh * ow];
        for co in 0..c_out {
            let plane = &mut out[co * oh * ow..(co + 1) * oh * ow];
            plane.fill(tb.data()[co]);
            for ci in 0..c_in {
                let xplane = &tx.data()[ci * h * wd..(ci + 1) * h * wd];
                for u in 0..kh {
                    let dy = (kh - 1 - u) as isize - pad_h as isize;
                    let (oy0, oy1) = conv_span(stride, dy, h, oh);
                    for v in 0..kw {
                        let wv = tw.data()[((co * c_in + ci) * kh + u) * kw + v];
                        let dx = (kw - 1 - v) as isize - pad_w as isize;
                        let (ox0, ox1) = conv_span(stride, dx, wd, ow);
                        for oy in oy0..oy1 {
                            let iy = (oy * stride) as isize + dy;
                            let xrow = &xplane[iy as usize * wd..(iy as usize + 1) * wd];
                            let orow = &mut plane[oy * ow..(oy + 1) * ow];
                            for ox in ox0..ox1 {
                                let ix = ((ox * stride) as isize + dx) as usize;
                                orow[ox] += wv * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![c_out, oh, ow], out)?;
        self.push(
            value,
            &[x.0, w.0, b.0],
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.0,
                stride,
            },
        )
    }

    /// Non-overlapping 1D max pooling over `[c, n]`; trailing remainder
    /// samples are dropped. Ties resolve to the earliest position.
    pub fn max_pool1d(&mut self, x: Var, window: usize) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        if tx.rank() != 2 {
            return Err(Error::Shape(format!("max_pool1d: {:?}", tx.shape())));
        }
        let (c, n) = (tx.shape()[0], tx.shape()[1]);
        if window == 0 || window > n {
            return Err(Error::Shape(format!(
                "max_pool1d: window {window} does not fit length {n}"
            )));
        }
        let on = n / window;
        let mut out = vec![S::zero(); c * on];
        let mut argmax = vec![0usize; c * on];
        for ci in 0..c {
            let row = &tx.data()[ci * n..(ci + 1) * n];
            for o in 0..on {
                let base = o * window;
                let mut best = row[base];
                let mut best_at = base;
                for t in base + 1..base + window {
                    if row[t] > best {
                        best = row[t];
                        best_at = t;
                    }
                }
                out[ci * on + o] = best;
                argmax[ci * on + o] = ci * n + best_at;
            }
        }
        let value = Tensor::new(vec![c, on], out)?;
        self.push(value, &[x.0], Op::MaxPool1d { x: x.0, argmax })
    }

    /// Per-channel spatial mean of `[c, h, w]`, producing `[c]`.
    pub fn global_avg_pool2d(&mut self, x: Var) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        if tx.rank() != 3 {
            return Err(Error::Shape(format!("global_avg_pool2d: {:?}", tx.shape())));
        }
        let (c, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let plane = h * w;
        if plane == 0 {
            return Err(Error::Shape("global_avg_pool2d: empty plane".into()));
        }
        let inv = S::one() / real::<S>(plane as f64);
        let out = (0..c)
            .map(|ci| {
                tx.data()[ci * plane..(ci + 1) * plane]
                    .iter()
                    .copied()
                    .sum::<S>()
                    * inv
            })
            .collect();
        let value = Tensor::new(vec![c], out)?;
        self.push(value, &[x.0], Op::GlobalAvgPool2d(x.0))
    }

    // ---- nonlinearities ----

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.nodes[x.0].value.map(|v| v.max(S::zero()));
        self.push(value, &[x.0], Op::Relu(x.0))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.nodes[x.0].value.map(|v| v.tanh());
        self.push(value, &[x.0], Op::Tanh(x.0))
    }

    /// Numerically stable softmax along `axis` (lane maximum subtracted).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        let (outer, l, inner) = lane_dims(tx.shape(), axis)?;
        let mut data = tx.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * l * inner + i;
                let mut hi = S::neg_infinity();
                for t in 0..l {
                    hi = hi.max(data[base + t * inner]);
                }
                let mut total = S::zero();
                for t in 0..l {
                    let e = (data[base + t * inner] - hi).exp();
                    data[base + t * inner] = e;
                    total += e;
                }
                for t in 0..l {
                    data[base + t * inner] /= total;
                }
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        self.push(value, &[x.0], Op::Softmax { x: x.0, axis })
    }

    /// Batch normalization over all non-channel dims of a channel-major
    /// tensor (`[c, ...]`). In training mode the batch statistics normalize
    /// the input and update `stats` in place with the given momentum; in
    /// eval mode the running statistics are used unchanged.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BnStats<S>,
        training: bool,
        momentum: S,
        eps: S,
    ) -> Result<Var> {
        let (tx, tg, tb) = (
            &self.nodes[x.0].value,
            &self.nodes[gamma.0].value,
            &self.nodes[beta.0].value,
        );
        if tx.rank() < 2 {
            return Err(Error::Shape(format!("batch_norm: {:?}", tx.shape())));
        }
        let c = tx.shape()[0];
        let m = tx.len() / c;
        if tg.shape() != [c] || tb.shape() != [c] || stats.mean.len() != c {
            return Err(Error::Shape(format!(
                "batch_norm: {c} channels, gamma {:?}, beta {:?}, stats {}",
                tg.shape(),
                tb.shape(),
                stats.mean.len()
            )));
        }
        let inv_m = S::one() / real::<S>(m as f64);
        let mut xhat = vec![S::zero(); tx.len()];
        let mut inv_std = vec![S::zero(); c];
        let mut out = vec![S::zero(); tx.len()];
        for ci in 0..c {
            let block = &tx.data()[ci * m..(ci + 1) * m];
            let (mu, var) = if training {
                let mu = block.iter().copied().sum::<S>() * inv_m;
                let var = block
                    .iter()
                    .map(|&v| (v - mu) * (v - mu))
                    .sum::<S>()
                    * inv_m;
                stats.mean[ci] = momentum * stats.mean[ci] + (S::one() - momentum) * mu;
                stats.var[ci] = momentum * stats.var[ci] + (S::one() - momentum) * var;
                (mu, var)
            } else {
                (stats.mean[ci], stats.var[ci])
            };
            let iv = S::one() / (var + eps).sqrt();
            inv_std[ci] = iv;
            let (g, b) = (tg.data()[ci], tb.data()[ci]);
            for (t, &v) in block.iter().enumerate() {
                let xh = (v - mu) * iv;
                xhat[ci * m + t] = xh;
                out[ci * m + t] = g * xh + b;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        let saved = BnSaved {
            xhat: Tensor::new(tx.shape().to_vec(), xhat)?,
            inv_std,
        };
        // Training mode differentiates through the batch statistics; eval
        // mode is affine in x, so backward gets its own op variant.
        let op = if training {
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                saved,
            }
        } else {
            Op::BatchNormEval {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                saved,
            }
        };
        self.push(value, &[x.0, gamma.0, beta.0], op)
    }

    // ---- reshaping ----

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Shape("concat: no inputs".into()));
        }
        let first = self.nodes[xs[0].0].value.shape().to_vec();
        if axis >= first.len() {
            return Err(Error::Shape(format!(
                "concat: axis {axis} out of range for {first:?}"
            )));
        }
        let mut axis_total = 0;
        for v in xs {
            let sh = self.nodes[v.0].value.shape();
            if sh.len() != first.len()
                || sh
                    .iter()
                    .enumerate()
                    .any(|(d, &s)| d != axis && s != first[d])
            {
                return Err(Error::Shape(format!(
                    "concat: {sh:?} incompatible with {first:?} along axis {axis}"
                )));
            }
            axis_total += sh[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let (outer, _, inner) = lane_dims(&shape, axis)?;
        let mut data = vec![S::zero(); shape.iter().product()];
        let out_stride = axis_total * inner;
        let mut axis_off = 0;
        for v in xs {
            let t = &self.nodes[v.0].value;
            let l = t.shape()[axis];
            let in_stride = l * inner;
            for o in 0..outer {
                let src = &t.data()[o * in_stride..(o + 1) * in_stride];
                let dst = &mut data
                    [o * out_stride + axis_off * inner..o * out_stride + (axis_off + l) * inner];
                dst.copy_from_slice(src);
            }
            axis_off += l;
        }
        let parents: Vec<usize> = xs.iter().map(|v| v.0).collect();
        let value = Tensor::new(shape, data)?;
        self.push(value, &parents, Op::Concat { xs: parents.clone(), axis })
    }

    /// Contiguous block selection: `start[d] .. end[d]` in every dimension.
    pub fn slice(&mut self, x: Var, start: &[usize], end: &[usize]) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        let shape = tx.shape();
        if start.len() != shape.len() || end.len() != shape.len() {
            return Err(Error::Shape(format!(
                "slice: bounds rank {} vs tensor rank {}",
                start.len(),
                shape.len()
            )));
        }
        for d in 0..shape.len() {
            if start[d] >= end[d] || end[d] > shape[d] {
                return Err(Error::Shape(format!(
                    "slice: [{}, {}) out of range for dim {d} of size {}",
                    start[d], end[d], shape[d]
                )));
            }
        }
        let out_shape: Vec<usize> = (0..shape.len()).map(|d| end[d] - start[d]).collect();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        copy_block(tx.data(), shape, start, &out_shape, &mut data);
        let value = Tensor::new(out_shape, data)?;
        self.push(
            value,
            &[x.0],
            Op::Slice {
                x: x.0,
                start: start.to_vec(),
            },
        )
    }

    /// Same data, new shape of equal volume.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[x.0].value.reshaped(shape)?;
        self.push(value, &[x.0], Op::Reshape(x.0))
    }

    // ---- reductions ----

    /// Sum of all entries (scalar output).
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.nodes[x.0].value.data().iter().copied().sum();
        self.push(Tensor::from_scalar(total), &[x.0], Op::Sum(x.0))
    }

    /// Mean of all entries (scalar output).
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if t.is_empty() {
            return Err(Error::Shape("mean: empty tensor".into()));
        }
        let total: S = t.data().iter().copied().sum();
        let value = Tensor::from_scalar(total / real::<S>(t.len() as f64));
        self.push(value, &[x.0], Op::Mean(x.0))
    }

    /// Mean along one axis; the axis is squeezed out of the result.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        let (outer, l, inner) = lane_dims(tx.shape(), axis)?;
        if l == 0 {
            return Err(Error::Shape("mean_axis: empty axis".into()));
        }
        let inv = S::one() / real::<S>(l as f64);
        let mut out = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for t in 0..l {
                let src = &tx.data()[(o * l + t) * inner..(o * l + t + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        for v in &mut out {
            *v *= inv;
        }
        let mut shape: Vec<usize> = tx.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let value = Tensor::new(shape, out)?;
        self.push(value, &[x.0], Op::MeanAxis { x: x.0, axis })
    }

    /// Scales block `c` of a channel-major tensor `[c0, ...]` by `a[c]`.
    pub fn scale_channels(&mut self, x: Var, a: Var) -> Result<Var> {
        let (tx, ta) = (&self.nodes[x.0].value, &self.nodes[a.0].value);
        if tx.rank() < 1 || ta.rank() != 1 || ta.shape()[0] != tx.shape()[0] {
            return Err(Error::Shape(format!(
                "scale_channels: x {:?}, a {:?}",
                tx.shape(),
                ta.shape()
            )));
        }
        let c = tx.shape()[0];
        let m = tx.len() / c;
        let mut data = tx.data().to_vec();
        for ci in 0..c {
            let k = ta.data()[ci];
            for v in &mut data[ci * m..(ci + 1) * m] {
                *v *= k;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        self.push(value, &[x.0, a.0], Op::ScaleChannels { x: x.0, a: a.0 })
    }

    /// Cross-entropy of rank-1 logits against an integer label, computed via
    /// log-sum-exp: `lse(z) - z[label]`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let tl = &self.nodes[logits.0].value;
        if tl.rank() != 1 {
            return Err(Error::Shape(format!("cross_entropy: {:?}", tl.shape())));
        }
        if label >= tl.shape()[0] {
            return Err(Error::Label(format!(
                "cross_entropy: label {label} out of range for {} classes",
                tl.shape()[0]
            )));
        }
        let hi = tl
            .data()
            .iter()
            .fold(S::neg_infinity(), |acc, &v| acc.max(v));
        let total: S = tl.data().iter().map(|&v| (v - hi).exp()).sum();
        let lse = hi + total.ln();
        let value = Tensor::from_scalar(lse - tl.data()[label]);
        self.push(
            value,
            &[logits.0],
            Op::CrossEntropy {
                logits: logits.0,
                label,
            },
        )
    }

    // ---- backward ----

    /// Reverse sweep from a scalar root. Each node is visited once, in
    /// reverse topological (= tape) order; fan-out gradients accumulate.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        let root = &self.nodes[out.0];
        if root.value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward root must be scalar, found {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Err(Error::Config(
                "backward root does not depend on any differentiable leaf".into(),
            ));
        }
        self.nodes[out.0].grad = Some(Tensor::full(root.value.shape(), S::one()));
        for i in (0..=out.0).rev() {
            if self.nodes[i].grad.is_none() || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let g = self.nodes[i].grad.take().expect("checked above");
            let contributions = self.backward_op(i, &g)?;
            self.nodes[i].grad = Some(g);
            for (p, c) in contributions {
                match &mut self.nodes[p].grad {
                    Some(acc) => acc.add_assign(&c)?,
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Ok(())
    }

    fn wants(&self, p: usize) -> bool {
        self.nodes[p].requires_grad
    }

    #[allow(clippy::too_many_lines)]
    fn backward_op(&self, i: usize, g: &Tensor<S>) -> Result<Vec<(usize, Tensor<S>)>> {
        let mut out: Vec<(usize, Tensor<S>)> = Vec::new();
        let val = |p: usize| &self.nodes[p].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.wants(*a) {
                    out.push((*a, g.clone()));
                }
                if self.wants(*b) {
                    out.push((*b, g.clone()));
                }
            }
            Op::AddColBias(m, bias) => {
                if self.wants(*m) {
                    out.push((*m, g.clone()));
                }
                if self.wants(*bias) {
                    let (r, c) = (g.shape()[0], g.shape()[1]);
                    let mut gb = vec![S::zero(); r];
                    for (idx, row) in gb.iter_mut().enumerate() {
                        *row = g.data()[idx * c..(idx + 1) * c].iter().copied().sum();
                    }
                    out.push((*bias, Tensor::new(vec![r], gb)?));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let mut t = g.clone();
                    for (x, y) in t.data_mut().iter_mut().zip(val(*b).data()) {
                        *x *= *y;
                    }
                    out.push((*a, t));
                }
                if self.wants(*b) {
                    let mut t = g.clone();
                    for (x, y) in t.data_mut().iter_mut().zip(val(*a).data()) {
                        *x *= *y;
                    }
                    out.push((*b, t));
                }
            }
            Op::Scale(a, k) => {
                if self.wants(*a) {
                    out.push((*a, g.map(|v| v * *k)));
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.wants(*a) {
                    let data = mm_nt(g.data(), tb.data(), m, n, k);
                    out.push((*a, Tensor::new(vec![m, k], data)?));
                }
                if self.wants(*b) {
                    let data = mm_tn(ta.data(), g.data(), m, k, n);
                    out.push((*b, Tensor::new(vec![k, n], data)?));
                }
            }
            Op::Transpose(a) => {
                if self.wants(*a) {
                    let (r, c) = (g.shape()[0], g.shape()[1]);
                    let mut data = vec![S::zero(); r * c];
                    for x in 0..r {
                        for y in 0..c {
                            data[y * r + x] = g.data()[x * c + y];
                        }
                    }
                    out.push((*a, Tensor::new(vec![c, r], data)?));
                }
            }
            Op::Conv1d { x, w, b } => {
                let (tx, tw) = (val(*x), val(*w));
                let (c_in, n) = (tx.shape()[0], tx.shape()[1]);
                let (c_out, _, k) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
                let center = (k - 1) / 2;
                let want_x = self.wants(*x);
                let want_w = self.wants(*w);
                let mut gx = vec![S::zero(); tx.len()];
                let mut gw = vec![S::zero(); tw.len()];
                if want_x || want_w {
                    for co in 0..c_out {
                        let grow = &g.data()[co * n..(co + 1) * n];
                        for ci in 0..c_in {
                            let xrow = &tx.data()[ci * n..(ci + 1) * n];
                            for j in 0..k {
                                let widx = (co * c_in + ci) * k + j;
                                let wv = tw.data()[widx];
                                let shift = center as isize - j as isize;
                                let (t0, t1) = conv_span(1, shift, n, n);
                                let mut acc = S::zero();
                                for t in t0..t1 {
                                    let xi = (t as isize + shift) as usize;
                                    if want_x {
                                        gx[ci * n + xi] += wv * grow[t];
                                    }
                                    acc += grow[t] * xrow[xi];
                                }
                                if want_w {
                                    gw[widx] += acc;
                                }
                            }
                        }
                    }
                }
                if want_x {
                    out.push((*x, Tensor::new(tx.shape().to_vec(), gx)?));
                }
                if want_w {
                    out.push((*w, Tensor::new(tw.shape().to_vec(), gw)?));
                }
                if self.wants(*b) {
                    let gb = (0..c_out)
                        .map(|co| g.data()[co * n..(co + 1) * n].iter().copied().sum())
                        .collect();
                    out.push((*b, Tensor::new(vec![c_out], gb)?));
                }
            }
            Op::Conv2d { x, w, b, stride } => {
                let (tx, tw) = (val(*x), val(*w));
                let (c_in, h, wd) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                let (c_out, _, kh, kw) = (
                    tw.shape()[0],
                    tw.shape()[1],
                    tw.shape()[2],
                    tw.shape()[3],
                );
                let (oh, ow) = (g.shape()[1], g.shape()[2]);
                let pad_h = ((oh - 1) * stride + kh).saturating_sub(h) / 2;
                let pad_w = ((ow - 1) * stride + kw).saturating_sub(wd) / 2;
                let want_x = self.wants(*x);
                let want_w = self.wants(*w);
                let mut gx = vec![S::zero(); tx.len()];
                let mut gw = vec![S::zero(); tw.len()];
                if want_x || want_w {
                    for co in 0..c_out {
                        let gplane = &g.data()[co * oh * ow..(co + 1) * oh * ow];
                        for ci in 0..c_in {
                            let xplane = &tx.data()[ci * h * wd..(ci + 1) * h * wd];
                            let gxplane_base = ci * h * wd;
                            for u in 0..kh {
                                let dy = (kh - 1 - u) as isize - pad_h as isize;
                                let (oy0, oy1) = conv_span(*stride, dy, h, oh);
                                for v in 0..kw {
                                    let widx = ((co * c_in + ci) * kh + u) * kw + v;
                                    let wv = tw.data()[widx];
                                    let dx = (kw - 1 - v) as isize - pad_w as isize;
                                    let (ox0, ox1) = conv_span(*stride, dx, wd, ow);
                                    let mut acc = S::zero();
                                    for oy in oy0..oy1 {
                                        let iy = ((oy * stride) as isize + dy) as usize;
                                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                                        for ox in ox0..ox1 {
                                            let ix = ((ox * stride) as isize + dx) as usize;
                                            if want_x {
                                                gx[gxplane_base + iy * wd + ix] +=
                                                    wv * grow[ox];
                                            }
                                            acc += grow[ox] * xplane[iy * wd + ix];
                                        }
                                    }
                                    if want_w {
                                        gw[widx] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
                if want_x {
                    out.push((*x, Tensor::new(tx.shape().to_vec(), gx)?));
                }
                if want_w {
                    out.push((*w, Tensor::new(tw.shape().to_vec(), gw)?));
                }
                if self.wants(*b) {
                    let gb = (0..c_out)
                        .map(|co| {
                            g.data()[co * oh * ow..(co + 1) * oh * ow]
                                .iter()
                                .copied()
                                .sum()
                        })
                        .collect();
                    out.push((*b, Tensor::new(vec![c_out], gb)?));
                }
            }
            Op::MaxPool1d { x, argmax } => {
                if self.wants(*x) {
                    let mut gx = Tensor::zeros(val(*x).shape());
                    for (o, &src) in argmax.iter().enumerate() {
                        gx.data_mut()[src] += g.data()[o];
                    }
                    out.push((*x, gx));
                }
            }
            Op::GlobalAvgPool2d(x) => {
                if self.wants(*x) {
                    let tx = val(*x);
                    let (c, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                    let inv = S::one() / real::<S>((h * w) as f64);
                    let mut gx = Tensor::zeros(tx.shape());
                    for ci in 0..c {
                        let gv = g.data()[ci] * inv;
                        for v in &mut gx.data_mut()[ci * h * w..(ci + 1) * h * w] {
                            *v = gv;
                        }
                    }
                    out.push((*x, gx));
                }
            }
            Op::Relu(x) => {
                if self.wants(*x) {
                    let y = &self.nodes[i].value;
                    let mut t = g.clone();
                    for (gv, &yv) in t.data_mut().iter_mut().zip(y.data()) {
                        if yv <= S::zero() {
                            *gv = S::zero();
                        }
                    }
                    out.push((*x, t));
                }
            }
            Op::Tanh(x) => {
                if self.wants(*x) {
                    let y = &self.nodes[i].value;
                    let mut t = g.clone();
                    for (gv, &yv) in t.data_mut().iter_mut().zip(y.data()) {
                        *gv *= S::one() - yv * yv;
                    }
                    out.push((*x, t));
                }
            }
            Op::Softmax { x, axis } => {
                if self.wants(*x) {
                    let y = &self.nodes[i].value;
                    let (outer, l, inner) = lane_dims(y.shape(), *axis)?;
                    let mut t = g.clone();
                    for o in 0..outer {
                        for ii in 0..inner {
                            let base = o * l * inner + ii;
                            let mut dot = S::zero();
                            for k in 0..l {
                                dot += t.data()[base + k * inner] * y.data()[base + k * inner];
                            }
                            for k in 0..l {
                                let idx = base + k * inner;
                                let gv = t.data()[idx];
                                t.data_mut()[idx] = y.data()[idx] * (gv - dot);
                            }
                        }
                    }
                    out.push((*x, t));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            } => {
                let tg = val(*gamma);
                let c = tg.shape()[0];
                let m = saved.xhat.len() / c;
                let inv_m = S::one() / real::<S>(m as f64);
                if self.wants(*x) {
                    let mut gx = Tensor::zeros(saved.xhat.shape());
                    for ci in 0..c {
                        let gamma_iv = tg.data()[ci] * saved.inv_std[ci];
                        let gs = &g.data()[ci * m..(ci + 1) * m];
                        let xs = &saved.xhat.data()[ci * m..(ci + 1) * m];
                        let mean_g = gs.iter().copied().sum::<S>() * inv_m;
                        let mean_gx = gs
                            .iter()
                            .zip(xs)
                            .map(|(&a, &b)| a * b)
                            .sum::<S>()
                            * inv_m;
                        let dst = &mut gx.data_mut()[ci * m..(ci + 1) * m];
                        for t in 0..m {
                            dst[t] = gamma_iv * (gs[t] - mean_g - xs[t] * mean_gx);
                        }
                    }
                    out.push((*x, gx));
                }
                self.bn_param_grads(&mut out, g, saved, *gamma, *beta, c, m)?;
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                saved,
            } => {
                let tg = val(*gamma);
                let c = tg.shape()[0];
                let m = saved.xhat.len() / c;
                if self.wants(*x) {
                    let mut gx = g.clone();
                    for ci in 0..c {
                        let k = tg.data()[ci] * saved.inv_std[ci];
                        for v in &mut gx.data_mut()[ci * m..(ci + 1) * m] {
                            *v *= k;
                        }
                    }
                    out.push((*x, gx));
                }
                self.bn_param_grads(&mut out, g, saved, *gamma, *beta, c, m)?;
            }
            Op::Concat { xs, axis } => {
                let shape = self.nodes[i].value.shape();
                let (outer, total, inner) = lane_dims(shape, *axis)?;
                let out_stride = total * inner;
                let mut axis_off = 0;
                for &p in xs {
                    let t = val(p);
                    let l = t.shape()[*axis];
                    if self.wants(p) {
                        let in_stride = l * inner;
                        let mut gp = Tensor::zeros(t.shape());
                        for o in 0..outer {
                            let src = &g.data()[o * out_stride + axis_off * inner
                                ..o * out_stride + (axis_off + l) * inner];
                            gp.data_mut()[o * in_stride..(o + 1) * in_stride]
                                .copy_from_slice(src);
                        }
                        out.push((p, gp));
                    }
                    axis_off += l;
                }
            }
            Op::Slice { x, start } => {
                if self.wants(*x) {
                    let tx = val(*x);
                    let mut gx = Tensor::zeros(tx.shape());
                    scatter_block(
                        gx.data_mut(),
                        tx.shape(),
                        start,
                        self.nodes[i].value.shape(),
                        g.data(),
                    );
                    out.push((*x, gx));
                }
            }
            Op::Reshape(x) => {
                if self.wants(*x) {
                    out.push((*x, g.reshaped(val(*x).shape())?));
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    out.push((*x, Tensor::full(val(*x).shape(), g.data()[0])));
                }
            }
            Op::Mean(x) => {
                if self.wants(*x) {
                    let tx = val(*x);
                    let gv = g.data()[0] / real::<S>(tx.len() as f64);
                    out.push((*x, Tensor::full(tx.shape(), gv)));
                }
            }
            Op::MeanAxis { x, axis } => {
                if self.wants(*x) {
                    let tx = val(*x);
                    let (outer, l, inner) = lane_dims(tx.shape(), *axis)?;
                    let inv = S::one() / real::<S>(l as f64);
                    let mut gx = Tensor::zeros(tx.shape());
                    for o in 0..outer {
                        let src = &g.data()[o * inner..(o + 1) * inner];
                        for t in 0..l {
                            let dst =
                                &mut gx.data_mut()[(o * l + t) * inner..(o * l + t + 1) * inner];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d = s * inv;
                            }
                        }
                    }
                    out.push((*x, gx));
                }
            }
            Op::ScaleChannels { x, a } => {
                let (tx, ta) = (val(*x), val(*a));
                let c = tx.shape()[0];
                let m = tx.len() / c;
                if self.wants(*x) {
                    let mut gx = g.clone();
                    for ci in 0..c {
                        let k = ta.data()[ci];
                        for v in &mut gx.data_mut()[ci * m..(ci + 1) * m] {
                            *v *= k;
                        }
                    }
                    out.push((*x, gx));
                }
                if self.wants(*a) {
                    let ga = (0..c)
                        .map(|ci| {
                            g.data()[ci * m..(ci + 1) * m]
                                .iter()
                                .zip(&tx.data()[ci * m..(ci + 1) * m])
                                .map(|(&gv, &xv)| gv * xv)
                                .sum()
                        })
                        .collect();
                    out.push((*a, Tensor::new(vec![c], ga)?));
                }
            }
            Op::CrossEntropy { logits, label } => {
                if self.wants(*logits) {
                    let tl = val(*logits);
                    let hi = tl
                        .data()
                        .iter()
                        .fold(S::neg_infinity(), |acc, &v| acc.max(v));
                    let total: S = tl.data().iter().map(|&v| (v - hi).exp()).sum();
                    let gs = g.data()[0];
                    let mut gl: Vec<S> = tl
                        .data()
                        .iter()
                        .map(|&v| gs * (v - hi).exp() / total)
                        .collect();
                    gl[*label] -= gs;
                    out.push((*logits, Tensor::new(tl.shape().to_vec(), gl)?));
                }
            }
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_param_grads(
        &self,
        out: &mut Vec<(usize, Tensor<S>)>,
        g: &Tensor<S>,
        saved: &BnSaved<S>,
        gamma: usize,
        beta: usize,
        c: usize,
        m: usize,
    ) -> Result<()> {
        if self.wants(gamma) {
            let gg = (0..c)
                .map(|ci| {
                    g.data()[ci * m..(ci + 1) * m]
                        .iter()
                        .zip(&saved.xhat.data()[ci * m..(ci + 1) * m])
                        .map(|(&a, &b)| a * b)
                        .sum()
                })
                .collect();
            out.push((gamma, Tensor::new(vec![c], gg)?));
        }
        if self.wants(beta) {
            let gb = (0..c)
                .map(|ci| g.data()[ci * m..(ci + 1) * m].iter().copied().sum())
                .collect();
            out.push((beta, Tensor::new(vec![c], gb)?));
        }
        Ok(())
    }
}

/// `c = a(m,k) * b(k,n)`.
fn mm_nn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    for i in 0..m {
        for t in 0..k {
            let av = a[i * k + t];
            if av == S::zero() {
                continue;
            }
            let brow = &b[t * n..(t + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// `c(m,k) = a(m,n) * b(k,n)^T` where `b` is stored row-major `(k,n)`:
/// computes `g * b^T` for the matmul backward pass.
fn mm_nt<S: Scalar>(a: &[S], b: &[S], m: usize, n: usize, k: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let crow = &mut c[i * k..(i + 1) * k];
        for (t, cv) in crow.iter_mut().enumerate() {
            let brow = &b[t * n..(t + 1) * n];
            let mut acc = S::zero();
            for j in 0..n {
                acc += arow[j] * brow[j];
            }
            *cv = acc;
        }
    }
    c
}

/// `c = a(k,m)^T * b(k,n)` where `a` is stored `(m,k)` and `b` is `(m,n)`:
/// computes `a^T * g` for the matmul backward pass.
fn mm_tn<S: Scalar>(a: &[S], g: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for t in 0..k {
            let av = arow[t];
            if av == S::zero() {
                continue;
            }
            let crow = &mut c[t * n..(t + 1) * n];
            for j in 0..n {
                crow[j] += av * grow[j];
            }
        }
    }
    c
}

/// Copies the block `start[d] .. start[d]+out_shape[d]` out of `src`.
fn copy_block<S: Scalar>(
    src: &[S],
    shape: &[usize],
    start: &[usize],
    out_shape: &[usize],
    dst: &mut Vec<S>,
) {
    let rank = shape.len();
    let inner = out_shape[rank - 1];
    let mut idx = vec![0usize; rank];
    loop {
        let mut off = 0;
        for d in 0..rank - 1 {
            off = (off + start[d] + idx[d]) * shape[d + 1];
        }
        off += start[rank - 1];
        dst.extend_from_slice(&src[off..off + inner]);
        // odometer over all dims except the innermost
        let mut d = rank.wrapping_sub(2);
        loop {
            if d == usize::MAX {
                return;
            }
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            d = d.wrapping_sub(1);
        }
    }
}

/// Adds the gradient `g` of a slice back into the right block of `dst`.
fn scatter_block<S: Scalar>(
    dst: &mut [S],
    shape: &[usize],
    start: &[usize],
    out_shape: &[usize],
    g: &[S],
) {
    let rank = shape.len();
    let inner = out_shape[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut src_off = 0;
    loop {
        let mut off = 0;
        for d in 0..rank - 1 {
            off = (off + start[d] + idx[d]) * shape[d + 1];
        }
        off += start[rank - 1];
        for t in 0..inner {
            dst[off + t] += g[src_off + t];
        }
        src_off += inner;
        let mut d = rank.wrapping_sub(2);
        loop {
            if d == usize::MAX {
                return;
            }
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            d = d.wrapping_sub(1);
        }
    }
}

fn op_name<S>(op: &Op<S>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::AddColBias(..) => "add_col_bias",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::MatMul(..) => "matmul",
        Op::Transpose(..) => "transpose",
        Op::Conv1d { .. } => "conv1d",
        Op::Conv2d { .. } => "conv2d",
        Op::MaxPool1d { .. } => "max_pool1d",
        Op::GlobalAvgPool2d(..) => "global_avg_pool2d",
        Op::Relu(..) => "relu",
        Op::Tanh(..) => "tanh",
        Op::Softmax { .. } => "softmax",
        Op::BatchNorm { .. } => "batch_norm",
        Op::BatchNormEval { .. } => "batch_norm",
        Op::Concat { .. } => "concat",
        Op::Slice { .. } => "slice",
        Op::Reshape(..) => "reshape",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::MeanAxis { .. } => "mean_axis",
        Op::ScaleChannels { .. } => "scale_channels",
        Op::CrossEntropy { .. } => "cross_entropy",
    }
}
