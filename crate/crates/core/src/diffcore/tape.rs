use super::tensor::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRowBroadcast { x: usize, bias: usize },
    Scale(usize, f64),
    Matmul(usize, usize),
    Transpose(usize),
    SumAll(usize),
    MeanAll(usize),
    SumAxis { x: usize, axis: usize },
    MeanAxis { x: usize, axis: usize },
    Concat { parts: Vec<usize>, axis: usize },
    RowGather { x: usize, rows: Vec<usize> },
    Reshape(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize, eps: f64 },
    Gelu(usize),
    Sigmoid(usize),
    SoftmaxT { x: usize, temp: f64 },
    Conv1d { x: usize, w: usize, b: usize },
    ConvT1d { x: usize, w: usize, b: usize },
    SmoothL1(usize, usize),
    Log(usize),
    Square(usize),
    Sqrt(usize),
    MaxConst(usize, f64),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

fn op_parents(op: &Op) -> impl Iterator<Item = usize> + '_ {
    let slice: Vec<usize> = match op {
        Op::Leaf => vec![],
        Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Matmul(a, b)
        | Op::SmoothL1(a, b) => vec![*a, *b],
        Op::AddRowBroadcast { x, bias } => vec![*x, *bias],
        Op::Scale(a, _)
        | Op::Transpose(a)
        | Op::SumAll(a)
        | Op::MeanAll(a)
        | Op::Reshape(a)
        | Op::Gelu(a)
        | Op::Sigmoid(a)
        | Op::Log(a)
        | Op::Square(a)
        | Op::Sqrt(a)
        | Op::MaxConst(a, _) => vec![*a],
        Op::SumAxis { x, .. } | Op::MeanAxis { x, .. } | Op::SoftmaxT { x, .. } => vec![*x],
        Op::RowGather { x, .. } => vec![*x],
        Op::Concat { parts, .. } => parts.clone(),
        Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        Op::Conv1d { x, w, b } | Op::ConvT1d { x, w, b } => vec![*x, *w, *b],
    };
    slice.into_iter()
}

/// Computation graph recorded in forward order. Node indices are already a
/// topological order, so the backward pass is a single reverse sweep that
/// visits each node exactly once.
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient buffers produced by a backward pass, indexed by [`Var`].
pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient of the root(s) with respect to `v`; `None` when the root
    /// does not depend on `v`.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.slots[v.0].as_ref()
    }

    /// Like [`Grads::get`] but materializes zeros for untouched nodes.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        match &self.slots[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape),
        }
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.slots[v.0].take()
    }
}

const GELU_COEF: f64 = 0.044715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

// tanh via exp is measurably faster than libm tanh and bit-reproducible
fn fast_tanh(u: f64) -> f64 {
    if u > 20.0 {
        1.0
    } else if u < -20.0 {
        -1.0
    } else {
        1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
    }
}

fn gelu_scalar(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x);
    0.5 * x * (1.0 + fast_tanh(u))
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x);
    let t = fast_tanh(u);
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * x * x)
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// The matmul kernels accumulate along fixed index orders (bit-reproducible)
// and keep the inner loop in axpy form over contiguous slices, which the
// compiler can vectorize; dot-product reductions would not.

/// out[m,n] = a[m,k] * b[k,n]
pub(crate) fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[m,n] = a[m,k] * b[n,k]^T, via a materialized transpose of b
pub(crate) fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), m * n);
    let mut bt = vec![0.0; k * n];
    for j in 0..n {
        for p in 0..k {
            bt[p * n + j] = b[j * k + p];
        }
    }
    mm_nn(a, &bt, m, k, n, out);
}

/// out[m,n] = a[k,m]^T * b[k,n]
pub(crate) fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = op_parents(&op).any(|p| self.nodes[p].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Record an input node. Leaves are where gradients are read back.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record an input that never receives gradients; the backward pass
    /// skips every edge into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    fn binary_same_shape(&self, a: Var, b: Var, what: &str) {
        let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        assert_eq!(sa, sb, "{what}: shape mismatch {sa:?} vs {sb:?}");
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "add");
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].value.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "sub");
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a.0].value.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "mul");
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].value.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Mul(a.0, b.0))
    }

    /// x[r,c] + bias[c] broadcast over rows.
    pub fn add_row_broadcast(&mut self, x: Var, bias: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let bv = &self.nodes[bias.0].value;
        assert_eq!(xv.shape().len(), 2, "add_row_broadcast: x must be rank 2");
        assert_eq!(
            &[xv.cols()],
            bv.shape(),
            "add_row_broadcast: bias shape {:?} vs {} columns",
            bv.shape(),
            xv.cols()
        );
        let (r, c) = (xv.rows(), xv.cols());
        let mut data = xv.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += bv.data()[j];
            }
        }
        self.push(
            Tensor::new(vec![r, c], data).unwrap(),
            Op::AddRowBroadcast { x: x.0, bias: bias.0 },
        )
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|v| v * factor).collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Scale(a.0, factor))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(av.shape().len(), 2, "matmul: lhs rank");
        assert_eq!(bv.shape().len(), 2, "matmul: rhs rank");
        let (m, k) = (av.rows(), av.cols());
        let (k2, n) = (bv.rows(), bv.cols());
        assert_eq!(k, k2, "matmul: inner extents {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        mm_nn(av.data(), bv.data(), m, k, n, &mut out);
        self.push(Tensor::new(vec![m, n], out).unwrap(), Op::Matmul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        assert_eq!(av.shape().len(), 2, "transpose: rank");
        let (r, c) = (av.rows(), av.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av.data()[i * c + j];
            }
        }
        self.push(Tensor::new(vec![c, r], out).unwrap(), Op::Transpose(a.0))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a.0))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.numel();
        assert!(n > 0, "mean_all: empty tensor");
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(Tensor::scalar(s / n as f64), Op::MeanAll(a.0))
    }

    fn axis_reduce(&mut self, x: Var, axis: usize, mean: bool) -> Var {
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.shape().len(), 2, "axis reduce: rank");
        assert!(axis < 2, "axis reduce: axis {axis}");
        let (r, c) = (xv.rows(), xv.cols());
        let (out_len, denom) = if axis == 0 { (c, r) } else { (r, c) };
        let mut out = vec![0.0; out_len];
        for i in 0..r {
            for j in 0..c {
                let v = xv.data()[i * c + j];
                if axis == 0 {
                    out[j] += v;
                } else {
                    out[i] += v;
                }
            }
        }
        if mean {
            for v in &mut out {
                *v /= denom as f64;
            }
        }
        let op = if mean {
            Op::MeanAxis { x: x.0, axis }
        } else {
            Op::SumAxis { x: x.0, axis }
        };
        self.push(Tensor::new(vec![out_len], out).unwrap(), op)
    }

    /// Sum over `axis` of a rank-2 tensor; axis 0 collapses rows.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Var {
        self.axis_reduce(x, axis, false)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Var {
        self.axis_reduce(x, axis, true)
    }

    /// Concatenate rank-2 tensors along `axis` (0 stacks rows, 1 joins columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat: no parts");
        assert!(axis < 2, "concat: axis {axis}");
        let first = self.nodes[parts[0].0].value.shape().to_vec();
        assert_eq!(first.len(), 2, "concat: rank");
        let mut rows = first[0];
        let mut cols = first[1];
        for p in &parts[1..] {
            let s = self.nodes[p.0].value.shape();
            assert_eq!(s.len(), 2, "concat: rank");
            if axis == 0 {
                assert_eq!(s[1], cols, "concat axis 0: column mismatch");
                rows += s[0];
            } else {
                assert_eq!(s[0], rows, "concat axis 1: row mismatch");
                cols += s[1];
            }
        }
        let mut out = vec![0.0; rows * cols];
        if axis == 0 {
            let mut at = 0;
            for p in parts {
                let d = self.nodes[p.0].value.data();
                out[at..at + d.len()].copy_from_slice(d);
                at += d.len();
            }
        } else {
            let mut col_at = 0;
            for p in parts {
                let pv = &self.nodes[p.0].value;
                let pc = pv.cols();
                for i in 0..rows {
                    out[i * cols + col_at..i * cols + col_at + pc]
                        .copy_from_slice(&pv.data()[i * pc..(i + 1) * pc]);
                }
                col_at += pc;
            }
        }
        let idxs = parts.iter().map(|p| p.0).collect();
        self.push(
            Tensor::new(vec![rows, cols], out).unwrap(),
            Op::Concat { parts: idxs, axis },
        )
    }

    /// Select rows of a rank-2 tensor by index, in the given order.
    pub fn row_gather(&mut self, x: Var, rows: &[usize]) -> Var {
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.shape().len(), 2, "row_gather: rank");
        let (r, c) = (xv.rows(), xv.cols());
        let mut out = Vec::with_capacity(rows.len() * c);
        for &ri in rows {
            assert!(ri < r, "row_gather: row {ri} out of {r}");
            out.extend_from_slice(&xv.data()[ri * c..(ri + 1) * c]);
        }
        self.push(
            Tensor::new(vec![rows.len(), c], out).unwrap(),
            Op::RowGather {
                x: x.0,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let av = &self.nodes[a.0].value;
        let n: usize = shape.iter().product();
        assert_eq!(n, av.numel(), "reshape {:?} -> {:?}", av.shape(), shape);
        let t = Tensor::new(shape.to_vec(), av.data().to_vec()).unwrap();
        self.push(t, Op::Reshape(a.0))
    }

    /// Layer normalization over the last axis of a rank-2 input, with
    /// learnable per-column gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.shape().len(), 2, "layer_norm: rank");
        let (r, c) = (xv.rows(), xv.cols());
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        assert_eq!(gv.shape(), &[c], "layer_norm: gamma shape");
        assert_eq!(bv.shape(), &[c], "layer_norm: beta shape");
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv.data()[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * rstd * gv.data()[j] + bv.data()[j];
            }
        }
        self.push(
            Tensor::new(vec![r, c], out).unwrap(),
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                eps,
            },
        )
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|&v| gelu_scalar(v)).collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Gelu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|&v| sigmoid_scalar(v)).collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Sigmoid(a.0))
    }

    /// Row softmax of `x / temp` for a rank-2 input.
    pub fn softmax_t(&mut self, x: Var, temp: f64) -> Var {
        assert!(temp > 0.0, "softmax_t: temperature {temp}");
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.shape().len(), 2, "softmax_t: rank");
        let (r, c) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv.data()[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let orow = &mut out[i * c..(i + 1) * c];
            let mut sum = 0.0;
            for j in 0..c {
                let e = ((row[j] - max) / temp).exp();
                orow[j] = e;
                sum += e;
            }
            for v in orow.iter_mut() {
                *v /= sum;
            }
        }
        self.push(
            Tensor::new(vec![r, c], out).unwrap(),
            Op::SoftmaxT { x: x.0, temp },
        )
    }

    /// 1-D convolution, stride 1, no padding.
    /// x: [c_in, len], w: [c_out, c_in, k], b: [c_out] -> [c_out, len - k + 1]
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(xv.shape().len(), 2, "conv1d: x rank");
        assert_eq!(wv.shape().len(), 3, "conv1d: w rank");
        let (c_in, len) = (xv.shape()[0], xv.shape()[1]);
        let (c_out, w_cin, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        assert_eq!(c_in, w_cin, "conv1d: channel mismatch");
        assert_eq!(bv.shape(), &[c_out], "conv1d: bias shape");
        assert!(len >= k, "conv1d: kernel {k} longer than input {len}");
        let out_len = len - k + 1;
        let mut out = vec![0.0; c_out * out_len];
        for o in 0..c_out {
            let orow = &mut out[o * out_len..(o + 1) * out_len];
            orow.fill(bv.data()[o]);
            for i in 0..c_in {
                let xrow = &xv.data()[i * len..(i + 1) * len];
                let wrow = &wv.data()[(o * c_in + i) * k..(o * c_in + i + 1) * k];
                for (kk, &wk) in wrow.iter().enumerate() {
                    for t in 0..out_len {
                        orow[t] += xrow[t + kk] * wk;
                    }
                }
            }
        }
        self.push(
            Tensor::new(vec![c_out, out_len], out).unwrap(),
            Op::Conv1d {
                x: x.0,
                w: w.0,
                b: b.0,
            },
        )
    }

    /// 1-D transposed convolution, stride 1, no padding.
    /// x: [c_in, len], w: [c_in, c_out, k], b: [c_out] -> [c_out, len + k - 1]
    pub fn conv1d_transpose(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(xv.shape().len(), 2, "conv1d_transpose: x rank");
        assert_eq!(wv.shape().len(), 3, "conv1d_transpose: w rank");
        let (c_in, len) = (xv.shape()[0], xv.shape()[1]);
        let (w_cin, c_out, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        assert_eq!(c_in, w_cin, "conv1d_transpose: channel mismatch");
        assert_eq!(bv.shape(), &[c_out], "conv1d_transpose: bias shape");
        let out_len = len + k - 1;
        let mut out = vec![0.0; c_out * out_len];
        for o in 0..c_out {
            out[o * out_len..(o + 1) * out_len].fill(bv.data()[o]);
        }
        for i in 0..c_in {
            let xrow = &xv.data()[i * len..(i + 1) * len];
            for o in 0..c_out {
                let wrow = &wv.data()[(i * c_out + o) * k..(i * c_out + o + 1) * k];
                let orow = &mut out[o * out_len..(o + 1) * out_len];
                for (l, &xl) in xrow.iter().enumerate() {
                    for (kk, &wk) in wrow.iter().enumerate() {
                        orow[l + kk] += xl * wk;
                    }
                }
            }
        }
        self.push(
            Tensor::new(vec![c_out, out_len], out).unwrap(),
            Op::ConvT1d {
                x: x.0,
                w: w.0,
                b: b.0,
            },
        )
    }

    /// Elementwise smooth-L1 of (a - b) with threshold 1:
    /// 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise.
    pub fn smooth_l1(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "smooth_l1");
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| {
                let d = x - y;
                if d.abs() < 1.0 {
                    0.5 * d * d
                } else {
                    d.abs() - 0.5
                }
            })
            .collect();
        let shape = self.nodes[a.0].value.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::SmoothL1(a.0, b.0))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|v| v.ln()).collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Log(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|v| v * v).collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Square(a.0))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|v| v.sqrt()).collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Sqrt(a.0))
    }

    /// Elementwise max(value, c); the hinge used by the variance and
    /// adversarial losses. Subgradient 0 at the kink.
    pub fn max_const(&mut self, a: Var, c: f64) -> Var {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|v| v.max(c)).collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::MaxConst(a.0, c))
    }

    /// Backward from a single scalar root with seed gradient 1.
    pub fn backward(&mut self, root: Var) -> Grads {
        assert_eq!(
            self.nodes[root.0].value.numel(),
            1,
            "backward: root must be scalar"
        );
        let seed = Tensor::new(
            self.nodes[root.0].value.shape().to_vec(),
            vec![1.0],
        )
        .unwrap();
        self.backward_seeded(&[(root, seed)])
    }

    /// Backward with explicit cotangents injected at the given nodes.
    pub fn backward_seeded(&mut self, seeds: &[(Var, Tensor)]) -> Grads {
        let mut slots: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, seed) in seeds {
            assert_eq!(
                seed.shape(),
                self.nodes[v.0].value.shape(),
                "backward seed shape mismatch"
            );
            match &mut slots[v.0] {
                Some(g) => {
                    for (gd, sd) in g.data_mut().iter_mut().zip(seed.data()) {
                        *gd += sd;
                    }
                }
                slot => *slot = Some(seed.clone()),
            }
        }
        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].needs_grad {
                slots[idx] = None;
                continue;
            }
            let g = match slots[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(idx, &g, &mut slots);
            slots[idx] = Some(g);
        }
        Grads { slots }
    }

    fn add_to(
        &self,
        slots: &mut [Option<Tensor>],
        idx: usize,
        shape: &[usize],
        f: impl FnOnce(&mut [f64]),
    ) {
        if !self.nodes[idx].needs_grad {
            return;
        }
        if slots[idx].is_none() {
            slots[idx] = Some(Tensor::zeros(shape));
        }
        f(slots[idx].as_mut().unwrap().data_mut());
    }

    fn accumulate(&self, idx: usize, g: &Tensor, slots: &mut [Option<Tensor>]) {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (parent, _) in [(a, 1.0), (b, 1.0)] {
                    let shape = self.nodes[parent].value.shape().to_vec();
                    self.add_to(slots, parent, &shape, |dst| {
                        for (d, s) in dst.iter_mut().zip(g.data()) {
                            *d += s;
                        }
                    });
                }
            }
            Op::Sub(a, b) => {
                let sa = self.nodes[a].value.shape().to_vec();
                self.add_to(slots, a, &sa, |dst| {
                    for (d, s) in dst.iter_mut().zip(g.data()) {
                        *d += s;
                    }
                });
                let sb = self.nodes[b].value.shape().to_vec();
                self.add_to(slots, b, &sb, |dst| {
                    for (d, s) in dst.iter_mut().zip(g.data()) {
                        *d -= s;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
                let sa = av.shape().to_vec();
                self.add_to(slots, a, &sa, |dst| {
                    for ((d, s), o) in dst.iter_mut().zip(g.data()).zip(bv.data()) {
                        *d += s * o;
                    }
                });
                let sb = bv.shape().to_vec();
                self.add_to(slots, b, &sb, |dst| {
                    for ((d, s), o) in dst.iter_mut().zip(g.data()).zip(av.data()) {
                        *d += s * o;
                    }
                });
            }
            Op::AddRowBroadcast { x, bias } => {
                let sx = self.nodes[x].value.shape().to_vec();
                let (r, c) = (sx[0], sx[1]);
                self.add_to(slots, x, &sx, |dst| {
                    for (d, s) in dst.iter_mut().zip(g.data()) {
                        *d += s;
                    }
                });
                let sb = self.nodes[bias].value.shape().to_vec();
                self.add_to(slots, bias, &sb, |dst| {
                    for i in 0..r {
                        for j in 0..c {
                            dst[j] += g.data()[i * c + j];
                        }
                    }
                });
            }
            Op::Scale(a, factor) => {
                let sa = self.nodes[a].value.shape().to_vec();
                self.add_to(slots, a, &sa, |dst| {
                    for (d, s) in dst.iter_mut().zip(g.data()) {
                        *d += s * factor;
                    }
                });
            }
            Op::Matmul(a, b) => {
                let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
                let (m, k) = (av.rows(), av.cols());
                let n = bv.cols();
                let sa = av.shape().to_vec();
                self.add_to(slots, a, &sa, |dst| {
                    mm_nt(g.data(), bv.data(), m, n, k, dst);
                });
                let sb = bv.shape().to_vec();
                self.add_to(slots, b, &sb, |dst| {
                    mm_tn(av.data(), g.data(), k, m, n, dst);
                });
            }
            Op::Transpose(a) => {
                let sa = self.nodes[a].value.shape().to_vec();
                let (r, c) = (sa[0], sa[1]);
                self.add_to(slots, a, &sa, |dst| {
                    for i in 0..r {
                        for j in 0..c {
                            dst[i * c + j] += g.data()[j * r + i];
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                let sa = self.nodes[a].value.shape().to_vec();
                let gv = g.data()[0];
                self.add_to(slots, a, &sa, |dst| {
                    for d in dst.iter_mut() {
                        *d += gv;
                    }
                });
            }
            Op::MeanAll(a) => {
                let sa = self.nodes[a].value.shape().to_vec();
                let n: usize = sa.iter().product();
                let gv = g.data()[0] / n as f64;
                self.add_to(slots, a, &sa, |dst| {
                    for d in dst.iter_mut() {
                        *d += gv;
                    }
                });
            }
            Op::SumAxis { x, axis } | Op::MeanAxis { x, axis } => {
                let sx = self.nodes[x].value.shape().to_vec();
                let (r, c) = (sx[0], sx[1]);
                let mean = matches!(self.nodes[idx].op, Op::MeanAxis { .. });
                let denom = if !mean {
                    1.0
                } else if axis == 0 {
                    r as f64
                } else {
                    c as f64
                };
                self.add_to(slots, x, &sx, |dst| {
                    for i in 0..r {
                        for j in 0..c {
                            let gv = if axis == 0 { g.data()[j] } else { g.data()[i] };
                            dst[i * c + j] += gv / denom;
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                if axis == 0 {
                    let mut at = 0;
                    for p in parts {
                        let sp = self.nodes[p].value.shape().to_vec();
                        let len = sp.iter().product::<usize>();
                        self.add_to(slots, p, &sp, |dst| {
                            for (d, s) in dst.iter_mut().zip(&g.data()[at..at + len]) {
                                *d += s;
                            }
                        });
                        at += len;
                    }
                } else {
                    let cols = g.cols();
                    let rows = g.rows();
                    let mut col_at = 0;
                    for p in parts {
                        let sp = self.nodes[p].value.shape().to_vec();
                        let pc = sp[1];
                        self.add_to(slots, p, &sp, |dst| {
                            for i in 0..rows {
                                for j in 0..pc {
                                    dst[i * pc + j] += g.data()[i * cols + col_at + j];
                                }
                            }
                        });
                        col_at += pc;
                    }
                }
            }
            Op::RowGather { x, rows } => {
                let sx = self.nodes[x].value.shape().to_vec();
                let c = sx[1];
                self.add_to(slots, x, &sx, |dst| {
                    for (out_i, &src_i) in rows.iter().enumerate() {
                        for j in 0..c {
                            dst[src_i * c + j] += g.data()[out_i * c + j];
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                let sa = self.nodes[a].value.shape().to_vec();
                self.add_to(slots, a, &sa, |dst| {
                    for (d, s) in dst.iter_mut().zip(g.data()) {
                        *d += s;
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let xv = &self.nodes[x].value;
                let gv = &self.nodes[gamma].value;
                let (r, c) = (xv.rows(), xv.cols());
                let sx = xv.shape().to_vec();
                // Recompute the per-row statistics; cheaper than caching.
                let mut means = vec![0.0; r];
                let mut rstds = vec![0.0; r];
                for i in 0..r {
                    let row = &xv.data()[i * c..(i + 1) * c];
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    means[i] = mean;
                    rstds[i] = 1.0 / (var + eps).sqrt();
                }
                self.add_to(slots, x, &sx, |dst| {
                    for i in 0..r {
                        let row = &xv.data()[i * c..(i + 1) * c];
                        let grow = &g.data()[i * c..(i + 1) * c];
                        let (mean, rstd) = (means[i], rstds[i]);
                        let mut mean_gg = 0.0;
                        let mut mean_ggx = 0.0;
                        for j in 0..c {
                            let gg = grow[j] * gv.data()[j];
                            let xh = (row[j] - mean) * rstd;
                            mean_gg += gg;
                            mean_ggx += gg * xh;
                        }
                        mean_gg /= c as f64;
                        mean_ggx /= c as f64;
                        for j in 0..c {
                            let gg = grow[j] * gv.data()[j];
                            let xh = (row[j] - mean) * rstd;
                            dst[i * c + j] += rstd * (gg - mean_gg - xh * mean_ggx);
                        }
                    }
                });
                let sg = gv.shape().to_vec();
                self.add_to(slots, gamma, &sg, |dst| {
                    for i in 0..r {
                        for j in 0..c {
                            let xh = (xv.data()[i * c + j] - means[i]) * rstds[i];
                            dst[j] += g.data()[i * c + j] * xh;
                        }
                    }
                });
                let sb = self.nodes[beta].value.shape().to_vec();
                self.add_to(slots, beta, &sb, |dst| {
                    for i in 0..r {
                        for j in 0..c {
                            dst[j] += g.data()[i * c + j];
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let av = &self.nodes[a].value;
                let sa = av.shape().to_vec();
                self.add_to(slots, a, &sa, |dst| {
                    for ((d, s), &x) in dst.iter_mut().zip(g.data()).zip(av.data()) {
                        *d += s * gelu_grad_scalar(x);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let yv = &self.nodes[idx].value;
                let sa = self.nodes[a].value.shape().to_vec();
                self.add_to(slots, a, &sa, |dst| {
                    for ((d, s), &y) in dst.iter_mut().zip(g.data()).zip(yv.data()) {
                        *d += s * y * (1.0 - y);
                    }
                });
            }
            Op::SoftmaxT { x, temp } => {
                let yv = &self.nodes[idx].value;
                let (r, c) = (yv.rows(), yv.cols());
                let sx = self.nodes[x].value.shape().to_vec();
                self.add_to(slots, x, &sx, |dst| {
                    for i in 0..r {
                        let yrow = &yv.data()[i * c..(i + 1) * c];
                        let grow = &g.data()[i * c..(i + 1) * c];
                        let dot: f64 = yrow.iter().zip(grow).map(|(y, gg)| y * gg).sum();
                        for j in 0..c {
                            dst[i * c + j] += yrow[j] / temp * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::Conv1d { x, w, b } => {
                let xv = &self.nodes[x].value;
                let wv = &self.nodes[w].value;
                let (c_in, len) = (xv.shape()[0], xv.shape()[1]);
                let (c_out, _, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
                let out_len = len - k + 1;
                let sx = xv.shape().to_vec();
                self.add_to(slots, x, &sx, |dst| {
                    for o in 0..c_out {
                        let grow = &g.data()[o * out_len..(o + 1) * out_len];
                        for i in 0..c_in {
                            let wrow = &wv.data()[(o * c_in + i) * k..(o * c_in + i + 1) * k];
                            let drow = &mut dst[i * len..(i + 1) * len];
                            for (kk, &wk) in wrow.iter().enumerate() {
                                for t in 0..out_len {
                                    drow[t + kk] += grow[t] * wk;
                                }
                            }
                        }
                    }
                });
                let sw = wv.shape().to_vec();
                self.add_to(slots, w, &sw, |dst| {
                    for o in 0..c_out {
                        let grow = &g.data()[o * out_len..(o + 1) * out_len];
                        for i in 0..c_in {
                            let xrow = &xv.data()[i * len..(i + 1) * len];
                            let drow = &mut dst[(o * c_in + i) * k..(o * c_in + i + 1) * k];
                            for (kk, dk) in drow.iter_mut().enumerate() {
                                for t in 0..out_len {
                                    *dk += grow[t] * xrow[t + kk];
                                }
                            }
                        }
                    }
                });
                let sb = self.nodes[b].value.shape().to_vec();
                self.add_to(slots, b, &sb, |dst| {
                    for o in 0..c_out {
                        dst[o] += g.data()[o * out_len..(o + 1) * out_len].iter().sum::<f64>();
                    }
                });
            }
            Op::ConvT1d { x, w, b } => {
                let xv = &self.nodes[x].value;
                let wv = &self.nodes[w].value;
                let (c_in, len) = (xv.shape()[0], xv.shape()[1]);
                let (_, c_out, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
                let out_len = len + k - 1;
                let sx = xv.shape().to_vec();
                self.add_to(slots, x, &sx, |dst| {
                    for i in 0..c_in {
                        let drow = &mut dst[i * len..(i + 1) * len];
                        for o in 0..c_out {
                            let wrow = &wv.data()[(i * c_out + o) * k..(i * c_out + o + 1) * k];
                            let grow = &g.data()[o * out_len..(o + 1) * out_len];
                            for (l, dl) in drow.iter_mut().enumerate() {
                                for (kk, &wk) in wrow.iter().enumerate() {
                                    *dl += grow[l + kk] * wk;
                                }
                            }
                        }
                    }
                });
                let sw = wv.shape().to_vec();
                self.add_to(slots, w, &sw, |dst| {
                    for i in 0..c_in {
                        let xrow = &xv.data()[i * len..(i + 1) * len];
                        for o in 0..c_out {
                            let grow = &g.data()[o * out_len..(o + 1) * out_len];
                            let drow = &mut dst[(i * c_out + o) * k..(i * c_out + o + 1) * k];
                            for (kk, dk) in drow.iter_mut().enumerate() {
                                for (l, &xl) in xrow.iter().enumerate() {
                                    *dk += xl * grow[l + kk];
                                }
                            }
                        }
                    }
                });
                let sb = self.nodes[b].value.shape().to_vec();
                self.add_to(slots, b, &sb, |dst| {
                    for o in 0..c_out {
                        dst[o] += g.data()[o * out_len..(o + 1) * out_len].iter().sum::<f64>();
                    }
                });
            }
            Op::SmoothL1(a, b) => {
                let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
                let sa = av.shape().to_vec();
                let deriv = |x: f64, y: f64| {
                    let d = x - y;
                    if d.abs() < 1.0 {
                        d
                    } else {
                        d.signum()
                    }
                };
                self.add_to(slots, a, &sa, |dst| {
                    for (i, d) in dst.iter_mut().enumerate() {
                        *d += g.data()[i] * deriv(av.data()[i], bv.data()[i]);
                    }
                });
                let sb = bv.shape().to_vec();
                self.add_to(slots, b, &sb, |dst| {
                    for (i, d) in dst.iter_mut().enumerate() {
                        *d -= g.data()[i] * deriv(av.data()[i], bv.data()[i]);
                    }
                });
            }
            Op::Log(a) => {
                let av = &self.nodes[a].value;
                let sa = av.shape().to_vec();
                self.add_to(slots, a, &sa, |dst| {
                    for ((d, s), &x) in dst.iter_mut().zip(g.data()).zip(av.data()) {
                        *d += s / x;
                    }
                });
            }
            Op::Square(a) => {
                let av = &self.nodes[a].value;
                let sa = av.shape().to_vec();
                self.add_to(slots, a, &sa, |dst| {
                    for ((d, s), &x) in dst.iter_mut().zip(g.data()).zip(av.data()) {
                        *d += s * 2.0 * x;
                    }
                });
            }
            Op::Sqrt(a) => {
                let yv = &self.nodes[idx].value;
                let sa = self.nodes[a].value.shape().to_vec();
                self.add_to(slots, a, &sa, |dst| {
                    for ((d, s), &y) in dst.iter_mut().zip(g.data()).zip(yv.data()) {
                        *d += s * 0.5 / y;
                    }
                });
            }
            Op::MaxConst(a, c) => {
                let av = &self.nodes[a].value;
                let sa = av.shape().to_vec();
                self.add_to(slots, a, &sa, |dst| {
                    for ((d, s), &x) in dst.iter_mut().zip(g.data()).zip(av.data()) {
                        if x > c {
                            *d += s;
                        }
                    }
                });
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}
