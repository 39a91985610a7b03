use crate::error::{Error, Result};

use super::kernels::{self, ConvGeom};
use super::linalg::{gemm, MatMut, MatRef};
use super::{sigmoid, Scalar, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation whose forward value is computed by the caller and whose
/// backward rule lives outside this module.
pub trait CustomOp<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Accumulates into `grads[i]` the gradient w.r.t. `inputs[i]`.
    /// Entries are `None` for inputs that do not require a gradient.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, dout: &[T], grads: &mut [Option<&mut [T]>]);
}

enum Op<T: Scalar> {
    Leaf,
    Conv2d {
        x: Var,
        k: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ScaleBy {
        x: Var,
        s: Var,
    },
    Relu(Var),
    Silu(Var),
    Exp(Var),
    Resize {
        x: Var,
    },
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    SoftmaxRows(Var),
    Sum(Var),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T>>,
    },
}

impl<T: Scalar> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::ScaleBy { .. } => "scale_by",
            Op::Relu(_) => "relu",
            Op::Silu(_) => "silu",
            Op::Exp(_) => "exp",
            Op::Resize { .. } => "resize_bilinear",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(_) => "reshape",
            Op::MatMul { .. } => "matmul",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::Sum(_) => "sum",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of tensor operations supporting reverse-mode
/// differentiation. Node order is execution order.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

pub type Graph64 = Graph<f64>;
pub type Graph32 = Graph<f32>;

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of leaf nodes produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    visited: Vec<usize>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient w.r.t. a leaf, `None` when the leaf does not influence the root.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Node indices whose backward rule ran, in visiting order.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

fn dim_err(msg: String) -> Error {
    Error::Dimension(msg)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant leaf.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// 2-D convolution of `x: [C_in,H,W]` with `k: [C_out,C_in,kH,kW]`.
    pub fn conv2d(&mut self, x: Var, k: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x);
        let ks = self.shape(k);
        if xs.len() != 3 || ks.len() != 4 {
            return Err(dim_err(format!("conv2d expects [C,H,W] and [O,C,kH,kW], got {xs:?} and {ks:?}")));
        }
        if xs[0] != ks[1] {
            return Err(dim_err(format!(
                "conv2d input has {} channels but kernel expects {}",
                xs[0], ks[1]
            )));
        }
        if ks[2] % 2 == 0 || ks[3] % 2 == 0 {
            return Err(dim_err(format!("conv2d kernel extents must be odd, got {}x{}", ks[2], ks[3])));
        }
        if stride == 0 {
            return Err(dim_err("conv2d stride must be >= 1".into()));
        }
        let (c_in, h, w) = (xs[0], xs[1], xs[2]);
        let (c_out, kh, kw) = (ks[0], ks[2], ks[3]);
        let ho = kernels::conv_out_extent(h, kh, stride, pad)
            .ok_or_else(|| dim_err(format!("conv2d kernel {kh} larger than padded height {h}+2*{pad}")))?;
        let wo = kernels::conv_out_extent(w, kw, stride, pad)
            .ok_or_else(|| dim_err(format!("conv2d kernel {kw} larger than padded width {w}+2*{pad}")))?;
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(dim_err(format!("conv2d bias must be [{c_out}], got {:?}", self.shape(b))));
            }
        }
        let geom = ConvGeom {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        };
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(k).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let mut deps = vec![x, k];
        deps.extend(bias);
        let rg = self.rg(&deps);
        let t = Tensor::new(vec![c_out, ho, wo], out)?;
        Ok(self.push(t, Op::Conv2d { x, k, bias, geom }, rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let t = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push(t, Op::Scale(x, c), rg)
    }

    /// Multiplication by a differentiable one-element tensor.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(dim_err(format!("scale_by expects a scalar, got {:?}", self.shape(s))));
        }
        let sv = self.value(s).item();
        let t = self.value(x).map(|v| v * sv);
        let rg = self.rg(&[x, s]);
        Ok(self.push(t, Op::ScaleBy { x, s }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.rg(&[x]);
        self.push(t, Op::Relu(x), rg)
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v * sigmoid(v));
        let rg = self.rg(&[x]);
        self.push(t, Op::Silu(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let t = self.value(x).map(T::exp);
        let rg = self.rg(&[x]);
        self.push(t, Op::Exp(x), rg)
    }

    /// Bilinear resize of `[C,H,W]`, align-corners-false.
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(dim_err(format!("resize expects [C,H,W], got {s:?}")));
        }
        if out_h == 0 || out_w == 0 {
            return Err(dim_err("resize target must be >= 1".into()));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let out = kernels::resize_forward(self.value(x).data(), c, h, w, out_h, out_w);
        let t = Tensor::new(vec![c, out_h, out_w], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Resize { x }, rg))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| dim_err("concat of zero tensors".into()))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != tail[..] {
                return Err(dim_err(format!("concat trailing extents {:?} vs {:?}", &s[1..], tail)));
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let t = Tensor::new(shape, data)?;
        let rg = self.rg(parts);
        Ok(self.push(t, Op::Concat(parts.to_vec()), rg))
    }

    /// Rows `start..start+len` along the leading axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if len == 0 || start + len > s[0] {
            return Err(dim_err(format!("slice {start}..{} out of range for {s:?}", start + len)));
        }
        let row: usize = s[1..].iter().product();
        let data = self.value(x).data()[start * row..(start + len) * row].to_vec();
        let mut shape = s.clone();
        shape[0] = len;
        let t = Tensor::new(shape, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Slice { x, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// `op(a) * op(b)` for rank-2 tensors, `op` transposing when requested.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(dim_err(format!("matmul expects rank-2 tensors, got {sa:?} and {sb:?}")));
        }
        let am = MatRef::new(self.value(a).data(), sa[0], sa[1], ta);
        let bm = MatRef::new(self.value(b).data(), sb[0], sb[1], tb);
        if am.cols != bm.rows {
            return Err(dim_err(format!("matmul inner extents {} and {} differ", am.cols, bm.rows)));
        }
        let (m, n) = (am.rows, bm.cols);
        let mut out = vec![T::zero(); m * n];
        gemm(T::one(), am, bm, T::zero(), MatMut::new(&mut out, m, n, false));
        let t = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::MatMul { a, b, ta, tb }, rg))
    }

    /// Softmax over the last axis of a rank-2 tensor.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(dim_err(format!("softmax_rows expects rank 2, got {s:?}")));
        }
        let cols = s[1];
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(cols) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let t = Tensor::new(s.to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::SoftmaxRows(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(t, Op::Sum(x), rg)
    }

    /// Records an operation with an externally supplied forward value.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        for (i, a) in inputs.iter().enumerate() {
            assert!(!inputs[..i].contains(a), "custom op inputs must be distinct");
        }
        let rg = self.rg(inputs);
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        )
    }

    /// Reverse pass from `root` seeded with ones.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        self.backward_with_seed(root, T::one())
    }

    /// Reverse pass from `root`, seeding every root element with `seed`.
    /// Nodes are visited in exact reverse execution order.
    pub fn backward_with_seed(&self, root: Var, seed: T) -> Gradients<T> {
        let n = root.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        let mut visited = Vec::new();
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![seed; self.nodes[root.0].value.len()]);
        }
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dout) = grads[i].take() else {
                continue;
            };
            visited.push(i);
            self.backprop(node, &dout, &mut grads);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|d| Tensor::new(self.nodes[i].value.shape().to_vec(), d).expect("gradient shape")))
            .collect();
        Gradients { grads, visited }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn buf<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> &'g mut Vec<T> {
        let len = self.nodes[v.0].value.len();
        grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    fn take(&self, grads: &mut [Option<Vec<T>>], v: Var) -> Option<Vec<T>> {
        if !self.wants(v) {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].take().unwrap_or_else(|| vec![T::zero(); len]))
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, contrib: impl Iterator<Item = T>) {
        if !self.wants(v) {
            return;
        }
        for (g, c) in self.buf(grads, v).iter_mut().zip(contrib) {
            *g += c;
        }
    }

    fn backprop(&self, node: &Node<T>, dout: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, k, bias, geom } => {
                let mut gx = self.take(grads, *x);
                let mut gk = self.take(grads, *k);
                let mut gb = bias.and_then(|b| self.take(grads, b));
                kernels::conv2d_backward(
                    val(*x),
                    val(*k),
                    dout,
                    geom,
                    gx.as_deref_mut(),
                    gk.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(g) = gx {
                    grads[x.0] = Some(g);
                }
                if let Some(g) = gk {
                    grads[k.0] = Some(g);
                }
                if let (Some(b), Some(g)) = (bias, gb) {
                    grads[b.0] = Some(g);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dout.iter().copied());
                self.accumulate(grads, *b, dout.iter().copied());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let ga: Vec<T> = dout.iter().zip(vb).map(|(&d, &y)| d * y).collect();
                let gb: Vec<T> = dout.iter().zip(va).map(|(&d, &x)| d * x).collect();
                self.accumulate(grads, *a, ga.into_iter());
                self.accumulate(grads, *b, gb.into_iter());
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, dout.iter().map(|&d| d * *c)),
            Op::ScaleBy { x, s } => {
                let sv = val(*s)[0];
                let gs: T = dout.iter().zip(val(*x)).map(|(&d, &v)| d * v).sum();
                self.accumulate(grads, *x, dout.iter().map(|&d| d * sv));
                self.accumulate(grads, *s, std::iter::once(gs));
            }
            Op::Relu(x) => {
                let vx = val(*x);
                self.accumulate(
                    grads,
                    *x,
                    dout.iter().zip(vx).map(|(&d, &v)| if v > T::zero() { d } else { T::zero() }),
                );
            }
            Op::Silu(x) => {
                let vx = val(*x);
                self.accumulate(
                    grads,
                    *x,
                    dout.iter().zip(vx).map(|(&d, &v)| {
                        let s = sigmoid(v);
                        d * s * (T::one() + v * (T::one() - s))
                    }),
                );
            }
            Op::Exp(x) => {
                let y = node.value.data();
                self.accumulate(grads, *x, dout.iter().zip(y).map(|(&d, &e)| d * e));
            }
            Op::Resize { x } => {
                if self.wants(*x) {
                    let s = self.nodes[x.0].value.shape();
                    let o = node.value.shape();
                    let (c, h, w, oh, ow) = (s[0], s[1], s[2], o[1], o[2]);
                    let g = self.buf(grads, *x);
                    kernels::resize_backward(dout, c, h, w, oh, ow, g);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    self.accumulate(grads, p, dout[off..off + len].iter().copied());
                    off += len;
                }
            }
            Op::Slice { x, start } => {
                if self.wants(*x) {
                    let row: usize = node.value.shape()[1..].iter().product();
                    let g = self.buf(grads, *x);
                    for (gi, &d) in g[start * row..].iter_mut().zip(dout) {
                        *gi += d;
                    }
                }
            }
            Op::Reshape(x) => self.accumulate(grads, *x, dout.iter().copied()),
            Op::MatMul { a, b, ta, tb } => {
                let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                let am = MatRef::new(val(*a), sa[0], sa[1], *ta);
                let bm = MatRef::new(val(*b), sb[0], sb[1], *tb);
                let dm = MatRef::new(dout, am.rows, bm.cols, false);
                // dA' = dC B'^T, dB' = A'^T dC; written through the transposed
                // storage view when the operand was transposed.
                if self.wants(*a) {
                    let mut ga: Vec<T> = vec![T::zero(); sa[0] * sa[1]];
                    gemm(T::one(), dm, bm.t(), T::zero(), MatMut::new(&mut ga, sa[0], sa[1], *ta));
                    self.accumulate(grads, *a, ga.into_iter());
                }
                if self.wants(*b) {
                    let mut gb: Vec<T> = vec![T::zero(); sb[0] * sb[1]];
                    gemm(T::one(), am.t(), dm, T::zero(), MatMut::new(&mut gb, sb[0], sb[1], *tb));
                    self.accumulate(grads, *b, gb.into_iter());
                }
            }
            Op::SoftmaxRows(x) => {
                if self.wants(*x) {
                    let cols = node.value.shape()[1];
                    let y = node.value.data();
                    let mut gx = Vec::with_capacity(y.len());
                    for (yr, dr) in y.chunks(cols).zip(dout.chunks(cols)) {
                        let dot: T = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
                        gx.extend(yr.iter().zip(dr).map(|(&yi, &di)| yi * (di - dot)));
                    }
                    self.accumulate(grads, *x, gx.into_iter());
                }
            }
            Op::Sum(x) => {
                let d = dout[0];
                let len = self.nodes[x.0].value.len();
                self.accumulate(grads, *x, std::iter::repeat(d).take(len));
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let mut bufs: Vec<Option<Vec<T>>> = inputs.iter().map(|&v| self.take(grads, v)).collect();
                {
                    let mut views: Vec<Option<&mut [T]>> = bufs.iter_mut().map(|b| b.as_deref_mut()).collect();
                    op.backward(&values, &node.value, dout, &mut views);
                }
                for (v, b) in inputs.iter().zip(bufs) {
                    if let Some(b) = b {
                        grads[v.0] = Some(b);
                    }
                }
            }
        }
    }
}
