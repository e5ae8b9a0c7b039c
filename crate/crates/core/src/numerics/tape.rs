//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends one node holding its forward value and whatever it needs
//! for the backward rule. `Tape::backward` walks the nodes in exact reverse
//! order. Handles (`Var`) are plain indices; the tape uses interior
//! mutability so nested calls like `t.add(t.matmul(a, b)?, c)` compose.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Index sentinel for `gather`/`scatter_add`: reads as zero, writes nowhere.
pub const PAD: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unary {
    Exp,
    Log,
    Sqrt,
    Sigmoid,
    Softplus,
    Silu,
    Tanh,
    Sin,
    Cos,
    Abs,
}

#[derive(Debug, Clone, Copy)]
struct MatDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, f64),
    Unary(Var, Unary),
    Atan2(Var, Var),
    Minimum(Var, Var),
    Maximum(Var, Var),
    Clamp(Var, f64, f64),
    MatMul(Var, Var, MatDims),
    Softmax(Var),
    LayerNorm(Var, Vec<f64>),
    DwConv1d(Var, Var),
    Gather(Var, Rc<Vec<usize>>),
    ScatterAdd(Var, Rc<Vec<usize>>),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    Cumsum(Var),
    SelectiveScan {
        x: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        states: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn get_data(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Index map for a permutation: `out[i] = input[map[i]]`.
fn permute_map(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let n = numel(shape);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..n {
        let src: usize = idx
            .iter()
            .zip(axes)
            .map(|(&i, &a)| i * in_strides[a])
            .sum();
        map.push(src);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

fn matmul_kernel(a: &[f64], b: &[f64], d: MatDims, out: &mut [f64]) {
    let MatDims { batch, m, k, n } = d;
    for bi in 0..batch {
        let a = &a[bi * m * k..(bi + 1) * m * k];
        let b = &b[bi * k * n..(bi + 1) * k * n];
        let out = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}

/// Discretized transition and input weight for one diagonal state entry.
#[inline]
pub(crate) fn zoh(a: f64, b: f64, delta: f64) -> (f64, f64) {
    let da = delta * a;
    (da.exp(), da.exp_m1() / a * b)
}

/// Forward pass of the fused selective scan; returns outputs and all states.
///
/// Shapes: x, delta `[L, C]`; a `[C, N]`; b, c `[L, N]`.
pub(crate) fn selective_scan_kernel(
    x: &[f64],
    delta: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    len: usize,
    channels: usize,
    state: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; len * channels];
    let mut states = vec![0.0; len * channels * state];
    let mut h = vec![0.0; channels * state];
    for t in 0..len {
        for ch in 0..channels {
            let xt = x[t * channels + ch];
            let dt = delta[t * channels + ch];
            let mut acc = 0.0;
            for s in 0..state {
                let (abar, bbar) = zoh(a[ch * state + s], b[t * state + s], dt);
                let hv = abar * h[ch * state + s] + bbar * xt;
                h[ch * state + s] = hv;
                acc += c[t * state + s] * hv;
            }
            y[t * channels + ch] = acc;
        }
        states[t * channels * state..(t + 1) * channels * state].copy_from_slice(&h);
    }
    (y, states)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    /// Learnable input; receives a gradient from `backward`.
    pub fn param(&self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, true)
    }

    pub fn scalar_constant(&self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].shape.clone()
    }

    pub fn value(&self, v: Var) -> Tensor {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape")
    }

    pub fn data(&self, v: Var) -> Vec<f64> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn with_data<R>(&self, v: Var, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value[0]
    }

    // ---- elementwise binary ------------------------------------------------

    fn check_broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let nodes = self.nodes.borrow();
        let sa = &nodes[a.0].shape;
        let sb = &nodes[b.0].shape;
        let ok = sa == sb
            || numel(sb) == 1
            || (sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == sb[..]);
        if !ok {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(sa.clone())
    }

    fn binary(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let shape = self.check_broadcast(name, a, b)?;
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            let nb = bv.len();
            av.iter()
                .enumerate()
                .map(|(i, &x)| f(x, bv[i % nb]))
                .collect()
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, value, op, rg))
    }

    /// Elementwise sum. `b` may be a scalar or match a suffix of `a`'s shape.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `scale * a + shift`.
    pub fn affine(&self, a: Var, scale: f64, shift: f64) -> Var {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            (
                n.shape.clone(),
                n.value.iter().map(|&x| scale * x + shift).collect(),
            )
        };
        let rg = self.rg(&[a]);
        self.push(shape, value, Op::Affine(a, scale), rg)
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn add_scalar(&self, a: Var, s: f64) -> Var {
        self.affine(a, 1.0, s)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let nodes = self.nodes.borrow();
        if nodes[a.0].shape != nodes[b.0].shape {
            return Err(Error::shape(op, &nodes[a.0].shape, &nodes[b.0].shape));
        }
        Ok(nodes[a.0].shape.clone())
    }

    fn zip_same(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let shape = self.same_shape(name, a, b)?;
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.0]
                .value
                .iter()
                .zip(&nodes[b.0].value)
                .map(|(&x, &y)| f(x, y))
                .collect()
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, value, op, rg))
    }

    /// Four-quadrant arctangent of `y / x`; gradient 0 at the origin.
    pub fn atan2(&self, y: Var, x: Var) -> Result<Var> {
        self.zip_same("atan2", y, x, f64::atan2, Op::Atan2(y, x))
    }

    pub fn minimum(&self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("minimum", a, b, f64::min, Op::Minimum(a, b))
    }

    pub fn maximum(&self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("maximum", a, b, f64::max, Op::Maximum(a, b))
    }

    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi || lo.is_nan() || hi.is_nan() {
            return Err(Error::contract("clamp", format!("lo {lo} > hi {hi}")));
        }
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            (
                n.shape.clone(),
                n.value.iter().map(|&x| x.clamp(lo, hi)).collect(),
            )
        };
        let rg = self.rg(&[a]);
        Ok(self.push(shape, value, Op::Clamp(a, lo, hi), rg))
    }

    // ---- elementwise unary -------------------------------------------------

    fn unary(&self, a: Var, kind: Unary) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Sqrt => f64::sqrt,
            Unary::Sigmoid => sigmoid,
            Unary::Softplus => softplus,
            Unary::Silu => |x| x * sigmoid(x),
            Unary::Tanh => f64::tanh,
            Unary::Sin => f64::sin,
            Unary::Cos => f64::cos,
            Unary::Abs => f64::abs,
        };
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            (n.shape.clone(), n.value.iter().map(|&x| f(x)).collect())
        };
        let rg = self.rg(&[a]);
        self.push(shape, value, Op::Unary(a, kind), rg)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }
    pub fn log(&self, a: Var) -> Var {
        self.unary(a, Unary::Log)
    }
    /// Square root; the gradient at exactly 0 is taken as 0.
    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }
    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }
    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }
    pub fn silu(&self, a: Var) -> Var {
        self.unary(a, Unary::Silu)
    }
    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }
    pub fn sin(&self, a: Var) -> Var {
        self.unary(a, Unary::Sin)
    }
    pub fn cos(&self, a: Var) -> Var {
        self.unary(a, Unary::Cos)
    }
    pub fn abs(&self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }

    // ---- linear algebra and normalization ----------------------------------

    /// `[m, k] x [k, n]` or batched `[B, m, k] x [B, k, n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (dims, shape) = {
            let nodes = self.nodes.borrow();
            let sa = &nodes[a.0].shape;
            let sb = &nodes[b.0].shape;
            match (sa.len(), sb.len()) {
                (2, 2) if sa[1] == sb[0] => (
                    MatDims {
                        batch: 1,
                        m: sa[0],
                        k: sa[1],
                        n: sb[1],
                    },
                    vec![sa[0], sb[1]],
                ),
                (3, 3) if sa[0] == sb[0] && sa[2] == sb[1] => (
                    MatDims {
                        batch: sa[0],
                        m: sa[1],
                        k: sa[2],
                        n: sb[2],
                    },
                    vec![sa[0], sa[1], sb[2]],
                ),
                _ => return Err(Error::shape("matmul", sa, sb)),
            }
        };
        let mut out = vec![0.0; numel(&shape)];
        {
            let nodes = self.nodes.borrow();
            matmul_kernel(&nodes[a.0].value, &nodes[b.0].value, dims, &mut out);
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, Op::MatMul(a, b, dims), rg))
    }

    pub fn softmax(&self, a: Var) -> Var {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            let w = *n.shape.last().expect("non-empty shape");
            let mut out = n.value.clone();
            for row in out.chunks_mut(w) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    s += *v;
                }
                for v in row.iter_mut() {
                    *v /= s;
                }
            }
            (n.shape.clone(), out)
        };
        let rg = self.rg(&[a]);
        self.push(shape, value, Op::Softmax(a), rg)
    }

    /// Normalizes each row of the last axis to zero mean and unit variance.
    pub fn layer_norm(&self, a: Var, eps: f64) -> Var {
        let (shape, value, rstd) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            let w = *n.shape.last().expect("non-empty shape");
            let mut out = n.value.clone();
            let mut rstd = Vec::with_capacity(out.len() / w);
            for row in out.chunks_mut(w) {
                let mean = row.iter().sum::<f64>() / w as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
                let r = 1.0 / (var + eps).sqrt();
                for v in row.iter_mut() {
                    *v = (*v - mean) * r;
                }
                rstd.push(r);
            }
            (n.shape.clone(), out, rstd)
        };
        let rg = self.rg(&[a]);
        self.push(shape, value, Op::LayerNorm(a, rstd), rg)
    }

    /// Depthwise convolution along axis 0 of `x: [L, C]` with `w: [C, K]`,
    /// odd K, zero padding, output length L.
    pub fn dwconv1d(&self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] || sw[1] % 2 == 0 {
            return Err(Error::shape("dwconv1d", &sx, &sw));
        }
        let (len, ch, k) = (sx[0], sx[1], sw[1]);
        let pad = k / 2;
        let mut out = vec![0.0; len * ch];
        {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            let wv = &nodes[w.0].value;
            for t in 0..len {
                for j in 0..k {
                    let src = t + j;
                    if src < pad || src - pad >= len {
                        continue;
                    }
                    let s = src - pad;
                    for c in 0..ch {
                        out[t * ch + c] += wv[c * k + j] * xv[s * ch + c];
                    }
                }
            }
        }
        let rg = self.rg(&[x, w]);
        Ok(self.push(sx, out, Op::DwConv1d(x, w), rg))
    }

    // ---- indexing and layout -------------------------------------------------

    /// `out[i] = a.flat[index[i]]`, with [`PAD`] reading as zero.
    pub fn gather(&self, a: Var, index: Rc<Vec<usize>>, shape: &[usize]) -> Result<Var> {
        if numel(shape) != index.len() {
            return Err(Error::contract(
                "gather",
                format!("{} indices for shape {shape:?}", index.len()),
            ));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            let mut out = Vec::with_capacity(index.len());
            for &i in index.iter() {
                if i == PAD {
                    out.push(0.0);
                } else if i < av.len() {
                    out.push(av[i]);
                } else {
                    return Err(Error::contract(
                        "gather",
                        format!("index {i} out of range {}", av.len()),
                    ));
                }
            }
            out
        };
        let rg = self.rg(&[a]);
        Ok(self.push(shape.to_vec(), value, Op::Gather(a, index), rg))
    }

    /// `out.flat[index[i]] += a.flat[i]` into a zero tensor of `shape`.
    pub fn scatter_add(&self, a: Var, index: Rc<Vec<usize>>, shape: &[usize]) -> Result<Var> {
        let len = numel(shape);
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            if av.len() != index.len() {
                return Err(Error::contract(
                    "scatter_add",
                    format!("{} values for {} indices", av.len(), index.len()),
                ));
            }
            let mut out = vec![0.0; len];
            for (&i, &v) in index.iter().zip(av) {
                if i == PAD {
                    continue;
                }
                if i >= len {
                    return Err(Error::contract(
                        "scatter_add",
                        format!("index {i} out of range {len}"),
                    ));
                }
                out[i] += v;
            }
            out
        };
        let rg = self.rg(&[a]);
        Ok(self.push(shape.to_vec(), value, Op::ScatterAdd(a, index), rg))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let (old, value) = {
            let nodes = self.nodes.borrow();
            (nodes[a.0].shape.clone(), nodes[a.0].value.clone())
        };
        if numel(&old) != numel(shape) {
            return Err(Error::shape("reshape", &old, shape));
        }
        let rg = self.rg(&[a]);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(a), rg))
    }

    pub fn permute(&self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a);
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&x| x >= shape.len() || std::mem::replace(&mut seen[x], true)) {
            return Err(Error::shape("permute", &shape, axes));
        }
        let map = permute_map(&shape, axes);
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            map.iter().map(|&i| av[i]).collect()
        };
        let out_shape = axes.iter().map(|&x| shape[x]).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(out_shape, value, Op::Permute(a, axes.to_vec()), rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(Error::contract("transpose", "rank < 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(a, &axes)
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat", "no inputs"));
        }
        let nodes = self.nodes.borrow();
        let first = nodes[parts[0].0].shape.clone();
        if axis >= first.len() {
            return Err(Error::contract("concat", format!("axis {axis} for rank {}", first.len())));
        }
        let mut total = 0;
        for p in parts {
            let s = &nodes[p.0].shape;
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let n = &nodes[p.0];
                let chunk = n.shape[axis] * inner;
                value.extend_from_slice(&n.value[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        drop(nodes);
        let rg = self.rg(parts);
        Ok(self.push(shape, value, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a);
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::contract(
                "slice",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * shape[axis] + start) * inner;
                out.extend_from_slice(&av[base..base + len * inner]);
            }
            out
        };
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(&[a]);
        Ok(self.push(out_shape, value, Op::Slice(a, axis, start), rg))
    }

    pub fn split(&self, a: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let total = self.shape(a).get(axis).copied().unwrap_or(0);
        if sizes.iter().sum::<usize>() != total {
            return Err(Error::contract("split", format!("{sizes:?} do not sum to {total}")));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&s| {
                let v = self.slice(a, axis, start, s);
                start += s;
                v
            })
            .collect()
    }

    /// Inclusive prefix sum along the last axis.
    pub fn cumsum(&self, a: Var) -> Var {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            let w = *n.shape.last().expect("non-empty shape");
            let mut out = n.value.clone();
            for row in out.chunks_mut(w) {
                let mut s = 0.0;
                for v in row.iter_mut() {
                    s += *v;
                    *v = s;
                }
            }
            (n.shape.clone(), out)
        };
        let rg = self.rg(&[a]);
        self.push(shape, value, Op::Cumsum(a), rg)
    }

    /// Content-aware diagonal state-space recurrence with zero-order-hold
    /// discretization, evaluated in one pass over time:
    ///
    /// `h_t = exp(Δ_t A) h_{t-1} + ((exp(Δ_t A) - 1) / A) B_t x_t`, `y_t = C_t h_t`.
    ///
    /// Shapes: x, delta `[L, C]`; a `[C, N]` (strictly negative); b, c `[L, N]`.
    pub fn selective_scan(&self, x: Var, delta: Var, a: Var, b: Var, c: Var) -> Result<Var> {
        let (sx, sd, sa, sb, sc) = (
            self.shape(x),
            self.shape(delta),
            self.shape(a),
            self.shape(b),
            self.shape(c),
        );
        if sx.len() != 2 || sd != sx || sa.len() != 2 || sa[0] != sx[1] {
            return Err(Error::shape("selective_scan", &sx, &sa));
        }
        let expect_bc = vec![sx[0], sa[1]];
        if sb != expect_bc || sc != expect_bc {
            return Err(Error::shape("selective_scan", &expect_bc, &sb));
        }
        let (len, ch, st) = (sx[0], sx[1], sa[1]);
        let (y, states) = {
            let nodes = self.nodes.borrow();
            if nodes[a.0].value.iter().any(|&v| !(v < 0.0)) {
                return Err(Error::contract("selective_scan", "transition entries must be negative"));
            }
            if nodes[delta.0].value.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::contract("selective_scan", "timescale must be positive"));
            }
            selective_scan_kernel(
                &nodes[x.0].value,
                &nodes[delta.0].value,
                &nodes[a.0].value,
                &nodes[b.0].value,
                &nodes[c.0].value,
                len,
                ch,
                st,
            )
        };
        if let Some(pos) = states.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "selective_scan state at timestep {}",
                pos / (ch * st)
            )));
        }
        let rg = self.rg(&[x, delta, a, b, c]);
        Ok(self.push(
            vec![len, ch],
            y,
            Op::SelectiveScan {
                x,
                delta,
                a,
                b,
                c,
                states,
            },
            rg,
        ))
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.with_data(a, |d| d.iter().sum());
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&self, a: Var) -> Var {
        let s = self.with_data(a, |d| d.iter().sum::<f64>() / d.len() as f64);
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], Op::Mean(a), rg)
    }

    // ---- backward ------------------------------------------------------------

    /// Gradients of the scalar `loss` with respect to every learnable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if numel(&nodes[loss.0].shape) != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", nodes[loss.0].shape),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, node, &g, &mut grads);
        }
        // Keep only learnable leaves.
        for (id, node) in nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                grads[id] = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.shape.clone()).collect(),
        })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
    f(slot);
}

/// Reduces a full-shape gradient onto a broadcast operand of length `nb`.
fn reduce_into(dst: &mut [f64], src: impl Iterator<Item = f64>) {
    let nb = dst.len();
    for (i, v) in src.enumerate() {
        dst[i % nb] += v;
    }
}

fn backprop(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: Var| -> &[f64] { &nodes[v.0].value };
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            accumulate(nodes, grads, *b, |d| reduce_into(d, g.iter().copied()));
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            accumulate(nodes, grads, *b, |d| reduce_into(d, g.iter().map(|g| -g)));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let nb = bv.len();
            accumulate(nodes, grads, *a, |d| {
                for (i, d) in d.iter_mut().enumerate() {
                    *d += g[i] * bv[i % nb];
                }
            });
            accumulate(nodes, grads, *b, |d| {
                reduce_into(d, g.iter().zip(av).map(|(g, a)| g * a))
            });
        }
        Op::Div(a, b) => {
            let bv = val(*b);
            let nb = bv.len();
            let out = &node.value;
            accumulate(nodes, grads, *a, |d| {
                for (i, d) in d.iter_mut().enumerate() {
                    *d += g[i] / bv[i % nb];
                }
            });
            accumulate(nodes, grads, *b, |d| {
                reduce_into(
                    d,
                    g.iter()
                        .zip(out)
                        .enumerate()
                        .map(|(i, (g, y))| -g * y / bv[i % nb]),
                )
            });
        }
        Op::Affine(a, s) => {
            accumulate(nodes, grads, *a, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += s * g));
        }
        Op::Unary(a, kind) => {
            let x = val(*a);
            let y = &node.value;
            accumulate(nodes, grads, *a, |d| {
                for i in 0..d.len() {
                    let local = match kind {
                        Unary::Exp => y[i],
                        Unary::Log => 1.0 / x[i],
                        Unary::Sqrt => {
                            if y[i] == 0.0 {
                                0.0
                            } else {
                                0.5 / y[i]
                            }
                        }
                        Unary::Sigmoid => y[i] * (1.0 - y[i]),
                        Unary::Softplus => sigmoid(x[i]),
                        Unary::Silu => {
                            let s = sigmoid(x[i]);
                            s + x[i] * s * (1.0 - s)
                        }
                        Unary::Tanh => 1.0 - y[i] * y[i],
                        Unary::Sin => x[i].cos(),
                        Unary::Cos => -x[i].sin(),
                        Unary::Abs => {
                            if x[i] > 0.0 {
                                1.0
                            } else if x[i] < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                    };
                    d[i] += g[i] * local;
                }
            });
        }
        Op::Atan2(y, x) => {
            let (yv, xv) = (val(*y), val(*x));
            let denom = |i: usize| xv[i] * xv[i] + yv[i] * yv[i];
            accumulate(nodes, grads, *y, |d| {
                for i in 0..d.len() {
                    let r2 = denom(i);
                    if r2 > 0.0 {
                        d[i] += g[i] * xv[i] / r2;
                    }
                }
            });
            accumulate(nodes, grads, *x, |d| {
                for i in 0..d.len() {
                    let r2 = denom(i);
                    if r2 > 0.0 {
                        d[i] -= g[i] * yv[i] / r2;
                    }
                }
            });
        }
        Op::Minimum(a, b) | Op::Maximum(a, b) => {
            let pick_a = matches!(node.op, Op::Minimum(..));
            let (av, bv) = (val(*a), val(*b));
            // Ties route the gradient to `a`.
            let take_a = |i: usize| if pick_a { av[i] <= bv[i] } else { av[i] >= bv[i] };
            accumulate(nodes, grads, *a, |d| {
                for i in 0..d.len() {
                    if take_a(i) {
                        d[i] += g[i];
                    }
                }
            });
            accumulate(nodes, grads, *b, |d| {
                for i in 0..d.len() {
                    if !take_a(i) {
                        d[i] += g[i];
                    }
                }
            });
        }
        Op::Clamp(a, lo, hi) => {
            let x = val(*a);
            accumulate(nodes, grads, *a, |d| {
                for i in 0..d.len() {
                    if x[i] > *lo && x[i] < *hi {
                        d[i] += g[i];
                    }
                }
            });
        }
        Op::MatMul(a, b, dims) => {
            let MatDims { batch, m, k, n } = *dims;
            let (av, bv) = (val(*a), val(*b));
            accumulate(nodes, grads, *a, |d| {
                for bi in 0..batch {
                    for i in 0..m {
                        let grow = &g[bi * m * n + i * n..bi * m * n + (i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[bi * k * n + p * n..bi * k * n + (p + 1) * n];
                            let s: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            d[bi * m * k + i * k + p] += s;
                        }
                    }
                }
            });
            accumulate(nodes, grads, *b, |d| {
                for bi in 0..batch {
                    for i in 0..m {
                        let grow = &g[bi * m * n + i * n..bi * m * n + (i + 1) * n];
                        for p in 0..k {
                            let aval = av[bi * m * k + i * k + p];
                            if aval == 0.0 {
                                continue;
                            }
                            let drow = &mut d[bi * k * n + p * n..bi * k * n + (p + 1) * n];
                            for (dv, gv) in drow.iter_mut().zip(grow) {
                                *dv += aval * gv;
                            }
                        }
                    }
                }
            });
        }
        Op::Softmax(a) => {
            let y = &node.value;
            let w = *node.shape.last().unwrap();
            accumulate(nodes, grads, *a, |d| {
                for ((drow, yrow), grow) in d.chunks_mut(w).zip(y.chunks(w)).zip(g.chunks(w)) {
                    let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                    for i in 0..w {
                        drow[i] += yrow[i] * (grow[i] - dot);
                    }
                }
            });
        }
        Op::LayerNorm(a, rstd) => {
            let y = &node.value;
            let w = *node.shape.last().unwrap();
            accumulate(nodes, grads, *a, |d| {
                for (r, ((drow, yrow), grow)) in d
                    .chunks_mut(w)
                    .zip(y.chunks(w))
                    .zip(g.chunks(w))
                    .enumerate()
                {
                    let mg = grow.iter().sum::<f64>() / w as f64;
                    let mgy = grow.iter().zip(yrow).map(|(g, y)| g * y).sum::<f64>() / w as f64;
                    for i in 0..w {
                        drow[i] += rstd[r] * (grow[i] - mg - yrow[i] * mgy);
                    }
                }
            });
        }
        Op::DwConv1d(x, w) => {
            let (len, ch) = (node.shape[0], node.shape[1]);
            let k = nodes[w.0].shape[1];
            let pad = k / 2;
            let (xv, wv) = (val(*x), val(*w));
            let taps = |mut f: Box<dyn FnMut(usize, usize, usize) + '_>| {
                for t in 0..len {
                    for j in 0..k {
                        let src = t + j;
                        if src < pad || src - pad >= len {
                            continue;
                        }
                        f(t, j, src - pad);
                    }
                }
            };
            accumulate(nodes, grads, *x, |d| {
                taps(Box::new(|t, j, s| {
                    for c in 0..ch {
                        d[s * ch + c] += g[t * ch + c] * wv[c * k + j];
                    }
                }))
            });
            accumulate(nodes, grads, *w, |d| {
                taps(Box::new(|t, j, s| {
                    for c in 0..ch {
                        d[c * k + j] += g[t * ch + c] * xv[s * ch + c];
                    }
                }))
            });
        }
        Op::Gather(a, index) => {
            accumulate(nodes, grads, *a, |d| {
                for (&i, &gv) in index.iter().zip(g) {
                    if i != PAD {
                        d[i] += gv;
                    }
                }
            });
        }
        Op::ScatterAdd(a, index) => {
            accumulate(nodes, grads, *a, |d| {
                for (dv, &i) in d.iter_mut().zip(index.iter()) {
                    if i != PAD {
                        *dv += g[i];
                    }
                }
            });
        }
        Op::Reshape(a) => {
            accumulate(nodes, grads, *a, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
        }
        Op::Permute(a, axes) => {
            let map = permute_map(&nodes[a.0].shape, axes);
            accumulate(nodes, grads, *a, |d| {
                for (o, &src) in map.iter().enumerate() {
                    d[src] += g[o];
                }
            });
        }
        Op::Concat(parts, axis) => {
            let shape = &node.shape;
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let total = shape[*axis];
            let mut offset = 0;
            for p in parts {
                let w = nodes[p.0].shape[*axis];
                accumulate(nodes, grads, *p, |d| {
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * w * inner;
                        for i in 0..w * inner {
                            d[dst + i] += g[src + i];
                        }
                    }
                });
                offset += w;
            }
        }
        Op::Slice(a, axis, start) => {
            let in_shape = &nodes[a.0].shape;
            let outer: usize = in_shape[..*axis].iter().product();
            let inner: usize = in_shape[axis + 1..].iter().product();
            let len = node.shape[*axis];
            accumulate(nodes, grads, *a, |d| {
                for o in 0..outer {
                    let base = (o * in_shape[*axis] + start) * inner;
                    for i in 0..len * inner {
                        d[base + i] += g[o * len * inner + i];
                    }
                }
            });
        }
        Op::Cumsum(a) => {
            let w = *node.shape.last().unwrap();
            accumulate(nodes, grads, *a, |d| {
                for (drow, grow) in d.chunks_mut(w).zip(g.chunks(w)) {
                    let mut s = 0.0;
                    for i in (0..w).rev() {
                        s += grow[i];
                        drow[i] += s;
                    }
                }
            });
        }
        Op::SelectiveScan {
            x,
            delta,
            a,
            b,
            c,
            states,
        } => {
            let (len, ch) = (node.shape[0], node.shape[1]);
            let st = nodes[a.0].shape[1];
            let (xv, dv, av, bv, cv) = (val(*x), val(*delta), val(*a), val(*b), val(*c));
            let mut gx = vec![0.0; len * ch];
            let mut gd = vec![0.0; len * ch];
            let mut ga = vec![0.0; ch * st];
            let mut gb = vec![0.0; len * st];
            let mut gc = vec![0.0; len * st];
            // Adjoint of h_t carried backwards in time.
            let mut carry = vec![0.0; ch * st];
            for t in (0..len).rev() {
                for c_ in 0..ch {
                    let gy = g[t * ch + c_];
                    let xt = xv[t * ch + c_];
                    let dt = dv[t * ch + c_];
                    for s in 0..st {
                        let hs = t * ch * st + c_ * st + s;
                        let h = states[hs];
                        let h_prev = if t == 0 { 0.0 } else { states[hs - ch * st] };
                        let am = av[c_ * st + s];
                        let bt = bv[t * st + s];
                        gc[t * st + s] += gy * h;
                        let gh = carry[c_ * st + s] + gy * cv[t * st + s];
                        let em1 = (dt * am).exp_m1();
                        let abar = (dt * am).exp();
                        let bcoef = em1 / am;
                        let bbar = bcoef * bt;
                        let g_abar = gh * h_prev;
                        let g_bbar = gh * xt;
                        gx[t * ch + c_] += gh * bbar;
                        gd[t * ch + c_] += g_abar * am * abar + g_bbar * abar * bt;
                        ga[c_ * st + s] +=
                            g_abar * dt * abar + g_bbar * bt * (dt * abar * am - em1) / (am * am);
                        gb[t * st + s] += g_bbar * bcoef;
                        carry[c_ * st + s] = gh * abar;
                    }
                }
            }
            for (v, gv) in [(*x, gx), (*delta, gd), (*a, ga), (*b, gb), (*c, gc)] {
                accumulate(nodes, grads, v, |d| d.iter_mut().zip(&gv).for_each(|(d, g)| *d += g));
            }
        }
        Op::Sum(a) => {
            accumulate(nodes, grads, *a, |d| d.iter_mut().for_each(|d| *d += g[0]));
        }
        Op::Mean(a) => {
            let n = nodes[a.0].value.len() as f64;
            accumulate(nodes, grads, *a, |d| d.iter_mut().for_each(|d| *d += g[0] / n));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero_is_half() {
        let t = Tape::new();
        let x = t.constant(Tensor::scalar(0.0));
        assert_eq!(t.item(t.sigmoid(x)), 0.5);
    }

    #[test]
    fn softmax_of_equal_entries_is_uniform() {
        let t = Tape::new();
        let x = t.constant(Tensor::from_vec(vec![0.0, 0.0]));
        assert_eq!(t.data(t.softmax(x)), vec![0.5, 0.5]);
    }

    #[test]
    fn matmul_shape_rule() {
        let t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[3, 4]));
        assert_eq!(t.shape(t.matmul(a, b).unwrap()), vec![2, 4]);
        assert!(matches!(t.matmul(b, a), Err(Error::Shape { .. })));
    }

    #[test]
    fn square_gradient() {
        let t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let loss = t.mul(x, x).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(x).data(), &[6.0]);
    }

    #[test]
    fn sigmoid_sum_gradient() {
        let t = Tape::new();
        let x = t.param(Tensor::zeros(&[4]));
        let loss = t.sum(t.sigmoid(x));
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(x).data(), &[0.25; 4]);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let t = Tape::new();
        let x = t.param(Tensor::scalar(2.0));
        let y = t.param(Tensor::from_vec(vec![1.0, 2.0]));
        let loss = t.mul(x, x).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let t = Tape::new();
        let x = t.param(Tensor::zeros(&[2]));
        assert!(matches!(t.backward(x), Err(Error::Contract { .. })));
    }

    #[test]
    fn clamp_rejects_inverted_bounds() {
        let t = Tape::new();
        let x = t.param(Tensor::zeros(&[2]));
        assert!(t.clamp(x, 1.0, 0.0).is_err());
    }

    #[test]
    fn broadcast_shape_mismatch_is_reported() {
        let t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2]));
        assert!(matches!(t.add(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn permute_round_trip() {
        let t = Tape::new();
        let data: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let a = t.constant(Tensor::new(vec![2, 3, 4], data.clone()).unwrap());
        let p = t.permute(a, &[2, 0, 1]).unwrap();
        assert_eq!(t.shape(p), vec![4, 2, 3]);
        let back = t.permute(p, &[1, 2, 0]).unwrap();
        assert_eq!(t.data(back), data);
    }

    #[test]
    fn concat_then_split_recovers_parts() {
        let t = Tape::new();
        let a = t.constant(Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap());
        let b = t.constant(Tensor::new(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.data(c), vec![1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let parts = t.split(c, 1, &[1, 2]).unwrap();
        assert_eq!(t.data(parts[0]), vec![1.0, 2.0]);
        assert_eq!(t.data(parts[1]), vec![3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn gather_pad_reads_zero() {
        let t = Tape::new();
        let a = t.param(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let g = t.gather(a, Rc::new(vec![2, PAD, 0, 2]), &[4]).unwrap();
        assert_eq!(t.data(g), vec![3.0, 0.0, 1.0, 3.0]);
        let grads = t.backward(t.sum(g)).unwrap();
        assert_eq!(grads.get(a).data(), &[1.0, 0.0, 2.0]);
    }

    #[test]
    fn scan_rejects_nonpositive_timescale() {
        let t = Tape::new();
        let x = t.constant(Tensor::zeros(&[2, 1]));
        let d = t.constant(Tensor::zeros(&[2, 1]));
        let a = t.constant(Tensor::full(&[1, 1], -1.0));
        let b = t.constant(Tensor::zeros(&[2, 1]));
        assert!(t.selective_scan(x, d, a, b, b).is_err());
    }
}
