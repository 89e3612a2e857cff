//! Reverse-mode autodiff over a linear tape.
//!
//! Every operation appends a node holding its output value and enough saved
//! state to propagate gradients back to its inputs. `Tape::backward` walks
//! the nodes in reverse order once.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::error::{mismatch, NnError, Result};
use crate::float::{gemm, Float};
use crate::param::ParamId;
use crate::tensor::Tensor;

enum Op<T> {
    Leaf {
        param: Option<ParamId>,
    },
    Add(usize, usize),
    /// `y` has the shape of the trailing dims of `x`.
    AddBroadcast(usize, usize),
    Mul(usize, usize),
    MulConst(usize, Tensor<T>),
    Scale(usize, T),
    Relu(usize),
    Gelu(usize),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    MatMul(usize, usize),
    Bmm {
        a: usize,
        b: usize,
        trans_b: bool,
    },
    SoftmaxLast(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        geom: ConvGeom,
    },
    MaxPool {
        x: usize,
        argmax: Vec<usize>,
    },
    PrependToken {
        x: usize,
        token: usize,
    },
    SelectToken {
        x: usize,
        index: usize,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
    L1 {
        pred: usize,
        target: Vec<T>,
    },
    Sum(usize),
    Mean(usize),
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    in_ch: usize,
    out_ch: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    fn im2col<T: Float>(&self, x: &[T], col: &mut [T]) {
        let cols = self.col_cols();
        for c in 0..self.in_ch {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for oh in 0..self.oh {
                        let src = &x[(c * self.h + oh * self.sh + i) * self.w..];
                        for ow in 0..self.ow {
                            dst[oh * self.ow + ow] = src[ow * self.sw + j];
                        }
                    }
                }
            }
        }
    }

    fn col2im_add<T: Float>(&self, col: &[T], dx: &mut [T]) {
        let cols = self.col_cols();
        for c in 0..self.in_ch {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let src = &col[row * cols..(row + 1) * cols];
                    for oh in 0..self.oh {
                        let base = (c * self.h + oh * self.sh + i) * self.w;
                        for ow in 0..self.ow {
                            dx[base + ow * self.sw + j] += src[oh * self.ow + ow];
                        }
                    }
                }
            }
        }
    }
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
}

/// Records operations for one forward pass.
pub struct Tape<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Float> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Float> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a constant input.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_unchecked(value, Op::Leaf { param: None })
    }

    /// Records a parameter leaf whose gradient is reported under `id`.
    pub fn param(&self, id: ParamId, value: Tensor<T>) -> Var<'_, T> {
        self.push_unchecked(value, Op::Leaf { param: Some(id) })
    }

    fn push_unchecked(&self, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var<'_, T>> {
        if !value.all_finite() {
            return Err(NnError::NonFinite { op: name });
        }
        Ok(self.push_unchecked(value, op))
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    /// Propagates d(loss)/d(node) for every recorded node reachable from `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes.iter().all(|n| matches!(n.op, Op::Leaf { .. })) {
            return Err(NnError::BackwardBeforeForward);
        }
        let loss_value = &nodes[loss.id].value;
        if loss_value.len() != 1 {
            return Err(NnError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(loss_value.shape(), T::one()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if let Op::Leaf { .. } = node.op {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, node, &g, &mut grads);
        }

        let mut params = Vec::new();
        let mut leaves = Vec::new();
        for (id, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            if let Op::Leaf { param } = nodes[id].op {
                match param {
                    Some(p) => params.push((p, g)),
                    None => leaves.push((id, g)),
                }
            }
        }
        Ok(Gradients { params, leaves })
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    params: Vec<(ParamId, Tensor<T>)>,
    leaves: Vec<(usize, Tensor<T>)>,
}

impl<T: Float> Gradients<T> {
    /// Gradient with respect to a constant leaf.
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.leaves
            .iter()
            .find(|(id, _)| *id == var.id)
            .map(|(_, g)| g)
            .or_else(|| {
                let nodes = var.tape.nodes.borrow();
                match nodes[var.id].op {
                    Op::Leaf { param: Some(p) } => {
                        self.params.iter().find(|(q, _)| *q == p).map(|(_, g)| g)
                    }
                    _ => None,
                }
            })
    }

    /// Per-parameter gradients; a parameter used twice appears twice.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(p, g)| (*p, g))
    }
}

fn accumulate<T: Float>(grads: &mut [Option<Tensor<T>>], id: usize, g: Tensor<T>) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn backprop<T: Float>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let val = |id: usize| -> &Tensor<T> { &nodes[id].value };
    match &node.op {
        Op::Leaf { .. } => {}
        Op::Add(a, b) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, g.clone());
        }
        Op::AddBroadcast(x, y) => {
            accumulate(grads, *x, g.clone());
            let ys = val(*y);
            let n = ys.len();
            let mut gy = vec![T::zero(); n];
            for chunk in g.data().chunks_exact(n) {
                for (acc, &v) in gy.iter_mut().zip(chunk) {
                    *acc += v;
                }
            }
            accumulate(grads, *y, Tensor::new(ys.shape(), gy).unwrap());
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            accumulate(grads, *a, g.zip_map(vb, |g, b| g * b));
            accumulate(grads, *b, g.zip_map(va, |g, a| g * a));
        }
        Op::MulConst(x, mask) => accumulate(grads, *x, g.zip_map(mask, |g, m| g * m)),
        Op::Scale(x, s) => {
            let s = *s;
            accumulate(grads, *x, g.map(|v| v * s));
        }
        Op::Relu(x) => {
            let gx = g.zip_map(val(*x), |g, x| if x > T::zero() { g } else { T::zero() });
            accumulate(grads, *x, gx);
        }
        Op::Gelu(x) => {
            let gx = g.zip_map(val(*x), |g, x| g * gelu_grad(x));
            accumulate(grads, *x, gx);
        }
        Op::Reshape(x) => {
            let gx = g.clone().reshaped(val(*x).shape()).unwrap();
            accumulate(grads, *x, gx);
        }
        Op::Permute(x, axes) => {
            let mut inv = vec![0; axes.len()];
            for (i, &a) in axes.iter().enumerate() {
                inv[a] = i;
            }
            accumulate(grads, *x, permute(g, &inv));
        }
        Op::MatMul(x, w) => {
            let (vx, vw) = (val(*x), val(*w));
            let (k, n) = (vw.shape()[0], vw.shape()[1]);
            let m = vx.len() / k;
            let mut gx = vec![T::zero(); m * k];
            gemm(false, true, m, k, n, g.data(), vw.data(), T::zero(), &mut gx);
            let mut gw = vec![T::zero(); k * n];
            gemm(true, false, k, n, m, vx.data(), g.data(), T::zero(), &mut gw);
            accumulate(grads, *x, Tensor::new(vx.shape(), gx).unwrap());
            accumulate(grads, *w, Tensor::new(vw.shape(), gw).unwrap());
        }
        Op::Bmm { a, b, trans_b } => {
            let (va, vb) = (val(*a), val(*b));
            let (groups, m, k) = (va.shape()[0], va.shape()[1], va.shape()[2]);
            let n = g.shape()[2];
            let mut ga = vec![T::zero(); va.len()];
            let mut gb = vec![T::zero(); vb.len()];
            for i in 0..groups {
                let sa = &va.data()[i * m * k..(i + 1) * m * k];
                let sb = &vb.data()[i * k * n..(i + 1) * k * n];
                let sg = &g.data()[i * m * n..(i + 1) * m * n];
                let da = &mut ga[i * m * k..(i + 1) * m * k];
                let db = &mut gb[i * k * n..(i + 1) * k * n];
                if *trans_b {
                    gemm(false, false, m, k, n, sg, sb, T::zero(), da);
                    gemm(true, false, n, k, m, sg, sa, T::zero(), db);
                } else {
                    gemm(false, true, m, k, n, sg, sb, T::zero(), da);
                    gemm(true, false, k, n, m, sa, sg, T::zero(), db);
                }
            }
            accumulate(grads, *a, Tensor::new(va.shape(), ga).unwrap());
            accumulate(grads, *b, Tensor::new(vb.shape(), gb).unwrap());
        }
        Op::SoftmaxLast(x) => {
            let y = &node.value;
            let d = *y.shape().last().unwrap();
            let mut gx = vec![T::zero(); y.len()];
            for ((gr, yr), out) in g
                .data()
                .chunks_exact(d)
                .zip(y.data().chunks_exact(d))
                .zip(gx.chunks_exact_mut(d))
            {
                let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for ((o, &gv), &yv) in out.iter_mut().zip(gr).zip(yr) {
                    *o = yv * (gv - dot);
                }
            }
            accumulate(grads, *x, Tensor::new(y.shape(), gx).unwrap());
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let vg = val(*gamma);
            let d = vg.len();
            let dn = T::from_usize(d).unwrap();
            let mut gx = vec![T::zero(); xhat.len()];
            let mut ggamma = vec![T::zero(); d];
            let mut gbeta = vec![T::zero(); d];
            for (r, ((gr, xr), out)) in g
                .data()
                .chunks_exact(d)
                .zip(xhat.data().chunks_exact(d))
                .zip(gx.chunks_exact_mut(d))
                .enumerate()
            {
                let mut sum_dxhat = T::zero();
                let mut sum_dxhat_xhat = T::zero();
                for j in 0..d {
                    ggamma[j] += gr[j] * xr[j];
                    gbeta[j] += gr[j];
                    let dxh = gr[j] * vg.data()[j];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * xr[j];
                }
                let s = inv_std[r] / dn;
                for j in 0..d {
                    let dxh = gr[j] * vg.data()[j];
                    out[j] = s * (dn * dxh - sum_dxhat - xr[j] * sum_dxhat_xhat);
                }
            }
            accumulate(grads, *x, Tensor::new(xhat.shape(), gx).unwrap());
            accumulate(grads, *gamma, Tensor::new(vg.shape(), ggamma).unwrap());
            accumulate(grads, *beta, Tensor::new(vg.shape(), gbeta).unwrap());
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats,
        } => {
            let vg = val(*gamma);
            let shape = xhat.shape();
            let (b, c) = (shape[0], shape[1]);
            let s: usize = shape[2..].iter().product();
            let count = T::from_usize(b * s).unwrap();
            let mut ggamma = vec![T::zero(); c];
            let mut gbeta = vec![T::zero(); c];
            for bi in 0..b {
                for ci in 0..c {
                    let off = (bi * c + ci) * s;
                    for k in 0..s {
                        ggamma[ci] += g.data()[off + k] * xhat.data()[off + k];
                        gbeta[ci] += g.data()[off + k];
                    }
                }
            }
            let mut gx = vec![T::zero(); xhat.len()];
            for bi in 0..b {
                for ci in 0..c {
                    let off = (bi * c + ci) * s;
                    let gm = vg.data()[ci];
                    let is = inv_std[ci];
                    for k in 0..s {
                        let dy = g.data()[off + k];
                        gx[off + k] = if *batch_stats {
                            // sum(dxhat) = gamma*gbeta, sum(dxhat*xhat) = gamma*ggamma
                            gm * is / count
                                * (count * dy - gbeta[ci] - xhat.data()[off + k] * ggamma[ci])
                        } else {
                            gm * is * dy
                        };
                    }
                }
            }
            accumulate(grads, *x, Tensor::new(shape, gx).unwrap());
            accumulate(grads, *gamma, Tensor::new(vg.shape(), ggamma).unwrap());
            accumulate(grads, *beta, Tensor::new(vg.shape(), gbeta).unwrap());
        }
        Op::Conv2d { x, w, b, geom } => {
            let (vx, vw) = (val(*x), val(*w));
            let (rows, cols) = (geom.col_rows(), geom.col_cols());
            let in_sz = geom.in_ch * geom.h * geom.w;
            let out_sz = geom.out_ch * cols;
            let mut col = vec![T::zero(); rows * cols];
            let mut dcol = vec![T::zero(); rows * cols];
            let mut gx = vec![T::zero(); vx.len()];
            let mut gw = vec![T::zero(); vw.len()];
            let mut gb = vec![T::zero(); geom.out_ch];
            for bi in 0..geom.batch {
                let gy = &g.data()[bi * out_sz..(bi + 1) * out_sz];
                geom.im2col(&vx.data()[bi * in_sz..(bi + 1) * in_sz], &mut col);
                gemm(false, true, geom.out_ch, rows, cols, gy, &col, T::one(), &mut gw);
                gemm(true, false, rows, cols, geom.out_ch, vw.data(), gy, T::zero(), &mut dcol);
                geom.col2im_add(&dcol, &mut gx[bi * in_sz..(bi + 1) * in_sz]);
                for (o, acc) in gb.iter_mut().enumerate() {
                    *acc += gy[o * cols..(o + 1) * cols].iter().copied().sum();
                }
            }
            accumulate(grads, *x, Tensor::new(vx.shape(), gx).unwrap());
            accumulate(grads, *w, Tensor::new(vw.shape(), gw).unwrap());
            accumulate(grads, *b, Tensor::new(&[geom.out_ch], gb).unwrap());
        }
        Op::MaxPool { x, argmax } => {
            let vx = val(*x);
            let mut gx = vec![T::zero(); vx.len()];
            for (&src, &gv) in argmax.iter().zip(g.data()) {
                gx[src] += gv;
            }
            accumulate(grads, *x, Tensor::new(vx.shape(), gx).unwrap());
        }
        Op::PrependToken { x, token } => {
            let vx = val(*x);
            let (b, t, d) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
            let mut gx = Vec::with_capacity(vx.len());
            let mut gt = vec![T::zero(); d];
            for bi in 0..b {
                let base = bi * (t + 1) * d;
                for (acc, &v) in gt.iter_mut().zip(&g.data()[base..base + d]) {
                    *acc += v;
                }
                gx.extend_from_slice(&g.data()[base + d..base + (t + 1) * d]);
            }
            accumulate(grads, *x, Tensor::new(vx.shape(), gx).unwrap());
            accumulate(grads, *token, Tensor::new(val(*token).shape(), gt).unwrap());
        }
        Op::SelectToken { x, index } => {
            let vx = val(*x);
            let (b, t, d) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
            let mut gx = vec![T::zero(); vx.len()];
            for bi in 0..b {
                let dst = (bi * t + index) * d;
                gx[dst..dst + d].copy_from_slice(&g.data()[bi * d..(bi + 1) * d]);
            }
            accumulate(grads, *x, Tensor::new(vx.shape(), gx).unwrap());
        }
        Op::CrossEntropy {
            logits,
            labels,
            probs,
        } => {
            let c = probs.shape()[1];
            let scale = g.item() / T::from_usize(labels.len()).unwrap();
            let mut gx = probs.data().to_vec();
            for (i, &l) in labels.iter().enumerate() {
                gx[i * c + l] -= T::one();
            }
            for v in gx.iter_mut() {
                *v *= scale;
            }
            accumulate(grads, *logits, Tensor::new(probs.shape(), gx).unwrap());
        }
        Op::L1 { pred, target } => {
            let vp = val(*pred);
            let scale = g.item() / T::from_usize(target.len()).unwrap();
            let gx: Vec<T> = vp
                .data()
                .iter()
                .zip(target)
                .map(|(&p, &t)| {
                    let d = p - t;
                    if d > T::zero() {
                        scale
                    } else if d < T::zero() {
                        -scale
                    } else {
                        T::zero()
                    }
                })
                .collect();
            accumulate(grads, *pred, Tensor::new(vp.shape(), gx).unwrap());
        }
        Op::Sum(x) => {
            let vx = val(*x);
            accumulate(grads, *x, Tensor::full(vx.shape(), g.item()));
        }
        Op::Mean(x) => {
            let vx = val(*x);
            let s = g.item() / T::from_usize(vx.len()).unwrap();
            accumulate(grads, *x, Tensor::full(vx.shape(), s));
        }
    }
}

fn gelu_grad<T: Float>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let cdf = half * (T::one() + (x * T::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::from_f64_lossy(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

fn gelu<T: Float>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (x * T::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn permute<T: Float>(x: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let shape = x.shape();
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; rank];
    let src = x.data();
    // Innermost axis copied in a tight loop.
    let inner = *out_shape.last().unwrap_or(&1);
    let inner_stride = *strides.last().unwrap_or(&1);
    let outer: usize = out_shape[..rank.saturating_sub(1)].iter().product();
    for _ in 0..outer {
        let base: usize = idx[..rank - 1]
            .iter()
            .zip(&strides)
            .map(|(&i, &s)| i * s)
            .sum();
        for j in 0..inner {
            out.push(src[base + j * inner_stride]);
        }
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(&out_shape, out).unwrap()
}

/// Batch statistics computed by a train-mode batch-norm pass.
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased variance over batch and spatial positions.
    pub var: Vec<T>,
    pub count: usize,
}

impl<'t, T: Float> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.nodes()[self.id].value.shape().to_vec()
    }

    fn nodes(&self) -> Ref<'t, Vec<Node<T>>> {
        self.tape.nodes.borrow()
    }

    fn same_tape(&self, other: &Self) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    pub fn add(self, other: Self) -> Result<Self> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(mismatch("add", a.shape(), b.shape()));
        }
        let out = a.zip_map(&b, |x, y| x + y);
        self.tape.push("add", out, Op::Add(self.id, other.id))
    }

    /// `self + y` where `y` matches the trailing dimensions of `self`.
    pub fn add_broadcast(self, y: Self) -> Result<Self> {
        self.same_tape(&y);
        let (a, b) = (self.value(), y.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(mismatch("add_broadcast", sa, sb));
        }
        let n = b.len();
        let mut out = a.data().to_vec();
        for chunk in out.chunks_exact_mut(n) {
            for (o, &v) in chunk.iter_mut().zip(b.data()) {
                *o += v;
            }
        }
        let out = Tensor::new(sa, out)?;
        self.tape.push("add_broadcast", out, Op::AddBroadcast(self.id, y.id))
    }

    pub fn mul(self, other: Self) -> Result<Self> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(mismatch("mul", a.shape(), b.shape()));
        }
        let out = a.zip_map(&b, |x, y| x * y);
        self.tape.push("mul", out, Op::Mul(self.id, other.id))
    }

    /// Elementwise product with a constant (no gradient to `mask`).
    pub fn mul_const(self, mask: Tensor<T>) -> Result<Self> {
        let a = self.value();
        if a.shape() != mask.shape() {
            return Err(mismatch("mul_const", a.shape(), mask.shape()));
        }
        let out = a.zip_map(&mask, |x, m| x * m);
        self.tape.push("mul_const", out, Op::MulConst(self.id, mask))
    }

    pub fn scale(self, s: T) -> Result<Self> {
        let out = self.value().map(|v| v * s);
        self.tape.push("scale", out, Op::Scale(self.id, s))
    }

    pub fn relu(self) -> Result<Self> {
        let out = self.value().map(|v| v.max(T::zero()));
        self.tape.push("relu", out, Op::Relu(self.id))
    }

    pub fn gelu(self) -> Result<Self> {
        let out = self.value().map(gelu);
        self.tape.push("gelu", out, Op::Gelu(self.id))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let out = (*self.value()).clone().reshaped(shape)?;
        self.tape.push("reshape", out, Op::Reshape(self.id))
    }

    pub fn permute(self, axes: &[usize]) -> Result<Self> {
        let v = self.value();
        let mut seen = vec![false; axes.len()];
        let valid = axes.len() == v.shape().len()
            && axes.iter().all(|&a| a < axes.len() && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(mismatch("permute", v.shape(), axes));
        }
        let out = permute(&v, axes);
        self.tape.push("permute", out, Op::Permute(self.id, axes.to_vec()))
    }

    /// `[.., K] · [K, N] -> [.., N]`.
    pub fn matmul(self, w: Self) -> Result<Self> {
        self.same_tape(&w);
        let (vx, vw) = (self.value(), w.value());
        let (sx, sw) = (vx.shape(), vw.shape());
        if sw.len() != 2 || sx.is_empty() || *sx.last().unwrap() != sw[0] {
            return Err(mismatch("matmul", sx, sw));
        }
        let (k, n) = (sw[0], sw[1]);
        let m = vx.len() / k;
        let mut out = vec![T::zero(); m * n];
        gemm(false, false, m, n, k, vx.data(), vw.data(), T::zero(), &mut out);
        let mut shape = sx.to_vec();
        *shape.last_mut().unwrap() = n;
        let out = Tensor::new(&shape, out)?;
        self.tape.push("matmul", out, Op::MatMul(self.id, w.id))
    }

    /// Batched matmul: `[G, M, K] · [G, K, N]`, or `[G, M, K] · [G, N, K]ᵀ`
    /// when `trans_b`.
    pub fn bmm(self, b: Self, trans_b: bool) -> Result<Self> {
        self.same_tape(&b);
        let (va, vb) = (self.value(), b.value());
        let (sa, sb) = (va.shape(), vb.shape());
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if trans_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
        if !ok {
            return Err(mismatch("bmm", sa, sb));
        }
        let (groups, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let mut out = vec![T::zero(); groups * m * n];
        for i in 0..groups {
            gemm(
                false,
                trans_b,
                m,
                n,
                k,
                &va.data()[i * m * k..(i + 1) * m * k],
                &vb.data()[i * k * n..(i + 1) * k * n],
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let out = Tensor::new(&[groups, m, n], out)?;
        self.tape.push(
            "bmm",
            out,
            Op::Bmm {
                a: self.id,
                b: b.id,
                trans_b,
            },
        )
    }

    pub fn softmax_last(self) -> Result<Self> {
        let v = self.value();
        let out = softmax_rows(&v);
        self.tape.push("softmax", out, Op::SoftmaxLast(self.id))
    }

    /// Layer normalisation over the last axis.
    pub fn layer_norm(self, gamma: Self, beta: Self, eps: T) -> Result<Self> {
        let (vx, vg, vb) = (self.value(), gamma.value(), beta.value());
        let d = *vx.shape().last().unwrap_or(&0);
        if vg.shape() != [d] || vb.shape() != [d] {
            return Err(mismatch("layer_norm", vx.shape(), vg.shape()));
        }
        let rows = vx.len() / d;
        let dn = T::from_usize(d).unwrap();
        let mut xhat = vec![T::zero(); vx.len()];
        let mut out = vec![T::zero(); vx.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let x = &vx.data()[r * d..(r + 1) * d];
            let mean = x.iter().copied().sum::<T>() / dn;
            let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..d {
                let h = (x[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * vg.data()[j] + vb.data()[j];
            }
        }
        let out = Tensor::new(vx.shape(), out)?;
        let xhat = Tensor::new(vx.shape(), xhat)?;
        self.tape.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
            },
        )
    }

    /// Batch normalisation over axis 1 of a `[B, C, ...]` input.
    ///
    /// With `running = None` the batch statistics are used and returned;
    /// otherwise the given `(mean, var)` are applied as constants.
    pub fn batch_norm(
        self,
        gamma: Self,
        beta: Self,
        running: Option<(&[T], &[T])>,
        eps: T,
    ) -> Result<(Self, Option<BatchStats<T>>)> {
        let (vx, vg, vb) = (self.value(), gamma.value(), beta.value());
        let shape = vx.shape();
        if shape.len() < 2 || vg.shape() != [shape[1]] || vb.shape() != [shape[1]] {
            return Err(mismatch("batch_norm", shape, vg.shape()));
        }
        let (b, c) = (shape[0], shape[1]);
        let s: usize = shape[2..].iter().product();
        let count = b * s;
        let (mean, var, stats) = match running {
            Some((m, v)) => {
                if m.len() != c || v.len() != c {
                    return Err(mismatch("batch_norm", shape, &[m.len()]));
                }
                (m.to_vec(), v.to_vec(), false)
            }
            None => {
                let n = T::from_usize(count).unwrap();
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for bi in 0..b {
                    for ci in 0..c {
                        let off = (bi * c + ci) * s;
                        mean[ci] += vx.data()[off..off + s].iter().copied().sum::<T>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                for bi in 0..b {
                    for ci in 0..c {
                        let off = (bi * c + ci) * s;
                        let m = mean[ci];
                        var[ci] += vx.data()[off..off + s]
                            .iter()
                            .map(|&v| (v - m) * (v - m))
                            .sum::<T>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= n);
                (mean, var, true)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); vx.len()];
        let mut out = vec![T::zero(); vx.len()];
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * s;
                for k in off..off + s {
                    let h = (vx.data()[k] - mean[ci]) * inv_std[ci];
                    xhat[k] = h;
                    out[k] = h * vg.data()[ci] + vb.data()[ci];
                }
            }
        }
        let out = Tensor::new(shape, out)?;
        let xhat = Tensor::new(shape, xhat)?;
        let var_out = self.tape.push(
            "batch_norm",
            out,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
                batch_stats: stats,
            },
        )?;
        let batch = stats.then_some(BatchStats { mean, var, count });
        Ok((var_out, batch))
    }

    /// 2-D convolution without padding: `[B, Cin, H, W]` with weights
    /// `[Cout, Cin, KH, KW]` and bias `[Cout]`.
    pub fn conv2d(self, w: Self, b: Self, stride: (usize, usize)) -> Result<Self> {
        let (vx, vw, vb) = (self.value(), w.value(), b.value());
        let (sx, sw) = (vx.shape(), vw.shape());
        if sx.len() != 4
            || sw.len() != 4
            || sx[1] != sw[1]
            || vb.shape() != [sw[0]]
            || sx[2] < sw[2]
            || sx[3] < sw[3]
            || stride.0 == 0
            || stride.1 == 0
        {
            return Err(mismatch("conv2d", sx, sw));
        }
        let geom = ConvGeom {
            batch: sx[0],
            in_ch: sx[1],
            out_ch: sw[0],
            h: sx[2],
            w: sx[3],
            kh: sw[2],
            kw: sw[3],
            sh: stride.0,
            sw: stride.1,
            oh: (sx[2] - sw[2]) / stride.0 + 1,
            ow: (sx[3] - sw[3]) / stride.1 + 1,
        };
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let in_sz = geom.in_ch * geom.h * geom.w;
        let out_sz = geom.out_ch * cols;
        let mut col = vec![T::zero(); rows * cols];
        let mut out = vec![T::zero(); geom.batch * out_sz];
        for bi in 0..geom.batch {
            geom.im2col(&vx.data()[bi * in_sz..(bi + 1) * in_sz], &mut col);
            let y = &mut out[bi * out_sz..(bi + 1) * out_sz];
            for (o, &bias) in vb.data().iter().enumerate() {
                y[o * cols..(o + 1) * cols].fill(bias);
            }
            gemm(false, false, geom.out_ch, cols, rows, vw.data(), &col, T::one(), y);
        }
        let out = Tensor::new(&[geom.batch, geom.out_ch, geom.oh, geom.ow], out)?;
        self.tape.push(
            "conv2d",
            out,
            Op::Conv2d {
                x: self.id,
                w: w.id,
                b: b.id,
                geom,
            },
        )
    }

    /// 1-D convolution without padding: `[B, Cin, L]` with weights
    /// `[Cout, Cin, K]`.
    pub fn conv1d(self, w: Self, b: Self, stride: usize) -> Result<Self> {
        let (sx, sw) = (self.shape(), w.shape());
        if sx.len() != 3 || sw.len() != 3 {
            return Err(mismatch("conv1d", &sx, &sw));
        }
        let x4 = self.reshape(&[sx[0], sx[1], 1, sx[2]])?;
        let w4 = w.reshape(&[sw[0], sw[1], 1, sw[2]])?;
        let y = x4.conv2d(w4, b, (1, stride))?;
        let sy = y.shape();
        y.reshape(&[sy[0], sy[1], sy[3]])
    }

    /// Non-overlapping max pooling over the last two axes of `[B, C, H, W]`.
    pub fn max_pool2d(self, kernel: (usize, usize)) -> Result<Self> {
        let v = self.value();
        let s = v.shape();
        if s.len() != 4 || kernel.0 == 0 || kernel.1 == 0 || s[2] < kernel.0 || s[3] < kernel.1 {
            return Err(mismatch("max_pool2d", s, &[kernel.0, kernel.1]));
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (h / kernel.0, w / kernel.1);
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = p * h * w + (i * kernel.0) * w + j * kernel.1;
                    for di in 0..kernel.0 {
                        for dj in 0..kernel.1 {
                            let idx = p * h * w + (i * kernel.0 + di) * w + j * kernel.1 + dj;
                            if v.data()[idx] > v.data()[best] {
                                best = idx;
                            }
                        }
                    }
                    argmax.push(best);
                    out.push(v.data()[best]);
                }
            }
        }
        let out = Tensor::new(&[s[0], s[1], oh, ow], out)?;
        self.tape.push("max_pool2d", out, Op::MaxPool { x: self.id, argmax })
    }

    /// Non-overlapping max pooling over the last axis of `[B, C, L]`.
    pub fn max_pool1d(self, kernel: usize) -> Result<Self> {
        let s = self.shape();
        if s.len() != 3 {
            return Err(mismatch("max_pool1d", &s, &[kernel]));
        }
        let y = self.reshape(&[s[0], s[1], 1, s[2]])?.max_pool2d((1, kernel))?;
        let sy = y.shape();
        y.reshape(&[sy[0], sy[1], sy[3]])
    }

    /// `[B, T, D]` with token `[D]` → `[B, T+1, D]`, token first.
    pub fn prepend_token(self, token: Self) -> Result<Self> {
        let (vx, vt) = (self.value(), token.value());
        let s = vx.shape();
        if s.len() != 3 || vt.shape() != [s[2]] {
            return Err(mismatch("prepend_token", s, vt.shape()));
        }
        let (b, t, d) = (s[0], s[1], s[2]);
        let mut out = Vec::with_capacity(b * (t + 1) * d);
        for bi in 0..b {
            out.extend_from_slice(vt.data());
            out.extend_from_slice(&vx.data()[bi * t * d..(bi + 1) * t * d]);
        }
        let out = Tensor::new(&[b, t + 1, d], out)?;
        self.tape.push(
            "prepend_token",
            out,
            Op::PrependToken {
                x: self.id,
                token: token.id,
            },
        )
    }

    /// `[B, T, D]` → `[B, D]` at token `index`.
    pub fn select_token(self, index: usize) -> Result<Self> {
        let vx = self.value();
        let s = vx.shape();
        if s.len() != 3 || index >= s[1] {
            return Err(mismatch("select_token", s, &[index]));
        }
        let (b, t, d) = (s[0], s[1], s[2]);
        let mut out = Vec::with_capacity(b * d);
        for bi in 0..b {
            let src = (bi * t + index) * d;
            out.extend_from_slice(&vx.data()[src..src + d]);
        }
        let out = Tensor::new(&[b, d], out)?;
        self.tape.push("select_token", out, Op::SelectToken { x: self.id, index })
    }

    /// Mean categorical cross-entropy of `[B, C]` logits.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Self> {
        let v = self.value();
        let s = v.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(mismatch("cross_entropy", s, &[labels.len()]));
        }
        let c = s[1];
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(NnError::LabelOutOfRange { label, classes: c });
        }
        let probs = softmax_rows(&v);
        let mut total = 0.0f64;
        for (i, &l) in labels.iter().enumerate() {
            let row = v.row(i);
            let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            total += (lse - row[l]).as_f64();
        }
        let out = Tensor::scalar(T::from_f64_lossy(total / labels.len() as f64));
        self.tape.push(
            "cross_entropy",
            out,
            Op::CrossEntropy {
                logits: self.id,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Mean absolute error against a constant target of equal length.
    pub fn l1_loss(self, target: &[T]) -> Result<Self> {
        let v = self.value();
        if v.len() != target.len() || target.is_empty() {
            return Err(mismatch("l1_loss", v.shape(), &[target.len()]));
        }
        let total: f64 = v
            .data()
            .iter()
            .zip(target)
            .map(|(&p, &t)| (p - t).abs().as_f64())
            .sum();
        let out = Tensor::scalar(T::from_f64_lossy(total / target.len() as f64));
        self.tape.push(
            "l1_loss",
            out,
            Op::L1 {
                pred: self.id,
                target: target.to_vec(),
            },
        )
    }

    pub fn sum(self) -> Result<Self> {
        let out = Tensor::scalar(self.value().sum());
        self.tape.push("sum", out, Op::Sum(self.id))
    }

    pub fn mean(self) -> Result<Self> {
        let v = self.value();
        let out = Tensor::scalar(v.sum() / T::from_usize(v.len().max(1)).unwrap());
        self.tape.push("mean", out, Op::Mean(self.id))
    }
}

/// Row-wise softmax over the last axis.
pub fn softmax_rows<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let d = *x.shape().last().unwrap_or(&1);
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(d) {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(x.shape(), out).unwrap()
}
