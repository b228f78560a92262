//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every backward rule is written in terms of other differentiable ops, so
//! a gradient computed with `create_graph = true` is itself a graph node and
//! can be differentiated again. The gradient penalty relies on this: it
//! differentiates the critic's input-gradient norm with respect to the
//! critic's parameters.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::tensor::{ConvGeom, Tensor};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Runs `f` with graph recording switched to `enabled`, restoring the
/// previous setting afterwards.
pub fn with_grad_mode<T>(enabled: bool, f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(enabled)));
    f()
}

pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    with_grad_mode(false, f)
}

trait Backward {
    /// Gradients for each parent given the upstream gradient.
    fn backward(&self, parents: &[Var], out: &Var, grad: &Var) -> Vec<Option<Var>>;
}

struct Node {
    id: usize,
    value: Tensor,
    requires_grad: bool,
    parents: Vec<Var>,
    op: Option<Box<dyn Backward>>,
}

#[derive(Clone)]
pub struct Var(Rc<Node>);

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?}, grad={})", self.0.id, self.0.value, self.0.requires_grad)
    }
}

fn next_id() -> usize {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

impl Var {
    pub fn constant(value: Tensor) -> Self {
        Var(Rc::new(Node { id: next_id(), value, requires_grad: false, parents: vec![], op: None }))
    }

    /// A leaf that gradients are taken with respect to.
    pub fn leaf(value: Tensor) -> Self {
        Var(Rc::new(Node { id: next_id(), value, requires_grad: true, parents: vec![], op: None }))
    }

    pub fn scalar(value: f64) -> Self {
        Self::constant(Tensor::scalar(value))
    }

    fn from_op(value: Tensor, parents: Vec<Var>, op: impl Backward + 'static) -> Self {
        let requires = grad_enabled() && parents.iter().any(|p| p.0.requires_grad);
        if requires {
            Var(Rc::new(Node { id: next_id(), value, requires_grad: true, parents, op: Some(Box::new(op)) }))
        } else {
            Self::constant(value)
        }
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn item(&self) -> f64 {
        self.0.value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    // ---- elementwise binary (broadcasting) ----

    pub fn add(&self, other: &Var) -> Var {
        Var::from_op(self.value().add(other.value()), vec![self.clone(), other.clone()], AddOp)
    }

    pub fn sub(&self, other: &Var) -> Var {
        Var::from_op(self.value().sub(other.value()), vec![self.clone(), other.clone()], SubOp)
    }

    pub fn mul(&self, other: &Var) -> Var {
        Var::from_op(self.value().mul(other.value()), vec![self.clone(), other.clone()], MulOp)
    }

    pub fn div(&self, other: &Var) -> Var {
        Var::from_op(
            self.value().zip_map(other.value(), |a, b| a / b),
            vec![self.clone(), other.clone()],
            DivOp,
        )
    }

    /// Multiplies by a constant tensor (broadcasting).
    pub fn mul_const(&self, c: &Tensor) -> Var {
        self.mul(&Var::constant(c.clone()))
    }

    pub fn add_const(&self, c: &Tensor) -> Var {
        self.add(&Var::constant(c.clone()))
    }

    // ---- elementwise unary ----

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Var {
        Var::from_op(self.value().scale(c), vec![self.clone()], ScaleOp(c))
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        Var::from_op(self.value().map(|x| x + c), vec![self.clone()], AddScalarOp)
    }

    pub fn exp(&self) -> Var {
        Var::from_op(self.value().map(f64::exp), vec![self.clone()], ExpOp)
    }

    pub fn ln(&self) -> Var {
        Var::from_op(self.value().map(f64::ln), vec![self.clone()], LnOp)
    }

    pub fn square(&self) -> Var {
        Var::from_op(self.value().map(|x| x * x), vec![self.clone()], SquareOp)
    }

    /// Square root whose derivative is taken as zero at the origin.
    pub fn sqrt(&self) -> Var {
        Var::from_op(self.value().map(f64::sqrt), vec![self.clone()], SqrtOp)
    }

    /// `1/x`, with `0` where `x == 0` (value and derivative).
    pub fn recip_or_zero(&self) -> Var {
        Var::from_op(
            self.value().map(|x| if x == 0.0 { 0.0 } else { 1.0 / x }),
            vec![self.clone()],
            RecipOp,
        )
    }

    pub fn abs(&self) -> Var {
        Var::from_op(self.value().map(f64::abs), vec![self.clone()], AbsOp)
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        Var::from_op(
            self.value().map(|x| if x > 0.0 { x } else { slope * x }),
            vec![self.clone()],
            LeakyReluOp(slope),
        )
    }

    pub fn sigmoid(&self) -> Var {
        Var::from_op(self.value().map(sigmoid), vec![self.clone()], SigmoidOp)
    }

    pub fn softplus(&self) -> Var {
        Var::from_op(self.value().map(softplus), vec![self.clone()], SoftplusOp)
    }

    pub fn clamp_min(&self, lo: f64) -> Var {
        Var::from_op(self.value().map(|x| x.max(lo)), vec![self.clone()], ClampMinOp(lo))
    }

    // ---- reductions and shape ----

    pub fn sum(&self) -> Var {
        Var::from_op(Tensor::scalar(self.value().sum()), vec![self.clone()], SumOp)
    }

    pub fn mean(&self) -> Var {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn sum_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        Var::from_op(self.value().sum_to(shape), vec![self.clone()], SumToOp)
    }

    /// Sum along `axis`, keeping it with length one.
    pub fn sum_axis(&self, axis: usize) -> Var {
        let mut shape = self.shape().to_vec();
        shape[axis] = 1;
        self.sum_to(&shape)
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        Var::from_op(self.value().broadcast_to(shape), vec![self.clone()], BroadcastOp)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        Var::from_op(self.value().reshape(shape), vec![self.clone()], ReshapeOp)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var {
        let full = self.shape()[axis];
        if start == 0 && len == full {
            return self.clone();
        }
        Var::from_op(self.value().narrow(axis, start, len), vec![self.clone()], NarrowOp { axis, start, full })
    }

    pub fn pad_axis(&self, axis: usize, start: usize, full: usize) -> Var {
        let len = self.shape()[axis];
        if start == 0 && len == full {
            return self.clone();
        }
        Var::from_op(self.value().pad_axis(axis, start, full), vec![self.clone()], PadOp { axis, start, len })
    }

    pub fn concat(parts: &[Var], axis: usize) -> Var {
        if parts.len() == 1 {
            return parts[0].clone();
        }
        let values: Vec<&Tensor> = parts.iter().map(|p| p.value()).collect();
        let sizes = parts.iter().map(|p| p.shape()[axis]).collect();
        Var::from_op(Tensor::concat(&values, axis), parts.to_vec(), ConcatOp { axis, sizes })
    }

    pub fn transpose2d(&self) -> Var {
        Var::from_op(self.value().transpose2d(), vec![self.clone()], TransposeOp)
    }

    /// `self [M,K]` applied to every batch item of `x [B,K,L]`.
    pub fn matmul_left(&self, x: &Var) -> Var {
        Var::from_op(Tensor::matmul_left(self.value(), x.value()), vec![self.clone(), x.clone()], MatmulLeftOp)
    }

    /// `sum_b self[b] · other[b]ᵀ`.
    pub fn outer_sum(&self, other: &Var) -> Var {
        Var::from_op(Tensor::outer_sum(self.value(), other.value()), vec![self.clone(), other.clone()], OuterSumOp)
    }

    pub fn im2col(&self, geom: ConvGeom) -> Var {
        Var::from_op(self.value().im2col(&geom), vec![self.clone()], Im2ColOp(geom))
    }

    pub fn col2im(&self, geom: ConvGeom) -> Var {
        Var::from_op(self.value().col2im(&geom), vec![self.clone()], Col2ImOp(geom))
    }

    /// Per-plane linear map `rows · x · colsᵀ` with constant matrices.
    pub fn separable_map(&self, map: &SeparableMap) -> Var {
        Var::from_op(
            self.value().separable_map(&map.rows, &map.cols),
            vec![self.clone()],
            SeparableOp(map.transposed()),
        )
    }

    /// Softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Var {
        let m = Var::constant(self.value().max_axis_keepdim(axis));
        let e = self.sub(&m).exp();
        e.div(&e.sum_axis(axis))
    }
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
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// A pair of constant matrices acting on the rows and columns of image
/// planes. Resizing, pooling, finite-difference stencils and sliding window
/// filters are all expressed this way.
#[derive(Clone, Debug)]
pub struct SeparableMap {
    pub rows: Rc<Tensor>,
    pub cols: Rc<Tensor>,
    rows_t: Rc<Tensor>,
    cols_t: Rc<Tensor>,
}

impl SeparableMap {
    pub fn new(rows: Tensor, cols: Tensor) -> Self {
        let rows_t = Rc::new(rows.transpose2d());
        let cols_t = Rc::new(cols.transpose2d());
        Self { rows: Rc::new(rows), cols: Rc::new(cols), rows_t, cols_t }
    }

    pub fn transposed(&self) -> Self {
        Self {
            rows: self.rows_t.clone(),
            cols: self.cols_t.clone(),
            rows_t: self.rows.clone(),
            cols_t: self.cols.clone(),
        }
    }

    pub fn out_size(&self) -> (usize, usize) {
        (self.rows.shape()[0], self.cols.shape()[0])
    }

    pub fn in_size(&self) -> (usize, usize) {
        (self.rows.shape()[1], self.cols.shape()[1])
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        x.separable_map(&self.rows, &self.cols)
    }
}

fn needs(parents: &[Var], i: usize) -> bool {
    parents[i].requires_grad()
}

struct AddOp;
impl Backward for AddOp {
    fn backward(&self, p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![
            needs(p, 0).then(|| g.sum_to(p[0].shape())),
            needs(p, 1).then(|| g.sum_to(p[1].shape())),
        ]
    }
}

struct SubOp;
impl Backward for SubOp {
    fn backward(&self, p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![
            needs(p, 0).then(|| g.sum_to(p[0].shape())),
            needs(p, 1).then(|| g.neg().sum_to(p[1].shape())),
        ]
    }
}

struct MulOp;
impl Backward for MulOp {
    fn backward(&self, p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![
            needs(p, 0).then(|| g.mul(&p[1]).sum_to(p[0].shape())),
            needs(p, 1).then(|| g.mul(&p[0]).sum_to(p[1].shape())),
        ]
    }
}

struct DivOp;
impl Backward for DivOp {
    fn backward(&self, p: &[Var], out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![
            needs(p, 0).then(|| g.div(&p[1]).sum_to(p[0].shape())),
            needs(p, 1).then(|| g.mul(out).div(&p[1]).neg().sum_to(p[1].shape())),
        ]
    }
}

struct ScaleOp(f64);
impl Backward for ScaleOp {
    fn backward(&self, _p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![Some(g.scale(self.0))]
    }
}

struct AddScalarOp;
impl Backward for AddScalarOp {
    fn backward(&self, _p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![Some(g.clone())]
    }
}

struct ExpOp;
impl Backward for ExpOp {
    fn backward(&self, _p: &[Var], out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![Some(g.mul(out))]
    }
}

struct LnOp;
impl Backward for LnOp {
    fn backward(&self, p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![Some(g.div(&p[0]))]
    }
}

struct SquareOp;
impl Backward for SquareOp {
    fn backward(&self, p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![Some(g.mul(&p[0]).scale(2.0))]
    }
}

struct SqrtOp;
impl Backward for SqrtOp {
    fn backward(&self, _p: &[Var], out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![Some(g.mul(&out.recip_or_zero()).scale(0.5))]
    }
}

struct RecipOp;
impl Backward for RecipOp {
    fn backward(&self, _p: &[Var], out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![Some(g.mul(&out.square()).neg())]
    }
}

struct AbsOp;
impl Backward for AbsOp {
    fn backward(&self, p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        let sign = p[0].value().map(|x| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 });
        vec![Some(g.mul_const(&sign))]
    }
}

struct LeakyReluOp(f64);
impl Backward for LeakyReluOp {
    fn backward(&self, p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        let slope = self.0;
        let mask = p[0].value().map(|x| if x > 0.0 { 1.0 } else { slope });
        vec![Some(g.mul_const(&mask))]
    }
}

struct SigmoidOp;
impl Backward for SigmoidOp {
    fn backward(&self, _p: &[Var], out: &Var, g: &Var) -> Vec<Option<Var>> {
        let slope = out.mul(&out.neg().add_scalar(1.0));
        vec![Some(g.mul(&slope))]
    }
}

struct SoftplusOp;
impl Backward for SoftplusOp {
    fn backward(&self, p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![Some(g.mul(&p[0].sigmoid()))]
    }
}

struct ClampMinOp(f64);
impl Backward for ClampMinOp {
    fn backward(&self, p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        let lo = self.0;
        let mask = p[0].value().map(|x| if x > lo { 1.0 } else { 0.0 });
        vec![Some(g.mul_const(&mask))]
    }
}

struct SumOp;
impl Backward for SumOp {
    fn backward(&self, p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![Some(g.reshape(&vec![1; p[0].shape().len()]).broadcast_to(p[0].shape()))]
    }
}

struct SumToOp;
impl Backward for SumToOp {
    fn backward(&self, p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![Some(g.broadcast_to(p[0].shape()))]
    }
}

struct BroadcastOp;
impl Backward for BroadcastOp {
    fn backward(&self, p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![Some(g.sum_to(p[0].shape()))]
    }
}

struct ReshapeOp;
impl Backward for ReshapeOp {
    fn backward(&self, p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![Some(g.reshape(p[0].shape()))]
    }
}

struct NarrowOp {
    axis: usize,
    start: usize,
    full: usize,
}
impl Backward for NarrowOp {
    fn backward(&self, _p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![Some(g.pad_axis(self.axis, self.start, self.full))]
    }
}

struct PadOp {
    axis: usize,
    start: usize,
    len: usize,
}
impl Backward for PadOp {
    fn backward(&self, _p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![Some(g.narrow(self.axis, self.start, self.len))]
    }
}

struct ConcatOp {
    axis: usize,
    sizes: Vec<usize>,
}
impl Backward for ConcatOp {
    fn backward(&self, p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        let mut offset = 0;
        self.sizes
            .iter()
            .enumerate()
            .map(|(i, &len)| {
                let part = needs(p, i).then(|| g.narrow(self.axis, offset, len));
                offset += len;
                part
            })
            .collect()
    }
}

struct TransposeOp;
impl Backward for TransposeOp {
    fn backward(&self, _p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![Some(g.transpose2d())]
    }
}

struct MatmulLeftOp;
impl Backward for MatmulLeftOp {
    fn backward(&self, p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![
            needs(p, 0).then(|| g.outer_sum(&p[1])),
            needs(p, 1).then(|| p[0].transpose2d().matmul_left(g)),
        ]
    }
}

struct OuterSumOp;
impl Backward for OuterSumOp {
    fn backward(&self, p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![
            needs(p, 0).then(|| g.matmul_left(&p[1])),
            needs(p, 1).then(|| g.transpose2d().matmul_left(&p[0])),
        ]
    }
}

struct Im2ColOp(ConvGeom);
impl Backward for Im2ColOp {
    fn backward(&self, _p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![Some(g.col2im(self.0))]
    }
}

struct Col2ImOp(ConvGeom);
impl Backward for Col2ImOp {
    fn backward(&self, _p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![Some(g.im2col(self.0))]
    }
}

struct SeparableOp(SeparableMap);
impl Backward for SeparableOp {
    fn backward(&self, _p: &[Var], _out: &Var, g: &Var) -> Vec<Option<Var>> {
        vec![Some(g.separable_map(&self.0))]
    }
}

/// Gradients of the scalar `output` with respect to each of `wrt`.
///
/// `None` means `output` does not depend on that input. With
/// `create_graph` the returned gradients are graph nodes that can be
/// differentiated again.
pub fn grad(output: &Var, wrt: &[Var], create_graph: bool) -> Vec<Option<Var>> {
    assert_eq!(output.value().numel(), 1, "grad() needs a scalar output, got {:?}", output.shape());
    if !output.requires_grad() {
        return vec![None; wrt.len()];
    }
    let order = topo_order(output);
    let keep: HashSet<usize> = wrt.iter().map(Var::id).collect();
    with_grad_mode(create_graph, || {
        let mut grads: HashMap<usize, Var> = HashMap::new();
        grads.insert(output.id(), Var::constant(Tensor::ones(output.shape())));
        for node in order.iter().rev() {
            let Some(op) = &node.0.op else { continue };
            let g = if keep.contains(&node.id()) {
                grads.get(&node.id()).cloned()
            } else {
                grads.remove(&node.id())
            };
            let Some(g) = g else { continue };
            let parent_grads = op.backward(&node.0.parents, node, &g);
            for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                let merged = match grads.remove(&parent.id()) {
                    Some(existing) => existing.add(&pg),
                    None => pg,
                };
                grads.insert(parent.id(), merged);
            }
        }
        wrt.iter().map(|w| grads.get(&w.id()).cloned()).collect()
    })
}

/// Gradients as plain tensors, zero-filled where `output` is independent
/// of an input.
pub fn grad_values(output: &Var, wrt: &[Var]) -> Vec<Tensor> {
    grad(output, wrt, false)
        .into_iter()
        .zip(wrt)
        .map(|(g, w)| match g {
            Some(g) => g.value().clone(),
            None => Tensor::zeros(w.shape()),
        })
        .collect()
}

fn topo_order(root: &Var) -> Vec<Var> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    let mut stack: Vec<(Var, bool)> = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !seen.insert(node.id()) {
            continue;
        }
        stack.push((node.clone(), true));
        for p in &node.0.parents {
            if p.requires_grad() && !seen.contains(&p.id()) {
                stack.push((p.clone(), false));
            }
        }
    }
    order
}
