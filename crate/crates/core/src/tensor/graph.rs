//! Reverse-mode gradient tape.
//!
//! Every operation appends one node holding its output value and a record of
//! its inputs. [`Graph::backward`] walks the nodes once, in reverse order of
//! execution, and returns gradients for every leaf that requires them.

use crate::error::{Error, Result};
use crate::tensor::kernels::attention::{self, Footprint, GammaWeights};
use crate::tensor::kernels::conv::{self, ConvGeometry, ConvNeeds};
use crate::tensor::kernels::norm::{self, BatchNormSaved, RunningStats};
use crate::tensor::kernels::ssim::{self, SsimConfig};
use crate::tensor::kernels::{activation, pool, shape_ops, upsample};
use crate::tensor::{ensure_same_shape, Element, ParamId, ParamStore, Shape, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Every kind of node the tape can record. All but `Leaf` are differentiable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    AvgPool,
    UpsampleBilinear,
    LeakyRelu,
    Sigmoid,
    BatchNorm,
    ConcatChannels,
    SliceChannels,
    Add,
    Sub,
    Hadamard,
    Scale,
    Reshape,
    SoftmaxOverPositions,
    PairwiseLogits,
    FootprintAggregate,
    Sum,
    Mean,
    Square,
    Abs,
    Ssim,
}

impl OpKind {
    pub const DIFFERENTIABLE: [OpKind; 21] = [
        OpKind::Conv2d,
        OpKind::AvgPool,
        OpKind::UpsampleBilinear,
        OpKind::LeakyRelu,
        OpKind::Sigmoid,
        OpKind::BatchNorm,
        OpKind::ConcatChannels,
        OpKind::SliceChannels,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Hadamard,
        OpKind::Scale,
        OpKind::Reshape,
        OpKind::SoftmaxOverPositions,
        OpKind::PairwiseLogits,
        OpKind::FootprintAggregate,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Square,
        OpKind::Abs,
        OpKind::Ssim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv2d => "conv2d",
            OpKind::AvgPool => "avg_pool",
            OpKind::UpsampleBilinear => "upsample_bilinear",
            OpKind::LeakyRelu => "leaky_relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::BatchNorm => "batch_norm",
            OpKind::ConcatChannels => "concat_channels",
            OpKind::SliceChannels => "slice_channels",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Hadamard => "hadamard",
            OpKind::Scale => "scale",
            OpKind::Reshape => "reshape",
            OpKind::SoftmaxOverPositions => "softmax_over_positions",
            OpKind::PairwiseLogits => "pairwise_logits",
            OpKind::FootprintAggregate => "footprint_aggregate",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Square => "square",
            OpKind::Abs => "abs",
            OpKind::Ssim => "ssim",
        }
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf { param: Option<ParamId> },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeometry },
    AvgPool { x: Var, r: usize },
    Upsample { x: Var },
    LeakyRelu { x: Var, slope: T },
    Sigmoid { x: Var },
    BatchNorm { x: Var, scale: Var, shift: Var, saved: BatchNormSaved<T> },
    Concat { xs: Vec<Var> },
    Slice { x: Var, start: usize, end: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    Reshape { x: Var },
    Softmax { x: Var, groups: usize, mask: Option<Footprint> },
    PairwiseLogits { phi: Var, psi: Var, w1: Var, b1: Var, w2: Var, b2: Option<Var>, slope: T, k: usize },
    FootprintAggregate { weights: Var, values: Var, k: usize, share: usize },
    Sum { x: Var },
    Mean { x: Var },
    Square { x: Var },
    Abs { x: Var },
    Ssim { a: Var, b: Var, cfg: SsimConfig },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf { .. } => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::AvgPool { .. } => OpKind::AvgPool,
            Op::Upsample { .. } => OpKind::UpsampleBilinear,
            Op::LeakyRelu { .. } => OpKind::LeakyRelu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::Concat { .. } => OpKind::ConcatChannels,
            Op::Slice { .. } => OpKind::SliceChannels,
            Op::Add { .. } => OpKind::Add,
            Op::Sub { .. } => OpKind::Sub,
            Op::Mul { .. } => OpKind::Hadamard,
            Op::Scale { .. } => OpKind::Scale,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Softmax { .. } => OpKind::SoftmaxOverPositions,
            Op::PairwiseLogits { .. } => OpKind::PairwiseLogits,
            Op::FootprintAggregate { .. } => OpKind::FootprintAggregate,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mean { .. } => OpKind::Mean,
            Op::Square { .. } => OpKind::Square,
            Op::Abs { .. } => OpKind::Abs,
            Op::Ssim { .. } => OpKind::Ssim,
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Option<Tensor<T>>,
    shape: Shape,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradient of one leaf after [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct LeafGrad<T> {
    pub var: Var,
    pub param: Option<ParamId>,
    pub grad: Vec<T>,
}

#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    leaves: Vec<LeafGrad<T>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of a leaf variable; `None` if it did not require gradients or was unreachable.
    pub fn wrt(&self, var: Var) -> Option<&[T]> {
        self.leaves.iter().find(|l| l.var == var).map(|l| l.grad.as_slice())
    }

    pub fn leaves(&self) -> &[LeafGrad<T>] {
        &self.leaves
    }

    /// Accumulates parameter gradients into the store's per-tensor `grad` slots.
    pub fn apply_to(&self, store: &mut ParamStore<T>) {
        for leaf in &self.leaves {
            if let Some(id) = leaf.param {
                store.get_mut(id).accumulate_grad(&leaf.grad);
            }
        }
    }
}

/// Recording tape of tensor operations.
#[derive(Debug)]
pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
    recording: bool,
    kinks: Option<u64>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), recording: true, kinks: None }
    }

    /// A tape that never tracks gradients; intermediate values may be released with [`Graph::discard`].
    pub fn inference() -> Self {
        Graph { nodes: Vec::new(), recording: false, kinks: None }
    }

    /// Records which side of zero every input of a non-smooth operator (LeakyReLU,
    /// abs, γ's hidden activation) falls on, summarised by [`Graph::kink_signature`].
    pub fn with_kink_tracking(mut self) -> Self {
        self.kinks = Some(0xcbf2_9ce4_8422_2325);
        self
    }

    /// Hash of the sign pattern at every kink seen so far; equal signatures mean the
    /// same linear piece of every piecewise-linear operator was used.
    pub fn kink_signature(&self) -> Option<u64> {
        self.kinks
    }

    fn track_signs(&mut self, values: impl Iterator<Item = bool>) {
        if let Some(h) = &mut self.kinks {
            for neg in values {
                *h = (*h ^ neg as u64).wrapping_mul(0x100_0000_01b3);
            }
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.nodes[v.0]
            .value
            .as_ref()
            .expect("value was discarded from an inference tape")
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Releases a stored value on an inference tape; no-op while recording.
    pub fn discard(&mut self, v: Var) {
        if !self.recording {
            self.nodes[v.0].value = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = self.recording && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_with(value, op, requires_grad)
    }

    fn push_with(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let shape = value.shape();
        self.nodes.push(Node { value: Some(value), shape, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant or input tensor; it requires gradients if the tensor says so.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let rg = self.recording && t.requires_grad();
        self.leaf(t, rg)
    }

    pub fn leaf(&mut self, mut t: Tensor<T>, requires_grad: bool) -> Var {
        t.zero_grad();
        self.push_with(t, Op::Leaf { param: None }, requires_grad && self.recording)
    }

    /// Records a copy of a stored parameter. Trainable entries require gradients.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let e = store.entry(id);
        let mut t = e.tensor.clone();
        t.zero_grad();
        let rg = self.recording && e.trainable;
        self.push_with(t, Op::Leaf { param: Some(id) }, rg)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeometry) -> Result<Var> {
        let y = conv::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(y, Op::Conv2d { x, w, b, geom }, &inputs))
    }

    pub fn avg_pool(&mut self, x: Var, r: usize) -> Result<Var> {
        let y = pool::avg_pool(self.value(x), r)?;
        Ok(self.push(y, Op::AvgPool { x, r }, &[x]))
    }

    pub fn upsample_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let y = upsample::upsample_bilinear(self.value(x), out_h, out_w)?;
        Ok(self.push(y, Op::Upsample { x }, &[x]))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let slope = T::from_f64(slope);
        if self.kinks.is_some() {
            let signs: Vec<bool> = self.value(x).data().iter().map(|&v| v < T::zero()).collect();
            self.track_signs(signs.into_iter());
        }
        let y = activation::leaky_relu(self.value(x), slope);
        self.push(y, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = activation::sigmoid(self.value(x));
        self.push(y, Op::Sigmoid { x }, &[x])
    }

    pub fn batch_norm(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        running: RunningStats<'_, T>,
        eps: f64,
        training: bool,
    ) -> Result<Var> {
        let (y, saved) = norm::batch_norm(
            self.value(x),
            self.value(scale).data(),
            self.value(shift).data(),
            running,
            eps,
            training,
        )?;
        Ok(self.push(y, Op::BatchNorm { x, scale, shift, saved }, &[x, scale, shift]))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let y = {
            let ts: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
            shape_ops::concat_channels(&ts)?
        };
        Ok(self.push(y, Op::Concat { xs: xs.to_vec() }, xs))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let y = shape_ops::slice_channels(self.value(x), start, end)?;
        Ok(self.push(y, Op::Slice { x, start, end }, &[x]))
    }

    fn zip_with(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        ensure_same_shape(op, ta.shape(), tb.shape())?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(ta.shape(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(y, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(y, Op::Sub { a, b }, &[a, b]))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip_with("hadamard", a, b, |x, y| x * y)?;
        Ok(self.push(y, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let factor = T::from_f64(factor);
        let y = self.value(x).map(|v| v * factor);
        self.push(y, Op::Scale { x, factor }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Shape) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape { x }, &[x]))
    }

    /// Softmax along the positions axis of a `(N, groups·P, H, W)` map.
    pub fn softmax_over_positions(&mut self, x: Var, groups: usize, mask: Option<Footprint>) -> Result<Var> {
        let y = attention::softmax_over_positions(self.value(x), groups, mask.as_ref())?;
        Ok(self.push(y, Op::Softmax { x, groups, mask }, &[x]))
    }

    fn gamma<'a>(&'a self, w1: Var, b1: Var, w2: Var, b2: Option<Var>, slope: T) -> Result<GammaWeights<'a, T>> {
        let (s1, s2) = (self.shape(w1), self.shape(w2));
        if s1.h != 1 || s1.w != 1 || s2.h != 1 || s2.w != 1 || s2.c != s1.n {
            return Err(Error::ShapeMismatch { op: "pairwise_logits (γ layers)", lhs: s1, rhs: s2 });
        }
        Ok(GammaWeights {
            w1: self.value(w1).data(),
            b1: self.value(b1).data(),
            w2: self.value(w2).data(),
            b2: b2.map(|b| self.value(b).data()),
            hidden: s1.n,
            groups: s2.n,
            slope,
        })
    }

    /// Attention logits `γ(φ(x_i) − ψ(x_j))` over a `k×k` footprint, where γ is
    /// 1×1 conv `w1,b1` → LeakyReLU(`slope`) → 1×1 conv `w2,b2`.
    #[allow(clippy::too_many_arguments)]
    pub fn pairwise_logits(
        &mut self,
        phi: Var,
        psi: Var,
        w1: Var,
        b1: Var,
        w2: Var,
        b2: Option<Var>,
        slope: f64,
        k: usize,
    ) -> Result<Var> {
        let slope = T::from_f64(slope);
        let (y, signs) = {
            let g = self.gamma(w1, b1, w2, b2, slope)?;
            let signs = match self.kinks {
                Some(_) => attention::pairwise_hidden_signs(self.value(phi), self.value(psi), &g, k)?,
                None => Vec::new(),
            };
            (attention::pairwise_logits(self.value(phi), self.value(psi), &g, k)?, signs)
        };
        self.track_signs(signs.into_iter());
        let mut inputs = vec![phi, psi, w1, b1, w2];
        inputs.extend(b2);
        Ok(self.push(y, Op::PairwiseLogits { phi, psi, w1, b1, w2, b2, slope, k }, &inputs))
    }

    pub fn footprint_aggregate(&mut self, weights: Var, values: Var, k: usize, share: usize) -> Result<Var> {
        let y = attention::footprint_aggregate(self.value(weights), self.value(values), k, share)?;
        Ok(self.push(y, Op::FootprintAggregate { weights, values, k, share }, &[weights, values]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<T>() / T::from_f64(t.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean { x }, &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v * v);
        self.push(y, Op::Square { x }, &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        if self.kinks.is_some() {
            let signs: Vec<bool> = self.value(x).data().iter().map(|&v| v < T::zero()).collect();
            self.track_signs(signs.into_iter());
        }
        let y = self.value(x).map(|v| v.abs());
        self.push(y, Op::Abs { x }, &[x])
    }

    /// Mean SSIM between two image batches as a scalar node.
    pub fn ssim(&mut self, a: Var, b: Var, cfg: SsimConfig) -> Result<Var> {
        let v = ssim::ssim(self.value(a), self.value(b), &cfg)?;
        Ok(self.push(Tensor::scalar(T::from_f64(v)), Op::Ssim { a, b, cfg }, &[a, b]))
    }

    /// Back-propagates from a scalar node, then clears the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if !self.recording {
            return Err(Error::InvalidArgument("backward on an inference tape".into()));
        }
        if self.nodes.is_empty() {
            return Err(Error::InvalidArgument("backward on an empty tape".into()));
        }
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {ls}")));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaves = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf { param } = self.nodes[i].op {
                leaves.push(LeafGrad { var: Var(i), param, grad: g });
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
        }
        leaves.reverse();
        self.nodes.clear();
        Ok(Gradients { leaves })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Conv2d { x, w, b, geom } => {
                let needs = ConvNeeds {
                    input: self.needs(*x),
                    weight: self.needs(*w),
                    bias: b.is_some_and(|b| self.needs(b)),
                };
                let cg = conv::conv2d_backward(self.value(*x), self.value(*w), *geom, g, needs)?;
                if let Some(dx) = cg.input {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = cg.weight {
                    self.accumulate(grads, *w, dw);
                }
                if let (Some(b), Some(db)) = (b, cg.bias) {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::AvgPool { x, r } => {
                let dx = pool::avg_pool_backward(self.shape(*x), *r, g)?;
                self.accumulate(grads, *x, dx);
            }
            Op::Upsample { x } => {
                let dx = upsample::upsample_bilinear_backward(self.shape(*x), node.shape.h, node.shape.w, g)?;
                self.accumulate(grads, *x, dx);
            }
            Op::LeakyRelu { x, slope } => {
                let dx = activation::leaky_relu_backward(self.value(*x).data(), *slope, g);
                self.accumulate(grads, *x, dx);
            }
            Op::Sigmoid { x } => {
                let y = node.value.as_ref().expect("recorded value");
                self.accumulate(grads, *x, activation::sigmoid_backward(y.data(), g));
            }
            Op::BatchNorm { x, scale, shift, saved } => {
                let (dx, ds, db) = norm::batch_norm_backward(self.shape(*x), self.value(*scale).data(), saved, g);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *scale, ds);
                self.accumulate(grads, *shift, db);
            }
            Op::Concat { xs } => {
                let shapes: Vec<Shape> = xs.iter().map(|&v| self.shape(v)).collect();
                for (v, part) in xs.iter().zip(shape_ops::concat_backward(&shapes, g)) {
                    self.accumulate(grads, *v, part);
                }
            }
            Op::Slice { x, start, end } => {
                let dx = shape_ops::slice_channels_backward(self.shape(*x), *start, *end, g);
                self.accumulate(grads, *x, dx);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.iter().zip(vb).map(|(&g, &y)| g * y).collect());
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.iter().zip(va).map(|(&g, &x)| g * x).collect());
                }
            }
            Op::Scale { x, factor } => {
                self.accumulate(grads, *x, g.iter().map(|&v| v * *factor).collect());
            }
            Op::Reshape { x } => self.accumulate(grads, *x, g.to_vec()),
            Op::Softmax { x: input, groups, mask } => {
                let y = node.value.as_ref().expect("recorded value");
                let dx = attention::softmax_over_positions_backward(y, *groups, mask.as_ref(), g)?;
                self.accumulate(grads, *input, dx);
            }
            Op::PairwiseLogits { phi, psi, w1, b1, w2, b2, slope, k } => {
                let gamma = self.gamma(*w1, *b1, *w2, *b2, *slope)?;
                let pg = attention::pairwise_logits_backward(self.value(*phi), self.value(*psi), &gamma, *k, g)?;
                self.accumulate(grads, *phi, pg.phi);
                self.accumulate(grads, *psi, pg.psi);
                self.accumulate(grads, *w1, pg.w1);
                self.accumulate(grads, *b1, pg.b1);
                self.accumulate(grads, *w2, pg.w2);
                if let Some(b2) = b2 {
                    self.accumulate(grads, *b2, pg.b2);
                }
            }
            Op::FootprintAggregate { weights, values, k, share } => {
                let (dw, dv) = attention::footprint_aggregate_backward(
                    self.value(*weights),
                    self.value(*values),
                    *k,
                    *share,
                    g,
                )?;
                self.accumulate(grads, *weights, dw);
                self.accumulate(grads, *values, dv);
            }
            Op::Sum { x } => {
                self.accumulate(grads, *x, vec![g[0]; self.shape(*x).numel()]);
            }
            Op::Mean { x } => {
                let n = self.shape(*x).numel();
                self.accumulate(grads, *x, vec![g[0] / T::from_f64(n as f64); n]);
            }
            Op::Square { x } => {
                let two = T::from_f64(2.0);
                let dx = self.value(*x).data().iter().zip(g).map(|(&v, &g)| two * v * g).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Abs { x } => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &g)| if v > T::zero() { g } else if v < T::zero() { -g } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Ssim { a, b, cfg } => {
                let (da, db) = ssim::ssim_backward(self.value(*a), self.value(*b), cfg, g[0].as_f64())?;
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, f: impl Fn(usize) -> f64) -> Tensor<f64> {
        Tensor::new(shape, (0..shape.numel()).map(f).collect()).unwrap()
    }

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(Shape::new(1, 2, 3, 3), |i| i as f64).with_requires_grad());
        let loss = g.sum(x);
        let grads = g.backward(loss).unwrap();
        assert!(grads.wrt(x).unwrap().iter().all(|&v| v == 1.0));
        assert!(g.is_empty(), "tape is cleared after backward");
    }

    #[test]
    fn independent_parameter_gets_no_gradient() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("p", &[3], vec![1.0, 2.0, 3.0], true).unwrap();
        let q = store.add("q", &[3], vec![1.0, 2.0, 3.0], true).unwrap();
        let mut g = Graph::new();
        let _pv = g.param(&store, p);
        let qv = g.param(&store, q);
        let loss = g.sum(qv);
        let grads = g.backward(loss).unwrap();
        grads.apply_to(&mut store);
        assert!(store.get(p).grad().is_none_or(|g| g.iter().all(|&v| v == 0.0)));
        assert_eq!(store.get(q).grad().unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(Shape::new(1, 1, 2, 2), |i| i as f64).with_requires_grad());
        let y = g.square(x);
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn empty_tape_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::scalar(1.0));
        g.clear();
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn shared_input_accumulates() {
        // loss = sum(x ⊙ x + x) → grad 2x + 1
        let mut g = Graph::<f64>::new();
        let x = g.input(t(Shape::new(1, 1, 1, 4), |i| i as f64 - 1.5).with_requires_grad());
        let xx = g.mul(x, x).unwrap();
        let y = g.add(xx, x).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[-2.0, 0.0, 2.0, 4.0]);
    }

    #[test]
    fn inference_tape_tracks_nothing() {
        let mut g = Graph::<f32>::inference();
        let x = g.input(Tensor::ones(Shape::new(1, 1, 2, 2)).with_requires_grad());
        let y = g.square(x);
        assert!(!g.requires_grad(y));
        let s = g.sum(y);
        g.discard(y);
        assert_eq!(g.value(s).item(), 4.0);
        assert!(g.backward(s).is_err());
    }

    #[test]
    fn elementwise_identities() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(Shape::new(1, 2, 2, 2), |i| (i as f64).sin()));
        let ones = g.input(Tensor::ones(Shape::new(1, 2, 2, 2)));
        let p = g.mul(a, ones).unwrap();
        assert_eq!(g.value(p), g.value(a));
        let z = g.sub(a, a).unwrap();
        assert!(g.value(z).data().iter().all(|&v| v == 0.0));
        let bad = g.input(Tensor::ones(Shape::new(1, 2, 2, 1)));
        assert!(g.add(a, bad).is_err());
    }
}
