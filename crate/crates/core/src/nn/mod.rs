//! Network building blocks: convolution and normalisation layers, the three
//! feature modules, the joint unit and the dense-connected network.

mod attention;
mod joint_unit;
mod network;
mod scale_agg;
mod sc_conv;

pub use attention::{AttentionConfig, AttentionNormalize, SelfAttention};
pub use joint_unit::{Ablation, JointUnit, Stage};
pub use network::{JdNet, NetConfig, NetOutput};
pub use scale_agg::ScaleAgg;
pub use sc_conv::SelfCalibConv;

use rand::Rng;

use crate::error::Result;
use crate::tensor::kernels::conv::ConvGeometry;
use crate::tensor::kernels::norm::RunningStats;
use crate::tensor::{Element, Graph, ParamId, ParamStore, Var};

/// Negative slope of every LeakyReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Everything a module forward pass touches.
pub struct Ctx<'a, T: Element> {
    pub graph: &'a mut Graph<T>,
    pub store: &'a mut ParamStore<T>,
    pub training: bool,
}

impl<'a, T: Element> Ctx<'a, T> {
    pub fn new(graph: &'a mut Graph<T>, store: &'a mut ParamStore<T>, training: bool) -> Self {
        Ctx { graph, store, training }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.graph.param(self.store, id)
    }

    pub fn leaky(&mut self, x: Var) -> Var {
        self.graph.leaky_relu(x, LEAKY_SLOPE)
    }
}

/// Uniform values in `±1/sqrt(fan_in)`, drawn in f64 so both precisions initialise identically.
pub(crate) fn uniform_init<T: Element, R: Rng>(rng: &mut R, len: usize, fan_in: usize) -> Vec<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..len).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect()
}

/// A 2-D convolution layer whose weights live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeometry,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl Conv {
    /// Square `kernel×kernel` convolution with "same" padding at the given stride.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = c_in * kernel * kernel;
        let w = uniform_init(rng, c_out * fan_in, fan_in);
        let weight = store.add(format!("{name}.weight"), &[c_out, c_in, kernel, kernel], w, true)?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), &[c_out], vec![T::zero(); c_out], true)?)
        } else {
            None
        };
        let geom = ConvGeometry::new(stride, (kernel - 1) / 2);
        Ok(Conv { weight, bias, geom, c_in, c_out, kernel })
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        ctx.graph.conv2d(x, w, b, self.geom)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Batch normalisation with learnable scale/shift and running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            scale: store.add(format!("{name}.scale"), &[channels], vec![T::one(); channels], true)?,
            shift: store.add(format!("{name}.shift"), &[channels], vec![T::zero(); channels], true)?,
            running_mean: store.add(format!("{name}.running_mean"), &[channels], vec![T::zero(); channels], false)?,
            running_var: store.add(format!("{name}.running_var"), &[channels], vec![T::one(); channels], false)?,
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
        })
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let scale = ctx.param(self.scale);
        let shift = ctx.param(self.shift);
        let (mean, var) = ctx.store.pair_mut(self.running_mean, self.running_var);
        let running = RunningStats { mean: mean.data_mut(), var: var.data_mut(), momentum: self.momentum };
        ctx.graph.batch_norm(x, scale, shift, running, self.eps, ctx.training)
    }
}
