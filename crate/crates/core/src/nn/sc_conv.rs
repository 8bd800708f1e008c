//! Self-calibrated convolution: a pooled branch gates the full-resolution response.

use rand::Rng;

use super::{Conv, Ctx};
use crate::error::{Error, Result};
use crate::tensor::{Element, ParamId, ParamStore, Var};

#[derive(Clone, Debug)]
pub struct SelfCalibConv {
    pub channels: usize,
    pub rate: usize,
    pub split1: Conv,
    pub split2: Conv,
    pub k1: Conv,
    pub k2: Conv,
    pub k3: Conv,
    pub k4: Conv,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct SelfCalibTrace {
    pub x1: Var,
    pub x2: Var,
    pub t1: Var,
    pub x1_up: Var,
    pub gate: Var,
    pub y1: Var,
    pub y2: Var,
    pub out: Var,
}

impl SelfCalibConv {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        rate: usize,
    ) -> Result<Self> {
        if !channels.is_multiple_of(2) || channels == 0 {
            return Err(Error::InvalidArgument(format!("self-calibrated conv needs an even channel count, got {channels}")));
        }
        if rate == 0 {
            return Err(Error::InvalidArgument("pooling rate must be positive".into()));
        }
        let half = channels / 2;
        let mut conv = |part: &str, c_in, k| Conv::new(store, rng, &format!("{name}.{part}"), c_in, half, k, 1, true);
        Ok(SelfCalibConv {
            channels,
            rate,
            split1: conv("split1", channels, 1)?,
            split2: conv("split2", channels, 1)?,
            k1: conv("k1", half, 3)?,
            k2: conv("k2", half, 3)?,
            k3: conv("k3", half, 3)?,
            k4: conv("k4", half, 3)?,
        })
    }

    pub fn trace<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<SelfCalibTrace> {
        let s = ctx.graph.shape(x);
        if s.c != self.channels {
            return Err(Error::shape(
                "sc_conv",
                format!("input {s} has {} channels, module expects {}", s.c, self.channels),
            ));
        }
        if !s.h.is_multiple_of(self.rate) || !s.w.is_multiple_of(self.rate) {
            return Err(Error::shape(
                "sc_conv",
                format!("spatial size {}×{} must be divisible by pooling rate {}", s.h, s.w, self.rate),
            ));
        }
        let x1 = self.split1.forward(ctx, x)?;
        let x2 = self.split2.forward(ctx, x)?;
        let t1 = ctx.graph.avg_pool(x1, self.rate)?;
        let low = self.k2.forward(ctx, t1)?;
        let x1_up = ctx.graph.upsample_bilinear(low, s.h, s.w)?;
        let pre_gate = ctx.graph.add(x1, x1_up)?;
        let gate = ctx.graph.sigmoid(pre_gate);
        let f3 = self.k3.forward(ctx, x1)?;
        let y1p = ctx.graph.mul(f3, gate)?;
        let y1 = self.k4.forward(ctx, y1p)?;
        let y2 = self.k1.forward(ctx, x2)?;
        let out = ctx.graph.concat_channels(&[y1, y2])?;
        Ok(SelfCalibTrace { x1, x2, t1, x1_up, gate, y1, y2, out })
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        Ok(self.trace(ctx, x)?.out)
    }

    /// Parameters feeding output channels `0..C/2`.
    pub fn calibrated_params(&self) -> Vec<ParamId> {
        [&self.split1, &self.k2, &self.k3, &self.k4].iter().flat_map(|c| c.params()).collect()
    }

    /// Parameters feeding output channels `C/2..C`.
    pub fn plain_params(&self) -> Vec<ParamId> {
        [&self.split2, &self.k1].iter().flat_map(|c| c.params()).collect()
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = self.calibrated_params();
        v.extend(self.plain_params());
        v
    }
}
