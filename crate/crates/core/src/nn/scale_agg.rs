//! Multi-scale aggregation: a stride-2 pyramid of residual blocks fused back at full resolution.

use rand::Rng;

use super::{Conv, Ctx};
use crate::error::{Error, Result};
use crate::tensor::{Element, ParamId, ParamStore, Var};

#[derive(Clone, Debug)]
pub struct ScaleAgg {
    pub channels: usize,
    pub scales: usize,
    pub down: Vec<Conv>,
    /// Two 3×3 convolutions per scale.
    pub res: Vec<(Conv, Conv)>,
    pub fuse: Conv,
}

impl ScaleAgg {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        scales: usize,
    ) -> Result<Self> {
        if scales == 0 {
            return Err(Error::InvalidArgument("scale aggregation needs at least one scale".into()));
        }
        let mut down = Vec::with_capacity(scales);
        let mut res = Vec::with_capacity(scales);
        for i in 0..scales {
            down.push(Conv::new(store, rng, &format!("{name}.down.{i}"), channels, channels, 3, 2, true)?);
            let a = Conv::new(store, rng, &format!("{name}.res.{i}.0"), channels, channels, 3, 1, true)?;
            let b = Conv::new(store, rng, &format!("{name}.res.{i}.1"), channels, channels, 3, 1, true)?;
            res.push((a, b));
        }
        let fuse = Conv::new(store, rng, &format!("{name}.fuse"), (scales + 1) * channels, channels, 1, 1, true)?;
        Ok(ScaleAgg { channels, scales, down, res, fuse })
    }

    pub fn divisor(&self) -> usize {
        1 << self.scales
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let s = ctx.graph.shape(x);
        let d = self.divisor();
        if !s.h.is_multiple_of(d) || !s.w.is_multiple_of(d) {
            return Err(Error::shape(
                "scale_agg",
                format!("spatial size {}×{} must be divisible by 2^{} = {d}", s.h, s.w, self.scales),
            ));
        }
        let mut branches = vec![x];
        let mut cur = x;
        for (down, (ra, rb)) in self.down.iter().zip(&self.res) {
            let z = down.forward(ctx, cur)?;
            let z = ctx.leaky(z);
            let h = ra.forward(ctx, z)?;
            let h = ctx.leaky(h);
            let h = rb.forward(ctx, h)?;
            cur = ctx.graph.add(h, z)?;
            let up = ctx.graph.upsample_bilinear(cur, s.h, s.w)?;
            branches.push(up);
        }
        let cat = ctx.graph.concat_channels(&branches)?;
        self.fuse.forward(ctx, cat)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = Vec::new();
        for (d, (a, b)) in self.down.iter().zip(&self.res) {
            v.extend(d.params());
            v.extend(a.params());
            v.extend(b.params());
        }
        v.extend(self.fuse.params());
        v
    }
}
