//! The full network: head conv, dense-connected joint units and a rain-streak tail.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Ablation, AttentionConfig, Conv, Ctx, JointUnit, Stage};
use crate::error::{Error, Result};
use crate::tensor::{Element, ParamStore, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub units: usize,
    pub channels: usize,
    /// Number of stride-2 levels in scale aggregation.
    pub scales: usize,
    /// Average-pooling rate in self-calibrated convolution.
    pub pool_rate: usize,
    pub attention: AttentionConfig,
    pub ablation: Ablation,
    pub order: Vec<Stage>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            units: 32,
            channels: 32,
            scales: 4,
            pool_rate: 4,
            attention: AttentionConfig::default(),
            ablation: Ablation::R3,
            order: Stage::DEFAULT_ORDER.to_vec(),
        }
    }
}

impl NetConfig {
    pub fn tiny() -> Self {
        NetConfig { units: 3, channels: 8, scales: 2, pool_rate: 2, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.units == 0 {
            return bad("at least one joint unit is required".into());
        }
        if self.channels == 0 {
            return bad("channel width must be positive".into());
        }
        let mut seen = self.order.clone();
        seen.sort_by_key(|s| *s as u8);
        seen.dedup();
        if seen.len() != self.order.len() || self.order.len() != 3 {
            return bad(format!("stage order {:?} must list each stage exactly once", self.order));
        }
        Ok(())
    }

    /// Input height and width must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        let pyramid = 1usize << self.scales;
        if self.ablation.includes(Stage::ScConv) {
            lcm(pyramid, self.pool_rate)
        } else {
            pyramid
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

pub(crate) fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

#[derive(Clone, Copy, Debug)]
pub struct NetOutput {
    /// Derained estimate `o − r_hat` (unclamped).
    pub b_hat: Var,
    /// Predicted rain-streak layer.
    pub r_hat: Var,
}

#[derive(Clone, Debug)]
pub struct JdNet {
    pub cfg: NetConfig,
    pub head: Conv,
    pub units: Vec<JointUnit>,
    pub tail: Conv,
}

impl JdNet {
    pub fn new<T: Element, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let head = Conv::new(store, rng, "head", 3, c, 3, 1, true)?;
        let mut units = Vec::with_capacity(cfg.units);
        for k in 0..cfg.units {
            let unit = JointUnit::new(
                store,
                rng,
                &format!("units.{k}"),
                (k + 1) * c,
                c,
                cfg.scales,
                cfg.pool_rate,
                cfg.attention,
                cfg.ablation,
                &cfg.order,
            )?;
            assert_eq!(unit.in_width(), k * c + c, "dense compress width of unit {k}");
            units.push(unit);
        }
        let tail = Conv::new(store, rng, "tail", c, 3, 3, 1, true)?;
        Ok(JdNet { cfg, head, units, tail })
    }

    /// Builds a network with parameters in a fresh store.
    pub fn build<T: Element, R: Rng>(rng: &mut R, cfg: NetConfig) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let net = Self::new(&mut store, rng, cfg)?;
        Ok((net, store))
    }

    pub fn check_input(&self, shape: crate::tensor::Shape) -> Result<()> {
        let m = self.cfg.size_multiple();
        if shape.c != 3 {
            return Err(Error::shape("jdnet", format!("input {shape} must have 3 channels")));
        }
        if !shape.h.is_multiple_of(m) || !shape.w.is_multiple_of(m) || shape.h == 0 || shape.w == 0 {
            return Err(Error::shape(
                "jdnet",
                format!("input size {}×{} must be a positive multiple of {m}", shape.h, shape.w),
            ));
        }
        Ok(())
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, o: Var) -> Result<NetOutput> {
        self.forward_with(ctx, o, self.cfg.ablation)
    }

    /// Forward pass running only the stages of `ablation` (at most the built configuration).
    pub fn forward_with<T: Element>(&self, ctx: &mut Ctx<'_, T>, o: Var, ablation: Ablation) -> Result<NetOutput> {
        self.check_input(ctx.graph.shape(o))?;
        let f0 = self.head.forward(ctx, o)?;
        let f0 = ctx.leaky(f0);
        let mut dense = vec![f0];
        let mut last = f0;
        for unit in &self.units {
            let input = if dense.len() == 1 { dense[0] } else { ctx.graph.concat_channels(&dense)? };
            last = unit.forward(ctx, input, ablation)?;
            dense.push(last);
        }
        let act = ctx.leaky(last);
        let r_hat = self.tail.forward(ctx, act)?;
        let b_hat = ctx.graph.sub(o, r_hat)?;
        Ok(NetOutput { b_hat, r_hat })
    }

    pub fn param_count<T: Element>(&self, store: &ParamStore<T>) -> usize {
        store.entries().iter().filter(|e| e.trainable).map(|e| e.tensor.len()).sum()
    }
}
