//! Pairwise self-attention over a local footprint with a subtraction relation.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BatchNorm, Conv, Ctx, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::tensor::kernels::attention::Footprint;
use crate::tensor::{Element, ParamId, ParamStore, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionNormalize {
    #[default]
    Softmax,
    None,
}

impl FromStr for AttentionNormalize {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(AttentionNormalize::Softmax),
            "none" => Ok(AttentionNormalize::None),
            _ => Err(Error::InvalidArgument(format!("unknown attention normalisation `{s}` (softmax|none)"))),
        }
    }
}

impl fmt::Display for AttentionNormalize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionNormalize::Softmax => "softmax",
            AttentionNormalize::None => "none",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub footprint: usize,
    pub reduction: usize,
    pub share: usize,
    pub normalize: AttentionNormalize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig { footprint: 7, reduction: 4, share: 1, normalize: AttentionNormalize::Softmax }
    }
}

impl AttentionConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidArgument(format!("self-attention: {reason}")));
        if self.footprint.is_multiple_of(2) {
            return bad(format!("footprint {} must be odd", self.footprint));
        }
        if self.reduction == 0 || !channels.is_multiple_of(self.reduction) || channels < self.reduction {
            return bad(format!("channels {channels} not divisible by reduction {}", self.reduction));
        }
        let reduced = channels / self.reduction;
        if self.share == 0 || !reduced.is_multiple_of(self.share) {
            return bad(format!("reduced width {reduced} not divisible by share {}", self.share));
        }
        Ok(())
    }
}

/// `x + expand(LReLU(BN(Σ_j α(x_i, x_j) ⊙ β(x_j))))` with `α = norm(γ(φ(x_i) − ψ(x_j)))`.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub cfg: AttentionConfig,
    pub channels: usize,
    pub phi: Conv,
    pub psi: Conv,
    pub beta: Conv,
    pub gamma1: Conv,
    pub gamma2: Conv,
    pub expand: Conv,
    pub bn: BatchNorm,
}

impl SelfAttention {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        cfg: AttentionConfig,
    ) -> Result<Self> {
        cfg.validate(channels)?;
        let reduced = channels / cfg.reduction;
        let groups = reduced / cfg.share;
        // Biases that a shift-invariant softmax or the following BN would cancel are omitted.
        let unnormalized = cfg.normalize == AttentionNormalize::None;
        Ok(SelfAttention {
            cfg,
            channels,
            phi: Conv::new(store, rng, &format!("{name}.phi"), channels, reduced, 1, 1, true)?,
            psi: Conv::new(store, rng, &format!("{name}.psi"), channels, reduced, 1, 1, true)?,
            beta: Conv::new(store, rng, &format!("{name}.beta"), channels, reduced, 1, 1, unnormalized)?,
            gamma1: Conv::new(store, rng, &format!("{name}.gamma1"), reduced, reduced, 1, 1, true)?,
            gamma2: Conv::new(store, rng, &format!("{name}.gamma2"), reduced, groups, 1, 1, unnormalized)?,
            expand: Conv::new(store, rng, &format!("{name}.expand"), reduced, channels, 1, 1, true)?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), reduced)?,
        })
    }

    pub fn groups(&self) -> usize {
        self.channels / self.cfg.reduction / self.cfg.share
    }

    /// Normalised attention weights, `(N, groups·k², H, W)`.
    pub fn weights<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let s = ctx.graph.shape(x);
        let fp = Footprint::new(self.cfg.footprint, s.h, s.w)?;
        let phi = self.phi.forward(ctx, x)?;
        let psi = self.psi.forward(ctx, x)?;
        let w1 = ctx.param(self.gamma1.weight);
        let b1 = ctx.param(self.gamma1.bias.expect("γ hidden layer has a bias"));
        let w2 = ctx.param(self.gamma2.weight);
        let b2 = self.gamma2.bias.map(|b| ctx.param(b));
        let logits = ctx.graph.pairwise_logits(phi, psi, w1, b1, w2, b2, LEAKY_SLOPE, self.cfg.footprint)?;
        match self.cfg.normalize {
            AttentionNormalize::Softmax => ctx.graph.softmax_over_positions(logits, self.groups(), Some(fp)),
            AttentionNormalize::None => Ok(logits),
        }
    }

    /// The weighted footprint sum of β features, before BN / expand / residual.
    pub fn aggregate<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let s = ctx.graph.shape(x);
        if s.c != self.channels {
            return Err(Error::shape(
                "self_attention",
                format!("input {s} has {} channels, module expects {}", s.c, self.channels),
            ));
        }
        let weights = self.weights(ctx, x)?;
        let beta = self.beta.forward(ctx, x)?;
        ctx.graph.footprint_aggregate(weights, beta, self.cfg.footprint, self.cfg.share)
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let agg = self.aggregate(ctx, x)?;
        let normed = self.bn.forward(ctx, agg)?;
        let act = ctx.leaky(normed);
        let out = self.expand.forward(ctx, act)?;
        ctx.graph.add(out, x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = Vec::new();
        for c in [&self.phi, &self.psi, &self.beta, &self.gamma1, &self.gamma2, &self.expand] {
            v.extend(c.params());
        }
        v.extend([self.bn.scale, self.bn.shift]);
        v
    }
}
