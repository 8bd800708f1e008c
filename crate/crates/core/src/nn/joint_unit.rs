//! One network stage: a 1×1 compression of the dense input followed by the feature modules.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AttentionConfig, Conv, Ctx, ScaleAgg, SelfAttention, SelfCalibConv};
use crate::error::{Error, Result};
use crate::tensor::{Element, ParamId, ParamStore, Var};

/// Which feature modules a joint unit contains.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Ablation {
    /// Scale aggregation only.
    R1,
    /// Scale aggregation and self-calibrated convolution.
    R2,
    /// All three modules.
    #[default]
    R3,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::R1, Ablation::R2, Ablation::R3];

    pub fn includes(self, stage: Stage) -> bool {
        match stage {
            Stage::ScaleAgg => true,
            Stage::ScConv => self >= Ablation::R2,
            Stage::Attention => self == Ablation::R3,
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "R1" => Ok(Ablation::R1),
            "R2" => Ok(Ablation::R2),
            "R3" => Ok(Ablation::R3),
            _ => Err(Error::InvalidArgument(format!("unknown ablation `{s}` (R1|R2|R3)"))),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    ScaleAgg,
    ScConv,
    Attention,
}

impl Stage {
    pub const DEFAULT_ORDER: [Stage; 3] = [Stage::ScaleAgg, Stage::ScConv, Stage::Attention];
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scale_agg" => Ok(Stage::ScaleAgg),
            "sc_conv" => Ok(Stage::ScConv),
            "attention" => Ok(Stage::Attention),
            _ => Err(Error::InvalidArgument(format!("unknown stage `{s}` (scale_agg|sc_conv|attention)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct JointUnit {
    pub compress: Conv,
    pub scale_agg: ScaleAgg,
    pub sc_conv: Option<SelfCalibConv>,
    pub attention: Option<SelfAttention>,
    pub order: Vec<Stage>,
}

impl JointUnit {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_width: usize,
        channels: usize,
        scales: usize,
        pool_rate: usize,
        attention: AttentionConfig,
        ablation: Ablation,
        order: &[Stage],
    ) -> Result<Self> {
        let compress = Conv::new(store, rng, &format!("{name}.compress"), in_width, channels, 1, 1, true)?;
        let scale_agg = ScaleAgg::new(store, rng, &format!("{name}.scale_agg"), channels, scales)?;
        let sc_conv = if ablation.includes(Stage::ScConv) {
            Some(SelfCalibConv::new(store, rng, &format!("{name}.sc_conv"), channels, pool_rate)?)
        } else {
            None
        };
        let attention = if ablation.includes(Stage::Attention) {
            Some(SelfAttention::new(store, rng, &format!("{name}.attention"), channels, attention)?)
        } else {
            None
        };
        Ok(JointUnit { compress, scale_agg, sc_conv, attention, order: order.to_vec() })
    }

    pub fn in_width(&self) -> usize {
        self.compress.c_in
    }

    /// Runs the stages enabled by `ablation`; the unit must have been built with at least those stages.
    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, dense_in: Var, ablation: Ablation) -> Result<Var> {
        let s = ctx.graph.shape(dense_in);
        if s.c != self.in_width() {
            return Err(Error::shape(
                "joint_unit",
                format!("dense input {s} has {} channels, compress expects {}", s.c, self.in_width()),
            ));
        }
        let mut x = self.compress.forward(ctx, dense_in)?;
        for &stage in &self.order {
            if !ablation.includes(stage) {
                continue;
            }
            x = match stage {
                Stage::ScaleAgg => self.scale_agg.forward(ctx, x)?,
                Stage::ScConv => self.sc_conv.as_ref().ok_or_else(|| missing("self-calibrated conv"))?.forward(ctx, x)?,
                Stage::Attention => self.attention.as_ref().ok_or_else(|| missing("self-attention"))?.forward(ctx, x)?,
            };
        }
        Ok(x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = self.compress.params();
        v.extend(self.scale_agg.params());
        if let Some(sc) = &self.sc_conv {
            v.extend(sc.params());
        }
        if let Some(att) = &self.attention {
            v.extend(att.params());
        }
        v
    }
}

fn missing(what: &str) -> Error {
    Error::InvalidArgument(format!("joint unit was built without a {what} module"))
}
