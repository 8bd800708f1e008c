//! Training losses recorded on the gradient tape.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::kernels::ssim::SsimConfig;
use crate::tensor::{Element, Graph, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    NegSsim,
    Mae,
    Mse,
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neg_ssim" => Ok(LossKind::NegSsim),
            "mae" => Ok(LossKind::Mae),
            "mse" => Ok(LossKind::Mse),
            _ => Err(Error::InvalidArgument(format!("unknown loss `{s}` (neg_ssim|mae|mse)"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::NegSsim => "neg_ssim",
            LossKind::Mae => "mae",
            LossKind::Mse => "mse",
        })
    }
}

/// `−SSIM(b_hat, b)`, the mean over the batch of per-image SSIM.
pub fn neg_ssim_loss<T: Element>(g: &mut Graph<T>, b_hat: Var, b: Var, cfg: &SsimConfig) -> Result<Var> {
    let s = g.ssim(b_hat, b, *cfg)?;
    Ok(g.scale(s, -1.0))
}

pub fn mae_loss<T: Element>(g: &mut Graph<T>, b_hat: Var, b: Var) -> Result<Var> {
    let d = g.sub(b_hat, b)?;
    let a = g.abs(d);
    Ok(g.mean(a))
}

pub fn mse_loss<T: Element>(g: &mut Graph<T>, b_hat: Var, b: Var) -> Result<Var> {
    let d = g.sub(b_hat, b)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

pub fn loss<T: Element>(g: &mut Graph<T>, kind: LossKind, b_hat: Var, b: Var, cfg: &SsimConfig) -> Result<Var> {
    match kind {
        LossKind::NegSsim => neg_ssim_loss(g, b_hat, b, cfg),
        LossKind::Mae => mae_loss(g, b_hat, b),
        LossKind::Mse => mse_loss(g, b_hat, b),
    }
}
