//! Image-quality metrics for evaluation: SSIM, PSNR, MAE and MSE.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::kernels::ssim::{self, SsimConfig};
use crate::tensor::{ensure_same_shape, Element, Shape, Tensor};

/// PSNR shown for identical images in text and CSV output.
pub const PSNR_CAP: f64 = 100.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colorspace {
    #[default]
    Rgb,
    Luma,
}

impl FromStr for Colorspace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(Colorspace::Rgb),
            "luma" => Ok(Colorspace::Luma),
            _ => Err(Error::InvalidArgument(format!("unknown colour space `{s}` (rgb|luma)"))),
        }
    }
}

impl fmt::Display for Colorspace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Colorspace::Rgb => "rgb",
            Colorspace::Luma => "luma",
        })
    }
}

/// BT.601 luma `0.299 R + 0.587 G + 0.114 B` of an RGB batch, as a single-channel batch.
pub fn luma<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.c != 3 {
        return Err(Error::shape("luma", format!("expected 3 channels, got {s}")));
    }
    let out = Shape::new(s.n, 1, s.h, s.w);
    let (kr, kg, kb) = (T::from_f64(0.299), T::from_f64(0.587), T::from_f64(0.114));
    Ok(Tensor::from_fn(out, |n, _, h, w| kr * x.get(n, 0, h, w) + kg * x.get(n, 1, h, w) + kb * x.get(n, 2, h, w)))
}

fn in_space<T: Element>(x: &Tensor<T>, space: Colorspace) -> Result<Tensor<T>> {
    match space {
        Colorspace::Rgb => Ok(x.clone()),
        Colorspace::Luma => luma(x),
    }
}

pub fn mse<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    ensure_same_shape("mse", a.shape(), b.shape())?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2)).sum();
    Ok(sum / a.len() as f64)
}

pub fn mae<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    ensure_same_shape("mae", a.shape(), b.shape())?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x.as_f64() - y.as_f64()).abs()).sum();
    Ok(sum / a.len() as f64)
}

/// `10·log10(peak² / MSE)` in dB; `+∞` for identical inputs.
pub fn psnr<T: Element>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { 10.0 * (peak * peak / m).log10() })
}

/// PSNR clamped to [`PSNR_CAP`] for display.
pub fn capped_psnr(v: f64) -> f64 {
    v.min(PSNR_CAP)
}

/// Quality metrics of one image pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    pub psnr: f64,
    pub ssim: f64,
}

/// SSIM and PSNR of each image in a batch.
pub fn quality_per_item<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    space: Colorspace,
    cfg: &SsimConfig,
) -> Result<Vec<Quality>> {
    ensure_same_shape("quality", a.shape(), b.shape())?;
    let (a, b) = (in_space(a, space)?, in_space(b, space)?);
    let s = ssim::ssim_per_item(&a, &b, cfg)?;
    let item = a.shape().item();
    let mut out = Vec::with_capacity(s.len());
    for (i, ssim) in s.into_iter().enumerate() {
        let shape = Shape::new(1, a.shape().c, a.shape().h, a.shape().w);
        let ai = Tensor::new(shape, a.data()[i * item..][..item].to_vec())?;
        let bi = Tensor::new(shape, b.data()[i * item..][..item].to_vec())?;
        out.push(Quality { psnr: psnr(&ai, &bi, 1.0)?, ssim });
    }
    Ok(out)
}

/// Mean SSIM and mean (capped) PSNR over a batch.
pub fn mean_quality(items: &[Quality]) -> Quality {
    let n = items.len().max(1) as f64;
    Quality {
        psnr: items.iter().map(|q| capped_psnr(q.psnr)).sum::<f64>() / n,
        ssim: items.iter().map(|q| q.ssim).sum::<f64>() / n,
    }
}
