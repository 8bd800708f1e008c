//! Gaussian-windowed SSIM with its analytic adjoint.
//!
//! Local statistics use "valid" filtering (no padding), so an `H×W` plane
//! yields `(H − win + 1) × (W − win + 1)` SSIM samples. Internals run in
//! `f64` regardless of the tensor element type.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ensure_same_shape, Element, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range L of pixel values.
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let centre = (self.window as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| (-(i as f64 - centre).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }

    fn validate(&self, s: Shape) -> Result<()> {
        if self.window == 0 || self.sigma <= 0.0 || self.c1() <= 0.0 || self.c2() <= 0.0 {
            return Err(Error::InvalidArgument(format!("invalid SSIM configuration {self:?}")));
        }
        if s.h < self.window || s.w < self.window {
            return Err(Error::shape(
                "ssim",
                format!("{}x{} window is larger than the {}x{} image", self.window, self.window, s.h, s.w),
            ));
        }
        Ok(())
    }
}

struct Plane {
    h: usize,
    w: usize,
}

impl Plane {
    fn out(&self, win: usize) -> (usize, usize) {
        (self.h - win + 1, self.w - win + 1)
    }
}

fn blur(src: &[f64], p: &Plane, taps: &[f64], tmp: &mut [f64], out: &mut [f64]) {
    let win = taps.len();
    let (ho, wo) = p.out(win);
    for y in 0..p.h {
        let row = &src[y * p.w..(y + 1) * p.w];
        let t = &mut tmp[y * wo..(y + 1) * wo];
        for (x, v) in t.iter_mut().enumerate() {
            *v = taps.iter().zip(&row[x..x + win]).map(|(g, s)| g * s).sum();
        }
    }
    out[..ho * wo].fill(0.0);
    for y in 0..ho {
        let o = &mut out[y * wo..(y + 1) * wo];
        for (k, &g) in taps.iter().enumerate() {
            for (o, &t) in o.iter_mut().zip(&tmp[(y + k) * wo..(y + k + 1) * wo]) {
                *o += g * t;
            }
        }
    }
}

/// Adjoint of [`blur`]: maps an `ho×wo` gradient back onto the `h×w` plane.
fn blur_adjoint(d: &[f64], p: &Plane, taps: &[f64], tmp: &mut [f64], out: &mut [f64]) {
    let win = taps.len();
    let (ho, wo) = p.out(win);
    tmp[..p.h * wo].fill(0.0);
    for y in 0..ho {
        for (k, &g) in taps.iter().enumerate() {
            let t = &mut tmp[(y + k) * wo..(y + k + 1) * wo];
            for (t, &v) in t.iter_mut().zip(&d[y * wo..(y + 1) * wo]) {
                *t += g * v;
            }
        }
    }
    out[..p.h * p.w].fill(0.0);
    for y in 0..p.h {
        let t = &tmp[y * wo..(y + 1) * wo];
        let o = &mut out[y * p.w..(y + 1) * p.w];
        for (x, &v) in t.iter().enumerate() {
            for (k, &g) in taps.iter().enumerate() {
                o[x + k] += g * v;
            }
        }
    }
}

/// Windowed first and second moments of a plane pair.
struct Moments {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    e_aa: Vec<f64>,
    e_bb: Vec<f64>,
    e_ab: Vec<f64>,
}

fn moments(a: &[f64], b: &[f64], p: &Plane, taps: &[f64]) -> Moments {
    let (ho, wo) = p.out(taps.len());
    let mut tmp = vec![0.0; p.h * wo];
    let mut run = |src: &[f64]| {
        let mut out = vec![0.0; ho * wo];
        blur(src, p, taps, &mut tmp, &mut out);
        out
    };
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    Moments {
        mu_a: run(a),
        mu_b: run(b),
        e_aa: run(&aa),
        e_bb: run(&bb),
        e_ab: run(&ab),
    }
}

/// Terms of the SSIM quotient `s = A1·A2 / (B1·B2)` at one window.
#[derive(Clone, Copy)]
struct Terms {
    a1: f64,
    a2: f64,
    b1: f64,
    b2: f64,
}

impl Terms {
    fn at(m: &Moments, i: usize, c1: f64, c2: f64) -> Self {
        let (ma, mb) = (m.mu_a[i], m.mu_b[i]);
        let var_a = m.e_aa[i] - ma * ma;
        let var_b = m.e_bb[i] - mb * mb;
        let cov = m.e_ab[i] - ma * mb;
        Terms {
            a1: 2.0 * ma * mb + c1,
            a2: 2.0 * cov + c2,
            b1: ma * ma + mb * mb + c1,
            b2: var_a + var_b + c2,
        }
    }

    fn value(&self) -> f64 {
        self.a1 * self.a2 / (self.b1 * self.b2)
    }
}

fn planes<T: Element>(t: &Tensor<T>) -> Vec<Vec<f64>> {
    t.data().chunks(t.shape().plane()).map(|p| p.iter().map(|v| v.as_f64()).collect()).collect()
}

/// Local SSIM map for every plane, shape `(N, C, H − win + 1, W − win + 1)`.
pub fn ssim_map<T: Element>(a: &Tensor<T>, b: &Tensor<T>, cfg: &SsimConfig) -> Result<Tensor<f64>> {
    let s = a.shape();
    ensure_same_shape("ssim", s, b.shape())?;
    cfg.validate(s)?;
    let taps = cfg.taps();
    let p = Plane { h: s.h, w: s.w };
    let (ho, wo) = p.out(cfg.window);
    let (pa, pb) = (planes(a), planes(b));
    let maps: Vec<Vec<f64>> = pa
        .par_iter()
        .zip(pb.par_iter())
        .map(|(x, y)| {
            let m = moments(x, y, &p, &taps);
            (0..ho * wo).map(|i| Terms::at(&m, i, cfg.c1(), cfg.c2()).value()).collect()
        })
        .collect();
    Ok(Tensor::from_parts(Shape::new(s.n, s.c, ho, wo), maps.concat()))
}

/// Mean SSIM over all windows, channels and batch items.
pub fn ssim<T: Element>(a: &Tensor<T>, b: &Tensor<T>, cfg: &SsimConfig) -> Result<f64> {
    let map = ssim_map(a, b, cfg)?;
    Ok(map.data().iter().sum::<f64>() / map.len() as f64)
}

/// Mean SSIM of each batch item.
pub fn ssim_per_item<T: Element>(a: &Tensor<T>, b: &Tensor<T>, cfg: &SsimConfig) -> Result<Vec<f64>> {
    let map = ssim_map(a, b, cfg)?;
    let item = map.shape().item();
    Ok(map.data().chunks(item).map(|c| c.iter().sum::<f64>() / item as f64).collect())
}

/// Gradients of `upstream · ssim(a, b)` with respect to `a` and `b`.
pub fn ssim_backward<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    cfg: &SsimConfig,
    upstream: f64,
) -> Result<(Vec<T>, Vec<T>)> {
    let s = a.shape();
    ensure_same_shape("ssim", s, b.shape())?;
    cfg.validate(s)?;
    let taps = cfg.taps();
    let p = Plane { h: s.h, w: s.w };
    let (ho, wo) = p.out(cfg.window);
    let scale = upstream / (s.n * s.c * ho * wo) as f64;
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let (pa, pb) = (planes(a), planes(b));
    let per_plane: Vec<(Vec<T>, Vec<T>)> = pa
        .par_iter()
        .zip(pb.par_iter())
        .map(|(x, y)| {
            let m = moments(x, y, &p, &taps);
            let n = ho * wo;
            let (mut d_mu_a, mut d_mu_b, mut d_e_sq, mut d_e_ab) =
                (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            for i in 0..n {
                let t = Terms::at(&m, i, c1, c2);
                let d = t.b1 * t.b2;
                let sv = t.a1 * t.a2 / d;
                let (ma, mb) = (m.mu_a[i], m.mu_b[i]);
                let common = (t.a2 - t.a1) / d;
                let ratio = 1.0 / t.b1 - 1.0 / t.b2;
                d_mu_a[i] = scale * (2.0 * mb * common - 2.0 * ma * sv * ratio);
                d_mu_b[i] = scale * (2.0 * ma * common - 2.0 * mb * sv * ratio);
                d_e_sq[i] = scale * (-sv / t.b2);
                d_e_ab[i] = scale * (2.0 * t.a1 / d);
            }
            let mut tmp = vec![0.0; p.h * wo];
            let mut adj = |g: &[f64]| {
                let mut out = vec![0.0; p.h * p.w];
                blur_adjoint(g, &p, &taps, &mut tmp, &mut out);
                out
            };
            let (g_mu_a, g_mu_b, g_sq, g_ab) = (adj(&d_mu_a), adj(&d_mu_b), adj(&d_e_sq), adj(&d_e_ab));
            let da = (0..x.len())
                .map(|i| T::from_f64(g_mu_a[i] + 2.0 * x[i] * g_sq[i] + y[i] * g_ab[i]))
                .collect();
            let db = (0..x.len())
                .map(|i| T::from_f64(g_mu_b[i] + 2.0 * y[i] * g_sq[i] + x[i] * g_ab[i]))
                .collect();
            (da, db)
        })
        .collect();
    let (da, db): (Vec<Vec<T>>, Vec<Vec<T>>) = per_plane.into_iter().unzip();
    Ok((da.concat(), db.concat()))
}
