#![allow(dead_code)]

use jdnet_core::nn::{AttentionNormalize, Conv, Ctx, NetConfig, SelfAttention, SelfCalibConv, LEAKY_SLOPE};
use jdnet_core::{Graph, ParamStore, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: Shape, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

pub fn random_unit(shape: Shape, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(0.0..1.0))
}

/// Largest element-wise `|a − b| / max(|b|, 1e-6)`.
pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(1e-6)).fold(0.0, f64::max)
}

/// Gives every bias and BN shift in the store random values.
pub fn randomize_offsets(store: &mut ParamStore<f64>, rng: &mut impl Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let e = store.entry(id);
        if e.trainable && (e.name.ends_with(".bias") || e.name.ends_with(".shift")) {
            let vals: Vec<f64> = (0..e.tensor.len()).map(|_| rng.random_range(-0.5..0.5)).collect();
            store.set_values(id, &vals).unwrap();
        }
    }
}

pub fn param(store: &ParamStore<f64>, name: &str) -> Tensor<f64> {
    store.by_name(name).unwrap_or_else(|| panic!("no parameter {name}")).clone()
}

/// Runs `f` on a fresh training-mode context and returns the value of its output.
pub fn eval(store: &mut ParamStore<f64>, x: &Tensor<f64>, f: impl FnOnce(&mut Ctx<'_, f64>, jdnet_core::Var) -> jdnet_core::Var) -> Tensor<f64> {
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, store, true);
    let v = ctx.graph.input(x.clone());
    let out = f(&mut ctx, v);
    g.value(out).clone()
}

pub fn small_net(units: usize, channels: usize) -> NetConfig {
    NetConfig { units, channels, ..NetConfig::tiny() }
}

// Scalar references, written as direct loops over the defining sums.

pub fn conv_ref(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let ho = (xs.h + 2 * pad - ws.h) / stride + 1;
    let wo = (xs.w + 2 * pad - ws.w) / stride + 1;
    Tensor::from_fn(Shape::new(xs.n, ws.n, ho, wo), |n, co, oy, ox| {
        let mut acc = b.map_or(0.0, |b| b.data()[co]);
        for ci in 0..xs.c {
            for ky in 0..ws.h {
                for kx in 0..ws.w {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                        acc += w.get(co, ci, ky, kx) * x.get(n, ci, iy as usize, ix as usize);
                    }
                }
            }
        }
        acc
    })
}

pub fn pool_ref(x: &Tensor<f64>, r: usize) -> Tensor<f64> {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, s.h / r, s.w / r), |n, c, y, xx| {
        let mut acc = 0.0;
        for dy in 0..r {
            for dx in 0..r {
                acc += x.get(n, c, y * r + dy, xx * r + dx);
            }
        }
        acc / (r * r) as f64
    })
}

/// Bilinear resampling as a sum of tent-weighted samples at half-pixel source coordinates.
pub fn bilinear_ref(x: &Tensor<f64>, oh: usize, ow: usize) -> Tensor<f64> {
    let s = x.shape();
    let src = |i: usize, inp: usize, out: usize| {
        ((i as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64)
    };
    let tent = |d: f64| (1.0 - d.abs()).max(0.0);
    Tensor::from_fn(Shape::new(s.n, s.c, oh, ow), |n, c, y, xx| {
        let (sy, sx) = (src(y, s.h, oh), src(xx, s.w, ow));
        let mut acc = 0.0;
        for iy in 0..s.h {
            for ix in 0..s.w {
                acc += tent(sy - iy as f64) * tent(sx - ix as f64) * x.get(n, c, iy, ix);
            }
        }
        acc
    })
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn leaky(v: f64, slope: f64) -> f64 {
    if v >= 0.0 { v } else { slope * v }
}

/// Mean Gaussian-window SSIM (11×11, σ = 1.5, valid windows) with a full 2-D window.
pub fn ssim_ref(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let s = a.shape();
    let (win, sigma) = (11usize, 1.5f64);
    let mut w = vec![0.0; win * win];
    for u in 0..win {
        for v in 0..win {
            let (du, dv) = (u as f64 - 5.0, v as f64 - 5.0);
            w[u * win + v] = (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    (0..s.n)
        .map(|n| {
            let mut sum = 0.0;
            let mut count = 0;
            for c in 0..s.c {
                for y in 0..=s.h - win {
                    for x in 0..=s.w - win {
                        let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                        for u in 0..win {
                            for v in 0..win {
                                let g = w[u * win + v];
                                let (p, q) = (a.get(n, c, y + u, x + v), b.get(n, c, y + u, x + v));
                                ma += g * p;
                                mb += g * q;
                                aa += g * p * p;
                                bb += g * q * q;
                                ab += g * p * q;
                            }
                        }
                        let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
                        sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                        count += 1;
                    }
                }
            }
            sum / count as f64
        })
        .collect()
}

/// Brute-force weighted footprint sum with γ applied to every (centre, neighbour) pair.
pub fn attention_ref(att: &SelfAttention, store: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let conv = |c: &Conv, input: &Tensor<f64>| {
        let w = store.get(c.weight);
        let b = c.bias.map(|b| store.get(b));
        conv_ref(input, w, b, 1, 0)
    };
    let (phi, psi, beta) = (conv(&att.phi, x), conv(&att.psi, x), conv(&att.beta, x));
    let w1 = store.get(att.gamma1.weight);
    let b1 = store.get(att.gamma1.bias.unwrap());
    let w2 = store.get(att.gamma2.weight);
    let b2 = att.gamma2.bias.map(|b| store.get(b).clone());
    let (s, cr) = (x.shape(), phi.shape().c);
    let (hidden, groups, share) = (w1.shape().n, w2.shape().n, att.cfg.share);
    let half = (att.cfg.footprint / 2) as isize;
    Tensor::from_fn(Shape::new(s.n, cr, s.h, s.w), |n, c, y, xx| {
        let g = c / share;
        let mut logits = Vec::new();
        let mut values = Vec::new();
        for dy in -half..=half {
            for dx in -half..=half {
                let (jy, jx) = (y as isize + dy, xx as isize + dx);
                if jy < 0 || jx < 0 || jy >= s.h as isize || jx >= s.w as isize {
                    continue;
                }
                let (jy, jx) = (jy as usize, jx as usize);
                let delta: Vec<f64> = (0..cr).map(|k| phi.get(n, k, y, xx) - psi.get(n, k, jy, jx)).collect();
                let h: Vec<f64> = (0..hidden)
                    .map(|m| {
                        let pre: f64 = (0..cr).map(|k| w1.get(m, k, 0, 0) * delta[k]).sum::<f64>() + b1.data()[m];
                        leaky(pre, LEAKY_SLOPE)
                    })
                    .collect();
                let logit: f64 = (0..hidden).map(|m| w2.get(g, m, 0, 0) * h[m]).sum::<f64>()
                    + b2.as_ref().map_or(0.0, |b| b.data()[g]);
                logits.push(logit);
                values.push(beta.get(n, c, jy, jx));
            }
        }
        assert!(g < groups);
        let weights: Vec<f64> = match att.cfg.normalize {
            AttentionNormalize::Softmax => {
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(|v| v / z).collect()
            }
            AttentionNormalize::None => logits,
        };
        weights.iter().zip(&values).map(|(a, v)| a * v).sum()
    })
}

/// Self-calibrated convolution assembled from the scalar conv, pool and resize references.
pub fn sc_conv_ref(sc: &SelfCalibConv, store: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let conv = |c: &Conv, input: &Tensor<f64>| {
        conv_ref(input, store.get(c.weight), c.bias.map(|b| store.get(b)), 1, c.kernel / 2)
    };
    let x1 = conv(&sc.split1, x);
    let x2 = conv(&sc.split2, x);
    let up = bilinear_ref(&conv(&sc.k2, &pool_ref(&x1, sc.rate)), s.h, s.w);
    let f3 = conv(&sc.k3, &x1);
    let gated = Tensor::from_fn(f3.shape(), |n, c, y, xx| {
        f3.get(n, c, y, xx) * sigmoid(x1.get(n, c, y, xx) + up.get(n, c, y, xx))
    });
    let y1 = conv(&sc.k4, &gated);
    let y2 = conv(&sc.k1, &x2);
    let half = sc.channels / 2;
    Tensor::from_fn(s, |n, c, y, xx| if c < half { y1.get(n, c, y, xx) } else { y2.get(n, c - half, y, xx) })
}
