//! Kernels and modules against scalar reference implementations.

mod common;

use common::*;
use jdnet_core::metrics::psnr;
use jdnet_core::nn::{AttentionConfig, AttentionNormalize, SelfAttention, SelfCalibConv};
use jdnet_core::tensor::kernels::conv::{conv2d, ConvGeometry};
use jdnet_core::tensor::kernels::pool::avg_pool;
use jdnet_core::tensor::kernels::ssim::{ssim_per_item, SsimConfig};
use jdnet_core::tensor::kernels::upsample::upsample_bilinear;
use jdnet_core::{ParamStore, Shape, Tensor};

const TOL: f64 = 1e-5;

#[test]
fn conv2d_matches_direct_loops() {
    let mut r = rng(1);
    for (n, ci, co, h, w, k, stride, pad, bias) in [
        (1, 1, 1, 5, 5, 3, 1, 1, true),
        (2, 3, 4, 7, 6, 3, 1, 1, true),
        (2, 3, 2, 8, 8, 3, 2, 1, false),
        (1, 4, 3, 6, 5, 1, 1, 0, true),
        (1, 2, 2, 9, 7, 5, 2, 2, true),
    ] {
        let x = random(Shape::new(n, ci, h, w), &mut r);
        let wt = random(Shape::new(co, ci, k, k), &mut r);
        let b = random(Shape::vector(co), &mut r);
        let b = bias.then_some(&b);
        let got = conv2d(&x, &wt, b, ConvGeometry::new(stride, pad)).unwrap();
        let want = conv_ref(&x, &wt, b, stride, pad);
        assert_eq!(got.shape(), want.shape());
        assert!(max_rel(got.data(), want.data()) <= TOL);
    }
}

#[test]
fn conv2d_single_precision_tracks_reference() {
    let mut r = rng(2);
    let x = random(Shape::new(2, 8, 16, 16), &mut r);
    let w = random(Shape::new(8, 8, 3, 3), &mut r);
    let got = conv2d(&x.cast::<f32>(), &w.cast::<f32>(), None, ConvGeometry::same(3)).unwrap();
    let want = conv_ref(&x, &w, None, 1, 1);
    let peak = want.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = got.data().iter().zip(want.data()).map(|(&a, b)| (a as f64 - b).abs()).fold(0.0, f64::max);
    assert!(err / peak <= TOL, "normwise error {}", err / peak);
}

#[test]
fn avg_pool_matches_block_means() {
    let mut r = rng(3);
    for (shape, rate) in [(Shape::new(1, 1, 4, 4), 2), (Shape::new(2, 3, 8, 12), 4), (Shape::new(1, 2, 6, 6), 3)] {
        let x = random(shape, &mut r);
        let got = avg_pool(&x, rate).unwrap();
        assert!(max_rel(got.data(), pool_ref(&x, rate).data()) <= TOL);
    }
}

#[test]
fn bilinear_matches_tent_sum() {
    let mut r = rng(4);
    for (shape, oh, ow) in [
        (Shape::new(1, 1, 2, 2), 4, 4),
        (Shape::new(2, 3, 4, 5), 8, 10),
        (Shape::new(1, 2, 3, 3), 12, 12),
        (Shape::new(1, 1, 4, 4), 4, 4),
    ] {
        let x = random(shape, &mut r);
        let got = upsample_bilinear(&x, oh, ow).unwrap();
        assert!(max_rel(got.data(), bilinear_ref(&x, oh, ow).data()) <= TOL);
    }
}

#[test]
fn bilinear_doubling_uses_quarter_weights() {
    let x = Tensor::<f64>::new(Shape::new(1, 1, 1, 3), vec![1.0, 2.0, 4.0]).unwrap();
    let y = upsample_bilinear(&x, 1, 6).unwrap();
    // Half-pixel centres: interior outputs mix neighbours 3:1, edges clamp.
    let want = [1.0, 1.25, 1.75, 2.5, 3.5, 4.0];
    assert!(max_rel(y.data(), &want) <= 1e-12);
}

#[test]
fn attention_aggregation_matches_brute_force() {
    let mut r = rng(5);
    for (channels, h, w, footprint, reduction, share, normalize) in [
        (8, 6, 6, 3, 2, 1, AttentionNormalize::Softmax),
        (8, 5, 7, 7, 4, 1, AttentionNormalize::Softmax),
        (8, 6, 5, 5, 2, 2, AttentionNormalize::Softmax),
        (4, 4, 4, 3, 1, 2, AttentionNormalize::None),
    ] {
        let cfg = AttentionConfig { footprint, reduction, share, normalize };
        let mut store = ParamStore::new();
        let att = SelfAttention::new(&mut store, &mut r, "att", channels, cfg).unwrap();
        randomize_offsets(&mut store, &mut r);
        let x = random(Shape::new(2, channels, h, w), &mut r);
        let got = eval(&mut store, &x, |ctx, v| att.aggregate(ctx, v).unwrap());
        let want = attention_ref(&att, &store, &x);
        let err = max_rel(got.data(), want.data());
        assert!(err <= TOL, "{cfg:?}: {err}");
    }
}

#[test]
fn self_calibrated_conv_matches_reference() {
    let mut r = rng(6);
    for (channels, h, w, rate) in [(4, 4, 4, 2), (8, 8, 6, 2), (6, 8, 8, 4)] {
        let mut store = ParamStore::new();
        let sc = SelfCalibConv::new(&mut store, &mut r, "sc", channels, rate).unwrap();
        randomize_offsets(&mut store, &mut r);
        let x = random(Shape::new(2, channels, h, w), &mut r);
        let got = eval(&mut store, &x, |ctx, v| sc.forward(ctx, v).unwrap());

        let want = sc_conv_ref(&sc, &store, &x);
        let err = max_rel(got.data(), want.data());
        assert!(err <= TOL, "C={channels} r={rate}: {err}");
    }
}

#[test]
fn ssim_matches_full_window_reference() {
    let mut r = rng(7);
    for shape in [Shape::new(1, 1, 11, 11), Shape::new(2, 3, 16, 13), Shape::new(1, 3, 20, 20)] {
        let a = random_unit(shape, &mut r);
        let noise = random(shape, &mut r);
        let b = Tensor::from_fn(shape, |n, c, y, x| (a.get(n, c, y, x) + 0.2 * noise.get(n, c, y, x)).clamp(0.0, 1.0));
        let got = ssim_per_item(&a, &b, &SsimConfig::default()).unwrap();
        assert!(max_rel(&got, &ssim_ref(&a, &b)) <= TOL);
    }
}

#[test]
fn ssim_of_independent_noise_is_near_zero() {
    let mut r = rng(8);
    let shape = Shape::new(1, 3, 48, 48);
    let (a, b) = (random_unit(shape, &mut r), random_unit(shape, &mut r));
    let s = ssim_per_item(&a, &b, &SsimConfig::default()).unwrap()[0];
    assert!(s.abs() < 0.05, "{s}");
}

#[test]
fn psnr_matches_definition() {
    let mut r = rng(9);
    let shape = Shape::new(2, 3, 5, 4);
    let (a, b) = (random_unit(shape, &mut r), random_unit(shape, &mut r));
    let mse: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    let want = 10.0 * (1.0 / mse).log10();
    assert!((psnr(&a, &b, 1.0).unwrap() - want).abs() <= TOL * want.abs());
    // 8-bit peak with a uniform error of 1 level.
    let c = Tensor::<f64>::full(shape, 10.0);
    let d = Tensor::<f64>::full(shape, 11.0);
    assert!((psnr(&c, &d, 255.0).unwrap() - 20.0 * 255f64.log10()).abs() < 1e-9);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
}
