//! Bilinear interpolation with half-pixel centres and edge clamping.

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// For each output coordinate: the two source taps and the weight of the second tap.
#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            Tap { lo, hi, frac: src - lo as f64 }
        })
        .collect()
}

fn check(input: Shape, out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 || input.h == 0 || input.w == 0 {
        return Err(Error::shape("upsample_bilinear", "zero-sized input or target"));
    }
    if out_h < input.h || out_w < input.w {
        return Err(Error::shape(
            "upsample_bilinear",
            format!("target {out_h}x{out_w} is smaller than input {}x{}", input.h, input.w),
        ));
    }
    Ok(())
}

pub fn upsample_bilinear<T: Element>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let is = x.shape();
    check(is, out_h, out_w)?;
    let os = Shape::new(is.n, is.c, out_h, out_w);
    let (ty, tx) = (taps(is.h, out_h), taps(is.w, out_w));
    let mut y = vec![T::zero(); os.numel()];
    for (src, dst) in x.data().chunks(is.plane()).zip(y.chunks_mut(os.plane())) {
        for (oy, t) in ty.iter().enumerate() {
            let (r0, r1) = (&src[t.lo * is.w..][..is.w], &src[t.hi * is.w..][..is.w]);
            let fy = T::from_f64(t.frac);
            for (ox, s) in tx.iter().enumerate() {
                let fx = T::from_f64(s.frac);
                let top = r0[s.lo] + (r0[s.hi] - r0[s.lo]) * fx;
                let bottom = r1[s.lo] + (r1[s.hi] - r1[s.lo]) * fx;
                dst[oy * out_w + ox] = top + (bottom - top) * fy;
            }
        }
    }
    Ok(Tensor::from_parts(os, y))
}

pub fn upsample_bilinear_backward<T: Element>(in_shape: Shape, out_h: usize, out_w: usize, dy: &[T]) -> Result<Vec<T>> {
    check(in_shape, out_h, out_w)?;
    let (ty, tx) = (taps(in_shape.h, out_h), taps(in_shape.w, out_w));
    let mut dx = vec![T::zero(); in_shape.numel()];
    let w = in_shape.w;
    for (g, d) in dy.chunks(out_h * out_w).zip(dx.chunks_mut(in_shape.plane())) {
        for (oy, t) in ty.iter().enumerate() {
            let fy = T::from_f64(t.frac);
            for (ox, s) in tx.iter().enumerate() {
                let fx = T::from_f64(s.frac);
                let v = g[oy * out_w + ox];
                let (top, bottom) = (v * (T::one() - fy), v * fy);
                d[t.lo * w + s.lo] += top * (T::one() - fx);
                d[t.lo * w + s.hi] += top * fx;
                d[t.hi * w + s.lo] += bottom * (T::one() - fx);
                d[t.hi * w + s.hi] += bottom * fx;
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar reference: maps each output pixel back to source coordinates independently.
    fn reference(x: &Tensor<f64>, oh: usize, ow: usize) -> Tensor<f64> {
        let s = x.shape();
        Tensor::from_fn(Shape::new(s.n, s.c, oh, ow), |n, c, i, j| {
            let sy = ((i as f64 + 0.5) * s.h as f64 / oh as f64 - 0.5).clamp(0.0, (s.h - 1) as f64);
            let sx = ((j as f64 + 0.5) * s.w as f64 / ow as f64 - 0.5).clamp(0.0, (s.w - 1) as f64);
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(s.h - 1), (x0 + 1).min(s.w - 1));
            let (ay, ax) = (sy - y0 as f64, sx - x0 as f64);
            (1.0 - ay) * (1.0 - ax) * x.get(n, c, y0, x0)
                + (1.0 - ay) * ax * x.get(n, c, y0, x1)
                + ay * (1.0 - ax) * x.get(n, c, y1, x0)
                + ay * ax * x.get(n, c, y1, x1)
        })
    }

    #[test]
    fn two_by_two_to_four_by_four_matches_reference() {
        let x = Tensor::new(Shape::new(1, 1, 2, 2), vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        let y = upsample_bilinear(&x, 4, 4).unwrap();
        let r = reference(&x, 4, 4);
        assert!(y.max_abs_diff(&r).unwrap() < 1e-12);
        // corners replicate the source corners under edge clamping
        assert_eq!(y.get(0, 0, 0, 0), 0.0);
        assert_eq!(y.get(0, 0, 3, 3), 4.0);
        assert!((y.get(0, 0, 1, 1) - (0.5625 * 0.0 + 0.1875 * 1.0 + 0.1875 * 2.0 + 0.0625 * 4.0)).abs() < 1e-12);
    }

    #[test]
    fn odd_factors_match_reference() {
        let x = Tensor::from_fn(Shape::new(2, 2, 3, 5), |n, c, h, w| ((n + 2 * c + 3 * h) as f64).sin() + w as f64);
        let y = upsample_bilinear(&x, 7, 16).unwrap();
        assert!(y.max_abs_diff(&reference(&x, 7, 16)).unwrap() < 1e-12);
    }

    #[test]
    fn constant_and_identity() {
        let c = Tensor::<f64>::full(Shape::new(1, 2, 3, 3), 0.25);
        assert!(upsample_bilinear(&c, 9, 12).unwrap().data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let x = Tensor::from_fn(Shape::new(1, 1, 4, 4), |_, _, h, w| (h * 4 + w) as f64);
        assert_eq!(upsample_bilinear(&x, 4, 4).unwrap(), x);
    }

    #[test]
    fn zero_target_is_rejected() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2));
        assert!(upsample_bilinear(&x, 0, 4).is_err());
        assert!(upsample_bilinear(&x, 1, 4).is_err());
    }
}
