use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

pub fn avg_pool_shape(input: Shape, r: usize) -> Result<Shape> {
    if r == 0 {
        return Err(Error::InvalidArgument("pooling rate must be positive".into()));
    }
    if !input.h.is_multiple_of(r) || !input.w.is_multiple_of(r) {
        return Err(Error::shape(
            "avg_pool",
            format!("spatial size {}x{} is not divisible by rate {r}", input.h, input.w),
        ));
    }
    Ok(Shape::new(input.n, input.c, input.h / r, input.w / r))
}

/// Mean over non-overlapping `r×r` blocks.
pub fn avg_pool<T: Element>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let is = x.shape();
    let os = avg_pool_shape(is, r)?;
    let scale = T::from_f64(1.0 / (r * r) as f64);
    let mut y = vec![T::zero(); os.numel()];
    for (plane_in, plane_out) in x.data().chunks(is.plane()).zip(y.chunks_mut(os.plane())) {
        for iy in 0..is.h {
            let row = &plane_in[iy * is.w..(iy + 1) * is.w];
            let out_row = &mut plane_out[(iy / r) * os.w..(iy / r + 1) * os.w];
            for (ox, o) in out_row.iter_mut().enumerate() {
                *o += row[ox * r..(ox + 1) * r].iter().copied().sum::<T>();
            }
        }
        plane_out.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(Tensor::from_parts(os, y))
}

pub fn avg_pool_backward<T: Element>(in_shape: Shape, r: usize, dy: &[T]) -> Result<Vec<T>> {
    let os = avg_pool_shape(in_shape, r)?;
    let scale = T::from_f64(1.0 / (r * r) as f64);
    let mut dx = vec![T::zero(); in_shape.numel()];
    for (plane_dx, plane_dy) in dx.chunks_mut(in_shape.plane()).zip(dy.chunks(os.plane())) {
        for iy in 0..in_shape.h {
            let g = &plane_dy[(iy / r) * os.w..(iy / r + 1) * os.w];
            for (ix, d) in plane_dx[iy * in_shape.w..(iy + 1) * in_shape.w].iter_mut().enumerate() {
                *d = g[ix / r] * scale;
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_stays_constant() {
        let x = Tensor::<f64>::full(Shape::new(2, 3, 8, 8), 0.37);
        for r in [1, 2, 4, 8] {
            let y = avg_pool(&x, r).unwrap();
            assert_eq!(y.shape(), Shape::new(2, 3, 8 / r, 8 / r));
            assert!(y.data().iter().all(|&v| (v - 0.37).abs() < 1e-15));
        }
    }

    #[test]
    fn rate_one_is_identity() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 2, 3, 5), |_, c, h, w| (c * 15 + h * 5 + w) as f64);
        assert_eq!(avg_pool(&x, 1).unwrap(), x);
    }

    #[test]
    fn ramp_pools_to_its_mean() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 1, 4, 4), |_, _, h, w| (h * 4 + w) as f64);
        let mut total = 0.0;
        for v in x.data() {
            total += v;
        }
        let y = avg_pool(&x, 4).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.item(), total / 16.0);
        assert_eq!(y.item(), 7.5);
    }

    #[test]
    fn indivisible_size_is_rejected() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 6, 8));
        assert!(avg_pool(&x, 4).is_err());
    }
}
