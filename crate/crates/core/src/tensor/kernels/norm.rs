//! Batch normalisation over (N, H, W) per channel.

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Running statistics updated in training mode.
#[derive(Debug)]
pub struct RunningStats<'a, T> {
    pub mean: &'a mut [T],
    pub var: &'a mut [T],
    pub momentum: f64,
}

/// Values saved by the forward pass for the adjoint.
#[derive(Clone, Debug)]
pub struct BatchNormSaved<T> {
    /// Normalised input x̂.
    pub x_hat: Vec<T>,
    /// 1/sqrt(var + eps) per channel.
    pub inv_std: Vec<T>,
    pub training: bool,
}

fn check<T: Element>(x: Shape, scale: &[T], shift: &[T]) -> Result<()> {
    if scale.len() != x.c || shift.len() != x.c {
        return Err(Error::shape(
            "batch_norm",
            format!("input {x} has {} channels but parameters have {}/{}", x.c, scale.len(), shift.len()),
        ));
    }
    Ok(())
}

/// Training mode normalises with batch statistics (biased variance) and updates
/// `running` with the unbiased variance; inference mode reads `running`.
pub fn batch_norm<T: Element>(
    x: &Tensor<T>,
    scale: &[T],
    shift: &[T],
    running: RunningStats<'_, T>,
    eps: f64,
    training: bool,
) -> Result<(Tensor<T>, BatchNormSaved<T>)> {
    let s = x.shape();
    check(x.shape(), scale, shift)?;
    if running.mean.len() != s.c || running.var.len() != s.c {
        return Err(Error::shape("batch_norm", "running statistics have wrong length"));
    }
    let m = s.n * s.plane();
    let mut x_hat = vec![T::zero(); s.numel()];
    let mut inv_std = vec![T::zero(); s.c];
    let mut y = vec![T::zero(); s.numel()];
    for c in 0..s.c {
        let planes = || (0..s.n).map(move |n| s.index(n, c, 0, 0)..s.index(n, c, 0, 0) + s.plane());
        let (mean, var) = if training {
            let mut sum = 0.0;
            for r in planes() {
                sum += x.data()[r].iter().map(|v| v.as_f64()).sum::<f64>();
            }
            let mean = sum / m as f64;
            let mut sq = 0.0;
            for r in planes() {
                sq += x.data()[r].iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>();
            }
            let var = sq / m as f64;
            let unbiased = if m > 1 { sq / (m - 1) as f64 } else { var };
            let mo = running.momentum;
            running.mean[c] = T::from_f64((1.0 - mo) * running.mean[c].as_f64() + mo * mean);
            running.var[c] = T::from_f64((1.0 - mo) * running.var[c].as_f64() + mo * unbiased);
            (mean, var)
        } else {
            (running.mean[c].as_f64(), running.var[c].as_f64().max(0.0))
        };
        let istd = 1.0 / (var + eps).sqrt();
        inv_std[c] = T::from_f64(istd);
        let (mean_t, istd_t) = (T::from_f64(mean), T::from_f64(istd));
        for r in planes() {
            for i in r {
                let xh = (x.data()[i] - mean_t) * istd_t;
                x_hat[i] = xh;
                y[i] = scale[c] * xh + shift[c];
            }
        }
    }
    Ok((Tensor::from_parts(s, y), BatchNormSaved { x_hat, inv_std, training }))
}

/// Returns (dx, dscale, dshift).
pub fn batch_norm_backward<T: Element>(
    shape: Shape,
    scale: &[T],
    saved: &BatchNormSaved<T>,
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let m = (shape.n * shape.plane()) as f64;
    let mut dx = vec![T::zero(); shape.numel()];
    let mut dscale = vec![T::zero(); shape.c];
    let mut dshift = vec![T::zero(); shape.c];
    for c in 0..shape.c {
        let planes = || (0..shape.n).map(move |n| shape.index(n, c, 0, 0)..shape.index(n, c, 0, 0) + shape.plane());
        let (mut sum_dy, mut sum_dy_xh) = (0.0, 0.0);
        for r in planes() {
            for i in r {
                sum_dy += dy[i].as_f64();
                sum_dy_xh += (dy[i] * saved.x_hat[i]).as_f64();
            }
        }
        dscale[c] = T::from_f64(sum_dy_xh);
        dshift[c] = T::from_f64(sum_dy);
        let k = scale[c] * saved.inv_std[c];
        if saved.training {
            let (mean_dy, mean_dy_xh) = (T::from_f64(sum_dy / m), T::from_f64(sum_dy_xh / m));
            for r in planes() {
                for i in r {
                    dx[i] = k * (dy[i] - mean_dy - saved.x_hat[i] * mean_dy_xh);
                }
            }
        } else {
            for r in planes() {
                for i in r {
                    dx[i] = k * dy[i];
                }
            }
        }
    }
    (dx, dscale, dshift)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn training_mode_standardises_each_channel() {
        let s = Shape::new(2, 3, 4, 4);
        let x = Tensor::<f64>::from_fn(s, |n, c, h, w| ((n * 7 + c * 3 + h * 5 + w) as f64).sin() * (c + 1) as f64 + c as f64);
        let (mut rm, mut rv) = (vec![0.0; 3], vec![1.0; 3]);
        let running = RunningStats { mean: &mut rm, var: &mut rv, momentum: 0.1 };
        let (y, _) = batch_norm(&x, &[1.0; 3], &[0.0; 3], running, 1e-5, true).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|n| (0..16).map(move |i| (n, i)))
                .map(|(n, i)| y.get(n, c, i / 4, i % 4))
                .collect();
            let mean = vals.iter().sum::<f64>() / 32.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
        assert!(rm.iter().zip([0.0, 1.0, 2.0]).all(|(m, c)| (m - 0.1 * c).abs() < 0.1));
    }

    #[test]
    fn zero_scale_outputs_shift() {
        let s = Shape::new(1, 2, 3, 3);
        let x = Tensor::<f64>::from_fn(s, |_, c, h, w| (c + h * w) as f64);
        let (mut rm, mut rv) = (vec![0.0; 2], vec![1.0; 2]);
        let running = RunningStats { mean: &mut rm, var: &mut rv, momentum: 0.1 };
        let (y, _) = batch_norm(&x, &[0.0, 0.0], &[0.5, -2.0], running, 1e-5, true).unwrap();
        for h in 0..3 {
            assert_eq!(y.get(0, 0, h, 1), 0.5);
            assert_eq!(y.get(0, 1, h, 2), -2.0);
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 2, 2));
        let (mut rm, mut rv) = (vec![0.0; 2], vec![1.0; 2]);
        let running = RunningStats { mean: &mut rm, var: &mut rv, momentum: 0.1 };
        assert!(batch_norm(&x, &[1.0; 2], &[0.0; 2], running, 1e-5, true).is_err());
    }
}
