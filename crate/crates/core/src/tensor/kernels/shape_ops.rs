use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

pub fn concat_shape(shapes: &[Shape]) -> Result<Shape> {
    let Some(first) = shapes.first() else {
        return Err(Error::shape("concat_channels", "no inputs"));
    };
    let mut c = 0;
    for s in shapes {
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                lhs: *first,
                rhs: *s,
            });
        }
        c += s.c;
    }
    Ok(Shape::new(first.n, c, first.h, first.w))
}

/// Concatenates along the channel axis, preserving argument order.
pub fn concat_channels<T: Element>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let shapes: Vec<Shape> = inputs.iter().map(|t| t.shape()).collect();
    let out = concat_shape(&shapes)?;
    let mut data = Vec::with_capacity(out.numel());
    for n in 0..out.n {
        for t in inputs {
            let item = t.shape().item();
            data.extend_from_slice(&t.data()[n * item..(n + 1) * item]);
        }
    }
    Ok(Tensor::from_parts(out, data))
}

/// Splits an upstream gradient of a concatenation back into per-input pieces.
pub fn concat_backward<T: Element>(shapes: &[Shape], dy: &[T]) -> Vec<Vec<T>> {
    let mut parts: Vec<Vec<T>> = shapes.iter().map(|s| Vec::with_capacity(s.numel())).collect();
    let n_items = shapes.first().map_or(0, |s| s.n);
    let mut offset = 0;
    for _ in 0..n_items {
        for (s, part) in shapes.iter().zip(parts.iter_mut()) {
            part.extend_from_slice(&dy[offset..offset + s.item()]);
            offset += s.item();
        }
    }
    parts
}

pub fn slice_channels<T: Element>(x: &Tensor<T>, start: usize, end: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if start >= end || end > s.c {
        return Err(Error::shape(
            "slice_channels",
            format!("range {start}..{end} is invalid for {s}"),
        ));
    }
    let out = Shape::new(s.n, end - start, s.h, s.w);
    let mut data = Vec::with_capacity(out.numel());
    for n in 0..s.n {
        data.extend_from_slice(&x.data()[s.index(n, start, 0, 0)..s.index(n, end - 1, 0, 0) + s.plane()]);
    }
    Ok(Tensor::from_parts(out, data))
}

pub fn slice_channels_backward<T: Element>(in_shape: Shape, start: usize, end: usize, dy: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); in_shape.numel()];
    let width = (end - start) * in_shape.plane();
    for n in 0..in_shape.n {
        let at = in_shape.index(n, start, 0, 0);
        dx[at..at + width].copy_from_slice(&dy[n * width..(n + 1) * width]);
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_slice_recovers_inputs() {
        let a = Tensor::<f64>::from_fn(Shape::new(2, 1, 3, 3), |n, _, h, w| (n * 9 + h * 3 + w) as f64);
        let b = Tensor::<f64>::from_fn(Shape::new(2, 2, 3, 3), |n, c, h, w| -((n * 18 + c * 9 + h * 3 + w) as f64));
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), Shape::new(2, 3, 3, 3));
        assert_eq!(slice_channels(&cat, 0, 1).unwrap(), a);
        assert_eq!(slice_channels(&cat, 1, 3).unwrap(), b);
    }

    #[test]
    fn single_input_concat_is_identity() {
        let a = Tensor::<f32>::from_fn(Shape::new(1, 2, 2, 2), |_, c, h, w| (c * 4 + h * 2 + w) as f32);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
    }

    #[test]
    fn spatial_mismatch_rejected() {
        let a = Tensor::<f32>::zeros(Shape::new(1, 1, 3, 3));
        let b = Tensor::<f32>::zeros(Shape::new(1, 1, 3, 4));
        assert!(concat_channels(&[&a, &b]).is_err());
    }

    #[test]
    fn backward_splits_in_order() {
        let shapes = [Shape::new(2, 1, 1, 2), Shape::new(2, 2, 1, 2)];
        let dy: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let parts = concat_backward(&shapes, &dy);
        assert_eq!(parts[0], vec![0.0, 1.0, 6.0, 7.0]);
        assert_eq!(parts[1], vec![2.0, 3.0, 4.0, 5.0, 8.0, 9.0, 10.0, 11.0]);
    }
}
