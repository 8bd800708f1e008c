//! 2-D cross-correlation via im2col + GEMM.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::element::{gemm, Strides};
use crate::tensor::{Element, Shape, Tensor};

/// Stride and zero padding of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub const fn new(stride: usize, padding: usize) -> Self {
        ConvGeometry { stride, padding }
    }

    /// Zero padding `(k - 1) / 2` that preserves spatial size at stride 1.
    pub const fn same(kernel: usize) -> Self {
        ConvGeometry::new(1, (kernel - 1) / 2)
    }

    fn out_len(&self, len: usize, k: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        if self.stride == 0 || padded < k {
            return None;
        }
        Some((padded - k) / self.stride + 1)
    }
}

pub fn output_shape(input: Shape, weight: Shape, geom: ConvGeometry) -> Result<Shape> {
    if input.c != weight.c {
        return Err(Error::ShapeMismatch {
            op: "conv2d (input channels vs weight C_in)",
            lhs: input,
            rhs: weight,
        });
    }
    let (Some(ho), Some(wo)) = (geom.out_len(input.h, weight.h), geom.out_len(input.w, weight.w))
    else {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {weight} with {geom:?} does not fit input {input}"),
        ));
    };
    Ok(Shape::new(input.n, weight.n, ho, wo))
}

fn is_pointwise(weight: Shape, geom: ConvGeometry) -> bool {
    weight.h == 1 && weight.w == 1 && geom.stride == 1 && geom.padding == 0
}

/// Output columns `ox` whose input column `ox·stride + shift` lies inside `0..w`.
fn valid_cols(wo: usize, w: isize, stride: isize, shift: isize) -> std::ops::Range<usize> {
    let lo = if shift >= 0 { 0 } else { ((-shift + stride - 1) / stride) as usize };
    let hi = if w - 1 - shift < 0 { 0 } else { ((w - 1 - shift) / stride + 1) as usize };
    lo.min(wo)..hi.min(wo).max(lo.min(wo))
}

/// Unfolds one image `(C, H, W)` into columns `(C·kh·kw, Ho·Wo)`.
fn im2col<T: Element>(
    x: &[T],
    in_shape: Shape,
    kh: usize,
    kw: usize,
    out: Shape,
    geom: ConvGeometry,
    cols: &mut [T],
) {
    let (h, w) = (in_shape.h as isize, in_shape.w as isize);
    let (ho, wo) = (out.h, out.w);
    let (s, p) = (geom.stride as isize, geom.padding as isize);
    let mut row = 0;
    for c in 0..in_shape.c {
        let plane = &x[c * in_shape.plane()..(c + 1) * in_shape.plane()];
        for ky in 0..kh as isize {
            for kx in 0..kw as isize {
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = oy as isize * s + ky - p;
                    let dst_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h {
                        dst_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[(iy * w) as usize..((iy + 1) * w) as usize];
                    let valid = valid_cols(wo, w, s, kx - p);
                    dst_row[..valid.start].fill(T::zero());
                    dst_row[valid.end..].fill(T::zero());
                    let first = (valid.start as isize * s + kx - p) as usize;
                    if s == 1 {
                        dst_row[valid.clone()].copy_from_slice(&src[first..first + valid.len()]);
                    } else {
                        for (d, &v) in dst_row[valid].iter_mut().zip(src[first..].iter().step_by(s as usize)) {
                            *d = v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
fn col2im<T: Element>(
    cols: &[T],
    in_shape: Shape,
    kh: usize,
    kw: usize,
    out: Shape,
    geom: ConvGeometry,
    dx: &mut [T],
) {
    let (h, w) = (in_shape.h as isize, in_shape.w as isize);
    let (ho, wo) = (out.h, out.w);
    let (s, p) = (geom.stride as isize, geom.padding as isize);
    let mut row = 0;
    for c in 0..in_shape.c {
        let plane = &mut dx[c * in_shape.plane()..(c + 1) * in_shape.plane()];
        for ky in 0..kh as isize {
            for kx in 0..kw as isize {
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = oy as isize * s + ky - p;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let dst = &mut plane[(iy * w) as usize..((iy + 1) * w) as usize];
                    let valid = valid_cols(wo, w, s, kx - p);
                    let first = (valid.start as isize * s + kx - p) as usize;
                    let g = &src[oy * wo..(oy + 1) * wo][valid.clone()];
                    if s == 1 {
                        for (d, &v) in dst[first..first + valid.len()].iter_mut().zip(g) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[first..].iter_mut().step_by(s as usize).zip(g) {
                            *d += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Images per rayon job, so each worker allocates its column buffer once.
fn per_thread(n: usize) -> usize {
    n.div_ceil(rayon::current_num_threads()).max(1)
}

/// Cross-correlation of `x` with `weight` (`C_out, C_in, kh, kw`) plus an optional per-channel bias.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let (is, ws) = (x.shape(), weight.shape());
    let out = output_shape(is, ws, geom)?;
    if let Some(b) = bias {
        if b.len() != ws.n {
            return Err(Error::ShapeMismatch {
                op: "conv2d (bias vs C_out)",
                lhs: b.shape(),
                rhs: ws,
            });
        }
    }
    let k = ws.c * ws.h * ws.w;
    let spatial = out.plane();
    let pointwise = is_pointwise(ws, geom);
    let mut y = vec![T::zero(); out.numel()];
    y.par_chunks_mut(out.item())
        .zip(x.data().par_chunks(is.item()))
        .with_min_len(per_thread(is.n))
        .for_each_init(
            || if pointwise { Vec::new() } else { vec![T::zero(); k * spatial] },
            |cols, (y_n, x_n)| {
                let b_mat: &[T] = if pointwise {
                    x_n
                } else {
                    im2col(x_n, is, ws.h, ws.w, out, geom, cols);
                    cols
                };
                gemm(
                    ws.n,
                    k,
                    spatial,
                    weight.data(),
                    Strides::row_major(k),
                    b_mat,
                    Strides::row_major(spatial),
                    T::zero(),
                    y_n,
                    Strides::row_major(spatial),
                );
                if let Some(b) = bias {
                    for (co, plane) in y_n.chunks_mut(spatial).enumerate() {
                        let bv = b.data()[co];
                        plane.iter_mut().for_each(|v| *v += bv);
                    }
                }
            },
        );
    Ok(Tensor::from_parts(out, y))
}

/// Gradients of a convolution; each is `None` when not requested.
#[derive(Debug, Default)]
pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

/// Which convolution operands need gradients.
#[derive(Clone, Copy, Debug)]
pub struct ConvNeeds {
    pub input: bool,
    pub weight: bool,
    pub bias: bool,
}

pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    geom: ConvGeometry,
    dy: &[T],
    needs: ConvNeeds,
) -> Result<ConvGrads<T>> {
    let (is, ws) = (x.shape(), weight.shape());
    let out = output_shape(is, ws, geom)?;
    if dy.len() != out.numel() {
        return Err(Error::shape("conv2d backward", "upstream gradient has wrong length"));
    }
    let k = ws.c * ws.h * ws.w;
    let spatial = out.plane();
    let pointwise = is_pointwise(ws, geom);
    let mut grads = ConvGrads::default();

    if needs.input {
        let mut dx = vec![T::zero(); is.numel()];
        dx.par_chunks_mut(is.item())
            .zip(dy.par_chunks(out.item()))
            .with_min_len(per_thread(is.n))
            .for_each_init(
                || if pointwise { Vec::new() } else { vec![T::zero(); k * spatial] },
                |dcols, (dx_n, dy_n)| {
                    // dcols = Wᵀ · dY
                    let target: &mut [T] = if pointwise { dx_n } else { dcols };
                    gemm(
                        k,
                        ws.n,
                        spatial,
                        weight.data(),
                        Strides::transposed(k),
                        dy_n,
                        Strides::row_major(spatial),
                        T::zero(),
                        target,
                        Strides::row_major(spatial),
                    );
                    if !pointwise {
                        col2im(dcols, is, ws.h, ws.w, out, geom, dx_n);
                    }
                },
            );
        grads.input = Some(dx);
    }

    if needs.weight {
        // Accumulated image by image in a fixed order so results do not depend on thread count.
        let mut dw = vec![T::zero(); ws.numel()];
        let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * spatial] };
        for (x_n, dy_n) in x.data().chunks(is.item()).zip(dy.chunks(out.item())) {
            let b_mat: &[T] = if pointwise {
                x_n
            } else {
                im2col(x_n, is, ws.h, ws.w, out, geom, &mut cols);
                &cols
            };
            // dW += dY · colsᵀ
            gemm(
                ws.n,
                spatial,
                k,
                dy_n,
                Strides::row_major(spatial),
                b_mat,
                Strides::transposed(spatial),
                T::one(),
                &mut dw,
                Strides::row_major(k),
            );
        }
        grads.weight = Some(dw);
    }

    if needs.bias {
        let mut db = vec![T::zero(); ws.n];
        for dy_n in dy.chunks(out.item()) {
            for (co, plane) in dy_n.chunks(spatial).enumerate() {
                db[co] += plane.iter().copied().sum::<T>();
            }
        }
        grads.bias = Some(db);
    }
    Ok(grads)
}
