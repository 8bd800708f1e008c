//! Kernels for local pairwise self-attention over a square footprint.
//!
//! Attention maps are laid out as `(N, G·P, H, W)`, i.e. a
//! `(N, groups, positions, H, W)` array flattened into four axes, where
//! position `p` of a `k×k` footprint is the neighbour offset
//! `(p / k − k/2, p % k − k/2)`. Neighbours that fall outside the image are
//! treated as zero-padded features and are excluded from normalisation.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// A `k×k` neighbourhood (k odd) over an `h×w` grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Footprint {
    pub k: usize,
    pub h: usize,
    pub w: usize,
}

impl Footprint {
    pub fn new(k: usize, h: usize, w: usize) -> Result<Self> {
        if k == 0 || k.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("footprint {k} must be odd and positive")));
        }
        if k > 2 * h.min(w) + 1 {
            return Err(Error::InvalidArgument(format!(
                "footprint {k} exceeds 2·min(H, W) + 1 for a {h}x{w} map"
            )));
        }
        Ok(Footprint { k, h, w })
    }

    pub fn positions(&self) -> usize {
        self.k * self.k
    }

    pub fn offset(&self, p: usize) -> (isize, isize) {
        let r = (self.k / 2) as isize;
        ((p / self.k) as isize - r, (p % self.k) as isize - r)
    }

    /// Rows `y` whose neighbour `y + dy` lies inside the grid.
    pub fn rows(&self, dy: isize) -> Range<usize> {
        let lo = (-dy).max(0) as usize;
        let hi = (self.h as isize - dy).clamp(0, self.h as isize) as usize;
        lo..hi.max(lo)
    }

    /// Columns `x` whose neighbour `x + dx` lies inside the grid.
    pub fn cols(&self, dx: isize) -> Range<usize> {
        let lo = (-dx).max(0) as usize;
        let hi = (self.w as isize - dx).clamp(0, self.w as isize) as usize;
        lo..hi.max(lo)
    }

    pub fn is_valid(&self, p: usize, y: usize, x: usize) -> bool {
        let (dy, dx) = self.offset(p);
        self.rows(dy).contains(&y) && self.cols(dx).contains(&x)
    }
}

/// Weights of the relation-to-logit map γ: a 1×1 convolution, LeakyReLU, and a second 1×1 convolution.
#[derive(Clone, Copy, Debug)]
pub struct GammaWeights<'a, T> {
    /// `(J, C')` row-major.
    pub w1: &'a [T],
    pub b1: &'a [T],
    /// `(G, J)` row-major.
    pub w2: &'a [T],
    pub b2: Option<&'a [T]>,
    pub hidden: usize,
    pub groups: usize,
    pub slope: T,
}

fn axpy<T: Element>(y: &mut [T], a: T, x: &[T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

fn mul_acc<T: Element>(acc: &mut [T], a: &[T], b: &[T]) {
    for ((s, &a), &b) in acc.iter_mut().zip(a).zip(b) {
        *s += a * b;
    }
}

fn check_pair(phi: Shape, psi: Shape) -> Result<()> {
    crate::tensor::ensure_same_shape("pairwise_logits", phi, psi)
}

fn check_gamma<T>(c: usize, g: &GammaWeights<'_, T>) -> Result<()> {
    let ok = g.w1.len() == g.hidden * c
        && g.b1.len() == g.hidden
        && g.w2.len() == g.groups * g.hidden
        && g.b2.is_none_or(|b| b.len() == g.groups);
    if !ok {
        return Err(Error::shape("pairwise_logits", "γ weight sizes do not match channel/group counts"));
    }
    Ok(())
}

/// Row-local scratch for recomputing the relation and hidden activations.
struct RowScratch<T> {
    delta: Vec<T>,
    pre: Vec<T>,
    hidden: Vec<T>,
}

impl<T: Element> RowScratch<T> {
    fn new(c: usize, j: usize, w: usize) -> Self {
        RowScratch {
            delta: vec![T::zero(); c * w],
            pre: vec![T::zero(); j * w],
            hidden: vec![T::zero(); j * w],
        }
    }

    /// Fills δ = φ(x_i) − ψ(x_j), the pre-activation and the hidden layer for one row segment.
    #[allow(clippy::too_many_arguments)]
    fn compute(
        &mut self,
        phi_n: &[T],
        psi_n: &[T],
        s: Shape,
        y: usize,
        ny: usize,
        cols: &Range<usize>,
        dx: isize,
        g: &GammaWeights<'_, T>,
    ) -> usize {
        let len = cols.len();
        let nx0 = (cols.start as isize + dx) as usize;
        for c in 0..s.c {
            let a = &phi_n[c * s.plane() + y * s.w + cols.start..][..len];
            let b = &psi_n[c * s.plane() + ny * s.w + nx0..][..len];
            for ((d, &a), &b) in self.delta[c * s.w..][..len].iter_mut().zip(a).zip(b) {
                *d = a - b;
            }
        }
        for j in 0..g.hidden {
            let pre = &mut self.pre[j * s.w..][..len];
            pre.fill(g.b1[j]);
            for c in 0..s.c {
                axpy(pre, g.w1[j * s.c + c], &self.delta[c * s.w..][..len]);
            }
            for (h, &a) in self.hidden[j * s.w..][..len].iter_mut().zip(pre.iter()) {
                *h = if a >= T::zero() { a } else { a * g.slope };
            }
        }
        len
    }
}

/// Attention logits γ(φ(x_i) − ψ(x_j)) for every footprint neighbour j of every position i.
///
/// Output shape `(N, G·P, H, W)`; entries for out-of-grid neighbours are zero.
pub fn pairwise_logits<T: Element>(
    phi: &Tensor<T>,
    psi: &Tensor<T>,
    gamma: &GammaWeights<'_, T>,
    k: usize,
) -> Result<Tensor<T>> {
    let s = phi.shape();
    check_pair(s, psi.shape())?;
    check_gamma(s.c, gamma)?;
    let fp = Footprint::new(k, s.h, s.w)?;
    let p_count = fp.positions();
    let out_shape = Shape::new(s.n, gamma.groups * p_count, s.h, s.w);
    let mut out = vec![T::zero(); out_shape.numel()];
    out.par_chunks_mut(out_shape.item())
        .zip(phi.data().par_chunks(s.item()))
        .zip(psi.data().par_chunks(s.item()))
        .for_each(|((out_n, phi_n), psi_n)| {
            let mut scratch = RowScratch::new(s.c, gamma.hidden, s.w);
            for p in 0..p_count {
                let (dy, dx) = fp.offset(p);
                let cols = fp.cols(dx);
                for y in fp.rows(dy) {
                    let ny = (y as isize + dy) as usize;
                    let len = scratch.compute(phi_n, psi_n, s, y, ny, &cols, dx, gamma);
                    for gi in 0..gamma.groups {
                        let base = (gi * p_count + p) * s.plane() + y * s.w + cols.start;
                        let o = &mut out_n[base..][..len];
                        o.fill(gamma.b2.map_or(T::zero(), |b| b[gi]));
                        for j in 0..gamma.hidden {
                            axpy(o, gamma.w2[gi * gamma.hidden + j], &scratch.hidden[j * s.w..][..len]);
                        }
                    }
                }
            }
        });
    Ok(Tensor::from_parts(out_shape, out))
}

/// Sign (`true` = negative) of every hidden pre-activation of γ, in a fixed traversal order.
pub fn pairwise_hidden_signs<T: Element>(
    phi: &Tensor<T>,
    psi: &Tensor<T>,
    gamma: &GammaWeights<'_, T>,
    k: usize,
) -> Result<Vec<bool>> {
    let s = phi.shape();
    check_pair(s, psi.shape())?;
    check_gamma(s.c, gamma)?;
    let fp = Footprint::new(k, s.h, s.w)?;
    let mut scratch = RowScratch::new(s.c, gamma.hidden, s.w);
    let mut signs = Vec::new();
    for (phi_n, psi_n) in phi.data().chunks(s.item()).zip(psi.data().chunks(s.item())) {
        for p in 0..fp.positions() {
            let (dy, dx) = fp.offset(p);
            let cols = fp.cols(dx);
            for y in fp.rows(dy) {
                let ny = (y as isize + dy) as usize;
                let len = scratch.compute(phi_n, psi_n, s, y, ny, &cols, dx, gamma);
                for j in 0..gamma.hidden {
                    signs.extend(scratch.pre[j * s.w..][..len].iter().map(|&v| v < T::zero()));
                }
            }
        }
    }
    Ok(signs)
}

/// Gradients of [`pairwise_logits`].
#[derive(Debug)]
pub struct PairwiseGrads<T> {
    pub phi: Vec<T>,
    pub psi: Vec<T>,
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

pub fn pairwise_logits_backward<T: Element>(
    phi: &Tensor<T>,
    psi: &Tensor<T>,
    gamma: &GammaWeights<'_, T>,
    k: usize,
    dlogits: &[T],
) -> Result<PairwiseGrads<T>> {
    let s = phi.shape();
    check_pair(s, psi.shape())?;
    check_gamma(s.c, gamma)?;
    let fp = Footprint::new(k, s.h, s.w)?;
    let p_count = fp.positions();
    let (jn, gn, c_n) = (gamma.hidden, gamma.groups, s.c);
    let item_out = gn * p_count * s.plane();
    if dlogits.len() != s.n * item_out {
        return Err(Error::shape("pairwise_logits backward", "upstream gradient has wrong length"));
    }
    let mut dphi = vec![T::zero(); s.numel()];
    let mut dpsi = vec![T::zero(); s.numel()];

    // Per-image weight-gradient partials, accumulated element-wise along each row
    // and reduced once per image.
    let partials: Vec<[Vec<T>; 4]> = dphi
        .par_chunks_mut(s.item())
        .zip(dpsi.par_chunks_mut(s.item()))
        .zip(phi.data().par_chunks(s.item()))
        .zip(psi.data().par_chunks(s.item()))
        .zip(dlogits.par_chunks(item_out))
        .map(|((((dphi_n, dpsi_n), phi_n), psi_n), dl_n)| {
            let w = s.w;
            let mut scratch = RowScratch::new(c_n, jn, w);
            let mut dh = vec![T::zero(); jn * w];
            let mut ddelta = vec![T::zero(); c_n * w];
            let mut acc_w1 = vec![T::zero(); jn * c_n * w];
            let mut acc_b1 = vec![T::zero(); jn * w];
            let mut acc_w2 = vec![T::zero(); gn * jn * w];
            let mut acc_b2 = vec![T::zero(); gn * w];
            for p in 0..p_count {
                let (dy, dx) = fp.offset(p);
                let cols = fp.cols(dx);
                for y in fp.rows(dy) {
                    let ny = (y as isize + dy) as usize;
                    let len = scratch.compute(phi_n, psi_n, s, y, ny, &cols, dx, gamma);
                    for j in 0..jn {
                        dh[j * w..][..len].fill(T::zero());
                    }
                    for gi in 0..gn {
                        let dl = &dl_n[(gi * p_count + p) * s.plane() + y * w + cols.start..][..len];
                        for (a, &d) in acc_b2[gi * w..][..len].iter_mut().zip(dl) {
                            *a += d;
                        }
                        for j in 0..jn {
                            mul_acc(&mut acc_w2[(gi * jn + j) * w..][..len], dl, &scratch.hidden[j * w..][..len]);
                            axpy(&mut dh[j * w..][..len], gamma.w2[gi * jn + j], dl);
                        }
                    }
                    // dh → d(pre-activation), in place
                    for j in 0..jn {
                        let pre = &scratch.pre[j * w..][..len];
                        for (d, &a) in dh[j * w..][..len].iter_mut().zip(pre) {
                            if a < T::zero() {
                                *d *= gamma.slope;
                            }
                        }
                        for (a, &d) in acc_b1[j * w..][..len].iter_mut().zip(&dh[j * w..][..len]) {
                            *a += d;
                        }
                    }
                    for c in 0..c_n {
                        let dd = &mut ddelta[c * w..][..len];
                        dd.fill(T::zero());
                        for j in 0..jn {
                            axpy(dd, gamma.w1[j * c_n + c], &dh[j * w..][..len]);
                            mul_acc(
                                &mut acc_w1[(j * c_n + c) * w..][..len],
                                &dh[j * w..][..len],
                                &scratch.delta[c * w..][..len],
                            );
                        }
                        let nx0 = (cols.start as isize + dx) as usize;
                        for (t, &d) in dphi_n[c * s.plane() + y * w + cols.start..][..len].iter_mut().zip(dd.iter()) {
                            *t += d;
                        }
                        for (t, &d) in dpsi_n[c * s.plane() + ny * w + nx0..][..len].iter_mut().zip(dd.iter()) {
                            *t -= d;
                        }
                    }
                }
            }
            let reduce = |acc: &[T]| -> Vec<T> { acc.chunks(w).map(|r| r.iter().copied().sum()).collect() };
            [reduce(&acc_w1), reduce(&acc_b1), reduce(&acc_w2), reduce(&acc_b2)]
        })
        .collect();

    let mut grads = PairwiseGrads {
        phi: dphi,
        psi: dpsi,
        w1: vec![T::zero(); jn * c_n],
        b1: vec![T::zero(); jn],
        w2: vec![T::zero(); gn * jn],
        b2: vec![T::zero(); gn],
    };
    for [w1, b1, w2, b2] in &partials {
        for (dst, src) in [(&mut grads.w1, w1), (&mut grads.b1, b1), (&mut grads.w2, w2), (&mut grads.b2, b2)] {
            dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
        }
    }
    Ok(grads)
}

fn softmax_dims(s: Shape, groups: usize, mask: Option<&Footprint>) -> Result<usize> {
    if groups == 0 || !s.c.is_multiple_of(groups) || s.c == 0 {
        return Err(Error::shape(
            "softmax_over_positions",
            format!("{} channels cannot be split into {groups} groups", s.c),
        ));
    }
    let positions = s.c / groups;
    if let Some(fp) = mask {
        if fp.positions() != positions || fp.h != s.h || fp.w != s.w {
            return Err(Error::shape("softmax_over_positions", "mask does not match the input layout"));
        }
    }
    Ok(positions)
}

/// Visits every valid `(position, row, column range)` of one group block.
fn for_valid_rows(
    positions: usize,
    s: Shape,
    mask: Option<&Footprint>,
    mut f: impl FnMut(usize, usize, Range<usize>),
) {
    for p in 0..positions {
        match mask {
            Some(fp) => {
                let (dy, dx) = fp.offset(p);
                let cols = fp.cols(dx);
                for y in fp.rows(dy) {
                    f(p, y, cols.clone());
                }
            }
            None => {
                for y in 0..s.h {
                    f(p, y, 0..s.w);
                }
            }
        }
    }
}

/// Softmax over the positions axis of a `(N, G, P, H, W)` map, with max-subtraction.
/// Masked entries get weight zero.
pub fn softmax_over_positions<T: Element>(
    x: &Tensor<T>,
    groups: usize,
    mask: Option<&Footprint>,
) -> Result<Tensor<T>> {
    let s = x.shape();
    let positions = softmax_dims(s, groups, mask)?;
    let plane = s.plane();
    let block = positions * plane;
    let mut out = vec![T::zero(); s.numel()];
    out.par_chunks_mut(block)
        .zip(x.data().par_chunks(block))
        .for_each(|(o, xin)| {
            let mut max = vec![T::neg_infinity(); plane];
            let mut sum = vec![T::zero(); plane];
            for_valid_rows(positions, s, mask, |p, y, cols| {
                let (base, row) = (p * plane + y * s.w, y * s.w);
                let src = &xin[base + cols.start..base + cols.end];
                for (m, &v) in max[row + cols.start..row + cols.end].iter_mut().zip(src) {
                    *m = if v > *m { v } else { *m };
                }
            });
            for_valid_rows(positions, s, mask, |p, y, cols| {
                let (base, row) = (p * plane + y * s.w, y * s.w);
                let dst = &mut o[base + cols.start..base + cols.end];
                let src = &xin[base + cols.start..base + cols.end];
                for ((d, &v), &m) in dst.iter_mut().zip(src).zip(&max[row + cols.start..row + cols.end]) {
                    *d = v - m;
                }
                T::exp_in_place(dst);
                for (acc, &e) in sum[row + cols.start..row + cols.end].iter_mut().zip(dst.iter()) {
                    *acc += e;
                }
            });
            for v in sum.iter_mut() {
                *v = v.recip();
            }
            for_valid_rows(positions, s, mask, |p, y, cols| {
                let (base, row) = (p * plane + y * s.w, y * s.w);
                let dst = &mut o[base + cols.start..base + cols.end];
                for (d, &r) in dst.iter_mut().zip(&sum[row + cols.start..row + cols.end]) {
                    *d *= r;
                }
            });
        });
    Ok(Tensor::from_parts(s, out))
}

/// Adjoint of the softmax given its output `y`.
pub fn softmax_over_positions_backward<T: Element>(
    y: &Tensor<T>,
    groups: usize,
    mask: Option<&Footprint>,
    dy: &[T],
) -> Result<Vec<T>> {
    let s = y.shape();
    let positions = softmax_dims(s, groups, mask)?;
    if dy.len() != s.numel() {
        return Err(Error::shape("softmax_over_positions backward", "upstream gradient has wrong length"));
    }
    let plane = s.plane();
    let block = positions * plane;
    let mut dx = vec![T::zero(); s.numel()];
    dx.par_chunks_mut(block)
        .zip(y.data().par_chunks(block))
        .zip(dy.par_chunks(block))
        .for_each(|((dx, y), dy)| {
            let mut dot = vec![T::zero(); plane];
            for_valid_rows(positions, s, mask, |p, row, cols| {
                let (base, r) = (p * plane + row * s.w, row * s.w);
                let ys = &y[base + cols.start..base + cols.end];
                let gs = &dy[base + cols.start..base + cols.end];
                for ((d, &a), &b) in dot[r + cols.start..r + cols.end].iter_mut().zip(ys).zip(gs) {
                    *d += a * b;
                }
            });
            for_valid_rows(positions, s, mask, |p, row, cols| {
                let (base, r) = (p * plane + row * s.w, row * s.w);
                let ys = &y[base + cols.start..base + cols.end];
                let gs = &dy[base + cols.start..base + cols.end];
                let out = &mut dx[base + cols.start..base + cols.end];
                for (((o, &a), &b), &d) in out.iter_mut().zip(ys).zip(gs).zip(&dot[r + cols.start..r + cols.end]) {
                    *o = a * (b - d);
                }
            });
        });
    Ok(dx)
}

fn aggregate_dims(weights: Shape, values: Shape, k: usize, share: usize) -> Result<(Footprint, usize)> {
    let fp = Footprint::new(k, values.h, values.w)?;
    if share == 0 || !values.c.is_multiple_of(share) {
        return Err(Error::shape("footprint_aggregate", format!("{} channels not divisible by share {share}", values.c)));
    }
    let groups = values.c / share;
    let want = Shape::new(values.n, groups * fp.positions(), values.h, values.w);
    if weights != want {
        return Err(Error::ShapeMismatch { op: "footprint_aggregate (weights vs expected)", lhs: weights, rhs: want });
    }
    Ok((fp, groups))
}

/// `y_i = Σ_{j ∈ footprint(i)} α(i, j) ⊙ β(x_j)`, where each weight group scales `share` consecutive channels.
pub fn footprint_aggregate<T: Element>(
    weights: &Tensor<T>,
    values: &Tensor<T>,
    k: usize,
    share: usize,
) -> Result<Tensor<T>> {
    let vs = values.shape();
    let (fp, groups) = aggregate_dims(weights.shape(), vs, k, share)?;
    let p_count = fp.positions();
    let plane = vs.plane();
    let mut out = vec![T::zero(); vs.numel()];
    out.par_chunks_mut(vs.item())
        .zip(values.data().par_chunks(vs.item()))
        .zip(weights.data().par_chunks(groups * p_count * plane))
        .for_each(|((o, v), wt)| {
            for c in 0..vs.c {
                let g = c / share;
                for p in 0..p_count {
                    let (dy, dx) = fp.offset(p);
                    let cols = fp.cols(dx);
                    for y in fp.rows(dy) {
                        let ny = (y as isize + dy) as usize;
                        let nx0 = (cols.start as isize + dx) as usize;
                        let len = cols.len();
                        let dst = &mut o[c * plane + y * vs.w + cols.start..][..len];
                        let a = &wt[(g * p_count + p) * plane + y * vs.w + cols.start..][..len];
                        let b = &v[c * plane + ny * vs.w + nx0..][..len];
                        mul_acc(dst, a, b);
                    }
                }
            }
        });
    Ok(Tensor::from_parts(vs, out))
}

/// Returns (d weights, d values).
pub fn footprint_aggregate_backward<T: Element>(
    weights: &Tensor<T>,
    values: &Tensor<T>,
    k: usize,
    share: usize,
    dy: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    let vs = values.shape();
    let (fp, groups) = aggregate_dims(weights.shape(), vs, k, share)?;
    let p_count = fp.positions();
    let plane = vs.plane();
    let wblock = groups * p_count * plane;
    let mut dw = vec![T::zero(); weights.len()];
    let mut dv = vec![T::zero(); values.len()];
    dw.par_chunks_mut(wblock)
        .zip(dv.par_chunks_mut(vs.item()))
        .zip(values.data().par_chunks(vs.item()))
        .zip(weights.data().par_chunks(wblock))
        .zip(dy.par_chunks(vs.item()))
        .for_each(|((((dw, dv), v), wt), g_out)| {
            for c in 0..vs.c {
                let g = c / share;
                for p in 0..p_count {
                    let (dy_off, dx) = fp.offset(p);
                    let cols = fp.cols(dx);
                    let len = cols.len();
                    for y in fp.rows(dy_off) {
                        let ny = (y as isize + dy_off) as usize;
                        let nx0 = (cols.start as isize + dx) as usize;
                        let up = &g_out[c * plane + y * vs.w + cols.start..][..len];
                        let wi = (g * p_count + p) * plane + y * vs.w + cols.start;
                        let vi = c * plane + ny * vs.w + nx0;
                        mul_acc(&mut dw[wi..][..len], up, &v[vi..][..len]);
                        mul_acc(&mut dv[vi..][..len], up, &wt[wi..][..len]);
                    }
                }
            }
        });
    Ok((dw, dv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn footprint_ranges() {
        let fp = Footprint::new(7, 5, 6).unwrap();
        assert_eq!(fp.positions(), 49);
        assert_eq!(fp.offset(0), (-3, -3));
        assert_eq!(fp.offset(24), (0, 0));
        assert_eq!(fp.offset(48), (3, 3));
        assert_eq!(fp.rows(-3), 3..5);
        assert_eq!(fp.rows(3), 0..2);
        assert_eq!(fp.cols(2), 0..4);
        assert!(fp.is_valid(24, 0, 0));
        assert!(!fp.is_valid(0, 2, 5));
        assert!(fp.is_valid(0, 3, 5));
    }

    #[test]
    fn oversized_footprint_rejected() {
        assert!(Footprint::new(7, 2, 9).is_err());
        assert!(Footprint::new(7, 3, 9).is_ok());
        assert!(Footprint::new(4, 8, 8).is_err());
    }

    #[test]
    fn uniform_logits_give_uniform_weights() {
        let s = Shape::new(1, 2 * 49, 3, 3);
        let x = Tensor::<f64>::full(s, 0.3);
        let y = softmax_over_positions(&x, 2, None).unwrap();
        assert!(y.data().iter().all(|&v| (v - 1.0 / 49.0).abs() < 1e-15));
    }

    #[test]
    fn saturated_logit_takes_all_weight() {
        let s = Shape::new(1, 49, 1, 1);
        let mut x = Tensor::<f64>::zeros(s);
        x.data_mut()[10] = 1000.0;
        let y = softmax_over_positions(&x, 1, None).unwrap();
        assert!((y.data()[10] - 1.0).abs() < 1e-15);
        assert!(y.all_finite());
    }

    #[test]
    fn masked_weights_sum_to_one_over_valid_neighbours() {
        let fp = Footprint::new(3, 4, 5).unwrap();
        let s = Shape::new(2, 2 * 9, 4, 5);
        let x = Tensor::<f64>::from_fn(s, |n, c, h, w| ((n * 31 + c * 7 + h * 3 + w) as f64).sin() * 3.0);
        let y = softmax_over_positions(&x, 2, Some(&fp)).unwrap();
        for n in 0..2 {
            for g in 0..2 {
                for h in 0..4 {
                    for w in 0..5 {
                        let mut total = 0.0;
                        for p in 0..9 {
                            let v = y.get(n, g * 9 + p, h, w);
                            if fp.is_valid(p, h, w) {
                                assert!(v > 0.0);
                            } else {
                                assert_eq!(v, 0.0);
                            }
                            total += v;
                        }
                        assert!((total - 1.0).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
