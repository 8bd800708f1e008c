use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{DatasetManifest, Image, ImagePair};
use crate::error::{Error, Result};
use crate::metrics::{capped_psnr, mean_quality, quality_per_item, Colorspace, Quality};
use crate::nn::{Ctx, JdNet};
use crate::tensor::kernels::ssim::SsimConfig;
use crate::tensor::{Element, Graph, ParamStore, Shape, Tensor};

/// Published full-scale results on Rain100H for the same architecture, shown next
/// to desk-scale numbers for context. Columns: label, PSNR, SSIM, printed decimals.
pub const REFERENCE_RESULTS: [(&str, f64, f64, usize); 4] = [
    ("JDNet (R3), Rain100H", 30.02, 0.92, 2),
    ("ablation R1", 29.3357, 0.9130, 4),
    ("ablation R2", 30.0307, 0.9219, 4),
    ("ablation R3", 30.0160, 0.9221, 4),
];

/// Network output for one batch, cropped back to the input size.
#[derive(Clone, Debug)]
pub struct Prediction {
    /// `o − r_hat`, not clamped.
    pub b_hat: Tensor<f32>,
    pub r_hat: Tensor<f32>,
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let i = i % period;
    if i < n { i } else { period - i }
}

/// Pads bottom and right by mirror reflection (edge sample not repeated) up to the
/// next multiple of `multiple`.
pub fn reflect_pad<T: Element>(t: &Tensor<T>, multiple: usize) -> Tensor<T> {
    let s = t.shape();
    let (h, w) = (s.h.div_ceil(multiple) * multiple, s.w.div_ceil(multiple) * multiple);
    if (h, w) == (s.h, s.w) {
        return t.clone();
    }
    Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, y, x| t.get(n, c, reflect(y, s.h), reflect(x, s.w)))
}

/// Top-left `h×w` window of every plane.
pub fn crop_to<T: Element>(t: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let s = t.shape();
    if (h, w) == (s.h, s.w) {
        return t.clone();
    }
    Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, y, x| t.get(n, c, y, x))
}

/// Inference pass with running normalisation statistics; arbitrary spatial sizes are
/// reflect-padded to the network's size multiple and cropped back.
pub fn predict(net: &JdNet, store: &mut ParamStore<f32>, o: &Tensor<f32>) -> Result<Prediction> {
    let s = o.shape();
    let padded = reflect_pad(o, net.cfg.size_multiple());
    let mut g = Graph::inference();
    let mut ctx = Ctx::new(&mut g, store, false);
    let input = ctx.graph.input(padded);
    let out = net.forward(&mut ctx, input)?;
    let r_hat = crop_to(g.value(out.r_hat), s.h, s.w);
    let b_hat = Tensor::new(s, o.data().iter().zip(r_hat.data()).map(|(&a, &r)| a - r).collect())?;
    Ok(Prediction { b_hat, r_hat })
}

pub fn clamp_unit<T: Element>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| v.max(T::zero()).min(T::one()))
}

/// Derained image (clamped) and the raw rain-streak prediction for one image.
pub fn derain_image(net: &JdNet, store: &mut ParamStore<f32>, img: &Image) -> Result<(Image, Tensor<f32>)> {
    let p = predict(net, store, &img.to_tensor())?;
    Ok((Image::from_tensor(&clamp_unit(&p.b_hat), 0)?, p.r_hat))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub id: String,
    /// Capped at [`crate::metrics::PSNR_CAP`].
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// `(id, message)` for pairs that could not be scored.
    pub failures: Vec<(String, String)>,
    pub colorspace: Colorspace,
}

impl EvalReport {
    pub fn mean(&self) -> Quality {
        let items: Vec<Quality> = self.rows.iter().map(|r| Quality { psnr: r.psnr, ssim: r.ssim }).collect();
        mean_quality(&items)
    }

    /// `id,psnr,ssim` rows followed by a `mean` row; values use shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,psnr,ssim\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", r.id, r.psnr, r.ssim);
        }
        let m = self.mean();
        let _ = writeln!(s, "mean,{},{}", m.psnr, m.ssim);
        s
    }

    pub fn summary(&self) -> String {
        let m = self.mean();
        let mut s = format!(
            "{} images ({}), mean PSNR {:.4} dB, mean SSIM {:.4}\n",
            self.rows.len(),
            self.colorspace,
            m.psnr,
            m.ssim
        );
        if !self.failures.is_empty() {
            let _ = writeln!(s, "{} failed:", self.failures.len());
            for (id, e) in &self.failures {
                let _ = writeln!(s, "  {id}: {e}");
            }
        }
        s.push_str("reference values (full-scale training, PSNR / SSIM):\n");
        for (label, psnr, ssim, d) in REFERENCE_RESULTS {
            let _ = writeln!(s, "  {label}: {psnr:.d$} / {ssim:.d$}");
        }
        s
    }
}

/// Scores an estimate against its reference image.
pub fn score(id: &str, estimate: &Image, reference: &Image, space: Colorspace) -> Result<EvalRow> {
    let q = quality_per_item(
        &estimate.to_tensor::<f64>(),
        &reference.to_tensor::<f64>(),
        space,
        &SsimConfig::default(),
    )?[0];
    Ok(EvalRow { id: id.to_string(), psnr: capped_psnr(q.psnr), ssim: q.ssim })
}

/// What to compare against the clean image of each pair.
pub enum Estimator<'a> {
    /// The network's derained output.
    Network { net: &'a JdNet, store: &'a ParamStore<f32> },
    /// The rainy input itself (no deraining).
    Identity,
}

/// Scores every pair of `manifest`; unreadable pairs become failure entries.
pub fn evaluate(manifest: &DatasetManifest, estimator: Estimator<'_>, space: Colorspace) -> EvalReport {
    let outcomes: Vec<Result<EvalRow>> = (0..manifest.len())
        .into_par_iter()
        .map(|i| {
            let pair = manifest.load_pair(i)?;
            score_pair(&pair, &estimator, space)
        })
        .collect();
    let mut report = EvalReport { colorspace: space, ..Default::default() };
    for (entry, outcome) in manifest.pairs.iter().zip(outcomes) {
        match outcome {
            Ok(row) => report.rows.push(row),
            Err(e) => report.failures.push((entry.id.clone(), e.to_string())),
        }
    }
    report
}

pub fn score_pair(pair: &ImagePair, estimator: &Estimator<'_>, space: Colorspace) -> Result<EvalRow> {
    match estimator {
        Estimator::Identity => score(&pair.id, &pair.rainy, &pair.clean, space),
        Estimator::Network { net, store } => {
            let mut store = (*store).clone();
            let (b_hat, _) = derain_image(net, &mut store, &pair.rainy)?;
            score(&pair.id, &b_hat, &pair.clean, space)
        }
    }
}

impl EvalReport {
    pub fn ensure_complete(&self) -> Result<()> {
        if self.failures.is_empty() {
            Ok(())
        } else {
            Err(Error::Data(format!("{} of {} pairs failed", self.failures.len(), self.failures.len() + self.rows.len())))
        }
    }
}
