use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed::{derive, Stream};
use crate::tensor::{Element, Shape, Tensor};

use super::{procedural_clean, synthesize_rain_with, DatasetManifest, Image, ImagePair, RainSynthConfig};

/// Uniform top-left corner `(x, y)` of a `size`×`size` window.
pub fn crop_offset(width: usize, height: usize, size: usize, rng: &mut impl Rng) -> Result<(usize, usize)> {
    if width < size || height < size {
        return Err(Error::Data(format!("image {width}×{height} is smaller than the {size}×{size} crop")));
    }
    Ok((rng.random_range(0..=width - size), rng.random_range(0..=height - size)))
}

pub fn random_crop(pair: &ImagePair, size: usize, rng: &mut impl Rng) -> Result<ImagePair> {
    let (x, y) = crop_offset(pair.width(), pair.height(), size, rng)
        .map_err(|e| Error::Data(format!("pair `{}`: {e}", pair.id)))?;
    Ok(ImagePair {
        id: pair.id.clone(),
        rainy: pair.rainy.crop(x, y, size, size)?,
        clean: pair.clean.crop(x, y, size, size)?,
    })
}

/// Stacks pairs into `(rainy, clean)` tensors of shape `(N, 3, H, W)`.
pub fn to_tensor<T: Element>(batch: &[ImagePair]) -> Result<(Tensor<T>, Tensor<T>)> {
    let first = batch.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    let (w, h) = (first.width(), first.height());
    if let Some(p) = batch.iter().find(|p| (p.width(), p.height()) != (w, h)) {
        return Err(Error::Data(format!(
            "mixed sizes in batch: `{}` is {}×{}, `{}` is {w}×{h}",
            p.id,
            p.width(),
            p.height(),
            first.id
        )));
    }
    let stack = |get: &dyn Fn(&ImagePair) -> &Image| {
        let mut data = Vec::with_capacity(batch.len() * 3 * h * w);
        for p in batch {
            data.extend(channel_first::<T>(get(p)));
        }
        Tensor::new(Shape::new(batch.len(), 3, h, w), data)
    };
    Ok((stack(&|p| &p.rainy)?, stack(&|p| &p.clean)?))
}

fn channel_first<T: Element>(img: &Image) -> impl Iterator<Item = T> + '_ {
    (0..3).flat_map(move |c| img.data[c..].iter().step_by(3).map(|&v| T::from_f64(v as f64)))
}

/// Visiting order of `n` items in a given epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(seed, Stream::Shuffle, epoch)));
    order
}

/// Fully loaded image pairs.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub pairs: Vec<ImagePair>,
}

impl Dataset {
    pub fn new(pairs: Vec<ImagePair>) -> Self {
        Dataset { pairs }
    }

    pub fn from_manifest(manifest: &DatasetManifest) -> Result<Self> {
        let pairs = (0..manifest.len()).into_par_iter().map(|i| manifest.load_pair(i)).collect::<Result<_>>()?;
        Ok(Dataset { pairs })
    }

    /// `count` procedural backgrounds with synthesized rain; ids are `001`, `002`, ...
    pub fn synthetic(count: usize, width: usize, height: usize, cfg: &RainSynthConfig) -> Result<Self> {
        let cleans = (0..count)
            .map(|i| {
                let img = procedural_clean(width, height, derive(cfg.seed, Stream::Procedural, i as u64));
                (format!("{:03}", i + 1), img)
            })
            .collect();
        Self::rain_over(cleans, cfg)
    }

    /// Synthesizes rain over each clean image; item `i` draws from its own generator
    /// derived from `cfg.seed`, so results do not depend on thread count.
    pub fn rain_over(cleans: Vec<(String, Image)>, cfg: &RainSynthConfig) -> Result<Self> {
        cfg.validate()?;
        let pairs = cleans
            .into_par_iter()
            .enumerate()
            .map(|(i, (id, clean))| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, Stream::Synth, i as u64));
                let rainy = synthesize_rain_with(&clean, cfg, &mut rng)?;
                ImagePair::new(id, rainy, clean)
            })
            .collect::<Result<_>>()?;
        Ok(Dataset { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// One random crop per pair in shuffled order, grouped into batches of at most
    /// `batch_size`.
    pub fn epoch_batches<T: Element>(
        &self,
        seed: u64,
        epoch: u64,
        batch_size: usize,
        crop: usize,
    ) -> Result<Vec<(Tensor<T>, Tensor<T>)>> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, Stream::Crop, epoch));
        let crops = epoch_order(self.len(), seed, epoch)
            .into_iter()
            .map(|i| random_crop(&self.pairs[i], crop, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        crops.chunks(batch_size).map(to_tensor).collect()
    }
}
