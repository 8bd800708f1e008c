//! Paired rainy/clean image data: PNG I/O, directory manifests, procedural rain
//! synthesis, random crops and batch assembly.

mod batch;
mod image;
mod manifest;
mod synth;

pub use self::image::{load_png, save_png, Image};
pub use batch::{crop_offset, epoch_order, random_crop, to_tensor, Dataset};
pub use manifest::{load_manifest, DatasetManifest, PairEntry, PairPattern, Split};
pub use synth::{procedural_clean, synthesize_rain, synthesize_rain_with, RainSynthConfig, Range};

/// A rainy image and its clean ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub rainy: Image,
    pub clean: Image,
}

impl ImagePair {
    pub fn new(id: impl Into<String>, rainy: Image, clean: Image) -> crate::Result<Self> {
        let id = id.into();
        if (rainy.width, rainy.height) != (clean.width, clean.height) {
            return Err(crate::Error::Data(format!(
                "pair `{id}`: rainy image is {}×{} but clean image is {}×{}",
                rainy.width, rainy.height, clean.width, clean.height
            )));
        }
        Ok(ImagePair { id, rainy, clean })
    }

    pub fn width(&self) -> usize {
        self.rainy.width
    }

    pub fn height(&self) -> usize {
        self.rainy.height
    }
}
