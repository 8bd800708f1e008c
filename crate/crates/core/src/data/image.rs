use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// An RGB image with interleaved `f32` samples in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Data(format!(
                "image buffer has {} samples, {width}×{height}×3 needs {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Image { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y));
            }
        }
        Image { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn clamp(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Image> {
        if x + width > self.width || y + height > self.height {
            return Err(Error::Data(format!(
                "crop {width}×{height} at ({x}, {y}) exceeds {}×{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for row in y..y + height {
            let start = (row * self.width + x) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Ok(Image { width, height, data })
    }

    /// Channel-first `(1, 3, H, W)` tensor.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::from_fn(Shape::new(1, 3, self.height, self.width), |_, c, y, x| {
            T::from_f64(self.data[(y * self.width + x) * 3 + c] as f64)
        })
    }

    /// Image `n` of a `(N, 3, H, W)` batch.
    pub fn from_tensor<T: Element>(t: &Tensor<T>, n: usize) -> Result<Image> {
        let s = t.shape();
        if s.c != 3 || n >= s.n {
            return Err(Error::shape("image from tensor", format!("cannot take RGB image {n} from {s}")));
        }
        Ok(Image::from_fn(s.w, s.h, |x, y| {
            std::array::from_fn(|c| t.get(n, c, y, x).as_f64() as f32)
        }))
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let bytes = self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, bytes).expect("buffer matches dimensions")
    }

    pub fn from_rgb8(img: &RgbImage) -> Image {
        let data = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        Image { width: img.width() as usize, height: img.height() as usize, data }
    }
}

pub fn load_png(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    Ok(Image::from_rgb8(&img.to_rgb8()))
}

pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    img.to_rgb8()
        .save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}
