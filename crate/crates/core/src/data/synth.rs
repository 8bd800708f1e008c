use std::fmt;
use std::str::FromStr;

use rand::distr::uniform::SampleUniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Image, ImagePair};

/// Closed interval `[min, max]`, written `min..max` or as a single value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[T; 2]", into = "[T; 2]", bound(serialize = "T: Copy + Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct Range<T> {
    pub min: T,
    pub max: T,
}

impl<T> From<[T; 2]> for Range<T> {
    fn from([min, max]: [T; 2]) -> Self {
        Range { min, max }
    }
}

impl<T> From<Range<T>> for [T; 2] {
    fn from(r: Range<T>) -> Self {
        [r.min, r.max]
    }
}

impl<T: PartialOrd + Copy + SampleUniform> Range<T> {
    pub fn new(min: T, max: T) -> Self {
        Range { min, max }
    }

    pub fn fixed(v: T) -> Self {
        Range { min: v, max: v }
    }

    pub fn is_valid(&self) -> bool {
        self.min <= self.max
    }

    pub fn sample(&self, rng: &mut impl Rng) -> T {
        rng.random_range(self.min..=self.max)
    }
}

impl<T: FromStr> FromStr for Range<T> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |v: &str| {
            v.trim().parse::<T>().map_err(|_| Error::InvalidArgument(format!("bad range bound `{v}` in `{s}`")))
        };
        match s.split_once("..") {
            Some((a, b)) => Ok(Range { min: parse(a)?, max: parse(b)? }),
            None => {
                let (min, max) = (parse(s)?, parse(s)?);
                Ok(Range { min, max })
            }
        }
    }
}

impl<T: fmt::Display> fmt::Display for Range<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.min, self.max)
    }
}

/// Parameters of the additive line-streak rain model. Angles are in degrees from
/// the horizontal axis, so 90 is vertical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RainSynthConfig {
    pub streak_count: Range<u32>,
    pub angle: Range<f32>,
    pub length: Range<f32>,
    pub width: Range<f32>,
    pub intensity: Range<f32>,
    pub seed: u64,
}

impl Default for RainSynthConfig {
    fn default() -> Self {
        RainSynthConfig {
            streak_count: Range::new(30, 60),
            angle: Range::new(75.0, 105.0),
            length: Range::new(10.0, 24.0),
            width: Range::new(1.0, 2.0),
            intensity: Range::new(0.2, 0.5),
            seed: 0,
        }
    }
}

impl RainSynthConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        RainSynthConfig { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, r: &dyn fmt::Display| {
            Err(Error::InvalidArgument(format!("rain synthesis {what} range {r} is invalid")))
        };
        if !self.streak_count.is_valid() {
            return bad("streak_count", &self.streak_count);
        }
        if !self.angle.is_valid() || !self.angle.min.is_finite() || !self.angle.max.is_finite() {
            return bad("angle", &self.angle);
        }
        if !self.length.is_valid() || self.length.min < 0.0 {
            return bad("length", &self.length);
        }
        if !self.width.is_valid() || self.width.min <= 0.0 {
            return bad("width", &self.width);
        }
        if !self.intensity.is_valid() || self.intensity.min < 0.0 || self.intensity.max > 1.0 {
            return bad("intensity", &self.intensity);
        }
        Ok(())
    }
}

/// Renders rain streaks onto `clean` using the generator seeded from `cfg.seed`.
pub fn synthesize_rain(clean: &Image, cfg: &RainSynthConfig) -> Result<ImagePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rainy = synthesize_rain_with(clean, cfg, &mut rng)?;
    ImagePair::new("synthetic", rainy, clean.clone())
}

/// As [`synthesize_rain`], drawing from a caller-supplied generator.
pub fn synthesize_rain_with(clean: &Image, cfg: &RainSynthConfig, rng: &mut impl Rng) -> Result<Image> {
    cfg.validate()?;
    let (w, h) = (clean.width, clean.height);
    let mut layer = vec![0f32; w * h];
    let count = cfg.streak_count.sample(rng);
    for _ in 0..count {
        let theta = cfg.angle.sample(rng).to_radians();
        let len = cfg.length.sample(rng);
        let width = cfg.width.sample(rng);
        let intensity = cfg.intensity.sample(rng);
        let margin = len / 2.0;
        let cx = rng.random_range(-margin..=w as f32 + margin);
        let cy = rng.random_range(-margin..=h as f32 + margin);
        draw_segment(&mut layer, w, h, (cx, cy), theta, len, width, intensity);
    }
    let mut rainy = clean.clone();
    for (px, &r) in rainy.data.chunks_exact_mut(3).zip(&layer) {
        for v in px {
            *v = (*v + r).clamp(0.0, 1.0);
        }
    }
    Ok(rainy)
}

/// Adds a segment with linear edge falloff (one pixel wide) to `layer`.
#[allow(clippy::too_many_arguments)]
fn draw_segment(
    layer: &mut [f32],
    w: usize,
    h: usize,
    (cx, cy): (f32, f32),
    theta: f32,
    len: f32,
    width: f32,
    intensity: f32,
) {
    let (dx, dy) = (theta.cos(), theta.sin());
    let half = len / 2.0;
    let (x0, y0, x1, y1) = (cx - dx * half, cy - dy * half, cx + dx * half, cy + dy * half);
    let reach = width / 2.0 + 1.0;
    let xlo = (x0.min(x1) - reach).floor().max(0.0) as usize;
    let ylo = (y0.min(y1) - reach).floor().max(0.0) as usize;
    let xhi = ((x0.max(x1) + reach).ceil().max(0.0) as usize).min(w);
    let yhi = ((y0.max(y1) + reach).ceil().max(0.0) as usize).min(h);
    for y in ylo..yhi {
        for x in xlo..xhi {
            let (px, py) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
            let along = (px * dx + py * dy).clamp(-half, half);
            let (ex, ey) = (px - along * dx, py - along * dy);
            let dist = (ex * ex + ey * ey).sqrt();
            let coverage = (width / 2.0 + 0.5 - dist).clamp(0.0, 1.0);
            if coverage > 0.0 {
                layer[y * w + x] += intensity * coverage;
            }
        }
    }
}

/// Smooth synthetic background: a two-colour gradient with soft blobs and a faint
/// low-frequency texture, kept within `[0.05, 0.8]` so streaks stay visible.
pub fn procedural_clean(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut color = || -> [f32; 3] { std::array::from_fn(|_| rng.random_range(0.0..1.0f32)) };
    let (c0, c1) = (color(), color());
    let blob_colors: Vec<[f32; 3]> = (0..4).map(|_| color()).collect();
    let phi = rng.random_range(0.0..std::f32::consts::TAU);
    let blobs: Vec<(f32, f32, f32)> = (0..blob_colors.len())
        .map(|_| {
            (
                rng.random_range(0.0..width as f32),
                rng.random_range(0.0..height as f32),
                rng.random_range(0.1..0.3f32) * width.min(height) as f32,
            )
        })
        .collect();
    let (fx, fy, phase) = (
        rng.random_range(1.0..4.0f32) / width as f32,
        rng.random_range(1.0..4.0f32) / height as f32,
        rng.random_range(0.0..std::f32::consts::TAU),
    );
    let (gx, gy) = (phi.cos(), phi.sin());
    let span = (width as f32 * gx.abs() + height as f32 * gy.abs()).max(1.0);
    Image::from_fn(width, height, |x, y| {
        let (xf, yf) = (x as f32, y as f32);
        let t = ((xf * gx + yf * gy) / span + 0.5).clamp(0.0, 1.0);
        let mut px: [f32; 3] = std::array::from_fn(|c| c0[c] * (1.0 - t) + c1[c] * t);
        for ((bx, by, r), bc) in blobs.iter().zip(&blob_colors) {
            let d2 = ((xf - bx).powi(2) + (yf - by).powi(2)) / (r * r);
            let a = 0.6 * (-d2).exp();
            for c in 0..3 {
                px[c] = px[c] * (1.0 - a) + bc[c] * a;
            }
        }
        let tex = 0.05 * (std::f32::consts::TAU * (fx * xf + fy * yf) + phase).sin();
        px.map(|v| 0.05 + 0.75 * (v + tex).clamp(0.0, 1.0))
    })
}
