//! Synthetic line scenes, augmentation and on-disk datasets.
//!
//! Images are `[H, W, 3]` tensors with values in `[0, 1]`; generated images
//! are quantized to multiples of 1/255 so they survive 8-bit storage
//! exactly.

mod augment;
mod io;

pub use augment::{augment, crop, hflip, resize, resize_image, transpose, vflip, AugmentConfig};
pub use io::{load_dataset, read_annotations, read_image, read_predictions, save_dataset, write_image, write_predictions, Annotation, PredictionRecord};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::geometry::LineSegment;
use crate::rng::{substream, Rng};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub targets: Vec<LineSegment>,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Square image extent in pixels; a multiple of 32.
    pub extent: usize,
    pub min_segments: usize,
    pub max_segments: usize,
    /// Minimum segment length in normalized units.
    pub min_length: f64,
    /// Stroke width in pixels.
    pub thickness: f64,
    /// Amplitude of uniform background noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { extent: 64, min_segments: 1, max_segments: 4, min_length: 0.25, thickness: 1.5, noise: 0.05, seed: 0 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.extent == 0 || !self.extent.is_multiple_of(32) {
            return bad(format!("extent {} is not a positive multiple of 32", self.extent));
        }
        if self.min_segments == 0 || self.min_segments > self.max_segments {
            return bad(format!("segment range {}..={} is empty or starts at 0", self.min_segments, self.max_segments));
        }
        if !(self.min_length > 0.0 && self.min_length <= 0.9) {
            return bad(format!("min_length {} outside (0, 0.9]", self.min_length));
        }
        if !(self.thickness > 0.0) || !(self.noise >= 0.0) {
            return bad("thickness must be > 0 and noise >= 0".into());
        }
        Ok(())
    }
}

/// Rounds to the nearest multiple of 1/255.
pub fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Endpoint coordinates are multiples of 2^-16, so flips (`1 - x`) are exact
/// and applying one twice gives back the original bits.
pub const COORD_STEP: f64 = 1.0 / 65536.0;

fn random_segment(cfg: &SynthConfig, rng: &mut Rng) -> LineSegment {
    let mut coord = || rng.random_range(0..=65536u32) as f64 * COORD_STEP;
    loop {
        let s = LineSegment::new(coord(), coord(), coord(), coord());
        if s.length() >= cfg.min_length {
            return s;
        }
    }
}

/// Distance from `p` to the segment `a`–`b`.
fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p[0] - a[0] - t * d[0]).hypot(p[1] - a[1] - t * d[1])
}

/// Stroke coverage of a pixel whose centre lies `d` pixels from the segment:
/// full inside half the thickness, fading to zero over one more pixel.
pub fn stroke_alpha(d: f64, thickness: f64) -> f64 {
    (thickness / 2.0 + 1.0 - d).clamp(0.0, 1.0)
}

/// Renders `k` random segments in bright colours over a dark, optionally
/// noisy background.
pub fn generate_scene(cfg: &SynthConfig, id: impl Into<String>, rng: &mut Rng) -> Result<Sample> {
    cfg.validate()?;
    let e = cfg.extent;
    let k = rng.random_range(cfg.min_segments..=cfg.max_segments);
    let background: [f64; 3] = [rng.random_range(0.0..0.35), rng.random_range(0.0..0.35), rng.random_range(0.0..0.35)];
    let mut px = vec![0.0; e * e * 3];
    for p in px.chunks_exact_mut(3) {
        for c in 0..3 {
            let n = if cfg.noise > 0.0 { rng.random_range(-cfg.noise..cfg.noise) } else { 0.0 };
            p[c] = background[c] + n;
        }
    }
    let mut targets = Vec::with_capacity(k);
    for _ in 0..k {
        let s = random_segment(cfg, rng);
        let colour: [f64; 3] = [rng.random_range(0.65..1.0), rng.random_range(0.65..1.0), rng.random_range(0.65..1.0)];
        let (a, b) = ([s.p1[0] * e as f64, s.p1[1] * e as f64], [s.p2[0] * e as f64, s.p2[1] * e as f64]);
        let reach = cfg.thickness / 2.0 + 1.0;
        let lo = |u: f64, v: f64| ((u.min(v) - reach).floor().max(0.0)) as usize;
        let hi = |u: f64, v: f64| ((u.max(v) + reach).ceil().max(0.0) as usize).min(e);
        for y in lo(a[1], b[1])..hi(a[1], b[1]) {
            for x in lo(a[0], b[0])..hi(a[0], b[0]) {
                let alpha = stroke_alpha(point_segment_distance([x as f64 + 0.5, y as f64 + 0.5], a, b), cfg.thickness);
                if alpha > 0.0 {
                    let p = &mut px[(y * e + x) * 3..][..3];
                    for c in 0..3 {
                        p[c] = p[c] * (1.0 - alpha) + colour[c] * alpha;
                    }
                }
            }
        }
        targets.push(s);
    }
    px.iter_mut().for_each(|v| *v = quantize(*v));
    Ok(Sample { id: id.into(), image: Tensor::new([e, e, 3], px)?, targets })
}

/// `count` scenes, scene `i` drawn from its own substream of `cfg.seed`.
pub fn generate_dataset(cfg: &SynthConfig, count: usize, prefix: &str) -> Result<Vec<Sample>> {
    (0..count)
        .map(|i| generate_scene(cfg, format!("{prefix}{i:05}"), &mut substream(cfg.seed, i as u64)))
        .collect()
}

#[cfg(test)]
mod tests;
