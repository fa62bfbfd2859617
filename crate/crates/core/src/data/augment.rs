//! Geometric augmentations that move image and targets together.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::geometry::LineSegment;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub vflip: bool,
    /// Swap the x and y axes; with both flips this covers all eight
    /// symmetries of the square.
    #[serde(default)]
    pub transpose: bool,
    /// Square extents to resize to, one picked at random; empty disables.
    pub resize_extents: Vec<usize>,
    /// Smallest crop side as a fraction of the image; `None` disables.
    pub crop_min_fraction: Option<f64>,
    pub crop_retries: usize,
    /// Clipped segments shorter than this (normalized) are dropped.
    pub min_crop_length: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            hflip: true,
            vflip: true,
            transpose: false,
            resize_extents: Vec::new(),
            crop_min_fraction: None,
            crop_retries: 10,
            min_crop_length: 0.02,
        }
    }
}

fn map_pixels(s: &Sample, h: usize, w: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Tensor {
    let sw = s.width();
    let from = s.image.data();
    let mut out = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src(x, y);
            out.extend_from_slice(&from[(sy * sw + sx) * 3..][..3]);
        }
    }
    Tensor::new([h, w, 3], out).expect("shape matches data")
}

pub fn hflip(s: &Sample) -> Sample {
    let w = s.width();
    Sample {
        id: s.id.clone(),
        image: map_pixels(s, s.height(), w, |x, y| (w - 1 - x, y)),
        targets: s.targets.iter().map(|t| LineSegment::new(1.0 - t.p1[0], t.p1[1], 1.0 - t.p2[0], t.p2[1])).collect(),
    }
}

pub fn vflip(s: &Sample) -> Sample {
    let h = s.height();
    Sample {
        id: s.id.clone(),
        image: map_pixels(s, h, s.width(), |x, y| (x, h - 1 - y)),
        targets: s.targets.iter().map(|t| LineSegment::new(t.p1[0], 1.0 - t.p1[1], t.p2[0], 1.0 - t.p2[1])).collect(),
    }
}

/// Mirrors about the main diagonal: pixel (x, y) moves to (y, x).
pub fn transpose(s: &Sample) -> Sample {
    Sample {
        id: s.id.clone(),
        image: map_pixels(s, s.width(), s.height(), |x, y| (y, x)),
        targets: s.targets.iter().map(|t| LineSegment::new(t.p1[1], t.p1[0], t.p2[1], t.p2[0])).collect(),
    }
}

/// Bilinear resize with pixel centres aligned; normalized targets are
/// unchanged.
pub fn resize(s: &Sample, h: usize, w: usize) -> Result<Sample> {
    Ok(Sample { id: s.id.clone(), image: resize_image(&s.image, h, w)?, targets: s.targets.clone() })
}

/// Bilinear resize of an `[H, W, C]` image with pixel centres aligned.
pub fn resize_image(image: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (sh, sw, ch) = match *image.shape() {
        [sh, sw, ch] if sh > 0 && sw > 0 => (sh, sw, ch),
        ref s => return Err(Error::Input(format!("expected a non-empty H×W×C image, got {s:?}"))),
    };
    if h == 0 || w == 0 {
        return Err(Error::Parameter(format!("cannot resize to {h}x{w}")));
    }
    let from = image.data();
    let coord = |o: usize, n: usize, sn: usize| {
        let c = ((o as f64 + 0.5) * sn as f64 / n as f64 - 0.5).clamp(0.0, (sn - 1) as f64);
        let i = (c.floor() as usize).min(sn - 1);
        (i, (i + 1).min(sn - 1), c - i as f64)
    };
    let mut out = Vec::with_capacity(h * w * ch);
    for y in 0..h {
        let (y0, y1, fy) = coord(y, h, sh);
        for x in 0..w {
            let (x0, x1, fx) = coord(x, w, sw);
            for c in 0..ch {
                let at = |yy: usize, xx: usize| from[(yy * sw + xx) * ch + c];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new([h, w, ch], out)
}

/// Clips a segment to the unit square (Liang-Barsky).
pub(crate) fn clip_unit(s: &LineSegment) -> Option<LineSegment> {
    let (x0, y0) = (s.p1[0], s.p1[1]);
    let (dx, dy) = (s.p2[0] - x0, s.p2[1] - y0);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-dx, x0), (dx, 1.0 - x0), (-dy, y0), (dy, 1.0 - y0)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    let at = |t: f64| [(x0 + t * dx).clamp(0.0, 1.0), (y0 + t * dy).clamp(0.0, 1.0)];
    Some(LineSegment { p1: at(t0), p2: at(t1) })
}

/// Crops the pixel window `[x0, x0 + w) × [y0, y0 + h)`. Targets are
/// re-normalized to the window and clipped to it; those left outside or
/// shorter than `min_length` are dropped. `None` when nothing survives.
pub fn crop(s: &Sample, x0: usize, y0: usize, w: usize, h: usize, min_length: f64) -> Result<Option<Sample>> {
    if w == 0 || h == 0 || x0 + w > s.width() || y0 + h > s.height() {
        return Err(Error::Parameter(format!("crop {w}x{h}+{x0}+{y0} outside {}x{}", s.width(), s.height())));
    }
    let (fw, fh) = (s.width() as f64, s.height() as f64);
    let map = |p: [f64; 2]| [(p[0] * fw - x0 as f64) / w as f64, (p[1] * fh - y0 as f64) / h as f64];
    let targets: Vec<LineSegment> = s
        .targets
        .iter()
        .filter_map(|t| clip_unit(&LineSegment { p1: map(t.p1), p2: map(t.p2) }))
        .filter(|t| t.length() >= min_length && t.length() > 0.0)
        .collect();
    if targets.is_empty() {
        return Ok(None);
    }
    let image = map_pixels(s, h, w, |x, y| (x + x0, y + y0));
    Ok(Some(Sample { id: s.id.clone(), image, targets }))
}

/// Random flips, then an optional resize, then an optional crop whose sides
/// are multiples of 32 pixels. A crop that loses every target is redrawn up to
/// `crop_retries` times and otherwise skipped.
pub fn augment(s: &Sample, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Sample> {
    let mut out = s.clone();
    if cfg.hflip && rng.random_bool(0.5) {
        out = hflip(&out);
    }
    if cfg.vflip && rng.random_bool(0.5) {
        out = vflip(&out);
    }
    if cfg.transpose && rng.random_bool(0.5) {
        out = transpose(&out);
    }
    if !cfg.resize_extents.is_empty() {
        let e = cfg.resize_extents[rng.random_range(0..cfg.resize_extents.len())];
        if e != out.height() || e != out.width() {
            out = resize(&out, e, e)?;
        }
    }
    if let Some(frac) = cfg.crop_min_fraction {
        let side = |n: usize, rng: &mut Rng| {
            let lo = ((n as f64 * frac / 32.0).ceil() as usize).max(1);
            let hi = (n / 32).max(lo);
            32 * rng.random_range(lo..=hi)
        };
        for _ in 0..cfg.crop_retries {
            let (w, h) = (side(out.width(), rng).min(out.width()), side(out.height(), rng).min(out.height()));
            let x0 = rng.random_range(0..=out.width() - w);
            let y0 = rng.random_range(0..=out.height() - h);
            if let Some(c) = crop(&out, x0, y0, w, h, cfg.min_crop_length)? {
                return Ok(c);
            }
        }
    }
    Ok(out)
}
