//! Integer line rasterization onto a square grid.

use crate::geometry::LineSegment;

/// Pixel index of a normalized coordinate on an `extent`-wide grid.
pub fn pixel_of(v: f64, extent: usize) -> usize {
    let p = (v * extent as f64).floor();
    if p.is_nan() || p < 0.0 { 0 } else { (p as usize).min(extent - 1) }
}

/// Pixels `(x, y)` covered by the segment, walked with Bresenham's algorithm.
///
/// Endpoints are put in a canonical order first, so a segment and its
/// reversal cover exactly the same pixels.
pub fn segment_pixels(seg: &LineSegment, extent: usize) -> Vec<(usize, usize)> {
    let a = (pixel_of(seg.p1[0], extent) as i64, pixel_of(seg.p1[1], extent) as i64);
    let b = (pixel_of(seg.p2[0], extent) as i64, pixel_of(seg.p2[1], extent) as i64);
    let ((mut x, mut y), (x1, y1)) = if a <= b { (a, b) } else { (b, a) };
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy + 1) as usize);
    loop {
        out.push((x as usize, y as usize));
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Binary `extent × extent` map, row-major (`y * extent + x`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub extent: usize,
    pub pixels: Vec<bool>,
}

impl Raster {
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.extent + x]
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }
}

pub fn rasterize(segments: &[LineSegment], extent: usize) -> Raster {
    let mut pixels = vec![false; extent * extent];
    for s in segments {
        for (x, y) in segment_pixels(s, extent) {
            pixels[y * extent + x] = true;
        }
    }
    Raster { extent, pixels }
}
