use std::f64::consts::TAU;

use crate::tensor::Tensor;
use crate::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 10_000.0;

/// 2-D sine/cosine encoding for an `h×w` grid, flattened row-major to
/// `[h·w, d_model]`.
///
/// The first half of the channels encodes the row, the second half the
/// column. Within each half channel `2k` holds `sin(pos / T^(2k/half))` and
/// `2k+1` the matching cosine, where `pos = 2π · index / extent`.
pub fn positional_encoding(h: usize, w: usize, d_model: usize) -> Result<Tensor> {
    positional_encoding_with(h, w, d_model, DEFAULT_TEMPERATURE)
}

pub fn positional_encoding_with(h: usize, w: usize, d_model: usize, temperature: f64) -> Result<Tensor> {
    if d_model == 0 || !d_model.is_multiple_of(4) {
        return Err(Error::Parameter(format!("positional encoding needs d_model divisible by 4, got {d_model}")));
    }
    let half = d_model / 2;
    let freqs: Vec<f64> = (0..half).map(|c| temperature.powf((2 * (c / 2)) as f64 / half as f64)).collect();
    let fill = |out: &mut [f64], pos: f64| {
        for (c, f) in freqs.iter().enumerate() {
            let a = pos / f;
            out[c] = if c % 2 == 0 { a.sin() } else { a.cos() };
        }
    };
    let mut data = vec![0.0; h * w * d_model];
    for y in 0..h {
        for x in 0..w {
            let row = &mut data[(y * w + x) * d_model..(y * w + x + 1) * d_model];
            fill(&mut row[..half], TAU * y as f64 / h as f64);
            fill(&mut row[half..], TAU * x as f64 / w as f64);
        }
    }
    Tensor::new([h * w, d_model], data)
}
