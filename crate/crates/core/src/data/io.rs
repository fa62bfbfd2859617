//! Datasets on disk: `annotations.jsonl` plus one binary PPM per image under
//! `images/`.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Sample;
use crate::geometry::{LineSegment, ScoredSegment};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// One annotation line; segment coordinates are normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub segments: Vec<[f64; 4]>,
}

/// One prediction line: the annotation shape with a score per segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub segments: Vec<[f64; 5]>,
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, width: usize, height: usize, preds: &[ScoredSegment]) -> Self {
        let segments = preds
            .iter()
            .map(|p| {
                let [a, b, c, d] = p.segment.to_array();
                [a, b, c, d, p.score]
            })
            .collect();
        PredictionRecord { id: id.into(), width, height, segments }
    }

    pub fn scored_segments(&self) -> Vec<ScoredSegment> {
        self.segments.iter().map(|s| ScoredSegment::new(LineSegment::new(s[0], s[1], s[2], s[3]), s[4])).collect()
    }
}

const ANNOTATIONS: &str = "annotations.jsonl";
const IMAGES: &str = "images";

fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(IMAGES).join(format!("{id}.ppm"))
}

/// Writes an `[H, W, 3]` image in `[0, 1]` as 8-bit binary PPM.
pub fn write_image(image: &Tensor, path: &Path) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::dim("write_image", format!("expected [H, W, 3], got {s:?}")));
    }
    let mut bytes = format!("P6\n{} {}\n255\n", s[1], s[0]).into_bytes();
    bytes.extend(image.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a binary PPM with maxval 255 into `[H, W, 3]` values `k / 255`.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Parse { path: path.to_path_buf(), line: 1, msg: msg.to_string() };
    // Header: magic, width, height, maxval, separated by whitespace with
    // optional comments, then exactly one whitespace byte.
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(bad("truncated PPM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| bad("non-ASCII PPM header"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("not a binary PPM (P6)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad number in PPM header"));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(bad("only 8-bit PPM is supported"));
    }
    let data = bytes.get(i + 1..).ok_or_else(|| bad("missing pixel data"))?;
    if data.len() != w * h * 3 {
        return Err(bad("pixel data length does not match header"));
    }
    Tensor::new([h, w, 3], data.iter().map(|&b| b as f64 / 255.0).collect())
}

fn write_lines<T: Serialize>(path: &Path, records: impl Iterator<Item = T>) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&r)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse { path: path.to_path_buf(), line: n + 1, msg: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    read_lines(path)
}

pub fn write_predictions(records: &[PredictionRecord], path: &Path) -> Result<()> {
    write_lines(path, records.iter())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    read_lines(path)
}

pub fn save_dataset(samples: &[Sample], dir: &Path) -> Result<()> {
    let images = dir.join(IMAGES);
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    for s in samples {
        write_image(&s.image, &image_path(dir, &s.id))?;
    }
    let records = samples.iter().map(|s| Annotation {
        id: s.id.clone(),
        width: s.width(),
        height: s.height(),
        segments: s.targets.iter().map(|t| t.to_array()).collect(),
    });
    let path = dir.join(ANNOTATIONS);
    write_lines(&path, records)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let path = dir.join(ANNOTATIONS);
    let mut out = Vec::new();
    for (n, a) in read_annotations(&path)?.into_iter().enumerate() {
        let image = read_image(&image_path(dir, &a.id))?;
        if image.shape()[..2] != [a.height, a.width] {
            return Err(Error::Parse {
                path: path.clone(),
                line: n + 1,
                msg: format!("image {} is {:?}, annotation says {}x{}", a.id, image.shape(), a.height, a.width),
            });
        }
        out.push(Sample { id: a.id, image, targets: a.segments.into_iter().map(LineSegment::from_array).collect() });
    }
    Ok(out)
}
