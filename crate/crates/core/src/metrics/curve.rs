//! Precision-recall curves, their area and best F-score, and CSV export.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
}

impl PrPoint {
    pub fn f_score(&self) -> f64 {
        let s = self.precision + self.recall;
        if s > 0.0 { 2.0 * self.precision * self.recall / s } else { 0.0 }
    }
}

/// Points ordered by decreasing confidence threshold, so recall never
/// decreases along the list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    pub fn new(points: Vec<PrPoint>) -> Result<Self> {
        for w in points.windows(2) {
            if w[1].recall < w[0].recall {
                return Err(Error::Contract(format!("recall decreases from {} to {}", w[0].recall, w[1].recall)));
            }
        }
        if let Some(p) = points.iter().find(|p| !(0.0..=1.0).contains(&p.recall) || !(0.0..=1.0).contains(&p.precision)) {
            return Err(Error::Contract(format!("point outside [0,1]: {p:?}")));
        }
        Ok(PrCurve { points })
    }

    /// Area under the precision envelope: at each recall step precision is
    /// replaced by the best precision reached at that recall or beyond.
    pub fn average_precision(&self) -> f64 {
        let mut envelope = 0.0f64;
        let mut area = 0.0;
        for k in (0..self.points.len()).rev() {
            envelope = envelope.max(self.points[k].precision);
            let prev = if k == 0 { 0.0 } else { self.points[k - 1].recall };
            area += (self.points[k].recall - prev) * envelope;
        }
        area
    }

    /// Best F-score along the curve; 0 for an empty curve.
    pub fn max_f_score(&self) -> f64 {
        self.points.iter().map(PrPoint::f_score).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("recall,precision,threshold\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{}", p.recall, p.precision, p.threshold);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Parse { path: "<csv>".into(), line, msg };
        let mut lines = text.lines();
        match lines.next() {
            Some("recall,precision,threshold") => {}
            other => return Err(bad(1, format!("expected header, got {other:?}"))),
        }
        let mut points = Vec::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(bad(i + 2, format!("expected 3 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(i + 2, format!("{s:?}: {e}")));
            points.push(PrPoint { recall: num(f[0])?, precision: num(f[1])?, threshold: num(f[2])? });
        }
        PrCurve::new(points)
    }
}

/// Writes the curve as CSV with LF line endings.
pub fn export_pr_curve(curve: &PrCurve, path: &Path) -> Result<()> {
    std::fs::write(path, curve.to_csv()).map_err(|e| Error::io(path, e))
}

pub fn read_pr_curve(path: &Path) -> Result<PrCurve> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PrCurve::from_csv(&text).map_err(|e| match e {
        Error::Parse { line, msg, .. } => Error::Parse { path: path.to_path_buf(), line, msg },
        other => other,
    })
}

/// The raw material of a PR curve, enough to rebuild it exactly.
///
/// `detections` are scored items that are either correct or not (predicted
/// segments, predicted pixels); `recalls` holds, for each recovered positive,
/// the highest threshold at which it is recovered. `positives` counts all
/// positives, recovered or not.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveData {
    pub name: String,
    pub positives: usize,
    pub detections: Vec<(f64, bool)>,
    pub recalls: Vec<f64>,
}

impl CurveData {
    /// One point per distinct detection score, from the highest down.
    pub fn curve(&self) -> Result<PrCurve> {
        if self.positives == 0 {
            return Err(Error::Input(format!("curve {:?} has no ground truth; precision-recall is undefined", self.name)));
        }
        if self.recalls.len() > self.positives {
            return Err(Error::Contract(format!("{} recalled of {} positives", self.recalls.len(), self.positives)));
        }
        let mut det = self.detections.clone();
        det.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut rec = self.recalls.clone();
        rec.sort_by(|a, b| b.total_cmp(a));

        let mut points = Vec::new();
        let (mut tp, mut seen, mut r) = (0usize, 0usize, 0usize);
        let mut i = 0;
        while i < det.len() {
            let t = det[i].0;
            while i < det.len() && det[i].0 == t {
                tp += det[i].1 as usize;
                seen += 1;
                i += 1;
            }
            while r < rec.len() && rec[r] >= t {
                r += 1;
            }
            points.push(PrPoint {
                recall: r as f64 / self.positives as f64,
                precision: tp as f64 / seen as f64,
                threshold: t,
            });
        }
        PrCurve::new(points)
    }

    /// Snaps every score down onto a grid of `levels` uniform thresholds in
    /// `[0, 1]`, trading the exact curve for a fixed number of points.
    pub fn quantized(&self, levels: usize) -> Self {
        let q = |s: f64| ((s * levels as f64).floor() / levels as f64).clamp(0.0, 1.0);
        CurveData {
            name: self.name.clone(),
            positives: self.positives,
            detections: self.detections.iter().map(|&(s, t)| (q(s), t)).collect(),
            recalls: self.recalls.iter().map(|&s| q(s)).collect(),
        }
    }
}
