//! Structural and heatmap line-detection metrics.
//!
//! Coordinates are normalized to `[0, 1]` everywhere; structural distances
//! are measured after scaling to a square grid of `grid_extent` pixels, and
//! heatmaps are rasterized on a grid of `raster_extent` pixels.

mod curve;
mod raster;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use curve::{export_pr_curve, read_pr_curve, CurveData, PrCurve, PrPoint};
pub use raster::{pixel_of, rasterize, segment_pixels, Raster};

use crate::geometry::{LineSegment, ScoredSegment};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Structural distance thresholds, in grid pixels.
    pub thresholds: Vec<f64>,
    pub grid_extent: usize,
    pub raster_extent: usize,
    /// Chebyshev radius within which a heatmap pixel counts as matched.
    pub heatmap_tolerance: usize,
    /// `None` sweeps every distinct confidence; `Some(n)` uses `n` uniform
    /// levels.
    pub sweep_levels: Option<usize>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            thresholds: vec![10.0, 15.0],
            grid_extent: 128,
            raster_extent: 128,
            heatmap_tolerance: 1,
            sweep_levels: None,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() || self.thresholds.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Parameter(format!("thresholds must be positive, got {:?}", self.thresholds)));
        }
        if self.grid_extent < 2 || self.raster_extent < 2 {
            return Err(Error::Parameter("grid extents must be at least 2".into()));
        }
        if self.sweep_levels == Some(0) {
            return Err(Error::Parameter("sweep_levels must be positive".into()));
        }
        Ok(())
    }
}

/// Square root of the summed squared endpoint distances, minimized over the
/// two endpoint orderings, after scaling both segments by `scale`.
pub fn segment_l2(a: &LineSegment, b: &LineSegment, scale: f64) -> f64 {
    let sq = |p: [f64; 2], q: [f64; 2]| ((p[0] - q[0]) * scale).powi(2) + ((p[1] - q[1]) * scale).powi(2);
    let direct = sq(a.p1, b.p1) + sq(a.p2, b.p2);
    let swapped = sq(a.p1, b.p2) + sq(a.p2, b.p1);
    direct.min(swapped).sqrt()
}

/// Per-prediction outcome of structural matching, in input order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuralMatch {
    /// `Some(g)` for a true positive claiming ground truth `g`.
    pub labels: Vec<Option<usize>>,
    pub gt_matched: Vec<bool>,
}

impl StructuralMatch {
    pub fn true_positives(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    pub fn false_positives(&self) -> usize {
        self.labels.len() - self.true_positives()
    }

    pub fn false_negatives(&self) -> usize {
        self.gt_matched.iter().filter(|m| !**m).count()
    }
}

/// Each prediction is a candidate for its nearest ground truth when that
/// distance is below `theta`. Visiting predictions by descending confidence
/// (ties by input order), the first candidate of a ground truth is the true
/// positive; later candidates and non-candidates are false positives.
pub fn structural_match(preds: &[ScoredSegment], gts: &[LineSegment], theta: f64, grid_extent: usize) -> StructuralMatch {
    let scale = grid_extent as f64;
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    let mut labels = vec![None; preds.len()];
    let mut gt_matched = vec![false; gts.len()];
    for i in order {
        let nearest = gts
            .iter()
            .enumerate()
            .map(|(g, t)| (g, segment_l2(&preds[i].segment, t, scale)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((g, d)) = nearest {
            if d < theta && !gt_matched[g] {
                gt_matched[g] = true;
                labels[i] = Some(g);
            }
        }
    }
    StructuralMatch { labels, gt_matched }
}

fn check_pairs<A, B>(preds: &[A], gts: &[B]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::Input(format!("{} prediction sets for {} images", preds.len(), gts.len())));
    }
    Ok(())
}

/// Raw structural curve data over an image set, evaluated jointly.
pub fn structural_data(preds: &[Vec<ScoredSegment>], gts: &[Vec<LineSegment>], theta: f64, grid_extent: usize) -> Result<CurveData> {
    check_pairs(preds, gts)?;
    let mut data = CurveData { name: format!("sAP{theta}"), ..CurveData::default() };
    for (p, g) in preds.iter().zip(gts) {
        let m = structural_match(p, g, theta, grid_extent);
        data.positives += g.len();
        for (s, l) in p.iter().zip(&m.labels) {
            data.detections.push((s.score, l.is_some()));
            if l.is_some() {
                data.recalls.push(s.score);
            }
        }
    }
    Ok(data)
}

pub fn structural_curve(preds: &[Vec<ScoredSegment>], gts: &[Vec<LineSegment>], theta: f64, grid_extent: usize) -> Result<PrCurve> {
    structural_data(preds, gts, theta, grid_extent)?.curve()
}

/// Structural average precision (sAP).
pub fn structural_ap(preds: &[Vec<ScoredSegment>], gts: &[Vec<LineSegment>], theta: f64, grid_extent: usize) -> Result<f64> {
    Ok(structural_curve(preds, gts, theta, grid_extent)?.average_precision())
}

/// Structural F-score (sF): best F-score along the structural curve.
pub fn structural_fscore(preds: &[Vec<ScoredSegment>], gts: &[Vec<LineSegment>], theta: f64, grid_extent: usize) -> Result<f64> {
    Ok(structural_curve(preds, gts, theta, grid_extent)?.max_f_score())
}

/// Pixels within Chebyshev distance `r` of `(x, y)`, clipped to the grid.
fn window(x: usize, y: usize, r: usize, extent: usize) -> impl Iterator<Item = (usize, usize)> {
    let (x0, x1) = (x.saturating_sub(r), (x + r).min(extent - 1));
    let (y0, y1) = (y.saturating_sub(r), (y + r).min(extent - 1));
    (y0..=y1).flat_map(move |v| (x0..=x1).map(move |u| (u, v)))
}

/// Raw heatmap curve data: predicted pixels carry the highest confidence of
/// any prediction covering them.
pub fn heatmap_data(preds: &[Vec<ScoredSegment>], gts: &[Vec<LineSegment>], extent: usize, tolerance: usize) -> Result<CurveData> {
    check_pairs(preds, gts)?;
    let mut data = CurveData { name: "APH".into(), ..CurveData::default() };
    let mut conf = vec![f64::NEG_INFINITY; extent * extent];
    for (p, g) in preds.iter().zip(gts) {
        conf.fill(f64::NEG_INFINITY);
        for s in p {
            for (x, y) in segment_pixels(&s.segment, extent) {
                let c = &mut conf[y * extent + x];
                *c = c.max(s.score);
            }
        }
        let gt = rasterize(g, extent);
        for y in 0..extent {
            for x in 0..extent {
                let c = conf[y * extent + x];
                if c > f64::NEG_INFINITY {
                    data.detections.push((c, window(x, y, tolerance, extent).any(|(u, v)| gt.get(u, v))));
                }
                if gt.get(x, y) {
                    data.positives += 1;
                    let best = window(x, y, tolerance, extent).map(|(u, v)| conf[v * extent + u]).fold(f64::NEG_INFINITY, f64::max);
                    if best > f64::NEG_INFINITY {
                        data.recalls.push(best);
                    }
                }
            }
        }
    }
    Ok(data)
}

/// Heatmap average precision and best F-score, `(AP^H, F^H)`.
pub fn heatmap_ap(preds: &[Vec<ScoredSegment>], gts: &[Vec<LineSegment>], extent: usize, tolerance: usize) -> Result<(f64, f64)> {
    let c = heatmap_data(preds, gts, extent, tolerance)?.curve()?;
    Ok((c.average_precision(), c.max_f_score()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralScore {
    pub threshold: f64,
    pub sap: f64,
    pub sf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub structural: Vec<StructuralScore>,
    pub heatmap_ap: f64,
    pub heatmap_f: f64,
    /// sAP at the first threshold for each decoder layer, when requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_layer_sap: Vec<f64>,
    #[serde(skip)]
    pub curves: Vec<CurveData>,
}

impl EvalReport {
    /// sAP at the given threshold, if it was evaluated.
    pub fn sap(&self, threshold: f64) -> Option<f64> {
        self.structural.iter().find(|s| s.threshold == threshold).map(|s| s.sap)
    }

    pub fn scores_in_unit_range(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        self.structural.iter().all(|s| unit(s.sap) && unit(s.sf))
            && unit(self.heatmap_ap)
            && unit(self.heatmap_f)
            && self.per_layer_sap.iter().all(|v| unit(*v))
    }

    /// Writes `report.json`, `pr_<name>.csv` per curve and `matches.json`
    /// (raw curve data, enough to re-export the curves later).
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let report = dir.join("report.json");
        std::fs::write(&report, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&report, e))?;
        let raw = dir.join("matches.json");
        std::fs::write(&raw, serde_json::to_string(&self.curves)?).map_err(|e| Error::io(&raw, e))?;
        export_curves(&self.curves, dir)
    }
}

/// Writes one `pr_<name>.csv` per curve into `dir`.
pub fn export_curves(curves: &[CurveData], dir: &Path) -> Result<()> {
    for c in curves {
        export_pr_curve(&c.curve()?, &dir.join(format!("pr_{}.csv", c.name)))?;
    }
    Ok(())
}

pub fn read_curve_data(path: &Path) -> Result<Vec<CurveData>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Full metric suite over an image set.
pub fn evaluate_predictions(preds: &[Vec<ScoredSegment>], gts: &[Vec<LineSegment>], cfg: &MetricConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if gts.iter().all(|g| g.is_empty()) {
        return Err(Error::Input("evaluation set has no ground-truth segments".into()));
    }
    let sweep = |d: CurveData| match cfg.sweep_levels {
        Some(n) => d.quantized(n),
        None => d,
    };
    let mut structural = Vec::new();
    let mut curves = Vec::new();
    for &t in &cfg.thresholds {
        let data = sweep(structural_data(preds, gts, t, cfg.grid_extent)?);
        let c = data.curve()?;
        structural.push(StructuralScore { threshold: t, sap: c.average_precision(), sf: c.max_f_score() });
        curves.push(data);
    }
    let data = sweep(heatmap_data(preds, gts, cfg.raster_extent, cfg.heatmap_tolerance)?);
    let c = data.curve()?;
    curves.push(data);
    Ok(EvalReport {
        structural,
        heatmap_ap: c.average_precision(),
        heatmap_f: c.max_f_score(),
        per_layer_sap: Vec::new(),
        curves,
    })
}
