//! Bipartite matching between predicted and ground-truth segments.

mod hungarian;

pub use hungarian::hungarian;

use serde::{Deserialize, Serialize};

use crate::geometry::{LineSegment, ScoredSegment};
use crate::{Error, Result};

/// Sum of absolute coordinate differences between corresponding endpoints,
/// minimised over the two ways of pairing the endpoints.
pub fn endpoint_distance(a: &LineSegment, b: &LineSegment) -> f64 {
    let l1 = |p: [f64; 2], q: [f64; 2]| (p[0] - q[0]).abs() + (p[1] - q[1]).abs();
    let direct = l1(a.p1, b.p1) + l1(a.p2, b.p2);
    let swapped = l1(a.p1, b.p2) + l1(a.p2, b.p1);
    direct.min(swapped)
}

/// Whether `b` lines up with `a` more closely when its endpoints are swapped.
pub fn prefers_swapped(a: &LineSegment, b: &LineSegment) -> bool {
    let l1 = |p: [f64; 2], q: [f64; 2]| (p[0] - q[0]).abs() + (p[1] - q[1]).abs();
    l1(a.p1, b.p2) + l1(a.p2, b.p1) < l1(a.p1, b.p1) + l1(a.p2, b.p2)
}

/// λ1 weighs endpoint distance, λ2 confidence in the matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchCostWeights {
    pub distance: f64,
    pub confidence: f64,
}

impl Default for MatchCostWeights {
    fn default() -> Self {
        MatchCostWeights { distance: 5.0, confidence: 1.0 }
    }
}

impl MatchCostWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance > 0.0) || !(self.confidence >= 0.0) {
            return Err(Error::Parameter(format!(
                "match weights need distance > 0 and confidence >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Dense row-major `rows × cols` cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("cost matrix", format!("{rows}×{cols} with {} entries", data.len())));
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("cost matrix", "ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// Optimal assignment σ*: prediction index → target index, or unmatched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    assignment: Vec<Option<usize>>,
}

impl MatchResult {
    pub fn new(assignment: Vec<Option<usize>>) -> Self {
        MatchResult { assignment }
    }

    pub fn target_of(&self, prediction: usize) -> Option<usize> {
        self.assignment[prediction]
    }

    pub fn assignment(&self) -> &[Option<usize>] {
        &self.assignment
    }

    pub fn num_predictions(&self) -> usize {
        self.assignment.len()
    }

    /// `(prediction, target)` pairs in prediction order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.assignment.iter().enumerate().filter_map(|(i, t)| t.map(|t| (i, t)))
    }

    pub fn unmatched(&self) -> impl Iterator<Item = usize> + '_ {
        self.assignment.iter().enumerate().filter(|(_, t)| t.is_none()).map(|(i, _)| i)
    }

    pub fn num_matched(&self) -> usize {
        self.assignment.iter().filter(|t| t.is_some()).count()
    }

    pub fn total_cost(&self, cost: &CostMatrix) -> f64 {
        self.pairs().map(|(i, j)| cost.get(i, j)).sum()
    }
}

/// `cost[i][j] = λ1 · d(prediction i, target j) − λ2 · p_i`.
pub fn match_cost(predictions: &[ScoredSegment], targets: &[LineSegment], w: MatchCostWeights) -> Result<CostMatrix> {
    if predictions.len() < targets.len() {
        return Err(Error::Contract(format!(
            "{} targets exceed the {} line entities",
            targets.len(),
            predictions.len()
        )));
    }
    let data = predictions
        .iter()
        .flat_map(|p| targets.iter().map(move |t| w.distance * endpoint_distance(&p.segment, t) - w.confidence * p.score))
        .collect();
    CostMatrix::new(predictions.len(), targets.len(), data)
}

/// Matching cost followed by the Hungarian solver.
pub fn match_predictions(predictions: &[ScoredSegment], targets: &[LineSegment], w: MatchCostWeights) -> Result<MatchResult> {
    hungarian(&match_cost(predictions, targets, w)?)
}
