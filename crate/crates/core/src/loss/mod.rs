//! Set-prediction losses: focal-style classification, L1 endpoint distance
//! and their weighted, deep-supervised total.
//!
//! Every loss exists twice: a plain `f64` evaluation over
//! [`ScoredSegment`]s and a differentiable version recorded on a [`Tape`].
//! Both share the same matching, so their values agree exactly.

use serde::{Deserialize, Serialize};

use crate::geometry::{LineSegment, ScoredSegment};
use crate::matching::{match_predictions, prefers_swapped, endpoint_distance, MatchCostWeights, MatchResult};
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-7;

/// `α1` weighs matched predictions, `α2` unmatched ones, `γ` focuses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha_pos: f64,
    pub alpha_neg: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams { alpha_pos: 1.0, alpha_neg: 0.1, gamma: 2.0 }
    }
}

impl FocalParams {
    pub fn with_gamma(self, gamma: f64) -> Self {
        FocalParams { gamma, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_pos > 0.0 && self.alpha_neg > 0.0 && self.gamma >= 0.0) {
            return Err(Error::Parameter(format!("focal parameters need α1, α2 > 0 and γ >= 0, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub classification: f64,
    pub distance: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { classification: 1.0, distance: 5.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.classification >= 0.0 && self.distance >= 0.0 && self.classification + self.distance > 0.0;
        if !ok {
            return Err(Error::Parameter(format!("loss weights must be >= 0 and not both 0, got {self:?}")));
        }
        Ok(())
    }
}

/// How a layer's summed loss is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Plain sums.
    None,
    /// Divide each layer's loss by `max(M, 1)`, `M` = number of targets.
    #[default]
    PerTarget,
}

impl Normalization {
    pub fn factor(self, num_targets: usize) -> f64 {
        match self {
            Normalization::None => 1.0,
            Normalization::PerTarget => 1.0 / num_targets.max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossConfig {
    pub focal: FocalParams,
    pub weights: LossWeights,
    pub matching: MatchCostWeights,
    pub normalization: Normalization,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        self.focal.validate()?;
        self.weights.validate()?;
        self.matching.validate()
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Focal-style classification loss of a single prediction.
pub fn classification_term(p: f64, matched: bool, fp: FocalParams) -> f64 {
    let p = clamp_prob(p);
    if matched {
        -fp.alpha_pos * (1.0 - p).powf(fp.gamma) * p.ln()
    } else {
        -fp.alpha_neg * p.powf(fp.gamma) * (1.0 - p).ln()
    }
}

pub fn classification_loss(predictions: &[ScoredSegment], m: &MatchResult, fp: FocalParams) -> f64 {
    predictions
        .iter()
        .enumerate()
        .map(|(i, p)| classification_term(p.score, m.target_of(i).is_some(), fp))
        .sum()
}

/// Sum of endpoint distances over matched pairs.
pub fn distance_loss(predictions: &[ScoredSegment], targets: &[LineSegment], m: &MatchResult) -> f64 {
    m.pairs().map(|(i, j)| endpoint_distance(&predictions[i].segment, &targets[j])).sum()
}

/// Loss of one decoder layer's predictions, with its own matching.
pub fn layer_loss(predictions: &[ScoredSegment], targets: &[LineSegment], cfg: &LossConfig) -> Result<LayerTerms> {
    let m = match_predictions(predictions, targets, cfg.matching)?;
    let terms = LayerTerms {
        classification: classification_loss(predictions, &m, cfg.focal),
        distance: distance_loss(predictions, targets, &m),
        matched: m.num_matched(),
        scale: cfg.normalization.factor(targets.len()),
    };
    Ok(terms)
}

/// Weighted loss summed over all decoder layers, each matched independently.
pub fn total_loss(per_layer: &[Vec<ScoredSegment>], targets: &[LineSegment], cfg: &LossConfig) -> Result<f64> {
    let mut total = 0.0;
    for preds in per_layer {
        total += layer_loss(preds, targets, cfg)?.weighted(cfg.weights);
    }
    Ok(total)
}

/// Unweighted loss terms of one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerTerms {
    pub classification: f64,
    pub distance: f64,
    pub matched: usize,
    /// Normalization factor applied by [`LayerTerms::weighted`].
    pub scale: f64,
}

impl LayerTerms {
    pub fn weighted(&self, w: LossWeights) -> f64 {
        self.scale * (w.classification * self.classification + w.distance * self.distance)
    }
}

// ---- differentiable versions ----------------------------------------------

/// One decoder layer's head outputs on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LayerOutput {
    /// `[N, 1]` confidences in (0, 1).
    pub probs: Var,
    /// `[N, 4]` endpoints `(x1, y1, x2, y2)` in normalized coordinates.
    pub coords: Var,
}

/// Reads a layer's current values as scored segments.
pub fn read_predictions(tape: &Tape, out: &LayerOutput) -> Vec<ScoredSegment> {
    let probs = tape.value(out.probs).data();
    let coords = tape.value(out.coords).data();
    probs
        .iter()
        .zip(coords.chunks_exact(4))
        .map(|(&p, c)| ScoredSegment::new(LineSegment::new(c[0], c[1], c[2], c[3]), p))
        .collect()
}

pub fn classification_loss_var(tape: &mut Tape, probs: Var, m: &MatchResult, fp: FocalParams) -> Result<Var> {
    let shape = tape.shape(probs).to_vec();
    let n = tape.value(probs).len();
    if n != m.num_predictions() {
        return Err(Error::dim("classification_loss", format!("{n} probabilities, {} in matching", m.num_predictions())));
    }
    let mut pos_w = vec![0.0; n];
    let mut neg_w = vec![0.0; n];
    for (i, t) in m.assignment().iter().enumerate() {
        if t.is_some() {
            pos_w[i] = -fp.alpha_pos;
        } else {
            neg_w[i] = -fp.alpha_neg;
        }
    }
    let pos_w = tape.constant(Tensor::new(shape.clone(), pos_w)?);
    let neg_w = tape.constant(Tensor::new(shape, neg_w)?);

    let p = tape.clamp(probs, PROB_EPS, 1.0 - PROB_EPS);
    let q = tape.affine(p, -1.0, 1.0);
    let log_p = tape.log(p);
    let log_q = tape.log(q);
    let focus_pos = tape.powf(q, fp.gamma);
    let focus_neg = tape.powf(p, fp.gamma);
    let pos = tape.mul(focus_pos, log_p)?;
    let neg = tape.mul(focus_neg, log_q)?;
    let pos = tape.mul(pos, pos_w)?;
    let neg = tape.mul(neg, neg_w)?;
    let all = tape.add(pos, neg)?;
    Ok(tape.sum(all))
}

pub fn distance_loss_var(tape: &mut Tape, coords: Var, targets: &[LineSegment], m: &MatchResult) -> Result<Var> {
    let (n, c) = tape.value(coords).dims2()?;
    if c != 4 || n != m.num_predictions() {
        return Err(Error::dim("distance_loss", format!("coords {:?} vs {} predictions", tape.shape(coords), m.num_predictions())));
    }
    let pairs: Vec<(usize, usize)> = m.pairs().collect();
    if pairs.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let rows: Vec<usize> = pairs.iter().map(|&(i, _)| i).collect();
    let mut oriented = Vec::with_capacity(4 * pairs.len());
    for &(i, j) in &pairs {
        let r = tape.value(coords).row(i);
        let pred = LineSegment::new(r[0], r[1], r[2], r[3]);
        let t = if prefers_swapped(&pred, &targets[j]) { targets[j].reversed() } else { targets[j] };
        oriented.extend_from_slice(&t.to_array());
    }
    let picked = tape.gather_rows(coords, &rows)?;
    let tgt = tape.constant(Tensor::new([pairs.len(), 4], oriented)?);
    let diff = tape.sub(picked, tgt)?;
    let diff = tape.abs(diff);
    Ok(tape.sum(diff))
}

/// Differentiable loss over all decoder layers plus its per-layer breakdown.
#[derive(Debug, Clone)]
pub struct TapeLoss {
    pub total: Var,
    pub value: f64,
    pub layers: Vec<LayerTerms>,
}

pub fn total_loss_var(tape: &mut Tape, layers: &[LayerOutput], targets: &[LineSegment], cfg: &LossConfig) -> Result<TapeLoss> {
    if layers.is_empty() {
        return Err(Error::Contract("loss needs at least one decoder layer".into()));
    }
    let mut total: Option<Var> = None;
    let mut terms = Vec::with_capacity(layers.len());
    for out in layers {
        let preds = read_predictions(tape, out);
        let m = match_predictions(&preds, targets, cfg.matching)?;
        let cls = classification_loss_var(tape, out.probs, &m, cfg.focal)?;
        let dist = distance_loss_var(tape, out.coords, targets, &m)?;
        let scale = cfg.normalization.factor(targets.len());
        let layer = LayerTerms {
            classification: tape.value(cls).item(),
            distance: tape.value(dist).item(),
            matched: m.num_matched(),
            scale,
        };
        let cls = tape.scale(cls, scale * cfg.weights.classification);
        let dist = tape.scale(dist, scale * cfg.weights.distance);
        let layer_total = tape.add(cls, dist)?;
        total = Some(match total {
            Some(t) => tape.add(t, layer_total)?,
            None => layer_total,
        });
        terms.push(layer);
    }
    let total = total.expect("at least one layer");
    Ok(TapeLoss { total, value: tape.value(total).item(), layers: terms })
}
