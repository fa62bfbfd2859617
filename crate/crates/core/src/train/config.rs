//! Training configuration and its flat `key = value` text form.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::optim::OptimConfig;
use crate::data::AugmentConfig;
use crate::loss::{LossConfig, Normalization};
use crate::metrics::MetricConfig;
use crate::model::ModelConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub batch_size: usize,
    pub coarse_epochs: usize,
    pub fine_epochs: usize,
    /// Length of the focal tail at the end of the fine (or joint) stage.
    pub focal_epochs: usize,
    /// Classification γ before the tail.
    pub base_gamma: f64,
    pub focal_gamma: f64,
    /// Early stopping after this many epochs without a better validation
    /// sAP; `None` trains for the full budget.
    pub patience: Option<usize>,
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub metric: MetricConfig,
    /// Train coarse and fine layers together in one stage.
    pub joint: bool,
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            model: ModelConfig::desk(),
            optim: OptimConfig::default(),
            batch_size: 4,
            coarse_epochs: 500,
            fine_epochs: 325,
            focal_epochs: 25,
            base_gamma: 0.0,
            focal_gamma: 2.0,
            patience: Some(50),
            eval_every: 1,
            checkpoint_every: 10,
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            metric: MetricConfig::default(),
            joint: false,
            train_dir: None,
            val_dir: None,
            out_dir: PathBuf::from("runs/letr"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

/// `none`, `off` or `0` disable; anything else parses as the value.
fn parse_opt<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value {
        "none" | "off" | "0" => Ok(None),
        _ => parse(key, value).map(Some),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate()?;
        self.loss.validate()?;
        self.metric.validate()?;
        if self.batch_size == 0 || self.eval_every == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config("batch_size, eval_every and checkpoint_every must be positive".into()));
        }
        if self.focal_epochs > self.fine_epochs + if self.joint { self.coarse_epochs } else { 0 } {
            return Err(Error::Config(format!("focal_epochs {} exceeds the stage length", self.focal_epochs)));
        }
        if !(self.base_gamma >= 0.0 && self.focal_gamma >= 0.0) {
            return Err(Error::Config("focusing parameters must be non-negative".into()));
        }
        Ok(())
    }

    /// Applies one setting. Keys mirror the field paths, with `model.` and
    /// `optim.` prefixes for the nested records.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let o = &mut self.optim;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "model.preset" => {
                *m = match value {
                    "desk" => ModelConfig::desk(),
                    "full" => ModelConfig::default(),
                    _ => return Err(Error::Config(format!("model.preset: unknown preset {value:?}"))),
                }
            }
            "model.d_model" => m.d_model = parse(key, value)?,
            "model.num_heads" => m.num_heads = parse(key, value)?,
            "model.coarse_encoder_layers" => m.coarse_encoder_layers = parse(key, value)?,
            "model.coarse_decoder_layers" => m.coarse_decoder_layers = parse(key, value)?,
            "model.fine_encoder_layers" => m.fine_encoder_layers = parse(key, value)?,
            "model.fine_decoder_layers" => m.fine_decoder_layers = parse(key, value)?,
            "model.num_entities" => m.num_entities = parse(key, value)?,
            "model.ffn_dim" => m.ffn_dim = parse(key, value)?,
            "model.dropout" => m.dropout = parse(key, value)?,
            "model.coord_channels" => m.coord_channels = parse_bool(key, value)?,
            "model.input_extent" => m.input_extent = parse_opt(key, value)?,
            "model.backbone_channels" => {
                let v: Vec<usize> = parse_list(key, value)?;
                m.backbone_channels = v
                    .try_into()
                    .map_err(|_| Error::Config("model.backbone_channels: expected five channel counts".into()))?;
            }
            "optim.lr" => o.lr = parse(key, value)?,
            "optim.weight_decay" => o.weight_decay = parse(key, value)?,
            "optim.beta1" => o.beta1 = parse(key, value)?,
            "optim.beta2" => o.beta2 = parse(key, value)?,
            "optim.eps" => o.eps = parse(key, value)?,
            "optim.decay_factor" => o.decay_factor = parse(key, value)?,
            "optim.coarse_decay_every" => o.coarse_decay_every = parse(key, value)?,
            "optim.fine_decay_every" => o.fine_decay_every = parse(key, value)?,
            "optim.grad_clip" => o.grad_clip = parse_opt(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "coarse_epochs" => self.coarse_epochs = parse(key, value)?,
            "fine_epochs" => self.fine_epochs = parse(key, value)?,
            "focal_epochs" => self.focal_epochs = parse(key, value)?,
            "base_gamma" => self.base_gamma = parse(key, value)?,
            "focal_gamma" => self.focal_gamma = parse(key, value)?,
            "patience" => self.patience = parse_opt(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "loss.alpha_pos" => self.loss.focal.alpha_pos = parse(key, value)?,
            "loss.alpha_neg" => self.loss.focal.alpha_neg = parse(key, value)?,
            "loss.weight_classification" => self.loss.weights.classification = parse(key, value)?,
            "loss.weight_distance" => self.loss.weights.distance = parse(key, value)?,
            "loss.match_distance" => self.loss.matching.distance = parse(key, value)?,
            "loss.match_confidence" => self.loss.matching.confidence = parse(key, value)?,
            "loss.normalization" => {
                self.loss.normalization = match value {
                    "per_target" => Normalization::PerTarget,
                    "none" => Normalization::None,
                    _ => return Err(Error::Config(format!("loss.normalization: expected per_target or none, got {value:?}"))),
                }
            }
            "augment.hflip" => self.augment.hflip = parse_bool(key, value)?,
            "augment.vflip" => self.augment.vflip = parse_bool(key, value)?,
            "augment.transpose" => self.augment.transpose = parse_bool(key, value)?,
            "augment.resize_extents" => self.augment.resize_extents = parse_list(key, value)?,
            "augment.crop_min_fraction" => self.augment.crop_min_fraction = parse_opt(key, value)?,
            "metric.thresholds" => self.metric.thresholds = parse_list(key, value)?,
            "metric.grid_extent" => self.metric.grid_extent = parse(key, value)?,
            "metric.raster_extent" => self.metric.raster_extent = parse(key, value)?,
            "metric.heatmap_tolerance" => self.metric.heatmap_tolerance = parse(key, value)?,
            "metric.sweep_levels" => self.metric.sweep_levels = parse_opt(key, value)?,
            "joint" => self.joint = parse_bool(key, value)?,
            "train_dir" => self.train_dir = Some(PathBuf::from(value)),
            "val_dir" => self.val_dir = parse_opt::<String>(key, value)?.map(PathBuf::from),
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment;
    /// blank lines are ignored. `model.preset` must come before other
    /// `model.` keys, since it replaces the whole record.
    pub fn parse_str(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { path: origin.to_path_buf(), line: n + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| err(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, path)
    }

    /// Every setting, one `key = value` per line, readable by
    /// [`TrainConfig::parse_str`].
    pub fn to_kv(&self) -> String {
        let m = &self.model;
        let o = &self.optim;
        let path = |p: &Option<PathBuf>| p.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string());
        let lines: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("model.d_model", m.d_model.to_string()),
            ("model.num_heads", m.num_heads.to_string()),
            ("model.coarse_encoder_layers", m.coarse_encoder_layers.to_string()),
            ("model.coarse_decoder_layers", m.coarse_decoder_layers.to_string()),
            ("model.fine_encoder_layers", m.fine_encoder_layers.to_string()),
            ("model.fine_decoder_layers", m.fine_decoder_layers.to_string()),
            ("model.num_entities", m.num_entities.to_string()),
            ("model.ffn_dim", m.ffn_dim.to_string()),
            ("model.dropout", m.dropout.to_string()),
            ("model.coord_channels", m.coord_channels.to_string()),
            ("model.input_extent", opt_str(&m.input_extent)),
            ("model.backbone_channels", join(&m.backbone_channels)),
            ("optim.lr", o.lr.to_string()),
            ("optim.weight_decay", o.weight_decay.to_string()),
            ("optim.beta1", o.beta1.to_string()),
            ("optim.beta2", o.beta2.to_string()),
            ("optim.eps", o.eps.to_string()),
            ("optim.decay_factor", o.decay_factor.to_string()),
            ("optim.coarse_decay_every", o.coarse_decay_every.to_string()),
            ("optim.fine_decay_every", o.fine_decay_every.to_string()),
            ("optim.grad_clip", opt_str(&o.grad_clip)),
            ("batch_size", self.batch_size.to_string()),
            ("coarse_epochs", self.coarse_epochs.to_string()),
            ("fine_epochs", self.fine_epochs.to_string()),
            ("focal_epochs", self.focal_epochs.to_string()),
            ("base_gamma", self.base_gamma.to_string()),
            ("focal_gamma", self.focal_gamma.to_string()),
            ("patience", opt_str(&self.patience)),
            ("eval_every", self.eval_every.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("loss.alpha_pos", self.loss.focal.alpha_pos.to_string()),
            ("loss.alpha_neg", self.loss.focal.alpha_neg.to_string()),
            ("loss.weight_classification", self.loss.weights.classification.to_string()),
            ("loss.weight_distance", self.loss.weights.distance.to_string()),
            ("loss.match_distance", self.loss.matching.distance.to_string()),
            ("loss.match_confidence", self.loss.matching.confidence.to_string()),
            (
                "loss.normalization",
                match self.loss.normalization {
                    Normalization::PerTarget => "per_target".into(),
                    Normalization::None => "none".into(),
                },
            ),
            ("augment.hflip", self.augment.hflip.to_string()),
            ("augment.vflip", self.augment.vflip.to_string()),
            ("augment.transpose", self.augment.transpose.to_string()),
            ("augment.resize_extents", join(&self.augment.resize_extents)),
            ("augment.crop_min_fraction", opt_str(&self.augment.crop_min_fraction)),
            ("metric.thresholds", join(&self.metric.thresholds)),
            ("metric.grid_extent", self.metric.grid_extent.to_string()),
            ("metric.raster_extent", self.metric.raster_extent.to_string()),
            ("metric.heatmap_tolerance", self.metric.heatmap_tolerance.to_string()),
            ("metric.sweep_levels", opt_str(&self.metric.sweep_levels)),
            ("joint", self.joint.to_string()),
            ("train_dir", path(&self.train_dir)),
            ("val_dir", path(&self.val_dir)),
            ("out_dir", self.out_dir.display().to_string()),
        ];
        lines.into_iter().filter(|(k, v)| !(*k == "train_dir" && v == "none")).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
