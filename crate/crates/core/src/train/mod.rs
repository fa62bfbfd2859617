//! Two-stage training: the coarse stage fits backbone, coarse transformer,
//! entities and heads on coarse-layer predictions; the fine stage freezes
//! all of that, copies the coarse decoder into the fine decoder and fits the
//! fine transformer and heads on fine-layer predictions, ending with a
//! focal-loss tail. A joint mode trains everything at once.

pub mod bench;
pub mod cli;
mod config;
mod optim;

pub use config::TrainConfig;
pub use optim::{clip_grad_norm, global_norm, AdamW, OptimConfig};

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{augment, Sample};
use crate::loss::{total_loss_var, LayerOutput, LayerTerms};
use crate::metrics::{evaluate_predictions, structural_ap, EvalReport, MetricConfig};
use crate::model::{Checkpoint, Depth, Letr, ParamGroup, Stage};
use crate::nn::Ctx;
use crate::rng::{substream, Rng, RngState};
use crate::tensor::{Tape, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Coarse,
    Fine,
    Joint,
}

impl Phase {
    pub fn trains(self, group: ParamGroup) -> bool {
        match self {
            Phase::Coarse => group.trains_in(Stage::Coarse),
            Phase::Fine => group.trains_in(Stage::Fine),
            Phase::Joint => true,
        }
    }

    pub fn depth(self) -> Depth {
        match self {
            Phase::Coarse => Depth::CoarseOnly,
            Phase::Fine | Phase::Joint => Depth::Full,
        }
    }

    /// Stage tag written into checkpoints.
    pub fn stage(self) -> Stage {
        match self {
            Phase::Coarse => Stage::Coarse,
            Phase::Fine | Phase::Joint => Stage::Fine,
        }
    }

    pub fn epochs(self, cfg: &TrainConfig) -> usize {
        match self {
            Phase::Coarse => cfg.coarse_epochs,
            Phase::Fine => cfg.fine_epochs,
            Phase::Joint => cfg.coarse_epochs + cfg.fine_epochs,
        }
    }

    fn decay_every(self, cfg: &TrainConfig) -> usize {
        match self {
            Phase::Coarse | Phase::Joint => cfg.optim.coarse_decay_every,
            Phase::Fine => cfg.optim.fine_decay_every,
        }
    }

    /// First epoch of the focal tail.
    pub fn tail_start(self, cfg: &TrainConfig) -> usize {
        match self {
            Phase::Coarse => usize::MAX,
            Phase::Fine | Phase::Joint => self.epochs(cfg) - cfg.focal_epochs.min(self.epochs(cfg)),
        }
    }

    pub fn gamma_at(self, epoch: usize, cfg: &TrainConfig) -> f64 {
        if epoch >= self.tail_start(cfg) {
            cfg.focal_gamma
        } else {
            cfg.base_gamma
        }
    }

    fn stream(self) -> u64 {
        match self {
            Phase::Coarse => 1,
            Phase::Fine => 2,
            Phase::Joint => 3,
        }
    }

    /// Decoder layers whose predictions enter the loss.
    fn supervised(self, layers: &[LayerOutput], num_coarse: usize) -> &[LayerOutput] {
        match self {
            Phase::Fine => &layers[num_coarse..],
            Phase::Coarse | Phase::Joint => layers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// `(threshold, sAP, sF)` per structural threshold.
    pub structural: Vec<(f64, f64, f64)>,
    pub heatmap_ap: f64,
    pub heatmap_f: f64,
}

impl From<&EvalReport> for EvalSummary {
    fn from(r: &EvalReport) -> Self {
        EvalSummary {
            structural: r.structural.iter().map(|s| (s.threshold, s.sap, s.sf)).collect(),
            heatmap_ap: r.heatmap_ap,
            heatmap_f: r.heatmap_f,
        }
    }
}

/// One line of the epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    /// Epochs completed in this phase, counting this one.
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub gamma: f64,
    /// Mean per-sample total loss.
    pub loss: f64,
    /// Mean per-sample normalized classification and distance terms, summed
    /// over supervised layers.
    pub classification: f64,
    pub distance: f64,
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Best {
    pub epoch: usize,
    pub score: f64,
    pub params: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub phase: Phase,
    pub epoch: usize,
    pub model: Letr,
    pub optimizer: AdamW,
    pub rng: Rng,
    pub best: Option<Best>,
    pub history: Vec<EpochRecord>,
    pub finished: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    phase: Phase,
    epoch: usize,
    step: u64,
    rng: RngState,
    best: Option<(usize, f64)>,
    history: Vec<EpochRecord>,
    finished: bool,
}

impl TrainState {
    pub fn new(phase: Phase, model: Letr, seed: u64) -> Self {
        let optimizer = AdamW::new(&model.store);
        TrainState { phase, epoch: 0, model, optimizer, rng: substream(seed, phase.stream()), best: None, history: Vec::new(), finished: false }
    }

    /// Fresh coarse stage over a newly initialised model.
    pub fn coarse(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::new(Phase::Coarse, Letr::new(cfg.model.clone(), cfg.seed)?, cfg.seed))
    }

    /// Fine stage continuing from a trained coarse model: the fine decoder is
    /// initialised from the coarse decoder and the optimiser starts afresh.
    pub fn fine_from(mut coarse: Letr, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        coarse.init_fine_from_coarse()?;
        Ok(Self::new(Phase::Fine, coarse, cfg.seed))
    }

    pub fn joint(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::new(Phase::Joint, Letr::new(cfg.model.clone(), cfg.seed)?, cfg.seed))
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    fn snapshot(&self) -> Vec<Tensor> {
        self.model.store.iter().map(|(_, p)| p.value.clone()).collect()
    }

    fn restore(&mut self, params: &[Tensor]) {
        let ids: Vec<_> = self.model.store.ids().collect();
        for (id, t) in ids.into_iter().zip(params) {
            self.model.store.get_mut(id).value = t.clone();
        }
    }

    /// One pass over `train` in a shuffled order, then validation if due.
    pub fn run_epoch(&mut self, train: &[Sample], val: Option<&[Sample]>, cfg: &TrainConfig) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::Input("training set is empty".into()));
        }
        let phase = self.phase;
        let lr = cfg.optim.lr_at(self.epoch, phase.decay_every(cfg));
        let gamma = phase.gamma_at(self.epoch, cfg);
        let mut loss_cfg = cfg.loss;
        loss_cfg.focal.gamma = gamma;

        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut loss_sum, mut cls_sum, mut dist_sum, mut norm_sum) = (0.0, 0.0, 0.0, 0.0);
        let batches = order.chunks(cfg.batch_size);
        let num_batches = batches.len();
        for batch in batches {
            let mut acc: Vec<Option<Vec<f64>>> = vec![None; self.model.store.len()];
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let sample = augment(&train[i], &cfg.augment, &mut self.rng)?;
                let mut tape = Tape::new();
                let model = &self.model;
                let bound = model.store.bind(&mut tape, |id| phase.trains(model.group(id)));
                let mut ctx = Ctx::new(&mut tape, &bound, &mut self.rng, true);
                let image = ctx.tape.constant(sample.image);
                let out = model.forward(&mut ctx, image, phase.depth())?;
                let layers = phase.supervised(&out.layers, out.num_coarse);
                if let Some(bad) = layers.iter().position(|l| !(tape.value(l.probs).is_finite() && tape.value(l.coords).is_finite())) {
                    return Err(Error::NonFinite {
                        step: self.optimizer.step,
                        detail: format!("layer {bad}: non-finite predictions on sample {}", train[i].id),
                    });
                }
                let loss = total_loss_var(&mut tape, layers, &sample.targets, &loss_cfg)?;
                if !loss.value.is_finite() {
                    return Err(Error::NonFinite { step: self.optimizer.step, detail: describe_layers(&loss.layers) });
                }
                tape.backward(loss.total)?;
                for (slot, g) in acc.iter_mut().zip(bound.grads(&tape)) {
                    let Some(g) = g else { continue };
                    match slot {
                        Some(a) => a.iter_mut().zip(&g).for_each(|(a, g)| *a += g * inv),
                        None => *slot = Some(g.iter().map(|g| g * inv).collect()),
                    }
                }
                loss_sum += loss.value;
                cls_sum += loss.layers.iter().map(|t| t.scale * t.classification).sum::<f64>();
                dist_sum += loss.layers.iter().map(|t| t.scale * t.distance).sum::<f64>();
            }
            let norm = match cfg.optim.grad_clip {
                Some(c) => clip_grad_norm(&mut acc, c),
                None => global_norm(&acc),
            };
            if !norm.is_finite() {
                return Err(Error::NonFinite { step: self.optimizer.step, detail: format!("gradient norm {norm}") });
            }
            norm_sum += norm;
            self.optimizer.update(&mut self.model.store, &acc, lr, &cfg.optim)?;
        }
        self.epoch += 1;

        let n = train.len() as f64;
        let mut record = EpochRecord {
            phase,
            epoch: self.epoch,
            step: self.optimizer.step,
            lr,
            gamma,
            loss: loss_sum / n,
            classification: cls_sum / n,
            distance: dist_sum / n,
            grad_norm: norm_sum / num_batches as f64,
            eval: None,
        };
        if let Some(val) = val {
            if self.epoch.is_multiple_of(cfg.eval_every) || self.epoch == phase.epochs(cfg) {
                let report = evaluate(&self.model, val, &cfg.metric, phase.depth(), false)?;
                let score = report.structural[0].sap;
                if self.best.as_ref().is_none_or(|b| score > b.score) {
                    self.best = Some(Best { epoch: self.epoch, score, params: self.snapshot() });
                }
                record.eval = Some(EvalSummary::from(&report));
            }
        }
        self.history.push(record.clone());
        Ok(record)
    }

    /// Epochs since the best validation score, when one exists.
    pub fn stale_epochs(&self) -> Option<usize> {
        self.best.as_ref().map(|b| self.epoch - b.epoch)
    }

    /// Trains until the phase budget is spent or validation stops
    /// improving, then restores the best validated parameters. In the fine
    /// and joint phases early stopping jumps to the focal tail rather than
    /// skipping it; the tail itself always runs. Every record is appended to `log`; a checkpoint is
    /// written to `checkpoint` every `checkpoint_every` epochs and at the end.
    pub fn run(&mut self, train: &[Sample], val: Option<&[Sample]>, cfg: &TrainConfig, log: Option<&Path>, checkpoint: Option<&Path>) -> Result<()> {
        self.run_observed(train, val, cfg, log, checkpoint, |_| {})
    }

    /// [`TrainState::run`], calling `observe` after every epoch.
    pub fn run_observed(
        &mut self,
        train: &[Sample],
        val: Option<&[Sample]>,
        cfg: &TrainConfig,
        log: Option<&Path>,
        checkpoint: Option<&Path>,
        observe: impl FnMut(&EpochRecord),
    ) -> Result<()> {
        self.run_until(train, val, cfg, log, checkpoint, usize::MAX, observe)
    }

    /// Like [`TrainState::run_observed`] but pauses, without finishing the
    /// phase, once `pause` epochs are done. Calling it again continues the
    /// same trajectory.
    #[allow(clippy::too_many_arguments)]
    pub fn run_until(
        &mut self,
        train: &[Sample],
        val: Option<&[Sample]>,
        cfg: &TrainConfig,
        log: Option<&Path>,
        checkpoint: Option<&Path>,
        pause: usize,
        mut observe: impl FnMut(&EpochRecord),
    ) -> Result<()> {
        let total = self.phase.epochs(cfg);
        let mut stopped = false;
        while !self.finished && self.epoch < total {
            if self.epoch >= pause {
                return Ok(());
            }
            let record = self.run_epoch(train, val, cfg)?;
            observe(&record);
            if let Some(path) = log {
                append_log(path, &record)?;
            }
            if let (Some(p), Some(stale)) = (cfg.patience, self.stale_epochs()) {
                let tail = self.phase.tail_start(cfg);
                if stale >= p && self.epoch < tail {
                    if tail >= total {
                        stopped = true;
                    } else {
                        let best = self.best.as_ref().expect("stale implies best").params.clone();
                        self.restore(&best);
                        self.epoch = tail;
                    }
                }
            }
            if let Some(path) = checkpoint {
                if self.epoch.is_multiple_of(cfg.checkpoint_every) {
                    self.save(path)?;
                }
            }
            if stopped {
                break;
            }
        }
        if self.finished {
            return Ok(());
        }
        if let Some(best) = self.best.take() {
            self.restore(&best.params);
            self.best = Some(best);
        }
        self.finished = true;
        if let Some(path) = checkpoint {
            self.save(path)?;
        }
        Ok(())
    }

    /// Model parameters, optimiser moments, best snapshot and RNG state.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::from_model(&self.model, self.phase.stage());
        let names: Vec<String> = self.model.store.iter().map(|(_, p)| p.name.clone()).collect();
        for (k, name) in names.iter().enumerate() {
            let shape = [self.optimizer.m[k].len()];
            ck.push(format!("optim.m.{name}"), Tensor::new(shape, self.optimizer.m[k].clone())?);
            ck.push(format!("optim.v.{name}"), Tensor::new(shape, self.optimizer.v[k].clone())?);
        }
        if let Some(b) = &self.best {
            for (name, t) in names.iter().zip(&b.params) {
                ck.push(format!("best.{name}"), t.clone());
            }
        }
        let meta = Meta {
            phase: self.phase,
            epoch: self.epoch,
            step: self.optimizer.step,
            rng: RngState::capture(&self.rng),
            best: self.best.as_ref().map(|b| (b.epoch, b.score)),
            history: self.history.clone(),
            finished: self.finished,
        };
        ck.header.meta = serde_json::to_value(meta)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: Meta = serde_json::from_value(ck.header.meta.clone())
            .map_err(|e| Error::Config(format!("checkpoint carries no training state: {e}")))?;
        let model = ck.to_model()?;
        let names: Vec<String> = model.store.iter().map(|(_, p)| p.name.clone()).collect();
        let get = |name: String| ck.get(&name).cloned().ok_or_else(|| Error::Config(format!("checkpoint lacks {name}")));
        let mut optimizer = AdamW { step: meta.step, m: Vec::new(), v: Vec::new() };
        for name in &names {
            optimizer.m.push(get(format!("optim.m.{name}"))?.into_data());
            optimizer.v.push(get(format!("optim.v.{name}"))?.into_data());
        }
        let best = match meta.best {
            Some((epoch, score)) => Some(Best { epoch, score, params: names.iter().map(|n| get(format!("best.{n}"))).collect::<Result<_>>()? }),
            None => None,
        };
        Ok(TrainState {
            phase: meta.phase,
            epoch: meta.epoch,
            model,
            optimizer,
            rng: meta.rng.restore()?,
            best,
            history: meta.history,
            finished: meta.finished,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn describe_layers(layers: &[LayerTerms]) -> String {
    layers
        .iter()
        .enumerate()
        .map(|(i, t)| format!("layer {i}: classification {} distance {}", t.classification, t.distance))
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn append_log(path: &Path, record: &EpochRecord) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{}", serde_json::to_string(record)?).map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::Parse { path: path.to_path_buf(), line: n + 1, msg: e.to_string() }))
        .collect()
}

/// Loads the coarse-stage result a fine stage starts from.
pub fn load_coarse(path: &Path) -> Result<Letr> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "coarse checkpoint {} not found; the fine stage needs a completed coarse stage (run `train --stage coarse` first)",
            path.display()
        )));
    }
    let ck = Checkpoint::load(path)?;
    if ck.header.stage != Stage::Coarse {
        return Err(Error::Config(format!("{} is a {:?} checkpoint, expected a coarse one", path.display(), ck.header.stage)));
    }
    ck.to_model()
}

/// Runs the coarse stage to completion.
pub fn train_stage_coarse(train: &[Sample], val: Option<&[Sample]>, cfg: &TrainConfig, log: Option<&Path>) -> Result<TrainState> {
    let mut state = TrainState::coarse(cfg)?;
    state.run(train, val, cfg, log, None)?;
    Ok(state)
}

/// Runs the fine stage on top of a trained coarse model.
pub fn train_stage_fine(coarse: Letr, train: &[Sample], val: Option<&[Sample]>, cfg: &TrainConfig, log: Option<&Path>) -> Result<TrainState> {
    let mut state = TrainState::fine_from(coarse, cfg)?;
    state.run(train, val, cfg, log, None)?;
    Ok(state)
}

/// Predicts every sample and scores the final decoder layer. With
/// `per_layer`, also scores every decoder layer at the first structural
/// threshold.
pub fn evaluate(model: &Letr, data: &[Sample], cfg: &MetricConfig, depth: Depth, per_layer: bool) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Input("evaluation set is empty".into()));
    }
    let gts: Vec<_> = data.iter().map(|s| s.targets.clone()).collect();
    let all: Vec<Vec<_>> = data.iter().map(|s| model.predict_all(&s.image, depth)).collect::<Result<_>>()?;
    let last: Vec<_> = all.iter().map(|layers| layers.last().expect("at least one layer").clone()).collect();
    let mut report = evaluate_predictions(&last, &gts, cfg)?;
    if per_layer {
        let num_layers = all[0].len();
        for l in 0..num_layers {
            let preds: Vec<_> = all.iter().map(|layers| layers[l].clone()).collect();
            report.per_layer_sap.push(structural_ap(&preds, &gts, cfg.thresholds[0], cfg.grid_extent)?);
        }
    }
    Ok(report)
}
