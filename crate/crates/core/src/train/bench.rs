//! Desk-scale synthetic benchmark: fixed scenes, the desk model, a coarse
//! stage then a fine stage, scored on a held-out set at the 64 px grid.

use std::time::Instant;

use crate::data::{generate_dataset, AugmentConfig, Sample, SynthConfig};
use crate::metrics::{EvalReport, MetricConfig};
use crate::model::{Depth, ModelConfig};
use crate::Result;

use super::{evaluate, EpochRecord, OptimConfig, TrainConfig, TrainState};

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub synth: SynthConfig,
    pub train_count: usize,
    pub eval_count: usize,
    pub train_seed: u64,
    pub eval_seed: u64,
    pub config: TrainConfig,
}

impl Default for Benchmark {
    fn default() -> Self {
        Benchmark::desk()
    }
}

impl Benchmark {
    /// 200 training and 50 evaluation scenes of 64×64 with 1–4 segments.
    pub fn desk() -> Self {
        let config = TrainConfig {
            seed: 0,
            model: ModelConfig::desk(),
            optim: OptimConfig { lr: 2e-4, coarse_decay_every: 400, fine_decay_every: 400, ..OptimConfig::default() },
            batch_size: 4,
            coarse_epochs: 500,
            fine_epochs: 100,
            focal_epochs: 10,
            patience: None,
            augment: AugmentConfig { transpose: true, ..AugmentConfig::default() },
            metric: MetricConfig { thresholds: vec![5.0, 10.0], grid_extent: 64, raster_extent: 64, ..MetricConfig::default() },
            ..TrainConfig::default()
        };
        Benchmark {
            synth: SynthConfig { extent: 64, min_segments: 1, max_segments: 4, ..SynthConfig::default() },
            train_count: 200,
            eval_count: 50,
            train_seed: 1,
            eval_seed: 3,
            config,
        }
    }

    pub fn datasets(&self) -> Result<(Vec<Sample>, Vec<Sample>)> {
        let train = generate_dataset(&SynthConfig { seed: self.train_seed, ..self.synth.clone() }, self.train_count, "train")?;
        let eval = generate_dataset(&SynthConfig { seed: self.eval_seed, ..self.synth.clone() }, self.eval_count, "eval")?;
        Ok((train, eval))
    }

    /// Trains both stages without a validation split (so no early stopping)
    /// and scores the coarse-only and the full model on the evaluation set.
    pub fn run(&self, mut observe: impl FnMut(&EpochRecord)) -> Result<BenchmarkRun> {
        let (train, eval) = self.datasets()?;
        let cfg = &self.config;
        let start = Instant::now();
        let mut coarse = TrainState::coarse(cfg)?;
        coarse.run_observed(&train, None, cfg, None, None, &mut observe)?;
        let coarse_seconds = start.elapsed().as_secs_f64();
        let coarse_report = evaluate(&coarse.model, &eval, &cfg.metric, Depth::CoarseOnly, true)?;

        let start = Instant::now();
        let mut fine = TrainState::fine_from(coarse.model.clone(), cfg)?;
        fine.run_observed(&train, None, cfg, None, None, &mut observe)?;
        let fine_seconds = start.elapsed().as_secs_f64();
        let fine_report = evaluate(&fine.model, &eval, &cfg.metric, Depth::Full, true)?;
        Ok(BenchmarkRun { coarse, fine, coarse_report, fine_report, coarse_seconds, fine_seconds })
    }
}

#[derive(Debug)]
pub struct BenchmarkRun {
    pub coarse: TrainState,
    pub fine: TrainState,
    pub coarse_report: EvalReport,
    pub fine_report: EvalReport,
    pub coarse_seconds: f64,
    pub fine_seconds: f64,
}

impl BenchmarkRun {
    pub fn training_seconds(&self) -> f64 {
        self.coarse_seconds + self.fine_seconds
    }
}
