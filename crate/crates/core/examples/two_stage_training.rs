// Coarse stage, then fine stage initialised from it, on a tiny model and a
// handful of 32 px scenes. Ends with per-layer structural AP.

use letr::data::{generate_dataset, SynthConfig};
use letr::metrics::MetricConfig;
use letr::model::{Depth, ModelConfig};
use letr::train::{evaluate, OptimConfig, TrainConfig, TrainState};

fn tiny() -> TrainConfig {
    let model = ModelConfig {
        d_model: 8,
        num_heads: 2,
        coarse_encoder_layers: 1,
        coarse_decoder_layers: 2,
        fine_encoder_layers: 1,
        fine_decoder_layers: 2,
        num_entities: 6,
        ffn_dim: 16,
        backbone_channels: [4, 4, 8, 8, 8],
        ..ModelConfig::desk()
    };
    TrainConfig {
        seed: 1,
        model,
        optim: OptimConfig { lr: 1e-3, ..OptimConfig::default() },
        batch_size: 2,
        coarse_epochs: 4,
        fine_epochs: 3,
        focal_epochs: 1,
        patience: None,
        metric: MetricConfig { thresholds: vec![5.0, 10.0], grid_extent: 32, raster_extent: 32, ..MetricConfig::default() },
        ..TrainConfig::default()
    }
}

pub fn run_example() -> letr::Result<Vec<f64>> {
    let cfg = tiny();
    let data = SynthConfig { extent: 32, max_segments: 3, seed: 9, ..SynthConfig::default() };
    let train = generate_dataset(&data, 6, "train")?;
    let val = generate_dataset(&SynthConfig { seed: 10, ..data }, 3, "val")?;

    let mut coarse = TrainState::coarse(&cfg)?;
    coarse.run_observed(&train, Some(&val), &cfg, None, None, |r| {
        println!("coarse epoch {:>2}  loss {:.4}  lr {:.0e}", r.epoch, r.loss, r.lr);
    })?;

    let mut fine = TrainState::fine_from(coarse.model, &cfg)?;
    fine.run_observed(&train, Some(&val), &cfg, None, None, |r| {
        println!("fine   epoch {:>2}  loss {:.4}  gamma {}", r.epoch, r.loss, r.gamma);
    })?;

    let report = evaluate(&fine.model, &val, &cfg.metric, Depth::Full, true)?;
    println!("sAP5 {:.3}  sAP10 {:.3}", report.sap(5.0).unwrap_or(0.0), report.sap(10.0).unwrap_or(0.0));
    for (i, s) in report.per_layer_sap.iter().enumerate() {
        println!("layer {i}: sAP5 {s:.3}");
    }
    Ok(report.per_layer_sap)
}

fn main() -> letr::Result<()> {
    run_example().map(|_| ())
}
