// Interrupt a run, save it, load it back and finish: the result is
// bit-identical to a run that was never stopped.

use letr::data::{generate_dataset, SynthConfig};
use letr::model::{Checkpoint, ModelConfig, Stage};
use letr::train::{OptimConfig, TrainConfig, TrainState};

fn bits(state: &TrainState) -> Vec<u64> {
    state.model.store.iter().flat_map(|(_, p)| p.value.data().iter().map(|v| v.to_bits())).collect()
}

pub fn run_example() -> letr::Result<bool> {
    let model = ModelConfig {
        d_model: 8,
        num_heads: 2,
        coarse_encoder_layers: 1,
        coarse_decoder_layers: 1,
        fine_encoder_layers: 1,
        fine_decoder_layers: 1,
        num_entities: 6,
        ffn_dim: 16,
        backbone_channels: [4, 4, 8, 8, 8],
        ..ModelConfig::desk()
    };
    let mut cfg = TrainConfig {
        seed: 2,
        model,
        optim: OptimConfig { lr: 1e-3, ..OptimConfig::default() },
        batch_size: 2,
        coarse_epochs: 4,
        patience: None,
        ..TrainConfig::default()
    };
    let train = generate_dataset(&SynthConfig { extent: 32, seed: 4, ..SynthConfig::default() }, 4, "s")?;
    let dir = std::env::temp_dir().join(format!("letr-ckpt-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir).ok();
    let path = dir.join("coarse.ckpt");

    let mut straight = TrainState::coarse(&cfg)?;
    straight.run(&train, None, &cfg, None, None)?;

    cfg.coarse_epochs = 2;
    let mut first = TrainState::coarse(&cfg)?;
    first.run(&train, None, &cfg, None, None)?;
    first.save(&path)?;
    cfg.coarse_epochs = 4;
    let mut resumed = TrainState::load(&path)?;
    resumed.finished = false;
    resumed.run(&train, None, &cfg, None, None)?;

    let same = bits(&straight) == bits(&resumed);
    println!("resumed at epoch 2, finished at {}; bitwise equal: {same}", resumed.epoch);

    // a plain model checkpoint is enough for inference
    let ck = Checkpoint::from_model(&resumed.model, Stage::Coarse);
    let back = Checkpoint::from_bytes(&ck.to_bytes()?)?.to_model()?;
    println!("model checkpoint: {} tensors, {} scalars", ck.data.len(), back.store.num_scalars());
    let _ = std::fs::remove_dir_all(&dir);
    Ok(same)
}

fn main() -> letr::Result<()> {
    assert!(run_example()?);
    Ok(())
}
