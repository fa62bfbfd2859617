// Forward pass of an untrained two-stage model: every decoder layer emits a
// full set of scored segments, and inference keeps the confident ones.

use letr::data::{generate_scene, SynthConfig};
use letr::model::{inference_filter, Depth, Letr, ModelConfig};
use letr::rng::seeded;

pub fn run_example() -> letr::Result<usize> {
    let model = Letr::new(ModelConfig::desk(), 0)?;
    println!("desk model: {} parameters", model.store.num_scalars());

    let scene = generate_scene(&SynthConfig::default(), "demo", &mut seeded(4))?;
    let coarse = model.predict_all(&scene.image, Depth::CoarseOnly)?;
    let full = model.predict_all(&scene.image, Depth::Full)?;
    println!("coarse-only depth: {} layers, full depth: {} layers", coarse.len(), full.len());

    let last = full.last().cloned().unwrap_or_default();
    let best = last.iter().map(|p| p.score).fold(0.0, f64::max);
    println!("{} entities, top score {best:.3}", last.len());
    let kept = inference_filter(&last, 0.5)?;
    println!("kept at 0.5: {}", kept.len());
    Ok(full.len())
}

fn main() -> letr::Result<()> {
    run_example().map(|_| ())
}
