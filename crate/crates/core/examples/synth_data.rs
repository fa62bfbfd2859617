// Synthetic line scenes: generate, augment, write to disk and read back.

use letr::data::{augment, generate_dataset, load_dataset, save_dataset, AugmentConfig, SynthConfig};
use letr::rng::seeded;

pub fn run_example() -> letr::Result<usize> {
    let cfg = SynthConfig { seed: 3, ..SynthConfig::default() };
    let scenes = generate_dataset(&cfg, 8, "scene")?;
    for s in scenes.iter().take(3) {
        println!("{}: {}x{} with {} segments, first {:?}", s.id, s.width(), s.height(), s.targets.len(), s.targets[0]);
    }

    let aug = AugmentConfig { transpose: true, ..AugmentConfig::default() };
    let mut rng = seeded(1);
    let a = augment(&scenes[0], &aug, &mut rng)?;
    println!("augmented {}: {}x{}, {} segments", a.id, a.width(), a.height(), a.targets.len());

    let dir = std::env::temp_dir().join(format!("letr-synth-example-{}", std::process::id()));
    save_dataset(&scenes, &dir)?;
    let back = load_dataset(&dir)?;
    println!("round trip through {}: {} scenes", dir.display(), back.len());
    let _ = std::fs::remove_dir_all(&dir);
    assert_eq!(back[0].targets, scenes[0].targets);
    Ok(back.len())
}

fn main() -> letr::Result<()> {
    run_example().map(|_| ())
}
