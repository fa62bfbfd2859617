// The desk-scale benchmark end to end: 200 synthetic training scenes, the
// desk model, coarse then fine training, sAP on 50 held-out scenes.
//
//     cargo run --release --example desk_benchmark            # full budget
//     cargo run --release --example desk_benchmark -- 0.05    # 5% of the epochs

use letr::train::bench::Benchmark;

fn main() -> letr::Result<()> {
    let fraction: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1.0);
    let mut bench = Benchmark::desk();
    let c = &mut bench.config;
    let scale = |n: usize| ((n as f64 * fraction).round() as usize).max(1);
    c.coarse_epochs = scale(c.coarse_epochs);
    c.fine_epochs = scale(c.fine_epochs);
    c.focal_epochs = scale(c.focal_epochs).min(c.fine_epochs);
    println!("coarse {} epochs, fine {} epochs ({} focal)", c.coarse_epochs, c.fine_epochs, c.focal_epochs);

    let run = bench.run(|r| {
        if r.epoch % 25 == 0 {
            println!("{:?} epoch {:>4}  loss {:.4}", r.phase, r.epoch, r.loss);
        }
    })?;
    for (name, report) in [("coarse-only", &run.coarse_report), ("coarse+fine", &run.fine_report)] {
        let cells: Vec<String> = report.structural.iter().map(|s| format!("sAP{} {:.3}", s.threshold, s.sap)).collect();
        println!("{name:<12} {}  APH {:.3}", cells.join("  "), report.heatmap_ap);
    }
    let layers: Vec<String> = run.fine_report.per_layer_sap.iter().map(|v| format!("{v:.3}")).collect();
    println!("per-layer sAP5 [{}]", layers.join(", "));
    println!("training took {:.0} s", run.training_seconds());
    Ok(())
}
