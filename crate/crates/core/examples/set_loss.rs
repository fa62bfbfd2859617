// The set loss on one decoder layer: focal classification on the matched /
// unmatched split plus endpoint distance on matched pairs.

use letr::loss::{classification_term, layer_loss, total_loss, FocalParams, LossConfig};
use letr::{LineSegment, ScoredSegment};

pub fn run_example() -> letr::Result<f64> {
    let targets = vec![LineSegment::new(0.1, 0.1, 0.9, 0.1)];
    let good = vec![
        ScoredSegment::new(LineSegment::new(0.12, 0.1, 0.88, 0.11), 0.9),
        ScoredSegment::new(LineSegment::new(0.4, 0.5, 0.6, 0.7), 0.05),
    ];
    let bad = vec![
        ScoredSegment::new(LineSegment::new(0.5, 0.2, 0.5, 0.9), 0.4),
        ScoredSegment::new(LineSegment::new(0.4, 0.5, 0.6, 0.7), 0.6),
    ];

    for gamma in [0.0, 2.0] {
        let fp = FocalParams::default().with_gamma(gamma);
        println!(
            "gamma {gamma}: positive p=0.9 -> {:.4}, negative p=0.9 -> {:.4}",
            classification_term(0.9, true, fp),
            classification_term(0.9, false, fp)
        );
    }

    let cfg = LossConfig::default();
    let t = layer_loss(&good, &targets, &cfg)?;
    println!("good layer: classification {:.4} distance {:.4}", t.classification, t.distance);
    let t = layer_loss(&bad, &targets, &cfg)?;
    println!("bad layer:  classification {:.4} distance {:.4}", t.classification, t.distance);

    // deep supervision sums over layers
    let total = total_loss(&[bad, good], &targets, &cfg)?;
    println!("two-layer total {total:.4}");
    Ok(total)
}

fn main() -> letr::Result<()> {
    run_example().map(|_| ())
}
