// Structural AP / F-score and heatmap AP on hand-made detections, plus the
// precision-recall curve CSV.

use letr::metrics::{evaluate_predictions, structural_curve, MetricConfig};
use letr::{LineSegment, ScoredSegment};

pub fn run_example() -> letr::Result<(f64, f64)> {
    let gts = vec![
        vec![LineSegment::new(0.1, 0.1, 0.9, 0.1), LineSegment::new(0.2, 0.3, 0.2, 0.9)],
        vec![LineSegment::new(0.1, 0.9, 0.9, 0.2)],
    ];
    let preds = vec![
        vec![
            ScoredSegment::new(LineSegment::new(0.11, 0.1, 0.9, 0.11), 0.95),
            ScoredSegment::new(LineSegment::new(0.1, 0.11, 0.9, 0.1), 0.9),
            ScoredSegment::new(LineSegment::new(0.6, 0.6, 0.7, 0.7), 0.5),
        ],
        vec![ScoredSegment::new(LineSegment::new(0.9, 0.21, 0.1, 0.9), 0.8)],
    ];

    // the second hit on the same line is a false positive
    let curve = structural_curve(&preds, &gts, 10.0, 128)?;
    print!("{}", curve.to_csv());

    let cfg = MetricConfig { thresholds: vec![5.0, 10.0, 15.0], ..MetricConfig::default() };
    let report = evaluate_predictions(&preds, &gts, &cfg)?;
    for s in &report.structural {
        println!("sAP{} = {:.4}  sF{} = {:.4}", s.threshold, s.sap, s.threshold, s.sf);
    }
    println!("APH = {:.4}  FH = {:.4}", report.heatmap_ap, report.heatmap_f);
    Ok((curve.average_precision(), report.heatmap_ap))
}

fn main() -> letr::Result<()> {
    run_example().map(|_| ())
}
