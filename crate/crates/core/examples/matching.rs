// Bipartite matching of predicted segments to ground truth.
//
// Cost mixes the orientation-free endpoint distance with the negative
// confidence; the Hungarian solver then picks the cheapest assignment.

use letr::matching::{endpoint_distance, hungarian, match_cost, MatchCostWeights};
use letr::{LineSegment, ScoredSegment};

pub fn run_example() -> letr::Result<Vec<Option<usize>>> {
    let targets = [LineSegment::new(0.1, 0.1, 0.9, 0.1), LineSegment::new(0.5, 0.2, 0.5, 0.8)];
    let predictions = [
        ScoredSegment::new(LineSegment::new(0.52, 0.79, 0.49, 0.21), 0.7),
        ScoredSegment::new(LineSegment::new(0.3, 0.3, 0.4, 0.4), 0.9),
        ScoredSegment::new(LineSegment::new(0.88, 0.12, 0.11, 0.09), 0.6),
    ];

    // endpoint order does not matter
    let d = endpoint_distance(&predictions[0].segment, &targets[1]);
    println!("distance of reversed prediction 0 to target 1: {d:.4}");

    let cost = match_cost(&predictions, &targets, MatchCostWeights::default())?;
    let m = hungarian(&cost)?;
    for (p, t) in m.pairs() {
        println!("prediction {p} -> target {t}  (cost {:.4})", cost.get(p, t));
    }
    println!("unmatched: {:?}, total cost {:.4}", m.unmatched().collect::<Vec<_>>(), m.total_cost(&cost));
    Ok(m.assignment().to_vec())
}

fn main() -> letr::Result<()> {
    let a = run_example()?;
    assert_eq!(a, vec![Some(1), None, Some(0)]);
    Ok(())
}
