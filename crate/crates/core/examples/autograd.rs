// Reverse-mode autodiff on a small expression, checked against central
// differences.

use letr::rng::seeded;
use letr::tensor::gradcheck;
use letr::{Tape, Tensor};

pub fn run_example() -> letr::Result<f64> {
    let x = Tensor::from_rows(&[vec![0.3, -1.2, 0.8], vec![1.1, 0.4, -0.5]])?;
    let w = Tensor::from_rows(&[vec![0.2, -0.7], vec![0.9, 0.1], vec![-0.4, 0.6]])?;

    // loss = mean(sigmoid(x w))
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone().with_requires_grad(true));
    let wv = tape.leaf(w.clone().with_requires_grad(true));
    let h = tape.matmul(xv, wv)?;
    let s = tape.sigmoid(h);
    let loss = tape.mean(s);
    tape.backward(loss)?;
    println!("loss = {:.6}", tape.value(loss).item());
    println!("dL/dw = {:?}", tape.grad(wv).unwrap_or(&[]));

    let report = gradcheck::check(
        |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let s = t.sigmoid(h);
            Ok(t.mean(s))
        },
        &[x, w],
        1e-6,
        Some((4, &mut seeded(0))),
    )?;
    println!("gradcheck: {} coordinates, max relative error {:.2e}", report.checked, report.max_rel_error);
    Ok(report.max_rel_error)
}

fn main() -> letr::Result<()> {
    let err = run_example()?;
    assert!(err < 1e-6);
    Ok(())
}
