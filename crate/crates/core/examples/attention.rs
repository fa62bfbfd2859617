// Multi-head attention and a post-norm encoder layer over a tiny feature map
// with 2-D sinusoidal positions.

use letr::nn::{positional_encoding, Ctx, EncoderLayer, MultiHeadAttention, ParamStore};
use letr::rng::seeded;
use letr::Tape;

pub fn run_example() -> letr::Result<Vec<usize>> {
    let (h, w, d) = (4, 4, 16);
    let mut rng = seeded(7);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "mha", d, 4, &mut rng)?;
    let enc = EncoderLayer::new(&mut store, "enc", d, 4, 32, 0.0, &mut rng)?;

    let pos = positional_encoding(h, w, d)?;
    println!("positional encoding {:?}, first row {:?}", pos.shape(), &pos.row(0)[..4]);

    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, |_| false);
    let mut ctx = Ctx::new(&mut tape, &bound, &mut rng, false);
    let p = ctx.tape.constant(pos.clone());
    let x = ctx.tape.scale(p, 0.5);

    let (_, weights) = mha.forward_with_weights(&mut ctx, x, x, x)?;
    let rows = ctx.tape.value(weights[0]).row(0).iter().sum::<f64>();
    println!("head 0 attention weights {:?}, row sum {rows:.6}", ctx.tape.value(weights[0]).shape());

    let y = enc.forward(&mut ctx, x, p)?;
    let shape = ctx.tape.value(y).shape().to_vec();
    println!("encoder output {shape:?}");
    Ok(shape)
}

fn main() -> letr::Result<()> {
    run_example().map(|_| ())
}
