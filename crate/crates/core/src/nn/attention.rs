use super::ctx::Ctx;
use super::param::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Tape, Var};
use crate::{Error, Result};

/// Scaled dot-product attention `softmax(Q Kᵀ / √d) V`.
///
/// Returns the output and the row-stochastic `m×n` weight matrix.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let (m, d) = tape.value(q).dims2()?;
    let (n, dk) = tape.value(k).dims2()?;
    let (nv, _) = tape.value(v).dims2()?;
    if d != dk || n != nv {
        return Err(Error::dim("attention", format!("Q [{m}, {d}], K [{n}, {dk}], V [{nv}, _]")));
    }
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let weights = tape.softmax(scores, 1)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

/// Multi-head attention: per-head projections of queries, keys and values,
/// [`attention`] per head, heads concatenated and projected back.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub num_heads: usize,
    pub d_model: usize,
    pub w_q: ParamId,
    pub b_q: ParamId,
    pub w_k: ParamId,
    pub b_k: ParamId,
    pub w_v: ParamId,
    pub b_v: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, prefix: &str, d_model: usize, num_heads: usize, rng: &mut Rng) -> Result<Self> {
        if num_heads == 0 || !d_model.is_multiple_of(num_heads) {
            return Err(Error::Parameter(format!("d_model {d_model} not divisible by {num_heads} heads")));
        }
        let mut proj = |s: &str| {
            let w = store.xavier(format!("{prefix}.w_{s}"), d_model, d_model, rng);
            let b = store.zeros(format!("{prefix}.b_{s}"), &[d_model]);
            (w, b)
        };
        let (w_q, b_q) = proj("q");
        let (w_k, b_k) = proj("k");
        let (w_v, b_v) = proj("v");
        let (w_o, b_o) = proj("o");
        Ok(MultiHeadAttention { num_heads, d_model, w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    /// Attends from `query` rows to `key`/`value` rows. Returns the output
    /// and one weight matrix per head.
    pub fn forward_with_weights(&self, ctx: &mut Ctx<'_>, query: Var, key: Var, value: Var) -> Result<(Var, Vec<Var>)> {
        let q = ctx.tape.linear(query, ctx.p(self.w_q), ctx.p(self.b_q))?;
        let k = ctx.tape.linear(key, ctx.p(self.w_k), ctx.p(self.b_k))?;
        let v = ctx.tape.linear(value, ctx.p(self.w_v), ctx.p(self.b_v))?;
        let dh = self.head_dim();
        let mut heads = Vec::with_capacity(self.num_heads);
        let mut weights = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let qh = ctx.tape.slice_cols(q, h * dh, dh)?;
            let kh = ctx.tape.slice_cols(k, h * dh, dh)?;
            let vh = ctx.tape.slice_cols(v, h * dh, dh)?;
            let (o, w) = attention(ctx.tape, qh, kh, vh)?;
            heads.push(o);
            weights.push(w);
        }
        let cat = if heads.len() == 1 { heads[0] } else { ctx.tape.concat_cols(&heads)? };
        let out = ctx.tape.linear(cat, ctx.p(self.w_o), ctx.p(self.b_o))?;
        Ok((out, weights))
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, query: Var, key: Var, value: Var) -> Result<Var> {
        Ok(self.forward_with_weights(ctx, query, key, value)?.0)
    }

    /// Self-attention with `Q = K = V = x`.
    pub fn self_attend(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        self.forward(ctx, x, x, x)
    }

    /// Cross-attention with queries from `z`, keys and values from `x`.
    pub fn cross_attend(&self, ctx: &mut Ctx<'_>, z: Var, x: Var) -> Result<Var> {
        self.forward(ctx, z, x, x)
    }
}
