use super::attention::MultiHeadAttention;
use super::ctx::Ctx;
use super::param::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Tensor, Var};
use crate::Result;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: store.xavier(format!("{name}.weight"), fan_in, fan_out, rng),
            bias: store.zeros(format!("{name}.bias"), &[fan_out]),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        ctx.tape.linear(x, ctx.p(self.weight), ctx.p(self.bias))
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm { gain: store.ones(format!("{name}.gain"), &[dim]), bias: store.zeros(format!("{name}.bias"), &[dim]) }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        ctx.tape.layer_norm(x, ctx.p(self.gain), ctx.p(self.bias), LAYER_NORM_EPS)
    }
}

/// Point-wise FC → ReLU → dropout → FC.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, hidden: usize, rng: &mut Rng) -> Self {
        FeedForward {
            fc1: Linear::new(store, &format!("{name}.fc1"), d_model, hidden, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, d_model, rng),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var, dropout: f64) -> Result<Var> {
        let h = self.fc1.forward(ctx, x)?;
        let h = ctx.tape.relu(h);
        let h = ctx.tape.dropout(h, dropout, ctx.training, ctx.rng)?;
        self.fc2.forward(ctx, h)
    }
}

/// `norm(x + dropout(update))`.
fn residual_norm(ctx: &mut Ctx<'_>, norm: &LayerNorm, x: Var, update: Var, dropout: f64) -> Result<Var> {
    let update = ctx.tape.dropout(update, dropout, ctx.training, ctx.rng)?;
    let sum = ctx.tape.add(x, update)?;
    norm.forward(ctx, sum)
}

/// Post-norm encoder layer: SA → add & norm → FC block → add & norm.
///
/// The positional encoding is added to the self-attention queries and keys
/// only; values carry the bare features.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub self_attn: MultiHeadAttention,
    pub ffn: FeedForward,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub dropout: f64,
}

impl EncoderLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        num_heads: usize,
        ffn_dim: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(EncoderLayer {
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d_model, num_heads, rng)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d_model, ffn_dim, rng),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d_model),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d_model),
            dropout,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var, pos: Var) -> Result<Var> {
        let qk = ctx.tape.add(x, pos)?;
        let sa = self.self_attn.forward(ctx, qk, qk, x)?;
        let x = residual_norm(ctx, &self.norm1, x, sa, self.dropout)?;
        let ff = self.ffn.forward(ctx, x, self.dropout)?;
        residual_norm(ctx, &self.norm2, x, ff, self.dropout)
    }
}

/// Post-norm decoder layer: SA over line entities → add & norm → CA from
/// entities to encoded image features → add & norm → FC block → add & norm.
///
/// `entity_pos` (the learnable entity embedding) is added to the entity side
/// of SA queries/keys and CA queries; `feature_pos` to the CA keys.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub cross_attn: MultiHeadAttention,
    pub ffn: FeedForward,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub norm3: LayerNorm,
    pub dropout: f64,
}

impl DecoderLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        num_heads: usize,
        ffn_dim: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(DecoderLayer {
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d_model, num_heads, rng)?,
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), d_model, num_heads, rng)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d_model, ffn_dim, rng),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d_model),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d_model),
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), d_model),
            dropout,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, entities: Var, encoded: Var, entity_pos: Var, feature_pos: Var) -> Result<Var> {
        let qk = ctx.tape.add(entities, entity_pos)?;
        let sa = self.self_attn.forward(ctx, qk, qk, entities)?;
        let x = residual_norm(ctx, &self.norm1, entities, sa, self.dropout)?;

        let q = ctx.tape.add(x, entity_pos)?;
        let k = ctx.tape.add(encoded, feature_pos)?;
        let (ca, weights) = self.cross_attn.forward_with_weights(ctx, q, k, encoded)?;
        if ctx.attention_maps.is_some() {
            let map = mean_of(ctx, &weights);
            ctx.attention_maps.as_mut().expect("checked").push(map);
        }
        let x = residual_norm(ctx, &self.norm2, x, ca, self.dropout)?;

        let ff = self.ffn.forward(ctx, x, self.dropout)?;
        residual_norm(ctx, &self.norm3, x, ff, self.dropout)
    }
}

fn mean_of(ctx: &Ctx<'_>, maps: &[Var]) -> Tensor {
    let first = ctx.tape.value(maps[0]);
    let mut acc = vec![0.0; first.len()];
    for &m in maps {
        acc.iter_mut().zip(ctx.tape.value(m).data()).for_each(|(a, b)| *a += b);
    }
    let k = maps.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Tensor::new(first.shape(), acc).expect("same extent")
}
