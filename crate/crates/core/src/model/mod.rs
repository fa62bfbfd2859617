//! The line-entity transformer: a strided convolutional backbone with taps
//! at strides 16 and 32, a coarse encoder/decoder over the stride-32 map, a
//! fine encoder/decoder over the stride-16 map that continues from the coarse
//! entities, and prediction heads shared by every decoder layer.

mod checkpoint;
mod config;

pub use checkpoint::{Checkpoint, CheckpointHeader, TensorEntry};
pub use config::ModelConfig;

use serde::{Deserialize, Serialize};

use crate::data::resize_image;
use crate::geometry::ScoredSegment;
use crate::loss::{read_predictions, LayerOutput};
use crate::nn::{positional_encoding, Ctx, DecoderLayer, EncoderLayer, Linear, ParamId, ParamStore};
use crate::rng::{seeded, Rng};
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Training stage a model (or checkpoint) belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Coarse,
    Fine,
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse" => Ok(Stage::Coarse),
            "fine" => Ok(Stage::Fine),
            _ => Err(Error::Config(format!("unknown stage {s:?}; expected coarse or fine"))),
        }
    }
}

/// Which part of the network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    CoarseProjection,
    CoarseEncoder,
    CoarseDecoder,
    Entities,
    FineProjection,
    FineEncoder,
    FineDecoder,
    Heads,
}

impl ParamGroup {
    pub fn of(name: &str) -> ParamGroup {
        let groups = [
            ("backbone.", ParamGroup::Backbone),
            ("coarse.proj.", ParamGroup::CoarseProjection),
            ("coarse.enc", ParamGroup::CoarseEncoder),
            ("coarse.dec", ParamGroup::CoarseDecoder),
            ("entities", ParamGroup::Entities),
            ("fine.proj.", ParamGroup::FineProjection),
            ("fine.enc", ParamGroup::FineEncoder),
            ("fine.dec", ParamGroup::FineDecoder),
        ];
        groups.iter().find(|(p, _)| name.starts_with(p)).map_or(ParamGroup::Heads, |g| g.1)
    }

    /// Everything the coarse stage owns; frozen during fine training.
    pub fn is_coarse(self) -> bool {
        matches!(
            self,
            ParamGroup::Backbone | ParamGroup::CoarseProjection | ParamGroup::CoarseEncoder | ParamGroup::CoarseDecoder | ParamGroup::Entities
        )
    }

    pub fn is_fine(self) -> bool {
        matches!(self, ParamGroup::FineProjection | ParamGroup::FineEncoder | ParamGroup::FineDecoder)
    }

    /// Whether the group is optimized in `stage`. Heads are shared by all
    /// layers and train in both stages.
    pub fn trains_in(self, stage: Stage) -> bool {
        match stage {
            Stage::Coarse => !self.is_fine(),
            Stage::Fine => !self.is_coarse(),
        }
    }
}

#[derive(Debug, Clone)]
struct Conv {
    kernel: ParamId,
    bias: ParamId,
}

/// Feature maps flattened row-major to `[h·w, d_model]`.
#[derive(Debug, Clone, Copy)]
pub struct BackboneOutput {
    pub coarse: Var,
    pub fine: Var,
    pub coarse_hw: (usize, usize),
    pub fine_hw: (usize, usize),
}

#[derive(Debug, Clone)]
struct TransformerStage {
    proj: Linear,
    encoders: Vec<EncoderLayer>,
    decoders: Vec<DecoderLayer>,
}

#[derive(Debug, Clone)]
struct Heads {
    class: Linear,
    mlp: [Linear; 3],
}

/// How far a forward pass runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    CoarseOnly,
    Full,
}

/// Head outputs of every decoder layer that ran, coarse layers first.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub layers: Vec<LayerOutput>,
    pub num_coarse: usize,
    pub backbone: BackboneOutput,
}

impl ForwardOutput {
    pub fn coarse_layers(&self) -> &[LayerOutput] {
        &self.layers[..self.num_coarse]
    }

    pub fn fine_layers(&self) -> &[LayerOutput] {
        &self.layers[self.num_coarse..]
    }

    pub fn last(&self) -> LayerOutput {
        *self.layers.last().expect("at least one decoder layer")
    }
}

#[derive(Debug, Clone)]
pub struct Letr {
    pub config: ModelConfig,
    pub store: ParamStore,
    convs: Vec<Conv>,
    coarse: TransformerStage,
    fine: TransformerStage,
    entities: ParamId,
    heads: Heads,
}

impl Letr {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let rng = &mut rng;
        let mut store = ParamStore::new();
        let c = &config;

        let mut convs = Vec::new();
        let mut cin = c.input_channels;
        for (i, &cout) in c.backbone_channels.iter().enumerate() {
            let cin_total = cin + if c.coord_channels { 2 } else { 0 };
            convs.push(Conv {
                kernel: store.kaiming_conv(format!("backbone.conv{i}.kernel"), [3, 3, cin_total, cout], rng),
                bias: store.zeros(format!("backbone.conv{i}.bias"), &[cout]),
            });
            cin = cout;
        }
        let stage = |store: &mut ParamStore, name: &str, tap: usize, enc: usize, dec: usize, rng: &mut Rng| -> Result<TransformerStage> {
            Ok(TransformerStage {
                proj: Linear::new(store, &format!("{name}.proj"), tap, c.d_model, rng),
                encoders: (0..enc)
                    .map(|i| EncoderLayer::new(store, &format!("{name}.enc{i}"), c.d_model, c.num_heads, c.ffn_dim, c.dropout, rng))
                    .collect::<Result<_>>()?,
                decoders: (0..dec)
                    .map(|i| DecoderLayer::new(store, &format!("{name}.dec{i}"), c.d_model, c.num_heads, c.ffn_dim, c.dropout, rng))
                    .collect::<Result<_>>()?,
            })
        };
        let [.., fine_tap, coarse_tap] = c.backbone_channels;
        let coarse = stage(&mut store, "coarse", coarse_tap, c.coarse_encoder_layers, c.coarse_decoder_layers, rng)?;
        let fine = stage(&mut store, "fine", fine_tap, c.fine_encoder_layers, c.fine_decoder_layers, rng)?;
        let entities = store.normal("entities", &[c.num_entities, c.d_model], 1.0, rng);
        let heads = Heads {
            class: Linear::new(&mut store, "head.class", c.d_model, 1, rng),
            mlp: [
                Linear::new(&mut store, "head.mlp0", c.d_model, c.d_model, rng),
                Linear::new(&mut store, "head.mlp1", c.d_model, c.d_model, rng),
                Linear::new(&mut store, "head.mlp2", c.d_model, 4, rng),
            ],
        };
        Ok(Letr { config, store, convs, coarse, fine, entities, heads })
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        ParamGroup::of(&self.store.get(id).name)
    }

    pub fn entity_param(&self) -> ParamId {
        self.entities
    }

    /// Five stride-2 3×3 convolutions with ReLU; the last two outputs are
    /// projected (1×1) to `d_model`.
    pub fn backbone_forward(&self, ctx: &mut Ctx<'_>, image: Var) -> Result<BackboneOutput> {
        let (mut h, mut w) = match *ctx.tape.shape(image) {
            [h, w, c] if c == self.config.input_channels => (h, w),
            ref s => return Err(Error::Input(format!("image must be H×W×{}, got {s:?}", self.config.input_channels))),
        };
        let mut image = image;
        if let Some(e) = self.config.input_extent {
            if (h, w) != (e, e) {
                if h == 0 || w == 0 {
                    return Err(Error::Input("image is empty".into()));
                }
                // The resize is not recorded on the tape; images are inputs, not parameters.
                image = ctx.tape.constant(resize_image(ctx.tape.value(image), e, e)?);
                (h, w) = (e, e);
            }
        }
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Input(format!("image extents {h}×{w} must be positive multiples of 32")));
        }
        let mut x = image;
        let mut taps = Vec::new();
        for conv in &self.convs {
            if self.config.coord_channels {
                let s = ctx.tape.shape(x).to_vec();
                let flat = ctx.tape.reshape(x, [s[0] * s[1], s[2]])?;
                let grid = ctx.tape.constant(coord_grid(s[0], s[1]));
                let with = ctx.tape.concat_cols(&[flat, grid])?;
                x = ctx.tape.reshape(with, [s[0], s[1], s[2] + 2])?;
            }
            let y = ctx.tape.conv2d(x, ctx.p(conv.kernel), 2, 1)?;
            let s = ctx.tape.shape(y).to_vec();
            let flat = ctx.tape.reshape(y, [s[0] * s[1], s[2]])?;
            let flat = ctx.tape.add_row(flat, ctx.p(conv.bias))?;
            let flat = ctx.tape.relu(flat);
            taps.push((flat, (s[0], s[1])));
            x = ctx.tape.reshape(flat, s)?;
        }
        let (fine, fine_hw) = taps[3];
        let (coarse, coarse_hw) = taps[4];
        Ok(BackboneOutput {
            coarse: self.coarse.proj.forward(ctx, coarse)?,
            fine: self.fine.proj.forward(ctx, fine)?,
            coarse_hw,
            fine_hw,
        })
    }

    fn run_stage(&self, ctx: &mut Ctx<'_>, stage: &TransformerStage, feats: Var, hw: (usize, usize), entities: Var) -> Result<Vec<Var>> {
        let pos = ctx.tape.constant(positional_encoding(hw.0, hw.1, self.config.d_model)?);
        let mut x = feats;
        for enc in &stage.encoders {
            x = enc.forward(ctx, x, pos)?;
        }
        let entity_pos = ctx.p(self.entities);
        let mut tgt = entities;
        let mut states = Vec::with_capacity(stage.decoders.len());
        for dec in &stage.decoders {
            tgt = dec.forward(ctx, tgt, x, entity_pos, pos)?;
            states.push(tgt);
        }
        Ok(states)
    }

    /// Coarse encoder over the stride-32 features, then the coarse decoder
    /// starting from zero entity states. Returns each decoder layer's states.
    pub fn coarse_stage(&self, ctx: &mut Ctx<'_>, bb: &BackboneOutput) -> Result<Vec<Var>> {
        let zeros = ctx.tape.constant(Tensor::zeros([self.config.num_entities, self.config.d_model]));
        self.run_stage(ctx, &self.coarse, bb.coarse, bb.coarse_hw, zeros)
    }

    /// Fine encoder over the stride-16 features, then the fine decoder
    /// continuing from the last coarse entity states.
    pub fn fine_stage(&self, ctx: &mut Ctx<'_>, bb: &BackboneOutput, coarse_entities: Var) -> Result<Vec<Var>> {
        self.run_stage(ctx, &self.fine, bb.fine, bb.fine_hw, coarse_entities)
    }

    /// Confidence (linear + sigmoid) and endpoints (3-layer MLP + sigmoid).
    pub fn predict_heads(&self, ctx: &mut Ctx<'_>, state: Var) -> Result<LayerOutput> {
        let logit = self.heads.class.forward(ctx, state)?;
        let probs = ctx.tape.sigmoid(logit);
        let mut h = state;
        for (i, l) in self.heads.mlp.iter().enumerate() {
            h = l.forward(ctx, h)?;
            if i < 2 {
                h = ctx.tape.relu(h);
            }
        }
        let coords = ctx.tape.sigmoid(h);
        Ok(LayerOutput { probs, coords })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, image: Var, depth: Depth) -> Result<ForwardOutput> {
        let bb = self.backbone_forward(ctx, image)?;
        let mut states = self.coarse_stage(ctx, &bb)?;
        let num_coarse = states.len();
        if depth == Depth::Full {
            let last = *states.last().expect("validated: coarse decoder is non-empty");
            states.extend(self.fine_stage(ctx, &bb, last)?);
        }
        let layers = states.into_iter().map(|s| self.predict_heads(ctx, s)).collect::<Result<_>>()?;
        Ok(ForwardOutput { layers, num_coarse, backbone: bb })
    }

    /// Inference over one image: every decoder layer's predictions, coarse
    /// layers first.
    pub fn predict_all(&self, image: &Tensor, depth: Depth) -> Result<Vec<Vec<ScoredSegment>>> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, |_| false);
        let mut rng = seeded(0);
        let mut ctx = Ctx::new(&mut tape, &bound, &mut rng, false);
        let x = ctx.tape.constant(image.clone());
        let out = self.forward(&mut ctx, x, depth)?;
        Ok(out.layers.iter().map(|l| read_predictions(&tape, l)).collect())
    }

    /// Final-layer predictions for one image.
    pub fn predict(&self, image: &Tensor, depth: Depth) -> Result<Vec<ScoredSegment>> {
        Ok(self.predict_all(image, depth)?.pop().expect("at least one layer"))
    }

    /// Copies coarse decoder weights into the fine decoder, layer by layer;
    /// extra fine layers repeat the last coarse layer.
    pub fn init_fine_from_coarse(&mut self) -> Result<()> {
        let nc = self.config.coarse_decoder_layers;
        let names: Vec<(String, String)> = self
            .store
            .iter()
            .filter_map(|(_, p)| {
                let rest = p.name.strip_prefix("fine.dec")?;
                let (idx, tail) = rest.split_once('.')?;
                let i: usize = idx.parse().ok()?;
                Some((format!("coarse.dec{}.{tail}", i.min(nc - 1)), p.name.clone()))
            })
            .collect();
        for (src, dst) in names {
            let s = self.store.find(&src).ok_or_else(|| Error::Parameter(format!("missing {src}")))?;
            let d = self.store.find(&dst).expect("listed from the store");
            self.store.copy_value(s, d)?;
        }
        Ok(())
    }
}

/// `[h·w, 2]` pixel-centre coordinates scaled to [-1, 1], x first.
fn coord_grid(h: usize, w: usize) -> Tensor {
    let mut data = Vec::with_capacity(h * w * 2);
    for y in 0..h {
        for x in 0..w {
            data.push((2 * x + 1) as f64 / w as f64 - 1.0);
            data.push((2 * y + 1) as f64 / h as f64 - 1.0);
        }
    }
    Tensor::new([h * w, 2], data).expect("shape matches data")
}

/// Keeps predictions with confidence at least `threshold`; no suppression.
pub fn inference_filter(predictions: &[ScoredSegment], threshold: f64) -> Result<Vec<ScoredSegment>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Parameter(format!("threshold {threshold} outside [0, 1]")));
    }
    Ok(predictions.iter().filter(|p| p.score >= threshold).copied().collect())
}

#[cfg(test)]
mod tests;
