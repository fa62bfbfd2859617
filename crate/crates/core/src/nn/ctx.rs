use super::param::{Bound, ParamId};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

/// Everything a forward pass threads through the layers.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub params: &'a Bound,
    pub rng: &'a mut Rng,
    pub training: bool,
    /// When set, decoder cross-attention maps (averaged over heads) are
    /// appended here, one `entities × positions` tensor per layer.
    pub attention_maps: Option<Vec<Tensor>>,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a mut Tape, params: &'a Bound, rng: &'a mut Rng, training: bool) -> Self {
        Ctx { tape, params, rng, training, attention_maps: None }
    }

    pub fn p(&self, id: ParamId) -> Var {
        self.params.var(id)
    }
}
