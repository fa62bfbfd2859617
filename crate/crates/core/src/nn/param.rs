use rand_distr::{Distribution, Normal, Uniform};

use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Owns every learnable array of a model, in creation order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Param { name: name.into(), value });
        ParamId(self.params.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::full(shape, 1.0))
    }

    /// Glorot/Xavier uniform for a `fan_in × fan_out` weight.
    pub fn xavier(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut Rng) -> ParamId {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
        let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
        self.add(name, Tensor::new([fan_in, fan_out], data).expect("extent"))
    }

    /// He/Kaiming normal for a convolution kernel `kh×kw×cin×cout`.
    pub fn kaiming_conv(&mut self, name: impl Into<String>, shape: [usize; 4], rng: &mut Rng) -> ParamId {
        let fan_in = shape[0] * shape[1] * shape[2];
        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.add(name, Tensor::new(shape, data).expect("extent"))
    }

    /// Standard-normal entries scaled by `std`.
    pub fn normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64, rng: &mut Rng) -> ParamId {
        let dist = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.add(name, Tensor::new(shape, data).expect("extent"))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Copies values from `src` into `dst`, which must have equal shape.
    pub fn copy_value(&mut self, src: ParamId, dst: ParamId) -> Result<()> {
        let value = self.params[src.0].value.clone();
        let d = &mut self.params[dst.0];
        if d.value.shape() != value.shape() {
            return Err(Error::dim("copy_value", format!("{} {:?} <- {:?}", d.name, d.value.shape(), value.shape())));
        }
        d.value = value.with_requires_grad(false);
        Ok(())
    }

    /// Records every parameter on `tape`. Those for which `trainable`
    /// returns true become gradient leaves; the rest are constants.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(ParamId) -> bool) -> Bound {
        let vars = self
            .iter()
            .map(|(id, p)| {
                let t = p.value.clone();
                if trainable(id) {
                    tape.leaf(t.with_requires_grad(true))
                } else {
                    tape.constant(t)
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Per-forward mapping from [`ParamId`] to tape handle.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Binding over handles already on a tape, one per parameter in store
    /// order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients of all parameters after a backward sweep; `None` where the
    /// parameter was frozen or unreachable from the loss.
    pub fn grads(&self, tape: &Tape) -> Vec<Option<Vec<f64>>> {
        self.vars.iter().map(|&v| tape.grad(v).map(<[f64]>::to_vec)).collect()
    }
}
