//! Named parameters and the small layer vocabulary shared by every model.

use rand::Rng as _;

use crate::rng::Rng;
use crate::tensor::{Gradients, Result, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Frozen entries (e.g. normalization statistics) ride along in
    /// checkpoints but are never touched by an optimizer.
    pub trainable: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        self.params.push(Param {
            name,
            value,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn trainable_scalars(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }
}

/// A tape plus the lazily bound parameters of one store.
pub struct Graph<'p> {
    pub tape: Tape,
    store: &'p ParamStore,
    bound: Vec<Option<Var>>,
    track_grads: bool,
}

impl<'p> Graph<'p> {
    /// `track_grads = false` records values only (evaluation).
    pub fn new(store: &'p ParamStore, track_grads: bool) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            track_grads,
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let p = self.store.param(id);
        let v = self
            .tape
            .leaf(p.value.clone(), self.track_grads && p.trainable);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    /// One gradient per store entry, zero for entries the loss never reached.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.store
            .ids()
            .map(|id| match self.bound[id.0] {
                Some(v) => grads.wrt(v),
                None => Tensor::zeros(self.store.get(id).shape().to_vec())
                    .expect("stored shapes are valid"),
            })
            .collect()
    }
}

/// `y = x·W + b` with `W` stored as `[in × out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let b = (0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::new(vec![fan_in, fan_out], w).expect("positive extents"),
            true,
        );
        let bias = store.add(
            format!("{name}.bias"),
            Tensor::new(vec![fan_out], b).expect("positive extents"),
            true,
        );
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.tape.matmul(x, w)?;
        g.tape.add_row_bias(y, b)
    }

    pub fn num_params(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

/// Linear layers with GELU between them (and optionally after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activate_output: bool,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        activate_output: bool,
        rng: &mut Rng,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self {
            layers,
            activate_output,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i < last || self.activate_output {
                h = g.tape.gelu(h);
            }
        }
        Ok(h)
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Linear::num_params).sum()
    }
}

/// LayerNorm gain/bias pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, eps: f64) -> Self {
        let gain = store.add(
            format!("{name}.gain"),
            Tensor::filled(vec![width], 1.0).expect("positive width"),
            true,
        );
        let bias = store.add(
            format!("{name}.bias"),
            Tensor::zeros(vec![width]).expect("positive width"),
            true,
        );
        Self { gain, bias, eps }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.tape.layer_norm(x, gain, bias, self.eps)
    }

    pub fn num_params(&self, width: usize) -> usize {
        2 * width
    }
}
