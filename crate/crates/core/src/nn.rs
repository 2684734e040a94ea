//! Fully connected layers shared by every network in the lab.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::optim::{adam_step, AdamState};
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "identity" => Activation::Identity,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            "relu" => Activation::Relu,
            _ => return None,
        })
    }

    fn apply_value(self, t: &Tensor) -> Tensor {
        match self {
            Activation::Identity => t.clone(),
            Activation::Tanh => t.map(tensor::tanh),
            Activation::Sigmoid => t.map(tensor::sigmoid),
            Activation::Relu => t.map(|x| x.max(0.0)),
        }
    }

    fn apply_var(self, v: Var<'_>) -> Var<'_> {
        match self {
            Activation::Identity => v,
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => v.sigmoid(),
            Activation::Relu => v.relu(),
        }
    }
}

/// `y = act(x · W + b)` with `W: in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect();
        Dense {
            weight: Tensor::new(vec![inputs, outputs], weights).expect("sized by construction"),
            bias: Tensor::zeros(&[outputs]),
            activation,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Dense {
            weight: Tensor::zeros(&[inputs, outputs]),
            bias: Tensor::zeros(&[outputs]),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let z = tensor::add_row_bias(&tensor::matmul(x, &self.weight)?, &self.bias)?;
        Ok(self.activation.apply_value(&z))
    }
}

/// A chain of dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Builds a chain with `widths[i] → widths[i + 1]` layers.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], activations: &[Activation], rng: &mut R) -> Self {
        assert_eq!(widths.len(), activations.len() + 1, "one activation per layer");
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| Dense::new(w[0], w[1], act, rng))
            .collect();
        Mlp { layers }
    }

    pub fn zeros(widths: &[usize], activations: &[Activation]) -> Self {
        assert_eq!(widths.len(), activations.len() + 1, "one activation per layer");
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| Dense::zeros(w[0], w[1], act))
            .collect();
        Mlp { layers }
    }

    /// Rejects chains whose consecutive widths do not line up.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Contract("network has no layers".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::dim(
                    "layer chain",
                    pair[0].weight.shape(),
                    pair[1].weight.shape(),
                ));
            }
        }
        for layer in &self.layers {
            if layer.bias.shape() != [layer.outputs()] {
                return Err(Error::dim("layer bias", layer.weight.shape(), layer.bias.shape()));
            }
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// Tape-free forward pass over a batch of rows.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    /// Records every weight and bias as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundMlp<'t> {
        self.bind_with(tape, true)
    }

    /// Records the parameters as constants: gradients flow through the
    /// network to its input but never into the weights.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> BoundMlp<'t> {
        self.bind_with(tape, false)
    }

    fn bind_with<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundMlp<'t> {
        let record = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|l| (record(&l.weight), record(&l.bias), l.activation))
                .collect(),
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn param_count(&self) -> usize {
        self.params().map(Tensor::len).sum()
    }
}

/// An [`Mlp`] whose parameters live on a tape.
pub struct BoundMlp<'t> {
    layers: Vec<(Var<'t>, Var<'t>, Activation)>,
}

impl<'t> BoundMlp<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for &(w, b, act) in &self.layers {
            h = act.apply_var(h.matmul(w)?.add_row_bias(b)?);
        }
        Ok(h)
    }

    /// Parameter gradients in the same order as [`Mlp::params`].
    pub fn grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|&(w, b, _)| [grads.get(w), grads.get(b)])
            .collect()
    }

    pub fn param_vars(&self) -> Vec<Var<'t>> {
        self.layers.iter().flat_map(|&(w, b, _)| [w, b]).collect()
    }
}

/// One [`AdamState`] per parameter tensor of an [`Mlp`].
#[derive(Clone, Debug)]
pub struct MlpAdam {
    states: Vec<AdamState>,
    pub lr: f64,
}

impl MlpAdam {
    pub fn new(mlp: &Mlp, lr: f64) -> Self {
        Self::for_params(mlp.params(), lr)
    }

    /// States for a parameter list that may span several networks.
    pub fn for_params<'a>(params: impl Iterator<Item = &'a Tensor>, lr: f64) -> Self {
        MlpAdam {
            states: params.map(|p| AdamState::new(p.shape())).collect(),
            lr,
        }
    }

    pub fn step(&mut self, mlp: &mut Mlp, grads: &[Tensor]) -> Result<()> {
        self.step_params(mlp.params_mut(), grads)
    }

    pub fn step_params<'a>(&mut self, params: impl Iterator<Item = &'a mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.states.len() {
            return Err(Error::Contract(format!(
                "expected {} gradient tensors, got {}",
                self.states.len(),
                grads.len()
            )));
        }
        let mut stepped = 0;
        for ((p, g), s) in params.zip(grads).zip(&mut self.states) {
            adam_step(p, g, s, self.lr)?;
            stepped += 1;
        }
        if stepped != self.states.len() {
            return Err(Error::Contract(format!("expected {} parameters, got {stepped}", self.states.len())));
        }
        Ok(())
    }
}
