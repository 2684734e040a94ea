//! PrototypeNet: target label → semantic representation, prototype code and
//! predicted label.

use rand::Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::data::LabelVector;
use crate::error::{Error, Result};
use crate::hashing::{binarize, BinaryCode};
use crate::nn::{Activation, BoundMlp, Mlp};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeNet {
    /// `C → hidden… → r_t`.
    pub trunk: Mlp,
    /// `r_t → K`, tanh.
    pub code_head: Mlp,
    /// `r_t → C`, sigmoid.
    pub label_head: Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeOutput {
    pub r_t: Vec<f64>,
    pub h_cont: Vec<f64>,
    pub y_hat: Vec<f64>,
}

/// Batched outputs, one row per label.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeBatch {
    pub r_t: Tensor,
    pub h_cont: Tensor,
    pub y_hat: Tensor,
}

fn trunk_shape(classes: usize, hidden: &[usize], semantic: usize) -> (Vec<usize>, Vec<Activation>) {
    let widths: Vec<usize> = std::iter::once(classes).chain(hidden.iter().copied()).chain([semantic]).collect();
    let mut acts = vec![Activation::Relu; widths.len() - 1];
    *acts.last_mut().expect("at least one layer") = Activation::Tanh;
    (widths, acts)
}

impl PrototypeNet {
    pub fn new<R: Rng + ?Sized>(classes: usize, hidden: &[usize], semantic: usize, code_length: usize, rng: &mut R) -> Self {
        let (widths, acts) = trunk_shape(classes, hidden, semantic);
        PrototypeNet {
            trunk: Mlp::new(&widths, &acts, rng),
            code_head: Mlp::new(&[semantic, code_length], &[Activation::Tanh], rng),
            label_head: Mlp::new(&[semantic, classes], &[Activation::Sigmoid], rng),
        }
    }

    pub fn zeros(classes: usize, hidden: &[usize], semantic: usize, code_length: usize) -> Self {
        let (widths, acts) = trunk_shape(classes, hidden, semantic);
        PrototypeNet {
            trunk: Mlp::zeros(&widths, &acts),
            code_head: Mlp::zeros(&[semantic, code_length], &[Activation::Tanh]),
            label_head: Mlp::zeros(&[semantic, classes], &[Activation::Sigmoid]),
        }
    }

    pub fn classes(&self) -> usize {
        self.trunk.input_width()
    }

    pub fn code_length(&self) -> usize {
        self.code_head.output_width()
    }

    pub fn semantic_dim(&self) -> usize {
        self.trunk.output_width()
    }

    pub fn validate(&self) -> Result<()> {
        for net in [&self.trunk, &self.code_head, &self.label_head] {
            net.validate()?;
        }
        let r = self.semantic_dim();
        if self.code_head.input_width() != r || self.label_head.input_width() != r {
            return Err(Error::Contract("prototype heads must consume r_t".into()));
        }
        if self.label_head.output_width() != self.classes() {
            return Err(Error::Contract("label head width must equal the class count".into()));
        }
        Ok(())
    }

    fn label_rows(&self, labels: &[LabelVector]) -> Result<Tensor> {
        let c = self.classes();
        for y in labels {
            if y.classes() != c {
                return Err(Error::dim("prototype label", &[c], &[y.classes()]));
            }
            if y.is_empty() {
                return Err(Error::Input("target label has no class".into()));
            }
        }
        let data = labels.iter().flat_map(LabelVector::to_f64).collect();
        Tensor::new(vec![labels.len(), c], data)
    }

    pub fn forward_batch(&self, labels: &[LabelVector]) -> Result<PrototypeBatch> {
        let y = self.label_rows(labels)?;
        let r_t = self.trunk.forward(&y)?;
        Ok(PrototypeBatch {
            h_cont: self.code_head.forward(&r_t)?,
            y_hat: self.label_head.forward(&r_t)?,
            r_t,
        })
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundPrototype<'t> {
        BoundPrototype {
            trunk: self.trunk.bind(tape),
            code_head: self.code_head.bind(tape),
            label_head: self.label_head.bind(tape),
        }
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.trunk
            .params_mut()
            .chain(self.code_head.params_mut())
            .chain(self.label_head.params_mut())
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.trunk.params().chain(self.code_head.params()).chain(self.label_head.params())
    }
}

pub struct BoundPrototype<'t> {
    trunk: BoundMlp<'t>,
    code_head: BoundMlp<'t>,
    label_head: BoundMlp<'t>,
}

impl<'t> BoundPrototype<'t> {
    /// `(r_t, H, Ŷ)` for label rows `y`.
    pub fn forward(&self, y: Var<'t>) -> Result<(Var<'t>, Var<'t>, Var<'t>)> {
        let r = self.trunk.forward(y)?;
        Ok((r, self.code_head.forward(r)?, self.label_head.forward(r)?))
    }

    pub fn grads(&self, grads: &Gradients) -> Vec<Tensor> {
        let mut out = self.trunk.grads(grads);
        out.extend(self.code_head.grads(grads));
        out.extend(self.label_head.grads(grads));
        out
    }
}

pub fn prototype_forward(p: &PrototypeNet, y_t: &LabelVector) -> Result<PrototypeOutput> {
    let batch = p.forward_batch(std::slice::from_ref(y_t))?;
    Ok(PrototypeOutput {
        r_t: batch.r_t.into_data(),
        h_cont: batch.h_cont.into_data(),
        y_hat: batch.y_hat.into_data(),
    })
}

pub fn prototype_code(p: &PrototypeNet, y_t: &LabelVector) -> Result<BinaryCode> {
    Ok(binarize(&prototype_forward(p, y_t)?.h_cont))
}
