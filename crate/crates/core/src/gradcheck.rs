//! Central finite-difference checks for every tape operation and loss.
//!
//! A case is a scalar function of a few tensor inputs. [`check_case`] draws
//! random inputs, differentiates once on the tape, and compares every
//! component against `(f(x + h) − f(x − h)) / 2h`.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::data::rng_stream;
use crate::error::Result;
use crate::gan::{loss_generator, GeneratorWeights};
use crate::losses::{self, PrototypeWeights};
use crate::tensor::Tensor;

/// Step of the central difference.
pub const STEP: f64 = 1e-6;

/// Denominator floor for the relative error, so components whose gradient is
/// essentially zero are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

type Objective = Box<dyn for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>> + Send + Sync>;

pub struct GradCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub f: Objective,
}

fn case(name: &'static str, shapes: &[&[usize]], f: impl for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>> + Send + Sync + 'static) -> GradCase {
    GradCase {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        f: Box::new(f),
    }
}

/// Scalar readout that weights every output element differently, so a
/// transposed or permuted gradient cannot pass.
fn readout<'t>(v: Var<'t>) -> Result<Var<'t>> {
    let shape = v.shape();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| 0.3 + 0.17 * i as f64).collect())?;
    Ok(v.mul(v.tape().constant(w))?.sum())
}

fn fixed(shape: &[usize], f: impl Fn(usize) -> f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(f).collect()).expect("sized by construction")
}

fn binary(shape: &[usize], seed: usize) -> Tensor {
    fixed(shape, |i| (i * 7 + seed).is_multiple_of(3) as u8 as f64)
}

fn signs(shape: &[usize], seed: usize) -> Tensor {
    fixed(shape, |i| if (i * 5 + seed).is_multiple_of(3) { -1.0 } else { 1.0 })
}

/// Every operation and loss, each on small fixed shapes.
pub fn cases() -> Vec<GradCase> {
    vec![
        case("matmul", &[&[2, 3], &[3, 4]], |v| readout(v[0].matmul(v[1])?)),
        case("add", &[&[2, 3], &[2, 3]], |v| readout(v[0].add(v[1])?)),
        case("sub", &[&[2, 3], &[2, 3]], |v| readout(v[0].sub(v[1])?)),
        case("mul", &[&[2, 3], &[2, 3]], |v| readout(v[0].mul(v[1])?)),
        case("scale", &[&[3, 2]], |v| readout(v[0].scale(-1.7))),
        case("offset", &[&[3, 2]], |v| readout(v[0].offset(0.4))),
        case("add_row_bias", &[&[3, 4], &[4]], |v| readout(v[0].add_row_bias(v[1])?)),
        case("tanh", &[&[2, 3]], |v| readout(v[0].tanh())),
        case("sigmoid", &[&[2, 3]], |v| readout(v[0].sigmoid())),
        case("relu", &[&[2, 3]], |v| readout(v[0].relu())),
        case("softplus", &[&[2, 3]], |v| readout(v[0].softplus())),
        case("transpose", &[&[2, 3]], |v| readout(v[0].transpose()?)),
        case("concat_rows", &[&[2, 3], &[1, 3]], |v| readout(v[0].concat(v[1], 0)?)),
        case("concat_cols", &[&[2, 3], &[2, 2]], |v| readout(v[0].concat(v[1], 1)?)),
        case("sum", &[&[2, 3]], |v| Ok(v[0].sum())),
        case("sum_squares", &[&[2, 3]], |v| Ok(v[0].sum_squares())),
        case("pairwise_nll", &[&[3, 4], &[5, 4]], |v| {
            losses::pairwise_nll(v[0], v[1], &binary(&[3, 5], 1), None)
        }),
        case("pairwise_nll_masked", &[&[4, 3]], |v| {
            losses::pairwise_nll(v[0], v[0], &binary(&[4, 4], 2), Some(&crate::hashing::upper_pairs(4)))
        }),
        case("quantization", &[&[3, 4]], |v| losses::quantization(v[0])),
        case("label_residual", &[&[3, 4]], |v| losses::label_residual(v[0], &binary(&[3, 4], 0))),
        case("prototype", &[&[3, 4], &[3, 2]], |v| {
            let w = PrototypeWeights {
                alpha1: 1.0,
                alpha2: 0.5,
                alpha3: 2.0,
            };
            Ok(losses::prototype(v[0], &signs(&[6, 4], 1), &binary(&[3, 6], 2), v[1], &binary(&[3, 2], 1), w)?.total)
        }),
        case("hamming", &[&[2, 5]], |v| losses::hamming_loss(&signs(&[2, 5], 0), v[0].tanh())),
        case("reconstruction", &[&[2, 3], &[2, 3]], |v| losses::reconstruction(v[0], v[1])),
        case("adversarial", &[&[2, 4]], |v| {
            losses::adversarial(v[0].sigmoid(), &binary(&[2, 4], 1), Some(&fixed(&[2, 4], |i| (i % 4 != 1) as u8 as f64)))
        }),
        case("discriminator", &[&[2, 4], &[2, 4]], |v| {
            losses::discriminator(v[0].sigmoid(), &binary(&[2, 4], 0), v[1].sigmoid(), &binary(&[2, 4], 2), None)
        }),
        case("generator", &[&[2, 4], &[2, 4], &[2, 3]], |v| {
            let j_ham = losses::hamming_loss(&signs(&[2, 4], 2), v[0].tanh())?;
            let j_re = losses::reconstruction(v[0], v[1])?;
            let j_adv = losses::adversarial(v[2].sigmoid(), &binary(&[2, 3], 1), None)?;
            let w = GeneratorWeights {
                alpha: 3.0,
                beta: 0.7,
                hamming: true,
            };
            loss_generator(j_ham, j_re, j_adv, w)
        }),
    ]
}

/// Inputs with magnitudes in `[0.05, 1]`, away from the kinks of `relu` and
/// `sign`.
fn draw<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("sized by construction")
}

fn eval(c: &GradCase, inputs: &[Tensor]) -> Result<f64> {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    Ok((c.f)(&vars)?.item())
}

/// Largest relative error over every component of every input at one point.
pub fn check_point(c: &GradCase, inputs: &[Tensor]) -> Result<f64> {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let grads = tape.backward((c.f)(&vars)?)?;
    let mut worst: f64 = 0.0;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            let numeric = (eval(c, &plus)? - eval(c, &minus)?) / (2.0 * STEP);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Largest relative error of `c` over `points` random points.
pub fn check_case(c: &GradCase, points: usize, seed: u64) -> Result<f64> {
    let mut rng = rng_stream(seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let inputs: Vec<Tensor> = c.shapes.iter().map(|s| draw(s, &mut rng)).collect();
        worst = worst.max(check_point(c, &inputs)?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catches_a_wrong_gradient() {
        let wrong = case("wrong", &[&[3]], |v| {
            let t = v[0].tape();
            let frozen = t.constant(v[0].value());
            Ok(v[0].mul(frozen)?.sum())
        });
        assert!(check_case(&wrong, 3, 1).unwrap() > 0.1);
    }

    #[test]
    fn every_case_passes_a_few_points() {
        for c in cases() {
            let err = check_case(&c, 5, 2).unwrap();
            assert!(err <= 1e-4, "{}: {err:e}", c.name);
        }
    }
}
