//! Every training objective, written against the tape.
//!
//! Batches are row-major: row `i` of each operand belongs to instance `i`.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Negative log-likelihood of pairwise similarity.
///
/// With `Ω = ½ · A · Bᵀ` (`A: n × K`, `B: m × K`) this is
/// `Σ_ij mask_ij · (log(1 + e^{Ω_ij}) − S_ij · Ω_ij)`. Every addend is
/// non-negative for `S_ij ∈ {0, 1}`. `mask` restricts the sum to selected
/// pairs (for example the upper triangle when `A` and `B` are the same batch).
pub fn pairwise_nll<'t>(a: Var<'t>, b: Var<'t>, similarity: &Tensor, mask: Option<&Tensor>) -> Result<Var<'t>> {
    let tape = a.tape();
    let omega = a.matmul(b.transpose()?)?.scale(0.5);
    if omega.shape() != similarity.shape() {
        return Err(Error::dim("pairwise_nll", &omega.shape(), similarity.shape()));
    }
    let s = tape.constant(similarity.clone());
    let per_pair = omega.softplus().sub(s.mul(omega)?)?;
    match mask {
        Some(m) => Ok(tape.constant(m.clone()).mul(per_pair)?.sum()),
        None => Ok(per_pair.sum()),
    }
}

/// Elementwise sign with `sign(0) = +1`.
pub fn sign_tensor(t: &Tensor) -> Tensor {
    t.map(|v| if v >= 0.0 { 1.0 } else { -1.0 })
}

/// `‖H − sign(H)‖²_F`, with `sign(H)` held constant in the gradient.
pub fn quantization<'t>(h: Var<'t>) -> Result<Var<'t>> {
    let target = h.tape().constant(sign_tensor(&h.value()));
    Ok(h.sub(target)?.sum_squares())
}

/// `‖Ŷ − Y‖²_F`.
pub fn label_residual<'t>(predicted: Var<'t>, labels: &Tensor) -> Result<Var<'t>> {
    let y = predicted.tape().constant(labels.clone());
    Ok(predicted.sub(y)?.sum_squares())
}

/// Normalized Hamming surrogate, summed over the batch:
/// `Σ_i (1 − h_iᵀ u_i / K)`, each term in `[0, 2]` for `u ∈ [−1, 1]^K`.
pub fn hamming_loss<'t>(target_codes: &Tensor, u: Var<'t>) -> Result<Var<'t>> {
    let shape = u.shape();
    if target_codes.shape() != shape.as_slice() {
        return Err(Error::dim("hamming_loss", target_codes.shape(), &shape));
    }
    let k = *shape.last().expect("non-empty shape") as f64;
    let rows = if shape.len() == 2 { shape[0] } else { 1 } as f64;
    let h = u.tape().constant(target_codes.clone());
    Ok(h.mul(u)?.sum().scale(-1.0 / k).offset(rows))
}

/// `‖x − x′‖²₂`, summed over the batch.
pub fn reconstruction<'t>(x: Var<'t>, x_adv: Var<'t>) -> Result<Var<'t>> {
    Ok(x.sub(x_adv)?.sum_squares())
}

/// `Σ mask ⊙ (out − target)²`, the squared distance to augmented labels.
/// A `mask` zeroes the columns an ablated discriminator does not predict.
pub fn augmented_distance<'t>(out: Var<'t>, target: &Tensor, mask: Option<&Tensor>) -> Result<Var<'t>> {
    let tape = out.tape();
    let diff = out.sub(tape.constant(target.clone()))?;
    let diff = match mask {
        Some(m) => diff.mul(tape.constant(m.clone()))?,
        None => diff,
    };
    Ok(diff.sum_squares())
}

/// Generator's adversarial term: `‖D(x′) − [y_t, 0]‖²`, where `real_targets`
/// already holds the `[y_t, 0]` rows.
pub fn adversarial<'t>(d_fake: Var<'t>, real_targets: &Tensor, mask: Option<&Tensor>) -> Result<Var<'t>> {
    augmented_distance(d_fake, real_targets, mask)
}

/// Discriminator objective:
/// `½ (‖D(x) − [y, 0]‖² + ‖D(x′) − [y_t, 1]‖²)`, summed over the batch.
pub fn discriminator<'t>(
    d_real: Var<'t>,
    real_targets: &Tensor,
    d_fake: Var<'t>,
    fake_targets: &Tensor,
    mask: Option<&Tensor>,
) -> Result<Var<'t>> {
    let real = augmented_distance(d_real, real_targets, mask)?;
    let fake = augmented_distance(d_fake, fake_targets, mask)?;
    Ok(real.add(fake)?.scale(0.5))
}

/// Weights of the prototype objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrototypeWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

/// The three prototype terms, kept separate for reporting.
pub struct PrototypeLoss<'t> {
    pub total: Var<'t>,
    pub similarity: Var<'t>,
    pub quantization: Var<'t>,
    pub classification: Var<'t>,
}

/// `α1·J1 + α2·J2 + α3·J3` for prototype embeddings `h` (`M × K`, one row per
/// target label), database codes `codes` (`N × K`), similarity `S` (`M × N`),
/// and predicted / true labels (`M × C`).
pub fn prototype<'t>(
    h: Var<'t>,
    codes: &Tensor,
    similarity: &Tensor,
    predicted: Var<'t>,
    labels: &Tensor,
    w: PrototypeWeights,
) -> Result<PrototypeLoss<'t>> {
    let b = h.tape().constant(codes.clone());
    let j1 = pairwise_nll(h, b, similarity, None)?;
    let j2 = quantization(h)?;
    let j3 = label_residual(predicted, labels)?;
    let total = j1.scale(w.alpha1).add(j2.scale(w.alpha2))?.add(j3.scale(w.alpha3))?;
    Ok(PrototypeLoss {
        total,
        similarity: j1,
        quantization: j2,
        classification: j3,
    })
}
