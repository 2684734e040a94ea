//! Optimization-based comparison attacks: P2P, DHTA and uniform noise.

use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::autodiff::Tape;
use crate::config::AttackBudget;
use crate::data::LabelVector;
use crate::error::{Error, Result};
use crate::hashing::{BinaryCode, CodeMatrix, HashModel};
use crate::losses;
use crate::tensor::Tensor;

fn matching_columns<'a>(y_t: &LabelVector, db_labels: &[LabelVector], codes: &'a CodeMatrix) -> Result<Vec<&'a BinaryCode>> {
    if db_labels.len() != codes.len() {
        return Err(Error::dim("database labels", &[codes.len()], &[db_labels.len()]));
    }
    let hits: Vec<&BinaryCode> = db_labels
        .iter()
        .zip(codes.columns())
        .filter(|(y, _)| y.shares_class(y_t))
        .map(|(_, c)| c)
        .collect();
    if hits.is_empty() {
        return Err(Error::TargetUnsatisfiable);
    }
    Ok(hits)
}

/// The code of one database item sharing a class with `y_t`, chosen uniformly.
pub fn p2p_target_code<R: Rng + ?Sized>(
    y_t: &LabelVector,
    db_labels: &[LabelVector],
    codes: &CodeMatrix,
    rng: &mut R,
) -> Result<BinaryCode> {
    let hits = matching_columns(y_t, db_labels, codes)?;
    Ok((*hits.choose(rng).expect("non-empty")).clone())
}

/// Componentwise majority sign, ties to `+1`; minimizes the summed Hamming
/// distance to `codes`.
pub fn anchor_code<'a>(codes: impl IntoIterator<Item = &'a BinaryCode>) -> Result<BinaryCode> {
    let mut sums: Option<Vec<i64>> = None;
    for c in codes {
        let acc = sums.get_or_insert_with(|| vec![0; c.len()]);
        if acc.len() != c.len() {
            return Err(Error::dim("anchor_code", &[acc.len()], &[c.len()]));
        }
        for (a, &b) in acc.iter_mut().zip(c.bits()) {
            *a += b as i64;
        }
    }
    let sums = sums.ok_or_else(|| Error::Input("anchor code of an empty set".into()))?;
    BinaryCode::new(sums.into_iter().map(|s| if s >= 0 { 1 } else { -1 }).collect())
}

/// Anchor of every database item sharing a class with `y_t`.
pub fn anchor_code_for(y_t: &LabelVector, db_labels: &[LabelVector], codes: &CodeMatrix) -> Result<BinaryCode> {
    anchor_code(matching_columns(y_t, db_labels, codes)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult {
    pub perturbed: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub seconds: f64,
}

fn hamming_value_and_grad(model: &HashModel, x: &[f64], target: &Tensor) -> Result<(f64, Tensor)> {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::matrix(1, x.len(), x.to_vec())?);
    let u = model.net.bind_frozen(&tape).forward(x)?;
    let loss = losses::hamming_loss(target, u)?;
    let grads = tape.backward(loss)?;
    Ok((loss.item(), grads.get(x)))
}

/// Signed-gradient descent on `J_ham(target, f(x′))`, projected onto the
/// `ε`-ball around `x` and onto `[0, 1]` after every step.
pub fn iterative_gradient_attack(
    model: &HashModel,
    x: &[f64],
    target: &BinaryCode,
    budget: &AttackBudget,
) -> Result<AttackResult> {
    budget.validate().map_err(|e| Error::Input(e.to_string()))?;
    if target.len() != model.code_length() {
        return Err(Error::dim("attack target", &[model.code_length()], &[target.len()]));
    }
    if x.len() != model.input_width() {
        return Err(Error::dim("attack input", &[model.input_width()], &[x.len()]));
    }
    let start = Instant::now();
    let target = Tensor::matrix(1, target.len(), target.to_f64())?;
    let mut adv = x.to_vec();
    let mut initial_loss = None;
    for _ in 0..budget.iterations {
        let (loss, grad) = hamming_value_and_grad(model, &adv, &target)?;
        initial_loss.get_or_insert(loss);
        for ((a, &orig), &g) in adv.iter_mut().zip(x).zip(grad.data()) {
            let stepped = *a - budget.step_size * sign(g);
            *a = stepped
                .clamp(orig - budget.epsilon, orig + budget.epsilon)
                .clamp(0.0, 1.0);
        }
    }
    let (final_loss, _) = hamming_value_and_grad(model, &adv, &target)?;
    Ok(AttackResult {
        perturbed: adv,
        initial_loss: initial_loss.unwrap_or(final_loss),
        final_loss,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Attacks every image row toward its target code; results keep row order.
pub fn attack_all(model: &HashModel, images: &Tensor, targets: &[BinaryCode], budget: &AttackBudget) -> Result<Vec<AttackResult>> {
    let (n, _) = images.dims2()?;
    if targets.len() != n {
        return Err(Error::dim("attack targets", &[n], &[targets.len()]));
    }
    (0..n)
        .into_par_iter()
        .map(|i| iterative_gradient_attack(model, images.row(i), &targets[i], budget))
        .collect()
}

/// `x + U(−ε, ε)` per pixel, clipped to `[0, 1]`.
pub fn noise_attack<R: Rng + ?Sized>(x: &[f64], epsilon: f64, rng: &mut R) -> Vec<f64> {
    x.iter()
        .map(|&p| {
            let d = if epsilon > 0.0 { rng.random_range(-epsilon..=epsilon) } else { 0.0 };
            (p + d).clamp(0.0, 1.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::hamming_distance;
    use crate::nn::{Activation, Mlp};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn code(bits: &[i8]) -> BinaryCode {
        BinaryCode::new(bits.to_vec()).unwrap()
    }

    fn lv(e: &[u8]) -> LabelVector {
        LabelVector::new(e.to_vec()).unwrap()
    }

    #[test]
    fn anchor_examples() {
        let set = [code(&[1, 1, -1]), code(&[1, -1, -1]), code(&[1, 1, 1])];
        assert_eq!(anchor_code(&set).unwrap(), code(&[1, 1, -1]));
        assert_eq!(anchor_code(&set[..1]).unwrap(), set[0]);
        let tie = [code(&[1, -1]), code(&[-1, 1])];
        assert_eq!(anchor_code(&tie).unwrap(), code(&[1, 1]));
        assert!(matches!(anchor_code(&[]), Err(Error::Input(_))));
        assert!(anchor_code(&[code(&[1]), code(&[1, 1])]).is_err());
    }

    fn db() -> (Vec<LabelVector>, CodeMatrix) {
        let labels = vec![lv(&[1, 0, 0]), lv(&[0, 1, 0]), lv(&[0, 1, 1]), lv(&[0, 0, 1]), lv(&[0, 1, 0])];
        let codes = CodeMatrix::new(
            2,
            vec![code(&[1, 1]), code(&[1, -1]), code(&[-1, 1]), code(&[-1, -1]), code(&[1, 1])],
        )
        .unwrap();
        (labels, codes)
    }

    #[test]
    fn p2p_singleton_and_membership() {
        let (labels, codes) = db();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert_eq!(p2p_target_code(&lv(&[1, 0, 0]), &labels, &codes, &mut rng).unwrap(), code(&[1, 1]));
            let c = p2p_target_code(&lv(&[0, 0, 1]), &labels, &codes, &mut rng).unwrap();
            assert!(c == code(&[-1, 1]) || c == code(&[-1, -1]));
        }
        let only = [lv(&[1, 0, 0])];
        let one = CodeMatrix::new(2, vec![code(&[1, 1])]).unwrap();
        assert!(matches!(
            p2p_target_code(&lv(&[0, 1, 0]), &only, &one, &mut rng),
            Err(Error::TargetUnsatisfiable)
        ));
    }

    #[test]
    fn p2p_is_uniform_over_matches() {
        let (labels, codes) = db();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0usize; 3];
        let draws = 10_000;
        for _ in 0..draws {
            let c = p2p_target_code(&lv(&[0, 1, 0]), &labels, &codes, &mut rng).unwrap();
            let slot = if c == code(&[1, -1]) {
                0
            } else if c == code(&[-1, 1]) {
                1
            } else {
                assert_eq!(c, code(&[1, 1]));
                2
            };
            counts[slot] += 1;
        }
        let p = 1.0 / 3.0;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    fn toy_model() -> HashModel {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        HashModel::from_net(Mlp::new(&[6, 5, 4], &[Activation::Tanh, Activation::Tanh], &mut rng)).unwrap()
    }

    #[test]
    fn empty_budget_returns_the_input() {
        let model = toy_model();
        let x = vec![0.3; 6];
        let budget = AttackBudget::new(0.0, 1.0 / 255.0, 5);
        let r = iterative_gradient_attack(&model, &x, &code(&[1, -1, 1, -1]), &budget).unwrap();
        assert_eq!(r.perturbed, x);
        assert_eq!(r.initial_loss, r.final_loss);
    }

    #[test]
    fn single_step_is_fgsm() {
        let model = toy_model();
        let x = vec![0.5; 6];
        let target = code(&[1, -1, 1, -1]);
        let eps = 8.0 / 255.0;
        let r = iterative_gradient_attack(&model, &x, &target, &AttackBudget::new(eps, eps, 1)).unwrap();
        let (_, g) = hamming_value_and_grad(&model, &x, &Tensor::matrix(1, 4, target.to_f64()).unwrap()).unwrap();
        for ((a, &o), &gi) in r.perturbed.iter().zip(&x).zip(g.data()) {
            assert_eq!(*a, o - eps * sign(gi));
        }
    }

    #[test]
    fn invalid_budget_is_an_input_error() {
        let model = toy_model();
        let bad = AttackBudget::new(0.01, 0.02, 3);
        assert!(matches!(
            iterative_gradient_attack(&model, &[0.5; 6], &code(&[1; 4]), &bad),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn identical_targets_give_identical_outputs() {
        let model = toy_model();
        let images = Tensor::matrix(2, 6, (0..12).map(|i| i as f64 / 12.0).collect()).unwrap();
        let target = code(&[-1, -1, 1, 1]);
        let budget = AttackBudget::new(8.0 / 255.0, 1.0 / 255.0, 20);
        let p2p = attack_all(&model, &images, &[target.clone(), target.clone()], &budget).unwrap();
        let dhta = attack_all(&model, &images, &[target.clone(), target], &budget).unwrap();
        for (a, b) in p2p.iter().zip(&dhta) {
            assert_eq!(a.perturbed, b.perturbed);
        }
    }

    #[test]
    fn noise_stays_in_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = vec![0.0, 0.5, 1.0, 0.99];
        let y = noise_attack(&x, 0.03, &mut rng);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() <= 0.03 && (0.0..=1.0).contains(b));
        }
        assert_eq!(noise_attack(&x, 0.0, &mut rng), x);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn attack_respects_the_budget(
            x in prop::collection::vec(0.0f64..=1.0, 6),
            bits in prop::collection::vec(prop::sample::select(vec![-1i8, 1]), 4),
            eps_steps in 0u32..12,
            iterations in 1usize..15,
        ) {
            let model = toy_model();
            let eps = eps_steps as f64 / 255.0;
            let budget = AttackBudget::new(eps, if eps > 0.0 { eps.min(1.0 / 255.0) } else { 1.0 / 255.0 }, iterations);
            let r = iterative_gradient_attack(&model, &x, &code(&bits), &budget).unwrap();
            for (a, o) in r.perturbed.iter().zip(&x) {
                prop_assert!((a - o).abs() <= eps + 1e-12);
                prop_assert!((0.0..=1.0).contains(a));
            }
        }

        #[test]
        fn anchor_minimizes_total_distance(
            k in 1usize..=8,
            rows in prop::collection::vec(prop::collection::vec(prop::sample::select(vec![-1i8, 1]), 8), 1..12),
        ) {
            let set: Vec<BinaryCode> = rows.iter().map(|r| code(&r[..k])).collect();
            let anchor = anchor_code(&set).unwrap();
            let cost = |c: &BinaryCode| set.iter().map(|b| hamming_distance(c, b).unwrap()).sum::<usize>();
            let best = (0..1u32 << k)
                .map(|m| code(&(0..k).map(|i| if m >> i & 1 == 1 { 1 } else { -1 }).collect::<Vec<_>>()))
                .map(|c| cost(&c))
                .min()
                .unwrap();
            prop_assert_eq!(cost(&anchor), best);
        }
    }
}
