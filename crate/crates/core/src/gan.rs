//! Generator, discriminator and the alternating minimax loop.

use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::config::ExperimentConfig;
use crate::data::{self, build_similarity_matrix, image_matrix, labels_of, rng_stream, LabelVector, Sample};
use crate::error::{Error, Result};
use crate::hashing::{CodeMatrix, HashModel};
use crate::losses::{self, sign_tensor, PrototypeWeights};
use crate::nn::{Activation, BoundMlp, Mlp, MlpAdam};
use crate::prototype::{BoundPrototype, PrototypeNet};
use crate::tensor::Tensor;

/// Whether an augmented label describes a real or a generated image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Real,
    Fake,
}

/// `[y…, 0]` for real samples and `[y…, 1]` for fakes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentedLabel(Vec<u8>);

impl AugmentedLabel {
    pub fn entries(&self) -> &[u8] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }
}

pub fn augment_label(y: &LabelVector, role: Role) -> AugmentedLabel {
    let mut v = y.entries().to_vec();
    v.push(match role {
        Role::Real => 0,
        Role::Fake => 1,
    });
    AugmentedLabel(v)
}

fn augmented_rows(labels: &[LabelVector], role: Role) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = labels.iter().map(|y| augment_label(y, role).to_f64()).collect();
    Tensor::from_rows(&rows)
}

/// The semantic decoder `D_t`, the encoder-decoder core and the skip head.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    /// `r_t → hidden → Z`, producing `x_t`.
    pub decoder: Mlp,
    /// `[x, x_t] → bottleneck → Z`.
    pub core: Mlp,
    /// `[core, x] → Z`, sigmoid.
    pub head: Mlp,
}

/// Gain of the logistic linearization around 0.5: `σ(4x − 2) ≈ x`.
const SKIP_GAIN: f64 = 4.0;

impl Generator {
    pub fn new<R: Rng + ?Sized>(semantic: usize, pixels: usize, decoder_hidden: usize, bottleneck: usize, rng: &mut R) -> Self {
        let decoder = Mlp::new(
            &[semantic, decoder_hidden, pixels],
            &[Activation::Relu, Activation::Sigmoid],
            rng,
        );
        let core = Mlp::new(&[2 * pixels, bottleneck, pixels], &[Activation::Relu, Activation::Tanh], rng);
        let mut head = Mlp::new(&[2 * pixels, pixels], &[Activation::Sigmoid], rng);
        let layer = &mut head.layers[0];
        for i in 0..pixels {
            let row = pixels + i;
            for j in 0..pixels {
                layer.weight.data_mut()[row * pixels + j] = if i == j { SKIP_GAIN } else { 0.0 };
            }
        }
        layer.bias = Tensor::full(&[pixels], -SKIP_GAIN / 2.0);
        Generator { decoder, core, head }
    }

    pub fn zeros(semantic: usize, pixels: usize, decoder_hidden: usize, bottleneck: usize) -> Self {
        Generator {
            decoder: Mlp::zeros(&[semantic, decoder_hidden, pixels], &[Activation::Relu, Activation::Sigmoid]),
            core: Mlp::zeros(&[2 * pixels, bottleneck, pixels], &[Activation::Relu, Activation::Tanh]),
            head: Mlp::zeros(&[2 * pixels, pixels], &[Activation::Sigmoid]),
        }
    }

    pub fn pixels(&self) -> usize {
        self.head.output_width()
    }

    pub fn semantic_dim(&self) -> usize {
        self.decoder.input_width()
    }

    pub fn validate(&self) -> Result<()> {
        for net in [&self.decoder, &self.core, &self.head] {
            net.validate()?;
        }
        let z = self.pixels();
        if self.decoder.output_width() != z || self.core.input_width() != 2 * z || self.core.output_width() != z {
            return Err(Error::Contract("generator blocks disagree on the image width".into()));
        }
        if self.head.input_width() != 2 * z || self.head.layers[0].activation != Activation::Sigmoid {
            return Err(Error::Contract("generator head must map [core, x] through a sigmoid".into()));
        }
        Ok(())
    }

    /// `x′ = G(x, r_t)` for batches of rows.
    pub fn forward(&self, x: &Tensor, r_t: &Tensor) -> Result<Tensor> {
        let x_t = self.decoder.forward(r_t)?;
        let core = self.core.forward(&crate::tensor::concat(x, &x_t, 1)?)?;
        self.head.forward(&crate::tensor::concat(&core, x, 1)?)
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundGenerator<'t> {
        BoundGenerator {
            decoder: self.decoder.bind(tape),
            core: self.core.bind(tape),
            head: self.head.bind(tape),
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.decoder.params().chain(self.core.params()).chain(self.head.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.decoder
            .params_mut()
            .chain(self.core.params_mut())
            .chain(self.head.params_mut())
    }
}

pub struct BoundGenerator<'t> {
    decoder: BoundMlp<'t>,
    core: BoundMlp<'t>,
    head: BoundMlp<'t>,
}

impl<'t> BoundGenerator<'t> {
    pub fn forward(&self, x: Var<'t>, r_t: Var<'t>) -> Result<Var<'t>> {
        let x_t = self.decoder.forward(r_t)?;
        let core = self.core.forward(x.concat(x_t, 1)?)?;
        self.head.forward(core.concat(x, 1)?)
    }

    pub fn grads(&self, grads: &Gradients) -> Vec<Tensor> {
        let mut out = self.decoder.grads(grads);
        out.extend(self.core.grads(grads));
        out.extend(self.head.grads(grads));
        out
    }
}

/// `Z → hidden → C + 1`, sigmoid outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub net: Mlp,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(pixels: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        Discriminator {
            net: Mlp::new(&[pixels, hidden, classes + 1], &[Activation::Relu, Activation::Sigmoid], rng),
        }
    }

    pub fn classes(&self) -> usize {
        self.net.output_width() - 1
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.net.forward(x)
    }
}

/// Column mask keeping only the realness node.
fn realness_mask(rows: usize, classes: usize) -> Tensor {
    let mut m = Tensor::zeros(&[rows, classes + 1]);
    for i in 0..rows {
        m.data_mut()[i * (classes + 1) + classes] = 1.0;
    }
    m
}

/// One deterministic generator pass over a single image or a batch of rows.
pub fn generate_adversarial(g: &Generator, x: &Tensor, r_t: &Tensor) -> Result<Tensor> {
    match (x.shape(), r_t.shape()) {
        ([z], [r]) => {
            let out = g.forward(&x.clone().reshape(vec![1, *z])?, &r_t.clone().reshape(vec![1, *r])?)?;
            out.reshape(vec![*z])
        }
        _ => {
            let (n, _) = x.dims2()?;
            let (m, _) = r_t.dims2()?;
            if n != m {
                return Err(Error::dim("generate_adversarial", x.shape(), r_t.shape()));
            }
            g.forward(x, r_t)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorWeights {
    pub alpha: f64,
    pub beta: f64,
    pub hamming: bool,
}

/// `Σ (J_ham + α·J_re + β·J_adv)` from batch-summed components.
pub fn loss_generator<'t>(j_ham: Var<'t>, j_re: Var<'t>, j_adv: Var<'t>, w: GeneratorWeights) -> Result<Var<'t>> {
    let rest = j_re.scale(w.alpha).add(j_adv.scale(w.beta))?;
    if w.hamming {
        j_ham.add(rest)
    } else {
        Ok(rest)
    }
}

/// The three networks trained by [`train_prosgan`].
#[derive(Clone, Debug, PartialEq)]
pub struct ProsGan {
    pub prototype: PrototypeNet,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanTrainConfig {
    pub prototype_hidden: Vec<usize>,
    pub semantic_dim: usize,
    pub decoder_hidden: usize,
    pub bottleneck: usize,
    pub discriminator_hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub prototype_weights: PrototypeWeights,
    pub alpha: f64,
    pub beta: f64,
    pub disable_hamming_loss: bool,
    pub disable_discriminator_classes: bool,
}

impl GanTrainConfig {
    pub fn from_experiment(cfg: &ExperimentConfig) -> Self {
        GanTrainConfig {
            prototype_hidden: cfg.prototype_hidden.clone(),
            semantic_dim: cfg.semantic_dim,
            decoder_hidden: cfg.decoder_hidden,
            bottleneck: cfg.bottleneck,
            discriminator_hidden: cfg.discriminator_hidden,
            epochs: cfg.gan_epochs,
            batch: cfg.gan_batch,
            lr: cfg.gan_lr,
            prototype_weights: PrototypeWeights {
                alpha1: cfg.alpha1,
                alpha2: cfg.alpha2,
                alpha3: cfg.alpha3,
            },
            alpha: cfg.alpha,
            beta: cfg.beta,
            disable_hamming_loss: cfg.disable_hamming_loss,
            disable_discriminator_classes: cfg.disable_discriminator_classes,
        }
    }

    fn generator_weights(&self) -> GeneratorWeights {
        GeneratorWeights {
            alpha: self.alpha,
            beta: self.beta,
            hamming: !self.disable_hamming_loss,
        }
    }
}

/// Mean per-instance losses of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub l_pro: f64,
    pub l_gen: f64,
    pub l_dis: f64,
}

pub fn loss_trace_csv(rows: &[LossRow]) -> String {
    let mut out = String::from("epoch,l_pro,l_gen,l_dis\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.l_pro, r.l_gen, r.l_dis));
    }
    out
}

#[derive(Clone, Debug)]
pub struct GanTraining {
    pub model: ProsGan,
    pub trace: Vec<LossRow>,
}

/// Uniform over `choices`, skipping exact copies of `own`.
pub fn draw_target<R: Rng + ?Sized>(own: &LabelVector, choices: &[LabelVector], rng: &mut R) -> Result<LabelVector> {
    let eligible: Vec<&LabelVector> = choices.iter().filter(|c| *c != own).collect();
    eligible
        .choose(rng)
        .map(|c| (*c).clone())
        .ok_or(Error::TargetUnsatisfiable)
}

/// Everything a batch objective needs that does not change between updates.
pub(crate) struct GanContext<'a> {
    pub target: &'a HashModel,
    pub label_set: Tensor,
    pub label_similarity: Tensor,
    pub codes: Tensor,
    pub classes: usize,
}

pub(crate) struct GanBatch {
    pub images: Tensor,
    pub real_aug: Tensor,
    pub target_rows: Tensor,
    pub target_real_aug: Tensor,
    pub target_fake_aug: Tensor,
}

impl GanBatch {
    pub(crate) fn new(images: Tensor, labels: &[LabelVector], targets: &[LabelVector]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = targets.iter().map(LabelVector::to_f64).collect();
        Ok(GanBatch {
            images,
            real_aug: augmented_rows(labels, Role::Real)?,
            target_rows: Tensor::from_rows(&rows)?,
            target_real_aug: augmented_rows(targets, Role::Real)?,
            target_fake_aug: augmented_rows(targets, Role::Fake)?,
        })
    }
}

/// `L_pro`, `L_gen` and `L_dis` for one batch, each divided by its instance count.
pub(crate) struct BatchLosses<'t> {
    pub l_pro: Var<'t>,
    pub l_gen: Var<'t>,
    pub l_dis: Var<'t>,
}

pub(crate) struct BoundGan<'t> {
    pub prototype: BoundPrototype<'t>,
    pub generator: BoundGenerator<'t>,
    pub discriminator: BoundMlp<'t>,
}

impl ProsGan {
    pub fn new<R: Rng + ?Sized>(cfg: &GanTrainConfig, classes: usize, pixels: usize, code_length: usize, rng: &mut R) -> Self {
        ProsGan {
            prototype: PrototypeNet::new(classes, &cfg.prototype_hidden, cfg.semantic_dim, code_length, rng),
            generator: Generator::new(cfg.semantic_dim, pixels, cfg.decoder_hidden, cfg.bottleneck, rng),
            discriminator: Discriminator::new(pixels, cfg.discriminator_hidden, classes, rng),
        }
    }

    pub(crate) fn bind<'t>(&self, tape: &'t Tape) -> BoundGan<'t> {
        BoundGan {
            prototype: self.prototype.bind(tape),
            generator: self.generator.bind(tape),
            discriminator: self.discriminator.net.bind(tape),
        }
    }

    /// `x′` for each image row and target label.
    pub fn attack(&self, images: &Tensor, targets: &[LabelVector]) -> Result<Tensor> {
        let proto = self.prototype.forward_batch(targets)?;
        generate_adversarial(&self.generator, images, &proto.r_t)
    }

    /// `x′` for each image, generated one at a time, plus seconds per image.
    pub fn attack_timed(&self, images: &Tensor, targets: &[LabelVector]) -> Result<(Tensor, Vec<f64>)> {
        let (n, z) = images.dims2()?;
        if targets.len() != n {
            return Err(Error::dim("attack targets", &[n], &[targets.len()]));
        }
        let mut data = Vec::with_capacity(n * z);
        let mut times = Vec::with_capacity(n);
        for (i, y_t) in targets.iter().enumerate() {
            let x = Tensor::matrix(1, z, images.row(i).to_vec())?;
            let start = Instant::now();
            let out = self.attack(&x, std::slice::from_ref(y_t))?;
            times.push(start.elapsed().as_secs_f64());
            data.extend_from_slice(out.data());
        }
        Ok((Tensor::matrix(n, z, data)?, times))
    }
}

pub(crate) fn batch_losses<'t>(
    tape: &'t Tape,
    nets: &BoundGan<'t>,
    ctx: &GanContext<'_>,
    batch: &GanBatch,
    cfg: &GanTrainConfig,
) -> Result<BatchLosses<'t>> {
    let (n, _) = batch.images.dims2()?;
    let (m, _) = ctx.label_set.dims2()?;
    let (db, _) = ctx.codes.dims2()?;
    let w = cfg.prototype_weights;

    let (_, h_set, y_hat_set) = nets.prototype.forward(tape.constant(ctx.label_set.clone()))?;
    let pro = losses::prototype(h_set, &ctx.codes, &ctx.label_similarity, y_hat_set, &ctx.label_set, w)?;
    let l_pro = pro
        .similarity
        .scale(w.alpha1 / db as f64)
        .add(pro.quantization.scale(w.alpha2))?
        .add(pro.classification.scale(w.alpha3))?
        .scale(1.0 / m as f64);

    let (r_t, h_t, _) = nets.prototype.forward(tape.constant(batch.target_rows.clone()))?;
    let prototype_codes = sign_tensor(&h_t.value());
    let x = tape.constant(batch.images.clone());
    let x_adv = nets.generator.forward(x, r_t)?;
    let u = ctx.target.net.bind_frozen(tape).forward(x_adv)?;
    let mask = cfg
        .disable_discriminator_classes
        .then(|| realness_mask(n, ctx.classes));

    let j_ham = losses::hamming_loss(&prototype_codes, u)?;
    let j_re = losses::reconstruction(x, x_adv)?;
    let d_fake = nets.discriminator.forward(x_adv)?;
    let d_real = nets.discriminator.forward(x)?;
    let j_adv = losses::adversarial(d_fake, &batch.target_real_aug, mask.as_ref())?;
    let l_gen = loss_generator(j_ham, j_re, j_adv, cfg.generator_weights())?.scale(1.0 / n as f64);
    let l_dis = losses::discriminator(d_real, &batch.real_aug, d_fake, &batch.target_fake_aug, mask.as_ref())?
        .scale(1.0 / n as f64);
    Ok(BatchLosses { l_pro, l_gen, l_dis })
}

#[derive(Clone, Copy)]
enum Player {
    Prototype,
    Generator,
    Discriminator,
}

fn update(
    model: &mut ProsGan,
    optimizers: &mut [MlpAdam; 3],
    player: Player,
    ctx: &GanContext<'_>,
    batch: &GanBatch,
    cfg: &GanTrainConfig,
) -> Result<[f64; 3]> {
    let tape = Tape::new();
    let nets = model.bind(&tape);
    let l = batch_losses(&tape, &nets, ctx, batch, cfg)?;
    let values = [l.l_pro.item(), l.l_gen.item(), l.l_dis.item()];
    let objective = match player {
        Player::Prototype | Player::Generator => l.l_pro.add(l.l_gen)?.sub(l.l_dis)?,
        Player::Discriminator => l.l_dis.sub(l.l_pro)?.sub(l.l_gen)?,
    };
    if !objective.item().is_finite() {
        return Err(Error::Contract("objective is not finite".into()));
    }
    let grads = tape.backward(objective)?;
    match player {
        Player::Prototype => {
            let g = nets.prototype.grads(&grads);
            optimizers[0].step_params(model.prototype.params_mut(), &g)?;
        }
        Player::Generator => {
            let g = nets.generator.grads(&grads);
            optimizers[1].step_params(model.generator.params_mut(), &g)?;
        }
        Player::Discriminator => {
            let g = nets.discriminator.grads(&grads);
            optimizers[2].step(&mut model.discriminator.net, &g)?;
        }
    }
    Ok(values)
}

/// Alternating updates per batch: `θ_p` then `θ_g` descend
/// `L_pro + L_gen − L_dis`, then `θ_d` descends `L_dis − L_pro − L_gen`.
/// The target model only appears as a frozen binding.
pub fn train_prosgan(
    train: &[Sample],
    label_set: &[LabelVector],
    target: &HashModel,
    codes: &CodeMatrix,
    cfg: &GanTrainConfig,
    seed: u64,
) -> Result<GanTraining> {
    if train.is_empty() || label_set.is_empty() {
        return Err(Error::Input("adversarial training needs samples and target labels".into()));
    }
    if codes.len() != train.len() {
        return Err(Error::dim("train codes", &[train.len()], &[codes.len()]));
    }
    if codes.code_length() != target.code_length() {
        return Err(Error::dim("code length", &[target.code_length()], &[codes.code_length()]));
    }
    if cfg.batch == 0 || cfg.epochs == 0 {
        return Err(Error::Input("adversarial training needs batch ≥ 1 and epochs ≥ 1".into()));
    }
    let classes = label_set[0].classes();
    let pixels = target.input_width();
    let mut init = rng_stream(seed, data::streams::GAN_INIT);
    let mut shuffle = rng_stream(seed, data::streams::GAN_SHUFFLE);
    let mut model = ProsGan::new(cfg, classes, pixels, target.code_length(), &mut init);

    let label_rows: Vec<Vec<f64>> = label_set.iter().map(LabelVector::to_f64).collect();
    let ctx = GanContext {
        target,
        label_set: Tensor::from_rows(&label_rows)?,
        label_similarity: build_similarity_matrix(label_set, &labels_of(train))?.to_tensor(),
        codes: codes.to_rows(),
        classes,
    };
    let mut optimizers = [
        MlpAdam::for_params(model.prototype.params(), cfg.lr),
        MlpAdam::for_params(model.generator.params(), cfg.lr),
        MlpAdam::new(&model.discriminator.net, cfg.lr),
    ];

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut sums = [0.0; 3];
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let samples: Vec<Sample> = chunk.iter().map(|&i| train[i].clone()).collect();
            let labels = labels_of(&samples);
            let targets = labels
                .iter()
                .map(|y| draw_target(y, label_set, &mut shuffle))
                .collect::<Result<Vec<_>>>()?;
            let batch = GanBatch::new(image_matrix(&samples)?, &labels, &targets)?;
            let diverged = |e| match e {
                Error::Contract(_) => Error::Diverged {
                    stage: "train-attack",
                    epoch,
                    batch: b,
                },
                other => other,
            };
            let values = update(&mut model, &mut optimizers, Player::Prototype, &ctx, &batch, cfg).map_err(diverged)?;
            update(&mut model, &mut optimizers, Player::Generator, &ctx, &batch, cfg).map_err(diverged)?;
            update(&mut model, &mut optimizers, Player::Discriminator, &ctx, &batch, cfg).map_err(diverged)?;
            for (s, v) in sums.iter_mut().zip(values) {
                *s += v;
            }
            batches += 1;
        }
        let k = batches.max(1) as f64;
        trace.push(LossRow {
            epoch,
            l_pro: sums[0] / k,
            l_gen: sums[1] / k,
            l_dis: sums[2] / k,
        });
    }
    Ok(GanTraining { model, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lv(e: &[u8]) -> LabelVector {
        LabelVector::new(e.to_vec()).unwrap()
    }

    #[test]
    fn augmented_labels() {
        assert_eq!(augment_label(&lv(&[1, 0, 0]), Role::Real).entries(), &[1, 0, 0, 0]);
        assert_eq!(augment_label(&lv(&[0, 1, 0]), Role::Fake).entries(), &[0, 1, 0, 1]);
    }

    #[test]
    fn zero_generator_outputs_mid_gray() {
        let g = Generator::zeros(3, 4, 5, 6);
        g.validate().unwrap();
        let x = Tensor::vector(vec![0.1, 0.9, 0.3, 0.0]);
        let out = generate_adversarial(&g, &x, &Tensor::vector(vec![0.2; 3])).unwrap();
        assert_eq!(out.data(), &[0.5; 4]);
    }

    #[test]
    fn fresh_generator_starts_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Generator::new(3, 16, 8, 8, &mut rng);
        g.validate().unwrap();
        let x = Tensor::matrix(1, 16, (0..16).map(|i| 0.45 + 0.005 * i as f64).collect()).unwrap();
        let out = g.forward(&x, &Tensor::zeros(&[1, 3])).unwrap();
        assert_eq!(out, g.forward(&x, &Tensor::zeros(&[1, 3])).unwrap());
        assert!(out.data().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn generator_rejects_mismatched_batches() {
        let g = Generator::zeros(3, 4, 5, 6);
        assert!(generate_adversarial(&g, &Tensor::zeros(&[2, 4]), &Tensor::zeros(&[1, 3])).is_err());
        assert!(generate_adversarial(&g, &Tensor::zeros(&[2, 5]), &Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn generator_loss_combines_components() {
        let tape = Tape::new();
        let ham = tape.leaf(Tensor::scalar(2.0));
        let re = tape.leaf(Tensor::scalar(0.04));
        let adv = tape.leaf(Tensor::scalar(1.0));
        let w = GeneratorWeights {
            alpha: 50.0,
            beta: 1.0,
            hamming: true,
        };
        assert!((loss_generator(ham, re, adv, w).unwrap().item() - 5.0).abs() < 1e-12);
        let plain = GeneratorWeights {
            alpha: 0.0,
            beta: 0.0,
            hamming: true,
        };
        assert_eq!(loss_generator(ham, re, adv, plain).unwrap().item(), 2.0);
        let ablated = GeneratorWeights { hamming: false, ..w };
        assert!((loss_generator(ham, re, adv, ablated).unwrap().item() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn targets_never_copy_the_own_label() {
        let set = [lv(&[1, 0]), lv(&[0, 1]), lv(&[1, 1])];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            assert_ne!(draw_target(&set[0], &set, &mut rng).unwrap(), set[0]);
        }
        assert!(matches!(
            draw_target(&set[0], &set[..1], &mut rng),
            Err(Error::TargetUnsatisfiable)
        ));
    }

    #[test]
    fn trace_csv_header() {
        let csv = loss_trace_csv(&[LossRow {
            epoch: 0,
            l_pro: 1.5,
            l_gen: 0.25,
            l_dis: 2.0,
        }]);
        assert_eq!(csv, "epoch,l_pro,l_gen,l_dis\n0,1.5,0.25,2\n");
    }

    struct Mini {
        gan: ProsGan,
        target: HashModel,
        label_set: Vec<LabelVector>,
        codes: Tensor,
        train_labels: Vec<LabelVector>,
        batch: GanBatch,
        cfg: GanTrainConfig,
    }

    fn miniature(seed: u64) -> Mini {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = GanTrainConfig {
            prototype_hidden: vec![3],
            semantic_dim: 2,
            decoder_hidden: 3,
            bottleneck: 3,
            discriminator_hidden: 3,
            epochs: 1,
            batch: 2,
            lr: 1e-3,
            prototype_weights: PrototypeWeights {
                alpha1: 1.0,
                alpha2: 1e-4,
                alpha3: 1.0,
            },
            alpha: 50.0,
            beta: 1.0,
            disable_hamming_loss: false,
            disable_discriminator_classes: false,
        };
        let label_set = vec![lv(&[1, 0]), lv(&[0, 1]), lv(&[1, 1])];
        let train_labels = vec![lv(&[1, 0]), lv(&[0, 1]), lv(&[1, 1])];
        let images = Tensor::matrix(2, 2, vec![0.2, 0.7, 0.9, 0.4]).unwrap();
        Mini {
            gan: ProsGan::new(&cfg, 2, 2, 2, &mut rng),
            target: HashModel::new(2, &[3], 2, &mut rng),
            codes: Tensor::matrix(3, 2, vec![1.0, -1.0, -1.0, 1.0, 1.0, 1.0]).unwrap(),
            batch: GanBatch::new(images, &[lv(&[1, 0]), lv(&[0, 1])], &[lv(&[0, 1]), lv(&[1, 1])]).unwrap(),
            label_set,
            train_labels,
            cfg,
        }
    }

    fn objective(m: &Mini, gan: &ProsGan) -> (f64, Vec<Tensor>) {
        let rows: Vec<Vec<f64>> = m.label_set.iter().map(LabelVector::to_f64).collect();
        let ctx = GanContext {
            target: &m.target,
            label_set: Tensor::from_rows(&rows).unwrap(),
            label_similarity: build_similarity_matrix(&m.label_set, &m.train_labels).unwrap().to_tensor(),
            codes: m.codes.clone(),
            classes: 2,
        };
        let tape = Tape::new();
        let nets = gan.bind(&tape);
        let l = batch_losses(&tape, &nets, &ctx, &m.batch, &m.cfg).unwrap();
        let total = l.l_pro.add(l.l_gen).unwrap().sub(l.l_dis).unwrap();
        let grads = tape.backward(total).unwrap();
        let mut all = nets.prototype.grads(&grads);
        all.extend(nets.generator.grads(&grads));
        all.extend(nets.discriminator.grads(&grads));
        (total.item(), all)
    }

    fn params_mut(gan: &mut ProsGan) -> Vec<&mut Tensor> {
        let ProsGan {
            prototype,
            generator,
            discriminator,
        } = gan;
        prototype
            .params_mut()
            .chain(generator.params_mut())
            .chain(discriminator.net.params_mut())
            .collect()
    }

    #[test]
    fn minimax_gradients_match_finite_differences() {
        let h = 1e-6;
        for seed in 0..5 {
            let m = miniature(seed);
            let (_, analytic) = objective(&m, &m.gan);
            let mut checked = 0;
            for (p, g) in analytic.iter().enumerate() {
                for i in 0..g.len() {
                    let mut plus = m.gan.clone();
                    params_mut(&mut plus)[p].data_mut()[i] += h;
                    let mut minus = m.gan.clone();
                    params_mut(&mut minus)[p].data_mut()[i] -= h;
                    let numeric = (objective(&m, &plus).0 - objective(&m, &minus).0) / (2.0 * h);
                    let a = g.data()[i];
                    let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                    assert!(err <= 1e-4, "seed {seed}, tensor {p}[{i}]: {a} vs {numeric}");
                    checked += 1;
                }
            }
            assert_eq!(checked, m.gan.prototype.params().chain(m.gan.generator.params()).map(Tensor::len).sum::<usize>()
                + m.gan.discriminator.net.param_count());
        }
    }

    #[test]
    fn training_leaves_the_target_untouched_and_repeats() {
        let m = miniature(9);
        let train: Vec<Sample> = (0..6)
            .map(|i| Sample {
                id: i,
                image: vec![0.1 * i as f64, 0.5],
                label: m.train_labels[i % 3].clone(),
            })
            .collect();
        let codes = CodeMatrix::new(
            2,
            (0..6).map(|i| crate::hashing::BinaryCode::new(vec![1, if i % 2 == 0 { 1 } else { -1 }]).unwrap()).collect(),
        )
        .unwrap();
        let mut cfg = m.cfg.clone();
        cfg.epochs = 3;
        let before = m.target.clone();
        let a = train_prosgan(&train, &m.label_set, &m.target, &codes, &cfg, 4).unwrap();
        assert_eq!(m.target, before);
        assert_eq!(a.trace.len(), 3);
        let b = train_prosgan(&train, &m.label_set, &m.target, &codes, &cfg, 4).unwrap();
        assert_eq!(a.model, b.model);
        assert_ne!(a.model, ProsGan::new(&cfg, 2, 2, 2, &mut rng_stream(4, data::streams::GAN_INIT)));
    }
}
