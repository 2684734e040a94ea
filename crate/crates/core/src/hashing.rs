//! The attacked model `F(x) = sign(f(x))` and Hamming-space primitives.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::autodiff::{Tape, Var};
use crate::config::ExperimentConfig;
use crate::data::{self, build_similarity_matrix, image_matrix, labels_of, rng_stream, Sample};
use crate::error::{Error, Result};
use crate::losses;
use crate::nn::{Activation, BoundMlp, Mlp, MlpAdam};
use crate::tensor::Tensor;

/// A length-`K` code over `{−1, +1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryCode(Vec<i8>);

impl BinaryCode {
    pub fn new(bits: Vec<i8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b != 1 && b != -1) {
            return Err(Error::Input(format!("code entry {b} is not ±1")));
        }
        Ok(BinaryCode(bits))
    }

    pub fn bits(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| b as f64).collect()
    }

    pub fn negated(&self) -> BinaryCode {
        BinaryCode(self.0.iter().map(|&b| -b).collect())
    }
}

/// Elementwise sign, `sign(0) = +1`.
pub fn binarize(u: &[f64]) -> BinaryCode {
    BinaryCode(u.iter().map(|&v| if v >= 0.0 { 1 } else { -1 }).collect())
}

/// `aᵀb` for two codes.
pub fn inner(a: &BinaryCode, b: &BinaryCode) -> Result<i64> {
    if a.len() != b.len() {
        return Err(Error::dim("inner", &[a.len()], &[b.len()]));
    }
    Ok(a.0.iter().zip(&b.0).map(|(&x, &y)| (x * y) as i64).sum())
}

/// Number of disagreeing positions.
pub fn hamming_distance(a: &BinaryCode, b: &BinaryCode) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::dim("hamming_distance", &[a.len()], &[b.len()]));
    }
    Ok(a.0.iter().zip(&b.0).filter(|(x, y)| x != y).count())
}

/// Database codes; column `j` is item `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeMatrix {
    code_length: usize,
    columns: Vec<BinaryCode>,
}

impl CodeMatrix {
    pub fn new(code_length: usize, columns: Vec<BinaryCode>) -> Result<Self> {
        if let Some(c) = columns.iter().find(|c| c.len() != code_length) {
            return Err(Error::dim("code matrix column", &[code_length], &[c.len()]));
        }
        Ok(CodeMatrix { code_length, columns })
    }

    pub fn code_length(&self) -> usize {
        self.code_length
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn column(&self, j: usize) -> &BinaryCode {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[BinaryCode] {
        &self.columns
    }

    /// `N × K`, one code per row.
    pub fn to_rows(&self) -> Tensor {
        let data = self.columns.iter().flat_map(BinaryCode::to_f64).collect();
        Tensor::new(vec![self.columns.len(), self.code_length], data).expect("sized by construction")
    }
}

/// `f(x)`: an MLP whose last layer is `K` wide with tanh.
#[derive(Clone, Debug, PartialEq)]
pub struct HashModel {
    pub net: Mlp,
}

impl HashModel {
    pub fn new<R: rand::Rng + ?Sized>(inputs: usize, hidden: &[usize], code_length: usize, rng: &mut R) -> Self {
        let widths: Vec<usize> = std::iter::once(inputs).chain(hidden.iter().copied()).chain([code_length]).collect();
        let acts = vec![Activation::Tanh; widths.len() - 1];
        HashModel {
            net: Mlp::new(&widths, &acts, rng),
        }
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        net.validate()?;
        let last = net.layers.last().expect("validated non-empty");
        if last.activation != Activation::Tanh {
            return Err(Error::Contract("hash model must end in tanh".into()));
        }
        Ok(HashModel { net })
    }

    pub fn code_length(&self) -> usize {
        self.net.output_width()
    }

    pub fn input_width(&self) -> usize {
        self.net.input_width()
    }

    /// Continuous codes for a batch `n × Z` (or a single image of `Z` pixels).
    pub fn hash_forward(&self, x: &Tensor) -> Result<Tensor> {
        let batch = match x.shape() {
            [z] => x.clone().reshape(vec![1, *z])?,
            _ => x.clone(),
        };
        let (_, z) = batch.dims2()?;
        if z != self.input_width() {
            return Err(Error::dim("hash_forward", &[self.input_width()], x.shape()));
        }
        self.net.forward(&batch)
    }

    pub fn encode(&self, image: &[f64]) -> Result<BinaryCode> {
        let u = self.hash_forward(&Tensor::vector(image.to_vec()))?;
        Ok(binarize(u.data()))
    }

    pub fn encode_batch(&self, images: &Tensor) -> Result<Vec<BinaryCode>> {
        let u = self.hash_forward(images)?;
        let (n, _) = u.dims2()?;
        Ok((0..n).map(|i| binarize(u.row(i))).collect())
    }
}

/// Hyperparameters for fitting a [`HashModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct HashTrainConfig {
    pub code_length: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub quantization: f64,
}

impl HashTrainConfig {
    pub fn from_experiment(cfg: &ExperimentConfig) -> Self {
        HashTrainConfig {
            code_length: cfg.code_length,
            hidden: cfg.hash_hidden.clone(),
            epochs: cfg.hash_epochs,
            batch: cfg.hash_batch,
            lr: cfg.hash_lr,
            quantization: cfg.hash_quantization,
        }
    }

    /// The independently trained model used for transfer evaluation.
    pub fn transfer(cfg: &ExperimentConfig) -> Self {
        HashTrainConfig {
            code_length: cfg.transfer_code_length,
            hidden: cfg.transfer_hidden.clone(),
            ..Self::from_experiment(cfg)
        }
    }
}

#[derive(Clone, Debug)]
pub struct HashTraining {
    pub model: HashModel,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Upper-triangular pair mask for a batch of `n`.
pub(crate) fn upper_pairs(n: usize) -> Tensor {
    let mut m = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            m.data_mut()[i * n + j] = 1.0;
        }
    }
    m
}

/// Batch objective: mean pairwise likelihood over the `n(n−1)/2` pairs plus
/// `quantization` times the mean per-image quantization error.
pub fn hash_batch_loss<'t>(
    tape: &'t Tape,
    net: &BoundMlp<'t>,
    images: &Tensor,
    similarity: &Tensor,
    quantization: f64,
) -> Result<Var<'t>> {
    let (n, _) = images.dims2()?;
    if n < 2 {
        return Err(Error::Input("a pairwise batch needs at least two images".into()));
    }
    let u = net.forward(tape.constant(images.clone()))?;
    let pairs = (n * (n - 1) / 2) as f64;
    let j1 = losses::pairwise_nll(u, u, similarity, Some(&upper_pairs(n)))?;
    let j2 = losses::quantization(u)?;
    j1.scale(1.0 / pairs).add(j2.scale(quantization / n as f64))
}

/// Fits `f` on the training split. Same seed and config give bit-identical
/// parameters.
pub fn train_target_model(train: &[Sample], cfg: &HashTrainConfig, seed: u64) -> Result<HashTraining> {
    if train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if let Some(s) = train.iter().find(|s| s.label.is_empty()) {
        return Err(Error::Input(format!("training sample {} has no class", s.id)));
    }
    if cfg.batch < 2 || cfg.epochs == 0 || cfg.code_length == 0 {
        return Err(Error::Input("hash training needs batch ≥ 2, epochs ≥ 1, K ≥ 1".into()));
    }
    let mut init = rng_stream(seed, data::streams::HASH_INIT);
    let mut shuffle = rng_stream(seed, data::streams::HASH_SHUFFLE);
    let pixels = train[0].image.len();
    let (mean, scale) = pixel_moments(train);
    let standardized: Vec<Sample> = train
        .iter()
        .map(|s| Sample {
            image: s.image.iter().zip(&mean).zip(&scale).map(|((x, m), d)| (x - m) / d).collect(),
            ..s.clone()
        })
        .collect();
    let mut model = HashModel::new(pixels, &cfg.hidden, cfg.code_length, &mut init);
    let mut adam = MlpAdam::new(&model.net, cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let samples: Vec<Sample> = chunk.iter().map(|&i| standardized[i].clone()).collect();
            let images = image_matrix(&samples)?;
            let labels = labels_of(&samples);
            let s = build_similarity_matrix(&labels, &labels)?.to_tensor();
            let tape = Tape::new();
            let bound = model.net.bind(&tape);
            let loss = hash_batch_loss(&tape, &bound, &images, &s, cfg.quantization)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    stage: "train-hash",
                    epoch,
                    batch: b,
                });
            }
            let grads = tape.backward(loss)?;
            adam.step(&mut model.net, &bound.grads(&grads))?;
            total += value;
            batches += 1;
        }
        epoch_losses.push(total / batches.max(1) as f64);
    }
    fold_standardization(&mut model.net, &mean, &scale);
    Ok(HashTraining { model, epoch_losses })
}

/// Per-pixel mean and standard deviation over `samples`; constant pixels get
/// unit scale.
fn pixel_moments(samples: &[Sample]) -> (Vec<f64>, Vec<f64>) {
    let z = samples[0].image.len();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; z];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(&s.image) {
            *m += x / n;
        }
    }
    let mut var = vec![0.0; z];
    for s in samples {
        for ((v, x), m) in var.iter_mut().zip(&s.image).zip(&mean) {
            *v += (x - m) * (x - m) / n;
        }
    }
    let scale = var.into_iter().map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 }).collect();
    (mean, scale)
}

/// Rewrites the first layer so that it consumes raw pixels `x` and computes
/// what it previously computed on `(x − mean) / scale`.
fn fold_standardization(net: &mut Mlp, mean: &[f64], scale: &[f64]) {
    let layer = &mut net.layers[0];
    let cols = layer.outputs();
    let mut shift = vec![0.0; cols];
    for (i, (m, d)) in mean.iter().zip(scale).enumerate() {
        for (j, acc) in shift.iter_mut().enumerate() {
            let w = &mut layer.weight.data_mut()[i * cols + j];
            *w /= d;
            *acc += m * *w;
        }
    }
    for (b, s) in layer.bias.data_mut().iter_mut().zip(shift) {
        *b -= s;
    }
}

/// Binary codes of every database image, in database order.
pub fn encode_database(model: &HashModel, database: &[Sample]) -> Result<CodeMatrix> {
    if database.is_empty() {
        return Err(Error::Input("database is empty".into()));
    }
    let chunks: Vec<Vec<BinaryCode>> = database
        .par_chunks(128)
        .map(|chunk| model.encode_batch(&image_matrix(chunk)?))
        .collect::<Result<_>>()?;
    CodeMatrix::new(model.code_length(), chunks.into_iter().flatten().collect())
}
