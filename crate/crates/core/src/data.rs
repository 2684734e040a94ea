//! Multi-label vectors, similarity matrices, and the synthetic dataset that
//! stands in for real image collections.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Seeded generator for an independent random stream.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A multi-hot label vector over `C` classes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelVector(Vec<u8>);

impl LabelVector {
    pub fn new(entries: Vec<u8>) -> Result<Self> {
        if entries.iter().any(|&e| e > 1) {
            return Err(Error::Input(format!("label entries must be 0 or 1: {entries:?}")));
        }
        Ok(LabelVector(entries))
    }

    pub fn from_classes(classes: usize, active: &[usize]) -> Result<Self> {
        let mut v = vec![0; classes];
        for &c in active {
            if c >= classes {
                return Err(Error::Input(format!("class {c} out of range for {classes} classes")));
            }
            v[c] = 1;
        }
        Ok(LabelVector(v))
    }

    pub fn entries(&self) -> &[u8] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &e)| e == 1).map(|(i, _)| i)
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    /// True when both vectors mark at least one common class.
    pub fn shares_class(&self, other: &LabelVector) -> bool {
        self.0.iter().zip(&other.0).any(|(&a, &b)| a == 1 && b == 1)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&e| f64::from(e)).collect()
    }
}

/// Binary `S` with `S_ij = 1` iff row label `i` and column label `j` share a class.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<u8>,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.entries[i * self.cols + j]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.rows, self.cols],
            self.entries.iter().map(|&e| f64::from(e)).collect(),
        )
        .expect("sized by construction")
    }
}

pub fn build_similarity_matrix(rows: &[LabelVector], cols: &[LabelVector]) -> Result<SimilarityMatrix> {
    let width = rows.first().or(cols.first()).map(LabelVector::classes).unwrap_or(0);
    for l in rows.iter().chain(cols) {
        if l.classes() != width {
            return Err(Error::dim("similarity matrix", &[width], &[l.classes()]));
        }
    }
    let mut entries = Vec::with_capacity(rows.len() * cols.len());
    for r in rows {
        for c in cols {
            entries.push(u8::from(r.shares_class(c)));
        }
    }
    Ok(SimilarityMatrix {
        rows: rows.len(),
        cols: cols.len(),
        entries,
    })
}

/// Deduplicated label vectors in first-seen order.
pub fn unique_labels<'a>(labels: impl IntoIterator<Item = &'a LabelVector>) -> Vec<LabelVector> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for l in labels {
        if seen.insert(l.clone()) {
            out.push(l.clone());
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageSpec {
    /// Pixel count `Z`.
    pub fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Identity across all splits.
    pub id: usize,
    pub image: Vec<f64>,
    pub label: LabelVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub image_spec: ImageSpec,
    pub classes: usize,
    pub train: Vec<Sample>,
    pub query: Vec<Sample>,
    pub database: Vec<Sample>,
}

/// Stacks sample images into an `n × Z` matrix.
pub fn image_matrix(samples: &[Sample]) -> Result<Tensor> {
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.image.as_slice()).collect();
    Tensor::from_rows(&rows)
}

pub fn labels_of(samples: &[Sample]) -> Vec<LabelVector> {
    samples.iter().map(|s| s.label.clone()).collect()
}

/// Stream ids keep the independent random draws of one seed apart.
pub mod streams {
    pub const TEMPLATES: u64 = 1;
    pub const SAMPLES: u64 = 2;
    pub const HASH_INIT: u64 = 3;
    pub const HASH_SHUFFLE: u64 = 4;
    pub const GAN_INIT: u64 = 5;
    pub const GAN_SHUFFLE: u64 = 6;
    pub const TARGETS: u64 = 7;
    pub const NOISE: u64 = 8;
    pub const P2P: u64 = 9;
    pub const TRANSFER: u64 = 10;
}

/// Fixed per-class patterns: `0.5 + contrast · u` with `u ~ U(−1, 1)` per pixel.
pub fn class_templates(cfg: &ExperimentConfig, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_stream(seed, streams::TEMPLATES);
    (0..cfg.classes)
        .map(|_| {
            (0..cfg.pixels())
                .map(|_| (0.5 + cfg.template_contrast * rng.random_range(-1.0..1.0)).clamp(0.0, 1.0))
                .collect()
        })
        .collect()
}

/// Renders one image: the mean of the active class templates plus Gaussian
/// pixel noise, clipped to `[0, 1]`.
pub fn render_image<R: Rng + ?Sized>(
    templates: &[Vec<f64>],
    label: &LabelVector,
    noise_sigma: f64,
    rng: &mut R,
) -> Vec<f64> {
    let active: Vec<usize> = label.active().collect();
    let pixels = templates[0].len();
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("non-negative sigma");
    (0..pixels)
        .map(|p| {
            let mean = active.iter().map(|&c| templates[c][p]).sum::<f64>() / active.len() as f64;
            let n = if noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            (mean + n).clamp(0.0, 1.0)
        })
        .collect()
}

fn draw_label<R: Rng + ?Sized>(classes: usize, multi_prob: f64, rng: &mut R) -> LabelVector {
    let first = rng.random_range(0..classes);
    let mut active = vec![first];
    if rng.random_bool(multi_prob) {
        let others: Vec<usize> = (0..classes).filter(|&c| c != first).collect();
        active.push(*others.choose(rng).expect("at least two classes"));
    }
    LabelVector::from_classes(classes, &active).expect("classes in range")
}

/// Generates train, query, and database splits. Sample ids are assigned
/// consecutively across the splits, so no identity is shared.
pub fn gen_synthetic_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<DatasetBundle> {
    if cfg.classes < 2 {
        return Err(Error::Input("at least two classes are required".into()));
    }
    if cfg.train_size == 0 || cfg.query_size == 0 || cfg.database_size == 0 || cfg.pixels() == 0 {
        return Err(Error::Input("split sizes and image dimensions must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.multi_label_prob) {
        return Err(Error::Input("multi-label probability must lie in [0, 1]".into()));
    }
    let templates = class_templates(cfg, seed);
    let mut rng = rng_stream(seed, streams::SAMPLES);
    let mut next_id = 0;
    let mut split = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Sample> {
        (0..n)
            .map(|_| {
                let label = draw_label(cfg.classes, cfg.multi_label_prob, rng);
                let image = render_image(&templates, &label, cfg.noise_sigma, rng);
                let id = next_id;
                next_id += 1;
                Sample { id, image, label }
            })
            .collect()
    };
    let train = split(cfg.train_size, &mut rng);
    let query = split(cfg.query_size, &mut rng);
    let database = split(cfg.database_size, &mut rng);
    Ok(DatasetBundle {
        image_spec: ImageSpec {
            height: cfg.image_height,
            width: cfg.image_width,
            channels: cfg.image_channels,
        },
        classes: cfg.classes,
        train,
        query,
        database,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(v: &[u8]) -> LabelVector {
        LabelVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn similarity_examples() {
        let s = build_similarity_matrix(&[lv(&[1, 0, 0])], &[lv(&[1, 1, 0]), lv(&[0, 1, 0])]).unwrap();
        assert_eq!(s.get(0, 0), 1);
        assert_eq!(s.get(0, 1), 0);
    }

    #[test]
    fn self_similarity_is_symmetric_with_unit_diagonal() {
        let labels = vec![lv(&[1, 0, 0]), lv(&[0, 1, 1]), lv(&[1, 1, 0]), lv(&[0, 0, 1])];
        let s = build_similarity_matrix(&labels, &labels).unwrap();
        for i in 0..4 {
            assert_eq!(s.get(i, i), 1);
            for j in 0..4 {
                assert_eq!(s.get(i, j), s.get(j, i));
            }
        }
    }

    #[test]
    fn width_mismatch_is_a_dimension_error() {
        let err = build_similarity_matrix(&[lv(&[1, 0])], &[lv(&[1, 0, 0])]).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn noiseless_single_label_image_is_its_template() {
        let cfg = ExperimentConfig {
            noise_sigma: 0.0,
            multi_label_prob: 0.0,
            ..ExperimentConfig::default()
        };
        let templates = class_templates(&cfg, 11);
        let data = gen_synthetic_dataset(&cfg, 11).unwrap();
        for s in data.train.iter().take(20) {
            let c = s.label.active().next().unwrap();
            assert_eq!(s.image, templates[c]);
        }
    }

    #[test]
    fn same_seed_same_bundle() {
        let cfg = ExperimentConfig {
            train_size: 20,
            query_size: 5,
            database_size: 30,
            ..ExperimentConfig::default()
        };
        assert_eq!(gen_synthetic_dataset(&cfg, 5).unwrap(), gen_synthetic_dataset(&cfg, 5).unwrap());
        assert_ne!(gen_synthetic_dataset(&cfg, 5).unwrap(), gen_synthetic_dataset(&cfg, 6).unwrap());
    }

    #[test]
    fn splits_are_disjoint_and_labelled() {
        let cfg = ExperimentConfig {
            train_size: 40,
            query_size: 10,
            database_size: 60,
            ..ExperimentConfig::default()
        };
        let data = gen_synthetic_dataset(&cfg, 2).unwrap();
        let mut ids = BTreeSet::new();
        for s in data.train.iter().chain(&data.query).chain(&data.database) {
            assert!(ids.insert(s.id));
            assert!(!s.label.is_empty());
            assert_eq!(s.image.len(), data.image_spec.pixels());
            assert!(s.image.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn invalid_sizes_are_rejected() {
        let cfg = ExperimentConfig {
            query_size: 0,
            ..ExperimentConfig::default()
        };
        assert!(matches!(gen_synthetic_dataset(&cfg, 1), Err(Error::Input(_))));
    }

    #[test]
    fn unique_labels_dedupes_in_order() {
        let labels = vec![lv(&[1, 0]), lv(&[0, 1]), lv(&[1, 0]), lv(&[1, 1])];
        assert_eq!(unique_labels(&labels), vec![lv(&[1, 0]), lv(&[0, 1]), lv(&[1, 1])]);
    }
}
