//! Stage orchestration over an output directory.
//!
//! Every stage reads its inputs from and writes its outputs to one directory,
//! so stages can run one at a time from the command line or in sequence via
//! [`run_experiment`].
//!
//! | stage | writes |
//! |---|---|
//! | `gen-data` | `dataset.ckpt` |
//! | `train-hash` | `hash_model.ckpt`, `train_codes.ckpt`, `hash_loss.csv` |
//! | `encode-db` | `database_codes.ckpt` |
//! | `train-attack` | `prosgan.ckpt`, `loss_trace.csv` |
//! | `attack` | `attack_prosgan.ckpt` |
//! | `baseline-*` | `attack_p2p.ckpt`, `attack_dhta.ckpt`, `attack_noise.ckpt` |
//! | `eval` | `report.json`, `pr_<method>.csv`, `topn_<method>.csv` |
//! | `transfer-eval` | `transfer_model.ckpt`, `transfer_report.json` |
//!
//! `manifest.json` collects the config, seed and wall-clock timings. A failed
//! stage leaves `<stage>.partial` next to whatever it managed to write.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::{anchor_code_for, attack_all, noise_attack, p2p_target_code};
use crate::checkpoint::{self, labels_tensor, read_labels, shape_err, Checkpoint, Persist};
use crate::config::ExperimentConfig;
use crate::data::{gen_synthetic_dataset, image_matrix, labels_of, rng_stream, streams, unique_labels, DatasetBundle, LabelVector};
use crate::error::{CheckpointError, Error, Result};
use crate::gan::{draw_target, loss_trace_csv, train_prosgan, GanTrainConfig, ProsGan};
use crate::hashing::{encode_database, train_target_model, BinaryCode, CodeMatrix, HashModel, HashTrainConfig};
use crate::prototype::prototype_code;
use crate::retrieval::{evaluate, pr_csv, pr_cutoffs, topn_csv, EvalInput, EvalReport};
use crate::tensor::Tensor;

pub const DATASET: &str = "dataset.ckpt";
pub const HASH_MODEL: &str = "hash_model.ckpt";
pub const TRAIN_CODES: &str = "train_codes.ckpt";
pub const DATABASE_CODES: &str = "database_codes.ckpt";
pub const PROSGAN: &str = "prosgan.ckpt";
pub const TRANSFER_MODEL: &str = "transfer_model.ckpt";
pub const REPORT: &str = "report.json";
pub const TRANSFER_REPORT: &str = "transfer_report.json";
pub const MANIFEST: &str = "manifest.json";
pub const LOSS_TRACE: &str = "loss_trace.csv";
pub const HASH_LOSS: &str = "hash_loss.csv";

/// Rank cutoffs per precision-recall curve.
pub const PR_POINTS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    P2p,
    Dhta,
    Noise,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Baseline::P2p, Baseline::Dhta, Baseline::Noise];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::P2p => "p2p",
            Baseline::Dhta => "dhta",
            Baseline::Noise => "noise",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == s)
    }

    /// Row name in the report.
    pub fn method(self) -> &'static str {
        match self {
            Baseline::P2p => "P2P",
            Baseline::Dhta => "DHTA",
            Baseline::Noise => "Noise",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    GenData,
    TrainHash,
    EncodeDb,
    TrainAttack,
    Attack,
    Baseline(Baseline),
    Eval,
    TransferEval,
}

impl Stage {
    pub fn name(self) -> String {
        match self {
            Stage::GenData => "gen-data".into(),
            Stage::TrainHash => "train-hash".into(),
            Stage::EncodeDb => "encode-db".into(),
            Stage::TrainAttack => "train-attack".into(),
            Stage::Attack => "attack".into(),
            Stage::Baseline(b) => format!("baseline-{}", b.name()),
            Stage::Eval => "eval".into(),
            Stage::TransferEval => "transfer-eval".into(),
        }
    }
}

/// Perturbed queries with the target label each one was crafted for.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackSet {
    pub method: String,
    pub targets: Vec<LabelVector>,
    /// `n × Z`, row `i` perturbs query `i`.
    pub images: Tensor,
    /// Seconds spent per image.
    pub seconds: Vec<f64>,
}

impl AttackSet {
    pub fn file_name(method: &str) -> String {
        format!("attack_{}.ckpt", method.to_lowercase().replace('-', ""))
    }

    pub fn mean_seconds(&self) -> f64 {
        self.seconds.iter().sum::<f64>() / self.seconds.len().max(1) as f64
    }
}

impl Persist for AttackSet {
    const KIND: &'static str = "attack-set";

    fn write(&self, ckpt: &mut Checkpoint) {
        let classes = self.targets.first().map_or(0, LabelVector::classes);
        ckpt.push_meta("method", &self.method);
        ckpt.push_tensor("targets", labels_tensor(&self.targets, classes));
        ckpt.push_tensor("images", self.images.clone());
        ckpt.push_tensor("seconds", Tensor::vector(self.seconds.clone()));
    }

    fn read(ckpt: &Checkpoint) -> std::result::Result<Self, CheckpointError> {
        let targets = read_labels(ckpt.tensor("targets")?, "targets")?;
        let images = ckpt.tensor("images")?.clone();
        let seconds = ckpt.tensor("seconds")?.data().to_vec();
        if images.shape().first() != Some(&targets.len()) || seconds.len() != targets.len() {
            return Err(shape_err("attack-set", format!("{:?}", images.shape()), format!("{} rows", targets.len())));
        }
        Ok(AttackSet {
            method: ckpt.meta("method")?.to_string(),
            targets,
            images,
            seconds,
        })
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub config: String,
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageTiming>,
    /// Mean seconds to craft one adversarial query, per method.
    pub generation_seconds: BTreeMap<String, f64>,
}

/// Scalars only, so identical runs give identical bytes.
#[derive(Clone, Debug, Serialize)]
pub struct ReportFile<'a> {
    pub config_hash: String,
    pub seed: u64,
    pub rows: &'a [EvalReport],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransferRow {
    pub method: String,
    pub attacked_t_map: f64,
    pub evaluated_t_map: f64,
}

/// One output directory bound to a configuration and seed.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig, out: impl Into<PathBuf>) -> Self {
        Experiment {
            cfg,
            out: out.into(),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn save<T: Persist>(&self, name: &str, value: &T) -> Result<()> {
        checkpoint::save(&self.path(name), value, &self.cfg.hash(), self.cfg.seed)
    }

    fn load<T: Persist>(&self, name: &str) -> Result<T> {
        checkpoint::load(&self.path(name))
    }

    pub fn dataset(&self) -> Result<DatasetBundle> {
        let data: DatasetBundle = self.load(DATASET)?;
        let spec = data.image_spec;
        if data.classes != self.cfg.classes {
            return Err(shape_err("classes", data.classes, self.cfg.classes).into());
        }
        if spec.pixels() != self.cfg.pixels() {
            return Err(shape_err("image pixels", spec.pixels(), self.cfg.pixels()).into());
        }
        Ok(data)
    }

    /// Loads a hash model and checks it against `code_length` and the image size.
    pub fn hash_model_at(&self, path: &Path, code_length: usize) -> Result<HashModel> {
        let model: HashModel = checkpoint::load(path)?;
        if model.code_length() != code_length {
            return Err(shape_err("code length", model.code_length(), code_length).into());
        }
        if model.input_width() != self.cfg.pixels() {
            return Err(shape_err("model input", model.input_width(), self.cfg.pixels()).into());
        }
        Ok(model)
    }

    pub fn hash_model(&self) -> Result<HashModel> {
        self.hash_model_at(&self.path(HASH_MODEL), self.cfg.code_length)
    }

    pub fn codes(&self, name: &str, code_length: usize) -> Result<CodeMatrix> {
        let codes: CodeMatrix = self.load(name)?;
        if codes.code_length() != code_length {
            return Err(shape_err(name, codes.code_length(), code_length).into());
        }
        Ok(codes)
    }

    pub fn prosgan(&self) -> Result<ProsGan> {
        let gan: ProsGan = self.load(PROSGAN)?;
        if gan.prototype.code_length() != self.cfg.code_length {
            return Err(shape_err("prototype code length", gan.prototype.code_length(), self.cfg.code_length).into());
        }
        Ok(gan)
    }

    pub fn attack_set(&self, method: &str) -> Result<AttackSet> {
        self.load(&AttackSet::file_name(method))
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        fs::write(self.path(name), text)?;
        Ok(())
    }

    /// Runs one stage, recording its time in the manifest, or leaving a
    /// `.partial` marker and naming the stage in the error.
    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        self.staged(&stage.name(), || self.execute(stage))
    }

    /// The `transfer-eval` stage with explicit model checkpoints.
    pub fn run_transfer(&self, attacked: &Path, evaluated: Option<&Path>) -> Result<()> {
        self.staged(&Stage::TransferEval.name(), || self.transfer_eval(attacked, evaluated).map(|_| None))
    }

    fn staged(&self, name: &str, body: impl FnOnce() -> Result<Option<(String, f64)>>) -> Result<()> {
        let marker = self.path(&format!("{name}.partial"));
        let start = Instant::now();
        let outcome = fs::create_dir_all(&self.out).map_err(Error::from).and_then(|_| body());
        match outcome {
            Ok(generation) => {
                if marker.exists() {
                    fs::remove_file(&marker)?;
                }
                self.record(name, start.elapsed().as_secs_f64(), generation)
            }
            Err(e) => {
                let _ = fs::write(&marker, format!("{e}\n"));
                Err(Error::Stage {
                    stage: name.to_string(),
                    source: Box::new(e),
                })
            }
        }
    }

    fn record(&self, stage: &str, seconds: f64, generation: Option<(String, f64)>) -> Result<()> {
        let path = self.path(MANIFEST);
        let mut manifest = fs::read_to_string(&path)
            .ok()
            .and_then(|s| serde_json::from_str::<Manifest>(&s).ok())
            .filter(|m| m.config_hash == self.cfg.hash() && m.seed == self.cfg.seed)
            .unwrap_or_default();
        manifest.config = self.cfg.serialize();
        manifest.config_hash = self.cfg.hash();
        manifest.seed = self.cfg.seed;
        manifest.stages.retain(|t| t.stage != stage);
        manifest.stages.push(StageTiming {
            stage: stage.to_string(),
            seconds,
        });
        if let Some((method, secs)) = generation {
            manifest.generation_seconds.insert(method, secs);
        }
        fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    fn execute(&self, stage: Stage) -> Result<Option<(String, f64)>> {
        match stage {
            Stage::GenData => self.gen_data().map(|_| None),
            Stage::TrainHash => self.train_hash().map(|_| None),
            Stage::EncodeDb => self.encode_db().map(|_| None),
            Stage::TrainAttack => self.train_attack().map(|_| None),
            Stage::Attack => self.attack().map(|s| Some((s.method.clone(), s.mean_seconds()))),
            Stage::Baseline(b) => self.baseline(b).map(|s| Some((s.method.clone(), s.mean_seconds()))),
            Stage::Eval => self.eval().map(|_| None),
            Stage::TransferEval => {
                let attacked = self.path(HASH_MODEL);
                self.transfer_eval(&attacked, None).map(|_| None)
            }
        }
    }

    pub fn gen_data(&self) -> Result<DatasetBundle> {
        let data = gen_synthetic_dataset(&self.cfg, self.cfg.seed)?;
        self.save(DATASET, &data)?;
        Ok(data)
    }

    pub fn train_hash(&self) -> Result<HashModel> {
        let data = self.dataset()?;
        let trained = train_target_model(&data.train, &HashTrainConfig::from_experiment(&self.cfg), self.cfg.seed)?;
        let train_codes = encode_database(&trained.model, &data.train)?;
        self.save(HASH_MODEL, &trained.model)?;
        self.save(TRAIN_CODES, &train_codes)?;
        let mut csv = String::from("epoch,loss\n");
        for (i, l) in trained.epoch_losses.iter().enumerate() {
            csv.push_str(&format!("{},{l}\n", i + 1));
        }
        self.write(HASH_LOSS, &csv)?;
        Ok(trained.model)
    }

    pub fn encode_db(&self) -> Result<CodeMatrix> {
        let data = self.dataset()?;
        let codes = encode_database(&self.hash_model()?, &data.database)?;
        self.save(DATABASE_CODES, &codes)?;
        Ok(codes)
    }

    pub fn train_attack(&self) -> Result<ProsGan> {
        let data = self.dataset()?;
        let model = self.hash_model()?;
        let codes = self.codes(TRAIN_CODES, self.cfg.code_length)?;
        let label_set = unique_labels(labels_of(&data.train).iter());
        let trained = train_prosgan(&data.train, &label_set, &model, &codes, &GanTrainConfig::from_experiment(&self.cfg), self.cfg.seed)?;
        self.save(PROSGAN, &trained.model)?;
        self.write(LOSS_TRACE, &loss_trace_csv(&trained.trace))?;
        Ok(trained.model)
    }

    /// One target label per query, drawn from the training label set.
    pub fn targets(&self, data: &DatasetBundle) -> Result<Vec<LabelVector>> {
        query_targets(data, self.cfg.seed)
    }

    pub fn attack(&self) -> Result<AttackSet> {
        let data = self.dataset()?;
        let gan = self.prosgan()?;
        let targets = self.targets(&data)?;
        let (images, seconds) = gan.attack_timed(&image_matrix(&data.query)?, &targets)?;
        let set = AttackSet {
            method: "ProS-GAN".into(),
            targets,
            images,
            seconds,
        };
        self.save(&AttackSet::file_name(&set.method), &set)?;
        Ok(set)
    }

    pub fn baseline(&self, which: Baseline) -> Result<AttackSet> {
        let data = self.dataset()?;
        let targets = self.targets(&data)?;
        let set = match which {
            Baseline::Noise => {
                let mut rng = rng_stream(self.cfg.seed, streams::NOISE);
                let mut seconds = Vec::with_capacity(data.query.len());
                let rows: Vec<Vec<f64>> = data
                    .query
                    .iter()
                    .map(|s| {
                        let start = Instant::now();
                        let x = noise_attack(&s.image, self.cfg.epsilon, &mut rng);
                        seconds.push(start.elapsed().as_secs_f64());
                        x
                    })
                    .collect();
                AttackSet {
                    method: which.method().into(),
                    targets,
                    images: Tensor::from_rows(&rows)?,
                    seconds,
                }
            }
            Baseline::P2p | Baseline::Dhta => {
                let model = self.hash_model()?;
                let db = self.codes(DATABASE_CODES, self.cfg.code_length)?;
                let db_labels = labels_of(&data.database);
                let codes = if which == Baseline::P2p {
                    let mut rng = rng_stream(self.cfg.seed, streams::P2P);
                    targets
                        .iter()
                        .map(|y| p2p_target_code(y, &db_labels, &db, &mut rng))
                        .collect::<Result<Vec<_>>>()?
                } else {
                    targets
                        .iter()
                        .map(|y| anchor_code_for(y, &db_labels, &db))
                        .collect::<Result<Vec<_>>>()?
                };
                let results = attack_all(&model, &image_matrix(&data.query)?, &codes, &self.cfg.budget())?;
                let rows: Vec<&[f64]> = results.iter().map(|r| r.perturbed.as_slice()).collect();
                AttackSet {
                    method: which.method().into(),
                    targets,
                    images: Tensor::from_rows(&rows)?,
                    seconds: results.iter().map(|r| r.seconds).collect(),
                }
            }
        };
        self.save(&AttackSet::file_name(&set.method), &set)?;
        Ok(set)
    }

    /// Writes `report.json` plus curve CSVs for every row.
    pub fn eval(&self) -> Result<Vec<EvalReport>> {
        let data = self.dataset()?;
        let model = self.hash_model()?;
        let db = self.codes(DATABASE_CODES, self.cfg.code_length)?;
        let gan = self.prosgan()?;
        let attack = self.attack_set("ProS-GAN")?;
        let mut sets = vec![attack];
        for b in Baseline::ALL {
            match self.attack_set(b.method()) {
                Ok(s) => sets.push(s),
                Err(Error::Checkpoint(CheckpointError::Missing(_))) => {}
                Err(e) => return Err(e),
            }
        }
        let rows = evaluate_all(&self.cfg, &data, &model, &db, &gan, &sets)?;
        for row in &rows {
            let slug = row.method.to_lowercase().replace('-', "_");
            self.write(&format!("pr_{slug}.csv"), &pr_csv(&row.pr_curve))?;
            self.write(&format!("topn_{slug}.csv"), &topn_csv(&row.precision_at_n))?;
        }
        self.write(REPORT, &report_json(&self.cfg, self.cfg.seed, &rows)?)?;
        Ok(rows)
    }

    /// The seed for the independently trained transfer model.
    pub fn transfer_seed(&self) -> u64 {
        rng_stream(self.cfg.seed, streams::TRANSFER).random()
    }

    /// Evaluates every stored attack set against the model it was crafted on
    /// and a second model. Without `evaluated`, the second model is trained
    /// (or reloaded) as `transfer_model.ckpt`.
    pub fn transfer_eval(&self, attacked: &Path, evaluated: Option<&Path>) -> Result<Vec<TransferRow>> {
        let data = self.dataset()?;
        let a: HashModel = checkpoint::load(attacked)?;
        let b = match evaluated {
            Some(path) => checkpoint::load::<HashModel>(path)?,
            None => match self.hash_model_at(&self.path(TRANSFER_MODEL), self.cfg.transfer_code_length) {
                Ok(m) => m,
                Err(Error::Checkpoint(CheckpointError::Missing(_))) => {
                    let cfg = HashTrainConfig::transfer(&self.cfg);
                    let m = train_target_model(&data.train, &cfg, self.transfer_seed())?.model;
                    self.save(TRANSFER_MODEL, &m)?;
                    m
                }
                Err(e) => return Err(e),
            },
        };
        for (m, which) in [(&a, "attacked"), (&b, "evaluated")] {
            if m.input_width() != data.image_spec.pixels() {
                return Err(shape_err(format!("{which} model input"), m.input_width(), data.image_spec.pixels()).into());
            }
        }
        let db_labels = labels_of(&data.database);
        let db_a = encode_database(&a, &data.database)?;
        let db_b = encode_database(&b, &data.database)?;
        let mut sets = Vec::new();
        for method in ["ProS-GAN", "DHTA", "P2P", "Noise"] {
            match self.attack_set(method) {
                Ok(s) => sets.push(s),
                Err(Error::Checkpoint(CheckpointError::Missing(_))) => {}
                Err(e) => return Err(e),
            }
        }
        let targets = match sets.first() {
            Some(s) => s.targets.clone(),
            None => self.targets(&data)?,
        };
        let clean = image_matrix(&data.query)?;
        let t_map_on = |m: &HashModel, db: &CodeMatrix, images: &Tensor, targets: &[LabelVector]| -> Result<f64> {
            crate::retrieval::t_map(&m.encode_batch(images)?, targets, db, &db_labels)
        };
        let mut rows = vec![TransferRow {
            method: "Original".into(),
            attacked_t_map: t_map_on(&a, &db_a, &clean, &targets)?,
            evaluated_t_map: t_map_on(&b, &db_b, &clean, &targets)?,
        }];
        for s in &sets {
            rows.push(TransferRow {
                method: s.method.clone(),
                attacked_t_map: t_map_on(&a, &db_a, &s.images, &s.targets)?,
                evaluated_t_map: t_map_on(&b, &db_b, &s.images, &s.targets)?,
            });
        }
        #[derive(Serialize)]
        struct TransferFile<'a> {
            config_hash: String,
            seed: u64,
            rows: &'a [TransferRow],
        }
        let file = TransferFile {
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            rows: &rows,
        };
        self.write(TRANSFER_REPORT, &(serde_json::to_string_pretty(&file)? + "\n"))?;
        Ok(rows)
    }
}

/// One target per query, uniform over the training label set minus the
/// query's own label.
pub fn query_targets(data: &DatasetBundle, seed: u64) -> Result<Vec<LabelVector>> {
    let label_set = unique_labels(labels_of(&data.train).iter());
    let mut rng = rng_stream(seed, streams::TARGETS);
    data.query.iter().map(|s| draw_target(&s.label, &label_set, &mut rng)).collect()
}

/// Report rows in table order: Original, then each attack set, then the
/// Anchor-code and Prototype-code queries.
pub fn evaluate_all(
    cfg: &ExperimentConfig,
    data: &DatasetBundle,
    model: &HashModel,
    db: &CodeMatrix,
    gan: &ProsGan,
    sets: &[AttackSet],
) -> Result<Vec<EvalReport>> {
    let targets = match sets.first() {
        Some(s) => s.targets.clone(),
        None => query_targets(data, cfg.seed)?,
    };
    if let Some(s) = sets.iter().find(|s| s.targets != targets) {
        return Err(Error::Input(format!("{} was crafted for different targets", s.method)));
    }
    let db_labels = labels_of(&data.database);
    let true_labels = labels_of(&data.query);
    let originals: Vec<Vec<f64>> = data.query.iter().map(|s| s.image.clone()).collect();
    let cutoffs = pr_cutoffs(db.len(), PR_POINTS);
    let row = |method: &str, codes: &[BinaryCode], perturbed: Option<&[Vec<f64>]>, times: Option<&[f64]>| {
        evaluate(EvalInput {
            method,
            codes,
            true_labels: &true_labels,
            targets: &targets,
            database: db,
            db_labels: &db_labels,
            originals: perturbed.map(|_| originals.as_slice()),
            perturbed,
            cutoffs: &cutoffs,
            topn: &cfg.topn,
            times,
        })
    };

    let mut rows = vec![row("Original", &model.encode_batch(&image_matrix(&data.query)?)?, None, None)?];
    let order = ["Noise", "P2P", "DHTA", "ProS-GAN"];
    let mut ordered: Vec<&AttackSet> = sets.iter().collect();
    ordered.sort_by_key(|s| order.iter().position(|m| *m == s.method).unwrap_or(order.len()));
    for s in ordered {
        let (n, _) = s.images.dims2()?;
        let perturbed: Vec<Vec<f64>> = (0..n).map(|i| s.images.row(i).to_vec()).collect();
        let codes = model.encode_batch(&s.images)?;
        rows.push(row(&s.method, &codes, Some(&perturbed), Some(&s.seconds))?);
    }
    let anchors = targets
        .iter()
        .map(|y| anchor_code_for(y, &db_labels, db))
        .collect::<Result<Vec<_>>>()?;
    rows.push(row("Anchor-code", &anchors, None, None)?);
    let protos = targets
        .iter()
        .map(|y| prototype_code(&gan.prototype, y))
        .collect::<Result<Vec<_>>>()?;
    rows.push(row("Prototype-code", &protos, None, None)?);
    Ok(rows)
}

pub fn report_json(cfg: &ExperimentConfig, seed: u64, rows: &[EvalReport]) -> Result<String> {
    let file = ReportFile {
        config_hash: cfg.hash(),
        seed,
        rows,
    };
    Ok(serde_json::to_string_pretty(&file)? + "\n")
}

/// Every stage in order; baselines and transfer follow the config switches.
pub fn run_experiment(exp: &Experiment) -> Result<()> {
    let mut stages = vec![Stage::GenData, Stage::TrainHash, Stage::EncodeDb, Stage::TrainAttack, Stage::Attack];
    stages.push(Stage::Baseline(Baseline::Noise));
    if exp.cfg.run_baselines {
        stages.extend([Stage::Baseline(Baseline::P2p), Stage::Baseline(Baseline::Dhta)]);
    }
    for s in stages {
        exp.run_stage(s)?;
    }
    exp.run_stage(Stage::Eval)?;
    if exp.cfg.run_transfer {
        exp.run_stage(Stage::TransferEval)?;
    }
    Ok(())
}

impl Experiment {
    /// Recomputes the report rows from stored artifacts without writing.
    pub fn eval_rows(&self) -> Result<Vec<EvalReport>> {
        let data = self.dataset()?;
        let mut sets = vec![self.attack_set("ProS-GAN")?];
        for b in Baseline::ALL {
            if let Ok(s) = self.attack_set(b.method()) {
                sets.push(s);
            }
        }
        evaluate_all(
            &self.cfg,
            &data,
            &self.hash_model()?,
            &self.codes(DATABASE_CODES, self.cfg.code_length)?,
            &self.prosgan()?,
            &sets,
        )
    }
}

