//! Bit-exact text checkpoints.
//!
//! ```text
//! hashattack-checkpoint 1
//! kind hash-model
//! config 3f2a…
//! seed 7
//! meta net.layers 3
//! tensor net.0.weight 256x128 3fe0000000000000 bf8c…
//! checksum 9b1d…
//! ```
//!
//! Every float is the hexadecimal IEEE-754 bit pattern of an `f64`. The
//! trailing checksum is the SHA-256 of every preceding byte.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::hex_digest;
use crate::data::{DatasetBundle, ImageSpec, LabelVector, Sample};
use crate::error::{CheckpointError, Result};
use crate::gan::{Discriminator, Generator, ProsGan};
use crate::hashing::{BinaryCode, CodeMatrix, HashModel};
use crate::nn::{Activation, Dense, Mlp};
use crate::prototype::PrototypeNet;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "hashattack-checkpoint";

type CkResult<T> = std::result::Result<T, CheckpointError>;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

fn format_err(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Format(msg.into())
}

impl Checkpoint {
    pub fn new(kind: &str, config_hash: &str, seed: u64) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            meta: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.push((key.into(), value.to_string()));
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn meta(&self, key: &str) -> CkResult<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| format_err(format!("missing meta entry {key}")))
    }

    pub fn meta_usize(&self, key: &str) -> CkResult<usize> {
        self.meta(key)?
            .parse()
            .map_err(|_| format_err(format!("meta entry {key} is not an integer")))
    }

    pub fn tensor(&self, name: &str) -> CkResult<&Tensor> {
        self.tensors
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, t)| t)
            .ok_or_else(|| format_err(format!("missing tensor {name}")))
    }

    pub fn expect_kind(&self, kind: &str) -> CkResult<()> {
        if self.kind != kind {
            return Err(CheckpointError::Kind {
                found: self.kind.clone(),
                expected: kind.to_string(),
            });
        }
        Ok(())
    }

    pub fn encode(&self) -> String {
        let mut body = format!(
            "{MAGIC} {FORMAT_VERSION}\nkind {}\nconfig {}\nseed {}\n",
            self.kind, self.config_hash, self.seed
        );
        for (k, v) in &self.meta {
            body.push_str(&format!("meta {k} {v}\n"));
        }
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            body.push_str(&format!("tensor {name} {}", dims.join("x")));
            for v in t.data() {
                body.push_str(&format!(" {:016x}", v.to_bits()));
            }
            body.push('\n');
        }
        let digest = hex_digest(body.as_bytes());
        body.push_str(&format!("checksum {digest}\n"));
        body
    }

    pub fn decode(bytes: &[u8]) -> CkResult<Self> {
        let body = verify_checksum(bytes)?;
        let text = std::str::from_utf8(body).map_err(|_| format_err("not UTF-8"))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| format_err("empty file"))?;
        match header.split_once(' ') {
            Some((MAGIC, v)) if v == FORMAT_VERSION.to_string() => {}
            Some((MAGIC, v)) => {
                return Err(CheckpointError::Version {
                    found: v.to_string(),
                    expected: FORMAT_VERSION.to_string(),
                })
            }
            _ => return Err(format_err("missing header")),
        }
        let mut field = |name: &str| -> CkResult<String> {
            let line = lines.next().ok_or_else(|| format_err(format!("missing {name}")))?;
            line.strip_prefix(name)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| format_err(format!("expected {name}, found {line:?}")))
        };
        let kind = field("kind")?;
        let config_hash = field("config")?;
        let seed = field("seed")?.parse().map_err(|_| format_err("seed is not an integer"))?;
        let mut ckpt = Checkpoint::new(&kind, &config_hash, seed);
        for line in lines {
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.push_meta(k, v);
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let mut parts = rest.split(' ');
                let name = parts.next().ok_or_else(|| format_err("tensor without name"))?;
                let shape = parts
                    .next()
                    .ok_or_else(|| format_err(format!("tensor {name} without shape")))?
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| format_err(format!("bad shape for {name}")))?;
                let data = parts
                    .map(|h| u64::from_str_radix(h, 16).map(f64::from_bits))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| format_err(format!("bad value in {name}")))?;
                let t = Tensor::new(shape, data).map_err(|e| format_err(format!("{name}: {e}")))?;
                ckpt.push_tensor(name, t);
            } else {
                return Err(format_err(format!("unrecognized line {line:?}")));
            }
        }
        Ok(ckpt)
    }
}

/// Returns the body preceding a valid `checksum` trailer.
fn verify_checksum(bytes: &[u8]) -> CkResult<&[u8]> {
    let trimmed = bytes.strip_suffix(b"\n").ok_or(CheckpointError::Checksum)?;
    let split = trimmed.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let (body, trailer) = trimmed.split_at(split);
    let stored = trailer.strip_prefix(b"checksum ").ok_or(CheckpointError::Checksum)?;
    let actual = Sha256::digest(body);
    let actual: String = actual.iter().map(|b| format!("{b:02x}")).collect();
    if stored != actual.as_bytes() {
        return Err(CheckpointError::Checksum);
    }
    Ok(body)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, ckpt.encode())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CheckpointError::Missing(path.to_path_buf()).into())
        }
        Err(e) => return Err(e.into()),
    };
    Ok(Checkpoint::decode(&bytes)?)
}

/// Values that round-trip through a [`Checkpoint`].
pub trait Persist: Sized {
    const KIND: &'static str;
    fn write(&self, ckpt: &mut Checkpoint);
    fn read(ckpt: &Checkpoint) -> CkResult<Self>;
}

pub fn save<T: Persist>(path: &Path, value: &T, config_hash: &str, seed: u64) -> Result<()> {
    let mut ckpt = Checkpoint::new(T::KIND, config_hash, seed);
    value.write(&mut ckpt);
    save_checkpoint(path, &ckpt)
}

pub fn load<T: Persist>(path: &Path) -> Result<T> {
    let ckpt = load_checkpoint(path)?;
    ckpt.expect_kind(T::KIND)?;
    Ok(T::read(&ckpt)?)
}

pub(crate) fn shape_err(what: impl Into<String>, stored: impl ToString, expected: impl ToString) -> CheckpointError {
    CheckpointError::Shape {
        what: what.into(),
        stored: stored.to_string(),
        expected: expected.to_string(),
    }
}

fn write_mlp(ckpt: &mut Checkpoint, prefix: &str, mlp: &Mlp) {
    ckpt.push_meta(format!("{prefix}.layers"), mlp.layers.len());
    for (i, l) in mlp.layers.iter().enumerate() {
        ckpt.push_meta(format!("{prefix}.{i}.activation"), l.activation.name());
        ckpt.push_tensor(format!("{prefix}.{i}.weight"), l.weight.clone());
        ckpt.push_tensor(format!("{prefix}.{i}.bias"), l.bias.clone());
    }
}

fn read_mlp(ckpt: &Checkpoint, prefix: &str) -> CkResult<Mlp> {
    let n = ckpt.meta_usize(&format!("{prefix}.layers"))?;
    let mut layers = Vec::with_capacity(n);
    for i in 0..n {
        let act = ckpt.meta(&format!("{prefix}.{i}.activation"))?;
        let activation = Activation::parse(act).ok_or_else(|| format_err(format!("unknown activation {act}")))?;
        let weight = ckpt.tensor(&format!("{prefix}.{i}.weight"))?.clone();
        let bias = ckpt.tensor(&format!("{prefix}.{i}.bias"))?.clone();
        if weight.shape().len() != 2 {
            return Err(shape_err(format!("{prefix}.{i}.weight"), format!("{:?}", weight.shape()), "a matrix"));
        }
        layers.push(Dense {
            weight,
            bias,
            activation,
        });
    }
    let mlp = Mlp { layers };
    mlp.validate().map_err(|e| shape_err(prefix, e, "a compatible layer chain"))?;
    Ok(mlp)
}

impl Persist for HashModel {
    const KIND: &'static str = "hash-model";

    fn write(&self, ckpt: &mut Checkpoint) {
        write_mlp(ckpt, "net", &self.net);
    }

    fn read(ckpt: &Checkpoint) -> CkResult<Self> {
        HashModel::from_net(read_mlp(ckpt, "net")?).map_err(|e| format_err(e.to_string()))
    }
}

impl Persist for ProsGan {
    const KIND: &'static str = "prosgan";

    fn write(&self, ckpt: &mut Checkpoint) {
        write_mlp(ckpt, "prototype.trunk", &self.prototype.trunk);
        write_mlp(ckpt, "prototype.code", &self.prototype.code_head);
        write_mlp(ckpt, "prototype.label", &self.prototype.label_head);
        write_mlp(ckpt, "generator.decoder", &self.generator.decoder);
        write_mlp(ckpt, "generator.core", &self.generator.core);
        write_mlp(ckpt, "generator.head", &self.generator.head);
        write_mlp(ckpt, "discriminator", &self.discriminator.net);
    }

    fn read(ckpt: &Checkpoint) -> CkResult<Self> {
        let prototype = PrototypeNet {
            trunk: read_mlp(ckpt, "prototype.trunk")?,
            code_head: read_mlp(ckpt, "prototype.code")?,
            label_head: read_mlp(ckpt, "prototype.label")?,
        };
        let generator = Generator {
            decoder: read_mlp(ckpt, "generator.decoder")?,
            core: read_mlp(ckpt, "generator.core")?,
            head: read_mlp(ckpt, "generator.head")?,
        };
        let discriminator = Discriminator {
            net: read_mlp(ckpt, "discriminator")?,
        };
        prototype.validate().map_err(|e| format_err(e.to_string()))?;
        generator.validate().map_err(|e| format_err(e.to_string()))?;
        if discriminator.classes() != prototype.classes() || generator.semantic_dim() != prototype.semantic_dim() {
            return Err(shape_err("prosgan", "inconsistent networks", "matching widths"));
        }
        Ok(ProsGan {
            prototype,
            generator,
            discriminator,
        })
    }
}

fn codes_tensor(codes: &[BinaryCode], k: usize) -> Tensor {
    let data = codes.iter().flat_map(BinaryCode::to_f64).collect();
    Tensor::new(vec![codes.len(), k], data).expect("sized by construction")
}

fn read_codes(t: &Tensor, what: &str) -> CkResult<Vec<BinaryCode>> {
    let (n, k) = t.dims2().map_err(|_| shape_err(what, format!("{:?}", t.shape()), "a matrix"))?;
    (0..n)
        .map(|i| {
            let bits = t.row(i).iter().map(|&v| v as i8).collect();
            BinaryCode::new(bits).map_err(|e| format_err(format!("{what}: {e}")))
        })
        .collect::<CkResult<Vec<_>>>()
        .and_then(|c| if k == 0 && n > 0 { Err(format_err("empty codes")) } else { Ok(c) })
}

impl Persist for CodeMatrix {
    const KIND: &'static str = "codes";

    fn write(&self, ckpt: &mut Checkpoint) {
        ckpt.push_meta("code_length", self.code_length());
        ckpt.push_tensor("codes", codes_tensor(self.columns(), self.code_length()));
    }

    fn read(ckpt: &Checkpoint) -> CkResult<Self> {
        let k = ckpt.meta_usize("code_length")?;
        let codes = read_codes(ckpt.tensor("codes")?, "codes")?;
        CodeMatrix::new(k, codes).map_err(|e| shape_err("codes", e, k))
    }
}

pub(crate) fn labels_tensor(labels: &[LabelVector], classes: usize) -> Tensor {
    let data = labels.iter().flat_map(LabelVector::to_f64).collect();
    Tensor::new(vec![labels.len(), classes], data).expect("sized by construction")
}

pub(crate) fn read_labels(t: &Tensor, what: &str) -> CkResult<Vec<LabelVector>> {
    let (n, _) = t.dims2().map_err(|_| shape_err(what, format!("{:?}", t.shape()), "a matrix"))?;
    (0..n)
        .map(|i| {
            LabelVector::new(t.row(i).iter().map(|&v| v as u8).collect()).map_err(|e| format_err(format!("{what}: {e}")))
        })
        .collect()
}

impl Persist for DatasetBundle {
    const KIND: &'static str = "dataset";

    fn write(&self, ckpt: &mut Checkpoint) {
        let spec = self.image_spec;
        ckpt.push_meta("classes", self.classes);
        ckpt.push_meta("height", spec.height);
        ckpt.push_meta("width", spec.width);
        ckpt.push_meta("channels", spec.channels);
        for (name, split) in [("train", &self.train), ("query", &self.query), ("database", &self.database)] {
            let ids = split.iter().map(|s| s.id as f64).collect();
            ckpt.push_tensor(format!("{name}.ids"), Tensor::vector(ids));
            let images = split.iter().flat_map(|s| s.image.iter().copied()).collect();
            ckpt.push_tensor(
                format!("{name}.images"),
                Tensor::new(vec![split.len(), spec.pixels()], images).expect("sized by construction"),
            );
            let labels: Vec<LabelVector> = split.iter().map(|s| s.label.clone()).collect();
            ckpt.push_tensor(format!("{name}.labels"), labels_tensor(&labels, self.classes));
        }
    }

    fn read(ckpt: &Checkpoint) -> CkResult<Self> {
        let image_spec = ImageSpec {
            height: ckpt.meta_usize("height")?,
            width: ckpt.meta_usize("width")?,
            channels: ckpt.meta_usize("channels")?,
        };
        let classes = ckpt.meta_usize("classes")?;
        let split = |name: &str| -> CkResult<Vec<Sample>> {
            let ids = ckpt.tensor(&format!("{name}.ids"))?;
            let images = ckpt.tensor(&format!("{name}.images"))?;
            let labels = read_labels(ckpt.tensor(&format!("{name}.labels"))?, name)?;
            let n = ids.len();
            if images.shape() != [n, image_spec.pixels()] || labels.len() != n {
                return Err(shape_err(name, format!("{:?}", images.shape()), format!("[{n}, {}]", image_spec.pixels())));
            }
            if let Some(l) = labels.iter().find(|l| l.classes() != classes) {
                return Err(shape_err(format!("{name}.labels"), l.classes(), classes));
            }
            Ok((0..n)
                .map(|i| Sample {
                    id: ids.data()[i] as usize,
                    image: images.row(i).to_vec(),
                    label: labels[i].clone(),
                })
                .collect())
        };
        Ok(DatasetBundle {
            image_spec,
            classes,
            train: split("train")?,
            query: split("query")?,
            database: split("database")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use crate::gan::GanTrainConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> HashModel {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        HashModel::new(6, &[5], 3, &mut rng)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut m = model();
        m.net.layers[0].weight.data_mut()[0] = -0.0;
        m.net.layers[0].weight.data_mut()[1] = f64::MIN_POSITIVE / 3.0;
        save(&path, &m, "abc", 9).unwrap();
        let back: HashModel = load(&path).unwrap();
        assert_eq!(back.net.layers[0].weight.data()[0].to_bits(), (-0.0f64).to_bits());
        for (a, b) in m.net.params().zip(back.net.params()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        let ckpt = load_checkpoint(&path).unwrap();
        assert_eq!((ckpt.config_hash.as_str(), ckpt.seed), ("abc", 9));
    }

    #[test]
    fn every_flipped_byte_is_rejected() {
        let ckpt = {
            let mut c = Checkpoint::new(HashModel::KIND, "h", 1);
            model().write(&mut c);
            c.encode().into_bytes()
        };
        for i in (0..ckpt.len()).step_by(7) {
            let mut bad = ckpt.clone();
            bad[i] ^= 0x01;
            assert!(
                matches!(Checkpoint::decode(&bad), Err(CheckpointError::Checksum)),
                "byte {i} slipped through"
            );
        }
    }

    #[test]
    fn distinct_load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none.ckpt");
        assert!(matches!(
            load::<HashModel>(&missing),
            Err(crate::Error::Checkpoint(CheckpointError::Missing(_)))
        ));

        let codes = CodeMatrix::new(2, vec![BinaryCode::new(vec![1, -1]).unwrap()]).unwrap();
        let path = dir.path().join("codes.ckpt");
        save(&path, &codes, "h", 1).unwrap();
        assert!(matches!(
            load::<HashModel>(&path),
            Err(crate::Error::Checkpoint(CheckpointError::Kind { .. }))
        ));
        assert_eq!(load::<CodeMatrix>(&path).unwrap(), codes);

        let text = Checkpoint::new("codes", "h", 1).encode().replacen(" 1\n", " 2\n", 1);
        let body = &text[..text.rfind("checksum").unwrap()];
        let resealed = format!("{body}checksum {}\n", hex_digest(body.as_bytes()));
        assert!(matches!(
            Checkpoint::decode(resealed.as_bytes()),
            Err(CheckpointError::Version { .. })
        ));
    }

    #[test]
    fn prosgan_and_dataset_round_trip() {
        let cfg = ExperimentConfig {
            train_size: 6,
            query_size: 3,
            database_size: 5,
            ..ExperimentConfig::default()
        };
        let data = crate::data::gen_synthetic_dataset(&cfg, 2).unwrap();
        let mut c = Checkpoint::new(DatasetBundle::KIND, "h", 2);
        data.write(&mut c);
        let back = DatasetBundle::read(&Checkpoint::decode(c.encode().as_bytes()).unwrap()).unwrap();
        assert_eq!(back, data);

        let gc = GanTrainConfig::from_experiment(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gan = ProsGan::new(&gc, 4, 12, 5, &mut rng);
        let mut c = Checkpoint::new(ProsGan::KIND, "h", 2);
        gan.write(&mut c);
        assert_eq!(ProsGan::read(&Checkpoint::decode(c.encode().as_bytes()).unwrap()).unwrap(), gan);
    }
}
