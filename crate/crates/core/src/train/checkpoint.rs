use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{DiffusionModel, ModelConfig};
use crate::nn::ParamStore;
use crate::scalar::Scalar;

use super::{EpochRecord, TrainConfig};

const MAGIC: &[u8; 8] = b"STRKDIF\0";
pub const FORMAT_VERSION: u32 = 1;

/// A model with the configuration and history that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub model: DiffusionModel<F>,
    pub train: TrainConfig,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    group: String,
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dtype: String,
    model: ModelConfig,
    velocity_scale: f64,
    train_len: usize,
    train: TrainConfig,
    epoch: usize,
    history: Vec<EpochRecord>,
    arrays: Vec<ArrayEntry>,
    blob_len: usize,
    blob_sha256: String,
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl<F: Scalar> Checkpoint<F> {
    /// Archive layout: magic, `u32` format version, `u32` manifest length,
    /// the JSON manifest, then every weight as little-endian scalars.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blob = Vec::new();
        let mut arrays = Vec::new();
        let groups = [("estimator", Some(self.model.estimator.params())), ("encoder", self.model.encoder.as_ref().map(|e| e.params()))];
        for (group, store) in groups {
            for (name, value) in store.into_iter().flat_map(ParamStore::iter) {
                arrays.push(ArrayEntry {
                    group: group.into(),
                    name: name.into(),
                    shape: [value.nrows(), value.ncols()],
                    offset: blob.len(),
                });
                for x in value.iter() {
                    x.write_le(&mut blob);
                }
            }
        }
        let manifest = Manifest {
            version: FORMAT_VERSION,
            dtype: F::DTYPE.into(),
            model: *self.model.config(),
            velocity_scale: self.model.velocity_scale(),
            train_len: self.model.train_len(),
            train: self.train,
            epoch: self.epoch,
            history: self.history.clone(),
            arrays,
            blob_len: blob.len(),
            blob_sha256: hex(&Sha256::digest(&blob)),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + json.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Corrupt("missing archive header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Version { found: version, expected: FORMAT_VERSION });
        }
        let mlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let json = bytes.get(16..16 + mlen).ok_or_else(|| Error::Corrupt("truncated manifest".into()))?;
        let manifest: Manifest =
            serde_json::from_slice(json).map_err(|e| Error::Corrupt(format!("unreadable manifest: {e}")))?;
        if manifest.version != FORMAT_VERSION {
            return Err(Error::Version { found: manifest.version, expected: FORMAT_VERSION });
        }
        if manifest.dtype != F::DTYPE {
            return Err(Error::Precision { found: manifest.dtype, expected: F::DTYPE.into() });
        }
        let blob = &bytes[16 + mlen..];
        if blob.len() != manifest.blob_len {
            return Err(Error::Corrupt(format!("weight blob holds {} bytes, manifest says {}", blob.len(), manifest.blob_len)));
        }
        if hex(&Sha256::digest(blob)) != manifest.blob_sha256 {
            return Err(Error::Corrupt("weight checksum mismatch".into()));
        }
        let mut estimator = ParamStore::new();
        let mut encoder = ParamStore::new();
        for a in &manifest.arrays {
            let n = a.shape[0] * a.shape[1];
            let raw = blob
                .get(a.offset..a.offset + n * F::BYTES)
                .ok_or_else(|| Error::Corrupt(format!("weight '{}' out of range", a.name)))?;
            let vals: Vec<F> = raw.chunks_exact(F::BYTES).map(F::read_le).collect();
            let arr = Array2::from_shape_vec((a.shape[0], a.shape[1]), vals).expect("length checked");
            match a.group.as_str() {
                "estimator" => estimator.push(a.name.clone(), arr),
                "encoder" => encoder.push(a.name.clone(), arr),
                g => return Err(Error::Corrupt(format!("unknown weight group '{g}'"))),
            };
        }
        let encoder = (!encoder.is_empty()).then_some(encoder);
        let model = DiffusionModel::from_parts(&manifest.model, estimator, encoder, manifest.velocity_scale, manifest.train_len)?;
        Ok(Self { model, train: manifest.train, epoch: manifest.epoch, history: manifest.history })
    }

    /// SHA-256 of the serialized archive.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.to_bytes()?)))
    }
}

pub fn save_checkpoint<F: Scalar>(ckpt: &Checkpoint<F>, path: &Path) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes()?)
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<Checkpoint<F>> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{standard_normal, NoiseModel};
    use crate::model::ConditionMode;
    use crate::nn::{EstimatorConfig, SequenceEncoderConfig, SetEncoderConfig};
    use crate::schedule::ScheduleConfig;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ckpt<F: Scalar>(mode: ConditionMode) -> Checkpoint<F> {
        let cfg = ModelConfig {
            mode,
            schedule: ScheduleConfig::linear(30),
            estimator: EstimatorConfig { hidden: 5, layers: 2, time_dim: 4, latent_dim: 0 },
            latent_dim: 3,
            sequence_encoder: SequenceEncoderConfig { hidden: 4, latent_dim: 3 },
            set_encoder: SetEncoderConfig { hidden: 4, blocks: 1, latent_dim: 3, points: 8 },
        };
        let model = DiffusionModel::new(&cfg, 0.05, 12, 1).unwrap();
        let history = vec![EpochRecord { epoch: 0, lr: 6e-3, train_loss: 0.9, val_loss: 0.8 }];
        Checkpoint { model, train: TrainConfig { model: cfg, ..TrainConfig::default() }, epoch: 1, history }
    }

    #[test]
    fn round_trip_preserves_outputs_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        for mode in [ConditionMode::None, ConditionMode::SequenceEncoder, ConditionMode::SetEncoder] {
            let c = ckpt::<f64>(mode);
            let path = dir.path().join("m.ckpt");
            save_checkpoint(&c, &path).unwrap();
            let back: Checkpoint<f64> = load_checkpoint(&path).unwrap();
            assert_eq!(back, c);
            let v: Array3<f64> = standard_normal((2, 7, 3), &mut ChaCha8Rng::seed_from_u64(0));
            let z = (mode != ConditionMode::None).then(|| ndarray::Array2::from_elem((2, 3), 0.3));
            let a = c.model.predict_noise(&v, &[7, 5], 9, z.as_ref()).unwrap();
            let b = back.model.predict_noise(&v, &[7, 5], 9, z.as_ref()).unwrap();
            assert_eq!(a, b);
            assert_eq!(c.fingerprint().unwrap(), back.fingerprint().unwrap());
        }
    }

    #[test]
    fn rejects_damage_and_wrong_precision() {
        let bytes = ckpt::<f64>(ConditionMode::None).to_bytes().unwrap();
        assert!(matches!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 5]), Err(Error::Corrupt(_))));
        assert!(matches!(Checkpoint::<f64>::from_bytes(&bytes[..10]), Err(Error::Corrupt(_))));
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        assert!(matches!(Checkpoint::<f64>::from_bytes(&flipped), Err(Error::Corrupt(_))));
        let mut versioned = bytes.clone();
        versioned[8] = 9;
        assert!(matches!(Checkpoint::<f64>::from_bytes(&versioned), Err(Error::Version { found: 9, .. })));
        assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes), Err(Error::Precision { .. })));
        let single = ckpt::<f32>(ConditionMode::None).to_bytes().unwrap();
        assert!(Checkpoint::<f32>::from_bytes(&single).is_ok());
    }
}
