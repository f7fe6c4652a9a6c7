//! Self-describing binary checkpoint container.
//!
//! Layout: an 8-byte magic, a u32 format version, a length-prefixed
//! plain-text config block, then a named tensor table (name, rank,
//! dims, raw little-endian f64 payload). Model parameters, feature
//! standardization statistics, and optimizer moments all live in the
//! tensor table under reserved name prefixes. The encoding has no
//! timestamps or padding, so save -> load -> save is byte-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use autodiff::Tensor;

use crate::behavior::{Standardizer, BEHAVIOR_DIM};
use crate::config::{model_config_from_kv, model_config_to_kv};
use crate::error::{MftrajError, Result};
use crate::model::MfTrajModel;

const MAGIC: &[u8; 8] = b"MFTRAJCK";
const VERSION: u32 = 1;

pub const STD_MEAN: &str = "standardizer.mean";
pub const STD_STD: &str = "standardizer.std";
pub const ADAM_STEP: &str = "adam.step";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let cfg = self.config_text.as_bytes();
        w.write_all(&(cfg.len() as u64).to_le_bytes())?;
        w.write_all(cfg)?;
        w.write_all(&(self.tensors.len() as u64).to_le_bytes())?;
        for (name, tensor) in &self.tensors {
            let nb = name.as_bytes();
            w.write_all(&(nb.len() as u64).to_le_bytes())?;
            w.write_all(nb)?;
            w.write_all(&[tensor.ndim() as u8])?;
            for &d in tensor.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let mut r = BufReader::new(File::open(path.as_ref())?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(MftrajError::Checkpoint(format!(
                "{} is not a checkpoint file",
                path.as_ref().display()
            )));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(MftrajError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                version
            )));
        }
        let cfg_len = read_u64(&mut r)? as usize;
        let mut cfg = vec![0u8; cfg_len];
        r.read_exact(&mut cfg)?;
        let config_text = String::from_utf8(cfg)
            .map_err(|e| MftrajError::Checkpoint(format!("config block not utf-8: {}", e)))?;

        let count = read_u64(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u64(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|e| MftrajError::Checkpoint(format!("tensor name not utf-8: {}", e)))?;
            let mut ndim = [0u8; 1];
            r.read_exact(&mut ndim)?;
            let shape: Vec<usize> = (0..ndim[0])
                .map(|_| read_u64(&mut r).map(|v| v as usize))
                .collect::<Result<_>>()?;
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            let tensor = Tensor::from_vec(shape, data)
                .map_err(|e| MftrajError::Checkpoint(format!("tensor '{}': {}", name, e)))?;
            tensors.push((name, tensor));
        }
        Ok(Checkpoint { config_text, tensors })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Optimizer moments carried alongside the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: usize,
}

/// Packs a model (and optionally its optimizer state) into a container.
pub fn checkpoint_from_model(model: &MfTrajModel, opt: Option<&OptimizerState>) -> Checkpoint {
    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    for (_, p) in model.params.iter() {
        tensors.push((p.name.clone(), p.value.clone()));
    }
    tensors.push((
        STD_MEAN.into(),
        Tensor::from_vec(vec![BEHAVIOR_DIM], model.standardizer.mean.to_vec()).expect("mean"),
    ));
    tensors.push((
        STD_STD.into(),
        Tensor::from_vec(vec![BEHAVIOR_DIM], model.standardizer.std.to_vec()).expect("std"),
    ));
    if let Some(opt) = opt {
        tensors.push((ADAM_STEP.into(), Tensor::scalar(opt.step as f64)));
        for ((_, p), (m, v)) in model.params.iter().zip(opt.m.iter().zip(&opt.v)) {
            let shape = p.value.shape().to_vec();
            tensors.push((
                format!("adam.m.{}", p.name),
                Tensor::from_vec(shape.clone(), m.clone()).expect("moment shape"),
            ));
            tensors.push((
                format!("adam.v.{}", p.name),
                Tensor::from_vec(shape, v.clone()).expect("moment shape"),
            ));
        }
    }
    Checkpoint {
        config_text: model_config_to_kv(&model.config),
        tensors,
    }
}

/// Rebuilds a model from a container: config, parameters, and
/// standardization statistics.
pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<MfTrajModel> {
    let config = model_config_from_kv(&ck.config_text)?;
    let mut model = MfTrajModel::new(config)?;
    let ids: Vec<_> = model.params.iter().map(|(id, p)| (id, p.name.clone(), p.value.shape().to_vec())).collect();
    for (id, name, shape) in ids {
        let stored = ck.get(&name).ok_or_else(|| {
            MftrajError::Checkpoint(format!("checkpoint is missing parameter '{}'", name))
        })?;
        if stored.shape() != shape.as_slice() {
            return Err(MftrajError::Checkpoint(format!(
                "parameter '{}' has shape {:?}, expected {:?}",
                name,
                stored.shape(),
                shape
            )));
        }
        *model.params.value_mut(id) = stored.clone();
    }
    let mean = ck
        .get(STD_MEAN)
        .ok_or_else(|| MftrajError::Checkpoint("missing standardizer mean".into()))?;
    let std = ck
        .get(STD_STD)
        .ok_or_else(|| MftrajError::Checkpoint("missing standardizer std".into()))?;
    let mut standardizer = Standardizer::identity();
    standardizer.mean.copy_from_slice(mean.data());
    standardizer.std.copy_from_slice(std.data());
    model.standardizer = standardizer;
    Ok(model)
}

/// Extracts optimizer moments, when the container carries them.
pub fn optimizer_from_checkpoint(ck: &Checkpoint, model: &MfTrajModel) -> Option<OptimizerState> {
    let step = ck.get(ADAM_STEP)?.item() as usize;
    let mut m = Vec::new();
    let mut v = Vec::new();
    for (_, p) in model.params.iter() {
        m.push(ck.get(&format!("adam.m.{}", p.name))?.data().to_vec());
        v.push(ck.get(&format!("adam.v.{}", p.name))?.data().to_vec());
    }
    Some(OptimizerState { m, v, step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny_model() -> MfTrajModel {
        MfTrajModel::new(ModelConfig {
            history_frames: 5,
            future_frames: 3,
            hidden_dim: 8,
            latent_dim: 4,
            attention_heads: 2,
            proj_dim: 2,
            gn_groups: 4,
            n_max: 8,
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let model = tiny_model();
        let ck = checkpoint_from_model(&model, None);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        ck.save(&p1).unwrap();
        let loaded = Checkpoint::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(ck, loaded);
    }

    #[test]
    fn round_trip_preserves_model_exactly() {
        let mut model = tiny_model();
        model.standardizer.mean[0] = 1.5;
        model.standardizer.std[3] = 2.25;
        let ck = checkpoint_from_model(&model, None);
        let restored = model_from_checkpoint(&ck).unwrap();
        assert_eq!(restored.config, model.config);
        assert_eq!(restored.standardizer, model.standardizer);
        for ((_, a), (_, b)) in model.params.iter().zip(restored.params.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn optimizer_state_round_trips() {
        let model = tiny_model();
        let opt = OptimizerState {
            m: model.params.iter().map(|(_, p)| vec![0.25; p.value.numel()]).collect(),
            v: model.params.iter().map(|(_, p)| vec![0.5; p.value.numel()]).collect(),
            step: 42,
        };
        let ck = checkpoint_from_model(&model, Some(&opt));
        let restored_model = model_from_checkpoint(&ck).unwrap();
        let restored = optimizer_from_checkpoint(&ck, &restored_model).unwrap();
        assert_eq!(restored, opt);
    }

    #[test]
    fn wrong_magic_is_checkpoint_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.ckpt");
        std::fs::write(&p, b"NOTMAGIC????").unwrap();
        assert!(matches!(
            Checkpoint::load(&p),
            Err(MftrajError::Checkpoint(_))
        ));
    }
}
