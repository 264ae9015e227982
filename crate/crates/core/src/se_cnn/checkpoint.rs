use std::path::Path;

use super::{Layout, ModelConfig, ModelError, SeCnn};
use crate::wfdb_io::{io_err, write_atomic, Reader, WfdbError, Writer};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"APNCKPT\0";
const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CheckpointMeta {
    /// 1-based epoch the parameters were taken after (0 = initialisation).
    pub epoch: u32,
    pub val_f1_sa: f64,
    pub train_loss: f64,
    pub seed: u64,
    pub n_train: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SeCnn,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(model: SeCnn, meta: CheckpointMeta) -> Self {
        Self { model, meta }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
        let c = &self.model.config;
        for v in [c.in_channels, c.n_blocks, c.width, c.cardinality, c.se_reduction, c.n_classes] {
            w.u32(v as u32);
        }
        w.u32(self.meta.epoch);
        w.f64(self.meta.val_f1_sa);
        w.f64(self.meta.train_loss);
        w.u64(self.meta.seed);
        w.u64(self.meta.n_train);
        for block in [&self.model.params, &self.model.bn_mean, &self.model.bn_var] {
            w.u64(block.len() as u64);
            for &v in block.iter() {
                w.f32(v);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader::open(bytes, CHECKPOINT_MAGIC, "checkpoint", CHECKPOINT_VERSION)?;
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let config = ModelConfig {
            in_channels: dims[0],
            n_blocks: dims[1],
            width: dims[2],
            cardinality: dims[3],
            se_reduction: dims[4],
            n_classes: dims[5],
        };
        config.validate()?;
        let meta = CheckpointMeta {
            epoch: r.u32()?,
            val_f1_sa: r.f64()?,
            train_loss: r.f64()?,
            seed: r.u64()?,
            n_train: r.u64()?,
        };
        let mut read_block = |expected: usize| -> Result<Vec<f32>, ModelError> {
            let n = r.u64()? as usize;
            if n != expected {
                return Err(WfdbError::Corrupt(format!("block of {n} values, config implies {expected}")).into());
            }
            (0..n).map(|_| r.f32().map_err(ModelError::from)).collect()
        };
        let params = read_block(Layout::new(&config).total)?;
        let bn_mean = read_block(config.n_bn_channels())?;
        let bn_var = read_block(config.n_bn_channels())?;
        r.done()?;
        Ok(Self {
            model: SeCnn {
                config,
                params,
                bn_mean,
                bn_var,
            },
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(write_atomic(path, &self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(io_err(path)).map_err(ModelError::from)?;
        Self::from_bytes(&bytes)
    }
}
