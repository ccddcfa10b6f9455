//! Binary model files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "SUTRANET" | u32 version
//! u64 n | n bytes run configuration text
//! u32 covariate_dims | u32 scaled_covariate_dims
//! [u8; 32] training-log digest
//! u32 model count, then per model:
//!   f64 low | f64 high | u32 levels | u32 bins | u8 trained
//!   u32 block count, then per block: u64 rows | u64 cols | rows*cols f64
//! ```
//!
//! Network shapes are rebuilt from the configuration and checked against
//! every block header on load.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::binning::BinningSpec;
use crate::config::RunConfig;
use crate::engine::{SutraNetModel, TrainLog};
use crate::error::{Error, Result};
use crate::pipeline::TrainedSystem;
use crate::seqnet::StackParams;

pub const MAGIC: &[u8; 8] = b"SUTRANET";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub system: TrainedSystem,
    pub log_digest: [u8; 32],
}

/// SHA-256 over the canonical text of every training log.
pub fn log_digest(logs: &[TrainLog]) -> [u8; 32] {
    let mut h = Sha256::new();
    for (i, log) in logs.iter().enumerate() {
        h.update(format!("model {i}\n"));
        h.update(log.to_text());
    }
    h.finalize().into()
}

fn block_shapes(stack: &StackParams) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for c in &stack.cells {
        let g = 4 * c.hidden;
        out.extend([(c.input_width, g), (c.hidden, g), (1, g), (1, g)]);
    }
    out.push((stack.projection.outputs, stack.projection.inputs));
    out.push((1, stack.projection.outputs));
    out
}

impl ModelArtifact {
    pub fn new(system: TrainedSystem, logs: &[TrainLog]) -> Self {
        Self {
            system,
            log_digest: log_digest(logs),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let text = self.system.run.to_text();
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.system.covariate_dims as u32).to_le_bytes());
        out.extend_from_slice(&(self.system.scaled_covariate_dims as u32).to_le_bytes());
        out.extend_from_slice(&self.log_digest);
        out.extend_from_slice(&(self.system.models.len() as u32).to_le_bytes());
        for m in &self.system.models {
            out.extend_from_slice(&m.binning.low.to_le_bytes());
            out.extend_from_slice(&m.binning.high.to_le_bytes());
            out.extend_from_slice(&(m.binning.levels as u32).to_le_bytes());
            out.extend_from_slice(&(m.binning.bins as u32).to_le_bytes());
            out.push(m.trained as u8);
            let stacks: Vec<&StackParams> = m.nets.iter().flat_map(|n| &n.levels).collect();
            let count: usize = stacks.iter().map(|s| s.blocks().len()).sum();
            out.extend_from_slice(&(count as u32).to_le_bytes());
            for s in stacks {
                for ((rows, cols), block) in block_shapes(s).into_iter().zip(s.blocks()) {
                    out.extend_from_slice(&(rows as u64).to_le_bytes());
                    out.extend_from_slice(&(cols as u64).to_le_bytes());
                    for v in block {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "format version {version}, this build reads version {FORMAT_VERSION}"
            )));
        }
        let n = r.u64()? as usize;
        let text = std::str::from_utf8(r.take(n)?).map_err(|_| Error::Format("configuration is not UTF-8".into()))?;
        let run = RunConfig::from_text(text)?;
        let covariate_dims = r.u32()? as usize;
        let scaled_covariate_dims = r.u32()? as usize;
        let log_digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let configs = run.model_configs(covariate_dims, scaled_covariate_dims)?;
        let count = r.u32()? as usize;
        if count != configs.len() {
            return Err(Error::Format(format!("{count} models, configuration implies {}", configs.len())));
        }
        let mut models = Vec::with_capacity(count);
        for cfg in configs {
            let (low, high) = (r.f64()?, r.f64()?);
            let (levels, bins) = (r.u32()? as usize, r.u32()? as usize);
            let binning = BinningSpec::new(low, high, levels, bins)?;
            let trained = match r.u8()? {
                0 => false,
                1 => true,
                b => return Err(Error::Format(format!("bad trained flag {b}"))),
            };
            let mut model = SutraNetModel::new(cfg, binning, 0)?;
            model.trained = trained;
            let blocks = r.u32()? as usize;
            let mut seen = 0;
            for stack in model.nets.iter_mut().flat_map(|n| n.levels.iter_mut()) {
                let shapes = block_shapes(stack);
                for ((rows, cols), block) in shapes.into_iter().zip(stack.blocks_mut()) {
                    let (fr, fc) = (r.u64()? as usize, r.u64()? as usize);
                    if (fr, fc) != (rows, cols) {
                        return Err(Error::Format(format!(
                            "block {seen}: shape {fr}x{fc}, configuration implies {rows}x{cols}"
                        )));
                    }
                    for v in block.iter_mut() {
                        *v = r.f64()?;
                    }
                    seen += 1;
                }
            }
            if seen != blocks {
                return Err(Error::Format(format!("{blocks} blocks, configuration implies {seen}")));
            }
            models.push(model);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            system: TrainedSystem {
                run,
                covariate_dims,
                scaled_covariate_dims,
                models,
            },
            log_digest,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn digest_hex(&self) -> String {
        self.log_digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelArtifact {
        let run = RunConfig {
            num_subseries: 2,
            hidden: 3,
            context_len: 4,
            prediction_len: 4,
            levels: 2,
            bins: 3,
            ..RunConfig::default()
        };
        let cfg = run.model_configs(0, 0).unwrap().remove(0);
        let mut model = SutraNetModel::new(cfg, BinningSpec::new(-0.5, 1.5, 2, 3).unwrap(), 7).unwrap();
        model.mark_trained();
        let system = TrainedSystem {
            run,
            covariate_dims: 0,
            scaled_covariate_dims: 0,
            models: vec![model],
        };
        ModelArtifact::new(system, &[TrainLog::default()])
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let a = tiny();
        let bytes = a.to_bytes();
        let b = ModelArtifact::from_bytes(&bytes).unwrap();
        assert_eq!(b, a);
        assert_eq!(b.to_bytes(), bytes);
    }

    #[test]
    fn version_mismatch_is_an_error() {
        let mut bytes = tiny().to_bytes();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        let err = ModelArtifact::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
    }

    #[test]
    fn truncation_and_bad_magic() {
        let bytes = tiny().to_bytes();
        assert!(ModelArtifact::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelArtifact::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(ModelArtifact::from_bytes(&long).is_err());
    }

    #[test]
    fn digest_depends_on_log() {
        let mut log = TrainLog::default();
        let a = log_digest(std::slice::from_ref(&log));
        log.stopped_early = true;
        assert_ne!(a, log_digest(&[log]));
    }
}
