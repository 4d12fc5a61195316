//! `TST1` checkpoint files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic "TST1" | u32 version
//! str variant | str config digest (hex SHA-256) | u64 epoch | str model config text
//! u64 optimizer step (0 = no optimizer section)
//! u32 entry count, then per entry:
//!     str name | u8 kind | u32 rank | rank × u32 dims | u64 offset | u64 len
//! f32 payload; offsets and lengths count f32 values from its start
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8. Entry kinds: 0 parameter,
//! 1 BN running mean, 2 BN running variance, 3 Adam first moment, 4 Adam
//! second moment.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Adam, AdamConfig, Moments};
use crate::error::{config_err, Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::{named_params, named_stats};

const MAGIC: &[u8; 4] = b"TST1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[repr(u8)]
pub enum EntryKind {
    Param = 0,
    RunningMean = 1,
    RunningVar = 2,
    AdamM = 3,
    AdamV = 4,
}

impl EntryKind {
    fn from_u8(b: u8, offset: usize) -> Result<Self> {
        Ok(match b {
            0 => Self::Param,
            1 => Self::RunningMean,
            2 => Self::RunningVar,
            3 => Self::AdamM,
            4 => Self::AdamV,
            _ => return Err(format_err(offset, format!("unknown entry kind {b}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub kind: EntryKind,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub variant: String,
    pub digest: String,
    /// Completed training epochs.
    pub epoch: u64,
    pub config_text: String,
    /// Adam updates applied; 0 when no optimizer state is stored.
    pub optimizer_step: u64,
    pub entries: Vec<CheckpointEntry>,
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

impl Checkpoint {
    pub fn capture(model: &Model<f32>, epoch: u64, optimizer: Option<&Adam<f32>>) -> Self {
        let mut entries = Vec::new();
        for (name, p) in named_params(model) {
            let t = p.get();
            entries.push(CheckpointEntry {
                name,
                kind: EntryKind::Param,
                shape: t.shape().to_vec(),
                data: t.to_vec(),
            });
        }
        for (name, s) in named_stats(model) {
            let s = s.lock().expect("batch-norm state lock poisoned");
            for (kind, v) in [(EntryKind::RunningMean, &s.mean), (EntryKind::RunningVar, &s.var)] {
                entries.push(CheckpointEntry { name: name.clone(), kind, shape: vec![v.len()], data: v.clone() });
            }
        }
        let mut optimizer_step = 0;
        if let Some(opt) = optimizer.filter(|o| o.step > 0) {
            optimizer_step = opt.step;
            for (name, m) in &opt.slots {
                for (kind, v) in [(EntryKind::AdamM, &m.m), (EntryKind::AdamV, &m.v)] {
                    entries.push(CheckpointEntry { name: name.clone(), kind, shape: vec![v.len()], data: v.clone() });
                }
            }
        }
        Self {
            variant: model.config.variant.tag().to_string(),
            digest: model.config.digest(),
            epoch,
            config_text: model.config.to_kv_text(),
            optimizer_step,
            entries,
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig::from_kv_text(&self.config_text)?;
        if cfg.digest() != self.digest {
            return Err(config_err("checkpoint digest does not match its stored configuration"));
        }
        Ok(cfg)
    }

    /// Builds a model from the stored configuration and loads every tensor.
    pub fn build_model(&self) -> Result<Model<f32>> {
        let model = Model::new(&self.model_config()?, 0)?;
        self.restore_into(&model)?;
        Ok(model)
    }

    /// Overwrites the parameters and BN statistics of `model`, which must
    /// have been built from the same configuration. Every registry entry must
    /// be present exactly once and nothing else may be.
    pub fn restore_into(&self, model: &Model<f32>) -> Result<()> {
        if model.config.digest() != self.digest {
            return Err(config_err(format!(
                "checkpoint was written for configuration {} but the model has {}",
                &self.digest[..12.min(self.digest.len())],
                &model.config.digest()[..12]
            )));
        }
        let mut table = self.table(&[EntryKind::Param, EntryKind::RunningMean, EntryKind::RunningVar])?;
        for (name, p) in named_params(model) {
            let e = take(&mut table, &name, EntryKind::Param)?;
            if e.shape != p.shape() {
                return Err(config_err(format!("`{name}` has shape {:?}, model expects {:?}", e.shape, p.shape())));
            }
            p.set(e.data.clone())?;
        }
        for (name, s) in named_stats(model) {
            let mean = take(&mut table, &name, EntryKind::RunningMean)?;
            let var = take(&mut table, &name, EntryKind::RunningVar)?;
            let mut s = s.lock().expect("batch-norm state lock poisoned");
            if mean.data.len() != s.mean.len() || var.data.len() != s.var.len() {
                return Err(config_err(format!("`{name}` statistics have the wrong channel count")));
            }
            s.mean.clone_from(&mean.data);
            s.var.clone_from(&var.data);
        }
        if let Some(((name, kind), _)) = table.into_iter().next() {
            return Err(config_err(format!("checkpoint entry `{name}` ({kind:?}) is not in the model")));
        }
        Ok(())
    }

    /// Optimizer state for `model`, or `None` when the checkpoint has none.
    pub fn optimizer(&self, model: &Model<f32>, config: AdamConfig) -> Result<Option<Adam<f32>>> {
        if self.optimizer_step == 0 {
            return Ok(None);
        }
        let mut table = self.table(&[EntryKind::AdamM, EntryKind::AdamV])?;
        let mut opt = Adam::new(model, config);
        opt.step = self.optimizer_step;
        for (name, slot) in &mut opt.slots {
            let m = take(&mut table, name, EntryKind::AdamM)?;
            let v = take(&mut table, name, EntryKind::AdamV)?;
            if m.data.len() != slot.m.len() || v.data.len() != slot.v.len() {
                return Err(config_err(format!("optimizer moments for `{name}` have the wrong length")));
            }
            *slot = Moments { m: m.data.clone(), v: v.data.clone() };
        }
        if let Some(((name, _), _)) = table.into_iter().next() {
            return Err(config_err(format!("optimizer entry `{name}` is not in the model")));
        }
        Ok(Some(opt))
    }

    fn table(&self, kinds: &[EntryKind]) -> Result<BTreeMap<(String, EntryKind), &CheckpointEntry>> {
        let mut table = BTreeMap::new();
        for e in self.entries.iter().filter(|e| kinds.contains(&e.kind)) {
            if table.insert((e.name.clone(), e.kind), e).is_some() {
                return Err(config_err(format!("checkpoint lists `{}` ({:?}) twice", e.name, e.kind)));
            }
        }
        Ok(table)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for s in [&self.variant, &self.digest] {
            put_str(&mut out, s);
        }
        out.extend_from_slice(&self.epoch.to_le_bytes());
        put_str(&mut out, &self.config_text);
        out.extend_from_slice(&self.optimizer_step.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for e in &self.entries {
            put_str(&mut out, &e.name);
            out.push(e.kind as u8);
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(e.data.len() as u64).to_le_bytes());
            offset += e.data.len() as u64;
        }
        for e in &self.entries {
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(format_err(0, "bad magic, expected TST1"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format_err(4, format!("unsupported checkpoint version {version}")));
        }
        let variant = r.string()?;
        let digest = r.string()?;
        let epoch = r.u64()?;
        let config_text = r.string()?;
        let optimizer_step = r.u64()?;
        let count = r.u32()? as usize;
        let mut directory = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let kind_at = r.pos;
            let kind = EntryKind::from_u8(r.take(1)?[0], kind_at)?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let at = r.pos;
            let (offset, len) = (r.u64()? as usize, r.u64()? as usize);
            if shape.iter().product::<usize>() != len {
                return Err(format_err(at, format!("`{name}` declares shape {shape:?} but {len} values")));
            }
            directory.push((name, kind, shape, offset, len, at));
        }
        let payload = r.pos;
        let total: usize = directory.iter().map(|d| d.4).sum();
        let expected = payload + 4 * total;
        if bytes.len() != expected {
            return Err(format_err(
                bytes.len().min(expected),
                format!("payload length mismatch: expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        let mut entries = Vec::with_capacity(directory.len());
        for (name, kind, shape, offset, len, at) in directory {
            if offset.checked_add(len).is_none_or(|end| end > total) {
                return Err(format_err(at, format!("`{name}` points outside the payload")));
            }
            let start = payload + 4 * offset;
            let data = bytes[start..start + 4 * len]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            entries.push(CheckpointEntry { name, kind, shape, data });
        }
        Ok(Self { variant, digest, epoch, config_text, optimizer_step, entries })
    }

    /// Writes through a temporary file and a rename, so an existing
    /// checkpoint at `path` survives a failed write.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn take<'a>(
    table: &mut BTreeMap<(String, EntryKind), &'a CheckpointEntry>,
    name: &str,
    kind: EntryKind,
) -> Result<&'a CheckpointEntry> {
    table
        .remove(&(name.to_string(), kind))
        .ok_or_else(|| config_err(format!("checkpoint is missing `{name}` ({kind:?})")))
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            format_err(
                self.pos,
                format!("truncated header: expected {} bytes, found {}", self.pos.saturating_add(n), self.bytes.len()),
            )
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let at = self.pos;
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| format_err(at, "string is not UTF-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AttentionMode, ModelConfig};
    use crate::tensor::{NormMode, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trained_ish() -> (Model<f32>, Adam<f32>) {
        let m = Model::<f32>::new(&ModelConfig::tst_s(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::rand_uniform(&[2, 3, 64, 64], 0.0, 1.0, &mut rng).unwrap();
        let mut opt = Adam::new(&m, AdamConfig::default());
        m.forward(&x, NormMode::Train).unwrap().mean().backward().unwrap();
        opt.step(&m, 1e-3).unwrap();
        (m, opt)
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let (m, opt) = trained_ish();
        let ck = Checkpoint::capture(&m, 7, Some(&opt));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.tst");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let m2 = back.build_model().unwrap();
        let x = Tensor::rand_uniform(&[1, 3, 64, 96], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (a, b) = (m.forward(&x, NormMode::Eval).unwrap(), m2.forward(&x, NormMode::Eval).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_eq!(back.optimizer(&m2, AdamConfig::default()).unwrap(), Some(opt));
        assert_eq!(back.epoch, 7);
    }

    #[test]
    fn every_registry_tensor_appears_once() {
        let (m, _) = trained_ish();
        let ck = Checkpoint::capture(&m, 0, None);
        let params = ck.entries.iter().filter(|e| e.kind == EntryKind::Param).count();
        assert_eq!(params, named_params(&m).len());
        assert_eq!(ck.optimizer_step, 0);
        let mut dup = ck.clone();
        dup.entries.push(dup.entries[0].clone());
        assert!(dup.restore_into(&m).is_err());
        let mut missing = ck.clone();
        missing.entries.remove(3);
        assert!(missing.restore_into(&m).unwrap_err().to_string().contains("missing"));
    }

    #[test]
    fn mismatched_config_is_refused() {
        let (m, _) = trained_ish();
        let ck = Checkpoint::capture(&m, 0, None);
        let other = Model::<f32>::new(&ModelConfig::tst_s().with_attention(AttentionMode::SelfAttention), 0).unwrap();
        assert!(ck.restore_into(&other).unwrap_err().to_string().contains("configuration"));
        let mut forged = ck.clone();
        forged.config_text = ModelConfig::tst().to_kv_text();
        assert!(forged.build_model().is_err());
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let (m, _) = trained_ish();
        let bytes = Checkpoint::capture(&m, 0, None).to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..30]), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v2), Err(Error::Format { offset: 4, .. })));
    }
}
