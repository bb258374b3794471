//! Versioned binary checkpoints.
//!
//! ```text
//! offset  field
//! 0       magic "QSHD"
//! 4       u16 LE format version (1)
//! 6       u8 kind: 1 = qvc, 2 = autoencoder, 3 = adversarial batch
//! 7       u32 LE metadata length M, then M bytes of a JSON string→string map
//! …       u32 LE tensor count T, then T entries of
//!           u16 LE name length, name (UTF-8), u8 rank R, R × u32 LE dims
//! …       every tensor's elements as f64 LE, in table order
//! end-4   u32 LE CRC-32 (IEEE) of all preceding bytes
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::attacks::{AdversarialBatch, AttackConfig};
use crate::cednet::{AeArch, AeParams, PARAM_NAMES};
use crate::dataio::{ImageSet, LabelSet};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::qvc::{CircuitLayout, QvcParams};

pub const MAGIC: &[u8; 4] = b"QSHD";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Qvc = 1,
    Autoencoder = 2,
    AdversarialBatch = 3,
}

impl CheckpointKind {
    fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            1 => CheckpointKind::Qvc,
            2 => CheckpointKind::Autoencoder,
            3 => CheckpointKind::AdversarialBatch,
            other => return Err(Error::Malformed(format!("unknown checkpoint kind {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            CheckpointKind::Qvc => "qvc",
            CheckpointKind::Autoencoder => "autoencoder",
            CheckpointKind::AdversarialBatch => "adversarial_batch",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(kind: CheckpointKind) -> Self {
        Checkpoint {
            kind,
            metadata: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn with_tensor(mut self, name: &str, tensor: Tensor) -> Self {
        self.tensors.push((name.to_string(), tensor));
        self
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Malformed(format!("missing metadata key {key:?}")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Malformed(format!("missing tensor {name:?}")))
    }

    fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Malformed(format!(
                "expected a {} checkpoint, found {}",
                kind.name(),
                self.kind.name()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind as u8);
        let meta = serde_json::to_vec(&self.metadata)?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let rank = u8::try_from(t.shape().len())
                .map_err(|_| Error::ShapeMismatch(format!("{name}: rank too large")))?;
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| Error::ShapeMismatch(format!("{name}: dim too large")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::BadMagic {
                expected: u32::from_be_bytes(*MAGIC),
                found: u32::from_be_bytes(bytes[..4].try_into().unwrap()),
            });
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::BadVersion {
                found: version,
                supported: VERSION,
            });
        }
        let kind = CheckpointKind::from_byte(r.take(1)?[0])?;
        let meta_len = r.u32()? as usize;
        let metadata: BTreeMap<String, String> = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            table.push((name, dims));
        }
        let mut tensors = Vec::with_capacity(table.len());
        for (name, dims) in table {
            let n: usize = dims.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Malformed("tensor too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push((name, Tensor::new(dims, data)?));
        }
        let body_end = r.pos;
        let stored = r.u32()?;
        if r.pos != bytes.len() {
            return Err(Error::TrailingBytes {
                extra: bytes.len() - r.pos,
            });
        }
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        Ok(Checkpoint {
            kind,
            metadata,
            tensors,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::TruncatedPayload {
            expected: self.pos.saturating_add(n),
            found: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Writes atomically: temp file in the same directory, then rename.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{file_name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn qvc_to_checkpoint(params: &QvcParams) -> Result<Checkpoint> {
    let l = params.layout();
    let angles = Tensor::new(
        vec![l.n_layers, l.n_qubits, l.rotation.angles_per_qubit()],
        params.angles().to_vec(),
    )?;
    Ok(Checkpoint::new(CheckpointKind::Qvc)
        .with_meta("tag", params.tag())
        .with_meta("layout", serde_json::to_string(l)?)
        .with_tensor("angles", angles))
}

/// Restores a classifier; `expected_layers` rejects a checkpoint of the
/// wrong depth.
pub fn qvc_from_checkpoint(ckpt: &Checkpoint, expected_layers: Option<usize>) -> Result<QvcParams> {
    ckpt.expect_kind(CheckpointKind::Qvc)?;
    let layout: CircuitLayout = serde_json::from_str(ckpt.meta("layout")?)?;
    if let Some(want) = expected_layers {
        if want != layout.n_layers {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint holds a {}-layer classifier, {want} layers requested",
                layout.n_layers
            )));
        }
    }
    let angles = ckpt.tensor("angles")?;
    let want = [layout.n_layers, layout.n_qubits, layout.rotation.angles_per_qubit()];
    if angles.shape() != want {
        return Err(Error::ShapeMismatch(format!(
            "angles {:?} disagree with layout {want:?}",
            angles.shape()
        )));
    }
    QvcParams::from_angles(layout, angles.data().to_vec(), ckpt.meta("tag")?)
}

pub fn ae_to_checkpoint(params: &AeParams, tag: &str) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new(CheckpointKind::Autoencoder)
        .with_meta("tag", tag)
        .with_meta("arch", serde_json::to_string(params.arch())?);
    for (name, t) in PARAM_NAMES.iter().zip(params.tensors()) {
        ck = ck.with_tensor(name, t.clone());
    }
    Ok(ck)
}

pub fn ae_from_checkpoint(ckpt: &Checkpoint) -> Result<AeParams> {
    ckpt.expect_kind(CheckpointKind::Autoencoder)?;
    let arch: AeArch = serde_json::from_str(ckpt.meta("arch")?)?;
    let tensors = PARAM_NAMES
        .iter()
        .map(|n| ckpt.tensor(n).cloned())
        .collect::<Result<Vec<_>>>()?;
    AeParams::from_tensors(arch, tensors)
}

pub fn adversarial_to_checkpoint(batch: &AdversarialBatch) -> Result<Checkpoint> {
    let labels = Tensor::new(
        vec![batch.labels.len()],
        batch.labels.labels.iter().map(|&l| f64::from(l)).collect(),
    )?;
    Ok(Checkpoint::new(CheckpointKind::AdversarialBatch)
        .with_meta("attack", serde_json::to_string(&batch.config)?)
        .with_meta("model_tag", &batch.model_tag)
        .with_tensor("originals", batch.originals.pixels().clone())
        .with_tensor("adversarials", batch.adversarials.pixels().clone())
        .with_tensor("labels", labels))
}

pub fn adversarial_from_checkpoint(ckpt: &Checkpoint) -> Result<AdversarialBatch> {
    ckpt.expect_kind(CheckpointKind::AdversarialBatch)?;
    let config: AttackConfig = serde_json::from_str(ckpt.meta("attack")?)?;
    let originals = ImageSet::from_tensor(ckpt.tensor("originals")?.clone())?;
    let adversarials = ImageSet::from_tensor(ckpt.tensor("adversarials")?.clone())?;
    let labels = ckpt
        .tensor("labels")?
        .data()
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && (0.0..10.0).contains(&v) {
                Ok(v as u8)
            } else {
                Err(Error::Malformed(format!("label value {v}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if originals.pixels().shape() != adversarials.pixels().shape() || labels.len() != originals.len() {
        return Err(Error::ShapeMismatch("adversarial batch parts disagree".into()));
    }
    Ok(AdversarialBatch {
        originals,
        adversarials,
        labels: LabelSet { labels },
        config,
        model_tag: ckpt.meta("model_tag")?.to_string(),
    })
}
