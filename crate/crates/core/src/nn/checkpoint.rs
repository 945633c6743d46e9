//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "TREXMDL1" | version | kind | meta_len | meta[meta_len]
//!            | tensor_count | (rank | dims[rank])*        -- layer table
//!            | f64 LE payload of every tensor in table order
//!            | SHA-256 of all preceding bytes (32 bytes)
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::mlp::MlpClassifier;
use super::vae::VaeModel;
use super::Dense;
use crate::error::{Error, Result};
use crate::tensor::{Activation, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TREXMDL1";
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

const KIND_CLASSIFIER: u32 = 1;
const KIND_VAE: u32 = 2;

#[derive(Clone, Debug, PartialEq)]
pub enum Checkpoint {
    Classifier(MlpClassifier),
    Vae(VaeModel),
}

impl Checkpoint {
    pub fn into_classifier(self) -> Result<MlpClassifier> {
        match self {
            Checkpoint::Classifier(c) => Ok(c),
            Checkpoint::Vae(_) => Err(Error::Config(
                "checkpoint holds a VAE, not a classifier".into(),
            )),
        }
    }

    pub fn into_vae(self) -> Result<VaeModel> {
        match self {
            Checkpoint::Vae(v) => Ok(v),
            Checkpoint::Classifier(_) => Err(Error::Config(
                "checkpoint holds a classifier, not a VAE".into(),
            )),
        }
    }
}

impl From<MlpClassifier> for Checkpoint {
    fn from(c: MlpClassifier) -> Self {
        Checkpoint::Classifier(c)
    }
}

impl From<VaeModel> for Checkpoint {
    fn from(v: VaeModel) -> Self {
        Checkpoint::Vae(v)
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_checkpoint(model: &Checkpoint) -> Vec<u8> {
    let (kind, meta, tensors): (u32, Vec<u32>, Vec<&Tensor>) = match model {
        Checkpoint::Classifier(c) => (
            KIND_CLASSIFIER,
            vec![c.activation().code()],
            c.params().into_iter().map(|p| p.as_ref()).collect(),
        ),
        Checkpoint::Vae(v) => (
            KIND_VAE,
            vec![v.side() as u32],
            v.layers()
                .into_iter()
                .flat_map(|l| [l.weight.as_ref(), l.bias.as_ref()])
                .collect(),
        ),
    };
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    put_u32(&mut buf, kind);
    put_u32(&mut buf, meta.len() as u32);
    for m in meta {
        put_u32(&mut buf, m);
    }
    put_u32(&mut buf, tensors.len() as u32);
    for t in &tensors {
        put_u32(&mut buf, t.shape().len() as u32);
        for &d in t.shape() {
            put_u32(&mut buf, d as u32);
        }
    }
    for t in &tensors {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

/// SHA-256 over everything before the trailing checksum field.
pub fn checkpoint_checksum(bytes: &[u8]) -> Result<[u8; CHECKSUM_LEN]> {
    if bytes.len() < CHECKSUM_LEN {
        return Err(Error::Corrupt("file shorter than its checksum".into()));
    }
    Ok(Sha256::digest(&bytes[..bytes.len() - CHECKSUM_LEN]).into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Corrupt("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 {
        return Err(Error::Corrupt("truncated checkpoint".into()));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Corrupt("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < 12 + CHECKSUM_LEN {
        return Err(Error::Corrupt("truncated checkpoint".into()));
    }
    let body = &bytes[..bytes.len() - CHECKSUM_LEN];
    if checkpoint_checksum(bytes)? != bytes[body.len()..] {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }

    let mut r = Reader {
        bytes: body,
        pos: 12,
    };
    let kind = r.u32()?;
    let meta_len = r.u32()? as usize;
    let meta = (0..meta_len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let count = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rank = r.u32()? as usize;
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        shapes.push(dims);
    }
    let mut tensors = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(shape, data).map_err(|e| Error::Corrupt(e.to_string()))?);
    }
    if r.pos != body.len() {
        return Err(Error::Corrupt("trailing bytes after payload".into()));
    }
    if tensors.len() % 2 != 0 {
        return Err(Error::Corrupt("odd tensor count".into()));
    }
    let mut layers = Vec::with_capacity(tensors.len() / 2);
    let mut it = tensors.into_iter();
    while let (Some(w), Some(b)) = (it.next(), it.next()) {
        layers.push(Dense::new(w, b).map_err(|e| Error::Corrupt(e.to_string()))?);
    }
    match (kind, meta.as_slice()) {
        (KIND_CLASSIFIER, [act]) => {
            let act = Activation::from_code(*act)
                .ok_or_else(|| Error::Corrupt(format!("unknown activation code {act}")))?;
            MlpClassifier::from_layers(layers, act)
                .map(Checkpoint::Classifier)
                .map_err(|e| Error::Corrupt(e.to_string()))
        }
        (KIND_VAE, [side]) => {
            let parts: [Dense; 5] = layers
                .try_into()
                .map_err(|_| Error::Corrupt("VAE needs five layers".into()))?;
            VaeModel::from_parts(*side as usize, parts)
                .map(Checkpoint::Vae)
                .map_err(|e| Error::Corrupt(e.to_string()))
        }
        _ => Err(Error::Corrupt(format!("unknown model kind {kind}"))),
    }
}

pub fn save_model(path: impl AsRef<Path>, model: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
