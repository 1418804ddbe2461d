//! Binary tensor container used for model and tagger checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "HMCKPT\0\0"
//! version  u32      currently 1
//! kind     u32 len + UTF-8   e.g. "model", "tagger"
//! meta     u32 len + UTF-8 JSON   (the ModelConfig, tagger config, ...)
//! header   u32 len + UTF-8        provenance JSON, may be empty
//! count    u32
//! count × { name: u32 len + UTF-8, rows: u32, cols: u32, data: rows·cols f64 }
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a save/load round trip is
//! bit-exact. Tensor names follow the model layout, e.g.
//! `encoder.0.attn.q.weight`, `decoder.3.cross_attn.o.bias`, `output.bias`;
//! tagger checkpoints add `tagger.hidden.weight`, `tagger.hidden.bias`,
//! `tagger.out.weight`, `tagger.out.bias`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

const MAGIC: &[u8; 8] = b"HMCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: String,
    /// Free-form provenance, written by the pipeline.
    pub header: String,
    pub tensors: Vec<NamedTensor>,
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(FORMAT_VERSION.to_le_bytes());
        write_str(&mut out, &self.kind);
        write_str(&mut out, &self.meta);
        write_str(&mut out, &self.header);
        out.extend((self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            write_str(&mut out, &t.name);
            out.extend((t.rows as u32).to_le_bytes());
            out.extend((t.cols as u32).to_le_bytes());
            for v in &t.data {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = r.string()?;
        let meta = r.string()?;
        let header = r.string()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.take(rows * cols * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(NamedTensor { name, rows, cols, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Container {
            kind,
            meta,
            header,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

pub(crate) fn model_tensors(params: &ModelParams) -> Vec<NamedTensor> {
    params
        .layout()
        .named()
        .iter()
        .map(|(name, slot)| NamedTensor {
            name: name.clone(),
            rows: slot.rows,
            cols: slot.cols,
            data: params.slice(*slot).to_vec(),
        })
        .collect()
}

/// Rebuilds model parameters from named tensors, checking every name and
/// shape against the layout implied by `config`.
pub(crate) fn model_from_tensors(config: ModelConfig, tensors: &[NamedTensor]) -> Result<ModelParams> {
    let layout = crate::model::Layout::new(&config);
    if tensors.len() < layout.named().len() {
        return Err(Error::Checkpoint(format!(
            "{} tensors present, {} required",
            tensors.len(),
            layout.named().len()
        )));
    }
    let mut data = Vec::with_capacity(layout.len());
    for ((name, slot), t) in layout.named().iter().zip(tensors) {
        if &t.name != name || t.rows != slot.rows || t.cols != slot.cols {
            return Err(Error::Checkpoint(format!(
                "expected {name} {}x{}, found {} {}x{}",
                slot.rows, slot.cols, t.name, t.rows, t.cols
            )));
        }
        data.extend(&t.data);
    }
    ModelParams::from_parts(config, data)
}

impl ModelParams {
    pub fn to_container(&self) -> Container {
        Container {
            kind: "model".into(),
            meta: serde_json::to_string(self.config()).expect("config serializes"),
            header: String::new(),
            tensors: model_tensors(self),
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != "model" {
            return Err(Error::Checkpoint(format!(
                "expected a model checkpoint, found {}",
                c.kind
            )));
        }
        let config: ModelConfig = serde_json::from_str(&c.meta)?;
        if c.tensors.len() != crate::model::Layout::new(&config).named().len() {
            return Err(Error::Checkpoint("tensor count does not match config".into()));
        }
        model_from_tensors(config, &c.tensors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelParams {
        let cfg = ModelConfig {
            vocab_size: 10,
            d_model: 8,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 2,
            d_ff: 12,
            max_positions: 16,
        };
        ModelParams::init(cfg, 11).unwrap()
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let p = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        p.save(&path).unwrap();
        let q = ModelParams::load(&path).unwrap();
        assert_eq!(p, q);
        assert!(p.data().iter().zip(q.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rejects_corruption() {
        let bytes = small().to_container().to_bytes();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Container::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Container::from_bytes(&extra).is_err());
    }

    #[test]
    fn rejects_wrong_kind_and_shape() {
        let mut c = small().to_container();
        c.kind = "tagger".into();
        assert!(ModelParams::from_container(&c).is_err());
        let mut c = small().to_container();
        c.tensors[1].cols += 1;
        assert!(ModelParams::from_container(&c).is_err());
    }
}
