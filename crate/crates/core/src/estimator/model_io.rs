//! `CINM1` model files: magic, layout hash, JSON header, f32 tensors.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::dae::{DaeConfig, DaeModel, Encoding};
use crate::error::{Error, Result};
use crate::joiner::JoinLayout;

const MAGIC: &[u8; 5] = b"CINM1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: DaeConfig,
    layout: JoinLayout,
    relation_size: u128,
    encodings: Vec<Encoding>,
    tensors: usize,
}

pub fn save_model(path: &Path, model: &DaeModel<f32>) -> Result<()> {
    let tensors = model.tensors();
    let header = serde_json::to_vec(&Header {
        config: model.config.clone(),
        layout: model.layout.clone(),
        relation_size: model.relation_size,
        encodings: model.encodings.clone(),
        tensors: tensors.len(),
    })?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&model.layout.hash().to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for t in tensors {
        buf.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
        buf.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
        for v in t.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::ModelFormat("file is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Loads a model; with `expected` given, its layout hash must match the file's.
pub fn load_model(path: &Path, expected: Option<&JoinLayout>) -> Result<DaeModel<f32>> {
    let bytes = std::fs::read(path)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(5)? != MAGIC {
        return Err(Error::ModelFormat(format!("{}: bad magic", path.display())));
    }
    let declared = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
    if let Some(layout) = expected {
        let found = layout.hash();
        if found != declared {
            return Err(Error::LayoutMismatch { declared, found });
        }
    }
    let hlen = cur.u32()? as usize;
    let header: Header = serde_json::from_slice(cur.take(hlen)?)
        .map_err(|e| Error::ModelFormat(format!("header: {e}")))?;
    if header.layout.hash() != declared {
        return Err(Error::LayoutMismatch {
            declared,
            found: header.layout.hash(),
        });
    }
    let mut tensors = Vec::with_capacity(header.tensors);
    for _ in 0..header.tensors {
        let rows = cur.u32()? as usize;
        let cols = cur.u32()? as usize;
        let data: Vec<f32> = cur
            .take(rows * cols * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        tensors.push(Array2::from_shape_vec((rows, cols), data).expect("shape matches length"));
    }
    if cur.pos != bytes.len() {
        return Err(Error::ModelFormat("trailing bytes after tensors".into()));
    }

    let mut model = DaeModel::<f32>::new(
        &header.layout,
        header.relation_size,
        &header.config,
        &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
    )?;
    if model.encodings != header.encodings {
        return Err(Error::ModelFormat("encoder table disagrees with the stored config".into()));
    }
    let slots = model.tensors_mut();
    if slots.len() != tensors.len() {
        return Err(Error::ModelFormat(format!(
            "expected {} tensors, found {}",
            slots.len(),
            tensors.len()
        )));
    }
    for (slot, t) in slots.into_iter().zip(tensors) {
        if slot.raw_dim() != t.raw_dim() {
            return Err(Error::ModelFormat(format!(
                "tensor shape {:?} does not match expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    Ok(model)
}
