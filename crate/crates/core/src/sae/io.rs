// SPDX-License-Identifier: MIT OR Apache-2.0

//! `SAEW` model file: 4-byte magic, u32 version, u32 d_model, u32 d_sae,
//! u32 k, then little-endian f32 arrays W_enc (d_sae x d_model), b_enc,
//! W_dec (d_model x d_sae), b_dec.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::SaeModel;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"SAEW";
pub const MODEL_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn save_model(model: &SaeModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if !model.is_finite() {
        return Err(Error::NonFinite("model parameters".into()));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut put = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));
    put(MODEL_MAGIC)?;
    for v in [MODEL_VERSION, model.d_model() as u32, model.d_sae() as u32, model.k() as u32] {
        put(&v.to_le_bytes())?;
    }
    for arr in [model.w_enc(), model.b_enc(), &model.w_dec(), model.b_dec()] {
        for v in arr {
            put(&v.to_le_bytes())?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SaeModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("{}: file too short for header", path.display())));
    }
    if &bytes[..4] != MODEL_MAGIC {
        return Err(Error::Format(format!("{}: bad magic", path.display())));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let version = word(0) as u32;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let (d_model, d_sae, k) = (word(1), word(2), word(3));
    let n_params = 2 * d_sae * d_model + d_sae + d_model;
    let have = (bytes.len() - HEADER_LEN) / 4;
    if !(bytes.len() - HEADER_LEN).is_multiple_of(4) || have != n_params {
        return Err(Error::Dimension(format!(
            "header declares d_model={d_model} d_sae={d_sae} ({n_params} floats) but the file holds {} bytes of parameters",
            bytes.len() - HEADER_LEN
        )));
    }
    let mut floats = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let mut take = |n: usize| floats.by_ref().take(n).collect::<Vec<f32>>();
    let w_enc = take(d_sae * d_model);
    let b_enc = take(d_sae);
    let w_dec = take(d_model * d_sae);
    let b_dec = take(d_model);
    SaeModel::from_parts(d_model, d_sae, k, w_enc, b_enc, w_dec, b_dec)
}
