// SPDX-License-Identifier: MIT OR Apache-2.0

//! `manifest.json` + `data.bin` directory format.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ActivationSet, Label, SampleRecord};
use crate::error::{Error, Result};

pub const MAGIC: &str = "SAEG";
pub const VERSION: u32 = 1;
pub const DTYPE: &str = "f32le";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub magic: String,
    pub version: u32,
    pub layer_id: String,
    pub dim: usize,
    pub dtype: String,
    pub samples: Vec<ManifestSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSample {
    pub id: String,
    pub label: Label,
    pub num_tokens: usize,
    pub offset: u64,
    pub byte_len: u64,
}

/// Write `set` into directory `dir`, creating it if needed.
pub fn write_activation_set(set: &ActivationSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    if set.is_empty() {
        return Err(Error::InvalidInput("empty set".into()));
    }
    set.validate()?;
    for s in set.samples() {
        if s.as_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample `{}`", s.id)));
        }
    }

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut entries = Vec::with_capacity(set.len());
    let mut offset = 0u64;
    let data_path = dir.join(DATA_FILE);
    let file = fs::File::create(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let mut out = BufWriter::new(file);
    for s in set.samples() {
        for v in s.as_flat() {
            out.write_all(&v.to_le_bytes()).map_err(|e| Error::io(&data_path, e))?;
        }
        let byte_len = (s.as_flat().len() * 4) as u64;
        entries.push(ManifestSample {
            id: s.id.clone(),
            label: s.label,
            num_tokens: s.num_tokens(),
            offset,
            byte_len,
        });
        offset += byte_len;
    }
    out.flush().map_err(|e| Error::io(&data_path, e))?;

    let manifest = Manifest {
        magic: MAGIC.into(),
        version: VERSION,
        layer_id: set.layer_id.clone(),
        dim: set.dim(),
        dtype: DTYPE.into(),
        samples: entries,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&manifest_path, e))?;
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))
}

/// Read and validate only the manifest of a dump.
pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if manifest.magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic `{}` (expected `{MAGIC}`)",
            manifest.magic
        )));
    }
    if manifest.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported version {} (expected {VERSION})",
            manifest.version
        )));
    }
    if manifest.dtype != DTYPE {
        return Err(Error::Format(format!("unsupported dtype `{}`", manifest.dtype)));
    }
    if manifest.dim == 0 {
        return Err(Error::Format("manifest dim must be positive".into()));
    }
    Ok(manifest)
}

/// Load a dump written by [`write_activation_set`] (or the extractor).
pub fn read_activation_set(dir: impl AsRef<Path>) -> Result<ActivationSet> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let data_path = dir.join(DATA_FILE);
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let file_len = bytes.len() as u64;
    let dim = manifest.dim;

    let mut samples = Vec::with_capacity(manifest.samples.len());
    let mut expected_end = 0u64;
    for entry in &manifest.samples {
        if entry.num_tokens == 0 {
            return Err(Error::Format(format!("sample `{}` has zero tokens", entry.id)));
        }
        let want = (entry.num_tokens * dim * 4) as u64;
        if entry.byte_len != want {
            return Err(Error::Format(format!(
                "sample `{}`: byte_len {} disagrees with num_tokens {} x dim {dim} x 4 = {want}",
                entry.id, entry.byte_len, entry.num_tokens
            )));
        }
        let end = entry.offset.checked_add(entry.byte_len).ok_or_else(|| {
            Error::Format(format!("sample `{}`: offset overflow", entry.id))
        })?;
        if end > file_len {
            return Err(Error::Format(format!(
                "sample `{}` truncated: needs bytes {}..{end} but {DATA_FILE} has {file_len}",
                entry.id, entry.offset
            )));
        }
        expected_end = expected_end.max(end);
        let raw = &bytes[entry.offset as usize..end as usize];
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        samples.push(SampleRecord::new(entry.id.clone(), entry.label, dim, values)?);
    }
    if expected_end != file_len {
        return Err(Error::Format(format!(
            "{DATA_FILE} has {file_len} bytes but the manifest accounts for {expected_end}"
        )));
    }
    ActivationSet::new(manifest.layer_id, dim, samples)
}
