//! Versioned binary model persistence.
//!
//! Layout (all integers little-endian):
//!   magic "UCNN" | u32 version | u8 precision (0 = f64, 1 = f32)
//!   | 3 x u32 input shape (h, w, c)
//!   | u64 descriptor length | JSON layer descriptor table
//!   | u64 parameter count | f64 parameters (declaration order)

use super::layers::{
    build_model, for_each_param, for_each_param_mut, to_configs, LayerConfig, LayerKind, Precision,
};
use super::NnError;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"UCNN";
const VERSION: u32 = 1;

fn io_err(path: &Path, e: std::io::Error) -> NnError {
    NnError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> NnError {
    NnError::Format {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

pub fn save_model(
    path: &Path,
    layers: &[LayerKind],
    input_shape: (usize, usize, usize),
    precision: Precision,
) -> Result<(), NnError> {
    let configs = to_configs(layers);
    let descriptor = serde_json::to_vec(&configs)
        .map_err(|e| format_err(path, format!("descriptor encoding failed: {e}")))?;
    let mut params: Vec<f64> = Vec::new();
    for_each_param(layers, &mut |t| params.extend_from_slice(t.data()));

    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(match precision {
        Precision::F64 => 0,
        Precision::F32 => 1,
    });
    for extent in [input_shape.0, input_shape.1, input_shape.2] {
        buf.extend_from_slice(&(extent as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(descriptor.len() as u64).to_le_bytes());
    buf.extend_from_slice(&descriptor);
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in &params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&buf).map_err(|e| io_err(path, e))
}

#[derive(Debug)]
pub struct LoadedModel {
    pub layers: Vec<LayerKind>,
    pub configs: Vec<LayerConfig>,
    pub input_shape: (usize, usize, usize),
    pub precision: Precision,
}

pub fn load_model(path: &Path) -> Result<LoadedModel, NnError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    let mut cursor = 0usize;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8], NnError> {
        if *cursor + n > bytes.len() {
            return Err(format_err(path, "truncated file"));
        }
        let slice = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(slice)
    };

    if take(&mut cursor, 4)? != MAGIC {
        return Err(format_err(path, "bad magic (not a model file)"));
    }
    let version = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let precision = match take(&mut cursor, 1)?[0] {
        0 => Precision::F64,
        1 => Precision::F32,
        other => return Err(format_err(path, format!("unknown precision byte {other}"))),
    };
    let mut shape = [0usize; 3];
    for s in &mut shape {
        *s = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
    }
    let desc_len = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
    let configs: Vec<LayerConfig> = serde_json::from_slice(take(&mut cursor, desc_len)?)
        .map_err(|e| format_err(path, format!("bad descriptor table: {e}")))?;
    let param_count = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
    let param_bytes = take(&mut cursor, param_count * 8)?;
    let params: Vec<f64> = param_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if cursor != bytes.len() {
        return Err(format_err(path, "trailing bytes after parameters"));
    }

    let mut layers = build_model(&configs, (shape[0], shape[1], shape[2]), 0)
        .map_err(|e| format_err(path, format!("descriptor does not build: {e}")))?;
    let mut offset = 0usize;
    let mut overflow = false;
    for_each_param_mut(&mut layers, &mut |t| {
        let len = t.len();
        if offset + len > params.len() {
            overflow = true;
            return;
        }
        t.data_mut().copy_from_slice(&params[offset..offset + len]);
        offset += len;
    });
    if overflow || offset != params.len() {
        return Err(format_err(
            path,
            format!("parameter blob has {} values but the descriptor needs {offset}", params.len()),
        ));
    }
    Ok(LoadedModel {
        layers,
        configs,
        input_shape: (shape[0], shape[1], shape[2]),
        precision,
    })
}
