//! On-disk containers. Every file is `magic (8 bytes) | version (1 byte) |
//! JSON header | NUL | little-endian f64 payload`; the header carries shapes
//! and metadata, the payload carries matrix data row-major.

use crate::error::{CamilError, Result};
use crate::grid::{FeatureBag, TileGrid};
use crate::tensor::Matrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const BAG_MAGIC: &[u8; 8] = b"CAMILBAG";
pub const MODEL_MAGIC: &[u8; 8] = b"CAMILMDL";
pub const ENCODER_MAGIC: &[u8; 8] = b"CAMILENC";
pub const FORMAT_VERSION: u8 = 1;

pub(crate) fn encode_container(
    magic: &[u8; 8],
    header: &impl Serialize,
    payload: &[f64],
) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + payload.len() * 8);
    out.extend_from_slice(magic);
    out.push(FORMAT_VERSION);
    let json = serde_json::to_vec(header).map_err(|e| CamilError::Parse {
        offset: 9,
        message: format!("header serialization failed: {e}"),
    })?;
    out.extend_from_slice(&json);
    out.push(0);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub(crate) fn decode_container<H: DeserializeOwned>(
    bytes: &[u8],
    magic: &[u8; 8],
) -> Result<(H, Vec<f64>)> {
    if bytes.len() < 9 || &bytes[..8] != magic {
        return Err(CamilError::Parse {
            offset: 0,
            message: format!(
                "expected magic {:?}",
                String::from_utf8_lossy(magic)
            ),
        });
    }
    if bytes[8] != FORMAT_VERSION {
        return Err(CamilError::Version {
            found: bytes[8],
            expected: FORMAT_VERSION,
        });
    }
    let json_start = 9;
    let nul = bytes[json_start..]
        .iter()
        .position(|&b| b == 0)
        .ok_or(CamilError::Parse {
            offset: bytes.len(),
            message: "unterminated header".into(),
        })?;
    let header: H =
        serde_json::from_slice(&bytes[json_start..json_start + nul]).map_err(|e| {
            CamilError::Parse {
                offset: json_start,
                message: format!("bad header: {e}"),
            }
        })?;
    let data_start = json_start + nul + 1;
    let raw = &bytes[data_start..];
    if raw.len() % 8 != 0 {
        return Err(CamilError::Parse {
            offset: data_start + raw.len() / 8 * 8,
            message: "payload is not a whole number of 8-byte values".into(),
        });
    }
    let payload = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, payload))
}

pub(crate) fn write_container(
    path: &Path,
    magic: &[u8; 8],
    header: &impl Serialize,
    payload: &[f64],
) -> Result<()> {
    let bytes = encode_container(magic, header, payload)?;
    std::fs::write(path, bytes).map_err(|e| CamilError::io(path, e))
}

pub(crate) fn read_container<H: DeserializeOwned>(
    path: &Path,
    magic: &[u8; 8],
) -> Result<(H, Vec<f64>)> {
    let bytes = std::fs::read(path).map_err(|e| CamilError::io(path, e))?;
    decode_container(&bytes, magic)
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct BagHeader {
    grid: TileGrid,
    label: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    tile_labels: Option<Vec<bool>>,
    n: usize,
    d: usize,
}

pub fn save_bag(path: &Path, bag: &FeatureBag) -> Result<()> {
    let header = BagHeader {
        grid: bag.grid.clone(),
        label: bag.label,
        tile_labels: bag.tile_labels.clone(),
        n: bag.features.rows(),
        d: bag.features.cols(),
    };
    write_container(path, BAG_MAGIC, &header, bag.features.data())
}

pub fn load_bag(path: &Path) -> Result<FeatureBag> {
    let (header, payload): (BagHeader, Vec<f64>) = read_container(path, BAG_MAGIC)?;
    if header.n != header.grid.len() {
        return Err(CamilError::Parse {
            offset: 9,
            message: format!(
                "header claims {} rows but the grid has {} tiles",
                header.n,
                header.grid.len()
            ),
        });
    }
    if payload.len() != header.n * header.d {
        return Err(CamilError::Parse {
            offset: 9,
            message: format!(
                "payload holds {} values, header claims {}x{}",
                payload.len(),
                header.n,
                header.d
            ),
        });
    }
    let features = Matrix::from_vec(header.n, header.d, payload)?;
    FeatureBag::new(header.grid, features, header.label, header.tile_labels)
}
