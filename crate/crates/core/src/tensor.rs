//! Little-endian binary tensor format shared by wedge clouds, BEV grids and
//! pixel maps.
//!
//! Layout:
//!
//! ```text
//! magic      4 bytes   b"GLT1"
//! rank       u32
//! dims       rank x u64
//! meta_len   u32
//! meta       meta_len bytes of UTF-8 JSON (provenance, column names)
//! payload    prod(dims) x f32, row-major
//! ```

use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GLT1";

/// Config hash and seed embedded in every exported artifact.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Self {
            config_hash: config_hash.into(),
            seed,
        }
    }

    /// Leading comment line for CSV artifacts.
    pub fn write_csv_comment<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "# config_hash={} seed={}", self.config_hash, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    pub kind: String,
    #[serde(default)]
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub meta: TensorMeta,
    pub data: Vec<f32>,
}

pub fn write_tensor<W: Write>(
    mut out: W,
    dims: &[usize],
    meta: &TensorMeta,
    data: impl IntoIterator<Item = f32>,
) -> Result<()> {
    let meta_json = serde_json::to_vec(meta)?;
    out.write_all(MAGIC)?;
    out.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        out.write_all(&(d as u64).to_le_bytes())?;
    }
    out.write_all(&(meta_json.len() as u32).to_le_bytes())?;
    out.write_all(&meta_json)?;
    let expected: usize = dims.iter().product();
    let mut written = 0usize;
    for x in data {
        out.write_all(&x.to_le_bytes())?;
        written += 1;
    }
    if written != expected {
        return Err(Error::ShapeMismatch(format!(
            "tensor payload has {written} values, dims imply {expected}"
        )));
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::ShapeMismatch("bad tensor magic".into()));
    }
    let rank = read_u32(&mut r)? as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        dims.push(u64::from_le_bytes(b) as usize);
    }
    let meta_len = read_u32(&mut r)? as usize;
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta)?;
    let meta: TensorMeta = serde_json::from_slice(&meta)?;
    let n: usize = dims.iter().product();
    let mut payload = vec![0u8; n * 4];
    r.read_exact(&mut payload)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor { dims, meta, data })
}
