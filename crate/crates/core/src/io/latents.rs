use std::path::Path;

use ndarray::{Array2, ArrayView2};

use super::{read_bytes, write_atomic, Reader};
use crate::error::{Error, Result};
use crate::Scalar;

pub const LATENT_MAGIC: [u8; 4] = *b"SITN";
pub const LATENT_VERSION: u32 = 1;
/// Magic, version, count, dimension, flattening tag.
pub const LATENT_HEADER_LEN: usize = 4 + 4 + 8 + 8 + 4;

/// How a multi-axis sample was flattened into a vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flattening {
    /// Already a vector.
    Vector,
    /// Channel-major image, `(C, H, W)` row-major.
    Chw,
    /// Channel-minor image, `(H, W, C)` row-major.
    Hwc,
}

impl Flattening {
    pub fn tag(self) -> u32 {
        match self {
            Flattening::Vector => 0,
            Flattening::Chw => 1,
            Flattening::Hwc => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(Flattening::Vector),
            1 => Ok(Flattening::Chw),
            2 => Ok(Flattening::Hwc),
            t => Err(Error::Format(format!("unknown flattening tag {t}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatentHeader {
    pub count: u64,
    pub dim: u64,
    pub flattening: Flattening,
}

/// Header plus row-major little-endian `f32` body.
pub fn encode_latents<T: Scalar>(data: ArrayView2<'_, T>, flattening: Flattening) -> Vec<u8> {
    let mut out = Vec::with_capacity(LATENT_HEADER_LEN + data.len() * 4);
    out.extend_from_slice(&LATENT_MAGIC);
    out.extend_from_slice(&LATENT_VERSION.to_le_bytes());
    out.extend_from_slice(&(data.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(data.ncols() as u64).to_le_bytes());
    out.extend_from_slice(&flattening.tag().to_le_bytes());
    for v in data.iter() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

pub fn decode_latents<T: Scalar>(bytes: &[u8]) -> Result<(LatentHeader, Array2<T>)> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != LATENT_MAGIC {
        return Err(Error::Format(format!(
            "bad latent magic {magic:?}, expected {:?} (\"SITN\")",
            LATENT_MAGIC
        )));
    }
    let version = r.u32("version")?;
    if version != LATENT_VERSION {
        return Err(Error::Format(format!(
            "unsupported latent format version {version}, expected {LATENT_VERSION}"
        )));
    }
    let count = r.u64("count")?;
    let dim = r.u64("dimension")?;
    let flattening = Flattening::from_tag(r.u32("flattening tag")?)?;
    // Validate the declared size against what is present before allocating.
    let body = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .filter(|&b| b <= usize::MAX as u64)
        .ok_or_else(|| Error::Corruption(format!("header declares {count} x {dim} values, which overflows")))?
        as usize;
    if body != r.remaining() {
        return Err(Error::Corruption(format!(
            "header declares {count} x {dim} f32 values ({body} bytes), body has {} bytes",
            r.remaining()
        )));
    }
    let raw = r.take(body, "body")?;
    let values: Vec<T> = raw
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
        .collect();
    let arr = Array2::from_shape_vec((count as usize, dim as usize), values)
        .map_err(|e| Error::Corruption(e.to_string()))?;
    Ok((LatentHeader { count, dim, flattening }, arr))
}

pub fn write_latents<T: Scalar>(path: &Path, data: ArrayView2<'_, T>) -> Result<()> {
    write_atomic(path, &encode_latents(data, Flattening::Vector))
}

pub fn read_latents<T: Scalar>(path: &Path) -> Result<Array2<T>> {
    Ok(read_latents_with_header(path)?.1)
}

pub fn read_latents_with_header<T: Scalar>(path: &Path) -> Result<(LatentHeader, Array2<T>)> {
    decode_latents(&read_bytes(path)?)
}
