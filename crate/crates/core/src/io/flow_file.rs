use std::path::Path;

use ndarray::{Array1, Array2};

use super::{read_bytes, write_atomic, Reader};
use crate::error::{Error, Result};
use crate::flow::{Activation, Dense, FlowArchitecture, FlowModel};
use crate::Scalar;

pub const FLOW_MAGIC: [u8; 4] = *b"SITF";
pub const FLOW_VERSION: u32 = 1;

/// Parameters are stored at the model's own precision, so the round trip is
/// lossless for both `f32` and `f64` models.
pub fn encode_flow<T: Scalar>(model: &FlowModel<T>) -> Vec<u8> {
    let width = std::mem::size_of::<T>() as u32;
    let arch = model.architecture();
    let mut out = Vec::new();
    out.extend_from_slice(&FLOW_MAGIC);
    for v in [
        FLOW_VERSION,
        width,
        arch.dim as u32,
        arch.activation.code(),
        arch.time_frequencies as u32,
        arch.hidden.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &h in &arch.hidden {
        out.extend_from_slice(&(h as u32).to_le_bytes());
    }
    let mut push = |v: T| {
        if width == 4 {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        } else {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    };
    for layer in model.layers() {
        layer.weight.iter().copied().for_each(&mut push);
        layer.bias.iter().copied().for_each(&mut push);
    }
    out
}

pub fn decode_flow<T: Scalar>(bytes: &[u8]) -> Result<FlowModel<T>> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != FLOW_MAGIC {
        return Err(Error::Format(format!("bad flow magic {magic:?}, expected \"SITF\"")));
    }
    let version = r.u32("version")?;
    if version != FLOW_VERSION {
        return Err(Error::Format(format!(
            "unsupported flow format version {version}, expected {FLOW_VERSION}"
        )));
    }
    let width = r.u32("scalar width")?;
    if width != 4 && width != 8 {
        return Err(Error::Format(format!("unsupported scalar width {width}")));
    }
    let dim = r.u32("dimension")? as usize;
    let code = r.u32("activation")?;
    let activation =
        Activation::from_code(code).ok_or_else(|| Error::Format(format!("unknown activation code {code}")))?;
    let time_frequencies = r.u32("time frequencies")? as usize;
    let depth = r.u32("hidden layer count")? as usize;
    if depth > r.remaining() / 4 {
        return Err(Error::Corruption(format!("implausible hidden layer count {depth}")));
    }
    let hidden = (0..depth)
        .map(|_| r.u32("hidden width").map(|h| h as usize))
        .collect::<Result<Vec<_>>>()?;
    let arch = FlowArchitecture {
        dim,
        hidden,
        activation,
        time_frequencies,
    };
    arch.validate().map_err(|e| Error::Format(format!("invalid architecture: {e}")))?;

    let shapes = arch.layer_shapes();
    let count = shapes
        .iter()
        .try_fold(0u64, |acc, &(i, o)| {
            (i as u64)
                .checked_mul(o as u64)
                .and_then(|w| w.checked_add(o as u64))
                .and_then(|n| acc.checked_add(n))
        })
        .ok_or_else(|| Error::Corruption("architecture parameter count overflows".into()))?;
    let expected = count.checked_mul(width as u64);
    if expected != Some(r.remaining() as u64) {
        return Err(Error::Corruption(format!(
            "architecture needs {count} parameters of {width} bytes, body has {} bytes",
            r.remaining()
        )));
    }
    let mut next = || -> T {
        let b = r.take(width as usize, "parameter").expect("size checked");
        if width == 4 {
            T::of(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        } else {
            T::of(f64::from_le_bytes(b.try_into().expect("8 bytes")))
        }
    };
    let layers = shapes
        .iter()
        .map(|&(i, o)| {
            let weight = Array2::from_shape_simple_fn((i, o), &mut next);
            let bias = Array1::from_shape_simple_fn(o, &mut next);
            Dense { weight, bias }
        })
        .collect();
    FlowModel::from_layers(arch, layers)
}

pub fn write_flow<T: Scalar>(path: &Path, model: &FlowModel<T>) -> Result<()> {
    write_atomic(path, &encode_flow(model))
}

pub fn read_flow<T: Scalar>(path: &Path) -> Result<FlowModel<T>> {
    decode_flow(&read_bytes(path)?)
}
