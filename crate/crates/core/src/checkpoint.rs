//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 4 | magic `MILC` |
//! | 4 | 2 | version (1) |
//! | 6 | 1 | aggregator tag (0 abmil, 1 dsmil, 2 clam_sb, 3 clam_mb, 4 maxpool, 5 meanpool) |
//! | 7 | 1 | flags: bit 0 tied DSMIL scorer, bit 1 trained instance branch |
//! | 8 | 16 | `d_in`, `hidden`, `d`, `l` as u32 |
//! | 24 | 4 | tensor count `T` as u32 |
//!
//! Then `T` tensors in the declared parameter order, each a u32 element count
//! followed by that many f64 values (row-major). Names and shapes follow from
//! the header; nothing may follow the last tensor.

use std::path::Path;

use crate::data::format::{read_bytes, write_bytes, Reader};
use crate::error::{Error, Result};
use crate::nn::{param_layout, Aggregator, ModelDims, ModelSpec, ModelState};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MILC";
pub const CHECKPOINT_VERSION: u16 = 1;
pub const CHECKPOINT_HEADER: usize = 28;

const FLAG_TIED: u8 = 1;
const FLAG_INSTANCE: u8 = 2;

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Validation(format!("{what} = {v} does not fit the checkpoint header")))
}

pub fn encode_checkpoint(state: &ModelState) -> Result<Vec<u8>> {
    let spec = &state.spec;
    let mut buf = Vec::with_capacity(CHECKPOINT_HEADER + 8 * state.n_values() + 4 * state.params.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.push(spec.aggregator.tag());
    let flags = if spec.tie_dsmil_scorer { FLAG_TIED } else { 0 } | if spec.instance_branch { FLAG_INSTANCE } else { 0 };
    buf.push(flags);
    let ModelDims { d_in, hidden, d, l } = spec.dims;
    for (v, name) in [(d_in, "d_in"), (hidden, "hidden"), (d, "d"), (l, "l")] {
        buf.extend_from_slice(&u32_of(v, name)?.to_le_bytes());
    }
    buf.extend_from_slice(&u32_of(state.params.len(), "tensor count")?.to_le_bytes());
    for t in &state.params {
        buf.extend_from_slice(&u32_of(t.numel(), "tensor size")?.to_le_bytes());
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<ModelState> {
    let mut r = Reader::new(path, bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version()?;
    let tag = r.take(1, "aggregator tag")?[0];
    let aggregator =
        Aggregator::from_tag(tag).ok_or_else(|| Error::format(path, 6, format!("unknown aggregator tag {tag}")))?;
    let flags = r.take(1, "flags")?[0];
    if flags & !(FLAG_TIED | FLAG_INSTANCE) != 0 {
        return Err(Error::format(path, 7, format!("unknown flag bits {flags:#04x}")));
    }
    let mut dims = [0usize; 4];
    for (i, name) in ["d_in", "hidden", "d", "l"].into_iter().enumerate() {
        let at = 8 + 4 * i as u64;
        dims[i] = r.u32(name)? as usize;
        if dims[i] == 0 {
            return Err(Error::format(path, at, format!("{name} is zero")));
        }
    }
    let spec = ModelSpec {
        aggregator,
        dims: ModelDims {
            d_in: dims[0],
            hidden: dims[1],
            d: dims[2],
            l: dims[3],
        },
        tie_dsmil_scorer: flags & FLAG_TIED != 0,
        instance_branch: flags & FLAG_INSTANCE != 0,
    };
    let layout = param_layout(&spec);
    let count = r.u32("tensor count")? as usize;
    if count != layout.len() {
        return Err(Error::format(
            path,
            24,
            format!("{count} tensors, but a {aggregator} model has {}", layout.len()),
        ));
    }
    let mut names = Vec::with_capacity(count);
    let mut params = Vec::with_capacity(count);
    for (name, shape) in layout {
        let at = r.pos as u64;
        let numel = r.u32("tensor size")? as usize;
        let expected: usize = shape.iter().product();
        if numel != expected {
            return Err(Error::format(
                path,
                at,
                format!("tensor {name} has {numel} values, expected {expected}"),
            ));
        }
        let raw = r.take(8 * numel, &format!("tensor {name}"))?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(path, at + 4, format!("tensor {name} holds a non-finite value")));
        }
        params.push(Tensor::new(shape, values)?.with_grad());
        names.push(name);
    }
    r.finish()?;
    Ok(ModelState::from_parts(spec, names, params))
}

pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<()> {
    write_bytes(path, &encode_checkpoint(state)?)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    decode_checkpoint(path, &read_bytes(path)?)
}
