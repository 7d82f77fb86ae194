//! Parameter persistence.
//!
//! Binary layout (all little-endian):
//!
//! | bytes | content                          |
//! |-------|----------------------------------|
//! | 4     | magic `LVOP`                     |
//! | 4     | format version (`u32`, 1)        |
//! | 8     | vocabulary size `V` (`u64`)      |
//! | 8     | feature dimension `d` (`u64`)    |
//! | 8     | window `m` (`u64`)               |
//! | 8·V·d | weights, row-major `f64`         |

use std::io::{Read, Write};
use std::sync::Arc;

use ndarray::Array2;

use super::{FeatureConfig, PolicyParams, Vocab};
use crate::error::{Error, Result};

pub const PARAMS_MAGIC: &[u8; 4] = b"LVOP";
pub const PARAMS_VERSION: u32 = 1;

pub fn write_params<W: Write>(params: &PolicyParams, mut out: W) -> Result<()> {
    let (v, d) = params.weights.dim();
    out.write_all(PARAMS_MAGIC)?;
    out.write_all(&PARAMS_VERSION.to_le_bytes())?;
    for n in [v as u64, d as u64, params.features.window as u64] {
        out.write_all(&n.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(v * d * 8);
    for w in params.weights.iter() {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_params<R: Read>(mut input: R, vocab: Arc<Vocab>) -> Result<PolicyParams> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != PARAMS_MAGIC {
        return Err(Error::Format("not a parameter file (bad magic)".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != PARAMS_VERSION {
        return Err(Error::Format(format!("unsupported parameter file version {version}")));
    }
    let mut header = [0u64; 3];
    for h in header.iter_mut() {
        let mut b = [0u8; 8];
        input.read_exact(&mut b)?;
        *h = u64::from_le_bytes(b);
    }
    let [v, d, m] = header.map(|x| x as usize);
    let features = FeatureConfig::new(m)?;
    if v != vocab.len() || d != features.dim(v) {
        return Err(Error::Format(format!(
            "header (V={v}, d={d}, m={m}) inconsistent with vocabulary of size {}",
            vocab.len()
        )));
    }
    let mut raw = vec![0u8; v * d * 8];
    input.read_exact(&mut raw)?;
    let data: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let weights = Array2::from_shape_vec((v, d), data).map_err(|e| Error::Format(e.to_string()))?;
    PolicyParams::from_weights(vocab, features, weights)
}

/// CSV inspection export: one row per vocabulary entry.
pub fn write_params_text<W: Write>(params: &PolicyParams, mut out: W) -> Result<()> {
    let d = params.dim();
    write!(out, "symbol")?;
    for j in 0..d {
        write!(out, ",w{j}")?;
    }
    writeln!(out)?;
    for (y, row) in params.weights.rows().into_iter().enumerate() {
        write!(out, "{}", params.vocab.symbol(y).unwrap_or("?"))?;
        for w in row.iter() {
            write!(out, ",{w}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
