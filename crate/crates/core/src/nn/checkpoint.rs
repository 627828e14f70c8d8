//! Binary network checkpoints.
//!
//! Layout (little-endian): magic `FLOWMLP\0`, `u32` version, `u32` number of
//! architecture entries, the entries as `u64`, `f64` input box, `f64` output
//! bound, then `W_0, v_1, W_1, …, v_L, W_L` as `f64` with matrices row-major.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::MlpNetwork;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FLOWMLP\0";
const VERSION: u32 = 1;
const MAX_WIDTH: u64 = 1 << 20;

pub fn write_checkpoint<W: Write>(net: &MlpNetwork, w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(net.arch().len() as u32).to_le_bytes())?;
    for &p in net.arch() {
        w.write_all(&(p as u64).to_le_bytes())?;
    }
    w.write_all(&net.input_box().to_le_bytes())?;
    w.write_all(&net.output_bound().to_le_bytes())?;
    for v in net.flatten() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Checkpoint("file is truncated".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array::<R, 8>(r)?))
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<MlpNetwork> {
    if &read_array::<R, 8>(r)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(read_array(r)?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = u32::from_le_bytes(read_array(r)?) as usize;
    if !(2..=1024).contains(&len) {
        return Err(Error::Checkpoint(format!("implausible architecture length {len}")));
    }
    let mut arch = Vec::with_capacity(len);
    for _ in 0..len {
        let p = u64::from_le_bytes(read_array(r)?);
        if p == 0 || p > MAX_WIDTH {
            return Err(Error::Checkpoint(format!("implausible layer width {p}")));
        }
        arch.push(p as usize);
    }
    let input_box = read_f64(r)?;
    let output_bound = read_f64(r)?;
    let mut weights = Vec::with_capacity(len - 1);
    let mut shifts = Vec::with_capacity(len - 2);
    for i in 0..len - 1 {
        if i > 0 {
            let mut v = DVector::zeros(arch[i]);
            for e in v.iter_mut() {
                *e = read_f64(r)?;
            }
            shifts.push(v);
        }
        let mut w = DMatrix::zeros(arch[i + 1], arch[i]);
        for row in 0..arch[i + 1] {
            for col in 0..arch[i] {
                w[(row, col)] = read_f64(r)?;
            }
        }
        weights.push(w);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    MlpNetwork::from_parts(arch, weights, shifts, input_box, output_bound)
        .map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_checkpoint(net: &MlpNetwork, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(net, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MlpNetwork> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}
