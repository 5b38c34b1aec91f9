//! Binary tensor checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "AANGCKPT"
//! version  u32      1
//! count    u32      number of tensors
//! record * count:
//!   name_len u32, name (UTF-8), dtype u8 (1 = f64), ndim u32,
//!   dims u64 * ndim, data (f64 LE, row-major)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::params::ParamSet;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"AANGCKPT";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

pub fn write_checkpoint<W: Write>(params: &ParamSet, mut out: W) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for t in params.tensors() {
        out.write_all(&(t.name.len() as u32).to_le_bytes())?;
        out.write_all(t.name.as_bytes())?;
        out.write_all(&[DTYPE_F64])?;
        out.write_all(&2u32.to_le_bytes())?;
        let (r, c) = t.value.dim();
        out.write_all(&(r as u64).to_le_bytes())?;
        out.write_all(&(c as u64).to_le_bytes())?;
        for v in t.value.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Array2<f64>)>> {
    if &read_exact::<_, 8>(&mut r)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_exact(&mut r)?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(read_exact(&mut r)?);
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = u32::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let [dtype] = read_exact::<_, 1>(&mut r)?;
        if dtype != DTYPE_F64 {
            return Err(Error::Checkpoint(format!("{name}: unsupported dtype {dtype}")));
        }
        let ndim = u32::from_le_bytes(read_exact(&mut r)?);
        let mut dims = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            dims.push(u64::from_le_bytes(read_exact(&mut r)?) as usize);
        }
        let (rows, cols) = match dims.as_slice() {
            [c] => (1, *c),
            [r, c] => (*r, *c),
            _ => return Err(Error::Checkpoint(format!("{name}: {ndim}-d tensors unsupported"))),
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(read_exact(&mut r)?));
        }
        let arr = Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        out.push((name, arr));
    }
    Ok(out)
}

pub fn save_checkpoint(params: &ParamSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(params, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Overwrites every tensor named in the checkpoint. Names must exist in
/// `params` with matching shapes.
pub fn load_checkpoint(params: &mut ParamSet, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let tensors = read_checkpoint(std::io::BufReader::new(file))?;
    for (name, value) in &tensors {
        let id = params
            .find(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name}")))?;
        if params.value(id).dim() != value.dim() {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {:?} does not match {:?}",
                value.dim(),
                params.value(id).dim()
            )));
        }
    }
    for (name, value) in tensors.iter() {
        let id = params.find(name).expect("checked above");
        params.value_mut(id).assign(value);
    }
    Ok(tensors.len())
}
