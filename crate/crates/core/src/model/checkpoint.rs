//! Binary checkpoint format (little-endian):
//!
//! ```text
//! "IRLN" | u32 version = 1 | u32 tensor count
//! per tensor: u32 name length | UTF-8 name | u8 dtype (0 = f64, 1 = f32)
//!             | u8 rank | u64 dims[rank] | raw values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::{Precision, Tensor};

pub const MAGIC: &[u8; 4] = b"IRLN";
pub const VERSION: u32 = 1;

pub fn write<W: Write>(mut w: W, tensors: &[(String, Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let f32_storage = matches!(t.precision(), Precision::F32 | Precision::F16);
        w.write_all(&[u8::from(f32_storage), t.rank() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            if f32_storage {
                w.write_all(&(v as f32).to_le_bytes())?;
            } else {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated: {e}")))?;
    Ok(buf)
}

pub fn read<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    if &take::<4>(&mut r)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut r)?) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let [dtype, rank] = take::<2>(&mut r)?;
        let shape: Vec<usize> = (0..rank)
            .map(|_| take::<8>(&mut r).map(|b| u64::from_le_bytes(b) as usize))
            .collect::<Result<_>>()?;
        let numel: usize = shape.iter().product();
        let (data, precision) = match dtype {
            0 => (
                (0..numel)
                    .map(|_| take::<8>(&mut r).map(f64::from_le_bytes))
                    .collect::<Result<Vec<_>>>()?,
                Precision::F64,
            ),
            1 => (
                (0..numel)
                    .map(|_| take::<4>(&mut r).map(|b| f32::from_le_bytes(b) as f64))
                    .collect::<Result<Vec<_>>>()?,
                Precision::F32,
            ),
            d => {
                return Err(Error::Checkpoint(format!(
                    "unknown dtype code {d} for `{name}`"
                )))
            }
        };
        out.push((name, Tensor::from_parts(shape, data, precision)));
    }
    Ok(out)
}

pub fn save(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    write(BufWriter::new(File::create(path)?), tensors)
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    read(BufReader::new(File::open(path)?))
}
