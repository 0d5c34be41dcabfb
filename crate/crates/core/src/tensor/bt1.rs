//! `BT1` tensor files: magic `BT1\0`, `u32` rank, `rank` x `u32` extents,
//! then the row-major payload as little-endian `f32`. All integers are
//! little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Real, Tensor};
use crate::error::{Error, Result};

pub const BT1_MAGIC: [u8; 4] = *b"BT1\0";

pub fn write_bt1<T: Real, W: Write>(t: &Tensor<T>, mut out: W) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.numel());
    buf.extend_from_slice(&BT1_MAGIC);
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &n in t.shape() {
        buf.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out.write_all(&buf)
}

/// Parses one BT1 tensor from the front of `bytes`, returning it together
/// with the number of bytes consumed.
pub fn read_bt1<T: Real>(bytes: &[u8]) -> Result<(Tensor<T>, usize)> {
    let mut pos = 0usize;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        let start = pos;
        let end = start
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::parse(start, format!("truncated BT1 {what}")))?;
        pos = end;
        Ok(&bytes[start..end])
    };
    let magic = take(4, "magic")?;
    if magic != BT1_MAGIC {
        return Err(Error::parse(0, "missing BT1 magic"));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
    let rank = u32_at(take(4, "rank")?);
    if rank > 16 {
        return Err(Error::parse(4, format!("implausible BT1 rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let n = u32_at(take(4, "extent")?);
        if n == 0 {
            return Err(Error::parse(8 + 4 * i, "zero extent in BT1 header"));
        }
        shape.push(n);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| Error::parse(8, "BT1 shape overflows"))?;
    let payload_at = 8 + 4 * rank;
    let payload = take(numel * 4, "payload")?;
    let data = payload
        .chunks_exact(4)
        .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
        .collect();
    let t = Tensor::from_vec(&shape, data).map_err(|e| Error::parse(payload_at, e.to_string()))?;
    Ok((t, pos))
}

pub fn write_bt1_file<T: Real>(t: &Tensor<T>, path: &Path) -> Result<()> {
    let file = fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_bt1(t, std::io::BufWriter::new(file))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_bt1_file<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let (t, used) = read_bt1(&bytes)?;
    if used != bytes.len() {
        return Err(Error::parse(used, "trailing bytes after BT1 payload"));
    }
    Ok(t)
}
