//! Single-file weight checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "BCK1"                      magic
//! u32 version                 currently 1
//! u32 len, [u8; len]          metadata, UTF-8 key=value lines
//! u32 count                   number of tensors
//! count x table-of-contents entry:
//!     u32 len, [u8; len]      tensor name
//!     u8                      1 = trainable parameter, 0 = buffer
//!     u32 rank, rank x u32    shape
//!     u64 offset, u64 length  BT1 payload location, offset from file start
//! payloads                    one BT1 blob per tensor, in table order
//! ```

use std::fs;
use std::path::Path;

use super::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{read_bt1, write_bt1, Real};

const MAGIC: &[u8; 4] = b"BCK1";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Real> {
    pub metadata: String,
    pub store: ParamStore<T>,
}

pub fn write_checkpoint<T: Real>(store: &ParamStore<T>, metadata: &str) -> Vec<u8> {
    let mut payloads = Vec::new();
    let mut spans = Vec::with_capacity(store.len());
    for e in store.entries() {
        let start = payloads.len();
        write_bt1(&e.value, &mut payloads).expect("writing to memory");
        spans.push((start, payloads.len() - start));
    }

    let mut toc = Vec::new();
    for e in store.entries() {
        toc.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        toc.extend_from_slice(e.name.as_bytes());
        toc.push(u8::from(e.trainable));
        toc.extend_from_slice(&(e.value.rank() as u32).to_le_bytes());
        for &n in e.value.shape() {
            toc.extend_from_slice(&(n as u32).to_le_bytes());
        }
        // offsets are patched below once the header size is known
        toc.extend_from_slice(&[0u8; 16]);
    }
    let header_len = 4 + 4 + 4 + metadata.len() + 4 + toc.len();

    let mut out = Vec::with_capacity(header_len + payloads.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
    out.extend_from_slice(metadata.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    let toc_start = out.len();
    out.extend_from_slice(&toc);

    let mut pos = toc_start;
    for (e, (start, len)) in store.entries().iter().zip(&spans) {
        pos += 4 + e.name.len() + 1 + 4 + 4 * e.value.rank();
        out[pos..pos + 8].copy_from_slice(&((header_len + start) as u64).to_le_bytes());
        out[pos + 8..pos + 16].copy_from_slice(&(*len as u64).to_le_bytes());
        pos += 16;
    }
    out.extend_from_slice(&payloads);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::parse(self.pos, format!("truncated checkpoint {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let at = self.pos;
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::parse(at, format!("{what} is not UTF-8")))
    }
}

pub fn read_checkpoint<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::parse(0, "not a BCK1 checkpoint"));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::parse(4, format!("unsupported checkpoint version {version}")));
    }
    let metadata = c.string("metadata")?;
    let count = c.u32("tensor count")? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = c.string("tensor name")?;
        let trainable = c.take(1, "flags")?[0] == 1;
        let rank = c.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(c.u32("extent")? as usize);
        }
        let offset = c.u64("offset")? as usize;
        let len = c.u64("length")? as usize;
        entries.push((name, trainable, shape, offset, len));
    }
    let mut store = ParamStore::new();
    for (name, trainable, shape, offset, len) in entries {
        let blob = offset
            .checked_add(len)
            .and_then(|end| bytes.get(offset..end))
            .ok_or_else(|| Error::parse(offset, format!("payload of {name} out of range")))?;
        let (t, used) = read_bt1::<T>(blob).map_err(|e| match e {
            Error::Parse { offset: o, message } => Error::parse(offset + o, message),
            other => other,
        })?;
        if used != len || t.shape() != shape.as_slice() {
            return Err(Error::parse(
                offset,
                format!("payload of {name} disagrees with the table of contents"),
            ));
        }
        if trainable {
            store.add_param(name, t)?;
        } else {
            store.add_buffer(name, t)?;
        }
    }
    Ok(Checkpoint { metadata, store })
}

pub fn save_checkpoint<T: Real>(path: &Path, store: &ParamStore<T>, metadata: &str) -> Result<()> {
    fs::write(path, write_checkpoint(store, metadata))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes =
        fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    read_checkpoint(&bytes)
}
