//! Binary 8-bit PGM (`P5`, maxval 255).

use std::fs;
use std::path::Path;

use super::{Image, Mask};
use crate::error::{Error, Result};
use crate::tensor::read_bt1_file;

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, format!("expected PGM {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::parse(start, format!("PGM {what} out of range")))
    }
}

/// Returns `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::parse(0, "not a binary PGM (expected magic P5)"));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let max_at = {
        h.skip_space();
        h.pos
    };
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(Error::parse(max_at, format!("maxval must be 255, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::parse(3, "PGM extents must be positive"));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(Error::parse(h.pos, "expected whitespace after maxval")),
    }
    let n = width * height;
    let body = &bytes[h.pos..];
    if body.len() < n {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated PGM: {} of {n} pixel bytes", body.len()),
        ));
    }
    if body.len() > n {
        return Err(Error::parse(h.pos + n, "trailing bytes after PGM pixels"));
    }
    Ok((width, height, body.to_vec()))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Parse { offset, message } => Error::parse(offset, format!("{}: {message}", path.display())),
        other => other,
    }
}

/// Loads a grayscale image. PGM gray levels map to `[0, 1]`; `.bt1` files
/// hold raw real values as `[H,W]` or `[C,H,W]`.
pub fn load_image(path: &Path) -> Result<Image> {
    if path.extension().is_some_and(|e| e == "bt1") {
        let t = read_bt1_file::<f64>(path)?;
        return Image::from_tensor(&t);
    }
    let (w, h, px) = decode_pgm(&read(path)?).map_err(|e| with_path(path, e))?;
    Image::gray(h, w, px.iter().map(|&b| f64::from(b) / 255.0).collect())
}

/// Quantizes a single-channel image in `[0, 1]` to 8 bits.
pub fn save_image(path: &Path, image: &Image) -> Result<()> {
    if image.channels != 1 {
        return Err(Error::usage(format!(
            "PGM holds one channel, image has {}",
            image.channels
        )));
    }
    let px: Vec<u8> = image
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write(path, &encode_pgm(image.width, image.height, &px))
}

/// Gray levels above 127 are foreground.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let (w, h, px) = decode_pgm(&read(path)?).map_err(|e| with_path(path, e))?;
    Mask::new(h, w, px.iter().map(|&b| u8::from(b > 127)).collect())
}

/// Writes {0, 1} as {0, 255}.
pub fn save_mask(path: &Path, mask: &Mask) -> Result<()> {
    let px: Vec<u8> = mask.data.iter().map(|&v| v * 255).collect();
    write(path, &encode_pgm(mask.width, mask.height, &px))
}
