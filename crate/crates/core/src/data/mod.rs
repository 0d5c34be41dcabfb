//! Images, masks, and the ways they are produced: PGM files, patches,
//! resizing, synthetic generators, and the lung surrounding-tissue targets.

mod lung;
mod manifest;
mod patches;
mod pgm;
mod resize;
mod synth;

pub use lung::{
    binarize, clamp_intensity, fill_holes, lung_from_surrounding, lung_preprocess, min_max_normalize, opening,
    LungResult, CLAMP_LIMIT,
};
pub use manifest::{load_manifest, parse_manifest, ManifestEntry, Split};
pub use patches::{extract_grid, extract_patches, PatchSet, Provenance};
pub use pgm::{decode_pgm, encode_pgm, load_image, load_mask, save_image, save_mask};
pub use resize::{resize_image, resize_mask, ResizeMode};
pub use synth::{disc_pair, synth_ct_slice, synth_dataset, SynthKind};

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::train::Example;

/// Real-valued image, channel-major (`[C, H, W]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::dim("image extents must be positive"));
        }
        if data.len() != channels * height * width {
            return Err(Error::dim(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn gray(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(1, height, width, data)
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Image {
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            for y in top..top + h {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + left..row + left + w]);
            }
        }
        Image {
            channels: self.channels,
            height: h,
            width: w,
            data,
        }
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &[self.channels, self.height, self.width],
            self.data.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        )
        .expect("validated extents")
    }

    /// Accepts `[H, W]` or `[C, H, W]`.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        match *t.shape() {
            [h, w] => Self::new(1, h, w, t.to_f64_vec()),
            [c, h, w] => Self::new(c, h, w, t.to_f64_vec()),
            _ => Err(Error::dim(format!(
                "image tensor must be [H,W] or [C,H,W], got {:?}",
                t.shape()
            ))),
        }
    }
}

/// Binary mask with values in {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dim("mask extents must be positive"));
        }
        if data.len() != height * width {
            return Err(Error::dim(format!(
                "{} values for a {height}x{width} mask",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::usage(format!(
                "mask value {} at index {i} is not 0 or 1",
                data[i]
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Mask {
        let mut data = Vec::with_capacity(h * w);
        for y in top..top + h {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + left..row + left + w]);
        }
        Mask {
            height: h,
            width: w,
            data,
        }
    }

    /// `[1, H, W]`
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &[1, self.height, self.width],
            self.data.iter().map(|&v| if v == 1 { T::one() } else { T::zero() }).collect(),
        )
        .expect("validated extents")
    }

    /// Binarizes a probability map of `H*W` values at `threshold` (`>=`).
    pub fn from_probabilities(height: usize, width: usize, probs: &[f64], threshold: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            probs.iter().map(|&p| u8::from(p >= threshold)).collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskPair {
    pub id: String,
    pub image: Image,
    pub mask: Mask,
}

impl MaskPair {
    pub fn new(id: impl Into<String>, image: Image, mask: Mask) -> Result<Self> {
        let id = id.into();
        if (image.height, image.width) != (mask.height, mask.width) {
            return Err(Error::dim(format!(
                "{id}: image is {}x{} but mask is {}x{}",
                image.height, image.width, mask.height, mask.width
            )));
        }
        Ok(Self { id, image, mask })
    }

    pub fn to_example<T: Real>(&self, source: &str) -> Example<T> {
        Example {
            source: source.to_string(),
            input: self.image.to_tensor(),
            target: self.mask.to_tensor(),
        }
    }
}

/// Splits pairs into (train, validation) by id so no source image lands on
/// both sides. At least one id goes to validation when there are two or more.
pub fn split_by_source(
    pairs: &[MaskPair],
    source_of: impl Fn(&MaskPair) -> &str,
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<&MaskPair>, Vec<&MaskPair>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::usage(format!(
            "validation fraction must lie in [0,1), got {val_fraction}"
        )));
    }
    let sources: BTreeSet<&str> = pairs.iter().map(&source_of).collect();
    let mut sources: Vec<&str> = sources.into_iter().collect();
    if sources.len() < 2 {
        return Err(Error::usage(
            "need at least two source images to split into training and validation",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sources.shuffle(&mut rng);
    let n_val = ((sources.len() as f64 * val_fraction).round() as usize).clamp(1, sources.len() - 1);
    let val: BTreeSet<&str> = sources[..n_val].iter().copied().collect();
    let (v, t): (Vec<_>, Vec<_>) = pairs.iter().partition(|p| val.contains(source_of(p)));
    Ok((t, v))
}
