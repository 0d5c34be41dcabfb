//! Surrounding-tissue training targets for lung CT slices.
//!
//! Clamp to `[-512, 512]`, min-max normalize, binarize at 0.5, add the lung
//! mask, open with a 3x3 square, subtract the lung mask again. At test time
//! the lung is recovered as the holes enclosed by the predicted tissue.

use std::collections::VecDeque;

use super::{Image, Mask};
use crate::error::{Error, Result};

pub const CLAMP_LIMIT: f64 = 512.0;
pub const BINARY_THRESHOLD: f64 = 0.5;

pub fn clamp_intensity(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| v.clamp(-CLAMP_LIMIT, CLAMP_LIMIT)).collect()
}

/// Maps min to 0 and max to 1. A constant input yields zeros and `true`.
pub fn min_max_normalize(values: &[f64]) -> (Vec<f64>, bool) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range.is_nan() || range <= 0.0 {
        return (vec![0.0; values.len()], true);
    }
    let out = values
        .iter()
        .map(|&v| if v == hi { 1.0 } else { (v - lo) / range })
        .collect();
    (out, false)
}

pub fn binarize(values: &[f64], threshold: f64) -> Vec<u8> {
    values.iter().map(|&v| u8::from(v >= threshold)).collect()
}

fn morph(mask: &Mask, erode: bool) -> Mask {
    let (h, w) = (mask.height as isize, mask.width as isize);
    // erosion treats outside pixels as foreground, dilation as background
    let outside = u8::from(erode);
    let mut out = Vec::with_capacity(mask.data.len());
    for y in 0..h {
        for x in 0..w {
            let mut acc = erode;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (yy, xx) = (y + dy, x + dx);
                    let v = if yy < 0 || xx < 0 || yy >= h || xx >= w {
                        outside
                    } else {
                        mask.data[(yy * w + xx) as usize]
                    };
                    if erode {
                        acc &= v == 1;
                    } else {
                        acc |= v == 1;
                    }
                }
            }
            out.push(u8::from(acc));
        }
    }
    Mask {
        height: mask.height,
        width: mask.width,
        data: out,
    }
}

/// Binary opening (erosion then dilation) with a 3x3 square.
pub fn opening(mask: &Mask) -> Mask {
    morph(&morph(mask, true), false)
}

/// Sets every background pixel not 4-connected to the border.
pub fn fill_holes(mask: &Mask) -> Mask {
    let (h, w) = (mask.height, mask.width);
    let mut outside = vec![false; h * w];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let border = y == 0 || x == 0 || y == h - 1 || x == w - 1;
            if border && mask.data[y * w + x] == 0 {
                outside[y * w + x] = true;
                queue.push_back((y, x));
            }
        }
    }
    while let Some((y, x)) = queue.pop_front() {
        let mut visit = |yy: usize, xx: usize| {
            let i = yy * w + xx;
            if !outside[i] && mask.data[i] == 0 {
                outside[i] = true;
                queue.push_back((yy, xx));
            }
        };
        if y > 0 {
            visit(y - 1, x);
        }
        if y + 1 < h {
            visit(y + 1, x);
        }
        if x > 0 {
            visit(y, x - 1);
        }
        if x + 1 < w {
            visit(y, x + 1);
        }
    }
    Mask {
        height: h,
        width: w,
        data: outside.iter().map(|&o| u8::from(!o)).collect(),
    }
}

/// Lung estimate: the region enclosed by, but not part of, the tissue mask.
pub fn lung_from_surrounding(surrounding: &Mask) -> Mask {
    let filled = fill_holes(surrounding);
    Mask {
        height: surrounding.height,
        width: surrounding.width,
        data: filled
            .data
            .iter()
            .zip(&surrounding.data)
            .map(|(&f, &s)| f & (1 - s))
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LungResult {
    pub surrounding: Mask,
    /// The slice had zero intensity range after clamping.
    pub constant_slice: bool,
}

pub fn lung_preprocess(x: &Image, gt: &Mask) -> Result<LungResult> {
    if x.channels != 1 {
        return Err(Error::usage(format!(
            "CT slice must have one channel, got {}",
            x.channels
        )));
    }
    if (x.height, x.width) != (gt.height, gt.width) {
        return Err(Error::dim(format!(
            "slice is {}x{} but lung mask is {}x{}",
            x.height, x.width, gt.height, gt.width
        )));
    }
    let (norm, constant_slice) = min_max_normalize(&clamp_intensity(&x.data));
    let bin = binarize(&norm, BINARY_THRESHOLD);
    let union = Mask {
        height: gt.height,
        width: gt.width,
        data: bin.iter().zip(&gt.data).map(|(&a, &b)| a | b).collect(),
    };
    let opened = opening(&union);
    let surrounding = Mask {
        height: gt.height,
        width: gt.width,
        data: opened.data.iter().zip(&gt.data).map(|(&a, &b)| a & (1 - b)).collect(),
    };
    Ok(LungResult {
        surrounding,
        constant_slice,
    })
}
