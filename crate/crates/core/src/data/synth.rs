//! Seeded synthetic stand-ins for real segmentation datasets.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Image, Mask, MaskPair};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    /// Bright filled circles on a darker noisy background.
    Discs,
    /// Dark thin curves on a brighter noisy background.
    Vessels,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discs" => Ok(SynthKind::Discs),
            "vessels" => Ok(SynthKind::Vessels),
            other => Err(Error::usage(format!(
                "unknown synthetic dataset {other:?} (expected discs or vessels)"
            ))),
        }
    }
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Discs => "discs",
            SynthKind::Vessels => "vessels",
        }
    }
}

const SUPERSAMPLE: usize = 4;

/// Fraction of pixel `(y, x)` covered by `inside`, from a 4x4 sub-grid.
fn coverage(y: usize, x: usize, inside: impl Fn(f64, f64) -> bool) -> f64 {
    let mut hits = 0;
    for sy in 0..SUPERSAMPLE {
        for sx in 0..SUPERSAMPLE {
            let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
            let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
            if inside(py, px) {
                hits += 1;
            }
        }
    }
    hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
}

fn render(
    rng: &mut ChaCha8Rng,
    size: usize,
    background: f64,
    foreground: f64,
    noise: f64,
    inside: impl Fn(f64, f64) -> bool,
) -> (Image, Mask) {
    let mut pixels = Vec::with_capacity(size * size);
    let mut mask = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let cov = coverage(y, x, &inside);
            let n = if noise > 0.0 { rng.gen_range(-noise..noise) } else { 0.0 };
            pixels.push((background + cov * (foreground - background) + n).clamp(0.0, 1.0));
            mask.push(u8::from(inside(y as f64 + 0.5, x as f64 + 0.5)));
        }
    }
    (
        Image::gray(size, size, pixels).expect("square"),
        Mask::new(size, size, mask).expect("binary"),
    )
}

/// A single noiseless disc; the mask marks pixel centres inside the circle.
pub fn disc_pair(size: usize, center: (f64, f64), radius: f64) -> (Image, Mask) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    render(&mut rng, size, 0.0, 1.0, 0.0, |y, x| {
        (y - center.0).powi(2) + (x - center.1).powi(2) <= radius * radius
    })
}

fn discs(rng: &mut ChaCha8Rng, size: usize) -> (Image, Mask) {
    let s = size as f64;
    let n = rng.gen_range(1..=3);
    let circles: Vec<(f64, f64, f64)> = (0..n)
        .map(|_| {
            let r = rng.gen_range(s * 0.08..s * 0.22);
            let cy = rng.gen_range(r..s - r);
            let cx = rng.gen_range(r..s - r);
            (cy, cx, r)
        })
        .collect();
    let background = rng.gen_range(0.1..0.3);
    let foreground = rng.gen_range(0.7..0.9);
    render(rng, size, background, foreground, 0.05, move |y, x| {
        circles
            .iter()
            .any(|&(cy, cx, r)| (y - cy).powi(2) + (x - cx).powi(2) <= r * r)
    })
}

fn vessels(rng: &mut ChaCha8Rng, size: usize) -> (Image, Mask) {
    let s = size as f64;
    let mut segments: Vec<(f64, f64, f64)> = Vec::new();
    for _ in 0..rng.gen_range(2..=4) {
        let half_width = f64::from(rng.gen_range(1..=3u8)) / 2.0;
        let (mut y, mut x) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
        let mut angle = rng.gen_range(0.0..2.0 * PI);
        let mut turn = 0.0;
        for _ in 0..(size * 3) {
            segments.push((y, x, half_width));
            turn = 0.9 * turn + rng.gen_range(-0.05..0.05);
            angle += turn;
            y += 0.5 * angle.sin();
            x += 0.5 * angle.cos();
            if !(-2.0..s + 2.0).contains(&y) || !(-2.0..s + 2.0).contains(&x) {
                break;
            }
        }
    }
    render(rng, size, 0.75, 0.25, 0.05, move |py, px| {
        segments
            .iter()
            .any(|&(y, x, hw)| (py - y).powi(2) + (px - x).powi(2) <= hw * hw)
    })
}

/// `n` image/mask pairs with ids `{kind}{index:03}`.
pub fn synth_dataset(kind: SynthKind, n: usize, size: usize, seed: u64) -> Result<Vec<MaskPair>> {
    if n == 0 {
        return Err(Error::usage("synthetic dataset needs n >= 1"));
    }
    if size < 4 {
        return Err(Error::usage(format!("synthetic image size {size} is below 4")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (image, mask) = match kind {
                SynthKind::Discs => discs(&mut rng, size),
                SynthKind::Vessels => vessels(&mut rng, size),
            };
            MaskPair::new(format!("{}{i:03}", kind.name()), image, mask)
        })
        .collect()
}

/// CT-like slice in raw intensity units with its lung mask.
///
/// Air outside the body near -1000, soft tissue near 40 with bone spots
/// above 512, two dark lung lobes inside the body, and bright specks of
/// noise scattered through the air.
pub fn synth_ct_slice(size: usize, seed: u64) -> (Image, Mask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let c = s / 2.0;
    let (body_ry, body_rx) = (s * rng.gen_range(0.36..0.44), s * rng.gen_range(0.40..0.47));
    let lung_ry = body_ry * rng.gen_range(0.55..0.7);
    let lung_rx = body_rx * rng.gen_range(0.28..0.36);
    let offset = body_rx * rng.gen_range(0.40..0.48);
    let inside = |y: f64, x: f64, cy: f64, cx: f64, ry: f64, rx: f64| {
        ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2) <= 1.0
    };
    let mut values = Vec::with_capacity(size * size);
    let mut gt = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let lung = inside(py, px, c, c - offset, lung_ry, lung_rx)
                || inside(py, px, c, c + offset, lung_ry, lung_rx);
            let body = inside(py, px, c, c, body_ry, body_rx);
            let v = if lung {
                if rng.gen_bool(0.03) {
                    rng.gen_range(0.0..150.0)
                } else {
                    rng.gen_range(-900.0..-700.0)
                }
            } else if body {
                if rng.gen_bool(0.02) {
                    rng.gen_range(600.0..1200.0)
                } else {
                    rng.gen_range(0.0..80.0)
                }
            } else if rng.gen_bool(0.01) {
                rng.gen_range(100.0..300.0)
            } else {
                rng.gen_range(-1050.0..-950.0)
            };
            values.push(v);
            gt.push(u8::from(lung));
        }
    }
    (
        Image::gray(size, size, values).expect("square"),
        Mask::new(size, size, gt).expect("binary"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disc_area_matches_geometry() {
        let (img, mask) = disc_pair(64, (32.0, 30.0), 12.0);
        let expect = PI * 144.0;
        let got = mask.count() as f64;
        assert!((got - expect).abs() / expect < 0.05, "{got} vs {expect}");
        let ink: f64 = img.data.iter().sum();
        assert!((ink - expect).abs() / expect < 0.01);
    }

    #[test]
    fn same_seed_same_data() {
        for kind in [SynthKind::Discs, SynthKind::Vessels] {
            let a = synth_dataset(kind, 3, 32, 9).unwrap();
            assert_eq!(a, synth_dataset(kind, 3, 32, 9).unwrap());
            assert_ne!(a, synth_dataset(kind, 3, 32, 10).unwrap());
        }
    }

    #[test]
    fn zero_count_is_usage_error() {
        assert!(matches!(
            synth_dataset(SynthKind::Discs, 0, 32, 0),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn both_classes_present() {
        for p in synth_dataset(SynthKind::Vessels, 4, 64, 1).unwrap() {
            let n = p.mask.count();
            assert!(n > 0 && n < 64 * 64, "{}: {n}", p.id);
        }
        let (_, gt) = synth_ct_slice(64, 2);
        assert!(gt.count() > 100);
    }
}
