use super::{Image, Mask};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeMode {
    Nearest,
    Bilinear,
}

/// Corner-aligned source coordinate of output index `i`.
fn source_coord(i: usize, n_in: usize, n_out: usize) -> f64 {
    if n_out == 1 {
        0.0
    } else {
        i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
    }
}

fn resample(
    plane: &[f64],
    (h_in, w_in): (usize, usize),
    (h_out, w_out): (usize, usize),
    mode: ResizeMode,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(h_out * w_out);
    for i in 0..h_out {
        let sy = source_coord(i, h_in, h_out);
        for j in 0..w_out {
            let sx = source_coord(j, w_in, w_out);
            let v = match mode {
                ResizeMode::Nearest => {
                    let y = (sy.round() as usize).min(h_in - 1);
                    let x = (sx.round() as usize).min(w_in - 1);
                    plane[y * w_in + x]
                }
                ResizeMode::Bilinear => {
                    let y0 = (sy.floor() as usize).min(h_in - 1);
                    let x0 = (sx.floor() as usize).min(w_in - 1);
                    let y1 = (y0 + 1).min(h_in - 1);
                    let x1 = (x0 + 1).min(w_in - 1);
                    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                    let at = |y: usize, x: usize| plane[y * w_in + x];
                    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                    top * (1.0 - fy) + bottom * fy
                }
            };
            out.push(v);
        }
    }
    out
}

fn check_target((h, w): (usize, usize)) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::usage("resize target must be positive"));
    }
    Ok(())
}

pub fn resize_image(image: &Image, target: (usize, usize), mode: ResizeMode) -> Result<Image> {
    check_target(target)?;
    let plane = image.height * image.width;
    let mut data = Vec::with_capacity(image.channels * target.0 * target.1);
    for c in 0..image.channels {
        data.extend(resample(
            &image.data[c * plane..(c + 1) * plane],
            (image.height, image.width),
            target,
            mode,
        ));
    }
    Image::new(image.channels, target.0, target.1, data)
}

/// Always nearest-neighbour, so the result stays binary.
pub fn resize_mask(mask: &Mask, target: (usize, usize)) -> Result<Mask> {
    check_target(target)?;
    let plane: Vec<f64> = mask.data.iter().map(|&v| f64::from(v)).collect();
    let out = resample(&plane, (mask.height, mask.width), target, ResizeMode::Nearest);
    Mask::new(target.0, target.1, out.iter().map(|&v| v as u8).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_corner_aligned_row() {
        let img = Image::gray(1, 2, vec![0.0, 1.0]).unwrap();
        let out = resize_image(&img, (1, 4), ResizeMode::Bilinear).unwrap();
        let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in out.data.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_and_constant() {
        let img = Image::gray(3, 5, (0..15).map(|v| v as f64 * 0.1).collect()).unwrap();
        for mode in [ResizeMode::Nearest, ResizeMode::Bilinear] {
            assert_eq!(resize_image(&img, (3, 5), mode).unwrap(), img);
        }
        let c = Image::gray(2, 2, vec![0.25; 4]).unwrap();
        let up = resize_image(&c, (4, 4), ResizeMode::Bilinear).unwrap();
        assert!(up.data.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn masks_stay_binary() {
        let m = Mask::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        let up = resize_mask(&m, (5, 7)).unwrap();
        assert!(up.data.iter().all(|&v| v <= 1));
        assert_eq!(up.get(0, 0), 1);
        assert_eq!(up.get(4, 6), 1);
    }
}
