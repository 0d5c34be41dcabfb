//! Raw loops behind the graph ops. Everything works on batched
//! `[batch, channels, height, width]` buffers.

use super::Real;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.h_out * self.w_out
    }

    fn in_sample(&self) -> usize {
        self.c_in * self.h * self.w
    }

    fn out_sample(&self) -> usize {
        self.c_out * self.out_plane()
    }

    /// A 1x1 kernel without padding reads the input buffer as its own
    /// column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.h_out == self.h && self.w_out == self.w
    }
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.c_in {
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                // output column ox reads input column ox + kj - pad_left
                let lo = g.pad_left.saturating_sub(kj).min(g.w_out);
                let hi = (g.w + g.pad_left).saturating_sub(kj).min(g.w_out).max(lo);
                for oy in 0..g.h_out {
                    let line = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    let iy = oy + ki;
                    if iy < g.pad_top || iy - g.pad_top >= g.h {
                        line.fill(T::zero());
                        continue;
                    }
                    let iy = iy - g.pad_top;
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    if hi > lo {
                        let start = iy * g.w + lo + kj - g.pad_left;
                        line[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.c_in {
        let dst = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                let lo = g.pad_left.saturating_sub(kj).min(g.w_out);
                let hi = (g.w + g.pad_left).saturating_sub(kj).min(g.w_out).max(lo);
                for oy in 0..g.h_out {
                    let iy = oy + ki;
                    if iy < g.pad_top || iy - g.pad_top >= g.h || hi <= lo {
                        continue;
                    }
                    let iy = iy - g.pad_top;
                    let start = iy * g.w + lo + kj - g.pad_left;
                    let line = &src[oy * g.w_out + lo..oy * g.w_out + hi];
                    for (d, &s) in dst[start..start + (hi - lo)].iter_mut().zip(line) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let plane = g.out_plane();
    let klen = g.patch_len();
    let mut out = vec![T::zero(); g.batch * g.out_sample()];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); klen * plane]
    };
    for b in 0..g.batch {
        let xb = &x[b * g.in_sample()..(b + 1) * g.in_sample()];
        let ob = &mut out[b * g.out_sample()..(b + 1) * g.out_sample()];
        if let Some(bias) = bias {
            for (co, chunk) in ob.chunks_mut(plane).enumerate() {
                chunk.fill(bias[co]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        let colsb: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(g, xb, &mut cols);
            &cols
        };
        T::gemm(
            g.c_out,
            klen,
            plane,
            T::one(),
            kernel,
            klen as isize,
            1,
            colsb,
            plane as isize,
            1,
            beta,
            ob,
            plane as isize,
            1,
        );
    }
    out
}

/// Accumulates the requested gradients of a convolution into the provided
/// buffers.
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    kernel: &[T],
    grad_out: &[T],
    mut dx: Option<&mut [T]>,
    mut dkernel: Option<&mut [T]>,
    mut dbias: Option<&mut [T]>,
) {
    let plane = g.out_plane();
    let klen = g.patch_len();
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise || dkernel.is_none() {
        Vec::new()
    } else {
        vec![T::zero(); klen * plane]
    };
    let mut dcols = if pointwise || dx.is_none() {
        Vec::new()
    } else {
        vec![T::zero(); klen * plane]
    };
    for b in 0..g.batch {
        let gb = &grad_out[b * g.out_sample()..(b + 1) * g.out_sample()];
        if let Some(db) = dbias.as_deref_mut() {
            for (co, chunk) in gb.chunks(plane).enumerate() {
                db[co] = chunk.iter().fold(db[co], |acc, &v| acc + v);
            }
        }
        if let Some(dk) = dkernel.as_deref_mut() {
            let xb = &x[b * g.in_sample()..(b + 1) * g.in_sample()];
            let colsb: &[T] = if pointwise {
                xb
            } else {
                im2col(g, xb, &mut cols);
                &cols
            };
            T::gemm(
                g.c_out,
                plane,
                klen,
                T::one(),
                gb,
                plane as isize,
                1,
                colsb,
                1,
                plane as isize,
                T::one(),
                dk,
                klen as isize,
                1,
            );
        }
        if let Some(dxall) = dx.as_deref_mut() {
            let dxb = &mut dxall[b * g.in_sample()..(b + 1) * g.in_sample()];
            if pointwise {
                T::gemm(
                    klen,
                    g.c_out,
                    plane,
                    T::one(),
                    kernel,
                    1,
                    klen as isize,
                    gb,
                    plane as isize,
                    1,
                    T::one(),
                    dxb,
                    plane as isize,
                    1,
                );
            } else {
                T::gemm(
                    klen,
                    g.c_out,
                    plane,
                    T::one(),
                    kernel,
                    1,
                    klen as isize,
                    gb,
                    plane as isize,
                    1,
                    T::zero(),
                    &mut dcols,
                    plane as isize,
                    1,
                );
                col2im_add(g, &dcols, dxb);
            }
        }
    }
}

/// 2x2 max pooling. Returns the pooled values and, per output cell, the flat
/// input index of the winning element (first maximum in row-major order).
pub(crate) fn maxpool2_forward<T: Real>(
    planes: usize,
    h: usize,
    w: usize,
    x: &[T],
) -> (Vec<T>, Vec<usize>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut arg = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub(crate) fn upsample2_forward<T: Real>(planes: usize, h: usize, w: usize, x: &[T]) -> Vec<T> {
    let wo = 2 * w;
    let mut out = vec![T::zero(); planes * 4 * h * w];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..h {
            for xx in 0..w {
                let v = src[y * w + xx];
                let o = 2 * y * wo + 2 * xx;
                dst[o] = v;
                dst[o + 1] = v;
                dst[o + wo] = v;
                dst[o + wo + 1] = v;
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Real>(
    planes: usize,
    h: usize,
    w: usize,
    grad_out: &[T],
    dx: &mut [T],
) {
    let wo = 2 * w;
    for p in 0..planes {
        let src = &grad_out[p * 4 * h * w..(p + 1) * 4 * h * w];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let o = 2 * y * wo + 2 * xx;
                dst[y * w + xx] = dst[y * w + xx] + src[o] + src[o + 1] + src[o + wo] + src[o + wo + 1];
            }
        }
    }
}
