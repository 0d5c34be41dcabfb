#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use bcdunet::nn::{ConvLstmCell, ParamId, ParamStore};
use bcdunet::Tensor;

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, random_vec(rng, n, scale)).unwrap()
}

/// Plain nested-loop `same` cross-correlation of one `[C,H,W]` image with a
/// `[O,C,k,k]` kernel (odd k). No bias.
pub fn conv_same(x: &[f64], c: usize, h: usize, w: usize, k: &[f64], o: usize, ks: usize) -> Vec<f64> {
    let p = (ks / 2) as isize;
    let mut out = vec![0.0; o * h * w];
    for oc in 0..o {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for ic in 0..c {
                    for ky in 0..ks {
                        for kx in 0..ks {
                            let sy = y as isize + ky as isize - p;
                            let sx = xx as isize + kx as isize - p;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            acc += x[(ic * h + sy as usize) * w + sx as usize]
                                * k[((oc * c + ic) * ks + ky) * ks + kx];
                        }
                    }
                }
                out[(oc * h + y) * w + xx] = acc;
            }
        }
    }
    out
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Raw parameters of one ConvLSTM cell, gate order i, f, c, o.
pub struct LstmParams {
    pub c_in: usize,
    pub hidden: usize,
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub w_x: [Vec<f64>; 4],
    pub w_h: [Vec<f64>; 4],
    /// peepholes i, f, o
    pub w_c: [Vec<f64>; 3],
    pub b: [Vec<f64>; 4],
}

pub struct LstmOut {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

/// One step written out line by line from the gate equations.
pub fn lstm_step_oracle(p: &LstmParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmOut {
    let (f_, hh, ww, k) = (p.hidden, p.h, p.w, p.k);
    let plane = hh * ww;
    let zx: Vec<Vec<f64>> = (0..4).map(|g| conv_same(x, p.c_in, hh, ww, &p.w_x[g], f_, k)).collect();
    let zh: Vec<Vec<f64>> = (0..4).map(|g| conv_same(h_prev, f_, hh, ww, &p.w_h[g], f_, k)).collect();
    let n = f_ * plane;
    let mut out = LstmOut {
        i: vec![0.0; n],
        f: vec![0.0; n],
        o: vec![0.0; n],
        c: vec![0.0; n],
        h: vec![0.0; n],
    };
    for j in 0..n {
        let ch = j / plane;
        let i = sigmoid(zx[0][j] + zh[0][j] + p.w_c[0][j] * c_prev[j] + p.b[0][ch]);
        let f = sigmoid(zx[1][j] + zh[1][j] + p.w_c[1][j] * c_prev[j] + p.b[1][ch]);
        let c = f * c_prev[j] + i * (zx[2][j] + zh[2][j] + p.b[2][ch]).tanh();
        let o = sigmoid(zx[3][j] + zh[3][j] + p.w_c[2][j] * c + p.b[3][ch]);
        out.i[j] = i;
        out.f[j] = f;
        out.o[j] = o;
        out.c[j] = c;
        out.h[j] = o * c.tanh();
    }
    out
}

pub fn fill(store: &mut ParamStore<f64>, id: ParamId, rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    for v in store.get_mut(id).data_mut() {
        *v = rng.gen_range(-scale..scale);
    }
    store.get(id).data().to_vec()
}

pub fn zero_all(store: &mut ParamStore<f64>) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        if store.is_trainable(id) {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

pub fn randomize_cell(store: &mut ParamStore<f64>, cell: &ConvLstmCell, rng: &mut ChaCha8Rng, c_in: usize, h: usize, w: usize) -> LstmParams {
    let mut take4 = |ids: &[ParamId; 4], scale: f64, store: &mut ParamStore<f64>| -> [Vec<f64>; 4] {
        [0, 1, 2, 3].map(|g| fill(store, ids[g], rng, scale))
    };
    let w_x = take4(&cell.w_x, 0.5, store);
    let w_h = take4(&cell.w_h, 0.5, store);
    let b = take4(&cell.bias, 1.0, store);
    let w_c = [0, 1, 2].map(|g| fill(store, cell.w_c[g], rng, 1.0));
    LstmParams {
        c_in,
        hidden: cell.hidden,
        k: 3,
        h,
        w,
        w_x,
        w_h,
        w_c,
        b,
    }
}

/// The 8x8 lung slice traced by hand. Air -1000, tissue 40, bone 900 at
/// (1,1), 600 at (5,5), a 300 speck at (0,7), a one-pixel tissue spur at
/// (7,3), and lung -800 on the 2x2 block at rows/cols 3..=4.
pub fn hand_slice() -> (Vec<f64>, Vec<u8>) {
    const AIR: f64 = -1000.0;
    const TISSUE: f64 = 40.0;
    let mut x = vec![AIR; 64];
    let mut set = |y: usize, c: usize, v: f64| x[y * 8 + c] = v;
    for c in 1..=6 {
        set(1, c, TISSUE);
        set(6, c, TISSUE);
    }
    for y in 2..=5 {
        for c in 0..=6 {
            set(y, c, TISSUE);
        }
    }
    set(1, 1, 900.0);
    set(5, 5, 600.0);
    set(0, 7, 300.0);
    set(7, 3, TISSUE);
    let mut gt = vec![0u8; 64];
    for y in 3..=4 {
        for c in 3..=4 {
            set(y, c, -800.0);
            gt[y * 8 + c] = 1;
        }
    }
    (x, gt)
}

pub fn grid(rows: [&str; 8]) -> Vec<u8> {
    rows.iter()
        .flat_map(|r| r.bytes().map(|b| b - b'0'))
        .collect()
}

/// Binarized slice (threshold 0.5 after clamping and min-max scaling).
pub fn hand_binary() -> Vec<u8> {
    grid([
        "00000001", "01111110", "11111110", "11100110", "11100110", "11111110", "01111110", "00010000",
    ])
}

/// Union with the lung mask, then opened: the speck and the spur are gone.
pub fn hand_opened() -> Vec<u8> {
    grid([
        "00000000", "01111110", "11111110", "11111110", "11111110", "11111110", "01111110", "00000000",
    ])
}

/// Final surrounding mask: opening result minus the lung mask.
pub fn hand_surrounding() -> Vec<u8> {
    grid([
        "00000000", "01111110", "11111110", "11100110", "11100110", "11111110", "01111110", "00000000",
    ])
}
