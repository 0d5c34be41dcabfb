//! Convolutional LSTM with per-cell peepholes, and its bidirectional wrapper.
//!
//! One step of the cell:
//!
//! ```text
//! i  = sigmoid(W_xi * x + W_hi * H + W_ci . C  + b_i)
//! f  = sigmoid(W_xf * x + W_hf * H + W_cf . C  + b_f)
//! C' = f . C + i . tanh(W_xc * x + W_hc * H + b_c)
//! o  = sigmoid(W_xo * x + W_ho * H + W_co . C' + b_o)
//! H' = o . tanh(C')
//! ```
//!
//! `*` is a `same` convolution and `.` the elementwise product. The output
//! gate peeks at the updated cell `C'`. Peepholes are `[F, H, W]` tensors, so
//! a cell is bound to one spatial resolution.

use rand::Rng;

use super::{glorot_kernel, ParamId, ParamStore, Session};
use crate::error::{Error, Result};
use crate::tensor::{Padding, Real, Tensor, Var};

/// Gate order used for the `W_x*`, `W_h*` and `b_*` arrays.
pub const GATE_NAMES: [&str; 4] = ["i", "f", "c", "o"];
const I: usize = 0;
const F: usize = 1;
const C: usize = 2;
const O: usize = 3;

/// Recurrent pair `(H, C)`.
#[derive(Clone, Copy, Debug)]
pub struct CellState {
    pub h: Var,
    pub c: Var,
}

/// Result of one cell step, including the gate activations.
#[derive(Clone, Copy, Debug)]
pub struct CellStep {
    pub state: CellState,
    pub input_gate: Var,
    pub forget_gate: Var,
    pub output_gate: Var,
}

#[derive(Clone, Debug)]
pub struct ConvLstmCell {
    /// Input-to-state kernels `[F, C_in, k, k]`, gate order i, f, c, o.
    pub w_x: [ParamId; 4],
    /// State-to-state kernels `[F, F, k, k]`, gate order i, f, c, o.
    pub w_h: [ParamId; 4],
    /// Peepholes `[F, H, W]` for the i, f and o gates.
    pub w_c: [ParamId; 3],
    /// Biases `[F]`, gate order i, f, c, o.
    pub bias: [ParamId; 4],
    pub hidden: usize,
}

impl ConvLstmCell {
    /// Kernels get Glorot-uniform values, peepholes and biases start at zero
    /// except the forget bias, which starts at 1.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        hidden: usize,
        kernel: usize,
        spatial: (usize, usize),
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::usage(format!(
                "ConvLSTM kernel must be odd, got {kernel}"
            )));
        }
        let mut w_x = Vec::with_capacity(4);
        for g in GATE_NAMES {
            w_x.push(store.add_param(
                format!("{name}.w_x{g}"),
                glorot_kernel(rng, [hidden, c_in, kernel, kernel]),
            )?);
        }
        let mut w_h = Vec::with_capacity(4);
        for g in GATE_NAMES {
            w_h.push(store.add_param(
                format!("{name}.w_h{g}"),
                glorot_kernel(rng, [hidden, hidden, kernel, kernel]),
            )?);
        }
        let mut w_c = Vec::with_capacity(3);
        for g in ["i", "f", "o"] {
            w_c.push(store.add_param(
                format!("{name}.w_c{g}"),
                Tensor::zeros(&[hidden, spatial.0, spatial.1]),
            )?);
        }
        let mut bias = Vec::with_capacity(4);
        for g in GATE_NAMES {
            let init = if g == "f" { T::one() } else { T::zero() };
            bias.push(store.add_param(format!("{name}.b_{g}"), Tensor::full(&[hidden], init))?);
        }
        Ok(Self {
            w_x: w_x.try_into().expect("4 gates"),
            w_h: w_h.try_into().expect("4 gates"),
            w_c: w_c.try_into().expect("3 peepholes"),
            bias: bias.try_into().expect("4 gates"),
            hidden,
        })
    }

    /// Advances the cell by one input. `state = None` is the all-zero
    /// initial state; the state-to-state and peephole terms vanish then and
    /// are not evaluated.
    pub fn step<T: Real>(
        &self,
        s: &mut Session<'_, T>,
        x: Var,
        state: Option<&CellState>,
    ) -> Result<CellStep> {
        let xs = s.graph.shape(x).to_vec();
        if xs.len() < 3 {
            return Err(Error::dim(format!(
                "ConvLSTM input must be an image tensor, got {xs:?}"
            )));
        }
        let axis = xs.len() - 3;
        let spatial = &xs[axis + 1..];
        let peep_shape = s.store().get(self.w_c[0]).shape();
        if peep_shape[1..] != *spatial {
            return Err(Error::dim(format!(
                "ConvLSTM input is {}x{} but the cell is built for {}x{}",
                spatial[0], spatial[1], peep_shape[1], peep_shape[2]
            )));
        }
        let f = self.hidden;

        // All four gates share one convolution over stacked kernels.
        let wx: Vec<Var> = self.w_x.iter().map(|&p| s.var(p)).collect();
        let b: Vec<Var> = self.bias.iter().map(|&p| s.var(p)).collect();
        let wx = s.graph.concat(&wx, 0)?;
        let b = s.graph.concat(&b, 0)?;
        let mut pre = s.graph.conv2d(x, wx, Some(b), Padding::Same)?;
        if let Some(st) = state {
            let mut expect = xs.clone();
            expect[axis] = f;
            if s.graph.shape(st.h) != expect || s.graph.shape(st.c) != expect {
                return Err(Error::dim(format!(
                    "ConvLSTM state {:?} does not match expected {expect:?}",
                    s.graph.shape(st.h)
                )));
            }
            let wh: Vec<Var> = self.w_h.iter().map(|&p| s.var(p)).collect();
            let wh = s.graph.concat(&wh, 0)?;
            let rec = s.graph.conv2d(st.h, wh, None, Padding::Same)?;
            pre = s.graph.add(pre, rec)?;
        }
        let gate = |s: &mut Session<'_, T>, g: usize| s.graph.narrow(pre, axis, g * f, f);
        let mut a_i = gate(s, I)?;
        let mut a_f = gate(s, F)?;
        let a_c = gate(s, C)?;
        let mut a_o = gate(s, O)?;

        if let Some(st) = state {
            let wci = s.var(self.w_c[0]);
            let wcf = s.var(self.w_c[1]);
            let pi = s.graph.mul_broadcast(st.c, wci)?;
            let pf = s.graph.mul_broadcast(st.c, wcf)?;
            a_i = s.graph.add(a_i, pi)?;
            a_f = s.graph.add(a_f, pf)?;
        }
        let i = s.graph.sigmoid(a_i);
        let fg = s.graph.sigmoid(a_f);
        let cand = s.graph.tanh(a_c);
        let mut c_new = s.graph.hadamard(i, cand)?;
        if let Some(st) = state {
            let carry = s.graph.hadamard(fg, st.c)?;
            c_new = s.graph.add(carry, c_new)?;
        }
        let wco = s.var(self.w_c[2]);
        let po = s.graph.mul_broadcast(c_new, wco)?;
        a_o = s.graph.add(a_o, po)?;
        let o = s.graph.sigmoid(a_o);
        let tc = s.graph.tanh(c_new);
        let h_new = s.graph.hadamard(o, tc)?;
        Ok(CellStep {
            state: CellState { h: h_new, c: c_new },
            input_gate: i,
            forget_gate: fg,
            output_gate: o,
        })
    }
}

/// Two independent ConvLSTMs over a length-2 sequence in opposite
/// directions, fused as `tanh(W_yf * H_fwd + W_yb * H_bwd + b_y)`.
///
/// Each direction contributes its final hidden state, i.e. the state after
/// it has consumed both sequence elements.
#[derive(Clone, Debug)]
pub struct BConvLstm {
    pub forward_cell: ConvLstmCell,
    pub backward_cell: ConvLstmCell,
    /// `[F_out, F, k, k]`
    pub w_y_fwd: ParamId,
    /// `[F_out, F, k, k]`
    pub w_y_bwd: ParamId,
    /// `[F_out]`
    pub b_y: ParamId,
}

impl BConvLstm {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        hidden: usize,
        c_out: usize,
        kernel: usize,
        spatial: (usize, usize),
    ) -> Result<Self> {
        let forward_cell = ConvLstmCell::new(
            store,
            rng,
            &format!("{name}.fwd"),
            c_in,
            hidden,
            kernel,
            spatial,
        )?;
        let backward_cell = ConvLstmCell::new(
            store,
            rng,
            &format!("{name}.bwd"),
            c_in,
            hidden,
            kernel,
            spatial,
        )?;
        let w_y_fwd = store.add_param(
            format!("{name}.w_y_fwd"),
            glorot_kernel(rng, [c_out, hidden, kernel, kernel]),
        )?;
        let w_y_bwd = store.add_param(
            format!("{name}.w_y_bwd"),
            glorot_kernel(rng, [c_out, hidden, kernel, kernel]),
        )?;
        let b_y = store.add_param(format!("{name}.b_y"), Tensor::zeros(&[c_out]))?;
        Ok(Self {
            forward_cell,
            backward_cell,
            w_y_fwd,
            w_y_bwd,
            b_y,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, seq: &[Var]) -> Result<Var> {
        let &[first, second] = seq else {
            return Err(Error::usage(format!(
                "bidirectional ConvLSTM takes a sequence of exactly 2 tensors, got {}",
                seq.len()
            )));
        };
        if s.graph.shape(first) != s.graph.shape(second) {
            return Err(Error::dim(format!(
                "sequence elements differ in shape: {:?} vs {:?}",
                s.graph.shape(first),
                s.graph.shape(second)
            )));
        }
        let f1 = self.forward_cell.step(s, first, None)?;
        let f2 = self.forward_cell.step(s, second, Some(&f1.state))?;
        let b1 = self.backward_cell.step(s, second, None)?;
        let b2 = self.backward_cell.step(s, first, Some(&b1.state))?;

        let wf = s.var(self.w_y_fwd);
        let wb = s.var(self.w_y_bwd);
        let by = s.var(self.b_y);
        let yf = s.graph.conv2d(f2.state.h, wf, Some(by), Padding::Same)?;
        let yb = s.graph.conv2d(b2.state.h, wb, None, Padding::Same)?;
        let y = s.graph.add(yf, yb)?;
        Ok(s.graph.tanh(y))
    }
}
