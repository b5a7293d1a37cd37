//! LSTM cell without peephole connections.
//!
//! Gates are logistic, the candidate and the cell probe are tanh:
//!
//! ```text
//! i,f,o = sigma(x W_x + h_prev W_h)      g = tanh(x W_x + h_prev W_h)
//! c = f . c_prev + i . g                 h = o . tanh(c)
//! ```
//!
//! All step-(tau-1) values are zero at tau = 0. The cell owns only its eight
//! weight matrices; recurrent state lives in [`LstmState`] so inference can
//! run step by step while feeding predictions back into the input.

use super::activation::sigmoid;
use super::tensor::{matmul, matmul_a_bt, matmul_at_b};
use super::{Param, Tensor};

pub const GATES: [&str; 4] = ["i", "f", "o", "g"];

#[derive(Debug, Clone)]
pub struct LstmCell {
    /// Input-to-hidden weights per gate, each `[f_in, f_h]`.
    pub w_input: [Param; 4],
    /// Hidden-to-hidden weights per gate, each `[f_h, f_h]`.
    pub w_hidden: [Param; 4],
}

/// Recurrent state for a batch: hidden and cell values, `[t, f_h]`.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        LstmState {
            h: Tensor::zeros(&[batch, hidden]),
            c: Tensor::zeros(&[batch, hidden]),
        }
    }
}

/// Everything the backward pass needs about one forward step.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    pub x: Tensor,
    pub h_prev: Tensor,
    pub c_prev: Tensor,
    pub gates: [Tensor; 4],
    pub tanh_c: Tensor,
}

impl LstmCell {
    pub fn input_size(&self) -> usize {
        self.w_input[0].value.shape()[0]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_input[0].value.shape()[1]
    }

    /// Advance one time step; returns the new state and the backward cache.
    pub fn step(&self, x: &Tensor, state: &LstmState) -> (LstmState, LstmStepCache) {
        let mut pre: Vec<Tensor> = Vec::with_capacity(4);
        for gate in 0..4 {
            let mut a = matmul(x, &self.w_input[gate].value);
            let b = matmul(&state.h, &self.w_hidden[gate].value);
            for (av, bv) in a.data_mut().iter_mut().zip(b.data()) {
                *av += bv;
            }
            pre.push(a);
        }
        let squash = |idx: usize, t: &Tensor| -> Tensor {
            let mut out = t.clone();
            for v in out.data_mut() {
                *v = if idx == 3 { v.tanh() } else { sigmoid(*v) };
            }
            out
        };
        let gates: [Tensor; 4] = [
            squash(0, &pre[0]),
            squash(1, &pre[1]),
            squash(2, &pre[2]),
            squash(3, &pre[3]),
        ];

        let mut c = Tensor::zeros(state.c.shape());
        for idx in 0..c.len() {
            c.data_mut()[idx] = gates[1].data()[idx] * state.c.data()[idx]
                + gates[0].data()[idx] * gates[3].data()[idx];
        }
        let mut tanh_c = c.clone();
        for v in tanh_c.data_mut() {
            *v = v.tanh();
        }
        let mut h = Tensor::zeros(c.shape());
        for idx in 0..h.len() {
            h.data_mut()[idx] = gates[2].data()[idx] * tanh_c.data()[idx];
        }

        let cache = LstmStepCache {
            x: x.clone(),
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            gates,
            tanh_c: tanh_c.clone(),
        };
        (LstmState { h, c }, cache)
    }

    /// Backward through one step. `dh`/`dc` are gradients flowing into this
    /// step's outputs; returns `(dx, dh_prev, dc_prev)` and accumulates the
    /// weight gradients.
    pub fn step_backward(
        &mut self,
        cache: &LstmStepCache,
        dh: &Tensor,
        dc_in: &Tensor,
    ) -> (Tensor, Tensor, Tensor) {
        let n = dh.len();
        let [gi, gf, go, gg] = &cache.gates;

        let mut dc = dc_in.clone();
        let mut d_o = Tensor::zeros(dh.shape());
        for idx in 0..n {
            d_o.data_mut()[idx] = dh.data()[idx] * cache.tanh_c.data()[idx];
            let th = cache.tanh_c.data()[idx];
            dc.data_mut()[idx] += dh.data()[idx] * go.data()[idx] * (1.0 - th * th);
        }

        let mut da = [
            Tensor::zeros(dh.shape()),
            Tensor::zeros(dh.shape()),
            Tensor::zeros(dh.shape()),
            Tensor::zeros(dh.shape()),
        ];
        let mut dc_prev = Tensor::zeros(dh.shape());
        for idx in 0..n {
            let (iv, fv, ov, gv) = (
                gi.data()[idx],
                gf.data()[idx],
                go.data()[idx],
                gg.data()[idx],
            );
            let dcv = dc.data()[idx];
            da[0].data_mut()[idx] = dcv * gv * iv * (1.0 - iv);
            da[1].data_mut()[idx] = dcv * cache.c_prev.data()[idx] * fv * (1.0 - fv);
            da[2].data_mut()[idx] = d_o.data()[idx] * ov * (1.0 - ov);
            da[3].data_mut()[idx] = dcv * iv * (1.0 - gv * gv);
            dc_prev.data_mut()[idx] = dcv * fv;
        }

        let mut dx = Tensor::zeros(cache.x.shape());
        let mut dh_prev = Tensor::zeros(cache.h_prev.shape());
        for gate in 0..4 {
            let dwx = matmul_at_b(&cache.x, &da[gate]);
            for (g, d) in self.w_input[gate]
                .grad
                .data_mut()
                .iter_mut()
                .zip(dwx.data())
            {
                *g += d;
            }
            let dwh = matmul_at_b(&cache.h_prev, &da[gate]);
            for (g, d) in self.w_hidden[gate]
                .grad
                .data_mut()
                .iter_mut()
                .zip(dwh.data())
            {
                *g += d;
            }
            let dxg = matmul_a_bt(&da[gate], &self.w_input[gate].value);
            for (a, b) in dx.data_mut().iter_mut().zip(dxg.data()) {
                *a += b;
            }
            let dhg = matmul_a_bt(&da[gate], &self.w_hidden[gate].value);
            for (a, b) in dh_prev.data_mut().iter_mut().zip(dhg.data()) {
                *a += b;
            }
        }
        (dx, dh_prev, dc_prev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;

    fn zero_cell(f_in: usize, f_h: usize) -> LstmCell {
        let mk = |name: &str, rows: usize| {
            Param::new(
                format!("lstm.{name}"),
                ParamKind::Weight,
                Tensor::zeros(&[rows, f_h]),
            )
        };
        LstmCell {
            w_input: [
                mk("wx.i", f_in),
                mk("wx.f", f_in),
                mk("wx.o", f_in),
                mk("wx.g", f_in),
            ],
            w_hidden: [
                mk("wh.i", f_h),
                mk("wh.f", f_h),
                mk("wh.o", f_h),
                mk("wh.g", f_h),
            ],
        }
    }

    #[test]
    fn zero_weights_halve_cell_state() {
        // All pre-activations are 0: gates = 0.5, candidate = 0,
        // so c = 0.5 * c_prev and h = 0.5 * tanh(c).
        let cell = zero_cell(3, 2);
        let x = Tensor::filled(&[1, 3], 1.0);
        let state = LstmState {
            h: Tensor::filled(&[1, 2], 0.3),
            c: Tensor::filled(&[1, 2], 0.8),
        };
        let (next, cache) = cell.step(&x, &state);
        for gate in 0..3 {
            assert!(cache.gates[gate].data().iter().all(|&v| v == 0.5));
        }
        assert!(cache.gates[3].data().iter().all(|&v| v == 0.0));
        assert!(next.c.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
        let expect_h = 0.5 * 0.4f64.tanh();
        assert!(next.h.data().iter().all(|&v| (v - expect_h).abs() < 1e-15));
    }

    #[test]
    fn gates_stay_in_open_unit_interval() {
        let mut cell = zero_cell(2, 2);
        for p in cell.w_input.iter_mut().chain(cell.w_hidden.iter_mut()) {
            p.value.fill(3.0);
        }
        let x = Tensor::from_vec(&[1, 2], vec![5.0, -5.0]).unwrap();
        let (_, cache) = cell.step(&x, &LstmState::zeros(1, 2));
        for gate in 0..3 {
            for &v in cache.gates[gate].data() {
                assert!(v > 0.0 && v < 1.0);
            }
        }
        for &v in cache.gates[3].data() {
            assert!(v > -1.0 && v < 1.0);
        }
    }
}
