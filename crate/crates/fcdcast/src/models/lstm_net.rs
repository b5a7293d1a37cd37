//! One-hidden-layer recurrent network: batch norm on the step input, an
//! LSTM cell unrolled over the horizon with shared weights, and a shared
//! dense head with the [0, 1] clamp at every step.

use crate::error::{Error, Result};
use crate::nn::activation::{output_clamp, output_clamp_backward};
use crate::nn::batchnorm::BatchNorm;
use crate::nn::lstm::{LstmCell, LstmState, LstmStepCache};
use crate::nn::tensor::{matmul, matmul_a_bt, matmul_at_b};
use crate::nn::{Param, Tensor};

#[derive(Debug, Clone)]
pub struct LstmNet {
    pub bn: BatchNorm,
    pub cell: LstmCell,
    /// Shared output head `[f_h, out_per_step]`, applied at every step.
    pub head: Param,
    pub t_steps: usize,
    trace: Option<Trace>,
}

#[derive(Debug, Clone)]
struct Trace {
    cells: Vec<LstmStepCache>,
    head_inputs: Vec<Tensor>,
    head_pre: Vec<Tensor>,
}

impl LstmNet {
    pub fn new(bn: BatchNorm, cell: LstmCell, head: Param, t_steps: usize) -> Self {
        LstmNet {
            bn,
            cell,
            head,
            t_steps,
            trace: None,
        }
    }

    pub fn input_size(&self) -> usize {
        self.cell.input_size()
    }

    pub fn hidden_size(&self) -> usize {
        self.cell.hidden_size()
    }

    pub fn out_per_step(&self) -> usize {
        self.head.value.shape()[1]
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = vec![&self.bn.gamma, &self.bn.beta];
        out.extend(self.cell.w_input.iter());
        out.extend(self.cell.w_hidden.iter());
        out.push(&self.head);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = vec![&mut self.bn.gamma, &mut self.bn.beta];
        out.extend(self.cell.w_input.iter_mut());
        out.extend(self.cell.w_hidden.iter_mut());
        out.push(&mut self.head);
        out
    }

    /// Teacher-forced forward over a batch: `steps[tau]` is `[t_mb, f0]`.
    /// Returns per-step outputs `[t_mb, out_per_step]`.
    pub fn forward_train(&mut self, steps: &[Tensor]) -> Result<Vec<Tensor>> {
        if steps.len() != self.t_steps {
            return Err(Error::shape(format!(
                "expected {} steps, got {}",
                self.t_steps,
                steps.len()
            )));
        }
        self.bn.clear_caches();
        let batch = steps[0].shape()[0];
        let mut state = LstmState::zeros(batch, self.hidden_size());
        let mut trace = Trace {
            cells: Vec::with_capacity(steps.len()),
            head_inputs: Vec::with_capacity(steps.len()),
            head_pre: Vec::with_capacity(steps.len()),
        };
        let mut outputs = Vec::with_capacity(steps.len());
        for x in steps {
            let xb = self.bn.forward_train(x)?;
            let (next, cache) = self.cell.step(&xb, &state);
            state = next;
            let pre = matmul(&state.h, &self.head.value);
            outputs.push(output_clamp(&pre));
            trace.cells.push(cache);
            trace.head_inputs.push(state.h.clone());
            trace.head_pre.push(pre);
        }
        self.trace = Some(trace);
        Ok(outputs)
    }

    /// Backpropagation through time. `grads[tau]` matches the forward
    /// outputs; parameter gradients accumulate in place.
    pub fn backward(&mut self, grads: &[Tensor]) -> Result<()> {
        let trace = self
            .trace
            .take()
            .ok_or_else(|| Error::shape("lstm backward without forward".to_string()))?;
        if grads.len() != trace.cells.len() {
            return Err(Error::shape(format!(
                "expected {} step gradients, got {}",
                trace.cells.len(),
                grads.len()
            )));
        }
        let batch = grads[0].shape()[0];
        let mut dh_next = Tensor::zeros(&[batch, self.hidden_size()]);
        let mut dc_next = Tensor::zeros(&[batch, self.hidden_size()]);
        for tau in (0..trace.cells.len()).rev() {
            let dpre = output_clamp_backward(&trace.head_pre[tau], &grads[tau]);
            let dw_head = matmul_at_b(&trace.head_inputs[tau], &dpre);
            for (g, d) in self.head.grad.data_mut().iter_mut().zip(dw_head.data()) {
                *g += d;
            }
            let mut dh = matmul_a_bt(&dpre, &self.head.value);
            for (a, b) in dh.data_mut().iter_mut().zip(dh_next.data()) {
                *a += b;
            }
            let (dxb, dh_prev, dc_prev) =
                self.cell.step_backward(&trace.cells[tau], &dh, &dc_next);
            // Pops this step's batch-norm cache (pushed in forward order).
            let _dx = self.bn.backward(&dxb);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        Ok(())
    }

    /// Step-by-step inference for one sample. `make_input(tau, preds)` builds
    /// the step input, splicing earlier predictions into any entry that
    /// refers to a slot at or after the anchor.
    pub fn predict_with(
        &self,
        mut make_input: impl FnMut(usize, &[Vec<f64>]) -> Vec<f64>,
    ) -> Result<Vec<Vec<f64>>> {
        let mut state = LstmState::zeros(1, self.hidden_size());
        let mut preds: Vec<Vec<f64>> = Vec::with_capacity(self.t_steps);
        for tau in 0..self.t_steps {
            let x = make_input(tau, &preds);
            let xt = Tensor::from_vec(&[1, self.input_size()], x)?;
            let xb = self.bn.forward_infer(&xt)?;
            let (next, _) = self.cell.step(&xb, &state);
            state = next;
            let pre = matmul(&state.h, &self.head.value);
            preds.push(output_clamp(&pre).into_vec());
        }
        Ok(preds)
    }
}
