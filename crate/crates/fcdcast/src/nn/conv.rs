//! 2-d convolution and max pooling over `[batch, channels, height, width]`
//! tensors.
//!
//! Output extents follow `(n + 2p - r) / s + 1` for convolution and
//! `(n - r) / s + 1` for pooling; both demand exact divisibility so that no
//! input column is silently dropped.

use crate::error::{Error, Result};

use super::{Param, Tensor};

/// Extent of a convolution output axis, or a shape error when the stride
/// does not divide evenly.
pub fn conv_out_extent(n: usize, r: usize, s: usize, p: usize) -> Result<usize> {
    let padded = n + 2 * p;
    if padded < r {
        return Err(Error::shape(format!(
            "receptive field {r} exceeds padded extent {padded}"
        )));
    }
    if (padded - r) % s != 0 {
        return Err(Error::shape(format!(
            "extent {n} with padding {p}, field {r}, stride {s} does not divide evenly"
        )));
    }
    Ok((padded - r) / s + 1)
}

/// Extent of a pooling output axis (no padding).
pub fn pool_out_extent(n: usize, r: usize, s: usize) -> Result<usize> {
    if n < r {
        return Err(Error::shape(format!(
            "pool field {r} exceeds extent {n}"
        )));
    }
    if (n - r) % s != 0 {
        return Err(Error::shape(format!(
            "extent {n} with pool field {r}, stride {s} does not divide evenly"
        )));
    }
    Ok((n - r) / s + 1)
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    /// `[f_out, f_in, r, r]`.
    pub weight: Param,
    pub stride: usize,
    pub padding: usize,
    input_cache: Option<Tensor>,
}

impl ConvLayer {
    pub fn new(weight: Param, stride: usize, padding: usize) -> Self {
        assert_eq!(weight.value.shape().len(), 4, "conv weight must be 4-d");
        ConvLayer {
            weight,
            stride,
            padding,
            input_cache: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn receptive(&self) -> usize {
        self.weight.value.shape()[2]
    }

    fn pad(&self, x: &Tensor) -> Tensor {
        if self.padding == 0 {
            return x.clone();
        }
        let (t, c, h, w) = dims4(x);
        let p = self.padding;
        let mut out = Tensor::zeros(&[t, c, h + 2 * p, w + 2 * p]);
        for ti in 0..t {
            for ci in 0..c {
                for hi in 0..h {
                    let src = x.idx4(ti, ci, hi, 0);
                    let dst = out.idx4(ti, ci, hi + p, p);
                    let row = &x.data()[src..src + w];
                    out.data_mut()[dst..dst + w].copy_from_slice(row);
                }
            }
        }
        out
    }

    fn run(&self, x: &Tensor) -> Result<Tensor> {
        let (t, c, h, w) = dims4(x);
        if c != self.in_channels() {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        let r = self.receptive();
        let s = self.stride;
        let oh = conv_out_extent(h, r, s, self.padding)?;
        let ow = conv_out_extent(w, r, s, self.padding)?;
        let xp = self.pad(x);
        let (_, _, ph, pw) = dims4(&xp);
        let fo = self.out_channels();
        let mut out = Tensor::zeros(&[t, fo, oh, ow]);
        let wdata = self.weight.value.data();
        for ti in 0..t {
            for f in 0..fo {
                for fi in 0..c {
                    let wbase = (f * c + fi) * r * r;
                    for j in 0..r {
                        for k in 0..r {
                            let wv = wdata[wbase + j * r + k];
                            if wv == 0.0 {
                                continue;
                            }
                            for l in 0..oh {
                                let xrow = ((ti * c + fi) * ph + (s * l + j)) * pw + k;
                                let orow = ((ti * fo + f) * oh + l) * ow;
                                for m in 0..ow {
                                    out.data_mut()[orow + m] +=
                                        wv * xp.data()[xrow + s * m];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let out = self.run(x)?;
        self.input_cache = Some(x.clone());
        Ok(out)
    }

    pub fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let x = self
            .input_cache
            .as_ref()
            .expect("conv backward without forward")
            .clone();
        let (t, c, h, w) = dims4(&x);
        let r = self.receptive();
        let s = self.stride;
        let p = self.padding;
        let fo = self.out_channels();
        let (_, _, oh, ow) = dims4(grad_out);
        let xp = self.pad(&x);
        let (_, _, ph, pw) = dims4(&xp);
        let mut dxp = Tensor::zeros(xp.shape());
        let wdata = self.weight.value.data();
        let gdata = grad_out.data();
        for ti in 0..t {
            for f in 0..fo {
                for fi in 0..c {
                    let wbase = (f * c + fi) * r * r;
                    for j in 0..r {
                        for k in 0..r {
                            let widx = wbase + j * r + k;
                            let wv = wdata[widx];
                            let mut wgrad = 0.0;
                            for l in 0..oh {
                                let xrow = ((ti * c + fi) * ph + (s * l + j)) * pw + k;
                                let grow = ((ti * fo + f) * oh + l) * ow;
                                for m in 0..ow {
                                    let g = gdata[grow + m];
                                    wgrad += g * xp.data()[xrow + s * m];
                                    dxp.data_mut()[xrow + s * m] += wv * g;
                                }
                            }
                            self.weight.grad.data_mut()[widx] += wgrad;
                        }
                    }
                }
            }
        }
        // Strip padding from the input gradient.
        if p == 0 {
            return dxp;
        }
        let mut dx = Tensor::zeros(&[t, c, h, w]);
        for ti in 0..t {
            for ci in 0..c {
                for hi in 0..h {
                    let src = dxp.idx4(ti, ci, hi + p, p);
                    let dst = dx.idx4(ti, ci, hi, 0);
                    let row = &dxp.data()[src..src + w];
                    dx.data_mut()[dst..dst + w].copy_from_slice(row);
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct MaxPoolLayer {
    pub receptive: usize,
    pub stride: usize,
    input_shape: Option<Vec<usize>>,
    argmax: Option<Vec<usize>>,
}

impl MaxPoolLayer {
    pub fn new(receptive: usize, stride: usize) -> Self {
        MaxPoolLayer {
            receptive,
            stride,
            input_shape: None,
            argmax: None,
        }
    }

    fn run(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let (t, c, h, w) = dims4(x);
        let r = self.receptive;
        let s = self.stride;
        let oh = pool_out_extent(h, r, s)?;
        let ow = pool_out_extent(w, r, s)?;
        let mut out = Tensor::zeros(&[t, c, oh, ow]);
        let mut argmax = vec![0usize; out.len()];
        for ti in 0..t {
            for ci in 0..c {
                for l in 0..oh {
                    for m in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0;
                        for j in 0..r {
                            for k in 0..r {
                                let idx = x.idx4(ti, ci, s * l + j, s * m + k);
                                let v = x.data()[idx];
                                if v > best {
                                    best = v;
                                    best_idx = idx;
                                }
                            }
                        }
                        let oidx = out.idx4(ti, ci, l, m);
                        out.data_mut()[oidx] = best;
                        argmax[oidx] = best_idx;
                    }
                }
            }
        }
        Ok((out, argmax))
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (out, argmax) = self.run(x)?;
        self.input_shape = Some(x.shape().to_vec());
        self.argmax = Some(argmax);
        Ok(out)
    }

    pub fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.run(x)?.0)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let shape = self
            .input_shape
            .as_ref()
            .expect("pool backward without forward");
        let argmax = self.argmax.as_ref().unwrap();
        let mut dx = Tensor::zeros(shape);
        for (o, &src) in argmax.iter().enumerate() {
            dx.data_mut()[src] += grad_out.data()[o];
        }
        dx
    }
}

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected 4-d tensor, got {:?}", s);
    (s[0], s[1], s[2], s[3])
}
