//! Dense row-major `f64` tensors.
//!
//! Deliberately minimal: shape bookkeeping, element access, and the
//! matrix products the layers need. Layers do their own index arithmetic.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} holds {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Reinterpret the buffer under a new shape of equal volume.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Row-major offset of a 2-d index.
    #[inline]
    pub fn idx2(&self, i: usize, j: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        i * self.shape[1] + j
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx2(i, j)]
    }

    /// Row-major offset of a 4-d index.
    #[inline]
    pub fn idx4(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 4);
        ((a * self.shape[1] + b) * self.shape[2] + c) * self.shape[3] + d
    }

    #[inline]
    pub fn at4(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.data[self.idx4(a, b, c, d)]
    }
}

/// `[n, k] x [k, m] -> [n, m]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = (a.shape[0], a.shape[1]);
    let (k2, m) = (b.shape[0], b.shape[1]);
    assert_eq!(k, k2, "matmul inner dimensions {} vs {}", k, k2);
    let mut out = Tensor::zeros(&[n, m]);
    for i in 0..n {
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            let orow = &mut out.data[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// `a^T x b`: `[n, k]^T x [n, m] -> [k, m]`. Used for weight gradients.
pub fn matmul_at_b(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = (a.shape[0], a.shape[1]);
    let (n2, m) = (b.shape[0], b.shape[1]);
    assert_eq!(n, n2, "matmul_at_b outer dimensions {} vs {}", n, n2);
    let mut out = Tensor::zeros(&[k, m]);
    for t in 0..n {
        for i in 0..k {
            let av = a.data[t * k + i];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[t * m..(t + 1) * m];
            let orow = &mut out.data[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// `a x b^T`: `[n, k] x [m, k]^T -> [n, m]`. Used for input gradients.
pub fn matmul_a_bt(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = (a.shape[0], a.shape[1]);
    let (m, k2) = (b.shape[0], b.shape[1]);
    assert_eq!(k, k2, "matmul_a_bt inner dimensions {} vs {}", k, k2);
    let mut out = Tensor::zeros(&[n, m]);
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b.data[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for p in 0..k {
                acc += arow[p] * brow[p];
            }
            out.data[i * m + j] = acc;
        }
    }
    out
}
