//! Weight initialization schemes.

use rand::Rng;
use rand_distr::StandardNormal;

use super::Tensor;

/// Gaussian scaled by `sqrt(6 / (f_in + f_out))` for a dense `[f_in, f_out]`
/// weight.
pub fn glorot(f_in: usize, f_out: usize, rng: &mut impl Rng) -> Tensor {
    let scale = (6.0 / (f_in + f_out) as f64).sqrt();
    let data = (0..f_in * f_out)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::from_vec(&[f_in, f_out], data).expect("glorot shape")
}

/// Convolution variant of [`glorot`]: fan counts include the receptive field.
pub fn glorot_conv(f_out: usize, f_in: usize, r: usize, rng: &mut impl Rng) -> Tensor {
    let fan = (f_in + f_out) * r * r;
    let scale = (6.0 / fan as f64).sqrt();
    let data = (0..f_out * f_in * r * r)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::from_vec(&[f_out, f_in, r, r], data).expect("glorot conv shape")
}

/// Recurrent-weight prescription: one half on the diagonal plus dense
/// Gaussian noise of standard deviation `eps`. With `eps = 0` this is
/// exactly `I/2` (rectangular diagonal for non-square shapes).
pub fn lstm_diagonal(rows: usize, cols: usize, eps: f64, rng: &mut impl Rng) -> Tensor {
    let mut t = Tensor::zeros(&[rows, cols]);
    for i in 0..rows {
        for j in 0..cols {
            let noise: f64 = rng.sample(StandardNormal);
            let diag = if i == j { 0.5 } else { 0.0 };
            let idx = t.idx2(i, j);
            t.data_mut()[idx] = diag + eps * noise;
        }
    }
    t
}
