use rand::{Rng, RngCore};

use super::tensor::Tensor;

/// Uniform on `+-sqrt(6 / (fan_in + fan_out))` for a `[rows x cols]` weight.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut dyn RngCore) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..=limit))
        .collect();
    Tensor::from_vec(&[rows, cols], data).expect("shape matches data")
}
