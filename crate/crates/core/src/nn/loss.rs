use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    let c = x.cols();
    if c == 0 {
        return y;
    }
    for row in y.data_mut().chunks_exact_mut(c) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    y
}

/// Row-wise log-softmax.
pub fn log_softmax(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    let c = x.cols();
    if c == 0 {
        return y;
    }
    for row in y.data_mut().chunks_exact_mut(c) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    y
}

/// Mean squared error over all elements and its gradient `2 (pred - target) / n`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len();
    let mut grad = pred.clone();
    if n == 0 {
        return Ok((0.0, grad));
    }
    let mut loss = 0.0;
    for (g, t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        loss += d * d;
        *g = 2.0 * d / n as f64;
    }
    Ok((loss / n as f64, grad))
}
