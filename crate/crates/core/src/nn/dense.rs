use rand::RngCore;

use super::init::glorot_uniform;
use super::tensor::{add_col_sums, add_row_bias, matmul_nn_acc, matmul_nt, matmul_tn_acc, Tensor};
use crate::error::{Error, Result};

/// Weights `[out x in]` and bias `[out]` of a time-distributed affine map.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl DenseParams {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            w: Tensor::zeros(&[d_out, d_in]),
            b: Tensor::zeros(&[d_out]),
        }
    }

    pub fn glorot(d_in: usize, d_out: usize, rng: &mut dyn RngCore) -> Self {
        Self {
            w: glorot_uniform(d_out, d_in, rng),
            b: Tensor::zeros(&[d_out]),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w.rows()
    }

    pub(crate) fn named_mut(&mut self) -> [(&'static str, &mut Tensor); 2] {
        [("w", &mut self.w), ("b", &mut self.b)]
    }

    pub(crate) fn named(&self) -> [(&'static str, &Tensor); 2] {
        [("w", &self.w), ("b", &self.b)]
    }
}

/// `x W^T + b` applied to every time step.
pub fn dense_forward(x: &Tensor, params: &DenseParams) -> Result<Tensor> {
    x.expect_matrix(params.d_in(), "dense layer")?;
    if params.b.len() != params.d_out() {
        return Err(Error::shape("dense bias length differs from output width"));
    }
    let (t, d_out) = (x.rows(), params.d_out());
    let mut y = matmul_nt(x.data(), t, params.d_in(), params.w.data(), d_out);
    add_row_bias(&mut y, params.b.data());
    Tensor::matrix(t, d_out, y)
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub params: DenseParams,
    pub grads: DenseParams,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(params: DenseParams) -> Self {
        let grads = DenseParams::zeros(params.d_in(), params.d_out());
        Self {
            params,
            grads,
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = dense_forward(x, &self.params)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor, accumulate: bool) -> Result<Tensor> {
        let x = self
            .input
            .take()
            .ok_or_else(|| Error::State("dense backward without forward".into()))?;
        let (t, d_in, d_out) = (x.rows(), self.params.d_in(), self.params.d_out());
        dy.expect_matrix(d_out, "dense backward")?;
        if accumulate {
            matmul_tn_acc(dy.data(), t, d_out, x.data(), d_in, self.grads.w.data_mut());
            add_col_sums(dy.data(), self.grads.b.data_mut());
        }
        let mut dx = vec![0.0; t * d_in];
        matmul_nn_acc(dy.data(), t, d_out, self.params.w.data(), d_in, &mut dx);
        Tensor::matrix(t, d_in, dx)
    }
}
