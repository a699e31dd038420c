use rand::RngCore;

use super::batchnorm::{bn_backward, bn_forward, BatchNormParams, BnCache};
use super::dense::DenseParams;
use super::dropout::dropout_mask;
use super::init::glorot_uniform;
use super::tensor::{add_col_sums, add_row_bias, matmul_nn_acc, matmul_nt, matmul_tn_acc, Tensor};
use super::Mode;
use crate::error::{Error, Result};

pub const DEFAULT_DILATIONS: [usize; 4] = [1, 2, 4, 8];

/// Causal width-2 convolution: `y[t] = W_past x[t - d] + W_now x[t] + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalConv {
    pub dilation: usize,
    pub w_past: Tensor,
    pub w_now: Tensor,
    pub b: Tensor,
}

impl CausalConv {
    pub fn zeros(c_in: usize, c_out: usize, dilation: usize) -> Self {
        Self {
            dilation,
            w_past: Tensor::zeros(&[c_out, c_in]),
            w_now: Tensor::zeros(&[c_out, c_in]),
            b: Tensor::zeros(&[c_out]),
        }
    }

    pub fn glorot(c_in: usize, c_out: usize, dilation: usize, rng: &mut dyn RngCore) -> Self {
        // Fan-in spans both taps.
        let limit = (6.0 / (2 * c_in + c_out) as f64).sqrt();
        let base = (6.0 / (c_in + c_out) as f64).sqrt();
        let mut w_past = glorot_uniform(c_out, c_in, rng);
        let mut w_now = glorot_uniform(c_out, c_in, rng);
        w_past.scale(limit / base);
        w_now.scale(limit / base);
        Self {
            dilation,
            w_past,
            w_now,
            b: Tensor::zeros(&[c_out]),
        }
    }

    pub fn c_in(&self) -> usize {
        self.w_now.cols()
    }

    pub fn c_out(&self) -> usize {
        self.w_now.rows()
    }

    fn shifted(&self, x: &[f64], t_len: usize) -> Vec<f64> {
        let c = self.c_in();
        let d = self.dilation;
        let mut xs = vec![0.0; t_len * c];
        if t_len > d {
            xs[d * c..].copy_from_slice(&x[..(t_len - d) * c]);
        }
        xs
    }

    fn forward(&self, x: &[f64], t_len: usize) -> Vec<f64> {
        let (ci, co) = (self.c_in(), self.c_out());
        let mut y = matmul_nt(x, t_len, ci, self.w_now.data(), co);
        let xs = self.shifted(x, t_len);
        let yp = matmul_nt(&xs, t_len, ci, self.w_past.data(), co);
        y.iter_mut().zip(&yp).for_each(|(a, b)| *a += b);
        add_row_bias(&mut y, self.b.data());
        y
    }

    /// Accumulates parameter gradients into `grads` (when given) and returns `dx`.
    fn backward(&self, x: &[f64], dy: &[f64], t_len: usize, grads: Option<&mut CausalConv>) -> Vec<f64> {
        let (ci, co, d) = (self.c_in(), self.c_out(), self.dilation);
        if let Some(g) = grads {
            let xs = self.shifted(x, t_len);
            matmul_tn_acc(dy, t_len, co, x, ci, g.w_now.data_mut());
            matmul_tn_acc(dy, t_len, co, &xs, ci, g.w_past.data_mut());
            add_col_sums(dy, g.b.data_mut());
        }
        let mut dx = vec![0.0; t_len * ci];
        matmul_nn_acc(dy, t_len, co, self.w_now.data(), ci, &mut dx);
        let mut dxs = vec![0.0; t_len * ci];
        matmul_nn_acc(dy, t_len, co, self.w_past.data(), ci, &mut dxs);
        for t in d..t_len {
            let (src, dst) = (t * ci, (t - d) * ci);
            for k in 0..ci {
                dx[dst + k] += dxs[src + k];
            }
        }
        dx
    }
}

/// Parameters of one residual stack of dilated causal convolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct TcnBlockParams {
    pub convs: Vec<CausalConv>,
    /// 1x1 projection of the input onto the output channels, present when widths differ.
    pub projection: Option<DenseParams>,
    /// One normalization per convolution when enabled.
    pub norms: Option<Vec<BatchNormParams>>,
}

impl TcnBlockParams {
    pub fn glorot(
        c_in: usize,
        filters: usize,
        dilations: &[usize],
        batchnorm: bool,
        rng: &mut dyn RngCore,
    ) -> Self {
        let convs = dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| CausalConv::glorot(if i == 0 { c_in } else { filters }, filters, d, rng))
            .collect();
        let projection = (c_in != filters).then(|| DenseParams::glorot(c_in, filters, rng));
        let norms = batchnorm.then(|| dilations.iter().map(|_| BatchNormParams::new(filters)).collect());
        Self {
            convs,
            projection,
            norms,
        }
    }

    pub fn c_in(&self) -> usize {
        self.convs[0].c_in()
    }

    pub fn c_out(&self) -> usize {
        self.convs[0].c_out()
    }

    pub fn dilations(&self) -> Vec<usize> {
        self.convs.iter().map(|c| c.dilation).collect()
    }

    fn validate(&self) -> Result<()> {
        let Some(first) = self.convs.first() else {
            return Err(Error::shape("TCN block needs at least one convolution"));
        };
        let f = first.c_out();
        let mut c = first.c_in();
        for conv in &self.convs {
            if conv.c_in() != c || conv.c_out() != f || conv.w_past.shape() != conv.w_now.shape() {
                return Err(Error::shape("inconsistent TCN convolution shapes"));
            }
            c = f;
        }
        match &self.projection {
            Some(p) if p.d_in() != first.c_in() || p.d_out() != f => {
                return Err(Error::shape("TCN residual projection shape mismatch"))
            }
            None if first.c_in() != f => {
                return Err(Error::shape("TCN block changes width without a projection"))
            }
            _ => {}
        }
        if let Some(norms) = &self.norms {
            if norms.len() != self.convs.len() || norms.iter().any(|n| n.channels() != f) {
                return Err(Error::shape("TCN batch-norm statistics shape mismatch"));
            }
        }
        Ok(())
    }

    fn zeros_like(&self) -> Self {
        Self {
            convs: self
                .convs
                .iter()
                .map(|c| CausalConv::zeros(c.c_in(), c.c_out(), c.dilation))
                .collect(),
            projection: self.projection.as_ref().map(|p| DenseParams::zeros(p.d_in(), p.d_out())),
            norms: self
                .norms
                .as_ref()
                .map(|n| n.iter().map(|b| BatchNormParams::zeros(b.channels())).collect()),
        }
    }
}

#[derive(Clone, Debug)]
struct TcnCache {
    x: Tensor,
    /// Input of each convolution.
    conv_inputs: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
    norms: Vec<BnCache>,
}

/// One residual stack: `output = residual(x) + path(x)` where the path chains
/// the dilated convolutions, each followed by optional batch norm, a linear
/// activation and optional dropout.
#[derive(Clone, Debug)]
pub struct TcnBlock {
    pub params: TcnBlockParams,
    pub grads: TcnBlockParams,
    pub dropout: f64,
    cache: Option<TcnCache>,
}

impl TcnBlock {
    pub fn new(params: TcnBlockParams, dropout: f64) -> Result<Self> {
        params.validate()?;
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::param(format!("dropout rate must be in [0, 1), got {dropout}")));
        }
        let grads = params.zeros_like();
        Ok(Self {
            params,
            grads,
            dropout,
            cache: None,
        })
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor> {
        let c_in = self.params.c_in();
        let f = self.params.c_out();
        x.expect_matrix(c_in, "TCN block")?;
        let t_len = x.rows();
        let mut h = x.data().to_vec();
        let mut conv_inputs = Vec::with_capacity(self.params.convs.len());
        let mut masks = Vec::with_capacity(self.params.convs.len());
        let mut norm_caches = Vec::new();
        for i in 0..self.params.convs.len() {
            let y = self.params.convs[i].forward(&h, t_len);
            conv_inputs.push(std::mem::replace(&mut h, y));
            if let Some(norms) = self.params.norms.as_mut() {
                let (out, c) = bn_forward(&Tensor::matrix(t_len, f, std::mem::take(&mut h))?, &mut norms[i], mode)?;
                h = out.into_data();
                norm_caches.push(c);
            }
            let mask = (mode == Mode::Train && self.dropout > 0.0).then(|| dropout_mask(h.len(), self.dropout, rng));
            if let Some(m) = &mask {
                h.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
            }
            masks.push(mask);
        }
        match &self.params.projection {
            Some(p) => {
                let mut res = matmul_nt(x.data(), t_len, c_in, p.w.data(), f);
                add_row_bias(&mut res, p.b.data());
                h.iter_mut().zip(&res).for_each(|(a, b)| *a += b);
            }
            None => h.iter_mut().zip(x.data()).for_each(|(a, b)| *a += b),
        }
        self.cache = Some(TcnCache {
            x: x.clone(),
            conv_inputs,
            masks,
            norms: norm_caches,
        });
        Tensor::matrix(t_len, f, h)
    }

    pub fn backward(&mut self, dy: &Tensor, accumulate: bool) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("TCN backward without forward".into()))?;
        let c_in = self.params.c_in();
        let f = self.params.c_out();
        dy.expect_matrix(f, "TCN backward")?;
        let t_len = dy.rows();

        let mut dx = match &self.params.projection {
            Some(p) => {
                if accumulate {
                    let g = self.grads.projection.as_mut().expect("mirrors params");
                    matmul_tn_acc(dy.data(), t_len, f, cache.x.data(), c_in, g.w.data_mut());
                    add_col_sums(dy.data(), g.b.data_mut());
                }
                let mut dx = vec![0.0; t_len * c_in];
                matmul_nn_acc(dy.data(), t_len, f, p.w.data(), c_in, &mut dx);
                dx
            }
            None => dy.data().to_vec(),
        };

        let mut dh = dy.data().to_vec();
        for i in (0..self.params.convs.len()).rev() {
            if let Some(m) = &cache.masks[i] {
                dh.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
            }
            if let Some(norms) = &self.params.norms {
                let grads = match (accumulate, self.grads.norms.as_mut()) {
                    (true, Some(g)) => {
                        let g = &mut g[i];
                        Some((&mut g.gamma, &mut g.beta))
                    }
                    _ => None,
                };
                dh = bn_backward(&norms[i], &cache.norms[i], &Tensor::matrix(t_len, f, dh)?, grads)?.into_data();
            }
            let grads = accumulate.then(|| &mut self.grads.convs[i]);
            dh = self.params.convs[i].backward(&cache.conv_inputs[i], &dh, t_len, grads);
        }
        dx.iter_mut().zip(&dh).for_each(|(a, b)| *a += b);
        Tensor::matrix(t_len, c_in, dx)
    }
}

/// Stateless evaluation of a block (running statistics untouched in infer mode).
pub fn tcn_forward(x: &Tensor, params: &TcnBlockParams, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor> {
    let mut block = TcnBlock::new(params.clone(), 0.0)?;
    block.forward(x, mode, rng)
}
