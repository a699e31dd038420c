use rand::RngCore;

use super::dropout::dropout_mask;
use super::init::glorot_uniform;
use super::tensor::{add_col_sums, add_row_bias, matmul_nn_acc, matmul_nt, matmul_tn_acc, matvec_acc, matvec_t_acc, Tensor};
use super::Mode;
use crate::error::{Error, Result};

/// Gate parameters of a GRU with hidden size `H` over `D`-dimensional input.
///
/// Update gate `z`, reset gate `r`, candidate `h`:
/// `z = s(W_z x + U_z h + b_z)`, `r = s(W_r x + U_r h + b_r)`,
/// `c = tanh(W_h x + U_h (r * h) + b_h)`, `h' = (1 - z) * h + z * c`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

impl GruParams {
    pub fn zeros(d_in: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(&[hidden, d_in]);
        let u = || Tensor::zeros(&[hidden, hidden]);
        let b = || Tensor::zeros(&[hidden]);
        Self {
            w_z: w(),
            w_r: w(),
            w_h: w(),
            u_z: u(),
            u_r: u(),
            u_h: u(),
            b_z: b(),
            b_r: b(),
            b_h: b(),
        }
    }

    /// Glorot-uniform weights per gate, zero biases.
    pub fn glorot(d_in: usize, hidden: usize, rng: &mut dyn RngCore) -> Self {
        Self {
            w_z: glorot_uniform(hidden, d_in, rng),
            w_r: glorot_uniform(hidden, d_in, rng),
            w_h: glorot_uniform(hidden, d_in, rng),
            u_z: glorot_uniform(hidden, hidden, rng),
            u_r: glorot_uniform(hidden, hidden, rng),
            u_h: glorot_uniform(hidden, hidden, rng),
            b_z: Tensor::zeros(&[hidden]),
            b_r: Tensor::zeros(&[hidden]),
            b_h: Tensor::zeros(&[hidden]),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w_z.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w_z.rows()
    }

    pub fn n_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub(crate) fn named(&self) -> [(&'static str, &Tensor); 9] {
        [
            ("w_z", &self.w_z),
            ("w_r", &self.w_r),
            ("w_h", &self.w_h),
            ("u_z", &self.u_z),
            ("u_r", &self.u_r),
            ("u_h", &self.u_h),
            ("b_z", &self.b_z),
            ("b_r", &self.b_r),
            ("b_h", &self.b_h),
        ]
    }

    pub(crate) fn named_mut(&mut self) -> [(&'static str, &mut Tensor); 9] {
        [
            ("w_z", &mut self.w_z),
            ("w_r", &mut self.w_r),
            ("w_h", &mut self.w_h),
            ("u_z", &mut self.u_z),
            ("u_r", &mut self.u_r),
            ("u_h", &mut self.u_h),
            ("b_z", &mut self.b_z),
            ("b_r", &mut self.b_r),
            ("b_h", &mut self.b_h),
        ]
    }

    fn validate(&self) -> Result<()> {
        let (h, d) = (self.hidden(), self.d_in());
        let ok = [&self.w_z, &self.w_r, &self.w_h].iter().all(|w| w.shape() == [h, d])
            && [&self.u_z, &self.u_r, &self.u_h].iter().all(|u| u.shape() == [h, h])
            && [&self.b_z, &self.b_r, &self.b_h].iter().all(|b| b.shape() == [h]);
        if ok {
            Ok(())
        } else {
            Err(Error::shape("inconsistent GRU parameter shapes"))
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-step activations kept for the backward pass, each `[T x H]`.
#[derive(Clone, Debug)]
struct GruCache {
    x: Tensor,
    mask: Option<Vec<f64>>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
    rh: Vec<f64>,
}

fn run(params: &GruParams, x: &Tensor, h0: &[f64]) -> (Tensor, GruCache) {
    let (t_len, d, h) = (x.rows(), params.d_in(), params.hidden());
    let mut az = matmul_nt(x.data(), t_len, d, params.w_z.data(), h);
    let mut ar = matmul_nt(x.data(), t_len, d, params.w_r.data(), h);
    let mut ah = matmul_nt(x.data(), t_len, d, params.w_h.data(), h);
    add_row_bias(&mut az, params.b_z.data());
    add_row_bias(&mut ar, params.b_r.data());
    add_row_bias(&mut ah, params.b_h.data());

    let mut out = vec![0.0; t_len * h];
    let mut cache = GruCache {
        x: x.clone(),
        mask: None,
        h_prev: vec![0.0; t_len * h],
        z: vec![0.0; t_len * h],
        r: vec![0.0; t_len * h],
        c: vec![0.0; t_len * h],
        rh: vec![0.0; t_len * h],
    };
    let mut state = h0.to_vec();
    for t in 0..t_len {
        let span = t * h..(t + 1) * h;
        cache.h_prev[span.clone()].copy_from_slice(&state);

        let gz = &mut az[span.clone()];
        matvec_acc(params.u_z.data(), &state, gz);
        let gr = &mut ar[span.clone()];
        matvec_acc(params.u_r.data(), &state, gr);
        for i in 0..h {
            let z = sigmoid(gz[i]);
            let r = sigmoid(gr[i]);
            cache.z[t * h + i] = z;
            cache.r[t * h + i] = r;
            cache.rh[t * h + i] = r * state[i];
        }
        let gc = &mut ah[span.clone()];
        matvec_acc(params.u_h.data(), &cache.rh[span.clone()], gc);
        for i in 0..h {
            let c = gc[i].tanh();
            let z = cache.z[t * h + i];
            cache.c[t * h + i] = c;
            state[i] += z * (c - state[i]);
        }
        out[span].copy_from_slice(&state);
    }
    (Tensor::matrix(t_len, h, out).expect("sized above"), cache)
}

/// Runs the recurrence from initial state `h0`, returning every hidden state.
pub fn gru_forward(x: &Tensor, params: &GruParams, h0: &Tensor) -> Result<Tensor> {
    params.validate()?;
    x.expect_matrix(params.d_in(), "GRU")?;
    if h0.len() != params.hidden() {
        return Err(Error::shape(format!(
            "initial state has {} values, hidden size is {}",
            h0.len(),
            params.hidden()
        )));
    }
    Ok(run(params, x, h0.data()).0)
}

/// GRU layer with zero initial state and optional inverted dropout on its input.
#[derive(Clone, Debug)]
pub struct Gru {
    pub params: GruParams,
    pub grads: GruParams,
    pub input_dropout: f64,
    cache: Option<GruCache>,
}

impl Gru {
    pub fn new(params: GruParams, input_dropout: f64) -> Self {
        let grads = GruParams::zeros(params.d_in(), params.hidden());
        Self {
            params,
            grads,
            input_dropout,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor> {
        x.expect_matrix(self.params.d_in(), "GRU")?;
        let mask = match mode {
            Mode::Train if self.input_dropout > 0.0 => Some(dropout_mask(x.len(), self.input_dropout, rng)),
            _ => None,
        };
        let input = match &mask {
            Some(m) => {
                let mut xd = x.clone();
                xd.data_mut().iter_mut().zip(m).for_each(|(v, k)| *v *= k);
                xd
            }
            None => x.clone(),
        };
        let (y, mut cache) = run(&self.params, &input, &vec![0.0; self.params.hidden()]);
        cache.mask = mask;
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor, accumulate: bool) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("GRU backward without forward".into()))?;
        let p = &self.params;
        let (t_len, d, h) = (cache.x.rows(), p.d_in(), p.hidden());
        dy.expect_matrix(h, "GRU backward")?;

        let mut da_z = vec![0.0; t_len * h];
        let mut da_r = vec![0.0; t_len * h];
        let mut da_c = vec![0.0; t_len * h];
        let mut dh_next = vec![0.0; h];
        let mut d_rh = vec![0.0; h];
        for t in (0..t_len).rev() {
            let o = t * h;
            let mut dh_prev = vec![0.0; h];
            for i in 0..h {
                let dh = dy.data()[o + i] + dh_next[i];
                let (z, c, hp) = (cache.z[o + i], cache.c[o + i], cache.h_prev[o + i]);
                let dz = dh * (c - hp);
                let dc = dh * z;
                dh_prev[i] = dh * (1.0 - z);
                da_c[o + i] = dc * (1.0 - c * c);
                da_z[o + i] = dz * z * (1.0 - z);
            }
            d_rh.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_acc(p.u_h.data(), &da_c[o..o + h], &mut d_rh);
            for i in 0..h {
                let r = cache.r[o + i];
                let dr = d_rh[i] * cache.h_prev[o + i];
                dh_prev[i] += d_rh[i] * r;
                da_r[o + i] = dr * r * (1.0 - r);
            }
            matvec_t_acc(p.u_z.data(), &da_z[o..o + h], &mut dh_prev);
            matvec_t_acc(p.u_r.data(), &da_r[o..o + h], &mut dh_prev);
            dh_next = dh_prev;
        }

        if accumulate {
            let g = &mut self.grads;
            let x = cache.x.data();
            matmul_tn_acc(&da_z, t_len, h, x, d, g.w_z.data_mut());
            matmul_tn_acc(&da_r, t_len, h, x, d, g.w_r.data_mut());
            matmul_tn_acc(&da_c, t_len, h, x, d, g.w_h.data_mut());
            matmul_tn_acc(&da_z, t_len, h, &cache.h_prev, h, g.u_z.data_mut());
            matmul_tn_acc(&da_r, t_len, h, &cache.h_prev, h, g.u_r.data_mut());
            matmul_tn_acc(&da_c, t_len, h, &cache.rh, h, g.u_h.data_mut());
            add_col_sums(&da_z, g.b_z.data_mut());
            add_col_sums(&da_r, g.b_r.data_mut());
            add_col_sums(&da_c, g.b_h.data_mut());
        }

        let mut dx = vec![0.0; t_len * d];
        matmul_nn_acc(&da_z, t_len, h, p.w_z.data(), d, &mut dx);
        matmul_nn_acc(&da_r, t_len, h, p.w_r.data(), d, &mut dx);
        matmul_nn_acc(&da_c, t_len, h, p.w_h.data(), d, &mut dx);
        if let Some(mask) = &cache.mask {
            dx.iter_mut().zip(mask).for_each(|(v, k)| *v *= k);
        }
        Tensor::matrix(t_len, d, dx)
    }
}
