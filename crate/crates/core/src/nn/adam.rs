use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Bias-corrected Adam with per-parameter moments keyed by name.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(1e-3)
    }
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<&(Tensor, Tensor)> {
        self.moments.get(name)
    }

    /// One update over every `(name, param, grad)` triple; the step counter
    /// advances once.
    pub fn step<'a, I>(&mut self, items: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a mut Tensor, &'a Tensor)>,
    {
        self.step += 1;
        for (name, param, grad) in items {
            self.update(name, param, grad)?;
        }
        Ok(())
    }

    /// Starts a step; follow with [`AdamState::update`] for each parameter.
    pub(crate) fn begin_step(&mut self) {
        self.step += 1;
    }

    pub(crate) fn update(&mut self, name: &str, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::shape(format!(
                "parameter {name} has shape {:?}, gradient {:?}",
                param.shape(),
                grad.shape()
            )));
        }
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (Tensor::zeros(param.shape()), Tensor::zeros(param.shape())));
        if m.shape() != param.shape() {
            return Err(Error::shape(format!("moment shape for {name} changed")));
        }
        let t = self.step.max(1) as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (((p, g), m), v) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form: one Adam step over named parameters.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [(String, Tensor)],
    grads: &BTreeMap<String, Tensor>,
) -> Result<()> {
    let mut items = Vec::with_capacity(params.len());
    for (name, p) in params.iter_mut() {
        let g = grads.get(name.as_str()).ok_or_else(|| Error::Lookup {
            kind: "gradient",
            name: name.clone(),
        })?;
        items.push((name.as_str(), p, g));
    }
    state.step(items)
}
