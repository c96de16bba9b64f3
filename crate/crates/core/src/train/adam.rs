use crate::error::{contract, Error, Result};
use crate::layers::ParamStore;

/// Adam moments and hyper-parameters, one moment pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub const DEFAULT_LR: f64 = 1e-4;

    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected update from the gradients stored on `params`.
    /// Nothing changes if any gradient is missing or non-finite.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(contract(format!(
                "optimizer tracks {} tensors but {} were given",
                self.m.len(),
                params.len()
            )));
        }
        for (name, tensor) in params.iter() {
            let grad = tensor
                .grad()
                .ok_or_else(|| contract(format!("parameter {name} has no gradient")))?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((_, tensor), m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = tensor.take_grad().expect("checked above");
            for (((p, g), mi), vi) in tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *p -= lr * (m_hat / (v_hat.sqrt() + eps));
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .filter_map(|(_, t)| t.grad())
        .flatten()
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        for (_, tensor) in params.iter_mut() {
            if let Some(mut g) = tensor.take_grad() {
                g.iter_mut().for_each(|x| *x *= scale);
                tensor.set_grad(g).expect("same length");
            }
        }
    }
    norm
}
