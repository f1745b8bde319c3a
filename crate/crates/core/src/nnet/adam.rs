use super::{ParamSet, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet, hyper: AdamHyper) -> Self {
        let zeros: Vec<Tensor> = params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            hyper,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Bias-corrected Adam update applied in place.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        if params.is_frozen() {
            return Err(Error::Frozen);
        }
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params.tensor(i).shape() || self.m[i].shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "adam: gradient {i} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    params.tensor(i).shape()
                )));
            }
        }
        let AdamHyper { lr, beta1, beta2, eps } = self.hyper;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = params.tensor_mut(i)?;
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pv, mv), vv), &gv) in p.data_mut().iter_mut().zip(m).zip(v).zip(g.data()) {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Pure form of [`AdamState::step`].
pub fn adam_step(state: &AdamState, params: &ParamSet, grads: &[Tensor]) -> Result<(AdamState, ParamSet)> {
    let mut s = state.clone();
    let mut p = params.clone();
    s.step(&mut p, grads)?;
    Ok((s, p))
}
