use log::warn;

use crate::error::Result;
use crate::tensor::Parameters;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Parameters,
    pub second: Parameters,
}

impl AdamState {
    pub fn new(params: &Parameters) -> Self {
        Self { step: 0, first: params.zeros_like(), second: params.zeros_like() }
    }

    /// One bias-corrected Adam update of every parameter accepted by
    /// `trainable`. A trainable parameter with no entry in `grads` is
    /// updated as if its gradient were zero.
    pub fn step(
        &mut self,
        params: &mut Parameters,
        grads: &Parameters,
        cfg: &AdamConfig,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            if !trainable(name) {
                continue;
            }
            let m = self.first.get_mut(name)?;
            let v = self.second.get_mut(name)?;
            let g = match grads.get(name) {
                Ok(g) => Some(g.as_slice()),
                Err(_) => {
                    warn!("no gradient for `{name}`; treating it as zero");
                    None
                }
            };
            let (p, m, v) = (p.as_mut_slice(), m.as_mut_slice(), v.as_mut_slice());
            for k in 0..p.len() {
                let gk = g.map_or(0.0, |g| g[k]);
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}
