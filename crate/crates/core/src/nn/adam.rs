use super::network::Network;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Result<Self> {
        let cfg = AdamConfig {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", format!("must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::config(
                "beta1",
                format!("must be in [0, 1), got {}", self.beta1),
            ));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config(
                "beta2",
                format!("must be in [0, 1), got {}", self.beta2),
            ));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::config(
                "eps",
                format!("must be > 0, got {}", self.eps),
            ));
        }
        Ok(())
    }
}

/// Moment estimates for every parameter of one network, in `params_mut` order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn second_moments(&self) -> impl Iterator<Item = f64> + '_ {
        self.second.iter().flatten().copied()
    }
}

/// Bias-corrected Adam update over every parameter of `net`, then zeroes the
/// gradient buffers.
pub fn adam_step(net: &mut Network, opt: &mut AdamState) {
    opt.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = opt.config;
    let t = opt.step as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);
    let mut params = net.params_mut();
    if opt.first.len() != params.len() {
        opt.first = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        opt.second = opt.first.clone();
    }
    for ((p, m), v) in params.iter_mut().zip(&mut opt.first).zip(&mut opt.second) {
        for (((w, g), m), v) in p
            .value
            .iter_mut()
            .zip(p.grad.iter_mut())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * *g;
            *v = beta2 * *v + (1.0 - beta2) * *g * *g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
            *g = 0.0;
        }
    }
    drop(params);
    net.touch();
}
