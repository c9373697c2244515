use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ParamStore;

/// Learning-rate decay point: after `epoch` epochs complete, the rate is
/// multiplied by `factor`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Milestone {
    pub epoch: usize,
    pub factor: f64,
}

pub fn default_milestones() -> Vec<Milestone> {
    vec![
        Milestone { epoch: 30, factor: 0.5 },
        Milestone { epoch: 50, factor: 0.5 },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub milestones: Vec<Milestone>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            milestones: default_milestones(),
        }
    }
}

impl AdamConfig {
    /// Rate used while training epoch `epoch` (1-based).
    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        self.milestones
            .iter()
            .filter(|m| m.epoch < epoch)
            .fold(self.lr, |lr, m| lr * m.factor)
    }
}

/// Adam with bias correction and milestone decay.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub(crate) m: ParamStore,
    pub(crate) v: ParamStore,
    pub(crate) step: u64,
    lr: f64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let lr = config.lr;
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            lr,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn moments(&self) -> (&ParamStore, &ParamStore) {
        (&self.m, &self.v)
    }

    /// Sets the rate for epoch `epoch` (1-based) from the milestone schedule.
    pub fn start_epoch(&mut self, epoch: usize) {
        self.lr = self.config.lr_for_epoch(epoch);
    }

    /// One update. Every gradient is checked before any parameter moves.
    pub fn update(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (name, g) in grads.iter() {
            if let Some(k) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient for {name} at index {k}")));
            }
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let tensors = params
            .tensors_mut()
            .iter_mut()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().iter_mut().zip(self.v.tensors_mut()));
        for ((p, g), (m, v)) in tensors {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam", format!("{:?} vs {:?}", p.shape(), g.shape())));
            }
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((p, &g), (m, v)) in it {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }

    pub(crate) fn restore(config: AdamConfig, m: ParamStore, v: ParamStore, step: u64, lr: f64) -> Self {
        Self { config, m, v, step, lr }
    }
}
