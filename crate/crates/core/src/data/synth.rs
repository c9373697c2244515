use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};

use super::{Adjacency, TrafficDataset};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

/// Parameters of the synthetic ring-road generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_nodes: usize,
    pub n_days: usize,
    pub steps_per_day: usize,
    pub seed: u64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_nodes: 12,
            n_days: 30,
            steps_per_day: 288,
            seed: 42,
            noise_sigma: 3.0,
        }
    }
}

fn weekday_factor(dow: usize) -> f64 {
    if dow < 5 {
        1.0
    } else {
        0.4
    }
}

/// Daily sinusoid per node, phase-shifted around a ring, plus a weekday
/// level and seeded Gaussian noise; values are clamped at zero.
///
/// `x(t, n) = 100 + 40 sin(2π (t/spd − n/N)) + 15 w(dow(t)) + ε`
pub fn synth_generate(cfg: &SynthConfig) -> Result<TrafficDataset> {
    if cfg.n_nodes < 3 {
        return Err(Error::Config(format!(
            "synthetic data needs at least 3 nodes, got {}",
            cfg.n_nodes
        )));
    }
    if cfg.n_days == 0 || cfg.steps_per_day == 0 || !(cfg.noise_sigma >= 0.0) {
        return Err(Error::Config(
            "synthetic data needs positive days, steps per day and a non-negative noise level".into(),
        ));
    }
    let (n, spd) = (cfg.n_nodes, cfg.steps_per_day);
    let total = cfg.n_days * spd;
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("sigma checked");
    let mut rng = rng::stream(cfg.seed, Stream::Synth);
    let mut data = Vec::with_capacity(total * n);
    for t in 0..total {
        let level = 15.0 * weekday_factor((t / spd) % 7);
        for node in 0..n {
            // reduce modulo the day so the signal is exactly periodic
            let phase = 2.0 * PI * ((t % spd) as f64 / spd as f64 - node as f64 / n as f64);
            let eps = if cfg.noise_sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            data.push((100.0 + 40.0 * phase.sin() + level + eps).max(0.0));
        }
    }
    let signal = Tensor::new(&[total, n], data)?;
    TrafficDataset::new("synthetic", signal, spd, 0, 0, Adjacency::ring(n))
}
