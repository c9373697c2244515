use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::metrics::{MetricAccumulator, MetricReport, DEFAULT_MAPE_THRESHOLD};
use super::optim::{Adam, AdamConfig};
use crate::data::{Adjacency, NormStats, Part, Prepared, Sample};
use crate::error::{Error, Result};
use crate::network::{Model, ModelConfig, WindowRef};
use crate::rng::{self, Stream};
use crate::tensor::{ParamStore, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub huber_delta: f64,
    pub mape_threshold: f64,
    /// Single-threaded execution. Results are bitwise identical either way
    /// because per-sample gradients are summed in a fixed order.
    pub deterministic: bool,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            batch_size: 16,
            epochs: 60,
            seed: 42,
            adam: AdamConfig::default(),
            huber_delta: 1.0,
            mape_threshold: DEFAULT_MAPE_THRESHOLD,
            deterministic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if !(self.huber_delta > 0.0) || !(self.adam.lr > 0.0) {
            return Err(Error::Config("huber_delta and lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: MetricReport,
    pub lr: f64,
    pub seconds: f64,
}

pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation MAE.
    pub model: Model,
    pub best_epoch: usize,
    /// Optimizer state after the final epoch.
    pub optimizer: Adam,
    pub stats: NormStats,
    pub log: Vec<EpochLog>,
}

/// Loss and memory figures of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    /// Largest tape footprint of any sample in the batch.
    pub peak_tape_bytes: usize,
    /// Parameters, the summed gradient, both Adam moments and the
    /// per-sample gradients held at once.
    pub state_bytes: usize,
}

impl StepReport {
    /// Conservative total: the tape, an equally large set of backward
    /// buffers, and the optimizer-side state.
    pub fn accounted_bytes(&self) -> usize {
        2 * self.peak_tape_bytes + self.state_bytes
    }
}

fn ordered_map<T: Sync, R: Send>(items: &[T], parallel: bool, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

struct SampleGrad {
    grads: ParamStore,
    loss: f64,
    tape_bytes: usize,
}

fn sample_grad(model: &Model, s: &Sample, adj: &Adjacency, stats: &NormStats, delta: f64) -> Result<SampleGrad> {
    let params = model.params();
    let mut tape = Tape::new();
    let b = params.bind(&mut tape);
    let w = WindowRef {
        x_norm: &s.input,
        tod_idx: &s.tod_idx,
        dow_idx: &s.dow_idx,
    };
    let loss = model.loss_tape(&mut tape, &b, &w, &s.target, adj, stats, delta, true)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss on the window starting at step {}", s.start)));
    }
    let grads = tape.backward(loss)?;
    let mut store = params.zeros_like();
    store.accumulate(&b, &grads, 1.0);
    Ok(SampleGrad {
        grads: store,
        loss: value,
        tape_bytes: tape.accounted_bytes(),
    })
}

/// Averages per-sample gradients over `samples` and applies one Adam update.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    samples: &[Sample],
    adj: &Adjacency,
    stats: &NormStats,
    delta: f64,
    parallel: bool,
) -> Result<StepReport> {
    if samples.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let scale = 1.0 / samples.len() as f64;
    let mut total = model.params().zeros_like();
    let mut loss = 0.0;
    let mut peak = 0;
    let mut add = |r: SampleGrad| {
        for (dst, src) in total.tensors_mut().iter_mut().zip(r.grads.tensors()) {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d += scale * s;
            }
        }
        loss += scale * r.loss;
        peak = peak.max(r.tape_bytes);
    };
    // per-sample gradient stores alive at once
    let held = if parallel && cfg!(feature = "parallel") {
        let m = &*model;
        let per_sample = ordered_map(samples, true, |s| sample_grad(m, s, adj, stats, delta));
        for r in per_sample {
            add(r?);
        }
        samples.len()
    } else {
        for s in samples {
            add(sample_grad(model, s, adj, stats, delta)?);
        }
        1
    };
    adam.update(model.params_mut(), &total)?;
    let param_bytes: usize = model.params().tensors().iter().map(|t| t.bytes()).sum();
    Ok(StepReport {
        loss,
        peak_tape_bytes: peak,
        state_bytes: (4 + held) * param_bytes,
    })
}

/// Horizon-averaged metrics over every window of `part`, in raw units.
pub fn evaluate(model: &Model, data: &Prepared, part: Part, mape_threshold: f64, parallel: bool) -> Result<MetricReport> {
    let c = model.config();
    let windows = data.windows(part, c.t_in, c.t_out, 64, None)?;
    let adj = &data.dataset.adjacency;
    let mut acc = MetricAccumulator::new(mape_threshold);
    for batch in windows {
        let samples: Vec<Sample> = batch.samples().collect();
        let forecasts = ordered_map(&samples, parallel, |s| {
            let w = WindowRef {
                x_norm: &s.input,
                tod_idx: &s.tod_idx,
                dow_idx: &s.dow_idx,
            };
            model.forward(&w, adj, &data.stats, false, false)
        });
        for (s, f) in samples.iter().zip(forecasts) {
            acc.push(&s.target, &f?.y_hat)?;
        }
    }
    acc.finish()
}

fn check_fits(cfg: &ModelConfig, data: &Prepared) -> Result<()> {
    let ds = &data.dataset;
    if cfg.n_nodes != ds.n_nodes() || cfg.steps_per_day != ds.steps_per_day {
        return Err(Error::Config(format!(
            "model expects N={} and {} steps per day, dataset {} has N={} and {}",
            cfg.n_nodes,
            cfg.steps_per_day,
            ds.name,
            ds.n_nodes(),
            ds.steps_per_day
        )));
    }
    Ok(())
}

pub fn train(data: &Prepared, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(data, cfg, |_| {})
}

/// Trains on the train part, validating after every epoch; `on_epoch` sees
/// each log row as soon as it is complete.
pub fn train_with(data: &Prepared, cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_fits(&cfg.model, data)?;
    let (t_in, t_out) = (cfg.model.t_in, cfg.model.t_out);
    // fail early on parts that are too short
    data.windows(Part::Train, t_in, t_out, cfg.batch_size, None)?;
    data.windows(Part::Val, t_in, t_out, cfg.batch_size, None)?;

    let parallel = !cfg.deterministic;
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let mut adam = Adam::new(cfg.adam.clone(), model.params());
    let mut shuffle = rng::stream(cfg.seed, Stream::Shuffle);
    let adj = data.dataset.adjacency.clone();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        adam.start_epoch(epoch);
        let lr = adam.lr();
        let windows = data.windows(Part::Train, t_in, t_out, cfg.batch_size, Some(shuffle.next_u64()))?;
        let n = windows.n_samples();
        let mut loss_sum = 0.0;
        for batch in windows {
            let samples: Vec<Sample> = batch.samples().collect();
            let step = train_step(&mut model, &mut adam, &samples, &adj, &data.stats, cfg.huber_delta, parallel)?;
            loss_sum += step.loss * samples.len() as f64;
        }
        let val = evaluate(&model, data, Part::Val, cfg.mape_threshold, parallel)?;
        let row = EpochLog {
            epoch,
            train_loss: loss_sum / n as f64,
            val,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        if best.as_ref().is_none_or(|(mae, _, _)| val.mae < *mae) {
            best = Some((val.mae, epoch, model.params().clone()));
        }
        on_epoch(&row);
        log.push(row);
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    model.params_mut().copy_from(&params)?;
    Ok(TrainOutcome {
        model,
        best_epoch,
        optimizer: adam,
        stats: data.stats,
        log,
    })
}

pub const LOG_HEADER: &str = "epoch,train_loss,val_rmse,val_mae,val_mape,lr,seconds";

pub fn log_row(r: &EpochLog) -> String {
    format!(
        "{},{},{},{},{},{},{:.3}",
        r.epoch, r.train_loss, r.val.rmse, r.val.mae, r.val.mape, r.lr, r.seconds
    )
}

pub fn write_log(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from(LOG_HEADER);
    text.push('\n');
    for r in log {
        text.push_str(&log_row(r));
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
