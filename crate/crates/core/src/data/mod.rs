//! Traffic data: loading, synthesis, chronological splits, z-score
//! normalisation and sliding-window batching.

mod dataset;
mod io;
mod synth;
mod windows;

pub use dataset::{Adjacency, TrafficDataset};
pub use io::{load_dataset, save_dataset, Meta};
pub use synth::{synth_generate, SynthConfig};
pub use windows::{make_windows, ForecastBatch, Sample, WindowIter};

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Part {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Part::Train),
            "val" => Ok(Part::Val),
            "test" => Ok(Part::Test),
            other => Err(Error::Config(format!(
                "unknown split {other:?} (expected train, val or test)"
            ))),
        }
    }
}

/// Chronological split boundaries: train `[0, train_end)`, validation
/// `[train_end, val_end)`, test `[val_end, total)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_end: usize,
    pub val_end: usize,
    pub total: usize,
}

impl SplitSpec {
    pub fn range(&self, part: Part) -> Range<usize> {
        match part {
            Part::Train => 0..self.train_end,
            Part::Val => self.train_end..self.val_end,
            Part::Test => self.val_end..self.total,
        }
    }
}

/// 6:2:2 chronological split of `total` steps.
pub fn split_622(total: usize) -> Result<SplitSpec> {
    if total < 10 {
        return Err(Error::Invalid(format!(
            "a 6:2:2 split needs at least 10 steps, got {total}"
        )));
    }
    Ok(SplitSpec {
        train_end: total * 6 / 10,
        val_end: total * 8 / 10,
        total,
    })
}

/// Global z-score statistics, fitted on the training split only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn fit(signal: &Tensor, split: &SplitSpec) -> Result<Self> {
        let n = signal.cols();
        let train = &signal.data()[..split.train_end * n];
        let count = train.len() as f64;
        let mean = train.iter().sum::<f64>() / count;
        let var = train.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
        let std = var.sqrt();
        if !(std > 0.0) {
            return Err(Error::Invalid(
                "training split is constant; z-score standard deviation is zero".into(),
            ));
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        x.map(|v| (v - self.mean) / self.std)
    }

    pub fn invert(&self, x: &Tensor) -> Tensor {
        x.map(|v| v * self.std + self.mean)
    }
}

/// Fits z-score statistics on the training part and normalises the whole signal.
pub fn fit_apply_zscore(ds: &TrafficDataset, split: &SplitSpec) -> Result<(Tensor, NormStats)> {
    let stats = NormStats::fit(&ds.signal, split)?;
    Ok((stats.apply(&ds.signal), stats))
}

/// A dataset together with its split, statistics and normalised signal.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: TrafficDataset,
    pub split: SplitSpec,
    pub stats: NormStats,
    pub normalized: Tensor,
}

impl Prepared {
    pub fn new(dataset: TrafficDataset) -> Result<Self> {
        let split = split_622(dataset.n_steps())?;
        let (normalized, stats) = fit_apply_zscore(&dataset, &split)?;
        Ok(Self {
            dataset,
            split,
            stats,
            normalized,
        })
    }

    /// Uses previously fitted statistics (e.g. restored from a checkpoint).
    pub fn with_stats(dataset: TrafficDataset, stats: NormStats) -> Result<Self> {
        let split = split_622(dataset.n_steps())?;
        let normalized = stats.apply(&dataset.signal);
        Ok(Self {
            dataset,
            split,
            stats,
            normalized,
        })
    }

    pub fn windows(
        &self,
        part: Part,
        t_in: usize,
        t_out: usize,
        batch_size: usize,
        shuffle_seed: Option<u64>,
    ) -> Result<WindowIter<'_>> {
        make_windows(self, part, t_in, t_out, batch_size, shuffle_seed)
    }

    /// One window starting at global step `start`.
    pub fn sample(&self, start: usize, t_in: usize, t_out: usize) -> Result<Sample> {
        let total = self.dataset.n_steps();
        if start + t_in + t_out > total {
            return Err(Error::Invalid(format!(
                "window starting at {start} needs {} steps but the dataset has {total}",
                t_in + t_out
            )));
        }
        Ok(Sample::extract(self, start, t_in, t_out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn split_examples() {
        let s = split_622(16992).unwrap();
        assert_eq!((s.train_end, s.val_end), (10195, 13593));
        let s = split_622(10).unwrap();
        assert_eq!((s.train_end, s.val_end), (6, 8));
        let s = split_622(100).unwrap();
        assert_eq!((s.train_end, s.val_end), (60, 80));
        assert!(split_622(9).is_err());
    }

    fn one_node(values: &[f64]) -> TrafficDataset {
        let signal = Tensor::new(&[values.len(), 1], values.to_vec()).unwrap();
        TrafficDataset::new("t", signal, 4, 0, 0, Adjacency::from_edges(1, &[]).unwrap()).unwrap()
    }

    #[test]
    fn zscore_closed_form() {
        let mut v = vec![0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 5.0, 6.0, 7.0, 3.0];
        let ds = one_node(&v);
        let split = split_622(10).unwrap();
        let (norm, stats) = fit_apply_zscore(&ds, &split).unwrap();
        assert_eq!((stats.mean, stats.std), (1.0, 1.0));
        assert_eq!(norm.data()[9], 2.0);

        // val/test values never reach the statistics
        v[6..].iter_mut().for_each(|x| *x *= -40.0);
        let (_, stats2) = fit_apply_zscore(&one_node(&v), &split).unwrap();
        assert_eq!(stats, stats2);
    }

    #[test]
    fn zscore_rejects_constant_training_part() {
        let ds = one_node(&[3.0; 10]);
        assert!(fit_apply_zscore(&ds, &split_622(10).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn zscore_round_trip(values in prop::collection::vec(-1e4f64..1e4, 10..200)) {
            let ds = one_node(&values);
            let split = split_622(values.len()).unwrap();
            prop_assume!(NormStats::fit(&ds.signal, &split).is_ok());
            let (norm, stats) = fit_apply_zscore(&ds, &split).unwrap();
            let back = stats.invert(&norm);
            for (a, b) in back.data().iter().zip(&values) {
                prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
            }
        }
    }
}
