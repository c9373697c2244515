use rand::seq::SliceRandom;

use super::{Part, Prepared};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

/// One forecasting example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `T × N`, normalised.
    pub input: Tensor,
    /// `T' × N`, raw units.
    pub target: Tensor,
    pub tod_idx: Vec<usize>,
    pub dow_idx: Vec<usize>,
    pub start: usize,
}

impl Sample {
    pub(crate) fn extract(data: &Prepared, start: usize, t_in: usize, t_out: usize) -> Self {
        let n = data.dataset.n_nodes();
        let input = Tensor::from_parts(
            vec![t_in, n],
            data.normalized.data()[start * n..(start + t_in) * n].to_vec(),
        );
        let target = data.dataset.rows(start + t_in, t_out);
        let steps = start..start + t_in;
        Self {
            input,
            target,
            tod_idx: steps.clone().map(|t| data.dataset.tod(t)).collect(),
            dow_idx: steps.map(|t| data.dataset.dow(t)).collect(),
            start,
        }
    }
}

/// A batch of windows stacked along a leading extent.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastBatch {
    /// `B × T × N`, normalised.
    pub inputs: Tensor,
    /// `B × T' × N`, raw units.
    pub targets: Tensor,
    /// `B × T`, row-major.
    pub tod_idx: Vec<usize>,
    /// `B × T`, row-major.
    pub dow_idx: Vec<usize>,
    pub window_starts: Vec<usize>,
}

impl ForecastBatch {
    pub fn len(&self) -> usize {
        self.window_starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window_starts.is_empty()
    }

    pub fn sample(&self, i: usize) -> Sample {
        let t_in = self.inputs.shape()[1];
        Sample {
            input: self.inputs.batch_item(i).expect("index in range"),
            target: self.targets.batch_item(i).expect("index in range"),
            tod_idx: self.tod_idx[i * t_in..(i + 1) * t_in].to_vec(),
            dow_idx: self.dow_idx[i * t_in..(i + 1) * t_in].to_vec(),
            start: self.window_starts[i],
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = Sample> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }
}

/// Lazily assembled batches over the windows of one split part.
pub struct WindowIter<'a> {
    data: &'a Prepared,
    starts: Vec<usize>,
    t_in: usize,
    t_out: usize,
    batch_size: usize,
    pos: usize,
}

impl<'a> WindowIter<'a> {
    pub fn n_samples(&self) -> usize {
        self.starts.len()
    }

    pub fn window_starts(&self) -> &[usize] {
        &self.starts
    }

    /// Individual samples in iteration order.
    pub fn into_samples(self) -> impl Iterator<Item = Sample> + 'a {
        let (data, t_in, t_out) = (self.data, self.t_in, self.t_out);
        self.starts
            .into_iter()
            .map(move |s| Sample::extract(data, s, t_in, t_out))
    }
}

impl Iterator for WindowIter<'_> {
    type Item = ForecastBatch;

    fn next(&mut self) -> Option<ForecastBatch> {
        if self.pos >= self.starts.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.starts.len());
        let samples: Vec<_> = self.starts[self.pos..end]
            .iter()
            .map(|&s| Sample::extract(self.data, s, self.t_in, self.t_out))
            .collect();
        self.pos = end;
        let inputs: Vec<_> = samples.iter().map(|s| s.input.clone()).collect();
        let targets: Vec<_> = samples.iter().map(|s| s.target.clone()).collect();
        Some(ForecastBatch {
            inputs: Tensor::stack(&inputs).expect("equal window shapes"),
            targets: Tensor::stack(&targets).expect("equal window shapes"),
            tod_idx: samples.iter().flat_map(|s| s.tod_idx.iter().copied()).collect(),
            dow_idx: samples.iter().flat_map(|s| s.dow_idx.iter().copied()).collect(),
            window_starts: samples.iter().map(|s| s.start).collect(),
        })
    }
}

/// Stride-one sliding windows over one split part.
///
/// Training windows are shuffled when a seed is given; validation and test
/// windows always come in chronological order. Windows never cross the
/// boundaries of `part`.
pub fn make_windows(
    data: &Prepared,
    part: Part,
    t_in: usize,
    t_out: usize,
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<WindowIter<'_>> {
    if t_in == 0 || t_out == 0 || batch_size == 0 {
        return Err(Error::Config(format!(
            "window lengths and batch size must be positive (T={t_in}, T'={t_out}, batch={batch_size})"
        )));
    }
    let range = data.split.range(part);
    let need = t_in + t_out;
    if range.len() < need {
        return Err(Error::Invalid(format!(
            "{part:?} split has {} steps; T={t_in}, T'={t_out} requires ≥ {need} steps",
            range.len()
        )));
    }
    let mut starts: Vec<usize> = (range.start..=range.end - need).collect();
    if let (Part::Train, Some(seed)) = (part, shuffle_seed) {
        starts.shuffle(&mut rng::stream(seed, Stream::Shuffle));
    }
    Ok(WindowIter {
        data,
        starts,
        t_in,
        t_out,
        batch_size,
        pos: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Adjacency, TrafficDataset};

    fn prepared(total: usize, n: usize, spd: usize, start_tod: usize) -> Prepared {
        let data = (0..total * n).map(|k| (k as f64 * 0.37).sin() * 10.0 + 50.0).collect();
        let signal = Tensor::new(&[total, n], data).unwrap();
        let ds = TrafficDataset::new("w", signal, spd, start_tod, 0, Adjacency::ring(n)).unwrap();
        Prepared::new(ds).unwrap()
    }

    #[test]
    fn count_formula() {
        let p = prepared(500, 3, 288, 0);
        assert_eq!(p.split.range(Part::Val).len(), 100);
        let w = make_windows(&p, Part::Val, 24, 24, 16, None).unwrap();
        assert_eq!(w.n_samples(), 53);
        assert_eq!(w.count(), 4);
    }

    #[test]
    fn too_short_names_minimum() {
        let p = prepared(500, 3, 288, 0);
        let err = make_windows(&p, Part::Val, 288, 288, 16, None).err().unwrap();
        assert!(err.to_string().contains("requires ≥ 576 steps"), "{err}");
    }

    #[test]
    fn calendar_indices_wrap() {
        let p = prepared(1000, 3, 288, 287);
        let mut w = make_windows(&p, Part::Train, 4, 2, 1, None).unwrap();
        let b = w.next().unwrap();
        assert_eq!(&b.tod_idx[..2], &[287, 0]);
        assert_eq!(&b.dow_idx[..2], &[0, 1]);
    }

    #[test]
    fn windows_stay_inside_parts_and_targets_match_source() {
        let p = prepared(300, 4, 24, 5);
        for part in [Part::Train, Part::Val, Part::Test] {
            let range = p.split.range(part);
            let (t_in, t_out) = (7, 5);
            let w = make_windows(&p, part, t_in, t_out, 8, Some(3)).unwrap();
            assert_eq!(w.n_samples(), range.len() - (t_in + t_out) + 1);
            for batch in w {
                for s in batch.samples() {
                    assert!(s.start >= range.start && s.start + t_in + t_out <= range.end);
                    let renorm = p.stats.apply(&s.target);
                    let src = &p.normalized.data()[(s.start + t_in) * 4..(s.start + t_in + t_out) * 4];
                    assert_eq!(renorm.data(), src);
                    assert_eq!(s.input.data(), &p.normalized.data()[s.start * 4..(s.start + t_in) * 4]);
                }
            }
        }
    }

    #[test]
    fn shuffling_is_seeded_and_train_only() {
        let p = prepared(300, 2, 24, 0);
        let a = make_windows(&p, Part::Train, 4, 4, 4, Some(9)).unwrap();
        let b = make_windows(&p, Part::Train, 4, 4, 4, Some(9)).unwrap();
        assert_eq!(a.window_starts(), b.window_starts());
        assert!(a.window_starts().windows(2).any(|w| w[0] > w[1]));
        let v = make_windows(&p, Part::Val, 4, 4, 4, Some(9)).unwrap();
        assert!(v.window_starts().windows(2).all(|w| w[0] < w[1]));
    }
}
