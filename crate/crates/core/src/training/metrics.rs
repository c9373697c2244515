use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_MAPE_THRESHOLD: f64 = 0.1;

/// Horizon-averaged errors in raw units; `mape` is a percentage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
    pub n_eval: usize,
    /// Entries left out of MAPE because `|y|` was at or below the threshold.
    pub n_masked: usize,
}

impl std::fmt::Display for MetricReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "rmse={:.4} mae={:.4} mape={:.4}", self.rmse, self.mae, self.mape)
    }
}

/// Running sums for [`MetricReport`].
#[derive(Clone, Copy, Debug)]
pub struct MetricAccumulator {
    threshold: f64,
    sq: f64,
    abs: f64,
    ape: f64,
    n: usize,
    n_ape: usize,
}

impl MetricAccumulator {
    pub fn new(mape_threshold: f64) -> Self {
        Self {
            threshold: mape_threshold,
            sq: 0.0,
            abs: 0.0,
            ape: 0.0,
            n: 0,
            n_ape: 0,
        }
    }

    pub fn push(&mut self, y: &Tensor, y_hat: &Tensor) -> Result<()> {
        if y.shape() != y_hat.shape() {
            return Err(Error::shape("metrics", format!("{:?} vs {:?}", y.shape(), y_hat.shape())));
        }
        for (&t, &p) in y.data().iter().zip(y_hat.data()) {
            let e = (t - p).abs();
            self.sq += e * e;
            self.abs += e;
            if t.abs() > self.threshold {
                self.ape += e / t.abs();
                self.n_ape += 1;
            }
        }
        self.n += y.len();
        Ok(())
    }

    pub fn finish(&self) -> Result<MetricReport> {
        if self.n == 0 {
            return Err(Error::Invalid("evaluation set is empty".into()));
        }
        let n = self.n as f64;
        Ok(MetricReport {
            rmse: (self.sq / n).sqrt(),
            mae: self.abs / n,
            mape: if self.n_ape == 0 {
                0.0
            } else {
                100.0 * self.ape / self.n_ape as f64
            },
            n_eval: self.n,
            n_masked: self.n - self.n_ape,
        })
    }
}

pub fn metrics(y: &Tensor, y_hat: &Tensor, mape_threshold: f64) -> Result<MetricReport> {
    let mut acc = MetricAccumulator::new(mape_threshold);
    acc.push(y, y_hat)?;
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Tensor {
        Tensor::new(&[x.len()], x.to_vec()).unwrap()
    }

    #[test]
    fn closed_forms() {
        let r = metrics(&v(&[3.0, 4.0]), &v(&[3.0, 4.0]), 0.1).unwrap();
        assert_eq!((r.rmse, r.mae, r.mape), (0.0, 0.0, 0.0));
        let r = metrics(&v(&[2.0]), &v(&[1.0]), 0.1).unwrap();
        assert_eq!((r.rmse, r.mae, r.mape), (1.0, 1.0, 50.0));
        let r = metrics(&v(&[0.0, 2.0]), &v(&[1.0, 1.0]), 0.1).unwrap();
        assert_eq!(r.mape, 50.0);
        assert_eq!((r.n_eval, r.n_masked), (2, 1));
    }

    #[test]
    fn empty_is_an_error() {
        assert!(MetricAccumulator::new(0.1).finish().is_err());
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..40)) {
            let y = v(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
            let yh = v(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
            let r = metrics(&y, &yh, 0.1).unwrap();
            prop_assert!(r.rmse + 1e-12 >= r.mae);
            prop_assert!(r.mae >= 0.0 && r.mape >= 0.0);
        }
    }
}
