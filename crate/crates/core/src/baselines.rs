//! Historical average and vector autoregression.
//!
//! Both work on raw (un-normalised) signal values.

use nalgebra::DMatrix;

use crate::data::{Part, Prepared};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::training::{MetricAccumulator, MetricReport};

pub const DEFAULT_VAR_ORDER: usize = 3;
pub const DEFAULT_VAR_LAMBDA: f64 = 1e-3;

/// Per-node mean of the input window, repeated over the horizon.
pub fn ha_predict(window: &Tensor, t_out: usize) -> Result<Tensor> {
    let (t, n) = window.expect_matrix("ha_predict")?;
    let mut mean = vec![0.0; n];
    for i in 0..t {
        for (m, v) in mean.iter_mut().zip(window.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    Tensor::new(&[t_out, n], mean.repeat(t_out))
}

/// `x_t = c + Σ_{i=1..p} A_i x_{t−i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct VarModel {
    pub p: usize,
    /// `A_1 … A_p`, each `N × N`; row `r` maps the lagged vector to node `r`.
    pub coefs: Vec<Tensor>,
    pub intercept: Vec<f64>,
    pub lambda: f64,
}

impl VarModel {
    pub fn n_nodes(&self) -> usize {
        self.intercept.len()
    }

    /// One-step forecast from `lags[0] = x_{t−1}, …, lags[p−1] = x_{t−p}`.
    fn step(&self, lags: &[&[f64]]) -> Vec<f64> {
        let n = self.n_nodes();
        let mut out = self.intercept.clone();
        for (a, x) in self.coefs.iter().zip(lags) {
            for (r, o) in out.iter_mut().enumerate() {
                *o += a.data()[r * n..(r + 1) * n].iter().zip(*x).map(|(w, v)| w * v).sum::<f64>();
            }
        }
        out
    }

    pub fn coef_norm(&self) -> f64 {
        self.coefs
            .iter()
            .flat_map(|a| a.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Ridge least squares on the lagged design, intercept unpenalised, solved
/// through a Cholesky factorisation of the normal matrix.
pub fn var_fit(train: &Tensor, p: usize, lambda: f64) -> Result<VarModel> {
    let (t, n) = train.expect_matrix("var_fit")?;
    if p == 0 {
        return Err(Error::Config("VAR order p must be at least 1".into()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("ridge lambda must be finite and ≥ 0, got {lambda}")));
    }
    let k = 1 + n * p;
    if t <= p + n * p {
        return Err(Error::Invalid(format!(
            "VAR({p}) on {n} nodes needs more than {} training steps, got {t}",
            p + n * p
        )));
    }
    let rows = t - p;
    let design = DMatrix::from_fn(rows, k, |r, c| {
        if c == 0 {
            1.0
        } else {
            let (lag, node) = ((c - 1) / n + 1, (c - 1) % n);
            train.get(r + p - lag, node)
        }
    });
    let targets = DMatrix::from_fn(rows, n, |r, c| train.get(r + p, c));
    let mut gram = design.transpose() * &design;
    for i in 1..k {
        gram[(i, i)] += lambda;
    }
    let rhs = design.transpose() * targets;
    let scale = gram.diagonal().max();
    let singular = || {
        if lambda == 0.0 {
            Error::Numeric(format!(
                "VAR normal matrix is singular with lambda = 0; use a ridge penalty lambda > 0 (e.g. {DEFAULT_VAR_LAMBDA})"
            ))
        } else {
            Error::Numeric(format!("VAR normal matrix is singular even with lambda = {lambda}; increase it"))
        }
    };
    let chol = gram.cholesky().ok_or_else(singular)?;
    let min_pivot = chol.l_dirty().diagonal().iter().map(|d| d * d).fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-12 * scale) {
        return Err(singular());
    }
    let beta = chol.solve(&rhs);
    let coefs = (0..p)
        .map(|lag| {
            let data = (0..n)
                .flat_map(|r| (0..n).map(move |c| (r, c)))
                .map(|(r, c)| beta[(1 + lag * n + c, r)])
                .collect();
            Tensor::new(&[n, n], data)
        })
        .collect::<Result<_>>()?;
    Ok(VarModel {
        p,
        coefs,
        intercept: (0..n).map(|r| beta[(0, r)]).collect(),
        lambda,
    })
}

/// Iterated one-step rollout, feeding forecasts back as lags.
pub fn var_predict(model: &VarModel, window: &Tensor, t_out: usize) -> Result<Tensor> {
    let (t, n) = window.expect_matrix("var_predict")?;
    if n != model.n_nodes() {
        return Err(Error::shape(
            "var_predict",
            format!("window has {n} nodes, model was fitted on {}", model.n_nodes()),
        ));
    }
    if t < model.p {
        return Err(Error::Invalid(format!("VAR({}) needs at least {} input steps, got {t}", model.p, model.p)));
    }
    let mut history: Vec<Vec<f64>> = (t - model.p..t).map(|i| window.row(i).to_vec()).collect();
    let mut out = Vec::with_capacity(t_out * n);
    for _ in 0..t_out {
        let lags: Vec<&[f64]> = history.iter().rev().map(Vec::as_slice).collect();
        let next = model.step(&lags);
        out.extend_from_slice(&next);
        history.remove(0);
        history.push(next);
    }
    Tensor::new(&[t_out, n], out)
}

pub enum Baseline {
    Ha,
    Var(VarModel),
}

impl Baseline {
    /// Fits VAR on the raw training part.
    pub fn fit_var(data: &Prepared, p: usize, lambda: f64) -> Result<Self> {
        let train = data.dataset.rows(0, data.split.train_end);
        Ok(Baseline::Var(var_fit(&train, p, lambda)?))
    }

    pub fn predict(&self, window: &Tensor, t_out: usize) -> Result<Tensor> {
        match self {
            Baseline::Ha => ha_predict(window, t_out),
            Baseline::Var(m) => var_predict(m, window, t_out),
        }
    }
}

/// Metrics of `baseline` over every window of `part`, in raw units.
pub fn evaluate_baseline(
    baseline: &Baseline,
    data: &Prepared,
    part: Part,
    t_in: usize,
    t_out: usize,
    mape_threshold: f64,
) -> Result<MetricReport> {
    let windows = data.windows(part, t_in, t_out, 1, None)?;
    let mut acc = MetricAccumulator::new(mape_threshold);
    for &s in windows.window_starts() {
        let input = data.dataset.rows(s, t_in);
        let target = data.dataset.rows(s + t_in, t_out);
        acc.push(&target, &baseline.predict(&input, t_out)?)?;
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};

    fn column(values: &[f64]) -> Tensor {
        Tensor::new(&[values.len(), 1], values.to_vec()).unwrap()
    }

    #[test]
    fn ha_is_window_mean() {
        let w = Tensor::from_rows(&[vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]]).unwrap();
        let one = ha_predict(&w, 1).unwrap();
        let seven = ha_predict(&w, 7).unwrap();
        assert_eq!(one.row(0), &[2.0, 5.0]);
        for i in 0..7 {
            assert_eq!(seven.row(i), one.row(0));
        }
    }

    #[test]
    fn ar1_recovered() {
        let mut x = vec![3.0];
        for _ in 0..60 {
            x.push(0.5 * x.last().unwrap() + 1.0);
        }
        // the noiseless series converges to 2; keep the transient so the
        // design stays well conditioned
        let m = var_fit(&column(&x[..20]), 1, 0.0).unwrap();
        assert!((m.coefs[0].data()[0] - 0.5).abs() < 1e-8, "{m:?}");
        assert!((m.intercept[0] - 1.0).abs() < 1e-8, "{m:?}");
    }

    // lightly damped rotation, so a noiseless trajectory keeps exciting
    // both directions of the state space
    #[test]
    fn coupled_pair_recovered() {
        let a = [[0.8, -0.5], [0.45, 0.85]];
        let c = [1.0, -0.5];
        let mut rows = vec![vec![4.0, -3.0]];
        for _ in 0..60 {
            let prev = rows.last().unwrap();
            let next: Vec<f64> = (0..2).map(|i| c[i] + a[i][0] * prev[0] + a[i][1] * prev[1]).collect();
            rows.push(next);
        }
        let m = var_fit(&Tensor::from_rows(&rows).unwrap(), 1, 0.0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((m.coefs[0].get(i, j) - a[i][j]).abs() < 1e-6, "{m:?}");
            }
            assert!((m.intercept[i] - c[i]).abs() < 1e-6, "{m:?}");
        }
    }

    #[test]
    fn constant_signal_converges_to_constant() {
        let x = Tensor::full(&[50, 2], 7.0).unwrap();
        let m = var_fit(&x, 2, 1e-3).unwrap();
        let y = var_predict(&m, &Tensor::full(&[4, 2], 7.0).unwrap(), 200).unwrap();
        for v in y.row(199) {
            assert!((v - 7.0).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn singular_without_ridge_suggests_lambda() {
        let x = Tensor::full(&[50, 2], 7.0).unwrap();
        let err = var_fit(&x, 1, 0.0).unwrap_err();
        assert!(err.to_string().contains("lambda > 0"), "{err}");
    }

    fn hand_model(a: Tensor, c: Vec<f64>) -> VarModel {
        VarModel {
            p: 1,
            coefs: vec![a],
            intercept: c,
            lambda: 0.0,
        }
    }

    #[test]
    fn rollout_special_cases() {
        let w = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, -4.0]]).unwrap();
        let id = hand_model(Tensor::identity(2).unwrap(), vec![0.0, 0.0]);
        let y = var_predict(&id, &w, 5).unwrap();
        for i in 0..5 {
            assert_eq!(y.row(i), &[3.0, -4.0]);
        }
        let flat = hand_model(Tensor::zeros(&[2, 2]).unwrap(), vec![9.0, 8.0]);
        let y = var_predict(&flat, &w, 3).unwrap();
        for i in 0..3 {
            assert_eq!(y.row(i), &[9.0, 8.0]);
        }
        let a = Tensor::from_rows(&[vec![0.5, 0.25], vec![-1.0, 2.0]]).unwrap();
        let m = hand_model(a, vec![1.0, -1.0]);
        let y = var_predict(&m, &w, 1).unwrap();
        assert_eq!(y.row(0), &[1.0 + 0.5 * 3.0 + 0.25 * -4.0, -1.0 - 3.0 + 2.0 * -4.0]);
    }

    #[test]
    fn ridge_shrinks_monotonically() {
        let ds = synth_generate(&SynthConfig {
            n_nodes: 4,
            n_days: 3,
            steps_per_day: 48,
            ..Default::default()
        })
        .unwrap();
        let norms: Vec<f64> = [1.0, 1e3, 1e6, 1e12]
            .iter()
            .map(|&l| var_fit(&ds.signal, 2, l).unwrap().coef_norm())
            .collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
        assert!(norms[3] < 1e-6);
        let m = var_fit(&ds.signal, 2, 1e12).unwrap();
        let mean0 = (2..ds.n_steps()).map(|t| ds.signal.get(t, 0)).sum::<f64>() / (ds.n_steps() - 2) as f64;
        assert!((m.intercept[0] - mean0).abs() < 1e-3);
    }

    #[test]
    fn var_beats_ha_on_noiseless_synthetic_day_horizon() {
        let ds = synth_generate(&SynthConfig {
            noise_sigma: 0.0,
            ..Default::default()
        })
        .unwrap();
        let data = Prepared::new(ds).unwrap();
        let var = Baseline::fit_var(&data, DEFAULT_VAR_ORDER, DEFAULT_VAR_LAMBDA).unwrap();
        let v = evaluate_baseline(&var, &data, Part::Test, 288, 288, 0.1).unwrap();
        let h = evaluate_baseline(&Baseline::Ha, &data, Part::Test, 288, 288, 0.1).unwrap();
        assert!(v.mae < h.mae, "var {v} ha {h}");
    }
}
