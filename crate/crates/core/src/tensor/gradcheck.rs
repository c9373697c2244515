use super::{Binding, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// finite differences with step `h`, over every entry of every parameter.
///
/// Relative error per entry is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(store: &mut ParamStore, h: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'p> Fn(&mut Tape<'p>, &Binding) -> Result<Var>,
{
    if !(1e-7..=1e-4).contains(&h) {
        return Err(Error::Invalid(format!(
            "finite-difference step must lie in [1e-7, 1e-4], got {h}"
        )));
    }
    let analytic = {
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let loss = f(&mut tape, &binding)?;
        let grads = tape.backward(loss)?;
        binding
            .vars()
            .iter()
            .zip(store.tensors())
            .map(|(&v, t)| {
                grads
                    .get(v)
                    .map_or_else(|| vec![0.0; t.len()], |g| g.data().to_vec())
            })
            .collect::<Vec<_>>()
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let loss = f(&mut tape, &binding)?;
        Ok(tape.value(loss).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for k in 0..store.get(id).len() {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + h;
            let plus = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig - h;
            let minus = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[id.index()][k];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.entries_checked += 1;
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst_param = store.name(id).to_string();
                report.worst_index = k;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Elementwise, Operand, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn quadratic_closed_form() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(3.0));
        let r = grad_check(&mut store, 1e-6, |tape, b| {
            let w = b.vars()[0];
            let sq = tape.mul(w, w)?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn huber_slope_at_half() {
        let mut store = ParamStore::new();
        store.add("r", Tensor::full(&[1, 1], 0.5).unwrap());
        let target = Tensor::zeros(&[1, 1]).unwrap();
        let r = grad_check(&mut store, 1e-6, |tape, b| tape.huber(b.vars()[0], &target, 1.0)).unwrap();
        assert!(r.max_rel_error < 1e-7, "{r:?}");
        assert!((r.analytic - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_step_outside_range() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(1.0));
        let r = grad_check(&mut store, 1e-3, |tape, b| Ok(tape.sum(b.vars()[0])));
        assert!(r.is_err());
    }

    // Matrix product of random 3x4 and 4x2 operands, reduced through a fixed
    // random weighting so every output entry matters.
    #[test]
    fn matmul_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        store.add("a", random(&mut rng, &[3, 4]));
        store.add("b", random(&mut rng, &[4, 2]));
        let w = random(&mut rng, &[3, 2]);
        let r = grad_check(&mut store, 1e-6, |tape, b| {
            let c = tape.matmul(b.vars()[0], b.vars()[1])?;
            let wv = tape.constant(w.clone());
            let p = tape.mul(c, wv)?;
            Ok(tape.sum(p))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-7, "{r:?}");
    }

    #[test]
    fn concat_splits_gradient_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut store = ParamStore::new();
        store.add("a", random(&mut rng, &[3, 2]));
        store.add("b", random(&mut rng, &[3, 1]));
        store.add("c", random(&mut rng, &[3, 3]));
        let w = random(&mut rng, &[3, 6]);
        let r = grad_check(&mut store, 1e-6, |tape, b| {
            let c = tape.concat_cols(b.vars())?;
            let sq = tape.mul(c, c)?;
            let wv = tape.constant(w.clone());
            let p = tape.mul(sq, wv)?;
            Ok(tape.sum(p))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn every_op_passes_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut store = ParamStore::new();
        store.add("x", random(&mut rng, &[4, 8]));
        store.add("gamma", random(&mut rng, &[8]));
        store.add("beta", random(&mut rng, &[8]));
        store.add("bias", random(&mut rng, &[8]));
        store.add("y", random(&mut rng, &[4, 8]));
        store.add("table", random(&mut rng, &[5, 4]));
        let mask: Vec<bool> = (0..32).map(|i| i % 3 != 1).collect();
        let target = random(&mut rng, &[8, 4]);
        let r = grad_check(&mut store, 1e-6, |tape, b| {
            let v = b.vars();
            let ln = tape.layer_norm(v[0], v[1], v[2], 1e-5)?;
            let biased = tape.add_bias(ln, v[3])?;
            let diff = tape.sub(biased, v[4])?;
            let prod = tape.elementwise(Elementwise::Mul, diff, Some(Operand::Var(v[0])))?;
            let act = tape.relu(prod)?;
            let sm = tape.softmax_rows(act, Some(&mask))?;
            let scaled = tape.scale(sm, 3.0);
            let shifted = tape.add_scalar(scaled, -0.2)?;
            let tt = tape.transpose(shifted)?;
            let rows = tape.gather_rows(v[5], &[0, 3, 3, 1])?;
            let mixed = tape.matmul(tt, rows)?;
            let h = tape.huber(mixed, &target, 0.3)?;
            let m = tape.mean(mixed);
            tape.add(h, m)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }
}
