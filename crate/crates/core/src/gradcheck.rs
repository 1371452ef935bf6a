//! Central finite-difference oracle for tape gradients.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub id: ParamId,
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<F>(store: &ParamStore, loss_fn: &mut F) -> Result<(Tape, Var)>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    if !tape.value(loss).is_scalar() {
        return Err(Error::NonScalarLoss(tape.value(loss).shape().to_vec()));
    }
    Ok((tape, loss))
}

/// Compares the tape gradient of `loss_fn` with central differences
/// `(f(θ+h) - f(θ-h)) / 2h` for every entry of each parameter in `ids`.
///
/// `loss_fn` must be a pure function of the store: it is evaluated twice at
/// the unperturbed point and the two losses must agree bit for bit, which
/// catches unfrozen dropout masks.
pub fn grad_check<F>(store: &mut ParamStore, ids: &[ParamId], step: f64, mut loss_fn: F) -> Result<Vec<ParamCheck>>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::GradCheck(format!("step must be positive, got {step}")));
    }
    let (tape, loss) = evaluate(store, &mut loss_fn)?;
    let base = tape.value(loss).data()[0];
    tape.backward(loss, store)?;
    drop(tape);

    let (again, loss2) = evaluate(store, &mut loss_fn)?;
    if again.value(loss2).data()[0].to_bits() != base.to_bits() {
        return Err(Error::GradCheck("loss is not deterministic; freeze dropout masks".into()));
    }
    drop(again);

    let mut report = Vec::with_capacity(ids.len());
    for &id in ids {
        let analytic = store.get(id).grad().expect("backward fills every slot").to_vec();
        let mut max_err: f64 = 0.0;
        for (k, &a) in analytic.iter().enumerate() {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + step;
            let plus = evaluate(store, &mut loss_fn).map(|(t, l)| t.value(l).data()[0]);
            store.get_mut(id).data_mut()[k] = orig - step;
            let minus = evaluate(store, &mut loss_fn).map(|(t, l)| t.value(l).data()[0]);
            store.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * step);
            max_err = max_err.max(relative_error(a, numeric));
        }
        report.push(ParamCheck {
            id,
            name: store.name(id).to_string(),
            entries: analytic.len(),
            max_rel_error: max_err,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_is_exact_under_central_difference() {
        let mut store = ParamStore::new();
        let x = store.insert("x", Tensor::scalar(3.0)).unwrap();
        let report = grad_check(&mut store, &[x], 1e-3, |s, tape| {
            let v = tape.param(s, x)?;
            tape.mul(v, v)
        })
        .unwrap();
        assert!(report[0].max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn non_deterministic_loss_is_rejected() {
        let mut store = ParamStore::new();
        let x = store.insert("x", Tensor::scalar(1.0)).unwrap();
        let mut calls = 0u64;
        let err = grad_check(&mut store, &[x], 1e-3, |s, tape| {
            calls += 1;
            let v = tape.param(s, x)?;
            tape.scale(v, calls as f64)
        })
        .unwrap_err();
        assert!(matches!(err, Error::GradCheck(_)));
    }

    #[test]
    fn step_must_be_positive() {
        let mut store = ParamStore::new();
        let x = store.insert("x", Tensor::scalar(1.0)).unwrap();
        assert!(grad_check(&mut store, &[x], 0.0, |s, t| t.param(s, x)).is_err());
    }
}
