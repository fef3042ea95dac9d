//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward pass, so it is independent
//! of the reverse-mode code it is compared against.

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::params::ParamStore;

/// Denominator floor for the relative error, so that gradients which are both
/// essentially zero do not produce spurious failures.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// (parameter, element, analytic, numeric) at the worst element.
    pub worst: Option<(String, usize, f64, f64)>,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compare reverse-mode gradients of `loss_fn` against central differences
/// with step `h`, over every element of every parameter in `store`.
pub fn check_gradients<L>(store: &ParamStore<f64>, h: f64, loss_fn: L) -> Result<GradCheckReport>
where
    L: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut analytic = store.clone();
    analytic.zero_grads();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, &analytic)?;
    g.backward_into(loss, &mut analytic)?;

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let l = loss_fn(&mut g, s)?;
        Ok(g.scalar(l))
    };

    let mut report = GradCheckReport { checked: 0, max_rel_error: 0.0, worst: None };
    let mut probe = store.clone();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let n = store.value(&name)?.len();
        for i in 0..n {
            let orig = store.value(&name)?.data()[i];
            probe.get_mut(&name)?.value.data_mut()[i] = orig + h;
            let plus = eval(&probe)?;
            probe.get_mut(&name)?.value.data_mut()[i] = orig - h;
            let minus = eval(&probe)?;
            probe.get_mut(&name)?.value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(&name)?.grad.data()[i];
            let err = rel_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((name.clone(), i, a, numeric));
            }
        }
    }
    Ok(report)
}
