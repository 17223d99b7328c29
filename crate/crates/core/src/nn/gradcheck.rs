//! Central finite-difference gradient verification in 64-bit precision.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::Result;

/// Denominator floor for relative errors; gradients below it are compared
/// on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

/// Compares the tape gradient of `loss_fn` against central differences with
/// step `h` for every scalar of every parameter in `store`.
pub fn check_gradients<F>(store: &ParamStore<f64>, h: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>) -> Result<(Graph<f64>, Var)>,
{
    let (g, loss) = loss_fn(store)?;
    let analytic = g.backward(loss)?;
    drop(g);

    let mut probe = store.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: String::new(), checked: 0 };
    for id in store.ids() {
        let n = store.get(id).len();
        let grad = analytic.get(id);
        for i in 0..n {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + h;
            let up = eval(&probe, &loss_fn)?;
            probe.get_mut(id).data_mut()[i] = orig - h;
            let down = eval(&probe, &loss_fn)?;
            probe.get_mut(id).data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = grad.map_or(0.0, |g| g[i]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{}[{i}]: tape {a:e} vs numeric {numeric:e}", store.name(id));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

fn eval<F>(store: &ParamStore<f64>, loss_fn: &F) -> Result<f64>
where
    F: Fn(&ParamStore<f64>) -> Result<(Graph<f64>, Var)>,
{
    let (g, loss) = loss_fn(store)?;
    Ok(g.value(loss).data()[0])
}
