//! Central finite-difference checks of reverse-mode gradients.
//!
//! The numeric oracle always runs in `f64`. Gradients computed in `f32` are
//! compared against it, so round-off in the oracle stays far below the
//! tolerances being tested.

use rand::Rng;

use super::{Graph, ParamStore, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::seed;

/// Denominator floor of [`relative_error`].
pub const ERROR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradReport {
    pub probes: usize,
    pub worst: f64,
}

impl GradReport {
    pub fn merge(self, other: GradReport) -> GradReport {
        GradReport {
            probes: self.probes + other.probes,
            worst: self.worst.max(other.worst),
        }
    }
}

/// `|a - n| / max(|a|, |n|, ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

fn scalar<T: Real>(g: &Graph<T>, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(Error::Shape(format!("loss has {} elements", t.len())));
    }
    Ok(t.data()[0].as_f64())
}

/// Checks the gradient of `f` with respect to each input tensor at
/// `probes` randomly chosen elements. `f` builds the scalar loss from one
/// variable per input in `T`; `f64_twin` builds the same loss in `f64` for
/// the numeric side.
pub fn check_inputs<T, F, F64>(
    inputs: &[Tensor<f64>],
    probes: usize,
    step: f64,
    rng_seed: u64,
    f: F,
    f64_twin: F64,
) -> Result<GradReport>
where
    T: Real,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
    F64: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::<T>::default();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.cast())).collect();
    let loss = f(&mut g, &vars)?;
    scalar(&g, loss)?;
    let grads = g.backward(loss)?;

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::<f64>::default();
        let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let loss = f64_twin(&mut g, &vars)?;
        scalar(&g, loss)
    };
    let mut rng = seed::rng(rng_seed, "gradcheck-inputs");
    let mut work = inputs.to_vec();
    let mut report = GradReport::default();
    for _ in 0..probes {
        let i = rng.gen_range(0..inputs.len());
        let k = rng.gen_range(0..inputs[i].len());
        let analytic = grads.wrt(vars[i]).map_or(0.0, |t| t.data()[k].as_f64());
        let x = inputs[i].data()[k];
        work[i].data_mut()[k] = x + step;
        let up = eval(&work)?;
        work[i].data_mut()[k] = x - step;
        let down = eval(&work)?;
        work[i].data_mut()[k] = x;
        let numeric = (up - down) / (2.0 * step);
        report.probes += 1;
        report.worst = report.worst.max(relative_error(analytic, numeric));
    }
    Ok(report)
}

/// Checks the gradient of a model loss with respect to the model's
/// parameters. `model64` is the `f64` twin of `model`; `store` reaches each
/// model's parameters; `loss` builds the scalar loss.
#[allow(clippy::too_many_arguments)]
pub fn check_params<T, M, N, S, S64, L, L64>(
    model: &mut M,
    model64: &mut N,
    store: S,
    store64: S64,
    probes: usize,
    step: f64,
    rng_seed: u64,
    loss: L,
    loss64: L64,
) -> Result<GradReport>
where
    T: Real,
    S: Fn(&mut M) -> &mut ParamStore<T>,
    S64: Fn(&mut N) -> &mut ParamStore<f64>,
    L: Fn(&M, &mut Graph<T>) -> Result<Var>,
    L64: Fn(&N, &mut Graph<f64>) -> Result<Var>,
{
    store(model).zero_grad();
    let mut g = Graph::<T>::default();
    let l = loss(model, &mut g)?;
    scalar(&g, l)?;
    let grads = g.backward(l)?;
    drop(g);
    grads.accumulate_into(store(model));

    let mut rng = seed::rng(rng_seed, "gradcheck-params");
    let mut report = GradReport::default();
    for _ in 0..probes {
        let (i, k, analytic) = {
            let s = store(model);
            let i = rng.gen_range(0..s.len());
            let k = rng.gen_range(0..s.get(i).value.len());
            (i, k, s.get(i).grad.data()[k].as_f64())
        };
        let x = store64(model64).get(i).value.data()[k];
        let mut at = |v: f64| -> Result<f64> {
            store64(model64).get_mut(i).value.data_mut()[k] = v;
            let mut g = Graph::<f64>::default();
            let l = loss64(model64, &mut g)?;
            scalar(&g, l)
        };
        let up = at(x + step)?;
        let down = at(x - step)?;
        at(x)?;
        let numeric = (up - down) / (2.0 * step);
        report.probes += 1;
        report.worst = report.worst.max(relative_error(analytic, numeric));
    }
    Ok(report)
}
