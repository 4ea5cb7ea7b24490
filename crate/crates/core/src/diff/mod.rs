//! Reverse-mode differentiation and dense kernels.
//!
//! The model is expressed entirely through [`Tape`] operations over
//! [`Tensor`] values. Complex state-space parameters live on the tape as
//! pairs of real tensors, so every gradient can be checked with real
//! central differences ([`finite_difference_check`]).

mod adam;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use tape::{CustomOp, Gradients, ParamId, ParamStore, Parameter, Tape, Var};
pub use tensor::{matmul, softmax_rows, Complex, ComplexVector, Tensor};

pub use tape::sigmoid;
pub(crate) use tape::softplus;

use crate::error::Result;

/// Outcome of comparing tape gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over all checked coordinates.
    pub max_rel_error: f64,
    /// Parameter name and flat index where it occurred.
    pub worst: (String, usize),
    /// Analytic and numeric derivative at `worst`.
    pub worst_values: (f64, f64),
    pub checked: usize,
}

/// Relative error with an absolute floor so vanishing gradients compare by
/// absolute difference instead of amplifying rounding noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Finite-difference formula used by [`finite_difference_check_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, truncation error O(h²).
    #[default]
    TwoPoint,
    /// `(f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h`, truncation error O(h⁴).
    FourPoint,
}

/// Compares the analytic gradient of `loss` with central differences of step `h`
/// on every scalar of every parameter in `store`.
///
/// `loss` builds a fresh tape from the current parameter values and returns
/// the scalar loss node.
pub fn finite_difference_check<F>(store: &mut ParamStore, h: f64, loss: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(Tape, Var)>,
{
    finite_difference_check_with(store, h, Stencil::TwoPoint, loss)
}

/// [`finite_difference_check`] with a choice of stencil.
pub fn finite_difference_check_with<F>(
    store: &mut ParamStore,
    h: f64,
    stencil: Stencil,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(Tape, Var)>,
{
    store.zero_grad();
    let (tape, out) = loss(store)?;
    let grads = tape.backward(out)?;
    tape.accumulate_param_grads(&grads, store);
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad.data().to_vec()).collect();
    store.zero_grad();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        worst_values: (0.0, 0.0),
        checked: 0,
    };
    for pi in 0..store.len() {
        let id = ParamId(pi);
        for k in 0..store.get(id).value.len() {
            let orig = store.get(id).value.data()[k];
            let mut at = |x: f64| -> Result<f64> {
                store.get_mut(id).value.data_mut()[k] = x;
                let (t, o) = loss(store)?;
                Ok(t.scalar(o))
            };
            let numeric = match stencil {
                Stencil::TwoPoint => (at(orig + h)? - at(orig - h)?) / (2.0 * h),
                Stencil::FourPoint => {
                    (at(orig - 2.0 * h)? - 8.0 * at(orig - h)? + 8.0 * at(orig + h)? - at(orig + 2.0 * h)?)
                        / (12.0 * h)
                }
            };
            store.get_mut(id).value.data_mut()[k] = orig;
            let err = relative_error(analytic[pi][k], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (store.get(id).name.clone(), k);
                report.worst_values = (analytic[pi][k], numeric);
            }
        }
    }
    Ok(report)
}
