use crate::error::{Error, Result};
use crate::model::params::{Gradients, ModelParams};

/// Compare an analytic gradient against central finite differences,
/// perturbing every scalar parameter. Returns the maximum relative error
/// `|a - n| / max(|a|, |n|, 1e-8)`.
///
/// The loss closure must be a pure function of the parameters (frozen
/// routing weights, fixed negatives) or the comparison is meaningless.
pub fn numeric_gradient_check<F>(
    params: &ModelParams,
    analytic: &Gradients,
    loss: F,
    eps: f64,
) -> Result<f64>
where
    F: Fn(&ModelParams) -> f64,
{
    if !analytic.all_finite() {
        return Err(Error::NonFiniteGradient("analytic gradient".into()));
    }
    let mut probe = params.clone();
    let mut max_rel = 0.0f64;
    for i in 0..params.n_params() {
        let original = probe.get_flat(i);
        probe.set_flat(i, original + eps);
        let plus = loss(&probe);
        probe.set_flat(i, original - eps);
        let minus = loss(&probe);
        probe.set_flat(i, original);
        let numeric = (plus - minus) / (2.0 * eps);
        if !numeric.is_finite() {
            return Err(Error::NonFiniteGradient(format!("finite difference at parameter {i}")));
        }
        let a = analytic.get_flat(i);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
