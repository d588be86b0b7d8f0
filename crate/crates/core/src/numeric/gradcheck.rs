use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `max_i |analytic_i - fd_i| / max(1, |fd_i|)`.
    pub max_rel_error: f64,
    /// Parameter index where the maximum was attained.
    pub worst_index: usize,
}

/// Compares an analytic gradient against central differences of `loss` with step `h`.
///
/// A non-finite loss at any probe point is reported with the offending parameter index.
pub fn grad_check<F>(mut loss: F, params: &[f64], analytic: &[f64], h: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(Error::shape("grad_check", params.len(), analytic.len()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let mut probe = params.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_index: 0 };
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = loss(&probe);
        probe[i] = orig - h;
        let down = loss(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite { what: "loss during gradient check", index: i });
        }
        let fd = (up - down) / (2.0 * h);
        let rel = (analytic[i] - fd).abs() / fd.abs().max(1.0);
        if rel > report.max_rel_error || !rel.is_finite() {
            report = GradCheckReport { max_rel_error: rel, worst_index: i };
        }
    }
    Ok(report)
}
