//! Residual reports and convergence-order helpers shared by the identity checks.

use serde::Serialize;

/// Worst pointwise residual of an identity over a trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub name: String,
    pub max_residual: f64,
    /// Where the worst residual sits: `(t, cell)`.
    pub location: Option<(f64, usize)>,
    /// Formal order in `dt` and `h` of the residual.
    pub expected_order: f64,
}

impl ResidualReport {
    pub(crate) fn new(name: &str, expected_order: f64) -> Self {
        ResidualReport {
            name: name.to_string(),
            max_residual: 0.0,
            location: None,
            expected_order,
        }
    }

    pub(crate) fn record(&mut self, value: f64, t: f64, cell: usize) {
        let v = value.abs();
        if v > self.max_residual || self.location.is_none() || v.is_nan() {
            self.max_residual = v;
            self.location = Some((t, cell));
        }
    }
}

/// `log2(e_k / e_{k+1})` for successive refinements by a factor of two.
pub fn convergence_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// Centered derivative of a uniformly or non-uniformly sampled sequence at
/// interior index `k`.
pub(crate) fn centered(values: &[f64], times: &[f64], k: usize) -> f64 {
    (values[k + 1] - values[k - 1]) / (times[k + 1] - times[k - 1])
}
