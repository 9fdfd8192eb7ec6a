//! The time weight `h(t)` of `D(t)`: a small catalog of closed forms with
//! analytic derivatives, plus tabulated values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lower bound on `|h|`.
pub const DEFAULT_H_FLOOR: f64 = 1e-10;

/// Points per unit-length window used when validating the sign of `h`.
const SIGN_SCAN_POINTS: usize = 2001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightFunction {
    Constant { c: f64 },
    /// `c e^{k t}`.
    Exponential { c: f64, k: f64 },
    /// `sum_i coeffs[i] t^i`.
    Polynomial { coeffs: Vec<f64> },
    /// Piecewise-linear values; `h'` from centered differences at the nodes
    /// (one-sided at the ends), also linearly interpolated.
    Tabulated { times: Vec<f64>, values: Vec<f64> },
}

impl WeightFunction {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            WeightFunction::Constant { c } => *c,
            WeightFunction::Exponential { c, k } => c * (k * t).exp(),
            WeightFunction::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c),
            WeightFunction::Tabulated { times, values } => interp(times, values, t),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            WeightFunction::Constant { .. } => 0.0,
            WeightFunction::Exponential { c, k } => c * k * (k * t).exp(),
            WeightFunction::Polynomial { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (i, c)| acc * t + i as f64 * c),
            WeightFunction::Tabulated { times, values } => interp(times, &node_slopes(times, values), t),
        }
    }

    /// `h' / h`.
    pub fn log_derivative(&self, t: f64) -> f64 {
        self.derivative(t) / self.value(t)
    }

    /// The same weight multiplied by `s`.
    pub fn scaled(&self, s: f64) -> WeightFunction {
        match self {
            WeightFunction::Constant { c } => WeightFunction::Constant { c: c * s },
            WeightFunction::Exponential { c, k } => WeightFunction::Exponential { c: c * s, k: *k },
            WeightFunction::Polynomial { coeffs } => WeightFunction::Polynomial {
                coeffs: coeffs.iter().map(|c| c * s).collect(),
            },
            WeightFunction::Tabulated { times, values } => WeightFunction::Tabulated {
                times: times.clone(),
                values: values.iter().map(|v| v * s).collect(),
            },
        }
    }

    /// Formal order of the `h'` approximation (`None` when exact).
    pub fn derivative_order(&self) -> Option<u32> {
        match self {
            WeightFunction::Tabulated { .. } => Some(2),
            _ => None,
        }
    }

    /// Sign of `h` on `[t0, t1]`; errors when `h` changes sign, or `|h|`
    /// drops below `floor` anywhere on a dense scan (or at tabulated nodes).
    pub fn validate(&self, t0: f64, t1: f64, floor: f64) -> Result<f64> {
        if let WeightFunction::Tabulated { times, values } = self {
            if times.len() < 2 || times.len() != values.len() {
                return Err(Error::WeightFunction("tabulated h needs >= 2 matching nodes".into()));
            }
            if times.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::WeightFunction("tabulated times must increase".into()));
            }
            if times[0] > t0 || *times.last().unwrap() < t1 {
                return Err(Error::WeightFunction(format!(
                    "tabulated h does not cover [{t0}, {t1}]"
                )));
            }
        }
        let sign = self.value(t0).signum();
        for i in 0..SIGN_SCAN_POINTS {
            let t = t0 + (t1 - t0) * i as f64 / (SIGN_SCAN_POINTS - 1) as f64;
            let v = self.value(t);
            if !v.is_finite() || v.signum() != sign || v.abs() < floor {
                return Err(Error::WeightFunction(format!(
                    "h({t}) = {v} violates the fixed-sign bound |h| >= {floor}"
                )));
            }
        }
        if let WeightFunction::Tabulated { times, values } = self {
            for (t, v) in times.iter().zip(values) {
                if *t >= t0 && *t <= t1 && (v.signum() != sign || v.abs() < floor) {
                    return Err(Error::WeightFunction(format!("tabulated h({t}) = {v} violates the bound")));
                }
            }
        }
        Ok(sign)
    }
}

fn interp(times: &[f64], values: &[f64], t: f64) -> f64 {
    let k = match times.binary_search_by(|x| x.total_cmp(&t)) {
        Ok(k) => return values[k],
        Err(k) => k.clamp(1, times.len() - 1) - 1,
    };
    let s = (t - times[k]) / (times[k + 1] - times[k]);
    values[k] + s * (values[k + 1] - values[k])
}

fn node_slopes(times: &[f64], values: &[f64]) -> Vec<f64> {
    let n = times.len();
    (0..n)
        .map(|i| {
            let (a, b) = if i == 0 {
                (0, 1)
            } else if i == n - 1 {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            (values[b] - values[a]) / (times[b] - times[a])
        })
        .collect()
}
