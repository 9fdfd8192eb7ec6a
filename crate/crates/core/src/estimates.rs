//! Pointwise data of the gradient estimates.
//!
//! Every estimate is brought to the shape `lhs <= K * coeff + offset` with
//! `K` the constant it controls, so the same scan feeds both the fit
//! (`K >= (lhs - offset) / coeff`) and the check (`margin = K coeff +
//! offset - lhs`).

use serde::{Deserialize, Serialize};

use crate::constants::ConstantRegistry;
use crate::error::{Error, Result};
use crate::flow::FlowTrajectory;
use crate::pde::{EquationKind, ScalarFieldTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EstimateLemma {
    /// Hamilton-type `|grad v| / v` bound, constant `B1`.
    L32,
    /// `|grad u|^2 <= B2(t) + B3 u^2`, constant `B3` (derived from `B1`).
    L34,
    /// Li-Yau-type bound in `v`, constant `B(n)`.
    L35,
    /// Li-Yau-type bound in `u`, constant `B(n)`.
    L37,
    /// `|grad u| / u` bound, constant `C1`.
    L41,
    /// Li-Yau-type bound for the power equation, constant `C(n)`.
    L42,
}

pub const ALL_LEMMAS: [EstimateLemma; 6] = [
    EstimateLemma::L32,
    EstimateLemma::L34,
    EstimateLemma::L35,
    EstimateLemma::L37,
    EstimateLemma::L41,
    EstimateLemma::L42,
];

impl EstimateLemma {
    pub fn id(self) -> &'static str {
        match self {
            EstimateLemma::L32 => "L32",
            EstimateLemma::L34 => "L34",
            EstimateLemma::L35 => "L35",
            EstimateLemma::L37 => "L37",
            EstimateLemma::L41 => "L41",
            EstimateLemma::L42 => "L42",
        }
    }

    /// Registry name of the controlled constant.
    pub fn constant(self) -> &'static str {
        match self {
            EstimateLemma::L32 => "B1",
            EstimateLemma::L34 => "B3",
            EstimateLemma::L35 | EstimateLemma::L37 => "B(n)",
            EstimateLemma::L41 => "C1",
            EstimateLemma::L42 => "C(n)",
        }
    }

    /// Whether the lemma concerns the given equation.
    pub fn applies_to(self, eq: &EquationKind) -> bool {
        let log = matches!(eq, EquationKind::LogNonlinear { .. });
        match self {
            EstimateLemma::L32 | EstimateLemma::L34 | EstimateLemma::L35 | EstimateLemma::L37 => log,
            EstimateLemma::L41 | EstimateLemma::L42 => !log,
        }
    }

    /// Current value of the controlled constant in `reg`.
    pub fn constant_value(self, reg: &ConstantRegistry) -> f64 {
        match self {
            EstimateLemma::L32 => reg.b1,
            EstimateLemma::L34 => reg.b3(),
            EstimateLemma::L35 | EstimateLemma::L37 => reg.b_n,
            EstimateLemma::L41 => reg.c1,
            EstimateLemma::L42 => reg.c_n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatePoint {
    pub t: f64,
    pub cell: usize,
    pub lhs: f64,
    pub coeff: f64,
    pub offset: f64,
}

impl EstimatePoint {
    pub fn rhs(&self, constant: f64) -> f64 {
        constant * self.coeff + self.offset
    }

    /// Smallest constant satisfying this point (may be negative).
    pub fn required(&self) -> f64 {
        (self.lhs - self.offset) / self.coeff
    }
}

/// Pointwise estimate data of `lemma` over every cell and sample of
/// `trace`. `|grad .|^2` is the face form used for `D(t)`; `v = e^u` for
/// the log equation, and `|grad v| / v` is evaluated as `|grad u|`.
pub fn estimate_points(
    lemma: EstimateLemma,
    trace: &ScalarFieldTrace,
    traj: &FlowTrajectory,
    reg: &ConstantRegistry,
) -> Result<Vec<EstimatePoint>> {
    let eq = trace
        .equation()
        .ok_or_else(|| Error::Invalid("gradient estimates need a forward trace".into()))?;
    if !lemma.applies_to(&eq) {
        return Err(Error::Invalid(format!(
            "{} does not apply to the {} equation",
            lemma.id(),
            eq.name()
        )));
    }
    let a = eq.log_rate();
    let mut out = Vec::with_capacity(trace.len() * trace.fields.first().map_or(0, |f| f.len()));
    for (k, u) in trace.fields.iter().enumerate() {
        let t = trace.times[k];
        let snap = &traj.snapshots[snapshot_index(traj, t)?];
        let grad = snap.gradient_norm_sq(u)?;
        let eat = (a * t).exp();
        let mut push = |cell: usize, lhs: f64, coeff: f64, offset: f64| {
            out.push(EstimatePoint {
                t,
                cell,
                lhs,
                coeff,
                offset,
            })
        };
        match lemma {
            EstimateLemma::L32 => {
                let f = reg.envelope_factor();
                for (cell, (&g, &uu)) in grad.values.iter().zip(&u.values).enumerate() {
                    push(cell, g.sqrt(), f * (1.0 + eat * reg.big_a - uu), 0.0);
                }
            }
            EstimateLemma::L34 => {
                let s = (1.0 + eat * reg.big_a).powi(2);
                for (cell, (&g, &uu)) in grad.values.iter().zip(&u.values).enumerate() {
                    push(cell, g, s + uu * uu, 0.0);
                }
            }
            EstimateLemma::L35 => {
                let v = u.map(f64::exp);
                let gv = snap.gradient_norm_sq(&v)?;
                let vt = eq_log_v_rhs(snap, &v, a)?;
                let (coeff, offset) = li_yau_b(reg, t);
                for cell in 0..v.len() {
                    let vv = v.values[cell];
                    let lhs = gv.values[cell] / (vv * vv) - 2.0 * vt.values[cell] / vv - 2.0 * a * vv.ln();
                    push(cell, lhs, coeff, offset);
                }
            }
            EstimateLemma::L37 => {
                let ut = eq.rhs(snap, u)?;
                let (coeff, offset) = li_yau_b(reg, t);
                for cell in 0..u.len() {
                    let lhs = grad.values[cell] - 2.0 * ut.values[cell] - 2.0 * a * u.values[cell];
                    push(cell, lhs, coeff, offset);
                }
            }
            EstimateLemma::L41 => {
                let base = 1.0 / reg.rho + 1.0 / t.sqrt() + reg.k_bar().sqrt() + reg.alpha_power().sqrt();
                for (cell, (&g, &uu)) in grad.values.iter().zip(&u.values).enumerate() {
                    push(cell, g.sqrt() / uu, base * (1.0 + (reg.big_a / uu).ln()), 0.0);
                }
            }
            EstimateLemma::L42 => {
                let (lambda, p) = match eq {
                    EquationKind::PowerNonlinear { lambda, p } => (lambda, p),
                    _ => (0.0, 1.0),
                };
                let ut = eq.rhs(snap, u)?;
                let coeff = 1.0 / t + if reg.zero_c3 { 0.0 } else { reg.c3_factor() };
                for cell in 0..u.len() {
                    let uu = u.values[cell];
                    let lhs = grad.values[cell] / (uu * uu) + lambda / p * uu.powf(p - 1.0) - ut.values[cell] / (p * uu);
                    push(cell, lhs, coeff, 0.0);
                }
            }
        }
    }
    Ok(out)
}

/// Index of the trajectory sample at exactly `t`.
pub(crate) fn snapshot_index(traj: &FlowTrajectory, t: f64) -> Result<usize> {
    traj.times
        .binary_search_by(|x| x.total_cmp(&t))
        .map_err(|_| Error::BackendMismatch(format!("t = {t} is not a trajectory sample")))
}

/// `(coeff, offset)` of `B(n)/t + B4` with `B4 = B(n) G + 16 n |a|`.
fn li_yau_b(reg: &ConstantRegistry, t: f64) -> (f64, f64) {
    if reg.zero_b4 {
        (1.0 / t, 0.0)
    } else {
        (1.0 / t + reg.b4_geometry(), 16.0 * reg.n as f64 * reg.a.abs())
    }
}

/// `v_t = Lap v + a v ln v`.
fn eq_log_v_rhs(snap: &crate::geometry::MetricSnapshot, v: &crate::geometry::ScalarField, a: f64) -> Result<crate::geometry::ScalarField> {
    let lap = snap.laplacian(v)?;
    lap.zip_map(v, |l, vv| l + a * vv * vv.ln())
}
