//! `I(t)`, `D(t)`, the correction factors and the corrected frequency
//! `U = correction * D / I`, plus the constant fit.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::constants::{ConstantRegistry, EVariant, FitAudit, Provenance};
use crate::error::{Error, Result};
use crate::estimates::{estimate_points, EstimateLemma, EstimatePoint};
use crate::flow::FlowTrajectory;
use crate::geometry::ScalarField;
use crate::measure::{drift_laplacian, WeightedMeasure};
use crate::pde::{EquationKind, ScalarFieldTrace};
use crate::quadrature::{self, DEFAULT_RTOL};
use crate::weight::{WeightFunction, DEFAULT_H_FLOOR};

/// Relative slack when comparing measured solution bounds with `eta`, `A`.
const BOUNDS_RTOL: f64 = 1e-12;

/// `int u^2 dmu` at sample `k`.
pub fn compute_i(u: &ScalarField, mu: &WeightedMeasure, k: usize) -> Result<f64> {
    mu.integrate(&u.map(|x| x * x), k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DValue {
    /// `h int |grad u|^2 dmu`.
    pub gradient: f64,
    /// `-h int u Lap_f u dmu`; equal to `gradient` by weighted integration
    /// by parts.
    pub drift: f64,
}

pub fn compute_d(u: &ScalarField, mu: &WeightedMeasure, k: usize, h: &WeightFunction) -> Result<DValue> {
    let snap = mu.snapshot(k)?;
    let hv = h.value(mu.times()[k]);
    let grad = mu.integrate(&snap.gradient_norm_sq(u)?, k)?;
    let lf = drift_laplacian(u, mu, k)?;
    let ulf = mu.integrate(&u.zip_map(&lf, |a, b| a * b)?, k)?;
    Ok(DValue {
        gradient: hv * grad,
        drift: -hv * ulf,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionKind {
    /// `phi`, log equation.
    Phi,
    /// `psi`, power equation (heat as `lambda = 0, p = 1`).
    Psi,
    /// The heat-equation form of `psi`, written out separately.
    HeatPsi,
}

impl CorrectionKind {
    pub fn for_equation(eq: &EquationKind) -> CorrectionKind {
        match eq {
            EquationKind::LogNonlinear { .. } => CorrectionKind::Phi,
            _ => CorrectionKind::Psi,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CorrectionKind::Phi => "phi",
            CorrectionKind::Psi => "psi",
            CorrectionKind::HeatPsi => "heat_psi",
        }
    }
}

/// `h'/h + 4a + B(n)/(eta^2 e^{as} s) + E(s)`. Under the proof-side
/// variant the `B4` term is left out here and added frozen by
/// [`Correction::log_at`].
pub fn phi_integrand(reg: &ConstantRegistry, h: &WeightFunction, s: f64) -> f64 {
    let eas = (reg.a * s).exp();
    let n = reg.n as f64;
    let c = reg.contraction;
    let mut e = (n + n * c * c * reg.big_a * reg.big_a * eas * eas + reg.alpha_log(s)) * reg.b_tilde(s);
    if reg.e_variant == EVariant::Integrand {
        e += reg.b4() / (reg.eta * eas);
    }
    h.log_derivative(s) + 4.0 * reg.a + reg.b_n / (reg.eta * reg.eta * eas * s) + e
}

/// `(h' + 2 lambda1 p A^{p-1} h)/h + N(s) n/2 + p C(n)/s + P`.
pub fn psi_integrand(reg: &ConstantRegistry, h: &WeightFunction, s: f64) -> f64 {
    let ap = reg.big_a.powf(reg.p - 1.0);
    (h.derivative(s) + 2.0 * reg.lambda1() * reg.p * ap * h.value(s)) / h.value(s)
        + reg.n_of(s) * reg.n as f64 / 2.0
        + reg.p * reg.c_n / s
        + reg.p_const()
}

/// `h'/h + N(s) n/2 + C(n)/s + C3`.
pub fn heat_psi_integrand(reg: &ConstantRegistry, h: &WeightFunction, s: f64) -> f64 {
    h.log_derivative(s) + reg.n_of(s) * reg.n as f64 / 2.0 + reg.c_n / s + reg.c3()
}

/// A correction factor tabulated on sample knots as `ln phi` (or `ln psi`).
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub kind: CorrectionKind,
    pub registry: ConstantRegistry,
    pub h: WeightFunction,
    pub knots: Vec<f64>,
    pub log_values: Vec<f64>,
    /// Accumulated quadrature error estimate of `log_values`.
    pub errors: Vec<f64>,
    pub rtol: f64,
}

impl Correction {
    /// Tabulates the correction on `knots` (the first knot is `t0`).
    pub fn build(
        kind: CorrectionKind,
        registry: &ConstantRegistry,
        h: &WeightFunction,
        knots: &[f64],
        rtol: f64,
    ) -> Result<Correction> {
        if knots.is_empty() {
            return Err(Error::TooFewSamples { need: 1, got: 0 });
        }
        if !(knots[0] > 0.0) || knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config("times", "correction knots must be positive and increasing"));
        }
        if kind == CorrectionKind::HeatPsi && (registry.lambda != 0.0 || registry.p != 1.0) {
            return Err(Error::Invalid("heat_psi needs lambda = 0 and p = 1".into()));
        }
        h.validate(knots[0], *knots.last().unwrap(), DEFAULT_H_FLOOR)?;
        let mut c = Correction {
            kind,
            registry: registry.clone(),
            h: h.clone(),
            knots: knots.to_vec(),
            log_values: Vec::with_capacity(knots.len()),
            errors: Vec::with_capacity(knots.len()),
            rtol,
        };
        let (mut acc, mut err) = (0.0, 0.0);
        for (i, &t) in knots.iter().enumerate() {
            if i > 0 {
                let q = c.integral(knots[i - 1], t);
                acc += q.value;
                err += q.error;
            }
            c.log_values.push(-acc - c.frozen(t));
            c.errors.push(err);
        }
        Ok(c)
    }

    pub fn t0(&self) -> f64 {
        self.knots[0]
    }

    pub fn integrand(&self, s: f64) -> f64 {
        match self.kind {
            CorrectionKind::Phi => phi_integrand(&self.registry, &self.h, s),
            CorrectionKind::Psi => psi_integrand(&self.registry, &self.h, s),
            CorrectionKind::HeatPsi => heat_psi_integrand(&self.registry, &self.h, s),
        }
    }

    fn integral(&self, a: f64, b: f64) -> quadrature::Quadrature {
        quadrature::integrate(|s| self.integrand(s), a, b, self.rtol)
    }

    /// Proof-side `B4` term, frozen at the evaluation time.
    fn frozen(&self, t: f64) -> f64 {
        let r = &self.registry;
        if self.kind == CorrectionKind::Phi && r.e_variant == EVariant::Frozen {
            r.b4() * (t - self.t0()) / (r.eta * (r.a * t).exp())
        } else {
            0.0
        }
    }

    /// `ln` of the correction at any `t` in the knot range.
    pub fn log_at(&self, t: f64) -> Result<f64> {
        let last = *self.knots.last().unwrap();
        if !(t >= self.t0() && t <= last) {
            return Err(Error::Invalid(format!(
                "t = {t} outside the correction range [{}, {last}]",
                self.t0()
            )));
        }
        let k = match self.knots.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(k) => return Ok(self.log_values[k]),
            Err(k) => k - 1,
        };
        let base = self.log_values[k] + self.frozen(self.knots[k]);
        Ok(base - self.integral(self.knots[k], t).value - self.frozen(t))
    }

    pub fn value_at(&self, t: f64) -> Result<f64> {
        Ok(self.log_at(t)?.exp())
    }
}

/// `phi(t)` with `t0` the first sample time of `traj`.
pub fn correction_phi(traj: &FlowTrajectory, reg: &ConstantRegistry, h: &WeightFunction, t: f64) -> Result<f64> {
    single_correction(CorrectionKind::Phi, traj, reg, h, t)
}

/// `psi(t)` with `t0` the first sample time of `traj`.
pub fn correction_psi(traj: &FlowTrajectory, reg: &ConstantRegistry, h: &WeightFunction, t: f64) -> Result<f64> {
    single_correction(CorrectionKind::Psi, traj, reg, h, t)
}

fn single_correction(
    kind: CorrectionKind,
    traj: &FlowTrajectory,
    reg: &ConstantRegistry,
    h: &WeightFunction,
    t: f64,
) -> Result<f64> {
    let t0 = traj.t0();
    if !(t >= t0 && t <= traj.t1()) {
        return Err(Error::Invalid(format!("t = {t} outside [{t0}, {}]", traj.t1())));
    }
    let knots: Vec<f64> = if t > t0 { vec![t0, t] } else { vec![t0] };
    let c = Correction::build(kind, reg, h, &knots, DEFAULT_RTOL)?;
    Ok(c.log_values.last().unwrap().exp())
}

#[derive(Debug, Clone, Serialize)]
pub struct FrequencyRow {
    pub t: f64,
    #[serde(rename = "I")]
    pub i: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub correction: f64,
    #[serde(rename = "U")]
    pub u: f64,
}

#[derive(Debug, Clone)]
pub struct FrequencyTrace {
    pub equation: EquationKind,
    pub times: Vec<f64>,
    pub i: Vec<f64>,
    pub d: Vec<f64>,
    /// Drift-Laplacian form of `D`.
    pub d_drift: Vec<f64>,
    pub log_correction: Vec<f64>,
    pub correction: Vec<f64>,
    pub u: Vec<f64>,
    pub correction_fn: Correction,
}

impl FrequencyTrace {
    pub fn kind(&self) -> CorrectionKind {
        self.correction_fn.kind
    }

    pub fn registry(&self) -> &ConstantRegistry {
        &self.correction_fn.registry
    }

    pub fn h(&self) -> &WeightFunction {
        &self.correction_fn.h
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn rows(&self) -> Vec<FrequencyRow> {
        (0..self.len())
            .map(|k| FrequencyRow {
                t: self.times[k],
                i: self.i[k],
                d: self.d[k],
                correction: self.correction[k],
                u: self.u[k],
            })
            .collect()
    }

    /// CSV: `t, I, D, correction, U`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in self.rows() {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Errors unless `eta <= min` and `A >= max` for the bounds the registry
/// is meant to cover: `u(0)` for the log equation, all samples otherwise.
pub fn check_registry_bounds(trace: &ScalarFieldTrace, reg: &ConstantRegistry) -> Result<()> {
    let eq = trace
        .equation()
        .ok_or_else(|| Error::Invalid("frequency needs a forward trace".into()))?;
    let (lo, hi, what) = match eq {
        EquationKind::LogNonlinear { .. } => (trace.initial_bounds.0, trace.initial_bounds.1, "u(0)"),
        _ => {
            let (lo, hi) = trace.sample_bounds();
            (lo, hi, "u on [t0, t1]")
        }
    };
    let slack = |x: f64| BOUNDS_RTOL * x.abs().max(1.0);
    if reg.eta > lo + slack(lo) || reg.big_a < hi - slack(hi) {
        return Err(Error::BoundsViolated(format!(
            "{what} ranges over [{lo}, {hi}] but the registry has eta = {}, A = {}",
            reg.eta, reg.big_a
        )));
    }
    if !(reg.eta > 0.0) {
        return Err(Error::BoundsViolated(format!("eta = {} must be positive", reg.eta)));
    }
    Ok(())
}

pub fn compute_u_trace(
    u: &ScalarFieldTrace,
    mu: &WeightedMeasure,
    h: &WeightFunction,
    reg: &ConstantRegistry,
    kind: CorrectionKind,
) -> Result<FrequencyTrace> {
    compute_u_trace_with(u, mu, h, reg, kind, DEFAULT_RTOL)
}

/// [`compute_u_trace`] with an explicit quadrature tolerance.
pub fn compute_u_trace_with(
    u: &ScalarFieldTrace,
    mu: &WeightedMeasure,
    h: &WeightFunction,
    reg: &ConstantRegistry,
    kind: CorrectionKind,
    rtol: f64,
) -> Result<FrequencyTrace> {
    if u.times != mu.times() {
        return Err(Error::BackendMismatch("solution and measure samples differ".into()));
    }
    let equation = u.equation().unwrap_or(EquationKind::Heat);
    let expected = CorrectionKind::for_equation(&equation);
    if kind != expected && !(kind == CorrectionKind::HeatPsi && expected == CorrectionKind::Psi) {
        return Err(Error::Invalid(format!(
            "{} correction does not match the {} equation",
            kind.name(),
            equation.name()
        )));
    }
    check_registry_bounds(u, reg)?;
    let correction_fn = Correction::build(kind, reg, h, &u.times, rtol)?;
    let n = u.len();
    let mut ft = FrequencyTrace {
        equation,
        times: u.times.clone(),
        i: Vec::with_capacity(n),
        d: Vec::with_capacity(n),
        d_drift: Vec::with_capacity(n),
        log_correction: correction_fn.log_values.clone(),
        correction: correction_fn.log_values.iter().map(|l| l.exp()).collect(),
        u: Vec::with_capacity(n),
        correction_fn,
    };
    for k in 0..n {
        let field = &u.fields[k];
        let i = compute_i(field, mu, k)?;
        let d = compute_d(field, mu, k, h)?;
        ft.u.push((ft.log_correction[k]).exp() * d.gradient / i);
        ft.i.push(i);
        ft.d.push(d.gradient);
        ft.d_drift.push(d.drift);
    }
    Ok(ft)
}

/// Minimal admissible constant over `points`: `lhs <= K coeff + offset`
/// bounds `K` from below where `coeff > 0` and from above where
/// `coeff < 0`. Clamped at 0 from below.
pub fn fit_points(lemma: EstimateLemma, points: &[EstimatePoint]) -> Result<FitAudit> {
    let mut best = FitAudit {
        value: 0.0,
        t: points.first().map_or(0.0, |p| p.t),
        cell: 0,
        source: lemma.id(),
    };
    let mut upper = f64::INFINITY;
    for p in points {
        if p.coeff > 0.0 {
            let r = p.required();
            if r > best.value {
                best = FitAudit {
                    value: r,
                    t: p.t,
                    cell: p.cell,
                    source: lemma.id(),
                };
            }
        } else if p.coeff < 0.0 {
            upper = upper.min(p.required());
        } else if p.lhs > p.offset {
            return Err(Error::Fit {
                constant: lemma.constant().into(),
                reason: format!("{} fails at t = {}, cell {} for every constant", lemma.id(), p.t, p.cell),
            });
        }
    }
    if best.value > upper {
        return Err(Error::Fit {
            constant: lemma.constant().into(),
            reason: format!("{}: lower bound {} exceeds upper bound {upper}", lemma.id(), best.value),
        });
    }
    Ok(best)
}

/// Scans every cell and sample of `traces` for the smallest `B1`, `B(n)`,
/// `C1`, `C(n)` making the estimates hold. Constants whose estimates do not
/// apply to any trace keep their template values. The result carries no
/// safety factor; see [`ConstantRegistry::with_safety`].
pub fn fit_minimal_constants(
    traces: &[&ScalarFieldTrace],
    traj: &FlowTrajectory,
    template: &ConstantRegistry,
) -> Result<ConstantRegistry> {
    if traces.is_empty() || traces.iter().all(|t| t.is_empty()) {
        return Err(Error::Fit {
            constant: "all".into(),
            reason: "no samples to scan".into(),
        });
    }
    let mut scan = template.clone();
    scan.zero_b4 = false;
    scan.zero_c3 = false;
    let mut out = template.clone();
    out.audit.clear();
    out.b3_scan = None;
    out.safety = 1.0;
    let fitted = [
        EstimateLemma::L32,
        EstimateLemma::L35,
        EstimateLemma::L37,
        EstimateLemma::L41,
        EstimateLemma::L42,
    ];
    for trace in traces.iter().filter(|t| !t.is_empty()) {
        let eq = trace
            .equation()
            .ok_or_else(|| Error::Invalid("fit needs forward traces".into()))?;
        for lemma in fitted.into_iter().filter(|l| l.applies_to(&eq)) {
            let audit = fit_points(lemma, &estimate_points(lemma, trace, traj, &scan)?)?;
            let name = lemma.constant();
            let keep = match out.audit.get(name) {
                Some(prev) => prev.value >= audit.value,
                None => false,
            };
            if !keep {
                out.audit.insert(name.to_string(), audit);
            }
        }
        if EstimateLemma::L34.applies_to(&eq) {
            let a = fit_points(EstimateLemma::L34, &estimate_points(EstimateLemma::L34, trace, traj, &scan)?)?;
            if out.b3_scan.is_none_or(|p| a.value > p.value) {
                out.b3_scan = Some(a);
            }
        }
    }
    for (name, audit) in out.audit.clone() {
        out.set(&name, audit.value, Provenance::Fitted)?;
    }
    Ok(out)
}
