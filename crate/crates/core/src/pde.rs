//! Scalar heat-type equations on the evolving metric, and the conjugate heat
//! equation solved backward in time.
//!
//! Everything is method-of-lines RK4 on the face discretization of
//! [`MetricSnapshot`]. Forward solves start at `t = 0` with the initial data
//! and record the samples of the trajectory; the conjugate solve starts at
//! `t1` and records the same samples going back to `t0`.

use std::borrow::Cow;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowTrajectory;
use crate::geometry::{Backend, MetricSnapshot, ScalarField};

/// RK4 is stable on the negative real axis up to about 2.78; the cap keeps a
/// margin below that.
const RK4_REAL_AXIS: f64 = 2.5;

/// Default step as a fraction of the stability cap.
pub const DEFAULT_DT_FRACTION: f64 = 0.5;

/// Blow-up threshold relative to `max u0`.
pub const BLOW_UP_FACTOR: f64 = 1e6;

/// Tolerance on `|mass - 1|` of the terminal data before it is renormalized.
const MASS_NORMALIZE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EquationKind {
    Heat,
    LogNonlinear { a: f64 },
    PowerNonlinear { lambda: f64, p: f64 },
}

impl EquationKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EquationKind::Heat => Ok(()),
            EquationKind::LogNonlinear { a } if a.is_finite() => Ok(()),
            EquationKind::PowerNonlinear { lambda, p } if lambda.is_finite() && p >= 1.0 && p.is_finite() => Ok(()),
            EquationKind::LogNonlinear { .. } => Err(Error::config("equation.a", "must be finite")),
            EquationKind::PowerNonlinear { .. } => {
                Err(Error::config("equation.p", "PowerNonlinear needs finite lambda and p >= 1"))
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EquationKind::Heat => "heat",
            EquationKind::LogNonlinear { .. } => "log",
            EquationKind::PowerNonlinear { .. } => "power",
        }
    }

    /// Growth rate `a` of the log equation, zero otherwise.
    pub fn log_rate(&self) -> f64 {
        match *self {
            EquationKind::LogNonlinear { a } => a,
            _ => 0.0,
        }
    }

    /// Zero-order part `F(u)` of `u_t = Lap u + F(u) (+ |grad u|^2 for the log equation)`.
    pub fn reaction(&self, u: f64) -> f64 {
        match *self {
            EquationKind::Heat => 0.0,
            EquationKind::LogNonlinear { a } => a * u,
            EquationKind::PowerNonlinear { lambda, p } => lambda * power(u, p),
        }
    }

    /// `dF/du`.
    pub fn reaction_derivative(&self, u: f64) -> f64 {
        match *self {
            EquationKind::Heat => 0.0,
            EquationKind::LogNonlinear { a } => a,
            EquationKind::PowerNonlinear { lambda, p } => lambda * p * power(u, p - 1.0),
        }
    }

    /// Right-hand side `Lap u + F(u) (+ |grad u|^2)` in the original variable.
    pub fn rhs(&self, snap: &MetricSnapshot, u: &ScalarField) -> Result<ScalarField> {
        let mut out = snap.laplacian(u)?;
        if let EquationKind::LogNonlinear { .. } = self {
            let g = snap.gradient_norm_sq(u)?;
            for (o, gg) in out.values.iter_mut().zip(&g.values) {
                *o += gg;
            }
        }
        for (o, uu) in out.values.iter_mut().zip(&u.values) {
            *o += self.reaction(*uu);
        }
        Ok(out)
    }
}

fn power(u: f64, p: f64) -> f64 {
    if p == 1.0 {
        u
    } else if p == 2.0 {
        u * u
    } else {
        u.powf(p)
    }
}

/// Which integration path produced a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Forward(EquationKind),
    /// The log equation integrated without the `v = e^u` substitution.
    ForwardDirect(EquationKind),
    Conjugate,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TraceMetadata {
    pub steps: usize,
    pub warnings: Vec<String>,
    /// Mass of the terminal data before normalization, when it was off.
    pub renormalized_from: Option<f64>,
    /// `max_t |int K dV - 1|` for conjugate traces.
    pub mass_drift: Option<f64>,
}

/// Solution samples on the time grid of a [`FlowTrajectory`].
#[derive(Debug, Clone)]
pub struct ScalarFieldTrace {
    backend: Arc<Backend>,
    pub kind: TraceKind,
    pub times: Vec<f64>,
    pub fields: Vec<ScalarField>,
    /// `(eta, A)` of the data the solve started from.
    pub initial_bounds: (f64, f64),
    pub dt: f64,
    pub metadata: TraceMetadata,
}

impl ScalarFieldTrace {
    pub fn backend(&self) -> &Arc<Backend> {
        &self.backend
    }

    pub fn equation(&self) -> Option<EquationKind> {
        match self.kind {
            TraceKind::Forward(e) | TraceKind::ForwardDirect(e) => Some(e),
            TraceKind::Conjugate => None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `(min, max)` over all samples.
    pub fn sample_bounds(&self) -> (f64, f64) {
        self.fields.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), f| {
            (lo.min(f.min()), hi.max(f.max()))
        })
    }

    pub fn field(&self, k: usize) -> Result<&ScalarField> {
        self.fields.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            len: self.fields.len(),
        })
    }

    /// Summary CSV: `t, min, max, l2` with `l2 = (int u^2 dV)^(1/2)`.
    pub fn write_csv<W: Write>(&self, traj: &FlowTrajectory, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "min", "max", "l2"])?;
        for (k, f) in self.fields.iter().enumerate() {
            let l2 = traj.snapshots[k].integrate(&f.map(|x| x * x), None)?.sqrt();
            w.write_record([self.times[k], f.min(), f.max(), l2].map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Full-field dump: a header line, then one row per cell with its
    /// coordinates followed by the value at every sample.
    pub fn write_field_dump<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "# cell x y")?;
        for t in &self.times {
            write!(out, " t={t:e}")?;
        }
        writeln!(out)?;
        for cell in 0..self.backend.len() {
            let (x, y) = self.backend.cell_coords(cell);
            write!(out, "{cell} {x:e} {y:e}")?;
            for f in &self.fields {
                write!(out, " {:.17e}", f.values[cell])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Per-sample extrema and the margin to the theoretical envelope.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExtremumSample {
    pub t: f64,
    pub min: f64,
    pub max: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// `min(min - lower, upper - max)`; negative means the envelope is violated.
    pub margin: Option<f64>,
}

/// Extrema of a trace with the envelope that the maximum principle gives for
/// its equation: the spatially constant solutions started from the initial
/// extrema. A side is absent once its comparison solution has blown up, and
/// conjugate traces have none.
pub fn extremum_bounds(trace: &ScalarFieldTrace) -> Vec<ExtremumSample> {
    let (eta, big_a) = trace.initial_bounds;
    let envelope = |t: f64| -> (Option<f64>, Option<f64>) {
        match trace.equation() {
            None => (None, None),
            Some(EquationKind::Heat) => (Some(eta), Some(big_a)),
            Some(EquationKind::LogNonlinear { a }) => (Some(eta * (a * t).exp()), Some(big_a * (a * t).exp())),
            Some(EquationKind::PowerNonlinear { lambda, p }) => (power_ode(eta, lambda, p, t), power_ode(big_a, lambda, p, t)),
        }
    };
    trace
        .times
        .iter()
        .zip(&trace.fields)
        .map(|(&t, f)| {
            let (min, max) = (f.min(), f.max());
            let (lower, upper) = envelope(t);
            let margin = match (lower, upper) {
                (None, None) => None,
                (lo, hi) => Some(lo.map_or(f64::INFINITY, |l| min - l).min(hi.map_or(f64::INFINITY, |h| h - max))),
            };
            ExtremumSample {
                t,
                min,
                max,
                lower,
                upper,
                margin,
            }
        })
        .collect()
}

/// Solution of `y' = lambda y^p`, `y(0) = c`, or `None` past blow-up.
pub fn power_ode(c: f64, lambda: f64, p: f64, t: f64) -> Option<f64> {
    if p == 1.0 {
        return Some(c * (lambda * t).exp());
    }
    // y = c (1 - (p - 1) lambda c^(p-1) t)^(1 / (1 - p)), exact at t = 0.
    let base = 1.0 - (p - 1.0) * lambda * c.powf(p - 1.0) * t;
    (base > 0.0).then(|| c * base.powf(1.0 / (1.0 - p))).filter(|y| y.is_finite())
}

enum StepGuard {
    /// Values must stay above the floor.
    Floor(f64),
    /// As `Floor`, and the maximum must stay below the cap.
    FloorAndCap(f64, f64),
}

/// Metric snapshots along the trajectory, reusing the single snapshot of a
/// static flow.
struct MetricSource<'a> {
    traj: &'a FlowTrajectory,
}

impl<'a> MetricSource<'a> {
    fn at(&self, t: f64) -> Result<Cow<'a, MetricSnapshot>> {
        if self.traj.is_static() {
            Ok(Cow::Borrowed(&self.traj.snapshots[0]))
        } else {
            Ok(Cow::Owned(self.traj.metric_at(t)?))
        }
    }
}

/// Integrates `y' = rhs(t, y)` through the breakpoints `marks` (monotone,
/// possibly decreasing), recording `y` at every mark after the first.
fn integrate<F>(
    traj: &FlowTrajectory,
    marks: &[f64],
    y0: Vec<f64>,
    dt: f64,
    guard: StepGuard,
    mut rhs: F,
) -> Result<(Vec<Vec<f64>>, usize)>
where
    F: FnMut(&MetricSnapshot, &[f64]) -> Result<Vec<f64>>,
{
    let src = MetricSource { traj };
    let n = y0.len();
    let mut y = y0;
    let mut out = Vec::with_capacity(marks.len());
    let mut stage = vec![0.0; n];
    let mut steps = 0;
    // End-of-step metric, reused as the start of the next step.
    let mut carried: Option<Cow<'_, MetricSnapshot>> = None;
    for w in marks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let m = ((b - a).abs() / dt).ceil().max(1.0) as usize;
        let h = (b - a) / m as f64;
        if (b - a).abs() > 0.0 {
            for s in 0..m {
                let t = a + s as f64 * h;
                let t_end = if s + 1 == m { b } else { a + (s + 1) as f64 * h };
                let g0 = match carried.take() {
                    Some(g) if g.t == t => g,
                    _ => src.at(t)?,
                };
                let gm = src.at(t + 0.5 * h)?;
                let g1 = src.at(t_end)?;
                let k1 = rhs(&g0, &y)?;
                for i in 0..n {
                    stage[i] = y[i] + 0.5 * h * k1[i];
                }
                let k2 = rhs(&gm, &stage)?;
                for i in 0..n {
                    stage[i] = y[i] + 0.5 * h * k2[i];
                }
                let k3 = rhs(&gm, &stage)?;
                for i in 0..n {
                    stage[i] = y[i] + h * k3[i];
                }
                let k4 = rhs(&g1, &stage)?;
                for i in 0..n {
                    y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                carried = Some(g1);
                steps += 1;
                let (floor, cap) = match guard {
                    StepGuard::Floor(f) => (f, f64::INFINITY),
                    StepGuard::FloorAndCap(f, c) => (f, c),
                };
                if let Some(cell) = y.iter().position(|v| !(*v > floor)) {
                    if y[cell].is_nan() || y[cell] > floor {
                        return Err(Error::Unstable { dt: h.abs(), cap: f64::NAN });
                    }
                    return Err(Error::PositivityLost {
                        t: t_end,
                        cell,
                        value: y[cell],
                    });
                }
                let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if max > cap {
                    return Err(Error::BlowUp { t: t_end, max, cap });
                }
            }
        }
        out.push(y.clone());
    }
    Ok((out, steps))
}

/// Stability cap `2.5 / (rho(Lap) + L)` over the sampled metrics (and the
/// initial metric for forward solves).
pub fn stability_cap(traj: &FlowTrajectory, reaction_lipschitz: f64, include_initial: bool) -> Result<f64> {
    let mut rho = traj
        .snapshots
        .iter()
        .map(|s| s.laplacian_spectral_bound())
        .fold(0.0, f64::max);
    if include_initial && !traj.is_static() {
        rho = rho.max(traj.metric_at(0.0)?.laplacian_spectral_bound());
    }
    Ok(RK4_REAL_AXIS / (rho + reaction_lipschitz))
}

fn choose_dt(dt: Option<f64>, cap: f64) -> Result<f64> {
    match dt {
        None => Ok(DEFAULT_DT_FRACTION * cap),
        Some(d) if !(d > 0.0) => Err(Error::config("flow.dt", format!("must be positive, got {d}"))),
        Some(d) if d > cap => Err(Error::Unstable { dt: d, cap }),
        Some(d) => Ok(d),
    }
}

fn check_initial(u0: &ScalarField, traj: &FlowTrajectory, eq: &EquationKind) -> Result<()> {
    eq.validate()?;
    if u0.shape() != traj.backend().shape() {
        return Err(Error::BackendMismatch(format!(
            "initial data on {:?}, trajectory on {:?}",
            u0.shape(),
            traj.backend().shape()
        )));
    }
    if let Some(cell) = u0.values.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::PositivityLost {
            t: 0.0,
            cell,
            value: u0.values[cell],
        });
    }
    Ok(())
}

fn forward_marks(traj: &FlowTrajectory) -> Vec<f64> {
    let mut marks = vec![0.0];
    marks.extend_from_slice(&traj.times);
    marks
}

fn reaction_lipschitz(eq: &EquationKind, u_max: f64) -> f64 {
    match *eq {
        EquationKind::Heat => 0.0,
        // v-form: d/dv (a v ln v) = a (ln v + 1) with ln v = u.
        EquationKind::LogNonlinear { a } => a.abs() * (u_max + 1.0),
        EquationKind::PowerNonlinear { lambda, p } => (lambda * p).abs() * power(u_max, p - 1.0),
    }
}

/// Solves the forward equation from `u0` at `t = 0`, recording `u` at every
/// sample of `traj`. The log equation runs in `v = e^u`.
pub fn solve_forward(
    eq: EquationKind,
    u0: &ScalarField,
    traj: &FlowTrajectory,
    dt: Option<f64>,
) -> Result<ScalarFieldTrace> {
    check_initial(u0, traj, &eq)?;
    let (eta, big_a) = (u0.min(), u0.max());
    let cap = stability_cap(traj, reaction_lipschitz(&eq, big_a), true)?;
    let dt = choose_dt(dt, cap)?;
    let shape = u0.shape();
    let marks = forward_marks(traj);
    let (raw, steps) = match eq {
        EquationKind::LogNonlinear { a } => {
            let v0 = u0.values.iter().map(|u| u.exp()).collect();
            let (vs, steps) = integrate(traj, &marks, v0, dt, StepGuard::Floor(1.0), |snap, v| {
                let field = ScalarField::new(shape, v.to_vec())?;
                let mut out = snap.laplacian(&field)?.values;
                for (o, vv) in out.iter_mut().zip(v) {
                    *o += a * vv * vv.ln();
                }
                Ok(out)
            })?;
            let us = vs
                .into_iter()
                .map(|v| v.into_iter().map(f64::ln).collect())
                .collect();
            (us, steps)
        }
        _ => {
            let guard = StepGuard::FloorAndCap(0.0, BLOW_UP_FACTOR * big_a);
            integrate(traj, &marks, u0.values.clone(), dt, guard, |snap, u| {
                Ok(eq.rhs(snap, &ScalarField::new(shape, u.to_vec())?)?.values)
            })?
        }
    };
    finish_forward(TraceKind::Forward(eq), traj, raw, (eta, big_a), dt, steps)
}

/// The log equation `u_t = Lap u + a u + |grad u|^2` integrated directly,
/// for cross-checking the substituted path.
pub fn solve_forward_direct(
    eq: EquationKind,
    u0: &ScalarField,
    traj: &FlowTrajectory,
    dt: Option<f64>,
) -> Result<ScalarFieldTrace> {
    check_initial(u0, traj, &eq)?;
    let (eta, big_a) = (u0.min(), u0.max());
    let cap = stability_cap(traj, reaction_lipschitz(&eq, big_a), true)?;
    let dt = choose_dt(dt, cap)?;
    let shape = u0.shape();
    let guard = StepGuard::FloorAndCap(0.0, BLOW_UP_FACTOR * big_a);
    let (raw, steps) = integrate(traj, &forward_marks(traj), u0.values.clone(), dt, guard, |snap, u| {
        Ok(eq.rhs(snap, &ScalarField::new(shape, u.to_vec())?)?.values)
    })?;
    finish_forward(TraceKind::ForwardDirect(eq), traj, raw, (eta, big_a), dt, steps)
}

fn finish_forward(
    kind: TraceKind,
    traj: &FlowTrajectory,
    raw: Vec<Vec<f64>>,
    bounds: (f64, f64),
    dt: f64,
    steps: usize,
) -> Result<ScalarFieldTrace> {
    let shape = traj.backend().shape();
    // raw[0] is the state at t0 (the first mark after 0).
    let fields = raw
        .into_iter()
        .map(|v| ScalarField::new(shape, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScalarFieldTrace {
        backend: traj.backend().clone(),
        kind,
        times: traj.times.clone(),
        fields,
        initial_bounds: bounds,
        dt,
        metadata: TraceMetadata {
            steps,
            ..Default::default()
        },
    })
}

/// Largest pointwise difference between two traces on the same grid.
pub fn max_trace_difference(a: &ScalarFieldTrace, b: &ScalarFieldTrace) -> Result<f64> {
    if a.times.len() != b.times.len() {
        return Err(Error::BackendMismatch("traces have different sample counts".into()));
    }
    a.fields
        .iter()
        .zip(&b.fields)
        .map(|(x, y)| x.max_abs_diff(y))
        .try_fold(0.0f64, |m, d| d.map(|d| m.max(d)))
}

/// Solves `K_t = -Lap K + R K` backward from `k_terminal` at `t1` to `t0`.
///
/// The terminal data is normalized to unit mass. Mass drift above
/// `mass_tol` is recorded as a warning in the trace metadata.
pub fn solve_conjugate_backward(
    k_terminal: &ScalarField,
    traj: &FlowTrajectory,
    dt: Option<f64>,
    mass_tol: f64,
) -> Result<ScalarFieldTrace> {
    if k_terminal.shape() != traj.backend().shape() {
        return Err(Error::BackendMismatch("terminal data does not match the trajectory".into()));
    }
    let m = traj.times.len();
    let last = &traj.snapshots[m - 1];
    if let Some(cell) = k_terminal.values.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::PositivityLost {
            t: last.t,
            cell,
            value: k_terminal.values[cell],
        });
    }
    let mut metadata = TraceMetadata::default();
    let mass = last.integrate(k_terminal, None)?;
    let k_end = if (mass - 1.0).abs() > MASS_NORMALIZE_TOL {
        metadata.renormalized_from = Some(mass);
        k_terminal.map(|k| k / mass)
    } else {
        k_terminal.clone()
    };
    let r_max = traj
        .snapshots
        .iter()
        .flat_map(|s| s.scalar_curvature.iter())
        .fold(0.0f64, |m, r| m.max(r.abs()));
    let cap = stability_cap(traj, r_max, false)?;
    let dt = choose_dt(dt, cap)?;
    let shape = k_end.shape();
    let marks: Vec<f64> = traj.times.iter().rev().copied().collect();
    let (raw, steps) = integrate(traj, &marks, k_end.values.clone(), dt, StepGuard::Floor(0.0), |snap, k| {
        let field = ScalarField::new(shape, k.to_vec())?;
        let mut out = snap.laplacian(&field)?.values;
        // d/dt K = -Lap K + R K; the marks decrease so h < 0.
        for ((o, kk), r) in out.iter_mut().zip(k).zip(&snap.scalar_curvature) {
            *o = -*o + r * kk;
        }
        Ok(out)
    })?;
    let mut fields = vec![k_end.clone()];
    for v in raw {
        fields.push(ScalarField::new(shape, v)?);
    }
    // `marks` started at t1, so the first recorded state is the terminal data.
    fields.reverse();
    let mut drift: f64 = 0.0;
    for (k, f) in fields.iter().enumerate() {
        drift = drift.max((traj.snapshots[k].integrate(f, None)? - 1.0).abs());
    }
    metadata.mass_drift = Some(drift);
    metadata.steps = steps;
    if drift > mass_tol {
        metadata
            .warnings
            .push(format!("conjugate mass drift {drift:e} exceeds tolerance {mass_tol:e}"));
    }
    Ok(ScalarFieldTrace {
        backend: traj.backend().clone(),
        kind: TraceKind::Conjugate,
        times: traj.times.clone(),
        fields,
        initial_bounds: (k_end.min(), k_end.max()),
        dt,
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{evolve_metric, uniform_times};

    fn flat_traj() -> FlowTrajectory {
        let b = Backend::flat_torus(1.0, 1.0, 16, 16).unwrap();
        evolve_metric(b, &uniform_times(0.01, 0.03, 4), 0.04, None).unwrap()
    }

    #[test]
    fn power_p1_constant_is_exponential() {
        let traj = flat_traj();
        let u0 = traj.backend().constant_field(1.5);
        let eq = EquationKind::PowerNonlinear { lambda: -0.7, p: 1.0 };
        let tr = solve_forward(eq, &u0, &traj, None).unwrap();
        for (t, f) in tr.times.iter().zip(&tr.fields) {
            let e = 1.5 * (-0.7 * t).exp();
            assert!((f.max() - e).abs() < 1e-8 * e && (f.min() - e).abs() < 1e-8 * e);
        }
    }

    #[test]
    fn log_constant_is_exponential() {
        let traj = flat_traj();
        let u0 = traj.backend().constant_field(0.8);
        let tr = solve_forward(EquationKind::LogNonlinear { a: 0.5 }, &u0, &traj, None).unwrap();
        for (t, f) in tr.times.iter().zip(&tr.fields) {
            let e = 0.8 * (0.5 * t).exp();
            assert!((f.values[3] - e).abs() < 1e-8 * e);
        }
    }

    #[test]
    fn rejects_nonpositive_and_bad_equations() {
        let traj = flat_traj();
        let u0 = traj.backend().constant_field(0.0);
        assert!(matches!(
            solve_forward(EquationKind::Heat, &u0, &traj, None),
            Err(Error::PositivityLost { .. })
        ));
        let u0 = traj.backend().constant_field(1.0);
        let bad = EquationKind::PowerNonlinear { lambda: 1.0, p: 0.5 };
        assert!(matches!(solve_forward(bad, &u0, &traj, None), Err(Error::Config { .. })));
        assert!(matches!(
            solve_forward(EquationKind::Heat, &u0, &traj, Some(1.0)),
            Err(Error::Unstable { .. })
        ));
    }

    #[test]
    fn power_blow_up_is_reported() {
        let b = Backend::flat_torus(1.0, 1.0, 8, 8).unwrap();
        let traj = evolve_metric(b, &[0.5, 1.0], 2.0, None).unwrap();
        let u0 = traj.backend().constant_field(2.0);
        // u' = u^3 blows up at t = 1/(2 u0^2) = 0.125.
        let e = solve_forward(EquationKind::PowerNonlinear { lambda: 1.0, p: 3.0 }, &u0, &traj, None).unwrap_err();
        assert!(matches!(e, Error::BlowUp { .. }), "{e}");
    }

    #[test]
    fn uniform_conjugate_stays_uniform() {
        let traj = flat_traj();
        let k = traj.backend().constant_field(3.0);
        let tr = solve_conjugate_backward(&k, &traj, None, 1e-6).unwrap();
        assert_eq!(tr.metadata.renormalized_from, Some(3.0));
        for f in &tr.fields {
            assert!((f.max() - 1.0).abs() < 1e-12 && (f.min() - 1.0).abs() < 1e-12);
        }
        assert!(tr.metadata.mass_drift.unwrap() < 1e-12);
        assert!(tr.metadata.warnings.is_empty());
    }

    #[test]
    fn envelopes() {
        let traj = flat_traj();
        let u0 = traj.backend().field_from_fn(|x, _| 2.0 + (2.0 * std::f64::consts::PI * x).cos());
        let tr = solve_forward(EquationKind::Heat, &u0, &traj, None).unwrap();
        let ex = extremum_bounds(&tr);
        assert!(ex.iter().all(|e| e.margin.unwrap() > -1e-12));
        let tr = solve_forward(EquationKind::PowerNonlinear { lambda: -1.0, p: 2.0 }, &u0, &traj, None).unwrap();
        for e in extremum_bounds(&tr) {
            // y' = -y^2 from y(0) = c is c / (1 + c t).
            assert!((e.upper.unwrap() - 3.0 / (1.0 + 3.0 * e.t)).abs() < 1e-12);
            assert!(e.margin.unwrap() > -1e-10, "{e:?}");
        }
        let k = solve_conjugate_backward(&u0, &traj, None, 1e-6).unwrap();
        assert!(extremum_bounds(&k).iter().all(|e| e.margin.is_none()));
        assert_eq!(power_ode(2.0, 1.0, 2.0, 0.6), None);
        assert!((power_ode(2.0, 1.0, 2.0, 0.25).unwrap() - 4.0).abs() < 1e-12);
    }
}
