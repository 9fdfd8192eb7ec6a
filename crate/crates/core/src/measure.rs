//! The conjugate heat kernel measure `dmu = K dV` with potential
//! `f = -ln K - (n/2) ln(4 pi tau)`, `tau = T - t`, and the identities it
//! satisfies along the flow.

use std::f64::consts::PI;
use std::io::Write;

use serde::Serialize;

use crate::diagnostics::ResidualReport;
use crate::error::{Error, Result};
use crate::flow::FlowTrajectory;
use crate::geometry::{BackendKind, MetricData, MetricSnapshot, ScalarField};
use crate::pde::{ScalarFieldTrace, TraceKind};

/// Default `T` for a window `[t0, t1]`: `t1 + 0.25 (t1 - t0)`.
pub fn default_final_time(t0: f64, t1: f64) -> f64 {
    t1 + 0.25 * (t1 - t0)
}

#[derive(Debug, Clone)]
pub struct WeightedMeasure {
    pub k: ScalarFieldTrace,
    pub f: Vec<ScalarField>,
    pub tau: Vec<f64>,
    pub final_time: f64,
    /// `int K dV - 1` per sample.
    pub mass_deviation: Vec<f64>,
    snapshots: Vec<MetricSnapshot>,
}

/// Builds `f` and `tau` from a conjugate trace.
pub fn weighted_measure_from_k(k: ScalarFieldTrace, traj: &FlowTrajectory, final_time: f64) -> Result<WeightedMeasure> {
    if k.times.len() != traj.times.len() || k.times.iter().zip(&traj.times).any(|(a, b)| a != b) {
        return Err(Error::BackendMismatch("K samples do not match the trajectory".into()));
    }
    if k.kind != TraceKind::Conjugate {
        return Err(Error::Invalid("weighted measure needs a conjugate trace".into()));
    }
    if !(final_time > traj.t1()) {
        return Err(Error::config(
            "flow.final_time",
            format!("T = {final_time} must exceed t1 = {}", traj.t1()),
        ));
    }
    let half_n = traj.dim() as f64 / 2.0;
    let mut f = Vec::with_capacity(k.len());
    let mut tau = Vec::with_capacity(k.len());
    let mut mass_deviation = Vec::with_capacity(k.len());
    for (i, field) in k.fields.iter().enumerate() {
        let t = k.times[i];
        if let Some(cell) = field.values.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::PositivityLost {
                t,
                cell,
                value: field.values[cell],
            });
        }
        let ta = final_time - t;
        let shift = half_n * (4.0 * PI * ta).ln();
        f.push(field.map(|kk| -kk.ln() - shift));
        tau.push(ta);
        mass_deviation.push(traj.snapshots[i].integrate(field, None)? - 1.0);
    }
    Ok(WeightedMeasure {
        k,
        f,
        tau,
        final_time,
        mass_deviation,
        snapshots: traj.snapshots.clone(),
    })
}

/// Normalized Gaussian-type bump `exp(-d(x, x0)^2 / (4 s)) / Z` on `snap`.
///
/// `d^2` is the smooth chordal surrogate of the squared distance, which
/// agrees with it to fourth order near `x0`: `(L / pi)^2 sin^2(pi dx / L)`
/// per periodic axis (scaled by the flat metric), and `2 r^2 (1 - cos theta)`
/// on the sphere with the pole as centre (`center` is ignored there).
pub fn gaussian_bump(snap: &MetricSnapshot, center: (f64, f64), width: f64) -> Result<ScalarField> {
    let raw = bump_profile(snap, center, width)?;
    let z = snap.integrate(&raw, None)?;
    Ok(raw.map(|v| v / z))
}

/// Unnormalized `exp(-d^2 / (4 s))` with the chordal `d^2` of [`gaussian_bump`].
pub fn bump_profile(snap: &MetricSnapshot, center: (f64, f64), width: f64) -> Result<ScalarField> {
    if !(width > 0.0) {
        return Err(Error::config("terminal.width", "must be positive"));
    }
    let backend = snap.backend();
    let chord = |d: f64, l: f64| (l / PI * (PI * d / l).sin()).powi(2);
    let d2 = |x: f64, y: f64| -> f64 {
        match (backend.kind(), &snap.metric) {
            (BackendKind::FlatTorus2D { lx, ly, .. }, MetricData::Flat { gxx, gyy }) => {
                gxx * chord(x - center.0, *lx) + gyy * chord(y - center.1, *ly)
            }
            (BackendKind::ConformalTorus2D { lx, ly, .. }, _) => chord(x - center.0, *lx) + chord(y - center.1, *ly),
            (_, MetricData::Round { radius }) => 2.0 * radius * radius * (1.0 - x.cos()),
            _ => f64::NAN,
        }
    };
    Ok(backend.field_from_fn(|x, y| (-d2(x, y) / (4.0 * width)).exp()))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeasureSample {
    pub t: f64,
    pub tau: f64,
    pub mass_deviation: f64,
    pub f_min: f64,
    pub f_max: f64,
}

impl WeightedMeasure {
    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.k.times
    }

    pub fn snapshot(&self, k: usize) -> Result<&MetricSnapshot> {
        self.snapshots.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            len: self.snapshots.len(),
        })
    }

    pub fn max_mass_deviation(&self) -> f64 {
        self.mass_deviation.iter().fold(0.0, |m, d| m.max(d.abs()))
    }

    /// `(4 pi tau)^(-n/2) e^{-f}` at sample `k`.
    pub fn k_from_f(&self, k: usize) -> Result<ScalarField> {
        let f = self.f.get(k).ok_or(Error::IndexOutOfRange { index: k, len: self.f.len() })?;
        let n = self.snapshots[k].backend().dim() as f64;
        let c = (4.0 * PI * self.tau[k]).powf(-n / 2.0);
        Ok(f.map(|ff| c * (-ff).exp()))
    }

    /// `int u dmu` at sample `k`.
    pub fn integrate(&self, u: &ScalarField, k: usize) -> Result<f64> {
        self.snapshot(k)?.integrate(u, Some(&self.k.fields[k]))
    }

    pub fn summary(&self) -> Vec<MeasureSample> {
        (0..self.len())
            .map(|k| MeasureSample {
                t: self.k.times[k],
                tau: self.tau[k],
                mass_deviation: self.mass_deviation[k],
                f_min: self.f[k].min(),
                f_max: self.f[k].max(),
            })
            .collect()
    }

    /// Summary CSV: `t, tau, mass_deviation, f_min, f_max`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in self.summary() {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `Lap_f u = Lap u - <grad f, grad u>` at sample `k`, discretized as
/// `div(K grad u) / K` so that `int u Lap_f u dmu = -int |grad u|^2 dmu`
/// holds exactly.
pub fn drift_laplacian(u: &ScalarField, mu: &WeightedMeasure, k: usize) -> Result<ScalarField> {
    let snap = mu.snapshot(k)?;
    snap.weighted_laplacian(u, &mu.k.fields[k])
}

/// Residual of `f_t = -Lap f - R + |grad f|^2 + n / (2 tau)` over the
/// interior samples.
///
/// `f_t` is a five-point difference of `-ln K` plus the exact derivative
/// `n / (2 tau)` of the normalization term.
pub fn check_f_evolution(mu: &WeightedMeasure) -> Result<ResidualReport> {
    interior_max(mu, "f_evolution", check_f_evolution_at)
}

/// [`check_f_evolution`] at interior sample `k`.
pub fn check_f_evolution_at(mu: &WeightedMeasure, k: usize) -> Result<ResidualReport> {
    let (times, window, w) = stencil(mu, k)?;
    let snap = &mu.snapshots[k];
    let n = snap.backend().dim() as f64;
    let lap = snap.laplacian(&mu.f[k])?;
    let grad = snap.gradient_norm_sq(&mu.f[k])?;
    let drift = n / (2.0 * mu.tau[k]);
    let mut rep = ResidualReport::new("f_evolution", 2.0);
    for cell in 0..lap.len() {
        let ft = -window.clone().zip(&w).map(|(i, wi)| wi * mu.k.fields[i].values[cell].ln()).sum::<f64>() + drift;
        let rhs = -lap.values[cell] - snap.scalar_curvature[cell] + grad.values[cell] + drift;
        rep.record(ft - rhs, times[k], cell);
    }
    Ok(rep)
}

/// Sample window around interior sample `k` and the weights of the time
/// derivative at `t_k`: five points (one-sided near the ends) when there
/// are enough samples, otherwise the centered three-point difference.
fn stencil(mu: &WeightedMeasure, k: usize) -> Result<(&[f64], std::ops::Range<usize>, Vec<f64>)> {
    let m = mu.len();
    if m < 3 {
        return Err(Error::TooFewSamples { need: 3, got: m });
    }
    if k == 0 || k + 1 >= m {
        return Err(Error::IndexOutOfRange { index: k, len: m });
    }
    let times = mu.times();
    let window = if m >= 5 {
        let lo = k.saturating_sub(2).min(m - 5);
        lo..lo + 5
    } else {
        k - 1..k + 2
    };
    let w = derivative_weights(&times[window.clone()], times[k]);
    Ok((times, window, w))
}

/// Weights `L_i'(t)` of the Lagrange interpolant through `nodes`.
fn derivative_weights(nodes: &[f64], t: f64) -> Vec<f64> {
    (0..nodes.len())
        .map(|i| {
            let mut sum = 0.0;
            for l in (0..nodes.len()).filter(|&l| l != i) {
                let mut p = 1.0 / (nodes[i] - nodes[l]);
                for j in (0..nodes.len()).filter(|&j| j != i && j != l) {
                    p *= (t - nodes[j]) / (nodes[i] - nodes[j]);
                }
                sum += p;
            }
            sum
        })
        .collect()
}

fn interior_max(
    mu: &WeightedMeasure,
    name: &str,
    at: fn(&WeightedMeasure, usize) -> Result<ResidualReport>,
) -> Result<ResidualReport> {
    let m = mu.len();
    if m < 3 {
        return Err(Error::TooFewSamples { need: 3, got: m });
    }
    let mut rep = ResidualReport::new(name, 2.0);
    for k in 1..m - 1 {
        let r = at(mu, k)?;
        if let Some((t, cell)) = r.location {
            rep.record(r.max_residual, t, cell);
        }
    }
    Ok(rep)
}

/// Pointwise residual of the weighted Bochner formula
/// `Lap_f |grad u|^2 = 2 |Hess u|^2 + 2 <grad u, grad Lap_f u> + 2 Ric_f(grad u, grad u)`
/// with `Ric_f = Ric + Hess f`.
pub fn check_weighted_bochner(u: &ScalarField, mu: &WeightedMeasure, k: usize) -> Result<ResidualReport> {
    let snap = mu.snapshot(k)?;
    let f = &mu.f[k];
    let grad2 = snap.gradient_norm_sq_pointwise(u)?;
    let lhs = drift_laplacian(&grad2, mu, k)?;
    let hess2 = snap.hessian_norm_sq(u)?;
    let lapf_u = drift_laplacian(u, mu, k)?;
    let cross = snap.gradient_dot(u, &lapf_u)?;
    let ric = snap.ricci_apply(u)?;
    let hf = snap.hessian_bilinear(f, u)?;
    let mut rep = ResidualReport::new("weighted_bochner", 2.0);
    for cell in 0..u.len() {
        let r = lhs.values[cell]
            - 2.0 * hess2.values[cell]
            - 2.0 * cross.values[cell]
            - 2.0 * (ric.values[cell] + hf.values[cell]);
        rep.record(r, snap.t, cell);
    }
    Ok(rep)
}

/// Residual of `d/dt (K dV) = -(Lap K) dV` on the density of `K dV` with
/// respect to the coordinate measure, over the interior samples.
pub fn check_measure_evolution(mu: &WeightedMeasure) -> Result<ResidualReport> {
    interior_max(mu, "measure_evolution", check_measure_evolution_at)
}

/// [`check_measure_evolution`] at interior sample `k`.
pub fn check_measure_evolution_at(mu: &WeightedMeasure, k: usize) -> Result<ResidualReport> {
    let (times, window, w) = stencil(mu, k)?;
    let snap = &mu.snapshots[k];
    let lap = snap.laplacian(&mu.k.fields[k])?;
    let vd = snap.volume_density();
    let mut dens_t = vec![0.0; lap.len()];
    for (i, wi) in window.zip(&w) {
        let d = mu.snapshots[i].volume_density();
        for (cell, acc) in dens_t.iter_mut().enumerate() {
            *acc += wi * d[cell] * mu.k.fields[i].values[cell];
        }
    }
    let mut rep = ResidualReport::new("measure_evolution", 2.0);
    for cell in 0..lap.len() {
        rep.record(dens_t[cell] + lap.values[cell] * vd[cell], times[k], cell);
    }
    Ok(rep)
}
