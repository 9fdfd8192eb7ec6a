//! Ricci flow `d/dt g = -2 Ric(g)` on the three backends.
//!
//! The flat torus is static, the round sphere shrinks by the closed form
//! `r(t)^2 = r0^2 - 2 (n - 1) t`, and the conformal torus integrates
//! `d/dt phi = exp(-2 phi) Lap_flat phi` with RK4. The conformal
//! trajectory keeps frames at integrator resolution (thinned to a bounded
//! count) together with `d/dt phi`, and serves the metric at any time by
//! cubic Hermite interpolation.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::diagnostics::{centered, ResidualReport};
use crate::error::{Error, Result};
use crate::geometry::{Backend, BackendKind, MetricData, MetricSnapshot};

/// Safety factor in the explicit stability bound of the conformal flow.
pub const FLOW_STABILITY_SAFETY: f64 = 0.5;

/// Upper bound on stored conformal frames.
const MAX_FRAMES: usize = 256;

#[derive(Debug, Clone)]
enum DenseMetric {
    Static(MetricData),
    Round { r0: f64, dim: usize },
    Conformal {
        times: Vec<f64>,
        phi: Vec<Vec<f64>>,
        rate: Vec<Vec<f64>>,
    },
}

/// Time-indexed metric samples on `[t0, t1]`.
#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    backend: Arc<Backend>,
    pub times: Vec<f64>,
    pub snapshots: Vec<MetricSnapshot>,
    /// Nominal final time `T` of the flow.
    pub final_time: f64,
    /// Integrator step (zero for closed-form flows).
    pub dt: f64,
    /// `max(K1, K2)` over the samples.
    pub k_bar: f64,
    dense: DenseMetric,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurvatureEnvelope {
    pub k1: f64,
    pub k2: f64,
    pub k_bar: f64,
    pub rho_min: f64,
    pub rho_max: f64,
}

/// Time at which a round sphere of radius `r0` collapses.
pub fn extinction_time(dim: usize, r0: f64) -> f64 {
    r0 * r0 / (2.0 * (dim as f64 - 1.0))
}

/// Explicit stability cap of the conformal flow for the given factor.
pub fn conformal_dt_cap(backend: &Backend, phi: &[f64]) -> f64 {
    let (hx, hy) = backend.spacing();
    let h = hx.min(hy);
    let min_scale = phi.iter().map(|p| (2.0 * p).exp()).fold(f64::INFINITY, f64::min);
    FLOW_STABILITY_SAFETY * min_scale * h * h / 4.0
}

pub(crate) fn validate_times(times: &[f64], final_time: f64) -> Result<()> {
    if times.is_empty() {
        return Err(Error::config("flow.samples", "empty time grid"));
    }
    if !(times[0] > 0.0) {
        return Err(Error::config("flow.t0", "t0 must be > 0"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::config("flow.samples", "sample times must be strictly increasing"));
    }
    if !(final_time > *times.last().unwrap()) {
        return Err(Error::config("flow.final_time", "T must exceed t1"));
    }
    Ok(())
}

fn conformal_rate(backend: &Arc<Backend>, phi: &[f64]) -> Result<Vec<f64>> {
    let snap = MetricSnapshot::new(backend.clone(), 0.0, MetricData::Conformal { phi: phi.to_vec() })?;
    Ok(snap.scalar_curvature.iter().map(|r| -0.5 * r).collect())
}

/// Evolves the metric and samples it at `times`.
pub fn evolve_metric(
    backend: Arc<Backend>,
    times: &[f64],
    final_time: f64,
    dt: Option<f64>,
) -> Result<FlowTrajectory> {
    validate_times(times, final_time)?;
    let t1 = *times.last().unwrap();
    let (dense, used_dt) = match backend.kind() {
        BackendKind::FlatTorus2D { .. } => (DenseMetric::Static(backend.initial_metric()), 0.0),
        BackendKind::AxisymSphere { dim, r0, .. } => {
            let ext = extinction_time(*dim, *r0);
            if t1 >= ext {
                return Err(Error::FlowExtinct { t: t1, extinction: ext });
            }
            if final_time > ext {
                return Err(Error::config(
                    "flow.final_time",
                    format!("T = {final_time} exceeds the extinction time {ext}"),
                ));
            }
            (DenseMetric::Round { r0: *r0, dim: *dim }, 0.0)
        }
        BackendKind::ConformalTorus2D { phi0, .. } => integrate_conformal(&backend, phi0, times, dt)?,
    };
    let mut traj = FlowTrajectory {
        backend,
        times: times.to_vec(),
        snapshots: Vec::new(),
        final_time,
        dt: used_dt,
        k_bar: 0.0,
        dense,
    };
    traj.snapshots = times
        .iter()
        .map(|&t| traj.metric_at(t))
        .collect::<Result<Vec<_>>>()?;
    traj.k_bar = traj
        .snapshots
        .iter()
        .map(|s| s.k1.max(s.k2))
        .fold(0.0, f64::max);
    Ok(traj)
}

fn integrate_conformal(
    backend: &Arc<Backend>,
    phi0: &[f64],
    times: &[f64],
    dt: Option<f64>,
) -> Result<(DenseMetric, f64)> {
    let cap0 = conformal_dt_cap(backend, phi0);
    let dt_req = match dt {
        Some(d) if d > cap0 => return Err(Error::Unstable { dt: d, cap: cap0 }),
        Some(d) if d > 0.0 => d,
        Some(d) => return Err(Error::config("flow.dt", format!("must be positive, got {d}"))),
        None => cap0,
    };
    let t1 = *times.last().unwrap();
    let stride = ((t1 / dt_req).ceil() as usize / MAX_FRAMES).max(1);

    let mut bounds = vec![0.0];
    bounds.extend_from_slice(times);
    let mut phi = phi0.to_vec();
    let mut rate = conformal_rate(backend, &phi)?;
    let mut f_times = vec![0.0];
    let mut f_phi = vec![phi.clone()];
    let mut f_rate = vec![rate.clone()];
    let mut max_dt: f64 = 0.0;
    let mut steps = 0usize;
    let n = phi.len();
    let mut stage = vec![0.0; n];
    for w in bounds.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let m = ((b - a) / dt_req).ceil().max(1.0) as usize;
        let h = (b - a) / m as f64;
        max_dt = max_dt.max(h);
        for s in 0..m {
            let cap = conformal_dt_cap(backend, &phi);
            if h > cap * (1.0 + 1e-12) {
                return Err(Error::Unstable { dt: h, cap });
            }
            let k1 = rate.clone();
            for i in 0..n {
                stage[i] = phi[i] + 0.5 * h * k1[i];
            }
            let k2 = conformal_rate(backend, &stage)?;
            for i in 0..n {
                stage[i] = phi[i] + 0.5 * h * k2[i];
            }
            let k3 = conformal_rate(backend, &stage)?;
            for i in 0..n {
                stage[i] = phi[i] + h * k3[i];
            }
            let k4 = conformal_rate(backend, &stage)?;
            for i in 0..n {
                phi[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            rate = conformal_rate(backend, &phi)?;
            steps += 1;
            let t = if s + 1 == m { b } else { a + (s + 1) as f64 * h };
            if s + 1 == m || steps.is_multiple_of(stride) {
                f_times.push(t);
                f_phi.push(phi.clone());
                f_rate.push(rate.clone());
            }
        }
    }
    Ok((
        DenseMetric::Conformal {
            times: f_times,
            phi: f_phi,
            rate: f_rate,
        },
        max_dt,
    ))
}

impl FlowTrajectory {
    pub fn backend(&self) -> &Arc<Backend> {
        &self.backend
    }

    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn t1(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Manifold dimension.
    pub fn dim(&self) -> usize {
        self.backend.dim()
    }

    pub fn is_static(&self) -> bool {
        matches!(self.dense, DenseMetric::Static(_))
    }

    /// Metric at any `t` in `[0, t1]` (closed form, or Hermite interpolation
    /// between stored frames).
    pub fn metric_at(&self, t: f64) -> Result<MetricSnapshot> {
        let metric = match &self.dense {
            DenseMetric::Static(m) => m.clone(),
            DenseMetric::Round { r0, dim } => {
                let r2 = r0 * r0 - 2.0 * (*dim as f64 - 1.0) * t;
                if r2 <= 0.0 {
                    return Err(Error::FlowExtinct {
                        t,
                        extinction: extinction_time(*dim, *r0),
                    });
                }
                MetricData::Round { radius: r2.sqrt() }
            }
            DenseMetric::Conformal { times, phi, rate } => {
                let last = *times.last().unwrap();
                if t < -1e-14 || t > last * (1.0 + 1e-12) + 1e-14 {
                    return Err(Error::Invalid(format!(
                        "metric requested at t = {t} outside [0, {last}]"
                    )));
                }
                let k = match times.binary_search_by(|x| x.total_cmp(&t)) {
                    Ok(k) => {
                        return MetricSnapshot::new(
                            self.backend.clone(),
                            t,
                            MetricData::Conformal { phi: phi[k].clone() },
                        )
                    }
                    Err(k) => k.clamp(1, times.len() - 1) - 1,
                };
                let (ta, tb) = (times[k], times[k + 1]);
                let d = tb - ta;
                let s = ((t - ta) / d).clamp(0.0, 1.0);
                let (s2, s3) = (s * s, s * s * s);
                let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                let h10 = s3 - 2.0 * s2 + s;
                let h01 = -2.0 * s3 + 3.0 * s2;
                let h11 = s3 - s2;
                let values = (0..phi[k].len())
                    .map(|i| {
                        h00 * phi[k][i] + h10 * d * rate[k][i] + h01 * phi[k + 1][i] + h11 * d * rate[k + 1][i]
                    })
                    .collect();
                MetricData::Conformal { phi: values }
            }
        };
        MetricSnapshot::new(self.backend.clone(), t, metric)
    }

    /// Times at which the dense metric is stored (closed-form flows: empty).
    pub fn frame_times(&self) -> &[f64] {
        match &self.dense {
            DenseMetric::Conformal { times, .. } => times,
            _ => &[],
        }
    }

    /// Trajectory summary CSV:
    /// `t, metric_summary, K1, K2, R_min, R_max, diameter, volume`.
    ///
    /// `metric_summary` is `sqrt(gxx gyy)` on the flat torus, the radius on
    /// the sphere and `max |phi|` on the conformal torus.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "metric_summary", "K1", "K2", "R_min", "R_max", "diameter", "volume"])?;
        for s in &self.snapshots {
            let summary = match &s.metric {
                MetricData::Flat { gxx, gyy } => (gxx * gyy).sqrt(),
                MetricData::Round { radius } => *radius,
                MetricData::Conformal { phi } => phi.iter().map(|p| p.abs()).fold(0.0, f64::max),
            };
            let rmin = s.scalar_curvature.iter().copied().fold(f64::INFINITY, f64::min);
            let rmax = s.scalar_curvature.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            w.write_record(
                [s.t, summary, s.k1, s.k2, rmin, rmax, s.diameter(), s.total_volume()].map(|v| v.to_string()),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Residual of `d/dt dV = -R dV` on the volume-element density, with
/// centered time differences over the samples.
pub fn check_volume_evolution(traj: &FlowTrajectory) -> Result<ResidualReport> {
    let m = traj.times.len();
    if m < 3 {
        return Err(Error::TooFewSamples { need: 3, got: m });
    }
    let mut rep = ResidualReport::new("volume_evolution", 2.0);
    for k in 1..m - 1 {
        let (r, cell) = volume_residual_at(traj, k)?;
        rep.record(r, traj.times[k], cell);
    }
    Ok(rep)
}

/// Worst volume-evolution residual at interior sample `k`, with its cell.
pub fn volume_residual_at(traj: &FlowTrajectory, k: usize) -> Result<(f64, usize)> {
    let m = traj.times.len();
    if k == 0 || k + 1 >= m {
        return Err(Error::IndexOutOfRange { index: k, len: m });
    }
    let dens: Vec<Vec<f64>> = traj.snapshots[k - 1..=k + 1].iter().map(|s| s.volume_density()).collect();
    let times = &traj.times[k - 1..=k + 1];
    let mut worst = (0.0f64, 0usize);
    for cell in 0..traj.backend.len() {
        let column = [dens[0][cell], dens[1][cell], dens[2][cell]];
        let r = centered(&column, times, 1) + traj.snapshots[k].scalar_curvature[cell] * column[1];
        if r.abs() > worst.0.abs() || r.is_nan() {
            worst = (r, cell);
        }
    }
    Ok(worst)
}

/// Trajectory-wide curvature bounds and diameter range.
pub fn curvature_envelope(traj: &FlowTrajectory) -> CurvatureEnvelope {
    let k1 = traj.snapshots.iter().map(|s| s.k1).fold(0.0, f64::max);
    let k2 = traj.snapshots.iter().map(|s| s.k2).fold(0.0, f64::max);
    let diam: Vec<f64> = if traj.is_static() {
        vec![traj.snapshots[0].diameter()]
    } else {
        traj.snapshots.iter().map(|s| s.diameter()).collect()
    };
    CurvatureEnvelope {
        k1,
        k2,
        k_bar: k1.max(k2),
        rho_min: diam.iter().copied().fold(f64::INFINITY, f64::min),
        rho_max: diam.iter().copied().fold(0.0, f64::max),
    }
}

/// `n + 1` equispaced sample times on `[t0, t1]`.
pub fn uniform_times(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|k| if k == n { t1 } else { t0 + (t1 - t0) * k as f64 / n as f64 })
        .collect()
}
