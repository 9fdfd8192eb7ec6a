//! Discretized closed manifolds.
//!
//! Three backends share one finite-volume description: every cell carries a
//! volume and every pair of adjacent cells shares a face with a conductance
//! (area over length, contracted with the inverse metric). The Laplacian,
//! the gradient norm and the weighted divergence are all assembled from the
//! same face list, so discrete Green identities hold to rounding:
//!
//! ```text
//! sum_j V_j u_j (Lap v)_j = -sum_j V_j <grad u, grad v>_j
//! ```
//!
//! Pointwise Hessians use central differences in an orthonormal frame
//! (see [`Jet`]).

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Default positivity floor for the curvature bounds K1, K2.
pub const DEFAULT_EPS_FLOOR: f64 = 1e-6;

/// Largest side of the coarse graph used for Dijkstra diameters.
const DIJKSTRA_MAX_SIDE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum BackendKind {
    /// Periodic rectangle `[0, lx) x [0, ly)` with constant diagonal metric.
    FlatTorus2D {
        lx: f64,
        ly: f64,
        nx: usize,
        ny: usize,
        gxx: f64,
        gyy: f64,
    },
    /// Round `S^dim` of initial radius `r0`, axisymmetric fields on a
    /// cell-centered polar grid.
    AxisymSphere { dim: usize, r0: f64, n_theta: usize },
    /// Periodic rectangle with metric `exp(2 phi) (dx^2 + dy^2)`.
    ConformalTorus2D {
        lx: f64,
        ly: f64,
        nx: usize,
        ny: usize,
        phi0: Vec<f64>,
    },
}

/// Grid layout; two fields are compatible iff their shapes are equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum GridShape {
    Periodic2D { nx: usize, ny: usize },
    Polar { n_theta: usize },
}

impl GridShape {
    pub fn len(&self) -> usize {
        match *self {
            GridShape::Periodic2D { nx, ny } => nx * ny,
            GridShape::Polar { n_theta } => n_theta,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
struct Face {
    a: usize,
    b: usize,
    dir: usize,
    base: f64,
}

#[derive(Debug)]
pub struct Backend {
    kind: BackendKind,
    shape: GridShape,
    eps_floor: f64,
    faces: Vec<Face>,
    /// Torus: coordinate cell area. Sphere: cell volume at unit radius.
    unit_volumes: Vec<f64>,
}

fn check_grid(field: &str, n: usize) -> Result<()> {
    if n < 8 || !n.is_multiple_of(2) {
        return Err(Error::config(field, format!("grid count {n} must be even and >= 8")));
    }
    Ok(())
}

fn check_positive(field: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::config(field, format!("must be positive and finite, got {v}")));
    }
    Ok(())
}

fn periodic_faces(nx: usize, ny: usize, hx: f64, hy: f64) -> Vec<Face> {
    let mut faces = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let a = i + nx * j;
            faces.push(Face {
                a,
                b: (i + 1) % nx + nx * j,
                dir: 0,
                base: hy / hx,
            });
            faces.push(Face {
                a,
                b: i + nx * ((j + 1) % ny),
                dir: 1,
                base: hx / hy,
            });
        }
    }
    faces
}

/// Volume of the unit `(m)`-sphere, `2 pi^{(m+1)/2} / Gamma((m+1)/2)`.
pub fn unit_sphere_volume(m: usize) -> f64 {
    let n = m + 1;
    2.0 * PI.powf(n as f64 / 2.0) / gamma_half(n)
}

/// `Gamma(n / 2)` for a positive integer `n`.
fn gamma_half(n: usize) -> f64 {
    let mut g = if n.is_multiple_of(2) { 1.0 } else { PI.sqrt() };
    let mut k = if n.is_multiple_of(2) { 2 } else { 1 };
    while k < n {
        g *= k as f64 / 2.0;
        k += 2;
    }
    g
}

/// `int_0^theta sin^m(s) ds`.
fn sin_pow_integral(m: usize, theta: f64) -> f64 {
    match m {
        0 => theta,
        1 => 1.0 - theta.cos(),
        _ => {
            let (s, c) = theta.sin_cos();
            -s.powi(m as i32 - 1) * c / m as f64
                + (m as f64 - 1.0) / m as f64 * sin_pow_integral(m - 2, theta)
        }
    }
}

impl Backend {
    fn build(kind: BackendKind) -> Result<Backend> {
        let (shape, faces, unit_volumes) = match &kind {
            BackendKind::FlatTorus2D {
                lx,
                ly,
                nx,
                ny,
                gxx,
                gyy,
            } => {
                check_positive("backend.lx", *lx)?;
                check_positive("backend.ly", *ly)?;
                check_positive("backend.gxx", *gxx)?;
                check_positive("backend.gyy", *gyy)?;
                check_grid("backend.nx", *nx)?;
                check_grid("backend.ny", *ny)?;
                let (hx, hy) = (lx / *nx as f64, ly / *ny as f64);
                (
                    GridShape::Periodic2D { nx: *nx, ny: *ny },
                    periodic_faces(*nx, *ny, hx, hy),
                    vec![hx * hy; nx * ny],
                )
            }
            BackendKind::ConformalTorus2D {
                lx,
                ly,
                nx,
                ny,
                phi0,
            } => {
                check_positive("backend.lx", *lx)?;
                check_positive("backend.ly", *ly)?;
                check_grid("backend.nx", *nx)?;
                check_grid("backend.ny", *ny)?;
                if phi0.len() != nx * ny || phi0.iter().any(|p| !p.is_finite()) {
                    return Err(Error::config(
                        "backend.phi0",
                        "conformal factor must be finite with one value per cell",
                    ));
                }
                let (hx, hy) = (lx / *nx as f64, ly / *ny as f64);
                (
                    GridShape::Periodic2D { nx: *nx, ny: *ny },
                    periodic_faces(*nx, *ny, hx, hy),
                    vec![hx * hy; nx * ny],
                )
            }
            BackendKind::AxisymSphere { dim, r0, n_theta } => {
                if *dim < 2 {
                    return Err(Error::config("backend.dim", "sphere dimension must be >= 2"));
                }
                check_positive("backend.r0", *r0)?;
                check_grid("backend.n_theta", *n_theta)?;
                let n = *n_theta;
                let h = PI / n as f64;
                let omega = unit_sphere_volume(dim - 1);
                let faces = (0..n - 1)
                    .map(|j| Face {
                        a: j,
                        b: j + 1,
                        dir: 0,
                        base: omega * (((j + 1) as f64) * h).sin().powi(*dim as i32 - 1) / h,
                    })
                    .collect();
                let vols = (0..n)
                    .map(|j| {
                        omega
                            * (sin_pow_integral(dim - 1, (j + 1) as f64 * h)
                                - sin_pow_integral(dim - 1, j as f64 * h))
                    })
                    .collect();
                (GridShape::Polar { n_theta: n }, faces, vols)
            }
        };
        Ok(Backend {
            kind,
            shape,
            eps_floor: DEFAULT_EPS_FLOOR,
            faces,
            unit_volumes,
        })
    }

    pub fn flat_torus(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Arc<Backend>> {
        Self::flat_torus_with_metric(lx, ly, nx, ny, 1.0, 1.0)
    }

    pub fn flat_torus_with_metric(
        lx: f64,
        ly: f64,
        nx: usize,
        ny: usize,
        gxx: f64,
        gyy: f64,
    ) -> Result<Arc<Backend>> {
        Ok(Arc::new(Self::build(BackendKind::FlatTorus2D {
            lx,
            ly,
            nx,
            ny,
            gxx,
            gyy,
        })?))
    }

    pub fn sphere(dim: usize, r0: f64, n_theta: usize) -> Result<Arc<Backend>> {
        Ok(Arc::new(Self::build(BackendKind::AxisymSphere {
            dim,
            r0,
            n_theta,
        })?))
    }

    /// Conformal torus with `phi0` sampled from a closure of `(x, y)`.
    pub fn conformal_torus(
        lx: f64,
        ly: f64,
        nx: usize,
        ny: usize,
        phi0: impl Fn(f64, f64) -> f64,
    ) -> Result<Arc<Backend>> {
        let (hx, hy) = (lx / nx as f64, ly / ny as f64);
        let mut values = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                values.push(phi0(i as f64 * hx, j as f64 * hy));
            }
        }
        Ok(Arc::new(Self::build(BackendKind::ConformalTorus2D {
            lx,
            ly,
            nx,
            ny,
            phi0: values,
        })?))
    }

    pub fn from_kind(kind: BackendKind) -> Result<Arc<Backend>> {
        Ok(Arc::new(Self::build(kind)?))
    }

    /// Replaces the curvature positivity floor.
    pub fn with_eps_floor(self: Arc<Self>, eps: f64) -> Result<Arc<Backend>> {
        check_positive("registry.epsilon_floor", eps)?;
        let mut b = Backend::build(self.kind.clone())?;
        b.eps_floor = eps;
        Ok(Arc::new(b))
    }

    pub fn kind(&self) -> &BackendKind {
        &self.kind
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn eps_floor(&self) -> f64 {
        self.eps_floor
    }

    /// Manifold dimension `n`.
    pub fn dim(&self) -> usize {
        match self.kind {
            BackendKind::AxisymSphere { dim, .. } => dim,
            _ => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            BackendKind::FlatTorus2D { .. } => "flat_torus",
            BackendKind::AxisymSphere { .. } => "sphere",
            BackendKind::ConformalTorus2D { .. } => "conformal_torus",
        }
    }

    /// Coordinates of cell `j`: `(x, y)` on tori, `(theta, 0)` on the sphere.
    pub fn cell_coords(&self, j: usize) -> (f64, f64) {
        match self.kind {
            BackendKind::FlatTorus2D { lx, ly, nx, ny, .. }
            | BackendKind::ConformalTorus2D { lx, ly, nx, ny, .. } => {
                let (i, k) = (j % nx, j / nx);
                (i as f64 * lx / nx as f64, k as f64 * ly / ny as f64)
            }
            BackendKind::AxisymSphere { n_theta, .. } => ((j as f64 + 0.5) * PI / n_theta as f64, 0.0),
        }
    }

    /// Samples a closure of the cell coordinates into a field.
    pub fn field_from_fn(&self, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        let values = (0..self.len())
            .map(|j| {
                let (x, y) = self.cell_coords(j);
                f(x, y)
            })
            .collect();
        ScalarField {
            shape: self.shape,
            values,
        }
    }

    pub fn constant_field(&self, c: f64) -> ScalarField {
        ScalarField {
            shape: self.shape,
            values: vec![c; self.len()],
        }
    }

    /// Metric at `t = 0`.
    pub fn initial_metric(&self) -> MetricData {
        match &self.kind {
            BackendKind::FlatTorus2D { gxx, gyy, .. } => MetricData::Flat {
                gxx: *gxx,
                gyy: *gyy,
            },
            BackendKind::AxisymSphere { r0, .. } => MetricData::Round { radius: *r0 },
            BackendKind::ConformalTorus2D { phi0, .. } => MetricData::Conformal { phi: phi0.clone() },
        }
    }

    /// Grid spacings `(hx, hy)`; on the sphere `(h_theta, h_theta)`.
    pub fn spacing(&self) -> (f64, f64) {
        match self.kind {
            BackendKind::FlatTorus2D { lx, ly, nx, ny, .. }
            | BackendKind::ConformalTorus2D { lx, ly, nx, ny, .. } => (lx / nx as f64, ly / ny as f64),
            BackendKind::AxisymSphere { n_theta, .. } => {
                let h = PI / n_theta as f64;
                (h, h)
            }
        }
    }

    /// Coordinate measure of a cell, used to turn cell volumes into
    /// volume-element densities.
    pub fn coordinate_cell_measure(&self) -> f64 {
        let (hx, hy) = self.spacing();
        match self.kind {
            BackendKind::AxisymSphere { .. } => hx,
            _ => hx * hy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    shape: GridShape,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::BackendMismatch(format!(
                "{} values for a grid of {} cells",
                values.len(),
                shape.len()
            )));
        }
        Ok(ScalarField { shape, values })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the first minimum.
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (j, v) in self.values.iter().enumerate() {
            if *v < self.values[best] {
                best = j;
            }
        }
        best
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            shape: self.shape,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        self.ensure_same(other)?;
        Ok(ScalarField {
            shape: self.shape,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> Result<f64> {
        self.ensure_same(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    fn ensure_same(&self, other: &ScalarField) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::BackendMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

/// Metric coefficients of one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricData {
    Flat { gxx: f64, gyy: f64 },
    Round { radius: f64 },
    Conformal { phi: Vec<f64> },
}

/// Second-order jet of a field in an orthonormal frame.
///
/// `g` and `h11, h12, h22` live in the frame spanned by the grid
/// directions; `iso` is a diagonal Hessian entry repeated `iso_mult` times
/// (the rotation directions of the sphere).
#[derive(Debug, Clone, Copy, Default)]
pub struct Jet {
    pub g: [f64; 2],
    pub h11: f64,
    pub h12: f64,
    pub h22: f64,
    pub iso: f64,
    pub iso_mult: f64,
}

impl Jet {
    pub fn hessian_norm_sq(&self) -> f64 {
        self.h11 * self.h11
            + 2.0 * self.h12 * self.h12
            + self.h22 * self.h22
            + self.iso_mult * self.iso * self.iso
    }

    pub fn laplacian(&self) -> f64 {
        self.h11 + self.h22 + self.iso_mult * self.iso
    }

    pub fn grad_norm_sq(&self) -> f64 {
        self.g[0] * self.g[0] + self.g[1] * self.g[1]
    }

    /// `Hess(self)(v, v)` for a frame vector `v`.
    pub fn hessian_apply(&self, v: [f64; 2]) -> f64 {
        self.h11 * v[0] * v[0] + 2.0 * self.h12 * v[0] * v[1] + self.h22 * v[1] * v[1]
    }
}

/// Discretized metric `g(t)` at one time, with curvature data.
#[derive(Debug, Clone)]
pub struct MetricSnapshot {
    backend: Arc<Backend>,
    pub t: f64,
    pub metric: MetricData,
    volumes: Vec<f64>,
    face_scale: [f64; 2],
    /// `kappa` with `Ric = kappa g` pointwise (all backends are Einstein
    /// cell by cell).
    ricci_factor: Vec<f64>,
    pub scalar_curvature: Vec<f64>,
    pub k1: f64,
    pub k2: f64,
}

impl MetricSnapshot {
    pub fn new(backend: Arc<Backend>, t: f64, metric: MetricData) -> Result<Self> {
        let n = backend.len();
        let (volumes, face_scale, ricci_factor, scalar_curvature) = match (&backend.kind, &metric) {
            (BackendKind::FlatTorus2D { .. }, MetricData::Flat { gxx, gyy }) => {
                let sq = (gxx * gyy).sqrt();
                let vols = backend.unit_volumes.iter().map(|v| v * sq).collect();
                (vols, [sq / gxx, sq / gyy], vec![0.0; n], vec![0.0; n])
            }
            (BackendKind::AxisymSphere { dim, .. }, MetricData::Round { radius }) => {
                if !(*radius > 0.0) {
                    return Err(Error::FlowExtinct {
                        t,
                        extinction: f64::NAN,
                    });
                }
                let d = *dim as i32;
                let vols = backend.unit_volumes.iter().map(|v| v * radius.powi(d)).collect();
                let kappa = (*dim as f64 - 1.0) / (radius * radius);
                (
                    vols,
                    [radius.powi(d - 2), 0.0],
                    vec![kappa; n],
                    vec![*dim as f64 * kappa; n],
                )
            }
            (BackendKind::ConformalTorus2D { .. }, MetricData::Conformal { phi }) => {
                if phi.len() != n {
                    return Err(Error::BackendMismatch("conformal factor length".into()));
                }
                let vols: Vec<f64> = backend
                    .unit_volumes
                    .iter()
                    .zip(phi)
                    .map(|(v, p)| v * (2.0 * p).exp())
                    .collect();
                // R = -2 exp(-2 phi) lap_flat phi, with the same face stencil.
                let mut lap = vec![0.0; n];
                for f in &backend.faces {
                    let flux = f.base * (phi[f.b] - phi[f.a]);
                    lap[f.a] += flux;
                    lap[f.b] -= flux;
                }
                let r: Vec<f64> = lap
                    .iter()
                    .zip(&vols)
                    .map(|(l, v)| -2.0 * l / v)
                    .collect();
                let kappa = r.iter().map(|x| 0.5 * x).collect();
                (vols, [1.0, 1.0], kappa, r)
            }
            _ => {
                return Err(Error::BackendMismatch(format!(
                    "metric data does not match backend {}",
                    backend.name()
                )))
            }
        };
        let eps = backend.eps_floor;
        let kmin = ricci_factor.iter().copied().fold(f64::INFINITY, f64::min);
        let kmax = ricci_factor.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(MetricSnapshot {
            backend,
            t,
            metric,
            volumes,
            face_scale,
            ricci_factor,
            scalar_curvature,
            k1: (-kmin).max(eps),
            k2: kmax.max(eps),
        })
    }

    pub fn backend(&self) -> &Arc<Backend> {
        &self.backend
    }

    pub fn shape(&self) -> GridShape {
        self.backend.shape
    }

    /// Cell volumes `V_j` (quadrature weights of `dV_g`).
    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    /// Volume-element density per unit coordinate measure.
    pub fn volume_density(&self) -> Vec<f64> {
        let c = self.backend.coordinate_cell_measure();
        self.volumes.iter().map(|v| v / c).collect()
    }

    /// `kappa_j` with `Ric = kappa_j g` at cell `j`.
    pub fn ricci_factor(&self) -> &[f64] {
        &self.ricci_factor
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }

    fn check(&self, u: &ScalarField) -> Result<()> {
        if u.shape != self.backend.shape {
            return Err(Error::BackendMismatch(format!(
                "field on {:?}, metric on {:?}",
                u.shape, self.backend.shape
            )));
        }
        Ok(())
    }

    fn conductance(&self, f: &Face) -> f64 {
        f.base * self.face_scale[f.dir]
    }

    fn out(&self, values: Vec<f64>) -> ScalarField {
        ScalarField {
            shape: self.backend.shape,
            values,
        }
    }

    /// Laplace-Beltrami operator `Delta_g u`.
    pub fn laplacian(&self, u: &ScalarField) -> Result<ScalarField> {
        self.check(u)?;
        let mut acc = vec![0.0; u.len()];
        for f in &self.backend.faces {
            let flux = self.conductance(f) * (u.values[f.b] - u.values[f.a]);
            acc[f.a] += flux;
            acc[f.b] -= flux;
        }
        for (a, v) in acc.iter_mut().zip(&self.volumes) {
            *a /= v;
        }
        Ok(self.out(acc))
    }

    /// `div(K grad u) / K`, face weights the arithmetic mean of `K`.
    pub fn weighted_laplacian(&self, u: &ScalarField, k: &ScalarField) -> Result<ScalarField> {
        self.check(u)?;
        self.check(k)?;
        let mut acc = vec![0.0; u.len()];
        for f in &self.backend.faces {
            let kf = 0.5 * (k.values[f.a] + k.values[f.b]);
            let flux = self.conductance(f) * kf * (u.values[f.b] - u.values[f.a]);
            acc[f.a] += flux;
            acc[f.b] -= flux;
        }
        for ((a, v), kk) in acc.iter_mut().zip(&self.volumes).zip(&k.values) {
            *a /= v * kk;
        }
        Ok(self.out(acc))
    }

    /// `<grad u, grad v>_g` per cell: the mean of the adjacent face products.
    pub fn gradient_dot(&self, u: &ScalarField, v: &ScalarField) -> Result<ScalarField> {
        self.check(u)?;
        self.check(v)?;
        let mut acc = vec![0.0; u.len()];
        for f in &self.backend.faces {
            let w = 0.5
                * self.conductance(f)
                * (u.values[f.b] - u.values[f.a])
                * (v.values[f.b] - v.values[f.a]);
            acc[f.a] += w;
            acc[f.b] += w;
        }
        for (a, vol) in acc.iter_mut().zip(&self.volumes) {
            *a /= vol;
        }
        Ok(self.out(acc))
    }

    /// `|grad u|^2_g`.
    pub fn gradient_norm_sq(&self, u: &ScalarField) -> Result<ScalarField> {
        self.gradient_dot(u, u)
    }

    /// `|grad u|^2_g` from the central-difference jets. Pointwise second order
    /// everywhere (including the polar cells), unlike the face form, so it
    /// is the one to differentiate again.
    pub fn gradient_norm_sq_pointwise(&self, u: &ScalarField) -> Result<ScalarField> {
        Ok(self.out(self.jets(u)?.iter().map(Jet::grad_norm_sq).collect()))
    }

    /// Central-difference jets in an orthonormal frame.
    pub fn jets(&self, u: &ScalarField) -> Result<Vec<Jet>> {
        self.check(u)?;
        let v = &u.values;
        let (hx, hy) = self.backend.spacing();
        match (&self.backend.kind, &self.metric) {
            (BackendKind::AxisymSphere { dim, n_theta, .. }, MetricData::Round { radius }) => {
                let n = *n_theta;
                let r2 = radius * radius;
                let at = |j: isize| -> f64 {
                    if j < 0 {
                        v[(-j - 1) as usize]
                    } else if j as usize >= n {
                        v[2 * n - 1 - j as usize]
                    } else {
                        v[j as usize]
                    }
                };
                Ok((0..n)
                    .map(|j| {
                        let ji = j as isize;
                        let (um, u0, up) = (at(ji - 1), v[j], at(ji + 1));
                        let ut = (up - um) / (2.0 * hx);
                        let utt = (up - 2.0 * u0 + um) / (hx * hx);
                        let theta = (j as f64 + 0.5) * hx;
                        Jet {
                            g: [ut / radius, 0.0],
                            h11: utt / r2,
                            h12: 0.0,
                            h22: 0.0,
                            iso: theta.cos() / theta.sin() * ut / r2,
                            iso_mult: *dim as f64 - 1.0,
                        }
                    })
                    .collect())
            }
            (BackendKind::FlatTorus2D { nx, ny, .. }, MetricData::Flat { gxx, gyy }) => {
                let d = PeriodicDiff::new(*nx, *ny, hx, hy);
                let (sx, sy) = (gxx.sqrt(), gyy.sqrt());
                Ok((0..v.len())
                    .map(|c| {
                        let p = d.partials(v, c);
                        Jet {
                            g: [p.x / sx, p.y / sy],
                            h11: p.xx / gxx,
                            h12: p.xy / (sx * sy),
                            h22: p.yy / gyy,
                            iso: 0.0,
                            iso_mult: 0.0,
                        }
                    })
                    .collect())
            }
            (BackendKind::ConformalTorus2D { nx, ny, .. }, MetricData::Conformal { phi }) => {
                let d = PeriodicDiff::new(*nx, *ny, hx, hy);
                Ok((0..v.len())
                    .map(|c| {
                        let p = d.partials(v, c);
                        let q = d.partials(phi, c);
                        let e1 = (-phi[c]).exp();
                        let e2 = e1 * e1;
                        // Christoffel symbols of exp(2 phi) delta.
                        let hxx = p.xx - q.x * p.x + q.y * p.y;
                        let hyy = p.yy - q.y * p.y + q.x * p.x;
                        let hxy = p.xy - (q.y * p.x + q.x * p.y);
                        Jet {
                            g: [e1 * p.x, e1 * p.y],
                            h11: e2 * hxx,
                            h12: e2 * hxy,
                            h22: e2 * hyy,
                            iso: 0.0,
                            iso_mult: 0.0,
                        }
                    })
                    .collect())
            }
            _ => Err(Error::BackendMismatch("metric does not match backend".into())),
        }
    }

    /// `|Hess_g u|^2_g`.
    pub fn hessian_norm_sq(&self, u: &ScalarField) -> Result<ScalarField> {
        Ok(self.out(self.jets(u)?.iter().map(Jet::hessian_norm_sq).collect()))
    }

    /// `Hess_g f (grad u, grad u)`.
    pub fn hessian_bilinear(&self, f: &ScalarField, u: &ScalarField) -> Result<ScalarField> {
        let jf = self.jets(f)?;
        let ju = self.jets(u)?;
        Ok(self.out(jf.iter().zip(&ju).map(|(a, b)| a.hessian_apply(b.g)).collect()))
    }

    /// `Ric(grad u, grad u)`.
    pub fn ricci_apply(&self, u: &ScalarField) -> Result<ScalarField> {
        let g = self.gradient_norm_sq(u)?;
        Ok(self.out(
            g.values
                .iter()
                .zip(&self.ricci_factor)
                .map(|(a, k)| a * k)
                .collect(),
        ))
    }

    /// `int_M u (weight) dV_g`.
    pub fn integrate(&self, u: &ScalarField, weight: Option<&ScalarField>) -> Result<f64> {
        self.check(u)?;
        match weight {
            None => Ok(u.values.iter().zip(&self.volumes).map(|(a, v)| a * v).sum()),
            Some(w) => {
                self.check(w)?;
                Ok(u
                    .values
                    .iter()
                    .zip(&w.values)
                    .zip(&self.volumes)
                    .map(|((a, k), v)| a * k * v)
                    .sum())
            }
        }
    }

    /// Geodesic diameter.
    pub fn diameter(&self) -> f64 {
        match (&self.backend.kind, &self.metric) {
            (BackendKind::FlatTorus2D { lx, ly, .. }, MetricData::Flat { gxx, gyy }) => {
                0.5 * (gxx * lx * lx + gyy * ly * ly).sqrt()
            }
            (BackendKind::AxisymSphere { .. }, MetricData::Round { radius }) => PI * radius,
            (BackendKind::ConformalTorus2D { lx, ly, nx, ny, .. }, MetricData::Conformal { phi }) => {
                graph_diameter(*lx, *ly, *nx, *ny, phi)
            }
            _ => f64::NAN,
        }
    }

    /// `(K1, K2)` with `-K1 g <= Ric <= K2 g`, floored at `eps_floor`.
    pub fn ricci_bounds(&self) -> (f64, f64) {
        (self.k1, self.k2)
    }

    /// Gershgorin bound on the spectral radius of the discrete Laplacian.
    pub fn laplacian_spectral_bound(&self) -> f64 {
        let mut diag = vec![0.0; self.volumes.len()];
        for f in &self.backend.faces {
            let c = self.conductance(f);
            diag[f.a] += c;
            diag[f.b] += c;
        }
        diag.iter()
            .zip(&self.volumes)
            .map(|(d, v)| 2.0 * d / v)
            .fold(0.0, f64::max)
    }
}

struct Partials {
    x: f64,
    y: f64,
    xx: f64,
    yy: f64,
    xy: f64,
}

struct PeriodicDiff {
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
}

impl PeriodicDiff {
    fn new(nx: usize, ny: usize, hx: f64, hy: f64) -> Self {
        PeriodicDiff { nx, ny, hx, hy }
    }

    fn partials(&self, v: &[f64], c: usize) -> Partials {
        let (nx, ny) = (self.nx, self.ny);
        let (i, j) = (c % nx, c / nx);
        let (ip, im) = ((i + 1) % nx, (i + nx - 1) % nx);
        let (jp, jm) = ((j + 1) % ny, (j + ny - 1) % ny);
        let at = |a: usize, b: usize| v[a + nx * b];
        let u0 = v[c];
        Partials {
            x: (at(ip, j) - at(im, j)) / (2.0 * self.hx),
            y: (at(i, jp) - at(i, jm)) / (2.0 * self.hy),
            xx: (at(ip, j) - 2.0 * u0 + at(im, j)) / (self.hx * self.hx),
            yy: (at(i, jp) - 2.0 * u0 + at(i, jm)) / (self.hy * self.hy),
            xy: (at(ip, jp) - at(ip, jm) - at(im, jp) + at(im, jm)) / (4.0 * self.hx * self.hy),
        }
    }
}

#[derive(Copy, Clone, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All-pairs Dijkstra diameter on an 8-neighbour graph over a coarsened
/// copy of the grid. Edge lengths use the conformal factor averaged over
/// the edge endpoints, so the result upper-bounds the geodesic diameter up
/// to the coarsening error.
fn graph_diameter(lx: f64, ly: f64, nx: usize, ny: usize, phi: &[f64]) -> f64 {
    let sx = nx.div_ceil(DIJKSTRA_MAX_SIDE).max(1);
    let sy = ny.div_ceil(DIJKSTRA_MAX_SIDE).max(1);
    let (mx, my) = (nx / sx, ny / sy);
    let (hx, hy) = (lx / mx as f64, ly / my as f64);
    let scale: Vec<f64> = (0..mx * my)
        .map(|c| phi[(c % mx) * sx + nx * ((c / mx) * sy)].exp())
        .collect();
    let moves: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
    let total = mx * my;
    let mut diameter: f64 = 0.0;
    let mut dist = vec![f64::INFINITY; total];
    for src in 0..total {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        dist[src] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(HeapItem(0.0, src));
        while let Some(HeapItem(d, c)) = heap.pop() {
            if d > dist[c] {
                continue;
            }
            let (i, j) = ((c % mx) as isize, (c / mx) as isize);
            for (di, dj) in moves {
                let ni = (i + di).rem_euclid(mx as isize) as usize;
                let nj = (j + dj).rem_euclid(my as isize) as usize;
                let nb = ni + mx * nj;
                let len = ((di as f64 * hx).powi(2) + (dj as f64 * hy).powi(2)).sqrt();
                let nd = d + len * 0.5 * (scale[c] + scale[nb]);
                if nd < dist[nb] {
                    dist[nb] = nd;
                    heap.push(HeapItem(nd, nb));
                }
            }
        }
        diameter = dist.iter().copied().fold(diameter, f64::max);
    }
    diameter
}
