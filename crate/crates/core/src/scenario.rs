//! Scenario configuration and the full pipeline: flow, PDE, measure,
//! constant fit, frequency and every check.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::constants::{B4Mode, ConstantRegistry, EVariant, Provenance, DEFAULT_CONTRACTION, DEFAULT_SAFETY};
use crate::error::{Error, Result};
use crate::estimates::ALL_LEMMAS;
use crate::flow::{
    check_volume_evolution, evolve_metric, extinction_time, uniform_times, volume_residual_at, FlowTrajectory,
};
use crate::frequency::{compute_u_trace, fit_minimal_constants, CorrectionKind, FrequencyTrace};
use crate::geometry::{Backend, GridShape, MetricSnapshot, ScalarField};
use crate::measure::{
    bump_profile, check_f_evolution_at, check_measure_evolution_at, check_weighted_bochner, gaussian_bump,
    weighted_measure_from_k, WeightedMeasure,
};
use crate::pde::{solve_conjugate_backward, solve_forward, EquationKind, ScalarFieldTrace};
use crate::verify::{
    branch_crossing, check_gradient_estimate, check_harnack, check_max_principle, check_monotonicity, identity_samples,
    in_branch_i, lemma31_residual_at, CheckReport, CheckStatus, HarnackVariant, Monotonicity,
};
use crate::weight::{WeightFunction, DEFAULT_H_FLOOR};

pub const SCHEMA_VERSION: u32 = 1;
/// Refinement factors of the identity ladder, coarse to fine.
pub const LADDER: [usize; 3] = [4, 2, 1];
/// Formal order of every discretized identity.
const IDENTITY_ORDER: f64 = 2.0;
/// Smallest order accepted on the last ladder step.
pub const MIN_ORDER: f64 = 1.8;
/// Conjugate-solve mass tolerance before renormalization warnings.
const CONJUGATE_MASS_TOL: f64 = 1e-6;

/// A cosine mode `amp cos(2 pi (kx x / lx + ky y / ly) + phase)` on a
/// torus, or `amp cos(kx theta + phase)` on the sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub amp: f64,
    #[serde(default)]
    pub kx: f64,
    #[serde(default)]
    pub ky: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    FlatTorus {
        #[serde(default = "one")]
        lx: f64,
        #[serde(default = "one")]
        ly: f64,
        nx: usize,
        ny: usize,
    },
    Sphere {
        #[serde(default = "two")]
        dim: usize,
        #[serde(default = "one")]
        r0: f64,
        n: usize,
    },
    ConformalTorus {
        #[serde(default = "one")]
        lx: f64,
        #[serde(default = "one")]
        ly: f64,
        nx: usize,
        ny: usize,
        phi: Vec<Mode>,
    },
}

fn one() -> f64 {
    1.0
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub t0: f64,
    pub t1: f64,
    /// Number of sample intervals on `[t0, t1]`.
    pub samples: usize,
    /// Final time `T` of the flow (the conjugate solve starts there).
    pub final_time: f64,
    /// Metric time step (conformal backend); automatic when absent.
    #[serde(default)]
    pub dt: Option<f64>,
    /// PDE time step; half the stability cap when absent.
    #[serde(default)]
    pub pde_dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Constant { value: f64 },
    Fourier { base: f64, modes: Vec<Mode> },
    Bump { center: [f64; 2], width: f64, base: f64, height: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalSpec {
    #[default]
    Uniform,
    Bump { center: [f64; 2], width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrySpec {
    pub fit: bool,
    pub safety: f64,
    pub b4_mode: B4Mode,
    pub e_variant: EVariant,
    pub contraction: f64,
    pub zero_b4: bool,
    pub zero_c3: bool,
    /// Configured values of `B1`, `Bn`, `C1`, `Cn`, `cn`.
    pub overrides: BTreeMap<String, f64>,
    /// Configured solution bounds; measured bounds are used when absent.
    pub eta: Option<f64>,
    #[serde(rename = "A")]
    pub big_a: Option<f64>,
}

impl Default for RegistrySpec {
    fn default() -> Self {
        RegistrySpec {
            fit: true,
            safety: DEFAULT_SAFETY,
            b4_mode: B4Mode::Full,
            e_variant: EVariant::Integrand,
            contraction: DEFAULT_CONTRACTION,
            zero_b4: false,
            zero_c3: false,
            overrides: BTreeMap::new(),
            eta: None,
            big_a: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Multiplies every tolerance.
    pub scale: f64,
    pub volume: f64,
    pub mass: f64,
    pub max_principle: f64,
    /// Absolute floor of the identity residuals (rounding level).
    pub identity_floor: f64,
    pub reduction: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            scale: 1.0,
            volume: 1e-8,
            mass: 1e-6,
            max_principle: 1e-6,
            identity_floor: 1e-9,
            reduction: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub backend: BackendSpec,
    pub flow: FlowSpec,
    pub equation: EquationKind,
    pub initial: InitialSpec,
    /// The weight `h(t)`.
    pub weight: WeightFunction,
    #[serde(default)]
    pub terminal: TerminalSpec,
    #[serde(default)]
    pub registry: RegistrySpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ScenarioConfig {
    /// Parses and validates a TOML scenario.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let de = toml::de::Deserializer::parse(s).map_err(|e| Error::config("<toml>", e.to_string().trim().to_string()))?;
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::config("schema", format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema)));
        }
        let f = &self.flow;
        if !(f.t0 > 0.0) {
            return Err(Error::config(
                "flow.t0",
                format!("t0 = {} must satisfy t0 > 0 (the correction integrands contain 1/s and 1/sqrt(s))", f.t0),
            ));
        }
        if !(f.t1 > f.t0) {
            return Err(Error::config("flow.t1", format!("need t0 < t1, got t0 = {}, t1 = {}", f.t0, f.t1)));
        }
        if !(f.final_time > f.t1) {
            return Err(Error::config("flow.final_time", format!("need t1 < T, got t1 = {}, T = {}", f.t1, f.final_time)));
        }
        if f.samples < 16 || !f.samples.is_multiple_of(4) {
            return Err(Error::config(
                "flow.samples",
                format!("{} must be a multiple of 4 and >= 16 (refinement ladder)", f.samples),
            ));
        }
        for (name, v) in [("flow.dt", f.dt), ("flow.pde_dt", f.pde_dt)] {
            if let Some(d) = v {
                if !(d > 0.0) {
                    return Err(Error::config(name, format!("must be positive, got {d}")));
                }
            }
        }
        let grid = |name: &str, n: usize| -> Result<()> {
            if n < 32 || !n.is_multiple_of(8) {
                return Err(Error::config(name, format!("{n} must be a multiple of 8 and >= 32 (refinement ladder)")));
            }
            Ok(())
        };
        match &self.backend {
            BackendSpec::FlatTorus { nx, ny, lx, ly } | BackendSpec::ConformalTorus { nx, ny, lx, ly, .. } => {
                grid("backend.nx", *nx)?;
                grid("backend.ny", *ny)?;
                if !(*lx > 0.0 && *ly > 0.0) {
                    return Err(Error::config("backend.lx", "periods must be positive"));
                }
            }
            BackendSpec::Sphere { n, r0, dim } => {
                grid("backend.n", *n)?;
                if !(*r0 > 0.0) || *dim < 2 {
                    return Err(Error::config("backend.r0", "need r0 > 0 and dim >= 2"));
                }
                let ext = extinction_time(*dim, *r0);
                if !(f.final_time < ext) {
                    return Err(Error::config(
                        "flow.final_time",
                        format!("T = {} reaches the extinction time {ext}", f.final_time),
                    ));
                }
            }
        }
        if let BackendSpec::Sphere { .. } = self.backend {
            let bad = |m: &Vec<Mode>| m.iter().any(|m| m.ky != 0.0);
            if matches!(&self.initial, InitialSpec::Fourier { modes, .. } if bad(modes)) {
                return Err(Error::config("initial.modes", "sphere modes depend on theta only (ky must be 0)"));
            }
        }
        self.equation
            .validate()
            .map_err(|e| Error::config("equation", e.to_string()))?;
        self.weight
            .validate(f.t0, f.t1, DEFAULT_H_FLOOR)
            .map_err(|e| Error::config("weight", e.to_string()))?;
        if let InitialSpec::Bump { width, .. } = self.initial {
            if !(width > 0.0) {
                return Err(Error::config("initial.width", "must be positive"));
            }
        }
        let u0 = self.initial_field(&self.backend_at(1)?)?;
        if !(u0.min() > 0.0) {
            return Err(Error::config("initial", format!("initial data must be positive, min = {}", u0.min())));
        }
        let r = &self.registry;
        if !(r.safety >= 1.0) {
            return Err(Error::config("registry.safety", format!("{} must be >= 1", r.safety)));
        }
        if !(r.contraction > 0.0) {
            return Err(Error::config("registry.contraction", "must be positive"));
        }
        for (k, v) in &r.overrides {
            let field = format!("registry.overrides.{k}");
            if !crate::constants::FREE_CONSTANTS.iter().any(|c| c.replace(['(', ')'], "") == k.replace(['(', ')'], "")) {
                return Err(Error::config(field, "unknown constant (expected B1, Bn, C1, Cn or cn)"));
            }
            if !(*v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be finite and >= 0, got {v}")));
            }
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.scale", t.scale),
            ("tolerances.volume", t.volume),
            ("tolerances.mass", t.mass),
            ("tolerances.max_principle", t.max_principle),
            ("tolerances.identity_floor", t.identity_floor),
            ("tolerances.reduction", t.reduction),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Backend with grid counts divided by `factor`.
    pub fn backend_at(&self, factor: usize) -> Result<Arc<Backend>> {
        match &self.backend {
            BackendSpec::FlatTorus { lx, ly, nx, ny } => Backend::flat_torus(*lx, *ly, nx / factor, ny / factor),
            BackendSpec::Sphere { dim, r0, n } => Backend::sphere(*dim, *r0, n / factor),
            BackendSpec::ConformalTorus { lx, ly, nx, ny, phi } => {
                let (lx, ly) = (*lx, *ly);
                let modes = phi.clone();
                Backend::conformal_torus(lx, ly, nx / factor, ny / factor, move |x, y| torus_modes(&modes, lx, ly, x, y))
            }
        }
    }

    pub fn times_at(&self, factor: usize) -> Vec<f64> {
        uniform_times(self.flow.t0, self.flow.t1, self.flow.samples / factor)
    }

    pub fn initial_field(&self, backend: &Arc<Backend>) -> Result<ScalarField> {
        let sphere = matches!(self.backend, BackendSpec::Sphere { .. });
        let (lx, ly) = match &self.backend {
            BackendSpec::FlatTorus { lx, ly, .. } | BackendSpec::ConformalTorus { lx, ly, .. } => (*lx, *ly),
            BackendSpec::Sphere { .. } => (1.0, 1.0),
        };
        match &self.initial {
            InitialSpec::Constant { value } => Ok(backend.constant_field(*value)),
            InitialSpec::Fourier { base, modes } => Ok(backend.field_from_fn(|x, y| {
                base + if sphere {
                    modes.iter().map(|m| m.amp * (m.kx * x + m.phase).cos()).sum::<f64>()
                } else {
                    torus_modes(modes, lx, ly, x, y)
                }
            })),
            InitialSpec::Bump {
                center,
                width,
                base,
                height,
            } => {
                let snap = MetricSnapshot::new(backend.clone(), 0.0, backend.initial_metric())?;
                let p = bump_profile(&snap, (center[0], center[1]), *width)?;
                Ok(p.map(|v| base + height * v))
            }
        }
    }

    /// Terminal data on the last sampled metric, where the conjugate solve starts.
    fn terminal_field(&self, traj: &FlowTrajectory) -> Result<ScalarField> {
        let last = traj.snapshots.last().unwrap();
        match &self.terminal {
            TerminalSpec::Uniform => Ok(traj.backend().constant_field(1.0 / last.total_volume())),
            TerminalSpec::Bump { center, width } => gaussian_bump(last, (center[0], center[1]), *width),
        }
    }

    /// Copy with one sweep parameter changed: `a`, `lambda`, `p`, `N`
    /// (every grid count), `dt` (PDE step) or `h_scale`.
    pub fn with_param(&self, name: &str, value: f64) -> Result<ScenarioConfig> {
        let mut c = self.clone();
        let field = format!("sweep.{name}");
        match (name, &mut c.equation) {
            ("a", EquationKind::LogNonlinear { a }) => *a = value,
            ("lambda", EquationKind::PowerNonlinear { lambda, .. }) => *lambda = value,
            ("p", EquationKind::PowerNonlinear { p, .. }) => *p = value,
            ("a" | "lambda" | "p", eq) => {
                return Err(Error::config(field, format!("not a parameter of the {} equation", eq.name())));
            }
            ("N", _) => {
                if value.fract() != 0.0 || value < 0.0 {
                    return Err(Error::config(field, format!("grid count must be a whole number, got {value}")));
                }
                let n = value as usize;
                match &mut c.backend {
                    BackendSpec::FlatTorus { nx, ny, .. } | BackendSpec::ConformalTorus { nx, ny, .. } => {
                        *nx = n;
                        *ny = n;
                    }
                    BackendSpec::Sphere { n: m, .. } => *m = n,
                }
            }
            ("dt", _) => c.flow.pde_dt = Some(value),
            ("h_scale" | "h-scale", _) => c.weight = c.weight.scaled(value),
            _ => {
                return Err(Error::config(
                    field,
                    "unknown parameter (expected a, lambda, p, N, dt or h_scale)",
                ))
            }
        }
        c.name = format!("{}[{name}={value}]", self.name);
        c.validate()?;
        Ok(c)
    }
}

fn torus_modes(modes: &[Mode], lx: f64, ly: f64, x: f64, y: f64) -> f64 {
    modes
        .iter()
        .map(|m| m.amp * (2.0 * PI * (m.kx * x / lx + m.ky * y / ly) + m.phase).cos())
        .sum()
}

/// Flow, solution and measure at one ladder resolution.
#[derive(Debug, Clone)]
pub struct Level {
    pub factor: usize,
    pub traj: FlowTrajectory,
    pub u: ScalarFieldTrace,
    pub mu: WeightedMeasure,
}

impl Level {
    /// Grid count along the first axis.
    pub fn resolution(&self) -> usize {
        match self.traj.backend().shape() {
            GridShape::Periodic2D { nx, .. } => nx,
            GridShape::Polar { n_theta } => n_theta,
        }
    }
}

/// Tags runtime errors with the pipeline stage; configuration errors pass
/// through unchanged.
trait InStage<T> {
    fn in_stage(self, stage: &'static str) -> Result<T>;
}

impl<T> InStage<T> for Result<T> {
    fn in_stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            e @ (Error::Config { .. } | Error::Stage { .. }) => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        })
    }
}

/// Flow and solution only (no measure), at ladder factor `factor`.
pub fn solve_flow_and_pde(cfg: &ScenarioConfig, factor: usize) -> Result<(FlowTrajectory, ScalarFieldTrace)> {
    let backend = cfg.backend_at(factor).in_stage("flow")?;
    let traj = evolve_metric(backend.clone(), &cfg.times_at(factor), cfg.flow.final_time, cfg.flow.dt).in_stage("flow")?;
    let u0 = cfg.initial_field(&backend).in_stage("pde")?;
    let u = solve_forward(cfg.equation, &u0, &traj, cfg.flow.pde_dt).in_stage("pde")?;
    Ok((traj, u))
}

pub fn build_level(cfg: &ScenarioConfig, factor: usize) -> Result<Level> {
    let (traj, u) = solve_flow_and_pde(cfg, factor)?;
    let mu = (|| {
        let kt = cfg.terminal_field(&traj)?;
        let k = solve_conjugate_backward(&kt, &traj, None, CONJUGATE_MASS_TOL)?;
        weighted_measure_from_k(k, &traj, cfg.flow.final_time)
    })()
    .in_stage("measure")?;
    Ok(Level { factor, traj, u, mu })
}

/// Registry template for the scenario: measured data, configured mode,
/// variant, contraction and bounds.
pub fn registry_template(cfg: &ScenarioConfig, traj: &FlowTrajectory, u: &ScalarFieldTrace) -> Result<ConstantRegistry> {
    let spec = &cfg.registry;
    let mut reg = ConstantRegistry::for_trace(u, traj)?;
    reg.b4_mode = spec.b4_mode;
    reg.e_variant = spec.e_variant;
    reg.set("c(n)", spec.contraction, Provenance::Configured)?;
    if let Some(eta) = spec.eta {
        reg.eta = eta;
        reg.provenance.insert("eta".into(), Provenance::Configured);
    }
    if let Some(a) = spec.big_a {
        reg.big_a = a;
        reg.provenance.insert("A".into(), Provenance::Configured);
    }
    Ok(reg)
}

/// Fitted registry (before the safety factor) and the registry used by the
/// checks (safety applied, overrides and falsifiability switches set).
pub fn fit_registry(
    cfg: &ScenarioConfig,
    traj: &FlowTrajectory,
    u: &ScalarFieldTrace,
) -> Result<(Option<ConstantRegistry>, ConstantRegistry)> {
    let spec = &cfg.registry;
    let template = registry_template(cfg, traj, u)?;
    let fitted = if spec.fit {
        Some(fit_minimal_constants(&[u], traj, &template)?)
    } else {
        None
    };
    let mut reg = match &fitted {
        Some(f) => f.with_safety(spec.safety),
        None => template,
    };
    for (k, v) in &spec.overrides {
        reg.set(k, *v, Provenance::Configured)?;
    }
    reg.zero_b4 = spec.zero_b4;
    reg.zero_c3 = spec.zero_c3;
    Ok((fitted, reg))
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    /// Ladder levels, coarse to fine; the last one carries every other check.
    pub levels: Vec<Level>,
    pub fitted: Option<ConstantRegistry>,
    pub registry: ConstantRegistry,
    pub frequency: FrequencyTrace,
    pub reports: Vec<CheckReport>,
}

impl RunOutput {
    pub fn fine(&self) -> &Level {
        self.levels.last().unwrap()
    }

    pub fn status(&self) -> CheckStatus {
        crate::verify::worst_status(&self.reports)
    }

    pub fn report(&self, id: &str) -> Option<&CheckReport> {
        self.reports.iter().find(|r| r.id == id)
    }
}

/// Identity residual on the ladder. Passes when the finest residual is at
/// or below what order-1.8 convergence from the middle level predicts, or
/// below the rounding floor.
fn ladder_report(id: &str, levels: &[Level], values: Vec<f64>, at: Option<(f64, Option<usize>)>, floor: f64) -> CheckReport {
    let res: Vec<usize> = levels.iter().map(Level::resolution).collect();
    let fine = *values.last().unwrap();
    if fine <= floor {
        let mut r = CheckReport::new(id, -fine, at, floor).with_convergence(res, values, IDENTITY_ORDER);
        r.status = CheckStatus::Pass;
        return r.note("residual at rounding level");
    }
    let predicted = values[values.len() - 2] * 2f64.powf(-MIN_ORDER);
    CheckReport::new(id, -fine, at, predicted.max(floor))
        .with_convergence(res, values, IDENTITY_ORDER)
        .note("tolerance: middle-level residual scaled for order-1.8 convergence")
}

/// Sample indices of a level at the common times `t0 + (t1 - t0) j / 4`.
fn common_indices(level: &Level) -> [usize; 3] {
    let s = level.u.len() - 1;
    [s / 4, s / 2, 3 * s / 4]
}

fn ladder<F>(levels: &[Level], mut f: F) -> Result<(Vec<f64>, Option<(f64, Option<usize>)>)>
where
    F: FnMut(&Level, usize) -> Result<(f64, Option<usize>)>,
{
    let mut values = Vec::new();
    let mut at = None;
    for lv in levels {
        let mut worst = 0.0f64;
        for k in common_indices(lv) {
            let (r, cell) = f(lv, k)?;
            if r.abs() > worst || r.is_nan() {
                worst = r.abs();
                if lv.factor == 1 {
                    at = Some((lv.u.times[k], cell));
                }
            }
        }
        values.push(worst);
    }
    Ok((values, at))
}

/// Runs the whole scenario.
pub fn run_suite(cfg: &ScenarioConfig, tol_scale: f64) -> Result<RunOutput> {
    cfg.validate()?;
    let scale = tol_scale * cfg.tolerances.scale;
    let levels = LADDER.iter().map(|&f| build_level(cfg, f)).collect::<Result<Vec<_>>>()?;
    let fine = levels.last().unwrap();
    let (fitted, registry) = fit_registry(cfg, &fine.traj, &fine.u).in_stage("fit")?;
    let kind = CorrectionKind::for_equation(&cfg.equation);
    let frequency = compute_u_trace(&fine.u, &fine.mu, &cfg.weight, &registry, kind).in_stage("frequency")?;
    let reports = run_checks(cfg, scale, &levels, &registry, &frequency).in_stage("checks")?;
    Ok(RunOutput {
        config: cfg.clone(),
        levels,
        fitted,
        registry,
        frequency,
        reports,
    })
}

fn run_checks(
    cfg: &ScenarioConfig,
    scale: f64,
    levels: &[Level],
    registry: &ConstantRegistry,
    frequency: &FrequencyTrace,
) -> Result<Vec<CheckReport>> {
    let tol = &cfg.tolerances;
    let fine = levels.last().unwrap();
    let kind = frequency.kind();
    let floor = scale * tol.identity_floor;
    let mut reports = Vec::new();

    // Flow.
    if matches!(cfg.backend, BackendSpec::ConformalTorus { .. }) {
        let (v, at) = ladder(levels, |l, k| volume_residual_at(&l.traj, k).map(|(r, c)| (r, Some(c))))?;
        reports.push(ladder_report("volume_evolution", levels, v, at, floor));
    } else {
        let v = check_volume_evolution(&fine.traj)?;
        reports.push(CheckReport::new(
            "volume_evolution",
            -v.max_residual,
            v.location.map(|(t, c)| (t, Some(c))),
            scale * tol.volume,
        ));
    }
    let dev = fine.mu.max_mass_deviation();
    let worst_k = fine
        .mu
        .mass_deviation
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(k, _)| k)
        .unwrap_or(0);
    reports.push(CheckReport::new(
        "conjugate_mass",
        -dev,
        Some((fine.mu.times()[worst_k], None)),
        scale * tol.mass,
    ));
    reports.push(check_max_principle(&fine.u, scale * tol.max_principle));

    // Identities on the ladder.
    let (v, at) = ladder(levels, |l, k| lemma31_residual_at(&l.u, &l.traj, k).map(|(r, c)| (r, Some(c))))?;
    reports.push(ladder_report("lemma31", levels, v, at, floor));
    let (v, at) = ladder(levels, |l, k| {
        let s = identity_samples(&l.u, &l.mu, &cfg.weight)?;
        let x = &s[k - 1];
        let rel_i = (x.di_fd - x.di_formula).abs() / x.di_formula.abs().max(1e-300);
        let rel_d = (x.dd_fd - x.dd_formula).abs() / x.dd_formula.abs().max(1e-300);
        let r = if x.di_formula == 0.0 && x.di_fd == 0.0 { 0.0 } else { rel_i };
        let d = if x.dd_formula == 0.0 && x.dd_fd == 0.0 { 0.0 } else { rel_d };
        Ok((r.max(d), None))
    })?;
    reports.push(ladder_report("dI_dD", levels, v, at, floor));
    let (v, at) = ladder(levels, |l, k| {
        check_f_evolution_at(&l.mu, k).map(|r| (r.max_residual, r.location.map(|x| x.1)))
    })?;
    reports.push(ladder_report("f_evolution", levels, v, at, floor));
    let (v, at) = ladder(levels, |l, k| {
        check_weighted_bochner(&l.u.fields[k], &l.mu, k).map(|r| (r.max_residual, r.location.map(|x| x.1)))
    })?;
    reports.push(ladder_report("weighted_bochner", levels, v, at, floor));
    let (v, at) = ladder(levels, |l, k| {
        check_measure_evolution_at(&l.mu, k).map(|r| (r.max_residual, r.location.map(|x| x.1)))
    })?;
    reports.push(ladder_report("measure_evolution", levels, v, at, floor));

    // Gradient estimates.
    for lemma in ALL_LEMMAS.into_iter().filter(|l| l.applies_to(&cfg.equation)) {
        reports.push(check_gradient_estimate(lemma, &[&fine.u], &fine.traj, registry, scale)?);
    }

    // Frequency.
    let sign = cfg.weight.value(cfg.flow.t0).signum();
    reports.push(check_monotonicity(frequency, Monotonicity::for_h_sign(sign), scale)?);
    if kind == CorrectionKind::Phi {
        let (t0, t1) = (cfg.flow.t0, cfg.flow.t1);
        let has_i = in_branch_i(registry, t0) || in_branch_i(registry, t1);
        let has_ii = !in_branch_i(registry, t0) || !in_branch_i(registry, t1);
        if has_i {
            reports.push(check_harnack(frequency, HarnackVariant::Cor39i, scale)?);
        }
        if has_ii {
            reports.push(check_harnack(frequency, HarnackVariant::Cor39ii, scale)?);
        }
        if let Some(ts) = branch_crossing(registry).filter(|ts| *ts > t0 && *ts < t1) {
            if let Some(r) = reports.last_mut() {
                r.notes.push(format!("branch crossing t* = {ts:.6}"));
            }
        }
    } else {
        reports.push(check_harnack(frequency, HarnackVariant::Cor13, scale)?);
    }
    let heat_like = match cfg.equation {
        EquationKind::Heat => true,
        EquationKind::PowerNonlinear { lambda, p } => lambda == 0.0 && p == 1.0,
        EquationKind::LogNonlinear { .. } => false,
    };
    if heat_like {
        let heat = compute_u_trace(&fine.u, &fine.mu, &cfg.weight, registry, CorrectionKind::HeatPsi)?;
        let mut worst = 0.0f64;
        let mut at = None;
        for k in 0..heat.len() {
            let rel = (heat.u[k] - frequency.u[k]).abs() / frequency.u[k].abs().max(1e-300);
            let rel = if heat.u[k] == frequency.u[k] { 0.0 } else { rel };
            if rel > worst || at.is_none() {
                worst = rel;
                at = Some((heat.times[k], None));
            }
        }
        reports.push(CheckReport::new("heat_reduction", -worst, at, scale * tol.reduction));
    }
    Ok(reports)
}

/// Names of the artifacts written by [`write_artifacts`].
pub const ARTIFACTS: [&str; 7] = [
    "trajectory.csv",
    "trace.csv",
    "measure.csv",
    "frequency.csv",
    "registry.json",
    "report.json",
    "report.md",
];

pub fn report_json(out: &RunOutput) -> Result<String> {
    let doc = serde_json::json!({
        "scenario": out.config.name,
        "status": out.status(),
        "checks": out.reports,
    });
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Writes every artifact into `dir`.
pub fn write_artifacts(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    write_all(out, dir).in_stage("artifacts")
}

fn write_all(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let fine = out.fine();
    let path = |n: &str| dir.join(n);
    let create = |n: &str| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(path(n))?)) };
    fine.traj.write_csv(create(ARTIFACTS[0])?)?;
    fine.u.write_csv(&fine.traj, create(ARTIFACTS[1])?)?;
    fine.mu.write_csv(create(ARTIFACTS[2])?)?;
    out.frequency.write_csv(create(ARTIFACTS[3])?)?;
    std::fs::write(path(ARTIFACTS[4]), out.registry.to_json()? + "\n")?;
    std::fs::write(path(ARTIFACTS[5]), report_json(out)? + "\n")?;
    std::fs::write(
        path(ARTIFACTS[6]),
        crate::verify::reports_to_markdown(&out.config.name, &out.reports),
    )?;
    Ok(ARTIFACTS.iter().map(|n| path(n)).collect())
}

/// Fit-only run: flow and PDE at full resolution, then the constant fit.
pub fn run_fit(cfg: &ScenarioConfig) -> Result<(ConstantRegistry, ConstantRegistry)> {
    cfg.validate()?;
    let (traj, u) = solve_flow_and_pde(cfg, 1)?;
    let (fitted, reg) = fit_registry(cfg, &traj, &u).in_stage("fit")?;
    let fitted = fitted.ok_or_else(|| Error::config("registry.fit", "fit is disabled in this scenario"))?;
    Ok((fitted, reg))
}
