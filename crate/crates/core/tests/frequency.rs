use std::f64::consts::PI;

use parafreq::constants::Provenance;
use parafreq::estimates::{estimate_points, EstimateLemma};
use parafreq::flow::{evolve_metric, uniform_times};
use parafreq::frequency::{
    compute_d, compute_i, compute_u_trace, compute_u_trace_with, correction_phi, correction_psi, fit_minimal_constants,
};
use parafreq::measure::weighted_measure_from_k;
use parafreq::pde::{solve_conjugate_backward, solve_forward};
use parafreq::{
    Backend, ConstantRegistry, CorrectionKind, EquationKind, Error, FlowTrajectory, WeightFunction, WeightedMeasure,
};

fn uniform_measure(traj: &FlowTrajectory) -> WeightedMeasure {
    let vol = traj.snapshots.last().unwrap().total_volume();
    let kt = traj.backend().constant_field(1.0 / vol);
    let k = solve_conjugate_backward(&kt, traj, None, 1e-6).unwrap();
    weighted_measure_from_k(k, traj, traj.final_time).unwrap()
}

fn flat(nx: usize, ny: usize, times: &[f64], t_final: f64) -> FlowTrajectory {
    evolve_metric(Backend::flat_torus(1.0, 1.0, nx, ny).unwrap(), times, t_final, None).unwrap()
}

#[test]
fn i_and_d_of_a_cosine() {
    let traj = flat(1024, 8, &[1e-5, 2e-5], 3e-5);
    let mu = uniform_measure(&traj);
    let u = traj.backend().field_from_fn(|x, _| 1.0 + (2.0 * PI * x).cos());
    let i = compute_i(&u, &mu, 0).unwrap();
    assert!((i - 1.5).abs() < 1e-6, "{i}");
    let h = WeightFunction::Constant { c: -1.0 };
    let d = compute_d(&u, &mu, 0, &h).unwrap();
    assert!((d.gradient + 2.0 * PI * PI).abs() < 1e-4, "{}", d.gradient);
    assert!((d.gradient - d.drift).abs() < 1e-10);
    let c = traj.backend().constant_field(3.0);
    assert!((compute_i(&c, &mu, 1).unwrap() - 9.0).abs() < 1e-9);
    assert_eq!(compute_d(&c, &mu, 1, &h).unwrap().gradient, 0.0);
}

fn heat_mode(n: usize, eps: f64) -> (FlowTrajectory, parafreq::ScalarFieldTrace, WeightedMeasure) {
    let traj = flat(n, 8, &uniform_times(0.01, 0.05, 8), 0.06);
    let mu = uniform_measure(&traj);
    let u0 = traj.backend().field_from_fn(|x, _| 2.0 + eps * (2.0 * PI * x).cos());
    let u = solve_forward(EquationKind::Heat, &u0, &traj, None).unwrap();
    (traj, u, mu)
}

#[test]
fn heat_mode_ratio_matches_fourier_oracle() {
    let n = 64;
    let eps = 0.5;
    let (traj, u, mu) = heat_mode(n, eps);
    let lam = 4.0 * (n * n) as f64 * (PI / n as f64).sin().powi(2);
    let mut reg = ConstantRegistry::for_trace(&u, &traj).unwrap();
    reg.c1 = 0.0;
    reg.c_n = 0.0;
    let h = WeightFunction::Constant { c: -1.0 };
    let ft = compute_u_trace(&u, &mu, &h, &reg, CorrectionKind::Psi).unwrap();
    for k in 0..ft.len() {
        let a2 = (eps * (-lam * ft.times[k]).exp()).powi(2);
        let ratio = -(a2 * lam / 2.0) / (4.0 + a2 / 2.0);
        assert!((ft.d[k] / ft.i[k] - ratio).abs() < 1e-6 * ratio.abs(), "{k}");
        assert!(ft.u[k] < 0.0);
        assert!(ft.correction[k] > 0.0);
        assert!((ft.u[k] - ft.correction[k] * ft.d[k] / ft.i[k]).abs() <= 1e-14 * ft.u[k].abs());
    }
    assert_eq!(ft.correction[0], 1.0);
    // Leading-order decay e^{-8 pi^2 t}.
    let r = ft.d[ft.len() - 1] / ft.i[ft.len() - 1] / (ft.d[0] / ft.i[0]);
    let expect = (-2.0 * lam * (ft.times[ft.len() - 1] - ft.times[0])).exp();
    assert!((r / expect - 1.0).abs() < 0.05);
    let mut csv = Vec::new();
    ft.write_csv(&mut csv).unwrap();
    assert!(String::from_utf8(csv).unwrap().starts_with("t,I,D,correction,U\n"));
}

#[test]
fn constant_solution_has_zero_frequency_and_zero_fit() {
    let traj = flat(16, 16, &uniform_times(0.01, 0.05, 4), 0.06);
    let mu = uniform_measure(&traj);
    let u0 = traj.backend().constant_field(1.5);
    let u = solve_forward(EquationKind::Heat, &u0, &traj, None).unwrap();
    let reg = ConstantRegistry::for_trace(&u, &traj).unwrap();
    let ft = compute_u_trace(&u, &mu, &WeightFunction::Constant { c: -1.0 }, &reg, CorrectionKind::Psi).unwrap();
    assert!(ft.u.iter().all(|x| *x == 0.0));
    let fit = fit_minimal_constants(&[&u], &traj, &reg).unwrap();
    assert_eq!(fit.c1, 0.0);
    assert_eq!(fit.c_n, 0.0);

    let lu = solve_forward(EquationKind::LogNonlinear { a: 0.3 }, &u0, &traj, None).unwrap();
    let lreg = ConstantRegistry::for_trace(&lu, &traj).unwrap();
    let lfit = fit_minimal_constants(&[&lu], &traj, &lreg).unwrap();
    assert_eq!(lfit.b1, 0.0);
    assert_eq!(lfit.b_n, 0.0);
    assert_eq!(lfit.provenance["B1"], Provenance::Fitted);
}

#[test]
fn u_sign_follows_h() {
    let (traj, u, mu) = heat_mode(32, 0.5);
    let reg = ConstantRegistry::for_trace(&u, &traj).unwrap();
    for c in [-2.0, 0.5] {
        let ft = compute_u_trace(&u, &mu, &WeightFunction::Constant { c }, &reg, CorrectionKind::Psi).unwrap();
        assert!(ft.u.iter().all(|x| x.signum() == c.signum()));
    }
}

#[test]
fn fitted_c1_is_the_scan_maximum() {
    let (traj, u, _) = heat_mode(32, 1.0);
    let reg = ConstantRegistry::for_trace(&u, &traj).unwrap();
    let fit = fit_minimal_constants(&[&u], &traj, &reg).unwrap();
    let audit = fit.audit["C1"];
    // Direct recomputation at the audited location.
    let k = u.times.iter().position(|t| *t == audit.t).unwrap();
    let snap = &traj.snapshots[k];
    let g = snap.gradient_norm_sq(&u.fields[k]).unwrap().values[audit.cell].sqrt();
    let uu = u.fields[k].values[audit.cell];
    let denom = (1.0 / reg.rho + 1.0 / audit.t.sqrt() + reg.k_bar().sqrt()) * (1.0 + (reg.big_a / uu).ln());
    assert!(((g / uu) / denom - fit.c1).abs() <= 1e-14 * fit.c1);
    let pts = estimate_points(EstimateLemma::L41, &u, &traj, &fit).unwrap();
    assert!(pts.iter().all(|p| p.lhs <= p.rhs(fit.c1) * (1.0 + 1e-14)));
    assert!(fit.c1 > 0.0 && fit.c_n > 0.0);
}

#[test]
fn fitted_constants_shrink_on_subsets() {
    let (traj, u, _) = heat_mode(32, 1.0);
    let reg = ConstantRegistry::for_trace(&u, &traj).unwrap();
    let full = fit_minimal_constants(&[&u], &traj, &reg).unwrap();
    let mut part = u.clone();
    part.times.truncate(3);
    part.fields.truncate(3);
    let sub = fit_minimal_constants(&[&part], &traj, &reg).unwrap();
    assert!(sub.c1 <= full.c1 && sub.c_n <= full.c_n);
    let empty = {
        let mut e = u.clone();
        e.times.clear();
        e.fields.clear();
        e
    };
    assert!(matches!(fit_minimal_constants(&[&empty], &traj, &reg), Err(Error::Fit { .. })));
}

#[test]
fn registry_bounds_are_enforced() {
    let (traj, u, mu) = heat_mode(16, 0.5);
    let mut reg = ConstantRegistry::for_trace(&u, &traj).unwrap();
    reg.big_a *= 0.99;
    let h = WeightFunction::Constant { c: -1.0 };
    assert!(matches!(
        compute_u_trace(&u, &mu, &h, &reg, CorrectionKind::Psi),
        Err(Error::BoundsViolated(_))
    ));
    let reg = ConstantRegistry::for_trace(&u, &traj).unwrap();
    assert!(compute_u_trace(&u, &mu, &h, &reg, CorrectionKind::Phi).is_err());
    let sign_change = WeightFunction::Polynomial { coeffs: vec![-0.03, 1.0] };
    assert!(matches!(
        compute_u_trace(&u, &mu, &sign_change, &reg, CorrectionKind::Psi),
        Err(Error::WeightFunction(_))
    ));
}

#[test]
fn single_point_corrections() {
    let (traj, u, _) = heat_mode(16, 0.5);
    let reg = ConstantRegistry::for_trace(&u, &traj).unwrap();
    let h = WeightFunction::Constant { c: -1.0 };
    assert_eq!(correction_psi(&traj, &reg, &h, traj.t0()).unwrap(), 1.0);
    let mut prev = 1.0;
    for &t in &traj.times[1..] {
        let v = correction_psi(&traj, &reg, &h, t).unwrap();
        assert!(v > 0.0 && v < prev);
        prev = v;
    }
    let mut lreg = reg.clone();
    lreg.a = 0.2;
    assert!(correction_phi(&traj, &lreg, &h, 0.03).unwrap() < 1.0);
    assert!(correction_phi(&traj, &lreg, &h, 0.5).is_err());
}

#[test]
fn quadrature_halving_is_within_reported_error() {
    let (traj, u, mu) = heat_mode(16, 0.5);
    let mut reg = ConstantRegistry::for_trace(&u, &traj).unwrap();
    reg.c1 = 2.0;
    reg.c_n = 1.5;
    let h = WeightFunction::Exponential { c: -1.0, k: 2.0 };
    let a = compute_u_trace_with(&u, &mu, &h, &reg, CorrectionKind::Psi, 1e-6).unwrap();
    let b = compute_u_trace_with(&u, &mu, &h, &reg, CorrectionKind::Psi, 5e-7).unwrap();
    for k in 0..a.len() {
        let d = (a.log_correction[k] - b.log_correction[k]).abs();
        assert!(d <= a.correction_fn.errors[k] + 1e-15, "{k}: {d} vs {}", a.correction_fn.errors[k]);
    }
}

#[test]
fn power_zero_one_equals_heat_path() {
    let (traj, u, mu) = heat_mode(16, 0.5);
    let reg = ConstantRegistry::for_trace(&u, &traj).unwrap();
    let h = WeightFunction::Constant { c: -1.0 };
    let psi = compute_u_trace(&u, &mu, &h, &reg, CorrectionKind::Psi).unwrap();
    let heat = compute_u_trace(&u, &mu, &h, &reg, CorrectionKind::HeatPsi).unwrap();
    for k in 0..psi.len() {
        assert!((psi.u[k] - heat.u[k]).abs() <= 1e-12 * psi.u[k].abs());
    }
}

#[test]
fn scaling_h_scales_u() {
    let (traj, u, mu) = heat_mode(16, 0.5);
    let reg = ConstantRegistry::for_trace(&u, &traj).unwrap();
    let h = WeightFunction::Constant { c: -1.0 };
    let a = compute_u_trace(&u, &mu, &h, &reg, CorrectionKind::Psi).unwrap();
    let b = compute_u_trace(&u, &mu, &h.scaled(2.0), &reg, CorrectionKind::Psi).unwrap();
    for k in 0..a.len() {
        assert!((b.u[k] - 2.0 * a.u[k]).abs() <= 1e-12 * a.u[k].abs());
    }
}

