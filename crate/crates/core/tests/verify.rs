use std::f64::consts::PI;
use std::path::Path;

use parafreq::estimates::EstimateLemma;
use parafreq::flow::uniform_times;
use parafreq::frequency::{compute_u_trace, fit_minimal_constants};
use parafreq::measure::weighted_measure_from_k;
use parafreq::pde::{solve_conjugate_backward, solve_forward, stability_cap};
use parafreq::scenario::{build_level, run_suite, solve_flow_and_pde, ScenarioConfig, LADDER};
use parafreq::verify::{
    check_gradient_estimate, check_harnack, check_lemma31, check_max_principle, check_monotonicity, identity_residuals,
    lemma31_residual_at, HarnackVariant, Monotonicity,
};
use parafreq::{
    evolve_metric, Backend, CheckStatus, ConstantRegistry, CorrectionKind, EquationKind, FlowTrajectory, WeightFunction,
    WeightedMeasure,
};

fn load(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}.cfg"))).unwrap()
}

fn uniform_measure(traj: &FlowTrajectory) -> WeightedMeasure {
    let kt = traj.backend().constant_field(1.0 / traj.snapshots.last().unwrap().total_volume());
    weighted_measure_from_k(solve_conjugate_backward(&kt, traj, None, 1e-6).unwrap(), traj, traj.final_time).unwrap()
}

/// Worst gradient evolution residual at the three shared sample times of each ladder level.
fn lemma31_ladder(cfg: &ScenarioConfig) -> Vec<f64> {
    LADDER
        .iter()
        .map(|&f| {
            let (traj, u) = solve_flow_and_pde(cfg, f).unwrap();
            let s = u.len() - 1;
            [s / 4, s / 2, 3 * s / 4]
                .iter()
                .map(|&k| lemma31_residual_at(&u, &traj, k).unwrap().0.abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

fn orders(v: &[f64]) -> Vec<f64> {
    v.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

#[test]
fn lemma31_converges_on_every_backend() {
    for name in ["torus-heat-baseline", "sphere-heat", "conformal-heat", "torus-log-p03", "sphere-power-m1-2"] {
        let v = lemma31_ladder(&load(name));
        let o = orders(&v);
        assert!(*o.last().unwrap() >= 1.8, "{name}: {v:?} {o:?}");
    }
}

#[test]
fn lemma31_absolute_residual_small_mode() {
    // u0 = 2 + 0.05 cos(2 pi x) on the flat torus, N = 256, samples one
    // solver step apart around t = 0.02.
    let backend = Backend::flat_torus(1.0, 1.0, 256, 256).unwrap();
    let probe = evolve_metric(backend.clone(), &[0.01, 0.02], 0.05, None).unwrap();
    let d = 0.5 * stability_cap(&probe, 0.0, true).unwrap();
    let traj = evolve_metric(backend.clone(), &[0.02 - d, 0.02, 0.02 + d], 0.05, None).unwrap();
    let u0 = backend.field_from_fn(|x, _| 2.0 + 0.05 * (2.0 * PI * x).cos());
    let u = solve_forward(EquationKind::Heat, &u0, &traj, None).unwrap();
    let r = check_lemma31(&u, &traj, 1e-3).unwrap();
    assert_eq!(r.status, CheckStatus::Pass, "{}", r.verdict());
}

#[test]
fn monotonicity_direction_follows_h() {
    let traj = evolve_metric(Backend::flat_torus(1.0, 1.0, 32, 8).unwrap(), &uniform_times(0.01, 0.05, 16), 0.06, None)
        .unwrap();
    let mu = uniform_measure(&traj);
    let u0 = traj.backend().field_from_fn(|x, _| 2.0 + 0.5 * (2.0 * PI * x).cos());
    let u = solve_forward(EquationKind::Heat, &u0, &traj, None).unwrap();
    let reg = fit_minimal_constants(&[&u], &traj, &ConstantRegistry::for_trace(&u, &traj).unwrap())
        .unwrap()
        .with_safety(1.1);
    for (c, dir) in [(-1.0, Monotonicity::Increasing), (1.0, Monotonicity::Decreasing)] {
        let ft = compute_u_trace(&u, &mu, &WeightFunction::Constant { c }, &reg, CorrectionKind::Psi).unwrap();
        assert!(check_monotonicity(&ft, dir, 1.0).unwrap().passed());
        let wrong = match dir {
            Monotonicity::Increasing => Monotonicity::Decreasing,
            Monotonicity::Decreasing => Monotonicity::Increasing,
        };
        assert_eq!(check_monotonicity(&ft, wrong, 1.0).unwrap().status, CheckStatus::Fail);
    }
}

#[test]
fn harnack_on_constant_heat_data_has_zero_margin() {
    let traj = evolve_metric(Backend::flat_torus(1.0, 1.0, 16, 16).unwrap(), &uniform_times(0.01, 0.05, 8), 0.06, None)
        .unwrap();
    let mu = uniform_measure(&traj);
    let u = solve_forward(EquationKind::Heat, &traj.backend().constant_field(1.5), &traj, None).unwrap();
    let reg = ConstantRegistry::for_trace(&u, &traj).unwrap();
    let ft = compute_u_trace(&u, &mu, &WeightFunction::Constant { c: -1.0 }, &reg, CorrectionKind::Psi).unwrap();
    let r = check_harnack(&ft, HarnackVariant::Cor13, 1.0).unwrap();
    assert!(r.passed() && r.margin.abs() < 1e-12, "{}", r.verdict());
    assert!(check_harnack(&ft, HarnackVariant::Cor39i, 1.0).is_err());
}

#[test]
fn harnack_with_negative_lambda_fails_on_constant_data() {
    // u' = -u^2 from u = 1: I(t1) / I(t) = ((1 + t) / (1 + t1))^2 < 1 while
    // U = 0 and lambda_1 = 0 give a right-hand side of I(t).
    let traj = evolve_metric(Backend::flat_torus(1.0, 1.0, 16, 16).unwrap(), &uniform_times(0.01, 0.05, 8), 0.06, None)
        .unwrap();
    let mu = uniform_measure(&traj);
    let eq = EquationKind::PowerNonlinear { lambda: -1.0, p: 2.0 };
    let u = solve_forward(eq, &traj.backend().constant_field(1.0), &traj, None).unwrap();
    let reg = ConstantRegistry::for_trace(&u, &traj).unwrap();
    let ft = compute_u_trace(&u, &mu, &WeightFunction::Constant { c: -1.0 }, &reg, CorrectionKind::Psi).unwrap();
    let r = check_harnack(&ft, HarnackVariant::Cor13, 1.0).unwrap();
    let expect = 1.0 - ((1.0 + 0.05) / (1.0 + 0.01f64)).powi(2);
    assert_eq!(r.status, CheckStatus::Fail);
    assert!((r.margin - expect).abs() < 1e-8, "{} vs {expect}", r.margin);
}

#[test]
fn log_branches_are_reported_separately() {
    for (name, variant) in [("torus-log-branch-i", HarnackVariant::Cor39i), ("torus-log-branch-ii", HarnackVariant::Cor39ii)] {
        let out = run_suite(&load(name).with_param("N", 32.0).unwrap(), 1.0).unwrap();
        let r = out.report(variant.id()).unwrap_or_else(|| panic!("{name} lacks {}", variant.id()));
        assert!(r.passed(), "{}", r.verdict());
        let other = if variant == HarnackVariant::Cor39i { HarnackVariant::Cor39ii } else { HarnackVariant::Cor39i };
        assert!(out.report(other.id()).is_none());
        let ex = check_harnack(&out.frequency, other, 1.0).unwrap();
        assert_eq!(ex.status, CheckStatus::Inconclusive);
    }
}

#[test]
fn max_principle_holds_for_heat_and_log() {
    for name in ["torus-heat-baseline", "sphere-log-m03", "torus-log-p05"] {
        let (_, u) = solve_flow_and_pde(&load(name), 2).unwrap();
        let r = check_max_principle(&u, 1e-6);
        assert!(r.passed(), "{name}: {}", r.verdict());
    }
}

#[test]
fn fitted_estimates_pass_and_zeroed_b4_fails() {
    let cfg = load("torus-log-p03").with_param("N", 32.0).unwrap();
    let (traj, u) = solve_flow_and_pde(&cfg, 1).unwrap();
    let template = ConstantRegistry::for_trace(&u, &traj).unwrap();
    let reg = fit_minimal_constants(&[&u], &traj, &template).unwrap().with_safety(1.1);
    for lemma in [EstimateLemma::L32, EstimateLemma::L34, EstimateLemma::L35, EstimateLemma::L37] {
        let r = check_gradient_estimate(lemma, &[&u], &traj, &reg, 1.0).unwrap();
        assert!(r.passed(), "{}", r.verdict());
        assert!(r.fitted_constant.unwrap() <= lemma.constant_value(&reg));
    }
    let l34 = check_gradient_estimate(EstimateLemma::L34, &[&u], &traj, &reg, 1.0).unwrap();
    assert!(l34.notes.iter().any(|n| n.contains("2 B1_fit^2 F^2")));
    let mut broken = reg.clone();
    broken.zero_b4 = true;
    let r = check_gradient_estimate(EstimateLemma::L35, &[&u], &traj, &broken, 1.0).unwrap();
    assert_eq!(r.status, CheckStatus::Fail);
    assert!(r.margin < 0.0);
    // An estimate that does not apply is inconclusive.
    let r = check_gradient_estimate(EstimateLemma::L41, &[&u], &traj, &reg, 1.0).unwrap();
    assert_eq!(r.status, CheckStatus::Inconclusive);
}

#[test]
fn zeroed_c3_fails_on_curved_background() {
    let mut cfg = load("sphere-heat");
    cfg.registry.zero_c3 = true;
    let out = run_suite(&cfg, 1.0).unwrap();
    assert_eq!(out.report("L42").unwrap().status, CheckStatus::Fail);
    assert_eq!(out.status(), CheckStatus::Fail);
}

#[test]
fn frequency_identities_converge() {
    let mut cfg = load("torus-heat-bump");
    cfg.terminal = parafreq::scenario::TerminalSpec::Bump { center: [0.3, 0.6], width: 0.2 };
    let h = cfg.weight.clone();
    let res: Vec<(f64, f64)> = LADDER
        .iter()
        .map(|&f| {
            let lv = build_level(&cfg, f).unwrap();
            let ((di, _), (dd, _)) = identity_residuals(&lv.u, &lv.mu, &h).unwrap();
            (di, dd)
        })
        .collect();
    let di: Vec<f64> = res.iter().map(|r| r.0).collect();
    let dd: Vec<f64> = res.iter().map(|r| r.1).collect();
    for v in [&di, &dd] {
        assert!(v[2] < 1e-12 || *orders(v).last().unwrap() >= 1.8, "{v:?}");
    }
}
