//! Closed-form oracles for the discrete operators.

use std::f64::consts::PI;

use parafreq::{Backend, MetricData, MetricSnapshot, ScalarField};

fn flat(n: usize) -> MetricSnapshot {
    let b = Backend::flat_torus(1.0, 1.0, n, n).unwrap();
    MetricSnapshot::new(b.clone(), 0.0, b.initial_metric()).unwrap()
}

fn sphere(dim: usize, r: f64, n: usize) -> MetricSnapshot {
    let b = Backend::sphere(dim, r, n).unwrap();
    MetricSnapshot::new(b, 0.0, MetricData::Round { radius: r }).unwrap()
}

fn max_err(a: &ScalarField, b: &ScalarField) -> f64 {
    a.max_abs_diff(b).unwrap()
}

fn orders(errs: &[f64]) -> Vec<f64> {
    errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

#[test]
fn flat_laplacian_of_fourier_mode() {
    let errs: Vec<f64> = [64, 128, 256]
        .iter()
        .map(|&n| {
            let m = flat(n);
            let b = m.backend();
            let u = b.field_from_fn(|x, _| (2.0 * PI * x).cos());
            let exact = b.field_from_fn(|x, _| -4.0 * PI * PI * (2.0 * PI * x).cos());
            max_err(&m.laplacian(&u).unwrap(), &exact)
        })
        .collect();
    assert!(errs[2] < 1e-2 * 4.0 * PI * PI, "{errs:?}");
    for o in orders(&errs) {
        assert!(o > 1.9, "{errs:?}");
    }
}

#[test]
fn flat_gradient_and_hessian_of_fourier_mode() {
    let mut ge = Vec::new();
    let mut he = Vec::new();
    for n in [64, 128, 256] {
        let m = flat(n);
        let b = m.backend();
        let u = b.field_from_fn(|x, _| (2.0 * PI * x).sin());
        let g = b.field_from_fn(|x, _| 4.0 * PI * PI * (2.0 * PI * x).cos().powi(2));
        ge.push(max_err(&m.gradient_norm_sq(&u).unwrap(), &g));
        let v = b.field_from_fn(|x, _| (2.0 * PI * x).cos());
        let h = b.field_from_fn(|x, _| 16.0 * PI.powi(4) * (2.0 * PI * x).cos().powi(2));
        he.push(max_err(&m.hessian_norm_sq(&v).unwrap(), &h));
    }
    for o in orders(&ge).into_iter().chain(orders(&he)) {
        assert!(o > 1.8, "{ge:?} {he:?}");
    }
}

#[test]
fn sphere_first_harmonic() {
    // u = cos(theta): Lap u = -n u / r^2, |grad u|^2 = sin^2 / r^2.
    for (dim, r) in [(2usize, 1.0), (2, 2.0), (3, 1.5)] {
        let mut le = Vec::new();
        let mut ge = Vec::new();
        for n in [64, 128, 256] {
            let m = sphere(dim, r, n);
            let b = m.backend();
            let u = b.field_from_fn(|t, _| t.cos());
            let lap = b.field_from_fn(|t, _| -(dim as f64) * t.cos() / (r * r));
            let g = b.field_from_fn(|t, _| t.sin().powi(2) / (r * r));
            le.push(max_err(&m.laplacian(&u).unwrap(), &lap));
            ge.push(max_err(&m.gradient_norm_sq(&u).unwrap(), &g));
        }
        assert!(le[2] < 1e-3 && ge[2] < 1e-3, "{le:?} {ge:?}");
        for o in orders(&le).into_iter().chain(orders(&ge)) {
            assert!(o > 1.8, "dim {dim}: {le:?} {ge:?}");
        }
    }
}

#[test]
fn sphere_area() {
    let m = sphere(2, 1.0, 256);
    let one = m.backend().constant_field(1.0);
    assert!((m.integrate(&one, None).unwrap() - 4.0 * PI).abs() < 1e-6);
    let m3 = sphere(3, 2.0, 64);
    let one = m3.backend().constant_field(1.0);
    let exact = 2.0 * PI * PI * 8.0;
    assert!((m3.integrate(&one, None).unwrap() - exact).abs() < 1e-10 * exact);
}

#[test]
fn trace_inequality_on_sphere_harmonics() {
    let m = sphere(3, 1.0, 128);
    let b = m.backend();
    let u = b.field_from_fn(|t, _| 1.0 + 0.3 * t.cos() + 0.2 * (3.0 * t.cos().powi(2) - 1.0));
    let jets = m.jets(&u).unwrap();
    for j in jets {
        assert!(j.hessian_norm_sq() + 1e-12 >= j.laplacian().powi(2) / 3.0);
    }
}

#[test]
fn green_identity_holds_to_rounding() {
    let snaps = vec![
        flat(32),
        sphere(2, 1.3, 64),
        sphere(4, 0.7, 64),
        {
            let b = Backend::conformal_torus(1.0, 2.0, 32, 64, |x, y| {
                0.2 * (2.0 * PI * x).sin() * (PI * y).cos()
            })
            .unwrap();
            MetricSnapshot::new(b.clone(), 0.0, b.initial_metric()).unwrap()
        },
    ];
    for m in snaps {
        let b = m.backend();
        let u = b.field_from_fn(|x, y| (x * 3.0).sin() + (2.0 * PI * y).cos());
        let v = b.field_from_fn(|x, y| (2.0 * PI * x).cos() * (1.0 + (2.0 * PI * y).sin()));
        let lhs = m.integrate(&u.zip_map(&m.laplacian(&v).unwrap(), |a, b| a * b).unwrap(), None).unwrap();
        let rhs = -m.integrate(&m.gradient_dot(&u, &v).unwrap(), None).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{lhs} {rhs}");
    }
}

#[test]
fn conformal_laplacian_scales_flat_one() {
    let phi = |x: f64, y: f64| 0.1 * (2.0 * PI * x).cos() + 0.05 * (2.0 * PI * y).sin();
    let b = Backend::conformal_torus(1.0, 1.0, 64, 64, phi).unwrap();
    let m = MetricSnapshot::new(b.clone(), 0.0, b.initial_metric()).unwrap();
    let f = flat(64);
    let u = b.field_from_fn(|x, y| (2.0 * PI * (x + y)).sin());
    let lc = m.laplacian(&u).unwrap();
    let lf = f.laplacian(&u).unwrap();
    for j in 0..u.len() {
        let (x, y) = b.cell_coords(j);
        let want = (-2.0 * phi(x, y)).exp() * lf.values[j];
        assert!((lc.values[j] - want).abs() < 1e-9 * (1.0 + want.abs()));
    }
}

#[test]
fn conformal_hessian_converges() {
    // phi = log scale, u = x: Hess u = -Gamma^k_ij du_k, so the
    // orthonormal-frame norm is exp(-4 phi) * 2 |grad phi|^2 (for u_x = 1).
    let c = 0.1;
    let phi = move |x: f64, _y: f64| c * (2.0 * PI * x).sin();
    let mut errs = Vec::new();
    for n in [32, 64, 128] {
        let b = Backend::conformal_torus(1.0, 1.0, n, n, phi).unwrap();
        let m = MetricSnapshot::new(b.clone(), 0.0, b.initial_metric()).unwrap();
        let u = b.field_from_fn(|_, y| (2.0 * PI * y).sin());
        // Hxx = u_xx - phi_x u_x + phi_y u_y = 0, Hyy = u_yy - phi_y u_y + phi_x u_x = u_yy,
        // Hxy = -(phi_y u_x + phi_x u_y) = -phi_x u_y.
        let exact = b.field_from_fn(|x, y| {
            let px = 2.0 * PI * c * (2.0 * PI * x).cos();
            let uy = 2.0 * PI * (2.0 * PI * y).cos();
            let uyy = -4.0 * PI * PI * (2.0 * PI * y).sin();
            let e4 = (-4.0 * phi(x, y)).exp();
            e4 * (uyy * uyy + 2.0 * (px * uy).powi(2))
        });
        errs.push(max_err(&m.hessian_norm_sq(&u).unwrap(), &exact));
    }
    for o in orders(&errs) {
        assert!(o > 1.8, "{errs:?}");
    }
}

#[test]
fn diameters() {
    assert!((flat(16).diameter() - 0.5 * 2f64.sqrt()).abs() < 1e-14);
    assert!((sphere(3, 2.0, 16).diameter() - 2.0 * PI).abs() < 1e-14);
    // Brute force over lattice translates for the flat torus.
    let mut best: f64 = 0.0;
    for i in 0..=100 {
        for j in 0..=100 {
            let (x, y) = (i as f64 / 100.0, j as f64 / 100.0);
            let mut d = f64::INFINITY;
            for a in -1..=1 {
                for b in -1..=1 {
                    d = d.min(((x - a as f64).powi(2) + (y - b as f64).powi(2)).sqrt());
                }
            }
            best = best.max(d);
        }
    }
    assert!((flat(16).diameter() - best).abs() < 1e-12);
}
