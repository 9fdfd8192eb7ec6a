//! Constants of the gradient estimates and correction factors.
//!
//! Four constants are free (`B1`, `B(n)`, `C1`, `C(n)`) together with the
//! contraction constant `c(n)`; they are configured or fitted. Everything
//! else is derived on access, so a registry can never hold a stale derived
//! value.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{curvature_envelope, FlowTrajectory};
use crate::pde::{EquationKind, ScalarFieldTrace};

pub const DEFAULT_SAFETY: f64 = 1.1;
pub const DEFAULT_CONTRACTION: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Configured,
    Fitted,
    Derived,
    /// Read off the trajectory or the solution (curvature, diameter, bounds).
    Measured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum B4Mode {
    #[default]
    Full,
    /// The `rho -> infinity` limit `B(n) K + 16 n |a|`.
    RhoInfinite,
}

/// Where the `B4 / (eta e^{a.})` term of `E` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EVariant {
    /// At the integration variable `s`.
    #[default]
    Integrand,
    /// Frozen at the evaluation time `t`.
    Frozen,
}

/// Where a fitted constant is attained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitAudit {
    /// Minimal constant before the safety multiplier.
    pub value: f64,
    pub t: f64,
    pub cell: usize,
    /// Which estimate attained it.
    pub source: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantRegistry {
    pub n: usize,
    pub k1: f64,
    pub k2: f64,
    pub rho: f64,
    /// Final time `T` of the flow.
    pub final_time: f64,
    pub eta: f64,
    pub big_a: f64,
    pub a: f64,
    pub lambda: f64,
    pub p: f64,
    /// `c(n)`.
    pub contraction: f64,
    pub b1: f64,
    pub b_n: f64,
    pub c1: f64,
    /// `C(n)`.
    pub c_n: f64,
    pub b4_mode: B4Mode,
    pub e_variant: EVariant,
    /// Multiplier applied to the fitted constants (1 when unfitted).
    pub safety: f64,
    /// Falsifiability probes: force `B4` or `C3` to zero.
    pub zero_b4: bool,
    pub zero_c3: bool,
    pub provenance: BTreeMap<String, Provenance>,
    pub audit: BTreeMap<String, FitAudit>,
    /// `B3` from a direct scan of `|grad u|^2 / ((1 + e^{at} A)^2 + u^2)`;
    /// kept for the relation check against `B1`.
    pub b3_scan: Option<FitAudit>,
}

/// Names of the free constants, in serialization order.
pub const FREE_CONSTANTS: [&str; 5] = ["B1", "B(n)", "C1", "C(n)", "c(n)"];

impl ConstantRegistry {
    /// Registry for a solved trace on `traj`. `eta` and `A` come from the
    /// initial data for the log equation and from all samples otherwise.
    /// Free constants start at 1 (configured); `c(n)` at 2.
    pub fn for_trace(trace: &ScalarFieldTrace, traj: &FlowTrajectory) -> Result<Self> {
        let eq = trace
            .equation()
            .ok_or_else(|| Error::Invalid("registry needs a forward trace".into()))?;
        let (eta, big_a) = match eq {
            EquationKind::LogNonlinear { .. } => trace.initial_bounds,
            _ => trace.sample_bounds(),
        };
        let env = curvature_envelope(traj);
        let (a, lambda, p) = match eq {
            EquationKind::Heat => (0.0, 0.0, 1.0),
            EquationKind::LogNonlinear { a } => (a, 0.0, 1.0),
            EquationKind::PowerNonlinear { lambda, p } => (0.0, lambda, p),
        };
        let mut provenance = BTreeMap::new();
        for k in ["K1", "K2", "rho", "T", "eta", "A"] {
            provenance.insert(k.to_string(), Provenance::Measured);
        }
        for k in ["a", "lambda", "p"] {
            provenance.insert(k.to_string(), Provenance::Configured);
        }
        for k in FREE_CONSTANTS {
            provenance.insert(k.to_string(), Provenance::Configured);
        }
        for k in ["B2(t)", "B3", "B4", "X", "alpha(t)", "C2(t)", "C3", "N(t)", "P", "lambda1", "Kbar"] {
            provenance.insert(k.to_string(), Provenance::Derived);
        }
        Ok(ConstantRegistry {
            n: traj.dim(),
            k1: env.k1,
            k2: env.k2,
            rho: env.rho_min,
            final_time: traj.final_time,
            eta,
            big_a,
            a,
            lambda,
            p,
            contraction: DEFAULT_CONTRACTION,
            b1: 1.0,
            b_n: 1.0,
            c1: 1.0,
            c_n: 1.0,
            b4_mode: B4Mode::Full,
            e_variant: EVariant::Integrand,
            safety: 1.0,
            zero_b4: false,
            zero_c3: false,
            provenance,
            audit: BTreeMap::new(),
            b3_scan: None,
        })
    }

    /// Sets a free constant by name (`B1`, `B(n)`, `C1`, `C(n)`, `c(n)`).
    pub fn set(&mut self, name: &str, value: f64, provenance: Provenance) -> Result<()> {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::config(
                format!("registry.overrides.{name}"),
                format!("must be finite and >= 0, got {value}"),
            ));
        }
        let slot = match name {
            "B1" => &mut self.b1,
            "B(n)" | "Bn" => &mut self.b_n,
            "C1" => &mut self.c1,
            "C(n)" | "Cn" => &mut self.c_n,
            "c(n)" | "cn" => &mut self.contraction,
            _ => {
                return Err(Error::config(
                    format!("registry.overrides.{name}"),
                    "unknown constant (expected B1, Bn, C1, Cn or cn)",
                ))
            }
        };
        *slot = value;
        let key = FREE_CONSTANTS
            .iter()
            .find(|k| k.replace(['(', ')'], "") == name.replace(['(', ')'], ""))
            .unwrap();
        self.provenance.insert(key.to_string(), provenance);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "B1" => Some(self.b1),
            "B(n)" | "Bn" => Some(self.b_n),
            "C1" => Some(self.c1),
            "C(n)" | "Cn" => Some(self.c_n),
            "c(n)" | "cn" => Some(self.contraction),
            _ => None,
        }
    }

    /// Fitted constants multiplied by `safety`.
    pub fn with_safety(&self, safety: f64) -> ConstantRegistry {
        let mut r = self.clone();
        for name in ["B1", "B(n)", "C1", "C(n)"] {
            if r.provenance.get(name) == Some(&Provenance::Fitted) {
                let v = r.get(name).unwrap() * safety;
                r.set(name, v, Provenance::Fitted).unwrap();
            }
        }
        r.safety = self.safety * safety;
        r
    }

    pub fn k_bar(&self) -> f64 {
        self.k1.max(self.k2)
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda.max(0.0)
    }

    /// `X = sup_{s in [0, T]} max{a (1 + e^{as} ln A1), 0}` with `ln A1 = A`.
    /// The expression is monotone in `s`, so the endpoints suffice.
    pub fn x_aux(&self) -> f64 {
        let at = |s: f64| self.a * (1.0 + (self.a * s).exp() * self.big_a);
        at(0.0).max(at(self.final_time)).max(0.0)
    }

    /// `sqrt(Kbar) + 1/rho + 1/sqrt(T) + sqrt(X)`.
    pub fn envelope_factor(&self) -> f64 {
        self.k_bar().sqrt() + 1.0 / self.rho + 1.0 / self.final_time.sqrt() + self.x_aux().sqrt()
    }

    /// `B3 = 2 B1 F^2`.
    pub fn b3(&self) -> f64 {
        2.0 * self.b1 * self.envelope_factor().powi(2)
    }

    /// `B2(t) = B3 (1 + e^{at} A)^2`.
    pub fn b2(&self, t: f64) -> f64 {
        self.b3() * (1.0 + (self.a * t).exp() * self.big_a).powi(2)
    }

    /// Geometric factor `G` with `B4 = B(n) G + 16 n |a|`.
    pub fn b4_geometry(&self) -> f64 {
        let k = self.k_bar();
        match self.b4_mode {
            B4Mode::Full => 1.0 / (self.rho * self.rho) + k.sqrt() / self.rho + k,
            B4Mode::RhoInfinite => k,
        }
    }

    pub fn b4(&self) -> f64 {
        if self.zero_b4 {
            return 0.0;
        }
        self.b_n * self.b4_geometry() + 16.0 * self.n as f64 * self.a.abs()
    }

    /// `alpha(t) = max{0, 2 - eta e^{at}}`.
    pub fn alpha_log(&self, t: f64) -> f64 {
        (2.0 - self.eta * (self.a * t).exp()).max(0.0)
    }

    /// `B~(s) = B2(s) / (eta^2 e^{2as}) + B3`.
    pub fn b_tilde(&self, s: f64) -> f64 {
        self.b2(s) / (self.eta * self.eta * (2.0 * self.a * s).exp()) + self.b3()
    }

    /// `alpha' = max{p lambda A^{p-1}, 0}`.
    pub fn alpha_power(&self) -> f64 {
        (self.p * self.lambda * self.big_a.powf(self.p - 1.0)).max(0.0)
    }

    /// `C2(t) = C1 (1/rho + 1/sqrt(t) + sqrt(Kbar) + sqrt(alpha'))`.
    pub fn c2(&self, t: f64) -> f64 {
        self.c1 * (1.0 / self.rho + 1.0 / t.sqrt() + self.k_bar().sqrt() + self.alpha_power().sqrt())
    }

    /// Denominator factor of `C3 = C(n) (1 + K1 + Kbar + p^2 lambda A^{p-1})`.
    pub fn c3_factor(&self) -> f64 {
        1.0 + self.k1 + self.k_bar() + self.p * self.p * self.lambda * self.big_a.powf(self.p - 1.0)
    }

    pub fn c3(&self) -> f64 {
        if self.zero_c3 {
            return 0.0;
        }
        self.c_n * self.c3_factor()
    }

    /// `N(t) = C2(t) (1 + ln(A / eta))`.
    pub fn n_of(&self, t: f64) -> f64 {
        self.c2(t) * (1.0 + (self.big_a / self.eta).ln())
    }

    /// `P = p C3 + lambda1 A^{p-1}`.
    pub fn p_const(&self) -> f64 {
        self.p * self.c3() + self.lambda1() * self.big_a.powf(self.p - 1.0)
    }

    /// JSON document: inputs, free constants, time-independent derived
    /// constants, provenance and fit audit.
    pub fn to_json(&self) -> Result<String> {
        let derived = serde_json::json!({
            "Kbar": self.k_bar(),
            "lambda1": self.lambda1(),
            "X": self.x_aux(),
            "envelope_factor": self.envelope_factor(),
            "B3": self.b3(),
            "B4": self.b4(),
            "C3": self.c3(),
            "P": self.p_const(),
            "alpha_prime": self.alpha_power(),
        });
        let mut doc = serde_json::to_value(self)?;
        doc["derived"] = derived;
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample() -> ConstantRegistry {
        ConstantRegistry {
            n: 2,
            k1: 0.5,
            k2: 2.0,
            rho: 2.0,
            final_time: 0.25,
            eta: 0.5,
            big_a: 1.5,
            a: 0.3,
            lambda: -1.0,
            p: 2.0,
            contraction: 2.0,
            b1: 0.7,
            b_n: 1.3,
            c1: 0.4,
            c_n: 0.2,
            b4_mode: B4Mode::Full,
            e_variant: EVariant::Integrand,
            safety: 1.0,
            zero_b4: false,
            zero_c3: false,
            provenance: BTreeMap::new(),
            audit: BTreeMap::new(),
            b3_scan: None,
        }
    }

    #[test]
    fn derived_formulas() {
        let r = sample();
        let x = 0.3 * (1.0 + (0.3f64 * 0.25).exp() * 1.5);
        assert!((r.x_aux() - x).abs() < 1e-15);
        let f = 2f64.sqrt() + 0.5 + 2.0 + x.sqrt();
        assert!((r.b3() - 2.0 * 0.7 * f * f).abs() < 1e-12);
        let b4 = 1.3 * (0.25 + 2f64.sqrt() / 2.0 + 2.0) + 32.0 * 0.3;
        assert!((r.b4() - b4).abs() < 1e-12);
        assert!((r.c3() - 0.2 * (1.0 + 0.5 + 2.0 - 4.0 * 1.5)).abs() < 1e-15);
        assert_eq!(r.alpha_power(), 0.0);
        assert!((r.p_const() - 2.0 * r.c3()).abs() < 1e-15);
        let mut z = r.clone();
        z.zero_b4 = true;
        z.zero_c3 = true;
        assert_eq!((z.b4(), z.c3()), (0.0, 0.0));
        z.b4_mode = B4Mode::RhoInfinite;
        z.zero_b4 = false;
        assert!((z.b4() - (1.3 * 2.0 + 32.0 * 0.3)).abs() < 1e-12);
    }

    #[test]
    fn negative_a_has_zero_x() {
        let mut r = sample();
        r.a = -0.3;
        assert_eq!(r.x_aux(), 0.0);
    }

    #[test]
    fn set_get_and_safety() {
        let mut r = sample();
        r.set("Bn", 2.0, Provenance::Fitted).unwrap();
        r.set("C1", 3.0, Provenance::Configured).unwrap();
        assert!(r.set("Q", 1.0, Provenance::Fitted).is_err());
        assert!(r.set("B1", -1.0, Provenance::Fitted).is_err());
        let s = r.with_safety(1.1);
        assert!((s.b_n - 2.2).abs() < 1e-15);
        assert_eq!(s.c1, 3.0);
        assert_eq!(s.provenance["B(n)"], Provenance::Fitted);
        assert!(s.to_json().unwrap().contains("\"B4\""));
    }
}
