//! Piecewise Duffing example `x'' + x (x - a(y)) (1 - x) = 0` with
//! `a = a_-(y)` below the switching level `x = c` and `a = a_+(y)` above it.
//!
//! Closed-form half-orbits, the persistence function `D(y)` and the
//! feasibility window for `c`.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::melnikov::MelnikovSetup;
use crate::params::ParamFamily;
use crate::poly::{PolyField, PolyTerm, Polynomial};
use crate::system::{ConstantSlow, PiecewiseSlowFastSystem, SwitchingSpec, VectorField};
use crate::trajectory::OrbitSetup;
use crate::verifier::ShootingOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DuffingParams {
    pub a_plus: ParamFamily,
    pub a_minus: ParamFamily,
    pub c: f64,
    /// Working interval for `y`.
    #[serde(default = "default_y_range")]
    pub y_range: (f64, f64),
}

fn default_y_range() -> (f64, f64) {
    (-1.0, 1.0)
}

impl DuffingParams {
    /// `a_+ = 1/4 + 0.05 tanh y`, `a_- = a_+ + 1/2`, `c = 1/2`. Simple zero of `D` at `y = 0`.
    pub fn demo() -> Self {
        let a_plus = ParamFamily::tanh(0.25, 0.05, 0.0);
        Self {
            a_minus: a_plus.clone().shifted_by(0.5),
            a_plus,
            c: 0.5,
            y_range: default_y_range(),
        }
    }

    /// Constant `a_+ = 1/4`, `a_- = 3/4`: `D` vanishes identically at `c = 1/2`.
    pub fn degenerate() -> Self {
        Self {
            a_plus: ParamFamily::constant(0.25),
            a_minus: ParamFamily::constant(0.75),
            c: 0.5,
            y_range: default_y_range(),
        }
    }

    /// Sine-modulated coefficients with a simple zero of `D` near `y = 0.837`.
    pub fn sin_family() -> Self {
        Self {
            a_plus: ParamFamily::sin(0.25, 0.04, 0.3),
            a_minus: ParamFamily::sin(0.8, 0.02, 0.3),
            c: 0.45,
            y_range: default_y_range(),
        }
    }

    pub fn a_plus_at(&self, y: f64) -> f64 {
        self.a_plus.value_at(y)
    }

    pub fn a_minus_at(&self, y: f64) -> f64 {
        self.a_minus.value_at(y)
    }

    /// `inf a_-` over the working interval.
    pub fn a_min(&self) -> f64 {
        self.a_minus.range_on(self.y_range.0, self.y_range.1).0
    }

    /// `sup a_+` over the working interval.
    pub fn a_max(&self) -> f64 {
        self.a_plus.range_on(self.y_range.0, self.y_range.1).1
    }

    /// Coefficients in `(0, 1)` and `c` in `(0, 1)`.
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::DomainError(format!(
                "c = {} must lie in (0, 1)",
                self.c
            )));
        }
        if !(self.y_range.0 < self.y_range.1) {
            return Err(Error::DomainError("empty y range".into()));
        }
        for (name, fam) in [("a_plus", &self.a_plus), ("a_minus", &self.a_minus)] {
            let (lo, hi) = fam.range_on(self.y_range.0, self.y_range.1);
            if !(lo > 0.0 && hi < 1.0) {
                return Err(Error::DomainError(format!(
                    "{name} ranges over [{lo}, {hi}], outside (0, 1)"
                )));
            }
        }
        Ok(())
    }

    /// Window for `c` from the existence conditions of both half-orbits.
    pub fn window(&self) -> Result<FeasibilityWindow> {
        feasibility_window(self.a_min(), self.a_max())
    }

    pub fn is_feasible(&self) -> Result<bool> {
        Ok(self.window()?.contains(self.c))
    }

    pub fn d_of_y(&self, y: f64) -> f64 {
        persistence_d(self.a_plus_at(y), self.a_minus_at(y), self.c)
    }

    pub fn d_prime(&self, y: f64) -> f64 {
        let c = self.c;
        let dp = self.a_plus.derivative_at(y);
        let dm = self.a_minus.derivative_at(y);
        c * c * (2.0 * c - 3.0) * (dp - dm) + dp
    }

    /// `-a_-'(y) int_0^c u(u-1) du - a_+'(y) int_c^1 u(u-1) du`, equal to `D'(y)/6`.
    pub fn analytic_melnikov(&self, y: f64) -> f64 {
        let c = self.c;
        -self.a_minus.derivative_at(y) * int_u_um1(0.0, c)
            - self.a_plus.derivative_at(y) * int_u_um1(c, 1.0)
    }

    /// Minus half-orbit at `(t <= 0, y)`.
    pub fn u_minus(&self, t: f64, y: f64) -> Result<(f64, f64)> {
        u_minus_closed(self.a_minus_at(y), self.c, t)
    }

    /// Plus half-orbit at `(t >= 0, y)`.
    pub fn u_plus(&self, t: f64, y: f64) -> Result<(f64, f64)> {
        u_plus_closed(self.a_plus_at(y), self.c, t)
    }

    /// `x' = (x2, x1^3 - (1 + a) x1^2 + a x1)`, `h = x1`, one threshold at `c`, `g = 1`.
    pub fn as_system(&self) -> PiecewiseSlowFastSystem {
        let field = |a: &ParamFamily| -> Arc<dyn VectorField> {
            let t = |coeff: f64, params: Vec<ParamFamily>, x: [u32; 2]| PolyTerm {
                coeff,
                params,
                x_exp: x.to_vec(),
                y_exp: vec![0],
            };
            Arc::new(PolyField::new(
                vec![
                    Polynomial::new(vec![t(1.0, vec![], [0, 1])]),
                    Polynomial::new(vec![
                        t(1.0, vec![], [3, 0]),
                        t(-1.0, vec![], [2, 0]),
                        t(-1.0, vec![a.clone()], [2, 0]),
                        t(1.0, vec![a.clone()], [1, 0]),
                    ]),
                ],
                1,
            ))
        };
        let h = Polynomial::new(vec![PolyTerm {
            coeff: 1.0,
            params: vec![],
            x_exp: vec![1, 0],
            y_exp: vec![0],
        }]);
        let switching = SwitchingSpec::new(Arc::new(h), vec![self.c], 1e-6, 1e-12)
            .expect("single finite threshold");
        PiecewiseSlowFastSystem::new(
            2,
            1,
            switching,
            vec![field(&self.a_minus), field(&self.a_plus)],
            Arc::new(ConstantSlow(DVector::from_element(1, 1.0))),
        )
        .expect("two regions for one threshold")
        .with_working_box(vec![(-0.5, 1.5), (-1.0, 1.0)])
        .expect("ordered box")
    }

    /// Orbit construction anchored on the switching line `x1 = c`.
    pub fn orbit_setup(&self) -> OrbitSetup {
        OrbitSetup::new(
            self.c,
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        )
    }

    /// Melnikov setup searching `y_0` on the working interval.
    pub fn melnikov_setup(&self) -> MelnikovSetup {
        let mut s = MelnikovSetup::new(self.orbit_setup());
        s.y_range = Some(self.y_range);
        s
    }

    /// Shooting restricted to the working interval.
    pub fn shooting_options(&self) -> ShootingOptions {
        let mut s = ShootingOptions::new(self.orbit_setup());
        s.y_bounds = Some(vec![self.y_range]);
        s
    }
}

/// `(mu1, mu2)` of the closed-form minus orbit. At `a = 1`, `mu1 = 1/c - 2/3`;
/// some texts attach that value to `mu2`, with the labels swapped.
pub fn mu_coeffs(a: f64, c: f64) -> Result<(f64, f64)> {
    let radicand = 3.0 * c * c - 4.0 * (a + 1.0) * c + 6.0 * a;
    if radicand < 0.0 {
        return Err(Error::InfeasibleRadicand { value: radicand });
    }
    let mu1 = 1.0 / c - (1.0 + 1.0 / a) / 3.0;
    let mu2 = (radicand / (6.0 * a * c * c)).sqrt();
    Ok((mu1, mu2))
}

/// `1/u = mu1 cosh(t sqrt a) - mu2 sinh(t sqrt a) + (a + 1)/(3a)` for `t <= 0`,
/// with `u' = u sqrt(3u^2 - 4(a+1)u + 6a) / sqrt 6`.
pub fn u_minus_closed(a: f64, c: f64, t: f64) -> Result<(f64, f64)> {
    let (mu1, mu2) = mu_coeffs(a, c)?;
    let s = a.sqrt();
    let q = mu1 * (t * s).cosh() - mu2 * (t * s).sinh() + (a + 1.0) / (3.0 * a);
    let u = 1.0 / q;
    let rad = (3.0 * u * u - 4.0 * (a + 1.0) * u + 6.0 * a).max(0.0);
    Ok((u, u * rad.sqrt() / 6f64.sqrt()))
}

/// `u_+(t) = 1 - v(-t)` with `v` the minus orbit for `(1 - a, 1 - c)`.
pub fn u_plus_closed(a: f64, c: f64, t: f64) -> Result<(f64, f64)> {
    let (v, vdot) = u_minus_closed(1.0 - a, 1.0 - c, -t)?;
    Ok((1.0 - v, vdot))
}

/// `int_lo^hi u (u - a)(u - 1) du`.
pub fn quartic_integral(a: f64, lo: f64, hi: f64) -> f64 {
    let p = |u: f64| u.powi(4) / 4.0 - (a + 1.0) * u.powi(3) / 3.0 + a * u * u / 2.0;
    p(hi) - p(lo)
}

/// `int_lo^hi u (u - 1) du`.
pub fn int_u_um1(lo: f64, hi: f64) -> f64 {
    let p = |u: f64| u.powi(3) / 3.0 - u * u / 2.0;
    p(hi) - p(lo)
}

/// `D = c^2 (2c - 3)(a_+ - a_-) + a_+ - 1/2`.
pub fn persistence_d(a_plus: f64, a_minus: f64, c: f64) -> f64 {
    c * c * (2.0 * c - 3.0) * (a_plus - a_minus) + a_plus - 0.5
}

/// Admissible range for `c`, i.e. `(L/3, U/3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeasibilityWindow {
    Interval { lo: f64, hi: f64 },
    Empty,
}

impl FeasibilityWindow {
    pub fn contains(&self, c: f64) -> bool {
        match *self {
            FeasibilityWindow::Interval { lo, hi } => lo < c && c < hi,
            FeasibilityWindow::Empty => false,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, FeasibilityWindow::Empty)
    }
}

/// Bounds on `3c`: `L < 3c < U`. Each bound is active only on its side of `1/2`.
pub fn window_bounds(a_min: f64, a_max: f64) -> Result<(f64, f64)> {
    for (name, v) in [("a_min", a_min), ("a_max", a_max)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::DomainError(format!("{name} = {v} outside (0, 1)")));
        }
    }
    let upper = if a_min < 0.5 {
        2.0 * (a_min + 1.0) - (4.0 * a_min * a_min - 10.0 * a_min + 4.0).sqrt()
    } else {
        3.0
    };
    let lower = if a_max > 0.5 {
        2.0 * a_max - 1.0 + (4.0 * a_max * a_max + 2.0 * a_max - 2.0).sqrt()
    } else {
        0.0
    };
    Ok((lower, upper))
}

pub fn feasibility_window(a_min: f64, a_max: f64) -> Result<FeasibilityWindow> {
    let (lower, upper) = window_bounds(a_min, a_max)?;
    if lower >= upper {
        Ok(FeasibilityWindow::Empty)
    } else {
        Ok(FeasibilityWindow::Interval {
            lo: lower / 3.0,
            hi: upper / 3.0,
        })
    }
}

/// Nonemptiness of the window for `a_min = 1/2 - kappa`, `a_max = 1/2 + kappa`.
pub fn kappa_window(kappa: f64) -> Result<bool> {
    Ok(!feasibility_window(0.5 - kappa, 0.5 + kappa)?.is_empty())
}

/// One cell of the `(c, kappa)` map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepCell {
    pub c: f64,
    pub kappa: f64,
    pub window: FeasibilityWindow,
    pub feasible: bool,
    /// `D'(0)` for the family `a_+- = 1/2 +- kappa tanh y`.
    pub d_prime: f64,
    pub persists: bool,
}

/// Family with `a_min = 1/2 - kappa` and `a_max = 1/2 + kappa` (approached at
/// the ends of a wide `y` interval) and `D(0) = 0`.
pub fn sweep_family(c: f64, kappa: f64) -> DuffingParams {
    DuffingParams {
        a_plus: ParamFamily::tanh(0.5, kappa, 0.0),
        a_minus: ParamFamily::tanh(0.5, -kappa, 0.0),
        c,
        y_range: (-1.0, 1.0),
    }
}

pub fn sweep_cell(c: f64, kappa: f64) -> Result<SweepCell> {
    let window = feasibility_window(0.5 - kappa, 0.5 + kappa)?;
    let feasible = window.contains(c);
    let d_prime = sweep_family(c, kappa).d_prime(0.0);
    Ok(SweepCell {
        c,
        kappa,
        window,
        feasible,
        d_prime,
        persists: feasible && d_prime.abs() > 1e-8,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mu_at_one_half() {
        for &c in &[0.2, 0.5, 0.7] {
            let (mu1, mu2) = mu_coeffs(0.5, c).unwrap();
            assert!((mu1 - (1.0 / c - 1.0)).abs() < 1e-14);
            assert!((mu2 - (1.0 - c) / c).abs() < 1e-14);
        }
    }

    #[test]
    fn mu_at_three_quarters() {
        let (mu1, mu2) = mu_coeffs(0.75, 0.5).unwrap();
        assert!((mu1 - 11.0 / 9.0).abs() < 1e-14);
        assert!((mu2 - 1.247219128924647).abs() < 1e-12);
        assert!((mu2 * mu2 - mu1 * mu1 - 0.0617283950617284).abs() < 1e-12);
    }

    #[test]
    fn infeasible_radicand() {
        assert!(matches!(
            mu_coeffs(0.2, 0.9),
            Err(Error::InfeasibleRadicand { .. })
        ));
    }

    #[test]
    fn anchor_values() {
        let (u, ud) = u_minus_closed(0.75, 0.5, 0.0).unwrap();
        assert!((u - 0.5).abs() < 1e-15);
        assert!((ud - 0.5 * 1.75f64.sqrt() / 6f64.sqrt()).abs() < 1e-15);
        assert!((ud - 0.270031).abs() < 1e-6);
        let (u, ud2) = u_plus_closed(0.25, 0.5, 0.0).unwrap();
        assert!((u - 0.5).abs() < 1e-15);
        assert!((ud2 - ud).abs() < 1e-15);
    }

    #[test]
    fn d_spot_values() {
        assert!((persistence_d(0.3, 0.8, 0.5) - 0.05).abs() < 1e-15);
        assert!(persistence_d(0.25, 0.75, 0.5).abs() < 1e-15);
        // 2 a_+ = 2c^3 - 3c^2 + 1 at the zero
        let c: f64 = 0.5;
        assert!((2.0 * 0.25 - (2.0 * c.powi(3) - 3.0 * c * c + 1.0)).abs() < 1e-15);
        let half_speed_sq = quartic_integral(0.75, 0.0, 0.5);
        assert!((half_speed_sq - 0.036458333333333336).abs() < 1e-15);
        assert!((2.0 * half_speed_sq - 0.0729167).abs() < 1e-7);
    }

    #[test]
    fn demo_derivative_and_melnikov() {
        let p = DuffingParams::demo();
        assert!((p.d_prime(0.0) - 0.05).abs() < 1e-15);
        assert!((p.analytic_melnikov(0.0) - 0.05 / 6.0).abs() < 1e-15);
        assert!((int_u_um1(0.0, 0.5) + 1.0 / 12.0).abs() < 1e-15);
        assert!((int_u_um1(0.5, 1.0) + 1.0 / 12.0).abs() < 1e-15);
        assert!(p.validate().is_ok());
        assert!(p.is_feasible().unwrap());
    }

    #[test]
    fn window_examples() {
        assert!(kappa_window(0.1).unwrap());
        assert!(kappa_window(0.15).unwrap());
        assert!(!kappa_window(0.2).unwrap());
        assert!(!kappa_window(3.0 / 16.0).unwrap());
        assert_eq!(
            feasibility_window(0.5, 0.5).unwrap(),
            FeasibilityWindow::Interval { lo: 0.0, hi: 1.0 }
        );
        assert!(matches!(
            feasibility_window(0.0, 0.5),
            Err(Error::DomainError(_))
        ));
    }

    #[test]
    fn sweep_cell_flips_at_three_sixteenths() {
        assert!(!sweep_cell(0.5, 0.1).unwrap().window.is_empty());
        assert!(sweep_cell(0.5, 0.2).unwrap().window.is_empty());
        assert!(!sweep_cell(0.4, 0.25).unwrap().feasible);
    }
}
