//! Finite-`eps` check of persistence: two-sided shooting of the full
//! slow-fast system onto the anchor section, and the distance of the
//! connection from the frozen family.
//!
//! The left leg starts at `w_-(y_L) + s e_u` and runs forward, the right
//! leg at `w_+(y_R) + s e_s` and runs backward; both stop on the anchor
//! section. Newton on `(y_L, y_R)` closes the gap in the section-tangent
//! coordinates and in `y`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::system::{find_endpoint, PiecewiseSlowFastSystem, Side};
use crate::trajectory::{
    compute_frozen_halforbits, integrate_to_level, seed_vector, IntegrationOptions, OrbitSetup,
    PiecewiseTrajectory, YMode,
};

#[derive(Debug, Clone)]
pub struct ShootingOptions {
    /// Anchor section, endpoint guesses and the frozen-orbit settings used
    /// for the deviation measurement.
    pub orbit: OrbitSetup,
    /// Seed offset is `seed_rel * |w_+ - w_-|`.
    pub seed_rel: f64,
    pub shoot_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Finite-difference step for the Jacobian, relative to `max(1, |y|)`.
    pub fd_step: f64,
    pub integration: IntegrationOptions,
    /// Time budget for each leg.
    pub t_budget: f64,
    /// Grid size for [`sup_norm_deviation`]; zero skips the measurement.
    pub sup_samples: usize,
    /// Interval per slow coordinate on which the frozen hypotheses were
    /// checked; launch and section values must stay inside.
    pub y_bounds: Option<Vec<(f64, f64)>>,
}

impl ShootingOptions {
    pub fn new(orbit: OrbitSetup) -> Self {
        Self {
            orbit,
            seed_rel: 1e-7,
            shoot_tol: 1e-10,
            max_iter: 40,
            max_halvings: 30,
            fd_step: 1e-6,
            integration: IntegrationOptions::with_tolerances(1e-12, 1e-14),
            t_budget: 400.0,
            sup_samples: 200,
            y_bounds: None,
        }
    }
}

/// A converged connection at one `eps`. Leg times are shifted so that the
/// section is reached at `t = 0`.
#[derive(Debug, Clone, Serialize)]
pub struct ConnectionResult {
    pub schema_version: u32,
    pub epsilon: f64,
    pub y_init_left: Vec<f64>,
    pub y_init_right: Vec<f64>,
    /// `y` on the section, the finite-`eps` counterpart of `y_0`.
    pub y_at_section: Vec<f64>,
    pub mismatch: f64,
    /// `NaN` when the measurement was skipped.
    pub sup_dev: f64,
    pub newton_iters: usize,
    pub seed_offset: f64,
    /// Time from launch to the section on each leg.
    pub flight_time_left: f64,
    pub flight_time_right: f64,
    /// The same times for the frozen system at `y_at_section` with the same seed.
    pub frozen_flight_left: f64,
    pub frozen_flight_right: f64,
    #[serde(skip)]
    pub left: PiecewiseTrajectory,
    #[serde(skip)]
    pub right: PiecewiseTrajectory,
}

struct Legs {
    left: PiecewiseTrajectory,
    right: PiecewiseTrajectory,
    residual: DVector<f64>,
}

fn seeds(
    system: &PiecewiseSlowFastSystem,
    yl: &DVector<f64>,
    yr: &DVector<f64>,
    opts: &ShootingOptions,
    scale: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let o = &opts.orbit;
    let em = find_endpoint(system, Side::Minus, yl, &o.w_minus_guess, &o.newton)?;
    let ep = find_endpoint(system, Side::Plus, yr, &o.w_plus_guess, &o.newton)?;
    let eu = seed_vector(system, &em, yl, o.anchor_level)?;
    let es = seed_vector(system, &ep, yr, o.anchor_level)?;
    Ok((em.point() + eu * scale, ep.point() + es * scale))
}

fn leg(
    system: &PiecewiseSlowFastSystem,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    mode: YMode,
    t1: f64,
    level: f64,
    opts: &IntegrationOptions,
) -> Result<PiecewiseTrajectory> {
    let traj = integrate_to_level(system, x0, y0, mode, (0.0, t1), level, opts)?;
    if !traj.hit_level {
        return Err(Error::SectionMissed { level });
    }
    Ok(traj)
}

fn end_state(traj: &PiecewiseTrajectory) -> DVector<f64> {
    traj.state(traj.t_final())
}

fn check_bounds(y: &DVector<f64>, bounds: &Option<Vec<(f64, f64)>>) -> Result<()> {
    if let Some(b) = bounds {
        for (&v, &(lo, hi)) in y.iter().zip(b) {
            if !(v >= lo && v <= hi) {
                return Err(Error::OutsideSlowRange { value: v, lo, hi });
            }
        }
    }
    Ok(())
}

fn run_legs(
    system: &PiecewiseSlowFastSystem,
    eps: f64,
    yl: &DVector<f64>,
    yr: &DVector<f64>,
    scale: f64,
    opts: &ShootingOptions,
) -> Result<Legs> {
    check_bounds(yl, &opts.y_bounds)?;
    check_bounds(yr, &opts.y_bounds)?;
    let (xl, xr) = seeds(system, yl, yr, opts, scale)?;
    let level = opts.orbit.anchor_level;
    let (left, right) = rayon::join(
        || {
            leg(
                system,
                &xl,
                yl,
                YMode::Slow(eps),
                opts.t_budget,
                level,
                &opts.integration,
            )
        },
        || {
            leg(
                system,
                &xr,
                yr,
                YMode::Slow(eps),
                -opts.t_budget,
                level,
                &opts.integration,
            )
        },
    );
    let (left, right) = (left?, right?);
    let (n, m) = (system.n, system.m);
    let zl = end_state(&left);
    let zr = end_state(&right);
    let x_gap = zl.rows(0, n) - zr.rows(0, n);
    let y_gap = zl.rows(n, m) - zr.rows(n, m);
    let hx = system
        .switching
        .h
        .grad_x(&zr.rows(0, n).into_owned(), &zr.rows(n, m).into_owned());
    let tangent = linalg::complement_basis(&DMatrix::from_column_slice(n, 1, hx.as_slice()));
    let mut residual = DVector::zeros(n - 1 + m);
    residual
        .rows_mut(0, n - 1)
        .copy_from(&(tangent.transpose() * x_gap));
    residual.rows_mut(n - 1, m).copy_from(&y_gap);
    Ok(Legs {
        left,
        right,
        residual,
    })
}

fn flight_time(traj: &PiecewiseTrajectory) -> f64 {
    (traj.t_final() - traj.t_launch()).abs()
}

/// Finds the connection of the `eps`-system near the frozen zero `y_guess`.
pub fn shoot_connection(
    system: &PiecewiseSlowFastSystem,
    eps: f64,
    y_guess: &DVector<f64>,
    opts: &ShootingOptions,
) -> Result<ConnectionResult> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!("eps = {eps} must be positive")));
    }
    let m = system.m;
    if y_guess.len() != m {
        return Err(Error::InvalidInput(format!(
            "y guess has length {}, expected {m}",
            y_guess.len()
        )));
    }
    // seed scale from the frozen endpoints at the guess
    let o = &opts.orbit;
    let wm = find_endpoint(system, Side::Minus, y_guess, &o.w_minus_guess, &o.newton)?.point();
    let wp = find_endpoint(system, Side::Plus, y_guess, &o.w_plus_guess, &o.newton)?.point();
    let scale = opts.seed_rel * (&wp - &wm).norm();

    // warm start: shift the launch values by the drift accumulated in flight
    let probe = run_legs(system, eps, y_guess, y_guess, scale, opts)?;
    let drift = |traj: &PiecewiseTrajectory| end_state(traj).rows(system.n, m) - y_guess;
    let mut z = DVector::zeros(2 * m);
    z.rows_mut(0, m).copy_from(&(y_guess - drift(&probe.left)));
    z.rows_mut(m, m).copy_from(&(y_guess - drift(&probe.right)));

    let eval = |z: &DVector<f64>| -> Result<Legs> {
        run_legs(
            system,
            eps,
            &z.rows(0, m).into_owned(),
            &z.rows(m, m).into_owned(),
            scale,
            opts,
        )
    };
    let mut legs = eval(&z)?;
    let mut norm = legs.residual.norm();
    let mut iters = 0;
    while norm > opts.shoot_tol {
        if iters >= opts.max_iter {
            return Err(Error::NewtonDiverged {
                iterations: iters,
                mismatch: norm,
            });
        }
        iters += 1;
        let cols: Vec<DVector<f64>> = (0..2 * m)
            .into_par_iter()
            .map(|k| -> Result<DVector<f64>> {
                let h = opts.fd_step * z[k].abs().max(1.0);
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[k] += h;
                zm[k] -= h;
                Ok((eval(&zp)?.residual - eval(&zm)?.residual) / (2.0 * h))
            })
            .collect::<Result<_>>()?;
        let jac = DMatrix::from_columns(&cols);
        let (step, _) = linalg::least_squares(&jac, &(-&legs.residual));
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial = &z + &step * lambda;
            if let Ok(t) = eval(&trial) {
                let tn = t.residual.norm();
                if tn < norm {
                    z = trial;
                    legs = t;
                    norm = tn;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonDiverged {
                iterations: iters,
                mismatch: norm,
            });
        }
    }

    let Legs {
        mut left,
        mut right,
        ..
    } = legs;
    let (fl, fr) = (flight_time(&left), flight_time(&right));
    let zl = end_state(&left);
    let zr = end_state(&right);
    let y_sec = (zl.rows(system.n, m) + zr.rows(system.n, m)) * 0.5;
    left.shift_time(-left.t_final());
    right.shift_time(-right.t_final());

    let (frozen_l, frozen_r) = {
        let (xl, xr) = seeds(system, &y_sec, &y_sec, opts, scale)?;
        let level = opts.orbit.anchor_level;
        let l = leg(
            system,
            &xl,
            &y_sec,
            YMode::Frozen,
            opts.t_budget,
            level,
            &opts.integration,
        )?;
        let r = leg(
            system,
            &xr,
            &y_sec,
            YMode::Frozen,
            -opts.t_budget,
            level,
            &opts.integration,
        )?;
        (flight_time(&l), flight_time(&r))
    };

    let mut result = ConnectionResult {
        schema_version: crate::SCHEMA_VERSION,
        epsilon: eps,
        y_init_left: z.rows(0, m).iter().copied().collect(),
        y_init_right: z.rows(m, m).iter().copied().collect(),
        y_at_section: y_sec.iter().copied().collect(),
        mismatch: norm,
        sup_dev: f64::NAN,
        newton_iters: iters,
        seed_offset: scale,
        flight_time_left: fl,
        flight_time_right: fr,
        frozen_flight_left: frozen_l,
        frozen_flight_right: frozen_r,
        left,
        right,
    };
    if opts.sup_samples > 0 {
        result.sup_dev = sup_norm_deviation(
            system,
            &result.left,
            &result.right,
            &opts.orbit,
            opts.sup_samples,
        )?;
    }
    Ok(result)
}

/// `max |x(t) - u(t, y(t))|` over a grid of at least `samples` times on both
/// legs (section at `t = 0`). The frozen orbit is recomputed and anchored at
/// each sampled `y`; before its launch time it is replaced by its endpoint.
pub fn sup_norm_deviation(
    system: &PiecewiseSlowFastSystem,
    left: &PiecewiseTrajectory,
    right: &PiecewiseTrajectory,
    orbit: &OrbitSetup,
    samples: usize,
) -> Result<f64> {
    let half = samples.div_ceil(2).max(2);
    let grid = |traj: &PiecewiseTrajectory, side: Side| -> Vec<(f64, Side)> {
        let (a, b) = (traj.t_min(), traj.t_max());
        (0..half)
            .map(|i| (a + (b - a) * i as f64 / (half - 1) as f64, side))
            .collect()
    };
    let mut pts = grid(left, Side::Minus);
    pts.extend(grid(right, Side::Plus));
    let devs: Vec<f64> = pts
        .par_iter()
        .map(|&(t, side)| -> Result<f64> {
            let traj = if side == Side::Minus { left } else { right };
            let x = traj.x(t);
            let y = traj.y(t);
            let pair = compute_frozen_halforbits(system, &y, orbit)?;
            let u = match side {
                Side::Minus if t < pair.u_minus.t_min() => pair.endpoint_minus.point(),
                Side::Minus => pair.u_minus.x(t),
                Side::Plus if t > pair.u_plus.t_max() => pair.endpoint_plus.point(),
                Side::Plus => pair.u_plus.x(t),
            };
            Ok((x - u).norm())
        })
        .collect::<Result<_>>()?;
    Ok(devs.into_iter().fold(0.0, f64::max))
}

/// One row of a [`ConvergenceTable`].
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub ok: bool,
    pub y0_eps: Vec<f64>,
    /// `|y0(eps) - y0|`.
    pub deviation: f64,
    /// Signed `y0(eps) - y0` in the first coordinate.
    pub signed_deviation: f64,
    pub sup_dev: f64,
    pub mismatch: f64,
    pub newton_iters: usize,
    /// Differences of the leg flight times from the frozen ones.
    pub flight_gap: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub schema_version: u32,
    pub y0: Vec<f64>,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log |y0(eps) - y0|` against `log eps`.
    pub slope: Option<f64>,
    /// `|y0(eps) - y0|` decreases with `eps` along the successful rows.
    pub monotone: bool,
    /// The signed deviation keeps one sign.
    pub sign_consistent: bool,
    pub sup_dev_decreasing: bool,
}

impl ConvergenceTable {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(
            w,
            "epsilon,ok,y0_eps,deviation,sup_dev,mismatch,newton_iters,flight_gap,error"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{:.17e},{},{:.17e},{:.17e},{:.17e},{:.17e},{},{:.17e},{}",
                r.epsilon,
                r.ok,
                r.y0_eps.first().copied().unwrap_or(f64::NAN),
                r.deviation,
                r.sup_dev,
                r.mismatch,
                r.newton_iters,
                r.flight_gap,
                r.error.as_deref().unwrap_or("").replace(',', ";")
            )?;
        }
        Ok(())
    }
}

/// Shoots at every `eps` concurrently and summarises the trend toward `y0`.
/// Failures are recorded per row.
pub fn convergence_study(
    system: &PiecewiseSlowFastSystem,
    eps_list: &[f64],
    y0: &DVector<f64>,
    opts: &ShootingOptions,
) -> ConvergenceTable {
    let rows: Vec<ConvergenceRow> = eps_list
        .par_iter()
        .map(|&eps| match shoot_connection(system, eps, y0, opts) {
            Ok(r) => {
                log::debug!("eps = {eps}: converged in {} iterations", r.newton_iters);
                let ye = DVector::from_column_slice(&r.y_at_section);
                ConvergenceRow {
                    epsilon: eps,
                    ok: true,
                    deviation: (&ye - y0).norm(),
                    signed_deviation: ye[0] - y0[0],
                    y0_eps: r.y_at_section.clone(),
                    sup_dev: r.sup_dev,
                    mismatch: r.mismatch,
                    newton_iters: r.newton_iters,
                    flight_gap: (r.flight_time_left - r.frozen_flight_left).abs()
                        + (r.flight_time_right - r.frozen_flight_right).abs(),
                    error: None,
                }
            }
            Err(e) => {
                log::warn!("eps = {eps}: {e}");
                ConvergenceRow {
                    epsilon: eps,
                    ok: false,
                    y0_eps: Vec::new(),
                    deviation: f64::NAN,
                    signed_deviation: f64::NAN,
                    sup_dev: f64::NAN,
                    mismatch: f64::NAN,
                    newton_iters: 0,
                    flight_gap: f64::NAN,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();

    let mut good: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.ok).collect();
    good.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
    let slope = fit_slope(&good);
    let monotone = good.windows(2).all(|w| w[0].deviation < w[1].deviation);
    let sign_consistent = good
        .windows(2)
        .all(|w| w[0].signed_deviation.signum() == w[1].signed_deviation.signum());
    let sup_dev_decreasing = good.windows(2).all(|w| w[0].sup_dev < w[1].sup_dev);
    ConvergenceTable {
        schema_version: crate::SCHEMA_VERSION,
        y0: y0.iter().copied().collect(),
        rows,
        slope,
        monotone,
        sign_consistent,
        sup_dev_decreasing,
    }
}

fn fit_slope(rows: &[&ConvergenceRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.deviation > 0.0)
        .map(|r| (r.epsilon.ln(), r.deviation.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}
