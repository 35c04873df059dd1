//! Event-detected integration of the piecewise system and the frozen
//! half-orbits `u_-(t, y)`, `u_+(t, y)`.

use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ode::{DenseSolution, DenseStep, StepControl, Stepper};
use crate::system::{
    find_endpoint, HyperbolicEndpoint, NewtonOptions, PiecewiseSlowFastSystem, RegionIndex, Side,
};

/// How the slow variable evolves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum YMode {
    /// `y' = 0`.
    Frozen,
    /// `y' = eps g(x, y, eps)`.
    Slow(f64),
}

impl YMode {
    pub fn eps(&self) -> f64 {
        match *self {
            YMode::Frozen => 0.0,
            YMode::Slow(e) => e,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationOptions {
    pub control: StepControl,
    /// Event tolerance is `event_tol_rel * max(1, |c|)`.
    pub event_tol_rel: f64,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self {
            control: StepControl::default(),
            event_tol_rel: 1e-12,
        }
    }
}

impl IntegrationOptions {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        let mut o = Self::default();
        o.control.rtol = rtol;
        o.control.atol = atol;
        o
    }
}

/// A transversal crossing of a switching surface. Regions and margins are
/// in forward-time order regardless of the integration direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossingEvent {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub threshold: usize,
    pub region_from: RegionIndex,
    pub region_to: RegionIndex,
    /// `h_x . xdot` (plus `h_y . ydot`) just before the crossing.
    pub margin_minus: f64,
    /// Same rate just after the crossing.
    pub margin_plus: f64,
}

impl CrossingEvent {
    pub fn point(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x)
    }

    pub fn y_point(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.y)
    }
}

/// A smooth piece of a trajectory inside one region.
#[derive(Debug, Clone)]
pub struct Segment {
    pub region: RegionIndex,
    /// Dense output of the stacked state `(x, y)`.
    pub sol: DenseSolution,
}

impl Segment {
    pub fn t_min(&self) -> f64 {
        self.sol.t_min()
    }
    pub fn t_max(&self) -> f64 {
        self.sol.t_max()
    }
}

/// Continuous, piecewise smooth trajectory. Segments and events are sorted
/// by increasing time.
#[derive(Debug, Clone)]
pub struct PiecewiseTrajectory {
    pub n: usize,
    pub m: usize,
    pub segments: Vec<Segment>,
    pub events: Vec<CrossingEvent>,
    pub y_mode: YMode,
    /// Set when integration stopped on a requested level instead of `t_span`.
    pub hit_level: bool,
    /// True if integrated backward in time.
    pub backward: bool,
}

impl PiecewiseTrajectory {
    pub fn t_min(&self) -> f64 {
        self.segments.first().map_or(0.0, Segment::t_min)
    }

    pub fn t_max(&self) -> f64 {
        self.segments.last().map_or(0.0, Segment::t_max)
    }

    /// Initial time of the integration (the `t_span` start).
    pub fn t_launch(&self) -> f64 {
        if self.backward {
            self.t_max()
        } else {
            self.t_min()
        }
    }

    /// Final time of the integration.
    pub fn t_final(&self) -> f64 {
        if self.backward {
            self.t_min()
        } else {
            self.t_max()
        }
    }

    /// Segment containing `t`; at an event time `Side::Minus` picks the
    /// earlier segment and `Side::Plus` the later one.
    pub fn segment_at(&self, t: f64, side: Side) -> &Segment {
        let idx = match side {
            Side::Plus => self.segments.partition_point(|s| s.t_max() <= t),
            Side::Minus => self.segments.partition_point(|s| s.t_max() < t),
        };
        &self.segments[idx.min(self.segments.len() - 1)]
    }

    pub fn region_at(&self, t: f64, side: Side) -> RegionIndex {
        self.segment_at(t, side).region
    }

    /// Stacked state `(x, y)` at `t`.
    pub fn state(&self, t: f64) -> DVector<f64> {
        self.segment_at(t, Side::Plus).sol.eval(t)
    }

    pub fn x(&self, t: f64) -> DVector<f64> {
        self.state(t).rows(0, self.n).into_owned()
    }

    pub fn y(&self, t: f64) -> DVector<f64> {
        self.state(t).rows(self.n, self.m).into_owned()
    }

    /// One-sided fast velocity `f_region(x(t), y(t))`.
    pub fn velocity(&self, system: &PiecewiseSlowFastSystem, t: f64, side: Side) -> DVector<f64> {
        let seg = self.segment_at(t, side);
        let z = seg.sol.eval(t);
        let x = z.rows(0, self.n).into_owned();
        let y = z.rows(self.n, self.m).into_owned();
        system.field(seg.region).eval(&x, &y)
    }

    pub fn shift_time(&mut self, dt: f64) {
        for s in &mut self.segments {
            s.sol.shift_time(dt);
        }
        for e in &mut self.events {
            e.t += dt;
        }
    }

    /// All step nodes plus `per_step - 1` interior points per step, sorted.
    pub fn sample_times(&self, per_step: usize) -> Vec<f64> {
        let per_step = per_step.max(1);
        let mut ts = Vec::new();
        for seg in &self.segments {
            for step in seg.sol.steps() {
                for k in 0..=per_step {
                    ts.push(step.t0 + step.h * k as f64 / per_step as f64);
                }
            }
            ts.push(seg.sol.t_start());
        }
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }

    /// CSV with columns `t, x1..xn, y1..ym, region`.
    pub fn write_csv<W: Write>(&self, w: &mut W, per_step: usize) -> std::io::Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.n).map(|i| format!("x{i}")));
        header.extend((1..=self.m).map(|j| format!("y{j}")));
        header.push("region".into());
        writeln!(w, "{}", header.join(","))?;
        for t in self.sample_times(per_step) {
            let z = self.state(t);
            let mut row = vec![format!("{t}")];
            row.extend(z.iter().map(|v| format!("{v}")));
            row.push(self.region_at(t, Side::Plus).0.to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// CSV with columns `t, threshold, region_from, region_to, margin_minus, margin_plus`.
    pub fn write_events_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write_events_csv(w, &self.events)
    }
}

pub fn write_events_csv<W: Write>(w: &mut W, events: &[CrossingEvent]) -> std::io::Result<()> {
    writeln!(
        w,
        "t,threshold,region_from,region_to,margin_minus,margin_plus"
    )?;
    for e in events {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            e.t, e.threshold, e.region_from.0, e.region_to.0, e.margin_minus, e.margin_plus
        )?;
    }
    Ok(())
}

struct Ctx<'a> {
    sys: &'a PiecewiseSlowFastSystem,
    mode: YMode,
}

impl Ctx<'_> {
    fn split(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.sys.n;
        (
            z.rows(0, n).into_owned(),
            z.rows(n, self.sys.m).into_owned(),
        )
    }

    fn rhs(&self, r: RegionIndex, z: &DVector<f64>) -> DVector<f64> {
        let (x, y) = self.split(z);
        let mut out = DVector::zeros(z.len());
        out.rows_mut(0, self.sys.n)
            .copy_from(&self.sys.field(r).eval(&x, &y));
        if let YMode::Slow(eps) = self.mode {
            if self.sys.m > 0 {
                out.rows_mut(self.sys.n, self.sys.m)
                    .copy_from(&(self.sys.slow.eval(&x, &y, eps) * eps));
            }
        }
        out
    }

    fn h(&self, z: &DVector<f64>) -> f64 {
        let (x, y) = self.split(z);
        self.sys.h(&x, &y)
    }

    /// Forward-time rate of `h` along the field of region `r`.
    fn rate(&self, r: RegionIndex, z: &DVector<f64>) -> f64 {
        let (x, y) = self.split(z);
        let dz = self.rhs(r, z);
        let h = &self.sys.switching.h;
        let mut v = h.grad_x(&x, &y).dot(&dz.rows(0, self.sys.n));
        if self.sys.m > 0 {
            v += h.grad_y(&x, &y).dot(&dz.rows(self.sys.n, self.sys.m));
        }
        v
    }
}

/// A level crossed inside a step.
#[derive(Debug, Clone, Copy)]
struct Hit {
    level: f64,
    /// Threshold index, `None` for the stop level.
    threshold: Option<usize>,
    theta_lo: f64,
    theta_hi: f64,
}

/// Finds the first monitored level crossed in `step`, sampling the dense
/// output at quarter points. `Err(())` asks for a smaller step.
fn first_hit(
    ctx: &Ctx,
    step: &DenseStep,
    region: RegionIndex,
    stop: Option<f64>,
    event_tol: &dyn Fn(f64) -> f64,
) -> std::result::Result<Option<Hit>, ()> {
    let (lo, hi) = ctx.sys.switching.band_limits(region);
    let h0 = ctx.h(step.start());
    let mut prev_theta = 0.0;
    let mut prev_h = h0;
    for &theta in &[0.25, 0.5, 0.75, 1.0] {
        let hv = ctx.h(&step.at_theta(theta));
        let mut hits: Vec<Hit> = Vec::new();
        if hv >= hi {
            hits.push(Hit {
                level: hi,
                threshold: Some(region.0),
                theta_lo: prev_theta,
                theta_hi: theta,
            });
        }
        if hv <= lo {
            hits.push(Hit {
                level: lo,
                threshold: Some(region.0 - 1),
                theta_lo: prev_theta,
                theta_hi: theta,
            });
        }
        if let Some(s) = stop {
            let before = prev_h - s;
            let after = hv - s;
            if before != 0.0 && (after == 0.0 || before.signum() != after.signum()) {
                hits.push(Hit {
                    level: s,
                    threshold: None,
                    theta_lo: prev_theta,
                    theta_hi: theta,
                });
            }
        }
        if !hits.is_empty() {
            // crossing beyond the neighbouring band is never allowed in one step
            let band = ctx.sys.switching.band_of(hv);
            if band.0 + 1 < region.0 || band.0 > region.0 + 1 {
                return Err(());
            }
            // the stop level coincides with a threshold: one event
            let stop_hit = hits.iter().find(|h| h.threshold.is_none()).copied();
            if let Some(sh) = stop_hit {
                if hits
                    .iter()
                    .filter(|h| h.threshold.is_some())
                    .all(|h| (h.level - sh.level).abs() <= event_tol(sh.level))
                {
                    return Ok(Some(sh));
                }
                return Err(());
            }
            if hits.len() > 1 {
                return Err(());
            }
            return Ok(Some(hits[0]));
        }
        prev_theta = theta;
        prev_h = hv;
    }
    Ok(None)
}

/// Bisection for `h(z(theta)) = level` on a sign-changing bracket.
fn bisect(ctx: &Ctx, step: &DenseStep, hit: &Hit) -> f64 {
    let g = |theta: f64| ctx.h(&step.at_theta(theta)) - hit.level;
    let (mut a, mut b) = (hit.theta_lo, hit.theta_hi);
    let ga = g(a);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if gm.signum() == ga.signum() {
            a = mid;
        } else {
            b = mid;
        }
    }
    b
}

/// Integration with event detection. The crossing at `t_span.1` side is
/// reached when integration time ends or `stop_level` is hit.
pub fn integrate_with_events(
    system: &PiecewiseSlowFastSystem,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    y_mode: YMode,
    t_span: (f64, f64),
    opts: &IntegrationOptions,
) -> Result<PiecewiseTrajectory> {
    integrate_impl(system, x0, y0, y_mode, t_span, None, opts)
}

/// As [`integrate_with_events`], stopping at the first arrival on `h = level`.
pub fn integrate_to_level(
    system: &PiecewiseSlowFastSystem,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    y_mode: YMode,
    t_span: (f64, f64),
    level: f64,
    opts: &IntegrationOptions,
) -> Result<PiecewiseTrajectory> {
    integrate_impl(system, x0, y0, y_mode, t_span, Some(level), opts)
}

fn integrate_impl(
    system: &PiecewiseSlowFastSystem,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    y_mode: YMode,
    t_span: (f64, f64),
    stop: Option<f64>,
    opts: &IntegrationOptions,
) -> Result<PiecewiseTrajectory> {
    let (n, m) = (system.n, system.m);
    if x0.len() != n || y0.len() != m {
        return Err(Error::InvalidInput(
            "initial state has wrong dimension".into(),
        ));
    }
    if !t_span.0.is_finite() || !t_span.1.is_finite() {
        return Err(Error::InvalidInput("t_span must be finite".into()));
    }
    let ctx = Ctx {
        sys: system,
        mode: y_mode,
    };
    let dir = if t_span.1 >= t_span.0 { 1.0 } else { -1.0 };
    let backward = dir < 0.0;
    let event_tol = |c: f64| opts.event_tol_rel * c.abs().max(1.0);
    let eta = system.switching.eta;

    let mut z = DVector::zeros(n + m);
    z.rows_mut(0, n).copy_from(x0);
    z.rows_mut(n, m).copy_from(y0);

    let mut region = match system.region_of(x0, y0) {
        crate::system::Location::Region(r) => r,
        crate::system::Location::OnBoundary(i) => {
            // start on a surface: go into the region the flow enters
            let below = RegionIndex(i);
            let above = RegionIndex(i + 1);
            let (rb, ra) = (ctx.rate(below, &z), ctx.rate(above, &z));
            if !(rb.signum() == ra.signum() && rb.abs() > eta && ra.abs() > eta) {
                return Err(Error::TangentialCrossing {
                    t: t_span.0,
                    margin_minus: rb,
                    margin_plus: ra,
                    eta,
                });
            }
            if (ra > 0.0) == (dir > 0.0) {
                above
            } else {
                below
            }
        }
    };

    let mut segments = Vec::new();
    let mut events = Vec::new();
    let mut t = t_span.0;
    let mut hit_level = false;
    let ctx_ref = &ctx;
    let rhs = |r: RegionIndex| move |_t: f64, z: &DVector<f64>| ctx_ref.rhs(r, z);
    let mut f = rhs(region);
    let mut stepper = Stepper::new(&mut f, t, z.clone(), dir, opts.control)?;
    let mut sol = DenseSolution::new(t, z.clone());

    'outer: while (t_span.1 - t) * dir > 0.0 {
        let remaining = (t_span.1 - t).abs();
        let mut f = rhs(region);
        let mut step = stepper.propose(&mut f, remaining)?;
        let mut halvings = 0;
        let hit = loop {
            match first_hit(&ctx, &step, region, stop, &event_tol) {
                Ok(h) => break h,
                Err(()) => {
                    halvings += 1;
                    if halvings > 40 {
                        return Err(Error::SimultaneousEvents { t: step.t0 });
                    }
                    let hh = step.h.abs() * 0.5;
                    stepper.set_suggested_step(hh);
                    step = stepper.propose(&mut f, hh)?;
                }
            }
        };
        if (remaining - step.h.abs()).abs() <= 1e-13 * t_span.1.abs().max(1.0) && hit.is_none() {
            step = stepper.fixed(&mut f, t_span.1 - t)?.0;
        }

        let Some(hit) = hit else {
            stepper.commit(&step)?;
            t = stepper.t;
            sol.push(step);
            check_box(system, &ctx, &stepper.x, t)?;
            continue;
        };

        // locate, re-step exactly onto the surface, polish once or twice
        let theta = bisect(&ctx, &step, &hit);
        let mut hstar = theta * step.h;
        let mut exact = stepper.fixed(&mut f, hstar)?.0;
        let tol = event_tol(hit.level);
        for _ in 0..4 {
            let zend = exact.end();
            let g = ctx.h(&zend) - hit.level;
            if g.abs() <= tol {
                break;
            }
            let rate = ctx.rate(region, &zend);
            if rate.abs() <= f64::MIN_POSITIVE {
                break;
            }
            hstar -= g / rate;
            exact = stepper.fixed(&mut f, hstar)?.0;
        }
        stepper.commit(&exact)?;
        t = stepper.t;
        sol.push(exact);
        let zc = stepper.x.clone();
        check_box(system, &ctx, &zc, t)?;

        let from = region;
        let arriving = ctx.rate(from, &zc);
        match hit.threshold {
            None => {
                if arriving.abs() <= eta {
                    return Err(Error::TangentialCrossing {
                        t,
                        margin_minus: arriving,
                        margin_plus: arriving,
                        eta,
                    });
                }
                hit_level = true;
                let done = std::mem::replace(&mut sol, DenseSolution::new(t, zc.clone()));
                segments.push(Segment { region, sol: done });
                break 'outer;
            }
            Some(i) => {
                let to = if i == region.0 {
                    RegionIndex(i + 1)
                } else {
                    RegionIndex(i)
                };
                let leaving = ctx.rate(to, &zc);
                let (mm, mp, rf, rt) = if backward {
                    (leaving, arriving, to, from)
                } else {
                    (arriving, leaving, from, to)
                };
                if !(mm.signum() == mp.signum() && mm.abs() > eta && mp.abs() > eta) {
                    return Err(Error::TangentialCrossing {
                        t,
                        margin_minus: mm,
                        margin_plus: mp,
                        eta,
                    });
                }
                let (xc, yc) = ctx.split(&zc);
                events.push(CrossingEvent {
                    t,
                    x: xc.iter().copied().collect(),
                    y: yc.iter().copied().collect(),
                    threshold: i,
                    region_from: rf,
                    region_to: rt,
                    margin_minus: mm,
                    margin_plus: mp,
                });
                segments.push(Segment {
                    region,
                    sol: DenseSolution::new(t, zc.clone()),
                });
                std::mem::swap(&mut segments.last_mut().expect("just pushed").sol, &mut sol);
                region = to;
                let mut f = rhs(region);
                let taken = stepper.steps_taken;
                stepper.reset(&mut f, t, zc)?;
                stepper.steps_taken = taken;
            }
        }
    }
    if !hit_level {
        segments.push(Segment { region, sol });
    }
    if backward {
        segments.reverse();
        events.reverse();
    }
    Ok(PiecewiseTrajectory {
        n,
        m,
        segments,
        events,
        y_mode,
        hit_level,
        backward,
    })
}

fn check_box(system: &PiecewiseSlowFastSystem, ctx: &Ctx, z: &DVector<f64>, t: f64) -> Result<()> {
    let (x, _) = ctx.split(z);
    if system.in_working_box(&x) {
        Ok(())
    } else {
        Err(Error::LeftWorkingBox { t })
    }
}

/// First time beyond which the trajectory stays within `rho` of `w`.
///
/// `side = Plus` scans the forward tail (result `T` with `|x(t) - w| <= rho`
/// for sampled `t >= T`), `side = Minus` the backward tail. The scan window
/// starts at the last (first) crossing event, or at the trajectory start.
pub fn asymptotic_time(
    traj: &PiecewiseTrajectory,
    w: &DVector<f64>,
    rho: f64,
    side: Side,
) -> Result<f64> {
    let mut ts = traj.sample_times(4);
    let window_start = match side {
        Side::Plus => traj.events.last().map_or(traj.t_min(), |e| e.t),
        Side::Minus => traj.events.first().map_or(traj.t_max(), |e| e.t),
    };
    match side {
        Side::Plus => ts.retain(|&t| t >= window_start),
        Side::Minus => {
            ts.retain(|&t| t <= window_start);
            ts.reverse();
        }
    }
    // ts now runs from the window start to the tail end
    let dist = |t: f64| (traj.x(t) - w).norm();
    let Some(&t_end) = ts.last() else {
        return Err(Error::NotConverged { distance: f64::NAN });
    };
    let d_end = dist(t_end);
    if !(d_end <= rho) {
        return Err(Error::NotConverged { distance: d_end });
    }
    let mut result = ts[0];
    for pair in ts.windows(2).rev() {
        if dist(pair[0]) > rho {
            result = pair[1];
            break;
        }
    }
    Ok(result)
}

/// Inputs for [`compute_frozen_halforbits`].
#[derive(Debug, Clone)]
pub struct OrbitSetup {
    /// Section `h = anchor_level` where both half-orbits are anchored at `t = 0`.
    pub anchor_level: f64,
    pub seed_scale: f64,
    pub rho_asym: f64,
    /// Time budget for each half-orbit.
    pub t_budget: f64,
    pub w_minus_guess: DVector<f64>,
    pub w_plus_guess: DVector<f64>,
    pub newton: NewtonOptions,
    pub integration: IntegrationOptions,
}

impl OrbitSetup {
    pub fn new(anchor_level: f64, w_minus_guess: DVector<f64>, w_plus_guess: DVector<f64>) -> Self {
        Self {
            anchor_level,
            seed_scale: 1e-10,
            rho_asym: 1e-9,
            t_budget: 200.0,
            w_minus_guess,
            w_plus_guess,
            newton: NewtonOptions::default(),
            integration: IntegrationOptions::default(),
        }
    }

    /// Tail tolerance actually used: never below a few seed offsets.
    pub fn effective_rho(&self) -> f64 {
        self.rho_asym.max(4.0 * self.seed_scale)
    }
}

/// The two frozen half-orbits at one `y`, both anchored on the section at `t = 0`.
#[derive(Debug, Clone)]
pub struct FrozenOrbitPair {
    pub y: DVector<f64>,
    /// Defined on `[t_launch, 0]`.
    pub u_minus: PiecewiseTrajectory,
    /// Defined on `[0, t_launch]`.
    pub u_plus: PiecewiseTrajectory,
    pub w0_minus: DVector<f64>,
    pub w0_plus: DVector<f64>,
    pub t_minus: f64,
    pub t_plus: f64,
    pub endpoint_minus: HyperbolicEndpoint,
    pub endpoint_plus: HyperbolicEndpoint,
    pub anchor_level: f64,
}

impl FrozenOrbitPair {
    /// `u(t)`: the minus orbit for `t < 0`, the plus orbit for `t >= 0`.
    pub fn x(&self, t: f64) -> DVector<f64> {
        if t < 0.0 {
            self.u_minus.x(t)
        } else {
            self.u_plus.x(t)
        }
    }

    /// Crossing events of both halves, sorted by time.
    pub fn events(&self) -> Vec<CrossingEvent> {
        let mut all = self.u_minus.events.clone();
        all.extend(self.u_plus.events.iter().cloned());
        all
    }

    /// Forward-time region on either side of the anchor.
    pub fn anchor_regions(&self) -> (RegionIndex, RegionIndex) {
        (
            self.u_minus.region_at(0.0, Side::Minus),
            self.u_plus.region_at(0.0, Side::Plus),
        )
    }

    /// Gap `w0_minus - w0_plus` at the section.
    pub fn gap(&self) -> DVector<f64> {
        &self.w0_minus - &self.w0_plus
    }
}

/// Seed direction in `basis` pointing from `w` toward the section.
fn seed_direction(
    system: &PiecewiseSlowFastSystem,
    basis: &nalgebra::DMatrix<f64>,
    w: &DVector<f64>,
    y: &DVector<f64>,
    level: f64,
) -> Result<DVector<f64>> {
    let hx = system.switching.h.grad_x(w, y);
    let proj = basis * (basis.transpose() * &hx);
    let norm = proj.norm();
    if !(norm > 1e-12 * hx.norm().max(1.0)) {
        return Err(Error::InvalidInput(
            "invariant subspace at the endpoint is tangent to the anchor section".into(),
        ));
    }
    let toward = (level - system.h(w, y)).signum();
    Ok(proj / norm * toward)
}

/// Builds `u_-` forward from `w_-` and `u_+` backward from `w_+`, stopping
/// both at the anchor section and shifting time so that it is hit at `t = 0`.
pub fn compute_frozen_halforbits(
    system: &PiecewiseSlowFastSystem,
    y: &DVector<f64>,
    setup: &OrbitSetup,
) -> Result<FrozenOrbitPair> {
    let (em, ep) = rayon::join(
        || find_endpoint(system, Side::Minus, y, &setup.w_minus_guess, &setup.newton),
        || find_endpoint(system, Side::Plus, y, &setup.w_plus_guess, &setup.newton),
    );
    let (em, ep) = (em?, ep?);
    let wm = em.point();
    let wp = ep.point();
    let eu = seed_direction(system, &em.unstable_basis(), &wm, y, setup.anchor_level)?;
    let es = seed_direction(system, &ep.stable_basis(), &wp, y, setup.anchor_level)?;

    let level = setup.anchor_level;
    let run = |x0: DVector<f64>, t1: f64| -> Result<PiecewiseTrajectory> {
        let traj = integrate_to_level(
            system,
            &x0,
            y,
            YMode::Frozen,
            (0.0, t1),
            level,
            &setup.integration,
        )?;
        if !traj.hit_level {
            return Err(Error::AnchorNotReached {
                level,
                max_time: setup.t_budget,
            });
        }
        Ok(traj)
    };
    let (um, up) = rayon::join(
        || run(&wm + &eu * setup.seed_scale, setup.t_budget),
        || run(&wp + &es * setup.seed_scale, -setup.t_budget),
    );
    let (mut um, mut up) = (um?, up?);
    um.shift_time(-um.t_max());
    up.shift_time(-up.t_min());

    let rho = setup.effective_rho();
    let t_minus = asymptotic_time(&um, &wm, rho, Side::Minus)?;
    let t_plus = asymptotic_time(&up, &wp, rho, Side::Plus)?;
    let w0_minus = um.x(0.0);
    let w0_plus = up.x(0.0);
    Ok(FrozenOrbitPair {
        y: y.clone(),
        u_minus: um,
        u_plus: up,
        w0_minus,
        w0_plus,
        t_minus,
        t_plus,
        endpoint_minus: em,
        endpoint_plus: ep,
        anchor_level: level,
    })
}

/// Unit vector of the one-dimensional unstable (minus) or stable (plus)
/// direction used for seeding, oriented toward the section.
pub fn seed_vector(
    system: &PiecewiseSlowFastSystem,
    endpoint: &HyperbolicEndpoint,
    y: &DVector<f64>,
    level: f64,
) -> Result<DVector<f64>> {
    let basis = match endpoint.side {
        Side::Minus => endpoint.unstable_basis(),
        Side::Plus => endpoint.stable_basis(),
    };
    seed_direction(system, &basis, &endpoint.point(), y, level)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::duffing::{u_minus_closed, u_plus_closed, DuffingParams};
    use crate::system::{ConstantSlow, FnField, LinearSwitch, SwitchingSpec};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    /// `a_+ = 1/4`, `a_- = 3/4`, `c = 1/2` for every `y`.
    fn balanced() -> (DuffingParams, PiecewiseSlowFastSystem) {
        let p = DuffingParams::degenerate();
        let s = p.as_system();
        (p, s)
    }

    fn energy(x: &DVector<f64>, a: f64) -> f64 {
        let u = x[0];
        0.5 * x[1] * x[1] - (u.powi(4) / 4.0 - (a + 1.0) * u.powi(3) / 3.0 + a * u * u / 2.0)
    }

    #[test]
    fn linear_decay_without_events() {
        let h = Arc::new(LinearSwitch {
            normal: v(&[1.0]),
            m: 0,
        });
        let sw = SwitchingSpec::new(h, vec![5.0], 1e-6, 1e-12).unwrap();
        let f = |_: &DVector<f64>, _: &DVector<f64>| -> Arc<dyn crate::system::VectorField> {
            Arc::new(FnField::new(0, |x, _| -x))
        };
        let dummy = v(&[0.0]);
        let sys = PiecewiseSlowFastSystem::new(
            1,
            0,
            sw,
            vec![f(&dummy, &dummy), f(&dummy, &dummy)],
            Arc::new(ConstantSlow(DVector::zeros(0))),
        )
        .unwrap();
        let traj = integrate_with_events(
            &sys,
            &v(&[1.0]),
            &DVector::zeros(0),
            YMode::Frozen,
            (0.0, 5.0),
            &Default::default(),
        )
        .unwrap();
        assert!(traj.events.is_empty());
        for i in 0..=50 {
            let t = 0.1 * i as f64;
            assert!((traj.x(t)[0] - (-t).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn closed_form_orbit_crosses_once_at_zero() {
        let (_, sys) = balanced();
        let (u, ud) = u_minus_closed(0.75, 0.5, -10.0).unwrap();
        let traj = integrate_with_events(
            &sys,
            &v(&[u, ud]),
            &v(&[0.0]),
            YMode::Frozen,
            (-10.0, 10.0),
            &Default::default(),
        )
        .unwrap();
        assert_eq!(traj.events.len(), 1);
        let e = &traj.events[0];
        assert!(e.t.abs() < 1e-7, "crossing at {}", e.t);
        assert_eq!(
            (e.region_from, e.region_to),
            (RegionIndex(0), RegionIndex(1))
        );
        assert!((e.x[0] - 0.5).abs() <= 1e-12);
        assert!(e.margin_minus > 0.0 && e.margin_plus > 0.0);
        for i in 0..=40 {
            let t = -10.0 + 0.5 * i as f64;
            let (cu, cud) = if t <= 0.0 {
                u_minus_closed(0.75, 0.5, t).unwrap()
            } else {
                u_plus_closed(0.25, 0.5, t).unwrap()
            };
            let x = traj.x(t);
            assert!(
                (x[0] - cu).abs() < 1e-7 && (x[1] - cud).abs() < 1e-7,
                "t = {t}"
            );
        }
    }

    #[test]
    fn first_integral_is_conserved_per_segment() {
        let (_, sys) = balanced();
        let (u, ud) = u_minus_closed(0.75, 0.5, -10.0).unwrap();
        let traj = integrate_with_events(
            &sys,
            &v(&[u, ud]),
            &v(&[0.0]),
            YMode::Frozen,
            (-10.0, 10.0),
            &Default::default(),
        )
        .unwrap();
        for seg in &traj.segments {
            let a = if seg.region == RegionIndex(0) {
                0.75
            } else {
                0.25
            };
            let e0 = energy(&seg.sol.eval(seg.t_min()).rows(0, 2).into_owned(), a);
            for k in 0..=50 {
                let t = seg.t_min() + (seg.t_max() - seg.t_min()) * k as f64 / 50.0;
                let e = energy(&seg.sol.eval(t).rows(0, 2).into_owned(), a);
                assert!((e - e0).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn tangential_start_is_rejected() {
        let (_, sys) = balanced();
        let r = integrate_with_events(
            &sys,
            &v(&[0.5, 0.0]),
            &v(&[0.0]),
            YMode::Frozen,
            (0.0, 1.0),
            &Default::default(),
        );
        assert!(matches!(r, Err(Error::TangentialCrossing { .. })), "{r:?}");
    }

    #[test]
    fn backward_integration_reports_forward_time_events() {
        let (_, sys) = balanced();
        let (u, ud) = u_plus_closed(0.25, 0.5, 8.0).unwrap();
        let traj = integrate_with_events(
            &sys,
            &v(&[u, ud]),
            &v(&[0.0]),
            YMode::Frozen,
            (8.0, -8.0),
            &Default::default(),
        )
        .unwrap();
        assert!(traj.backward);
        assert_eq!(traj.events.len(), 1);
        let e = &traj.events[0];
        assert!(e.t.abs() < 1e-7);
        assert_eq!(
            (e.region_from, e.region_to),
            (RegionIndex(0), RegionIndex(1))
        );
        assert!(traj.segments[0].t_max() <= traj.segments[1].t_min() + 1e-15);
    }

    #[test]
    fn halforbits_meet_closed_form_at_the_anchor() {
        let (p, sys) = balanced();
        let pair = compute_frozen_halforbits(&sys, &v(&[0.0]), &p.orbit_setup()).unwrap();
        let ud = 0.5 * 1.75f64.sqrt() / 6f64.sqrt();
        assert!(
            (&pair.w0_minus - v(&[0.5, ud])).norm() < 1e-8,
            "{}",
            pair.w0_minus
        );
        assert!(
            (&pair.w0_plus - v(&[0.5, ud])).norm() < 1e-8,
            "{}",
            pair.w0_plus
        );
        assert!(pair.t_minus < -10.0 && pair.t_plus > 10.0);
        assert!((pair.u_plus.x(pair.t_plus) - v(&[1.0, 0.0])).norm() <= 1e-9 * 1.0001);
        assert!(pair.u_minus.x(pair.t_minus).norm() <= 1e-9 * 1.0001);
    }

    #[test]
    fn asymptotic_time_examples() {
        let (p, sys) = balanced();
        let mut setup = p.orbit_setup();
        setup.rho_asym = 1e-3;
        let pair = compute_frozen_halforbits(&sys, &v(&[0.0]), &setup).unwrap();
        let w = v(&[1.0, 0.0]);
        let t = asymptotic_time(&pair.u_plus, &w, 1e-3, Side::Plus).unwrap();
        assert!(t.is_finite() && t > 0.0);
        assert!((pair.u_plus.x(t + 5.0) - &w).norm() < 1e-3);

        // sitting on the endpoint: T is the start of the window
        let at_rest = integrate_with_events(
            &sys,
            &w,
            &v(&[0.0]),
            YMode::Frozen,
            (0.0, 3.0),
            &Default::default(),
        )
        .unwrap();
        assert_eq!(
            asymptotic_time(&at_rest, &w, 1e-9, Side::Plus).unwrap(),
            0.0
        );

        // moving away from the endpoint
        let away = integrate_with_events(
            &sys,
            &v(&[1.0 - 1e-4, 0.0]),
            &v(&[0.0]),
            YMode::Frozen,
            (0.0, 3.0),
            &Default::default(),
        )
        .unwrap();
        assert!(matches!(
            asymptotic_time(&away, &w, 1e-9, Side::Plus),
            Err(Error::NotConverged { .. })
        ));
    }
}
