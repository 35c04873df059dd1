//! Melnikov matrix at `eps = 0` in two forms, the rank condition and the
//! search for simple zeros `y_0` when `m = 1`.
//!
//! Boundary form: `M_ji = psi_j(0-)^T d_i w0_minus - psi_j(0+)^T d_i w0_plus`.
//! Integral form: `M_ji = int psi_j(t)^T f_{l,y_i}(u(t), y_0) dt`.
//! The two agree by the pairing identity `d/dt (psi^T v) = psi^T f_y`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::quadrature;
use crate::system::{PiecewiseSlowFastSystem, Side};
use crate::trajectory::{
    compute_frozen_halforbits, FrozenOrbitPair, IntegrationOptions, OrbitSetup,
};
use crate::variational::{
    adjoint_transport, dichotomy_projections, AdjointSolution, DichotomyData, DichotomyOptions,
};

/// Scaling of the psi basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsiNormalization {
    /// `psi(0+) = J udot(0+)` for planar systems with `d = 1`; orthonormal otherwise.
    Natural,
    Orthonormal,
}

#[derive(Debug, Clone)]
pub struct MelnikovSetup {
    pub orbit: OrbitSetup,
    pub dichotomy: DichotomyOptions,
    /// Point of evaluation; searched on `y_range` when absent (`n = 2`, `m = 1` only).
    pub y0: Option<DVector<f64>>,
    pub y_range: Option<(f64, f64)>,
    pub scan_points: usize,
    pub root_tol: f64,
    /// Finite-difference step is `fd_step_rel * max(1, |y0|)`.
    pub fd_step_rel: f64,
    /// Integration used for the stencil orbits; much tighter than the
    /// default since errors are divided by the step.
    pub fd_integration: IntegrationOptions,
    pub quad_abs_tol: f64,
    pub quad_rel_tol: f64,
    pub max_panels: usize,
    pub rank_tol: f64,
    pub normalization: PsiNormalization,
    pub agreement_abs: f64,
    pub agreement_rel: f64,
}

impl MelnikovSetup {
    pub fn new(orbit: OrbitSetup) -> Self {
        Self {
            orbit,
            dichotomy: DichotomyOptions::default(),
            y0: None,
            y_range: None,
            scan_points: 21,
            root_tol: 1e-12,
            fd_step_rel: 1e-5,
            fd_integration: IntegrationOptions::with_tolerances(1e-12, 1e-14),
            quad_abs_tol: 1e-12,
            quad_rel_tol: 1e-10,
            max_panels: 4000,
            rank_tol: 1e-6,
            normalization: PsiNormalization::Natural,
            agreement_abs: 1e-6,
            agreement_rel: 1e-3,
        }
    }

    fn fd_orbit(&self) -> OrbitSetup {
        OrbitSetup {
            integration: self.fd_integration,
            ..self.orbit.clone()
        }
    }
}

/// Outcome of [`rank_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankVerdict {
    pub rank: usize,
    pub d: usize,
    pub m: usize,
    pub singular_values: Vec<f64>,
    pub tol: f64,
    /// Singular values above this count.
    pub threshold: f64,
    /// Same rank at `tol * 10` and `tol / 10`.
    pub stable: bool,
    /// The rank equals `d`.
    pub full_rank: bool,
}

fn numerical_rank(sv: &[f64], tol: f64) -> (usize, f64) {
    let smax = sv.first().copied().unwrap_or(0.0);
    // absolute floor so that round-off in a vanishing matrix is not rank
    let threshold = tol * smax.max(1.0);
    (sv.iter().filter(|&&s| s > threshold).count(), threshold)
}

/// Numerical rank of `m` by singular values above `tol * max(1, sigma_max)`.
pub fn rank_check(m: &DMatrix<f64>, tol: f64) -> RankVerdict {
    let sv = if m.nrows() == 0 || m.ncols() == 0 {
        Vec::new()
    } else {
        linalg::singular_values(m)
    };
    let (rank, threshold) = numerical_rank(&sv, tol);
    let stable =
        numerical_rank(&sv, tol * 10.0).0 == rank && numerical_rank(&sv, tol / 10.0).0 == rank;
    RankVerdict {
        rank,
        d: m.nrows(),
        m: m.ncols(),
        singular_values: sv,
        tol,
        threshold,
        stable,
        full_rank: rank == m.nrows(),
    }
}

/// A located zero of a scalar function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RootResult {
    pub y0: f64,
    pub derivative: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// First sign change of `f` on `points` equally spaced samples of `range`.
pub fn scan_for_bracket<F>(f: &mut F, range: (f64, f64), points: usize) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (a, b) = range;
    let points = points.max(2);
    let mut prev = (a, f(a)?);
    if prev.1 == 0.0 {
        return Ok((a, a));
    }
    let fa = prev.1;
    for i in 1..points {
        let y = a + (b - a) * i as f64 / (points - 1) as f64;
        let fy = f(y)?;
        if fy == 0.0 {
            return Ok((y, y));
        }
        if fy.signum() != prev.1.signum() {
            return Ok((prev.0, y));
        }
        prev = (y, fy);
    }
    Err(Error::NoSignChange {
        a,
        b,
        fa,
        fb: prev.1,
    })
}

/// Safeguarded secant/bisection on a sign-changing bracket, then a central
/// difference derivative at the root.
pub fn find_y0<F>(mut f: F, bracket: (f64, f64), tol: f64) -> Result<RootResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = bracket;
    let (mut fa, mut fb) = (f(a)?, f(b)?);
    let mut iterations = 0;
    let (y0, residual) = if fa == 0.0 {
        (a, 0.0)
    } else if fb == 0.0 {
        (b, 0.0)
    } else {
        if fa.signum() == fb.signum() {
            return Err(Error::NoSignChange { a, b, fa, fb });
        }
        let mut best = if fa.abs() < fb.abs() {
            (a, fa)
        } else {
            (b, fb)
        };
        let mut width = (b - a).abs();
        while iterations < 200 {
            iterations += 1;
            let mut y = b - fb * (b - a) / (fb - fa);
            let lo = a.min(b);
            let hi = a.max(b);
            let new_width = (b - a).abs();
            // bisect when the secant leaves the bracket or stalls
            if !(y > lo && y < hi) || new_width > 0.5 * width {
                y = 0.5 * (a + b);
            }
            width = new_width;
            let fy = f(y)?;
            if fy.abs() < best.1.abs() {
                best = (y, fy);
            }
            if fy.abs() <= tol || (hi - lo) <= 4.0 * f64::EPSILON * y.abs().max(1.0) {
                break;
            }
            if fy.signum() == fa.signum() {
                a = y;
                fa = fy;
            } else {
                b = y;
                fb = fy;
            }
        }
        best
    };
    let h = 1e-5 * y0.abs().max(1.0);
    let derivative = (f(y0 + h)? - f(y0 - h)?) / (2.0 * h);
    if !(derivative.abs() >= 1e-8) {
        return Err(Error::DegenerateRoot { y0, derivative });
    }
    Ok(RootResult {
        y0,
        derivative,
        residual,
        iterations,
    })
}

/// `S(y) = (J f_{to}(w0_plus))^T (w0_minus - w0_plus)` for planar systems.
pub fn splitting_function(pair: &FrozenOrbitPair, system: &PiecewiseSlowFastSystem) -> Result<f64> {
    if system.n != 2 {
        return Err(Error::NotPlanar(system.n));
    }
    let (_, rp) = pair.anchor_regions();
    let up = system.field(rp).eval(&pair.w0_plus, &pair.y);
    Ok((linalg::rotation_j() * up).dot(&pair.gap()))
}

/// Boundary form by central differences of the anchored points `w0^-+(y)`.
///
/// `w0_family(y)` returns `(w0_minus, w0_plus)`; `psi_minus`/`psi_plus` are
/// the adjoint values at `0-` and `0+`, one per row of the result.
pub fn boundary_form<F>(
    w0_family: F,
    psi_minus: &[DVector<f64>],
    psi_plus: &[DVector<f64>],
    y0: &DVector<f64>,
    fd_step: f64,
) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> + Sync,
{
    let m = y0.len();
    let d = psi_plus.len();
    let stencil: Vec<(usize, f64)> = (0..m).flat_map(|i| [(i, fd_step), (i, -fd_step)]).collect();
    let points: Vec<(DVector<f64>, DVector<f64>)> = stencil
        .par_iter()
        .map(|&(i, s)| {
            let mut y = y0.clone();
            y[i] += s;
            w0_family(&y)
        })
        .collect::<Result<_>>()?;
    let mut out = DMatrix::zeros(d, m);
    for i in 0..m {
        let (pm, pp) = (&points[2 * i], &points[2 * i + 1]);
        let dm = (&pm.0 - &pp.0) / (2.0 * fd_step);
        let dp = (&pm.1 - &pp.1) / (2.0 * fd_step);
        for j in 0..d {
            out[(j, i)] = psi_minus[j].dot(&dm) - psi_plus[j].dot(&dp);
        }
    }
    Ok(out)
}

/// Integral form with quadrature and tail diagnostics.
#[derive(Debug, Clone)]
pub struct IntegralForm {
    pub value: DMatrix<f64>,
    /// Estimated quadrature error (norm over entries).
    pub quad_error: f64,
    /// Half-width of the interval covering the neglected tails.
    pub tail_bound: f64,
    /// Fitted decay rates of the integrand at `T_-` and `T_+`.
    pub tail_rates: (f64, f64),
    pub evaluations: usize,
}

/// `psi_j(t)^T f_{l,y}(u(t), y)` stacked row-major over `(j, i)`.
pub fn integrand(
    system: &PiecewiseSlowFastSystem,
    pair: &FrozenOrbitPair,
    adjoints: &[AdjointSolution],
    t: f64,
    side: Side,
) -> DVector<f64> {
    let m = system.m;
    let traj = if t < 0.0 || (t == 0.0 && side == Side::Minus) {
        &pair.u_minus
    } else {
        &pair.u_plus
    };
    let region = traj.region_at(t, side);
    let x = traj.x(t);
    let fy = system.field(region).jac_y(&x, &pair.y);
    let mut out = DVector::zeros(adjoints.len() * m);
    for (j, a) in adjoints.iter().enumerate() {
        let row = a.eval(t, side).transpose() * &fy;
        for i in 0..m {
            out[j * m + i] = row[i];
        }
    }
    out
}

/// Breakpoints `T_-, events, 0, events, T_+` of the piecewise integrand.
fn breakpoints(pair: &FrozenOrbitPair) -> Vec<f64> {
    let mut pts = vec![pair.t_minus];
    pts.extend(
        pair.u_minus
            .events
            .iter()
            .map(|e| e.t)
            .filter(|&t| t > pair.t_minus && t < 0.0),
    );
    pts.push(0.0);
    pts.extend(
        pair.u_plus
            .events
            .iter()
            .map(|e| e.t)
            .filter(|&t| t > 0.0 && t < pair.t_plus),
    );
    pts.push(pair.t_plus);
    pts
}

fn tail_rate(
    system: &PiecewiseSlowFastSystem,
    pair: &FrozenOrbitPair,
    adjoints: &[AdjointSolution],
    t_end: f64,
    inward: f64,
) -> Result<(f64, f64)> {
    let side = if inward > 0.0 {
        Side::Plus
    } else {
        Side::Minus
    };
    let g_end = integrand(system, pair, adjoints, t_end, side).norm();
    if g_end == 0.0 {
        return Ok((f64::INFINITY, 0.0));
    }
    let g_in = integrand(system, pair, adjoints, t_end + 2.0 * inward, side).norm();
    let rate = (g_in / g_end).ln() / 2.0;
    if !(rate > 0.0) {
        return Err(Error::TailNotDecaying { rate });
    }
    Ok((rate, g_end / rate))
}

pub fn integral_form(
    system: &PiecewiseSlowFastSystem,
    pair: &FrozenOrbitPair,
    adjoints: &[AdjointSolution],
    setup: &MelnikovSetup,
) -> Result<IntegralForm> {
    let d = adjoints.len();
    let m = system.m;
    let pts = breakpoints(pair);
    let panels: Vec<(f64, f64)> = pts
        .windows(2)
        .map(|w| (w[0], w[1]))
        .filter(|(a, b)| b > a)
        .collect();
    let results: Vec<quadrature::Quadrature> = panels
        .par_iter()
        .map(|&(a, b)| {
            let side = if b <= 0.0 { Side::Minus } else { Side::Plus };
            quadrature::integrate(
                |t| integrand(system, pair, adjoints, t, side),
                a,
                b,
                setup.quad_abs_tol / panels.len() as f64,
                setup.quad_rel_tol,
                setup.max_panels,
            )
        })
        .collect();
    let mut total = DVector::zeros(d * m);
    let mut quad_error = 0.0;
    let mut evaluations = 0;
    for q in &results {
        total += &q.value;
        quad_error += q.error;
        evaluations += q.evaluations;
    }
    let (rate_minus, tail_minus) = if d * m == 0 {
        (f64::INFINITY, 0.0)
    } else {
        tail_rate(system, pair, adjoints, pair.t_minus, 1.0)?
    };
    let (rate_plus, tail_plus) = if d * m == 0 {
        (f64::INFINITY, 0.0)
    } else {
        tail_rate(system, pair, adjoints, pair.t_plus, -1.0)?
    };
    Ok(IntegralForm {
        value: DMatrix::from_row_slice(d, m, total.as_slice()),
        quad_error,
        tail_bound: tail_minus + tail_plus,
        tail_rates: (rate_minus, rate_plus),
        evaluations,
    })
}

/// Integrand samples for plotting: `count` equally spaced times plus the breakpoints.
pub fn integrand_samples(
    system: &PiecewiseSlowFastSystem,
    pair: &FrozenOrbitPair,
    adjoints: &[AdjointSolution],
    count: usize,
) -> Vec<(f64, usize, DVector<f64>)> {
    let mut ts: Vec<(f64, Side)> = (0..=count)
        .map(|i| {
            let t = pair.t_minus + (pair.t_plus - pair.t_minus) * i as f64 / count.max(1) as f64;
            (t, Side::Plus)
        })
        .collect();
    for t in breakpoints(pair) {
        ts.push((t, Side::Minus));
        ts.push((t, Side::Plus));
    }
    ts.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then((a.1 == Side::Plus).cmp(&(b.1 == Side::Plus)))
    });
    ts.dedup();
    ts.into_iter()
        .filter(|&(t, side)| {
            !(t == pair.t_minus && side == Side::Minus) && !(t == pair.t_plus && side == Side::Plus)
        })
        .map(|(t, side)| {
            let traj = if t < 0.0 || (t == 0.0 && side == Side::Minus) {
                &pair.u_minus
            } else {
                &pair.u_plus
            };
            (
                t,
                traj.region_at(t, side).0,
                integrand(system, pair, adjoints, t, side),
            )
        })
        .collect()
}

pub fn write_integrand_csv<W: Write>(
    w: &mut W,
    samples: &[(f64, usize, DVector<f64>)],
    d: usize,
    m: usize,
) -> std::io::Result<()> {
    write!(w, "t,region")?;
    for j in 0..d {
        for i in 0..m {
            write!(w, ",g_{j}_{i}")?;
        }
    }
    writeln!(w)?;
    for (t, r, g) in samples {
        write!(w, "{t:.17e},{r}")?;
        for v in g.iter() {
            write!(w, ",{v:.17e}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Two-form agreement of the Melnikov matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Agreement {
    pub difference: f64,
    pub tolerance: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MelnikovReport {
    pub schema_version: u32,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub d: usize,
    pub y0: Vec<f64>,
    pub normalization: PsiNormalization,
    /// `psi_j(0+)`, one per row of the matrices.
    pub psi0: Vec<Vec<f64>>,
    pub m_boundary: Vec<Vec<f64>>,
    pub m_integral: Vec<Vec<f64>>,
    pub quad_error: f64,
    pub tail_bound: f64,
    pub agreement: Agreement,
    pub rank: RankVerdict,
    /// Root search details when `y0` was located (`m = 1`).
    pub root: Option<RootResult>,
    /// Derivative of the splitting function at `y0` (`m = 1`, planar).
    #[serde(rename = "dDdy")]
    pub d_d_dy: Option<f64>,
    pub t_minus: f64,
    pub t_plus: f64,
}

impl MelnikovReport {
    /// Both forms agree and the matrix has rank `d` stably.
    pub fn persists(&self) -> bool {
        self.agreement.ok && self.rank.full_rank && self.rank.stable
    }
}

/// Everything computed along the way, for callers that write artifacts.
#[derive(Debug, Clone)]
pub struct MelnikovAnalysis {
    pub report: MelnikovReport,
    pub pair: FrozenOrbitPair,
    pub dichotomy: DichotomyData,
    pub adjoints: Vec<AdjointSolution>,
    pub boundary: DMatrix<f64>,
    pub integral: IntegralForm,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Locates `y_0` from the splitting function on the setup's `y_range`.
pub fn locate_y0(system: &PiecewiseSlowFastSystem, setup: &MelnikovSetup) -> Result<RootResult> {
    if system.n != 2 || system.m != 1 {
        return Err(Error::InvalidInput(format!(
            "y0 must be supplied unless n = 2 and m = 1 (got n = {}, m = {})",
            system.n, system.m
        )));
    }
    let range = setup.y_range.ok_or_else(|| {
        Error::InvalidInput("y0 or a y range for the root search is required".into())
    })?;
    let orbit = setup.fd_orbit();
    let mut s = |y: f64| -> Result<f64> {
        let pair = compute_frozen_halforbits(system, &DVector::from_element(1, y), &orbit)?;
        splitting_function(&pair, system)
    };
    let bracket = scan_for_bracket(&mut s, range, setup.scan_points)?;
    log::debug!(
        "splitting function changes sign on [{}, {}]",
        bracket.0,
        bracket.1
    );
    find_y0(s, bracket, setup.root_tol)
}

/// Psi basis at `0+` in the requested normalization.
fn psi_vectors(
    system: &PiecewiseSlowFastSystem,
    pair: &FrozenOrbitPair,
    dich: &DichotomyData,
    normalization: PsiNormalization,
) -> Vec<DVector<f64>> {
    let basis: Vec<DVector<f64>> = dich
        .psi_basis
        .column_iter()
        .map(|c| c.into_owned())
        .collect();
    if normalization == PsiNormalization::Natural && system.n == 2 && dich.d == 1 {
        let (_, rp) = pair.anchor_regions();
        let up = system.field(rp).eval(&pair.w0_plus, &pair.y);
        let natural = linalg::rotation_j() * up;
        // natural is orthogonal to udot(0+), which spans R Q_+, so it lies in the basis span
        return vec![natural];
    }
    basis
}

/// Full pipeline: orbit pair at `y0`, dichotomy, adjoints, both forms and the rank verdict.
pub fn analyze(
    system: &PiecewiseSlowFastSystem,
    setup: &MelnikovSetup,
) -> Result<MelnikovAnalysis> {
    let (y0, root) = match &setup.y0 {
        Some(y) => {
            if y.len() != system.m {
                return Err(Error::InvalidInput(format!(
                    "y0 has length {}, expected {}",
                    y.len(),
                    system.m
                )));
            }
            (y.clone(), None)
        }
        None => {
            let r = locate_y0(system, setup)?;
            (DVector::from_element(1, r.y0), Some(r))
        }
    };
    let pair = compute_frozen_halforbits(system, &y0, &setup.orbit)?;
    let dich = dichotomy_projections(system, &pair, &setup.dichotomy)?;
    let psis = psi_vectors(system, &pair, &dich, setup.normalization);
    let adjoints: Vec<AdjointSolution> = psis
        .iter()
        .map(|p| adjoint_transport(&dich, p))
        .collect::<Result<_>>()?;
    let psi_minus: Vec<DVector<f64>> = adjoints.iter().map(|a| a.psi0_minus.clone()).collect();

    let fd_step = setup.fd_step_rel * y0.amax().max(1.0);
    let orbit = setup.fd_orbit();
    let family = |y: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>)> {
        let p = compute_frozen_halforbits(system, y, &orbit)?;
        Ok((p.w0_minus, p.w0_plus))
    };
    let (boundary, integral) = rayon::join(
        || boundary_form(family, &psi_minus, &psis, &y0, fd_step),
        || integral_form(system, &pair, &adjoints, setup),
    );
    let (boundary, integral) = (boundary?, integral?);

    let difference = (&boundary - &integral.value).norm();
    let tolerance = setup
        .agreement_abs
        .max(setup.agreement_rel * boundary.norm());
    let agreement = Agreement {
        difference,
        tolerance,
        ok: difference <= tolerance,
    };
    let rank = rank_check(&boundary, setup.rank_tol);
    log::info!(
        "melnikov at y0 = {:?}: d = {}, rank = {}, agreement {:.2e}",
        y0.as_slice(),
        dich.d,
        rank.rank,
        difference
    );
    let d_d_dy = match root {
        Some(r) => Some(r.derivative),
        None if system.n == 2 && system.m == 1 && dich.d == 1 => Some(boundary[(0, 0)]),
        None => None,
    };
    let report = MelnikovReport {
        schema_version: crate::SCHEMA_VERSION,
        n: system.n,
        m: system.m,
        k: dich.k,
        d: dich.d,
        y0: y0.iter().copied().collect(),
        normalization: setup.normalization,
        psi0: psis.iter().map(|p| p.iter().copied().collect()).collect(),
        m_boundary: rows(&boundary),
        m_integral: rows(&integral.value),
        quad_error: integral.quad_error,
        tail_bound: integral.tail_bound,
        agreement,
        rank,
        root,
        d_d_dy,
        t_minus: pair.t_minus,
        t_plus: pair.t_plus,
    };
    Ok(MelnikovAnalysis {
        report,
        pair,
        dichotomy: dich,
        adjoints,
        boundary,
        integral,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        let r = rank_check(&DMatrix::from_element(1, 1, 0.00833), 1e-6);
        assert_eq!(r.rank, 1);
        assert!(r.full_rank && r.stable);
        let r = rank_check(&DMatrix::zeros(1, 1), 1e-6);
        assert_eq!(r.rank, 0);
        assert!(!r.full_rank);
        let r = rank_check(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]), 1e-6);
        assert_eq!(r.rank, 1);
        assert!(!r.full_rank);
    }

    #[test]
    fn rank_flagged_unstable_near_threshold() {
        let r = rank_check(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3e-6]), 1e-6);
        assert_eq!(r.rank, 2);
        assert!(!r.stable);
    }

    #[test]
    fn root_examples() {
        let r = find_y0(|y| Ok(0.05 * y.tanh()), (-1.0, 1.0), 1e-12).unwrap();
        assert!(r.y0.abs() < 1e-12);
        assert!((r.derivative - 0.05).abs() < 1e-9);
        assert!(matches!(
            find_y0(|y| Ok(y * y), (-1.0, 1.0), 1e-12),
            Err(Error::NoSignChange { .. })
        ));
        assert!(matches!(
            find_y0(|y| Ok(y * y * y), (-1.0, 1.0), 1e-12),
            Err(Error::DegenerateRoot { .. })
        ));
        let mut f = |y: f64| Ok(y * y - 0.3);
        let br = scan_for_bracket(&mut f, (0.0, 1.0), 21).unwrap();
        let r = find_y0(f, br, 1e-12).unwrap();
        assert!((r.y0 - 0.3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn boundary_form_of_inert_coordinate_is_zero() {
        // w0 depends on y_1 only
        let fam = |y: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>)> {
            Ok((
                DVector::from_vec(vec![y[0].sin(), 0.0]),
                DVector::from_vec(vec![0.0, y[0] * y[0]]),
            ))
        };
        let psi = vec![DVector::from_vec(vec![1.0, 2.0])];
        let m = boundary_form(fam, &psi, &psi, &DVector::from_vec(vec![0.5, -0.2]), 1e-5).unwrap();
        assert!((m[(0, 0)] - (0.5f64.cos() - 2.0)).abs() < 1e-9);
        assert_eq!(m[(0, 1)], 0.0);
    }
}
