//! Saltation matrices, piecewise fundamental matrices, the dichotomy
//! projections at `t = 0` and bounded solutions of the adjoint system.
//!
//! Subspaces are always transported in the direction in which they attract:
//! stable directions of `w_+` backward from `T_+`, unstable directions of
//! `w_-` forward from `T_-`, and the matching adjoint subspaces the same way.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::ode::{self, DenseSolution, StepControl};
use crate::system::{serialize_matrix, PiecewiseSlowFastSystem, RegionIndex, Side};
use crate::trajectory::{CrossingEvent, FrozenOrbitPair, PiecewiseTrajectory};

/// Jump operator `B = I - (udot_minus - udot_plus) hx^T / (hx . udot_minus)`
/// relating variational solutions across a crossing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaltationMatrix {
    #[serde(serialize_with = "serialize_matrix")]
    pub b: DMatrix<f64>,
    pub hx: Vec<f64>,
    pub udot_minus: Vec<f64>,
    pub udot_plus: Vec<f64>,
    /// Crossing time, when built from an event.
    pub t: Option<f64>,
}

impl SaltationMatrix {
    fn parts(&self) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        (
            DVector::from_column_slice(&self.hx),
            DVector::from_column_slice(&self.udot_minus),
            DVector::from_column_slice(&self.udot_plus),
        )
    }

    /// `B^{-1} = I + (udot_minus - udot_plus) hx^T / (hx . udot_plus)`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let (hx, um, up) = self.parts();
        let n = hx.len();
        DMatrix::identity(n, n) + (&um - &up) * hx.transpose() / hx.dot(&up)
    }

    /// `det B = (hx . udot_plus) / (hx . udot_minus)`.
    pub fn expected_determinant(&self) -> f64 {
        let (hx, um, up) = self.parts();
        hx.dot(&up) / hx.dot(&um)
    }

    pub fn is_identity(&self) -> bool {
        self.udot_minus == self.udot_plus
    }
}

/// Builds the saltation matrix of a crossing with normal `hx`.
pub fn saltation(
    hx: &DVector<f64>,
    udot_minus: &DVector<f64>,
    udot_plus: &DVector<f64>,
    eta: f64,
) -> Result<SaltationMatrix> {
    let rm = hx.dot(udot_minus);
    let rp = hx.dot(udot_plus);
    if !(rm.abs() > eta) {
        return Err(Error::TangentialData { rate: rm, eta });
    }
    // B must be invertible, which needs the outgoing rate nonzero too
    if !(rp.abs() > eta) {
        return Err(Error::TangentialData { rate: rp, eta });
    }
    let n = hx.len();
    let b = DMatrix::identity(n, n) - (udot_minus - udot_plus) * hx.transpose() / rm;
    Ok(SaltationMatrix {
        b,
        hx: hx.iter().copied().collect(),
        udot_minus: udot_minus.iter().copied().collect(),
        udot_plus: udot_plus.iter().copied().collect(),
        t: None,
    })
}

/// Saltation matrix of a recorded crossing of the frozen system.
pub fn event_saltation(
    system: &PiecewiseSlowFastSystem,
    e: &CrossingEvent,
) -> Result<SaltationMatrix> {
    let x = e.point();
    let y = e.y_point();
    let hx = system.switching.h.grad_x(&x, &y);
    let um = system.field(e.region_from).eval(&x, &y);
    let up = system.field(e.region_to).eval(&x, &y);
    let mut s = saltation(&hx, &um, &up, system.switching.eta)?;
    s.t = Some(e.t);
    Ok(s)
}

/// Jump at the anchor when the section `t = 0` is itself a switching surface,
/// i.e. when the two half-orbits end in different regions.
pub fn anchor_saltation(
    system: &PiecewiseSlowFastSystem,
    pair: &FrozenOrbitPair,
) -> Result<Option<SaltationMatrix>> {
    let (rm, rp) = pair.anchor_regions();
    if rm == rp {
        return Ok(None);
    }
    let y = &pair.y;
    let hx = system.switching.h.grad_x(&pair.w0_plus, y);
    let um = system.field(rm).eval(&pair.w0_minus, y);
    let up = system.field(rp).eval(&pair.w0_plus, y);
    let mut s = saltation(&hx, &um, &up, system.switching.eta)?;
    s.t = Some(0.0);
    Ok(Some(s))
}

/// Which linear system is transported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    /// `Z' = A(t) Z`, jumps `Z <- B Z` forward.
    Variational,
    /// `Z' = -A(t)^T Z`, jumps `Z <- B^{-T} Z` forward.
    Adjoint,
    /// Scalar `z' = tr A(t)`, continuous.
    Trace,
}

#[derive(Debug, Clone)]
struct TransportPiece {
    region: RegionIndex,
    sol: DenseSolution,
}

/// Matrix solution of a linear system along a piecewise trajectory, with
/// the jumps applied at crossings. Pieces are sorted by time.
#[derive(Debug, Clone)]
pub struct LinearTransport {
    pub kind: TransportKind,
    pub n: usize,
    pub cols: usize,
    pieces: Vec<TransportPiece>,
    /// `(t, B)` for every crossing inside the interval, sorted by time.
    pub jumps: Vec<(f64, SaltationMatrix)>,
    pub t_from: f64,
    pub t_to: f64,
}

impl LinearTransport {
    pub fn t_min(&self) -> f64 {
        self.t_from.min(self.t_to)
    }

    pub fn t_max(&self) -> f64 {
        self.t_from.max(self.t_to)
    }

    fn piece_at(&self, t: f64, side: Side) -> &TransportPiece {
        let idx = match side {
            Side::Plus => self.pieces.partition_point(|p| p.sol.t_max() <= t),
            Side::Minus => self.pieces.partition_point(|p| p.sol.t_max() < t),
        };
        &self.pieces[idx.min(self.pieces.len() - 1)]
    }

    /// Region of the trajectory under the piece containing `t`.
    pub fn region_at(&self, t: f64, side: Side) -> RegionIndex {
        self.piece_at(t, side).region
    }

    /// `Z(t)`, one-sided at jump times, clamped to the computed interval.
    pub fn eval(&self, t: f64, side: Side) -> DMatrix<f64> {
        let z = self.piece_at(t, side).sol.eval(t);
        DMatrix::from_column_slice(self.n, self.cols, z.as_slice())
    }

    /// `Z` at the end of the transport.
    pub fn end(&self) -> DMatrix<f64> {
        let side = if self.t_to >= self.t_from {
            Side::Plus
        } else {
            Side::Minus
        };
        self.eval(self.t_to, side)
    }
}

/// `A(t) = f_{l,x}(x(t), y(t))` on the segment of `traj` covering `t`.
fn jacobian_on(
    system: &PiecewiseSlowFastSystem,
    traj: &PiecewiseTrajectory,
    seg: usize,
    t: f64,
) -> DMatrix<f64> {
    let s = &traj.segments[seg];
    let z = s.sol.eval(t);
    let x = z.rows(0, traj.n).into_owned();
    let y = z.rows(traj.n, traj.m).into_owned();
    system.field(s.region).jac_x(&x, &y)
}

/// Index of the segment whose interior contains `(a, b)`.
fn segment_index(traj: &PiecewiseTrajectory, a: f64, b: f64) -> usize {
    let mid = 0.5 * (a + b);
    traj.segments
        .partition_point(|s| s.t_max() <= mid)
        .min(traj.segments.len() - 1)
}

/// Transports `z0` (an `n x cols` matrix, or a `1 x 1` zero for
/// [`TransportKind::Trace`]) from `t_from` to `t_to` along `traj`.
pub fn transport(
    system: &PiecewiseSlowFastSystem,
    traj: &PiecewiseTrajectory,
    z0: &DMatrix<f64>,
    t_from: f64,
    t_to: f64,
    kind: TransportKind,
    control: &StepControl,
) -> Result<LinearTransport> {
    let n = traj.n;
    let (rows, cols) = z0.shape();
    if kind != TransportKind::Trace && rows != n {
        return Err(Error::InvalidInput(
            "transported matrix must have n rows".into(),
        ));
    }
    let lo = traj.t_min() - 1e-9 * traj.t_min().abs().max(1.0);
    let hi = traj.t_max() + 1e-9 * traj.t_max().abs().max(1.0);
    if t_from < lo || t_from > hi || t_to < lo || t_to > hi {
        return Err(Error::InvalidInput(format!(
            "transport interval [{t_from}, {t_to}] outside trajectory [{}, {}]",
            traj.t_min(),
            traj.t_max()
        )));
    }
    let forward = t_to >= t_from;
    let (a, b) = if forward {
        (t_from, t_to)
    } else {
        (t_to, t_from)
    };
    let mut events: Vec<&CrossingEvent> =
        traj.events.iter().filter(|e| e.t > a && e.t < b).collect();
    if !forward {
        events.reverse();
    }

    let mut pieces = Vec::new();
    let mut jumps = Vec::new();
    let mut z = DVector::from_column_slice(z0.as_slice());
    let mut t = t_from;
    let mut stops: Vec<f64> = events.iter().map(|e| e.t).collect();
    stops.push(t_to);
    for (i, &t_next) in stops.iter().enumerate() {
        let seg = segment_index(traj, t, t_next);
        let rhs = |s: f64, v: &DVector<f64>| -> DVector<f64> {
            let a_mat = jacobian_on(system, traj, seg, s);
            match kind {
                TransportKind::Variational => {
                    let zm = DMatrix::from_column_slice(n, cols, v.as_slice());
                    DVector::from_column_slice((a_mat * zm).as_slice())
                }
                TransportKind::Adjoint => {
                    let zm = DMatrix::from_column_slice(n, cols, v.as_slice());
                    DVector::from_column_slice((-a_mat.transpose() * zm).as_slice())
                }
                TransportKind::Trace => DVector::from_element(v.len(), a_mat.trace()),
            }
        };
        let sol = ode::integrate(rhs, t, z.clone(), t_next, *control)?;
        z = sol.end_state();
        pieces.push(TransportPiece {
            region: traj.segments[seg].region,
            sol,
        });
        t = t_next;
        if let Some(e) = events.get(i) {
            let s = event_saltation(system, e)?;
            if kind != TransportKind::Trace {
                let zm = DMatrix::from_column_slice(n, cols, z.as_slice());
                let jumped = match (kind, forward) {
                    (TransportKind::Variational, true) => &s.b * zm,
                    (TransportKind::Variational, false) => s.inverse() * zm,
                    (TransportKind::Adjoint, true) => s.inverse().transpose() * zm,
                    (TransportKind::Adjoint, false) => s.b.transpose() * zm,
                    (TransportKind::Trace, _) => unreachable!(),
                };
                z = DVector::from_column_slice(jumped.as_slice());
            }
            jumps.push((e.t, s));
        }
    }
    if !forward {
        pieces.reverse();
        jumps.reverse();
    }
    Ok(LinearTransport {
        kind,
        n: rows,
        cols,
        pieces,
        jumps,
        t_from,
        t_to,
    })
}

/// `X_+(t)` on `[0, t_end]` (right-continuous) or `X_-(t)` on `[t_end, 0]`
/// (left-continuous), with `X(0) = I`.
#[derive(Debug, Clone)]
pub struct PiecewiseFundamental {
    pub side: Side,
    pub transport: LinearTransport,
}

impl PiecewiseFundamental {
    /// One-sided value at jump times; the default side is the one facing `t = 0`.
    pub fn at(&self, t: f64, side: Side) -> DMatrix<f64> {
        self.transport.eval(t, side)
    }

    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        self.transport.eval(t, self.side)
    }

    pub fn jumps(&self) -> &[(f64, SaltationMatrix)] {
        &self.transport.jumps
    }
}

pub fn fundamental_matrix(
    system: &PiecewiseSlowFastSystem,
    traj: &PiecewiseTrajectory,
    side: Side,
    t_end: f64,
    control: &StepControl,
) -> Result<PiecewiseFundamental> {
    match side {
        Side::Plus if t_end < 0.0 => {
            return Err(Error::InvalidInput("plus side needs t_end >= 0".into()))
        }
        Side::Minus if t_end > 0.0 => {
            return Err(Error::InvalidInput("minus side needs t_end <= 0".into()))
        }
        _ => {}
    }
    let n = traj.n;
    let transport = transport(
        system,
        traj,
        &DMatrix::identity(n, n),
        0.0,
        t_end,
        TransportKind::Variational,
        control,
    )?;
    Ok(PiecewiseFundamental { side, transport })
}

/// Singular-value thresholds for deciding `d`.
#[derive(Debug, Clone, Copy)]
pub struct DichotomyOptions {
    /// Singular values at or below this count as zero.
    pub null_tol: f64,
    /// Singular values at or above this count as nonzero; in between is ambiguous.
    pub range_tol: f64,
    pub control: StepControl,
}

impl Default for DichotomyOptions {
    fn default() -> Self {
        Self {
            null_tol: 1e-8,
            range_tol: 1e-6,
            control: StepControl::default(),
        }
    }
}

/// Projections at `t = 0`, `d` and the basis of `[R Q_+ + N Q_-]^perp`.
///
/// `Q_+` is the orthogonal projection onto the transported stable subspace
/// and `Q_-` the complementary orthogonal projection to the transported
/// unstable subspace. `q_minus` lives at `0-`, `q_minus_tilde` at `0+`
/// (they differ only when the anchor is a switching surface).
#[derive(Debug, Clone)]
pub struct DichotomyData {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub q_plus: DMatrix<f64>,
    pub q_minus: DMatrix<f64>,
    pub q_minus_tilde: DMatrix<f64>,
    /// Orthonormal basis of `R Q_+` at `0+`.
    pub range_plus: DMatrix<f64>,
    /// Orthonormal basis of `N Q_-` at `0-`.
    pub null_minus: DMatrix<f64>,
    /// Orthonormal basis of `N Q_-` carried to `0+`.
    pub null_minus_tilde: DMatrix<f64>,
    /// `n x d`, orthonormal, at `0+`.
    pub psi_basis: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub anchor_jump: Option<SaltationMatrix>,
    /// Fitted constants of `|X(t) xi| <= K exp(-delta |t|) |xi|` on both sides.
    pub k_const: f64,
    pub delta: f64,
    pub t_minus: f64,
    pub t_plus: f64,
    /// Stable basis transported from `T_+` back to `0+`.
    pub stable_transport: Arc<LinearTransport>,
    /// Unstable basis transported from `T_-` forward to `0-`.
    pub unstable_transport: Arc<LinearTransport>,
    /// Bounded-adjoint bases: plus side from `T_+` back to `0+`.
    pub adjoint_plus: Arc<LinearTransport>,
    /// Minus side from `T_-` forward to `0-`.
    pub adjoint_minus: Arc<LinearTransport>,
}

/// JSON view of [`DichotomyData`].
#[derive(Debug, Clone, Serialize)]
pub struct DichotomyReport {
    pub schema_version: u32,
    pub n: usize,
    pub k: usize,
    pub d: usize,
    #[serde(rename = "K")]
    pub k_const: f64,
    pub delta: f64,
    pub t_minus: f64,
    pub t_plus: f64,
    pub singular_values: Vec<f64>,
    /// Columns of the psi basis, one per entry.
    pub psi_basis: Vec<Vec<f64>>,
    #[serde(serialize_with = "serialize_matrix")]
    pub q_plus: DMatrix<f64>,
    #[serde(serialize_with = "serialize_matrix")]
    pub q_minus: DMatrix<f64>,
    pub anchor_jump: Option<SaltationMatrix>,
}

impl DichotomyData {
    pub fn report(&self) -> DichotomyReport {
        DichotomyReport {
            schema_version: crate::SCHEMA_VERSION,
            n: self.n,
            k: self.k,
            d: self.d,
            k_const: self.k_const,
            delta: self.delta,
            t_minus: self.t_minus,
            t_plus: self.t_plus,
            singular_values: self.singular_values.clone(),
            psi_basis: columns(&self.psi_basis),
            q_plus: self.q_plus.clone(),
            q_minus: self.q_minus.clone(),
            anchor_jump: self.anchor_jump.clone(),
        }
    }

    /// `B_0^T psi`, the value at `0-` of an adjoint solution with value `psi` at `0+`.
    pub fn psi_at_minus(&self, psi: &DVector<f64>) -> DVector<f64> {
        match &self.anchor_jump {
            Some(b) => b.b.transpose() * psi,
            None => psi.clone(),
        }
    }

    /// The variational solution `X_+(t) xi` for `xi` in `R Q_+`, `t in [0, T_+]`.
    pub fn stable_solution(&self, xi: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        let z0 = self.stable_transport.eval(0.0, Side::Plus);
        let (c, resid) = linalg::least_squares(&z0, xi);
        if resid > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "vector not in R Q_+ (residual {resid:e})"
            )));
        }
        Ok(self.stable_transport.eval(t, Side::Plus) * c)
    }
}

pub(crate) fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter()
        .map(|c| c.iter().copied().collect())
        .collect()
}

/// Least-squares slope fit of `log g(t)` against `|t|`, returning `(K, delta)`.
fn fit_decay(samples: &[(f64, f64)]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(_, g)| *g > 0.0 && g.is_finite())
        .map(|&(t, g)| (t.abs(), g.ln()))
        .collect();
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let np = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / np;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / np;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let delta = -sxy / sxx;
    let k = pts
        .iter()
        .map(|&(t, l)| (l + delta * t).exp())
        .fold(0.0, f64::max);
    (k, delta)
}

/// Operator-norm growth `|Z(t) Z(0)^+|` of a transported basis.
fn growth_samples(
    tr: &LinearTransport,
    t0: f64,
    t_far: f64,
    side: Side,
    count: usize,
) -> Vec<(f64, f64)> {
    let z0 = tr.eval(t0, side);
    let pinv = z0
        .clone()
        .pseudo_inverse(1e-300)
        .unwrap_or_else(|_| z0.transpose());
    (0..=count)
        .map(|i| {
            let t = t0 + (t_far - t0) * i as f64 / count as f64;
            let g = linalg::singular_values(&(tr.eval(t, side) * &pinv))
                .first()
                .copied()
                .unwrap_or(0.0);
            (t, g)
        })
        .collect()
}

/// Builds `Q_+-`, `d` and the psi basis for a frozen pair at `y_0`.
pub fn dichotomy_projections(
    system: &PiecewiseSlowFastSystem,
    pair: &FrozenOrbitPair,
    opts: &DichotomyOptions,
) -> Result<DichotomyData> {
    let n = system.n;
    let ep = &pair.endpoint_plus;
    let em = &pair.endpoint_minus;
    if ep.k != em.k {
        return Err(Error::InvalidInput(format!(
            "stable dimensions differ at the endpoints ({} and {})",
            em.k, ep.k
        )));
    }
    let k = ep.k;
    let (t_minus, t_plus) = (pair.t_minus, pair.t_plus);
    let ctl = &opts.control;

    let stable = ep.stable_basis();
    let unstable = em.unstable_basis();
    let ident = DMatrix::<f64>::identity(n, n);
    let adj_plus0 = linalg::leading_range_basis(&(&ident - ep.p0.transpose()), n - k);
    let adj_minus0 = linalg::leading_range_basis(&em.p0.transpose(), k);

    let ((st, ut), (ap, am)) = rayon::join(
        || {
            rayon::join(
                || {
                    transport(
                        system,
                        &pair.u_plus,
                        &stable,
                        t_plus,
                        0.0,
                        TransportKind::Variational,
                        ctl,
                    )
                },
                || {
                    transport(
                        system,
                        &pair.u_minus,
                        &unstable,
                        t_minus,
                        0.0,
                        TransportKind::Variational,
                        ctl,
                    )
                },
            )
        },
        || {
            rayon::join(
                || {
                    transport(
                        system,
                        &pair.u_plus,
                        &adj_plus0,
                        t_plus,
                        0.0,
                        TransportKind::Adjoint,
                        ctl,
                    )
                },
                || {
                    transport(
                        system,
                        &pair.u_minus,
                        &adj_minus0,
                        t_minus,
                        0.0,
                        TransportKind::Adjoint,
                        ctl,
                    )
                },
            )
        },
    );
    let (st, ut, ap, am) = (st?, ut?, ap?, am?);

    let range_plus = orthonormal(&st.eval(0.0, Side::Plus), k)?;
    let null_minus = orthonormal(&ut.eval(0.0, Side::Minus), n - k)?;
    let anchor_jump = anchor_saltation(system, pair)?;
    let null_minus_tilde = match &anchor_jump {
        Some(b) => orthonormal(&(&b.b * &null_minus), n - k)?,
        None => null_minus.clone(),
    };

    let q_plus = linalg::orthogonal_projector(&range_plus);
    let q_minus = &ident - linalg::orthogonal_projector(&null_minus);
    let q_minus_tilde = &ident - linalg::orthogonal_projector(&null_minus_tilde);

    // psi^T Q_+ = 0 and psi^T (I - Q_-~) = 0
    let mut stacked = DMatrix::zeros(2 * n, n);
    stacked.rows_mut(0, n).copy_from(&q_plus.transpose());
    stacked
        .rows_mut(n, n)
        .copy_from(&(&ident - &q_minus_tilde).transpose());
    let (v, sv) = linalg::svd_right(&stacked);
    let mut d = 0;
    for &s in sv.iter().rev() {
        if s <= opts.null_tol {
            d += 1;
        } else if s < opts.range_tol {
            return Err(Error::RankDeficient {
                sigma: s,
                threshold: opts.null_tol,
            });
        } else {
            break;
        }
    }
    let psi_basis = v.columns(n - d, d).into_owned();

    let mut samples = growth_samples(&st, 0.0, t_plus, Side::Plus, 60);
    samples.extend(growth_samples(&ut, 0.0, t_minus, Side::Minus, 60));
    let (k_const, delta) = fit_decay(&samples);

    Ok(DichotomyData {
        n,
        k,
        d,
        q_plus,
        q_minus,
        q_minus_tilde,
        range_plus,
        null_minus,
        null_minus_tilde,
        psi_basis,
        singular_values: sv,
        anchor_jump,
        k_const,
        delta,
        t_minus,
        t_plus,
        stable_transport: Arc::new(st),
        unstable_transport: Arc::new(ut),
        adjoint_plus: Arc::new(ap),
        adjoint_minus: Arc::new(am),
    })
}

fn orthonormal(m: &DMatrix<f64>, expected: usize) -> Result<DMatrix<f64>> {
    let sv = linalg::singular_values(m);
    let smax = sv.first().copied().unwrap_or(0.0);
    if expected > 0 {
        let smin = sv[expected - 1];
        if !(smin > 1e-12 * smax) {
            return Err(Error::RankDeficient {
                sigma: smin / smax.max(f64::MIN_POSITIVE),
                threshold: 1e-12,
            });
        }
    }
    Ok(linalg::leading_range_basis(m, expected))
}

// built a handful of times per analysis
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
enum AdjointRepr {
    Transport {
        plus: Arc<LinearTransport>,
        c_plus: DVector<f64>,
        minus: Arc<LinearTransport>,
        c_minus: DVector<f64>,
    },
    Planar {
        system: PiecewiseSlowFastSystem,
        u_minus: PiecewiseTrajectory,
        u_plus: PiecewiseTrajectory,
        trace_minus: LinearTransport,
        trace_plus: LinearTransport,
        /// `(t_lo, t_hi, mu)` in time order.
        mu_segments: Vec<(f64, f64, f64)>,
    },
}

/// Bounded solution of the adjoint system on `[T_-, T_+]`, with the jump
/// `psi(0-) = B_0^T psi(0+)` at a switching anchor.
#[derive(Debug, Clone)]
pub struct AdjointSolution {
    /// Value at `0+`.
    pub psi0: DVector<f64>,
    /// Value at `0-`.
    pub psi0_minus: DVector<f64>,
    /// Jump constants of the planar closed form, in time order; empty otherwise.
    pub mu: Vec<f64>,
    pub t_minus: f64,
    pub t_plus: f64,
    repr: AdjointRepr,
}

impl AdjointSolution {
    /// `psi(t)`; at `t = 0` and at crossings `side` selects the one-sided value.
    pub fn eval(&self, t: f64, side: Side) -> DVector<f64> {
        let on_minus = t < 0.0 || (t == 0.0 && side == Side::Minus);
        match &self.repr {
            AdjointRepr::Transport {
                plus,
                c_plus,
                minus,
                c_minus,
            } => {
                if on_minus {
                    minus.eval(t, side) * c_minus
                } else {
                    plus.eval(t, side) * c_plus
                }
            }
            AdjointRepr::Planar {
                system,
                u_minus,
                u_plus,
                trace_minus,
                trace_plus,
                mu_segments,
            } => {
                let (traj, trace) = if on_minus {
                    (u_minus, trace_minus)
                } else {
                    (u_plus, trace_plus)
                };
                let udot = traj.velocity(system, t, side);
                let theta = trace.eval(t, side)[(0, 0)];
                let mu = mu_at(mu_segments, t, side);
                let jv = linalg::rotation_j() * udot;
                jv * (mu * (-theta).exp())
            }
        }
    }

    /// `psi(t)^T v` pairing helper.
    pub fn pair_with(&self, t: f64, side: Side, v: &DVector<f64>) -> f64 {
        self.eval(t, side).dot(v)
    }
}

fn mu_at(segments: &[(f64, f64, f64)], t: f64, side: Side) -> f64 {
    let idx = match side {
        Side::Plus => segments.partition_point(|s| s.1 <= t),
        Side::Minus => segments.partition_point(|s| s.1 < t),
    };
    segments[idx.min(segments.len() - 1)].2
}

/// The bounded adjoint solution with `psi(0+) = psi`, which must lie in the
/// span of the dichotomy's psi basis.
pub fn adjoint_transport(dich: &DichotomyData, psi: &DVector<f64>) -> Result<AdjointSolution> {
    let norm = psi.norm();
    if !(norm > 0.0) {
        return Err(Error::NotInComplement { residual: f64::NAN });
    }
    let in_basis = if dich.d == 0 {
        1.0
    } else {
        let proj = &dich.psi_basis * (dich.psi_basis.transpose() * psi);
        (psi - proj).norm() / norm
    };
    if in_basis > 1e-6 {
        return Err(Error::NotInComplement { residual: in_basis });
    }
    let (c_plus, rp) = linalg::least_squares(&dich.adjoint_plus.eval(0.0, Side::Plus), psi);
    let psi_minus = dich.psi_at_minus(psi);
    let (c_minus, rm) =
        linalg::least_squares(&dich.adjoint_minus.eval(0.0, Side::Minus), &psi_minus);
    if rp.max(rm) > 1e-6 {
        return Err(Error::NotInComplement {
            residual: rp.max(rm),
        });
    }
    Ok(AdjointSolution {
        psi0: psi.clone(),
        psi0_minus: psi_minus,
        mu: Vec::new(),
        t_minus: dich.t_minus,
        t_plus: dich.t_plus,
        repr: AdjointRepr::Transport {
            plus: dich.adjoint_plus.clone(),
            c_plus,
            minus: dich.adjoint_minus.clone(),
            c_minus,
        },
    })
}

/// Planar closed form `psi(t) = mu_l exp(-int_0^t tr A) J udot(t)`, with
/// `mu = 1` on the segment starting at `0+` and the jump constants
/// `mu_l |udot(t_l+)|^2 = mu_{l-1} <B_l^{-T} J udot(t_l-), J udot(t_l+)>`.
pub fn adjoint_2d_closed_form(
    system: &PiecewiseSlowFastSystem,
    pair: &FrozenOrbitPair,
    control: &StepControl,
) -> Result<AdjointSolution> {
    if system.n != 2 {
        return Err(Error::NotPlanar(system.n));
    }
    let zero = DMatrix::zeros(1, 1);
    let trace_plus = transport(
        system,
        &pair.u_plus,
        &zero,
        0.0,
        pair.t_plus,
        TransportKind::Trace,
        control,
    )?;
    let trace_minus = transport(
        system,
        &pair.u_minus,
        &zero,
        0.0,
        pair.t_minus,
        TransportKind::Trace,
        control,
    )?;
    let j = linalg::rotation_j();

    // crossings in time order, with the anchor jump among them
    let mut jumps: Vec<SaltationMatrix> = Vec::new();
    for e in &pair.u_minus.events {
        jumps.push(event_saltation(system, e)?);
    }
    let anchor = anchor_saltation(system, pair)?;
    let anchor_index = jumps.len();
    if let Some(b) = &anchor {
        jumps.push(b.clone());
    }
    for e in &pair.u_plus.events {
        jumps.push(event_saltation(system, e)?);
    }
    let ratio = |s: &SaltationMatrix| -> f64 {
        let um = DVector::from_column_slice(&s.udot_minus);
        let up = DVector::from_column_slice(&s.udot_plus);
        let lhs = s.inverse().transpose() * (&j * um);
        lhs.dot(&(&j * &up)) / up.norm_squared()
    };
    // mu on the segments, which are separated by the jumps
    let mut mu = vec![1.0; jumps.len() + 1];
    let ref_seg = anchor_index + usize::from(anchor.is_some());
    for i in ref_seg..jumps.len() {
        mu[i + 1] = mu[i] * ratio(&jumps[i]);
    }
    for i in (0..ref_seg).rev() {
        mu[i] = mu[i + 1] / ratio(&jumps[i]);
    }
    let mut bounds: Vec<f64> = vec![f64::NEG_INFINITY];
    bounds.extend(jumps.iter().map(|s| s.t.unwrap_or(0.0)));
    bounds.push(f64::INFINITY);
    let mu_segments: Vec<(f64, f64, f64)> = (0..mu.len())
        .map(|i| (bounds[i], bounds[i + 1], mu[i]))
        .collect();

    let (rm, rp) = pair.anchor_regions();
    let up0 = system.field(rp).eval(&pair.w0_plus, &pair.y);
    let um0 = system.field(rm).eval(&pair.w0_minus, &pair.y);
    let psi0 = &j * up0;
    let psi0_minus = &j * um0 * mu[anchor_index];
    Ok(AdjointSolution {
        psi0,
        psi0_minus,
        mu,
        t_minus: pair.t_minus,
        t_plus: pair.t_plus,
        repr: AdjointRepr::Planar {
            system: system.clone(),
            u_minus: pair.u_minus.clone(),
            u_plus: pair.u_plus.clone(),
            trace_minus,
            trace_plus,
            mu_segments,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duffing::DuffingParams;
    use crate::trajectory::compute_frozen_halforbits;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn demo_pair() -> (PiecewiseSlowFastSystem, FrozenOrbitPair) {
        let p = DuffingParams::demo();
        let sys = p.as_system();
        let pair = compute_frozen_halforbits(&sys, &v(&[0.0]), &p.orbit_setup()).unwrap();
        (sys, pair)
    }

    #[test]
    fn duffing_switch_saltation() {
        // x1 = 1/2 with a_- = 3/4, a_+ = 1/4 and udot = (s, +-1/16)
        let s = 0.5 * 1.75f64.sqrt() / 6f64.sqrt();
        let b = saltation(&v(&[1.0, 0.0]), &v(&[s, 0.0625]), &v(&[s, -0.0625]), 1e-6).unwrap();
        assert!((b.b[(1, 0)] + 0.125 / s).abs() < 1e-12);
        assert!((b.b[(1, 0)] + 0.46292).abs() < 1e-5);
        assert!((b.b.determinant() - 1.0).abs() < 1e-14);
        assert!((&b.b * b.inverse() - DMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn tangential_data_rejected() {
        let r = saltation(&v(&[1.0, 0.0]), &v(&[1e-9, 1.0]), &v(&[1.0, 0.0]), 1e-6);
        assert!(matches!(r, Err(Error::TangentialData { .. })));
    }

    proptest! {
        #[test]
        fn saltation_identities(
            hx in prop::collection::vec(-2.0f64..2.0, 3),
            um in prop::collection::vec(-2.0f64..2.0, 3),
            up in prop::collection::vec(-2.0f64..2.0, 3),
        ) {
            let (hx, um, up) = (v(&hx), v(&um), v(&up));
            prop_assume!(hx.dot(&um).abs() > 0.05 && hx.dot(&up).abs() > 0.05);
            let b = saltation(&hx, &um, &up, 1e-6).unwrap();
            let scale = 1.0 + b.b.norm() * um.norm();
            prop_assert!((&b.b * &um - &up).norm() <= 1e-12 * scale);
            let det = b.b.determinant();
            prop_assert!((det - b.expected_determinant()).abs() <= 1e-12 * (1.0 + b.b.norm().powi(3)));
            let id = &b.b * b.inverse();
            prop_assert!((id - DMatrix::identity(3, 3)).norm() <= 1e-11 * (1.0 + b.b.norm() * b.inverse().norm()));
            // B^T maps tangent covectors: (B^T p) . v = p . (B v) for v tangent to the surface
            let t = crate::linalg::complement_basis(&DMatrix::from_column_slice(3, 1, hx.as_slice()));
            for c in t.column_iter() {
                prop_assert!((&b.b * c - c).norm() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn fundamental_matrix_jumps_by_saltation() {
        let sys = DuffingParams::demo().as_system();
        let ctl = StepControl::default();
        // the plus half has no interior crossing; build one by starting below the switch
        let y = v(&[0.0]);
        let traj = crate::trajectory::integrate_with_events(
            &sys,
            &v(&[0.3, 0.2]),
            &y,
            crate::trajectory::YMode::Frozen,
            (0.0, 3.0),
            &crate::trajectory::IntegrationOptions::default(),
        )
        .unwrap();
        assert_eq!(traj.events.len(), 1);
        let te = traj.events[0].t;
        let fm = fundamental_matrix(&sys, &traj, Side::Plus, 3.0, &ctl).unwrap();
        let b = event_saltation(&sys, &traj.events[0]).unwrap();
        let before = fm.at(te, Side::Minus);
        let after = fm.at(te, Side::Plus);
        assert!((&b.b * before - after).norm() < 1e-12);
        // udot is a variational solution
        let u0 = traj.velocity(&sys, 0.0, Side::Plus);
        for t in [0.5, te + 0.3, 2.9] {
            let ut = traj.velocity(&sys, t, Side::Plus);
            assert!((fm.eval(t) * &u0 - ut).norm() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn duffing_dichotomy_has_one_dimensional_complement() {
        let (sys, pair) = demo_pair();
        let dich = dichotomy_projections(&sys, &pair, &DichotomyOptions::default()).unwrap();
        assert_eq!((dich.k, dich.d), (1, 1));
        let um = sys
            .field(crate::system::RegionIndex(0))
            .eval(&pair.w0_minus, &pair.y);
        let up = sys
            .field(crate::system::RegionIndex(1))
            .eval(&pair.w0_plus, &pair.y);
        let col = |x: &DVector<f64>| DMatrix::from_column_slice(2, 1, x.as_slice());
        assert!(crate::linalg::subspace_angle(&dich.range_plus, &col(&up)) < 1e-6);
        assert!(crate::linalg::subspace_angle(&dich.null_minus, &col(&um)) < 1e-6);
        assert!(dich.delta > 0.0 && dich.k_const.is_finite());
        // psi is orthogonal to udot(0+)
        assert!(dich.psi_basis.column(0).dot(&up).abs() < 1e-7 * up.norm());
        assert!((&dich.q_plus * &dich.q_plus - &dich.q_plus).norm() < 1e-12);
        assert!((&dich.q_minus * &dich.q_minus - &dich.q_minus).norm() < 1e-12);
        // stable subspace carried forward agrees with the backward transport
        let xi = dich.range_plus.column(0).into_owned();
        let fm = fundamental_matrix(&sys, &pair.u_plus, Side::Plus, 4.0, &StepControl::default())
            .unwrap();
        let fwd = fm.eval(4.0) * &xi;
        let back = dich.stable_transport.eval(4.0, Side::Plus);
        assert!(crate::linalg::subspace_angle(&col(&fwd), &back) < 1e-8);
    }

    #[test]
    fn transported_adjoint_matches_closed_form() {
        let (sys, pair) = demo_pair();
        let dich = dichotomy_projections(&sys, &pair, &DichotomyOptions::default()).unwrap();
        let closed = adjoint_2d_closed_form(&sys, &pair, &StepControl::default()).unwrap();
        let tr = adjoint_transport(&dich, &closed.psi0).unwrap();
        for t in [-15.0, -3.0, -0.5, 0.0, 0.7, 4.0, 12.0] {
            for side in [Side::Minus, Side::Plus] {
                let a = closed.eval(t, side);
                let b = tr.eval(t, side);
                assert!(
                    (&a - &b).norm() <= 1e-7 * (1.0 + a.norm()),
                    "t = {t} {side:?}: {a} vs {b}"
                );
            }
        }
        // the anchor jump is psi(0-) = B_0^T psi(0+)
        let b0 = dich.anchor_jump.as_ref().unwrap();
        let jumped = b0.b.transpose() * closed.eval(0.0, Side::Plus);
        assert!((jumped - closed.eval(0.0, Side::Minus)).norm() < 1e-10);
    }

    #[test]
    fn velocity_is_rejected_as_adjoint_data() {
        let (sys, pair) = demo_pair();
        let dich = dichotomy_projections(&sys, &pair, &DichotomyOptions::default()).unwrap();
        let up = pair.u_plus.velocity(&sys, 0.0, Side::Plus);
        assert!(matches!(
            adjoint_transport(&dich, &up),
            Err(Error::NotInComplement { .. })
        ));
    }

    #[test]
    fn closed_form_needs_planar_system() {
        let (_, pair) = demo_pair();
        let h: Arc<dyn crate::system::ScalarField> = Arc::new(crate::system::LinearSwitch {
            normal: v(&[1.0, 0.0, 0.0]),
            m: 1,
        });
        let sw = crate::system::SwitchingSpec::new(h, vec![0.5], 1e-6, 1e-12).unwrap();
        let lin: Arc<dyn crate::system::VectorField> = Arc::new(crate::system::FnField::new(
            1,
            |x: &DVector<f64>, _: &DVector<f64>| -x,
        ));
        let slow = Arc::new(crate::system::ConstantSlow(v(&[1.0])));
        let sys3 = PiecewiseSlowFastSystem::new(3, 1, sw, vec![lin.clone(), lin], slow).unwrap();
        assert!(matches!(
            adjoint_2d_closed_form(&sys3, &pair, &StepControl::default()),
            Err(Error::NotPlanar(3))
        ));
    }

    #[test]
    fn adjoint_pairs_constantly_with_variational_solutions() {
        let (sys, pair) = demo_pair();
        let dich = dichotomy_projections(&sys, &pair, &DichotomyOptions::default()).unwrap();
        let psi = adjoint_transport(&dich, &dich.psi_basis.column(0).into_owned()).unwrap();
        let fm = fundamental_matrix(&sys, &pair.u_plus, Side::Plus, 8.0, &StepControl::default())
            .unwrap();
        let xi = v(&[0.3, -0.8]);
        let c0 = psi.pair_with(0.0, Side::Plus, &xi);
        for t in [1.0, 3.0, 5.5, 8.0] {
            let c = psi.pair_with(t, Side::Plus, &(fm.eval(t) * &xi));
            assert!(
                (c - c0).abs() < 1e-8 * (1.0 + c0.abs()),
                "t = {t}: {c} vs {c0}"
            );
        }
    }
}
