//! Piecewise-smooth slow-fast systems, region classification, hyperbolic
//! endpoints and spectral projections.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// A smooth fast field `f(x, y)` with Jacobians.
pub trait VectorField: Send + Sync {
    fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;
    /// `n x n` Jacobian with respect to `x`.
    fn jac_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64>;
    /// `n x m` Jacobian with respect to `y`.
    fn jac_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64>;
}

/// The switching function `h(x, y)`.
pub trait ScalarField: Send + Sync {
    fn value(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64;
    fn grad_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;
    fn grad_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;
}

/// The slow field `g(x, y, eps)`.
pub trait SlowField: Send + Sync {
    fn eval(&self, x: &DVector<f64>, y: &DVector<f64>, eps: f64) -> DVector<f64>;
}

type FieldFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;
type JacFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Field given by closures. Jacobians are optional; missing ones fall back
/// to a second-order central difference.
pub struct FnField {
    m: usize,
    f: Box<FieldFn>,
    fx: Option<Box<JacFn>>,
    fy: Option<Box<JacFn>>,
}

impl FnField {
    pub fn new<F>(m: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            m,
            f: Box::new(f),
            fx: None,
            fy: None,
        }
    }

    pub fn with_jac_x<J>(mut self, j: J) -> Self
    where
        J: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.fx = Some(Box::new(j));
        self
    }

    pub fn with_jac_y<J>(mut self, j: J) -> Self
    where
        J: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.fy = Some(Box::new(j));
        self
    }
}

/// Central-difference step `cbrt(eps) * max(1, |v|)`.
fn fd_step(v: &DVector<f64>) -> f64 {
    f64::EPSILON.cbrt() * v.norm().max(1.0)
}

fn central_difference<F>(f: F, at: &DVector<f64>, rows: usize) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let h = fd_step(at);
    let mut jac = DMatrix::zeros(rows, at.len());
    for i in 0..at.len() {
        let mut p = at.clone();
        let mut q = at.clone();
        p[i] += h;
        q[i] -= h;
        jac.set_column(i, &((f(&p) - f(&q)) / (2.0 * h)));
    }
    jac
}

impl VectorField for FnField {
    fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        (self.f)(x, y)
    }

    fn jac_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        match &self.fx {
            Some(j) => j(x, y),
            None => central_difference(|p| (self.f)(p, y), x, x.len()),
        }
    }

    fn jac_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        match &self.fy {
            Some(j) => j(x, y),
            None if self.m == 0 => DMatrix::zeros(x.len(), 0),
            None => central_difference(|p| (self.f)(x, p), y, x.len()),
        }
    }
}

/// Switching function `h(x, y) = <a, x>`.
#[derive(Debug, Clone)]
pub struct LinearSwitch {
    pub normal: DVector<f64>,
    pub m: usize,
}

impl ScalarField for LinearSwitch {
    fn value(&self, x: &DVector<f64>, _y: &DVector<f64>) -> f64 {
        self.normal.dot(x)
    }
    fn grad_x(&self, _x: &DVector<f64>, _y: &DVector<f64>) -> DVector<f64> {
        self.normal.clone()
    }
    fn grad_y(&self, _x: &DVector<f64>, _y: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.m)
    }
}

/// Slow field `g = const`.
#[derive(Debug, Clone)]
pub struct ConstantSlow(pub DVector<f64>);

impl SlowField for ConstantSlow {
    fn eval(&self, _x: &DVector<f64>, _y: &DVector<f64>, _eps: f64) -> DVector<f64> {
        self.0.clone()
    }
}

/// Region `l` is the band `c_{l-1} < h < c_l`, counted from 0 at the bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegionIndex(pub usize);

impl fmt::Display for RegionIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Result of [`PiecewiseSlowFastSystem::region_of`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Region(RegionIndex),
    /// Within `boundary_tol` of threshold `c_i`.
    OnBoundary(usize),
}

/// Which end of the heteroclinic connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Minus,
    Plus,
}

/// The switching function together with its thresholds and tolerances.
#[derive(Clone)]
pub struct SwitchingSpec {
    pub h: Arc<dyn ScalarField>,
    pub thresholds: Vec<f64>,
    /// Transversality margin: crossings need `|h_x . xdot| > eta` on both sides.
    pub eta: f64,
    pub boundary_tol: f64,
}

impl SwitchingSpec {
    pub fn new(
        h: Arc<dyn ScalarField>,
        thresholds: Vec<f64>,
        eta: f64,
        boundary_tol: f64,
    ) -> Result<Self> {
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "thresholds must be strictly increasing".into(),
            ));
        }
        if thresholds.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("thresholds must be finite".into()));
        }
        if !(eta > 0.0) || !(boundary_tol > 0.0) {
            return Err(Error::InvalidInput(
                "eta and boundary_tol must be positive".into(),
            ));
        }
        Ok(Self {
            h,
            thresholds,
            eta,
            boundary_tol,
        })
    }

    /// Band index of a switching value, ignoring the boundary tolerance.
    pub fn band_of(&self, value: f64) -> RegionIndex {
        RegionIndex(self.thresholds.partition_point(|&c| c < value))
    }

    /// Lower and upper threshold of a band (infinite at the ends).
    pub fn band_limits(&self, r: RegionIndex) -> (f64, f64) {
        let lo = if r.0 == 0 {
            f64::NEG_INFINITY
        } else {
            self.thresholds[r.0 - 1]
        };
        let hi = self.thresholds.get(r.0).copied().unwrap_or(f64::INFINITY);
        (lo, hi)
    }
}

/// `x' = f_l(x, y)` in region `l`, `y' = eps g(x, y, eps)`.
#[derive(Clone)]
pub struct PiecewiseSlowFastSystem {
    pub n: usize,
    pub m: usize,
    pub switching: SwitchingSpec,
    pub fields: Vec<Arc<dyn VectorField>>,
    pub slow: Arc<dyn SlowField>,
    /// Optional box in `x` the trajectories must stay in.
    pub working_box: Option<Vec<(f64, f64)>>,
}

impl fmt::Debug for PiecewiseSlowFastSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PiecewiseSlowFastSystem")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("thresholds", &self.switching.thresholds)
            .field("eta", &self.switching.eta)
            .field("regions", &self.fields.len())
            .finish()
    }
}

impl PiecewiseSlowFastSystem {
    pub fn new(
        n: usize,
        m: usize,
        switching: SwitchingSpec,
        fields: Vec<Arc<dyn VectorField>>,
        slow: Arc<dyn SlowField>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput(
                "fast dimension must be positive".into(),
            ));
        }
        if fields.len() != switching.thresholds.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "{} thresholds need {} region fields, got {}",
                switching.thresholds.len(),
                switching.thresholds.len() + 1,
                fields.len()
            )));
        }
        Ok(Self {
            n,
            m,
            switching,
            fields,
            slow,
            working_box: None,
        })
    }

    pub fn with_working_box(mut self, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.len() != self.n || bounds.iter().any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidInput(
                "working box needs n ordered intervals".into(),
            ));
        }
        self.working_box = Some(bounds);
        Ok(self)
    }

    pub fn region_count(&self) -> usize {
        self.fields.len()
    }

    pub fn lowest_region(&self) -> RegionIndex {
        RegionIndex(0)
    }

    pub fn highest_region(&self) -> RegionIndex {
        RegionIndex(self.fields.len() - 1)
    }

    pub fn field(&self, r: RegionIndex) -> &dyn VectorField {
        self.fields[r.0].as_ref()
    }

    pub fn h(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.switching.h.value(x, y)
    }

    pub fn region_of(&self, x: &DVector<f64>, y: &DVector<f64>) -> Location {
        let v = self.h(x, y);
        let tol = self.switching.boundary_tol;
        if let Some(i) = self
            .switching
            .thresholds
            .iter()
            .position(|&c| (v - c).abs() <= tol)
        {
            return Location::OnBoundary(i);
        }
        Location::Region(self.switching.band_of(v))
    }

    /// The piecewise field; `None` on a switching surface.
    pub fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
        match self.region_of(x, y) {
            Location::Region(r) => Some(self.field(r).eval(x, y)),
            Location::OnBoundary(_) => None,
        }
    }

    pub fn in_working_box(&self, x: &DVector<f64>) -> bool {
        match &self.working_box {
            None => true,
            Some(b) => b
                .iter()
                .zip(x.iter())
                .all(|(&(lo, hi), &v)| v >= lo && v <= hi),
        }
    }

    /// Checks that every region field and its first derivatives are finite
    /// at `samples` points of the working box (or of `[-1, 1]^n` when no
    /// box is set), at slow value `y`.
    pub fn check_finite_on_box(&self, y: &DVector<f64>, samples: usize) -> Result<()> {
        let bounds = self
            .working_box
            .clone()
            .unwrap_or_else(|| vec![(-1.0, 1.0); self.n]);
        // deterministic low-discrepancy points (additive recurrence)
        let alphas: Vec<f64> = (0..self.n)
            .map(|i| (2.0 + i as f64).sqrt().fract())
            .collect();
        for s in 0..samples {
            let x = DVector::from_iterator(
                self.n,
                bounds.iter().zip(&alphas).map(|(&(lo, hi), a)| {
                    let u = (0.5 + s as f64 * a).fract();
                    lo + (hi - lo) * u
                }),
            );
            for (l, f) in self.fields.iter().enumerate() {
                let ok = f.eval(&x, y).iter().all(|v| v.is_finite())
                    && f.jac_x(&x, y).iter().all(|v| v.is_finite())
                    && f.jac_y(&x, y).iter().all(|v| v.is_finite());
                if !ok {
                    return Err(Error::InvalidInput(format!(
                        "field of region {l} is not finite at x = {:?}",
                        x.as_slice()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Newton and hyperbolicity settings for [`find_endpoint`].
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub delta0_min: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
            delta0_min: 1e-6,
        }
    }
}

/// A hyperbolic equilibrium `w_+-(y)` of the outermost field at one `y`.
#[derive(Debug, Clone, Serialize)]
pub struct HyperbolicEndpoint {
    pub side: Side,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    /// Number of eigenvalues with negative real part.
    pub k: usize,
    /// Achieved spectral gap `min |Re lambda|`.
    pub delta0: f64,
    /// Spectral projection onto the stable subspace (row-major rows).
    #[serde(serialize_with = "serialize_matrix")]
    pub p0: DMatrix<f64>,
    /// Margin of the region constraint on `h(w, y)`.
    pub mu0: f64,
    /// Eigenvalues as `(re, im)` pairs.
    pub eigenvalues: Vec<(f64, f64)>,
}

pub(crate) fn serialize_matrix<S: serde::Serializer>(
    m: &DMatrix<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in 0..m.nrows() {
        let row: Vec<f64> = m.row(r).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

impl HyperbolicEndpoint {
    pub fn point(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.w)
    }

    pub fn n(&self) -> usize {
        self.w.len()
    }

    /// Orthonormal basis of the stable subspace (range of `P0`).
    pub fn stable_basis(&self) -> DMatrix<f64> {
        linalg::leading_range_basis(&self.p0, self.k)
    }

    /// Orthonormal basis of the unstable subspace (range of `I - P0`).
    pub fn unstable_basis(&self) -> DMatrix<f64> {
        let n = self.n();
        linalg::leading_range_basis(&(DMatrix::identity(n, n) - &self.p0), n - self.k)
    }
}

/// Projection onto the invariant subspace of `J` for eigenvalues with
/// negative real part, and its rank `k`.
///
/// Computed with the matrix sign function, `P0 = (I - sign J) / 2`.
pub fn spectral_projection(j: &DMatrix<f64>, delta0: f64) -> Result<(DMatrix<f64>, usize)> {
    if !j.is_square() {
        return Err(Error::InvalidInput("Jacobian must be square".into()));
    }
    let n = j.nrows();
    let eig = linalg::eigenvalues(j);
    let gap = eig.iter().map(|l| l.re.abs()).fold(f64::INFINITY, f64::min);
    if !(gap >= delta0) {
        return Err(Error::SpectralGapViolated {
            gap,
            required: delta0,
        });
    }
    let k = eig.iter().filter(|l| l.re < 0.0).count();
    let sign = linalg::matrix_sign(j)?;
    let p0 = (DMatrix::identity(n, n) - sign) * 0.5;
    Ok((p0, k))
}

/// Newton solve of `f_side(w, y) = 0`, then hyperbolicity and region checks.
///
/// The minus endpoint belongs to the lowest region, the plus endpoint to the
/// highest one.
pub fn find_endpoint(
    system: &PiecewiseSlowFastSystem,
    side: Side,
    y: &DVector<f64>,
    guess: &DVector<f64>,
    opts: &NewtonOptions,
) -> Result<HyperbolicEndpoint> {
    let region = match side {
        Side::Minus => system.lowest_region(),
        Side::Plus => system.highest_region(),
    };
    let field = system.field(region);
    let mut w = guess.clone();
    let mut residual = field.eval(&w, y).norm();
    let mut iterations = 0;
    while !(residual <= opts.tol) {
        if iterations >= opts.max_iter || !residual.is_finite() {
            return Err(Error::NoConvergence {
                iterations,
                residual,
            });
        }
        let jac = field.jac_x(&w, y);
        let step = jac
            .lu()
            .solve(&field.eval(&w, y))
            .ok_or(Error::NoConvergence {
                iterations,
                residual,
            })?;
        w -= step;
        residual = field.eval(&w, y).norm();
        iterations += 1;
    }

    let jac = field.jac_x(&w, y);
    let eig = linalg::eigenvalues(&jac);
    let gap = eig.iter().map(|l| l.re.abs()).fold(f64::INFINITY, f64::min);
    if !(gap >= opts.delta0_min) {
        return Err(Error::NotHyperbolic {
            gap,
            required: opts.delta0_min,
        });
    }
    let (p0, k) = spectral_projection(&jac, opts.delta0_min)?;

    let hv = system.h(&w, y);
    let th = &system.switching.thresholds;
    let mu0 = match (side, th.first(), th.last()) {
        (_, None, _) | (_, _, None) => f64::INFINITY,
        (Side::Plus, _, Some(&c_top)) => hv - c_top,
        (Side::Minus, Some(&c_bottom), _) => c_bottom - hv,
    };
    if !(mu0 > 0.0) {
        return Err(Error::WrongRegion { margin: mu0 });
    }

    Ok(HyperbolicEndpoint {
        side,
        y: y.iter().copied().collect(),
        w: w.iter().copied().collect(),
        k,
        delta0: gap,
        p0,
        mu0,
        eigenvalues: eig.iter().map(|l| (l.re, l.im)).collect(),
    })
}
