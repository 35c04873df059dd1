//! Declarative system descriptions in strict JSON.
//!
//! A file either names the built-in preset
//!
//! ```json
//! { "schema_version": 1, "preset": "piecewise-duffing",
//!   "duffing": { "a_plus": {"family": "tanh", "offset": 0.25, "amplitude": 0.05},
//!                "a_minus": {"family": "tanh", "offset": 0.75, "amplitude": 0.05},
//!                "c": 0.5 } }
//! ```
//!
//! or spells out a polynomial system:
//!
//! ```json
//! { "schema_version": 1,
//!   "system": {
//!     "n": 2, "m": 1,
//!     "params": { "a": {"family": "constant", "offset": 0.25} },
//!     "switch": [ {"coeff": 1.0, "x": [1, 0]} ],
//!     "thresholds": [0.5],
//!     "regions": [ [[...terms of f_1...], [...terms of f_2...]], ... ],
//!     "slow": [ [ {"coeff": 1.0} ] ] },
//!   "analysis": { "anchor_level": 0.5, "w_minus_guess": [0, 0], "w_plus_guess": [1, 0] } }
//! ```
//!
//! A term `{coeff, params, x, y}` is `coeff * prod params(y) * prod x_i^x[i] * prod y_j^y[j]`.
//! Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DVector;
use serde::Deserialize;

use crate::duffing::DuffingParams;
use crate::error::{Error, Result};
use crate::melnikov::{MelnikovSetup, PsiNormalization};
use crate::params::ParamFamily;
use crate::poly::{PolyField, PolyTerm, Polynomial};
use crate::system::{PiecewiseSlowFastSystem, ScalarField, SlowField, SwitchingSpec, VectorField};
use crate::trajectory::OrbitSetup;
use crate::verifier::ShootingOptions;

/// Name of the built-in example.
pub const DUFFING_PRESET: &str = "piecewise-duffing";

/// Default `eps` list for verification runs.
pub const DEFAULT_EPS: [f64; 4] = [4e-3, 2e-3, 1e-3, 5e-4];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub schema_version: u32,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub duffing: Option<DuffingParams>,
    #[serde(default)]
    pub system: Option<SystemSpec>,
    #[serde(default)]
    pub analysis: Option<AnalysisSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub coeff: f64,
    #[serde(default)]
    pub params: Vec<String>,
    #[serde(default)]
    pub x: Vec<u32>,
    #[serde(default)]
    pub y: Vec<u32>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub n: usize,
    pub m: usize,
    #[serde(default)]
    pub params: BTreeMap<String, ParamFamily>,
    pub switch: Vec<TermSpec>,
    pub thresholds: Vec<f64>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_boundary_tol")]
    pub boundary_tol: f64,
    /// One field per region, lowest band first; each field lists `n` components.
    pub regions: Vec<Vec<Vec<TermSpec>>>,
    /// `m` components of `g`.
    pub slow: Vec<Vec<TermSpec>>,
    #[serde(default)]
    pub working_box: Option<Vec<(f64, f64)>>,
}

fn default_eta() -> f64 {
    1e-6
}

fn default_boundary_tol() -> f64 {
    1e-12
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default)]
    pub anchor_level: Option<f64>,
    #[serde(default)]
    pub w_minus_guess: Option<Vec<f64>>,
    #[serde(default)]
    pub w_plus_guess: Option<Vec<f64>>,
    #[serde(default)]
    pub y0: Option<Vec<f64>>,
    /// Root-search interval (`m = 1`) and slow working interval for shooting.
    #[serde(default)]
    pub y_range: Option<(f64, f64)>,
    #[serde(default)]
    pub eps: Option<Vec<f64>>,
    #[serde(default)]
    pub normalization: Option<PsiNormalization>,
}

/// A parsed and validated spec, ready for the pipeline.
#[derive(Debug, Clone)]
pub struct LoadedSpec {
    pub system: PiecewiseSlowFastSystem,
    /// Present for the Duffing preset, enabling the closed-form checks.
    pub duffing: Option<DuffingParams>,
    pub orbit: OrbitSetup,
    pub y0: Option<DVector<f64>>,
    pub y_range: Option<(f64, f64)>,
    pub eps: Vec<f64>,
    pub normalization: PsiNormalization,
}

impl LoadedSpec {
    pub fn melnikov_setup(&self) -> MelnikovSetup {
        let mut s = MelnikovSetup::new(self.orbit.clone());
        s.y0 = self.y0.clone();
        s.y_range = self.y_range;
        s.normalization = self.normalization;
        s
    }

    pub fn shooting_options(&self) -> ShootingOptions {
        let mut s = ShootingOptions::new(self.orbit.clone());
        if let (Some(r), 1) = (self.y_range, self.system.m) {
            s.y_bounds = Some(vec![r]);
        }
        s
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

/// Parses a spec from JSON text.
pub fn parse_spec(text: &str) -> Result<LoadedSpec> {
    let file: SpecFile =
        serde_json::from_str(text).map_err(|e| invalid(format!("spec parse error: {e}")))?;
    load(file)
}

/// The preset with default parameters.
pub fn preset(name: &str) -> Result<LoadedSpec> {
    load(SpecFile {
        schema_version: crate::SCHEMA_VERSION,
        preset: Some(name.to_string()),
        duffing: None,
        system: None,
        analysis: None,
    })
}

pub fn load(file: SpecFile) -> Result<LoadedSpec> {
    if file.schema_version != crate::SCHEMA_VERSION {
        return Err(invalid(format!(
            "unsupported schema_version {} (expected {})",
            file.schema_version,
            crate::SCHEMA_VERSION
        )));
    }
    let analysis = file.analysis.unwrap_or_default();
    match (&file.preset, file.system) {
        (Some(_), Some(_)) => Err(invalid("give either a preset or a system, not both")),
        (None, None) => Err(invalid("spec needs a preset or a system")),
        (Some(name), None) => {
            if name != DUFFING_PRESET {
                return Err(invalid(format!("unknown preset '{name}'")));
            }
            let params = file.duffing.unwrap_or_else(DuffingParams::demo);
            params.validate()?;
            let system = params.as_system();
            let mut orbit = params.orbit_setup();
            apply_orbit(&mut orbit, &analysis, system.n)?;
            finish(
                system,
                Some(params.clone()),
                orbit,
                analysis,
                Some(params.y_range),
            )
        }
        (None, Some(spec)) => {
            if file.duffing.is_some() {
                return Err(invalid(
                    "a duffing block needs the piecewise-duffing preset",
                ));
            }
            let system = build_system(&spec)?;
            let anchor = match (analysis.anchor_level, spec.thresholds.as_slice()) {
                (Some(a), _) => a,
                (None, [only]) => *only,
                _ => {
                    return Err(invalid(
                        "analysis.anchor_level is required with several thresholds",
                    ))
                }
            };
            let wm = analysis
                .w_minus_guess
                .clone()
                .ok_or_else(|| invalid("analysis.w_minus_guess is required"))?;
            let wp = analysis
                .w_plus_guess
                .clone()
                .ok_or_else(|| invalid("analysis.w_plus_guess is required"))?;
            let mut orbit = OrbitSetup::new(anchor, DVector::from_vec(wm), DVector::from_vec(wp));
            apply_orbit(&mut orbit, &analysis, system.n)?;
            finish(system, None, orbit, analysis, None)
        }
    }
}

fn apply_orbit(orbit: &mut OrbitSetup, analysis: &AnalysisSpec, n: usize) -> Result<()> {
    if let Some(a) = analysis.anchor_level {
        orbit.anchor_level = a;
    }
    if let Some(w) = &analysis.w_minus_guess {
        orbit.w_minus_guess = DVector::from_column_slice(w);
    }
    if let Some(w) = &analysis.w_plus_guess {
        orbit.w_plus_guess = DVector::from_column_slice(w);
    }
    if orbit.w_minus_guess.len() != n || orbit.w_plus_guess.len() != n {
        return Err(invalid(format!(
            "endpoint guesses must have length n = {n}"
        )));
    }
    Ok(())
}

fn finish(
    system: PiecewiseSlowFastSystem,
    duffing: Option<DuffingParams>,
    orbit: OrbitSetup,
    analysis: AnalysisSpec,
    default_range: Option<(f64, f64)>,
) -> Result<LoadedSpec> {
    let y0 = match analysis.y0 {
        Some(v) if v.len() != system.m => {
            return Err(invalid(format!("y0 must have length m = {}", system.m)))
        }
        Some(v) => Some(DVector::from_vec(v)),
        None => None,
    };
    let y_range = analysis.y_range.or(default_range);
    if let Some((a, b)) = y_range {
        if !(a < b) {
            return Err(invalid("y_range must be increasing"));
        }
    }
    let eps = analysis.eps.unwrap_or_else(|| DEFAULT_EPS.to_vec());
    if eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(invalid("eps values must be positive"));
    }
    Ok(LoadedSpec {
        system,
        duffing,
        orbit,
        y0,
        y_range,
        eps,
        normalization: analysis.normalization.unwrap_or(PsiNormalization::Natural),
    })
}

fn term(
    spec: &TermSpec,
    params: &BTreeMap<String, ParamFamily>,
    n: usize,
    m: usize,
) -> Result<PolyTerm> {
    if spec.x.len() > n {
        return Err(invalid(format!(
            "term has {} x exponents but n = {n}",
            spec.x.len()
        )));
    }
    if spec.y.len() > m {
        return Err(invalid(format!(
            "term has {} y exponents but m = {m}",
            spec.y.len()
        )));
    }
    if !spec.coeff.is_finite() {
        return Err(invalid("term coefficient must be finite"));
    }
    let fams = spec
        .params
        .iter()
        .map(|name| {
            params
                .get(name)
                .cloned()
                .ok_or_else(|| invalid(format!("unknown parameter '{name}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PolyTerm {
        coeff: spec.coeff,
        params: fams,
        x_exp: spec.x.clone(),
        y_exp: spec.y.clone(),
    })
}

fn polynomial(
    terms: &[TermSpec],
    params: &BTreeMap<String, ParamFamily>,
    n: usize,
    m: usize,
) -> Result<Polynomial> {
    Ok(Polynomial::new(
        terms
            .iter()
            .map(|t| term(t, params, n, m))
            .collect::<Result<_>>()?,
    ))
}

pub fn build_system(spec: &SystemSpec) -> Result<PiecewiseSlowFastSystem> {
    let (n, m) = (spec.n, spec.m);
    if n == 0 || m == 0 {
        return Err(invalid("n and m must be positive"));
    }
    for (name, p) in &spec.params {
        if p.coord >= m {
            return Err(invalid(format!(
                "parameter '{name}' uses slow coordinate {} but m = {m}",
                p.coord
            )));
        }
    }
    if spec.regions.len() != spec.thresholds.len() + 1 {
        return Err(invalid(format!(
            "{} thresholds need {} regions, got {}",
            spec.thresholds.len(),
            spec.thresholds.len() + 1,
            spec.regions.len()
        )));
    }
    let h: Arc<dyn ScalarField> = Arc::new(polynomial(&spec.switch, &spec.params, n, m)?);
    let switching = SwitchingSpec::new(h, spec.thresholds.clone(), spec.eta, spec.boundary_tol)?;
    let mut fields: Vec<Arc<dyn VectorField>> = Vec::new();
    for (r, comps) in spec.regions.iter().enumerate() {
        if comps.len() != n {
            return Err(invalid(format!(
                "region {r} has {} components, expected n = {n}",
                comps.len()
            )));
        }
        let polys = comps
            .iter()
            .map(|c| polynomial(c, &spec.params, n, m))
            .collect::<Result<Vec<_>>>()?;
        fields.push(Arc::new(PolyField::new(polys, m)));
    }
    if spec.slow.len() != m {
        return Err(invalid(format!(
            "slow field has {} components, expected m = {m}",
            spec.slow.len()
        )));
    }
    let slow_polys = spec
        .slow
        .iter()
        .map(|c| polynomial(c, &spec.params, n, m))
        .collect::<Result<Vec<_>>>()?;
    let slow: Arc<dyn SlowField> = Arc::new(PolyField::new(slow_polys, m));
    let mut system = PiecewiseSlowFastSystem::new(n, m, switching, fields, slow)?;
    if let Some(b) = &spec.working_box {
        system = system.with_working_box(b.clone())?;
    }
    Ok(system)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{Location, RegionIndex};

    /// The demo example spelled out term by term.
    pub(crate) const DUFFING_AS_SYSTEM: &str = r#"{
      "schema_version": 1,
      "system": {
        "n": 2, "m": 1,
        "params": {
          "ap": {"family": "tanh", "offset": 0.25, "amplitude": 0.05},
          "am": {"family": "tanh", "offset": 0.75, "amplitude": 0.05}
        },
        "switch": [ {"coeff": 1.0, "x": [1, 0]} ],
        "thresholds": [0.5],
        "regions": [
          [ [ {"coeff": 1.0, "x": [0, 1]} ],
            [ {"coeff": 1.0, "x": [3]}, {"coeff": -1.0, "x": [2]}, {"coeff": -1.0, "params": ["am"], "x": [2]},
              {"coeff": 1.0, "params": ["am"], "x": [1]} ] ],
          [ [ {"coeff": 1.0, "x": [0, 1]} ],
            [ {"coeff": 1.0, "x": [3]}, {"coeff": -1.0, "x": [2]}, {"coeff": -1.0, "params": ["ap"], "x": [2]},
              {"coeff": 1.0, "params": ["ap"], "x": [1]} ] ]
        ],
        "slow": [ [ {"coeff": 1.0} ] ],
        "working_box": [[-0.5, 1.5], [-1.0, 1.0]]
      },
      "analysis": { "w_minus_guess": [0.0, 0.0], "w_plus_guess": [1.0, 0.0], "y_range": [-1.0, 1.0] }
    }"#;

    #[test]
    fn explicit_system_matches_preset() {
        let a = parse_spec(DUFFING_AS_SYSTEM).unwrap();
        let b = preset(DUFFING_PRESET).unwrap();
        assert_eq!(a.orbit.anchor_level, 0.5);
        let y = DVector::from_vec(vec![0.3]);
        for x in [[0.2, 0.1], [0.8, -0.3], [0.45, 0.2]] {
            let x = DVector::from_vec(x.to_vec());
            let loc = a.system.region_of(&x, &y);
            assert_eq!(loc, b.system.region_of(&x, &y));
            if let Location::Region(r) = loc {
                let fa = a.system.field(r).eval(&x, &y);
                let fb = b.system.field(r).eval(&x, &y);
                assert!((fa - fb).norm() < 1e-15);
                let ja = a.system.field(r).jac_y(&x, &y);
                let jb = b.system.field(r).jac_y(&x, &y);
                assert!((ja - jb).norm() < 1e-15);
            }
        }
        assert_eq!(
            a.system.region_of(&DVector::from_vec(vec![0.2, 0.0]), &y),
            Location::Region(RegionIndex(0))
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"schema_version": 1, "preset": "piecewise-duffing", "colour": "red"}"#;
        assert!(parse_spec(text).is_err());
        let text = r#"{"schema_version": 1, "preset": "piecewise-duffing",
            "duffing": {"a_plus": {"family": "constant", "offset": 0.25, "slope": 1},
                        "a_minus": {"family": "constant", "offset": 0.75}, "c": 0.5}}"#;
        assert!(parse_spec(text).is_err());
    }

    #[test]
    fn structural_errors() {
        let bad_version = r#"{"schema_version": 7, "preset": "piecewise-duffing"}"#;
        assert!(parse_spec(bad_version).is_err());
        assert!(parse_spec(r#"{"schema_version": 1}"#).is_err());
        assert!(parse_spec(r#"{"schema_version": 1, "preset": "lorenz"}"#).is_err());
        let wrong_regions =
            DUFFING_AS_SYSTEM.replace("\"thresholds\": [0.5]", "\"thresholds\": [0.3, 0.5]");
        assert!(parse_spec(&wrong_regions).is_err());
        let unknown_param = DUFFING_AS_SYSTEM.replacen("[\"am\"]", "[\"zz\"]", 1);
        assert!(parse_spec(&unknown_param).is_err());
        let bad_eps = r#"{"schema_version": 1, "preset": "piecewise-duffing", "analysis": {"eps": [0.001, -1]}}"#;
        assert!(parse_spec(bad_eps).is_err());
    }

    #[test]
    fn preset_with_custom_parameters() {
        let text = r#"{"schema_version": 1, "preset": "piecewise-duffing",
            "duffing": {"a_plus": {"family": "constant", "offset": 0.25},
                        "a_minus": {"family": "constant", "offset": 0.75}, "c": 0.5},
            "analysis": {"y0": [0.0], "eps": [0.001]}}"#;
        let s = parse_spec(text).unwrap();
        assert_eq!(s.duffing.unwrap(), DuffingParams::degenerate());
        assert_eq!(s.eps, vec![0.001]);
        assert_eq!(s.y0.unwrap()[0], 0.0);
    }
}
