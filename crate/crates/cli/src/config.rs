use std::collections::BTreeMap;
use std::path::PathBuf;

use hetero_melnikov::spec_file::{self, LoadedSpec, DUFFING_PRESET};
use hetero_melnikov::{DVector, MelnikovSetup, ShootingOptions};

use crate::CommonArgs;

/// Accepted tolerance keys with the setting each one controls.
pub const TOLERANCE_KEYS: &[(&str, &str)] = &[
    ("rtol", "relative tolerance of orbit integration"),
    ("atol", "absolute tolerance of orbit integration"),
    ("newton_tol", "endpoint Newton tolerance"),
    ("null_tol", "singular values at or below count as zero"),
    ("range_tol", "singular values at or above count as nonzero"),
    ("root_tol", "tolerance of the y0 root search"),
    (
        "fd_step_rel",
        "relative step of the boundary-form differences",
    ),
    ("quad_abs_tol", "absolute quadrature tolerance"),
    ("quad_rel_tol", "relative quadrature tolerance"),
    ("rank_tol", "relative threshold of the rank verdict"),
    ("agreement_abs", "absolute two-form agreement tolerance"),
    ("agreement_rel", "relative two-form agreement tolerance"),
    ("shoot_tol", "shooting mismatch tolerance"),
    (
        "seed_rel",
        "manifold seed offset relative to the endpoint distance",
    ),
    ("shoot_fd_step", "shooting Jacobian difference step"),
    ("verify_tol", "bound on |y0(eps_min) - y0| for verify"),
];

pub const DEFAULT_VERIFY_TOL: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Spec(PathBuf),
    Preset(String),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: &'static str,
    pub source: Source,
    pub out: PathBuf,
    pub eps: Option<Vec<f64>>,
    /// Validated: known keys, positive finite values.
    pub tolerances: BTreeMap<String, f64>,
    pub workers: Option<usize>,
    pub seed: u64,
    pub y0: Option<f64>,
}

impl RunConfig {
    pub fn from_args(command: &'static str, a: &CommonArgs) -> Result<Self, String> {
        let source = match (&a.spec, &a.preset) {
            (Some(p), _) => Source::Spec(p.clone()),
            (None, Some(n)) => Source::Preset(n.clone()),
            (None, None) => Source::Preset(DUFFING_PRESET.to_string()),
        };
        if let Some(eps) = &a.eps {
            if let Some(bad) = eps.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
                return Err(format!("eps values must be positive, got {bad}"));
            }
        }
        if a.workers == Some(0) {
            return Err("--workers must be at least 1".into());
        }
        Ok(Self {
            command,
            source,
            out: a.out.clone(),
            eps: a.eps.clone(),
            tolerances: parse_overrides(&a.tol_overrides)?,
            workers: a.workers,
            seed: a.seed,
            y0: a.y0,
        })
    }

    pub fn source_label(&self) -> String {
        match &self.source {
            Source::Spec(p) => p.display().to_string(),
            Source::Preset(n) => format!("preset:{n}"),
        }
    }

    pub fn load(&self) -> Result<LoadedSpec, String> {
        let mut spec = match &self.source {
            Source::Spec(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| format!("cannot read {}: {e}", p.display()))?;
                spec_file::parse_spec(&text).map_err(|e| e.to_string())?
            }
            Source::Preset(n) => spec_file::preset(n).map_err(|e| e.to_string())?,
        };
        if let Some(y) = self.y0 {
            if spec.system.m != 1 {
                return Err(format!(
                    "--y0 needs m = 1, the system has m = {}",
                    spec.system.m
                ));
            }
            spec.y0 = Some(DVector::from_element(1, y));
        }
        if let Some(e) = &self.eps {
            spec.eps = e.clone();
        }
        let t = |k: &str| self.tolerances.get(k).copied();
        let ctl = &mut spec.orbit.integration.control;
        if let Some(v) = t("rtol") {
            ctl.rtol = v;
        }
        if let Some(v) = t("atol") {
            ctl.atol = v;
        }
        if let Some(v) = t("newton_tol") {
            spec.orbit.newton.tol = v;
        }
        Ok(spec)
    }

    pub fn melnikov_setup(&self, spec: &LoadedSpec) -> MelnikovSetup {
        let mut s = spec.melnikov_setup();
        let slots: [(&str, &mut f64); 9] = [
            ("null_tol", &mut s.dichotomy.null_tol),
            ("range_tol", &mut s.dichotomy.range_tol),
            ("root_tol", &mut s.root_tol),
            ("fd_step_rel", &mut s.fd_step_rel),
            ("quad_abs_tol", &mut s.quad_abs_tol),
            ("quad_rel_tol", &mut s.quad_rel_tol),
            ("rank_tol", &mut s.rank_tol),
            ("agreement_abs", &mut s.agreement_abs),
            ("agreement_rel", &mut s.agreement_rel),
        ];
        for (k, slot) in slots {
            if let Some(v) = self.tolerances.get(k) {
                *slot = *v;
            }
        }
        s
    }

    pub fn shooting_options(&self, spec: &LoadedSpec) -> ShootingOptions {
        let mut s = spec.shooting_options();
        let slots: [(&str, &mut f64); 3] = [
            ("shoot_tol", &mut s.shoot_tol),
            ("seed_rel", &mut s.seed_rel),
            ("shoot_fd_step", &mut s.fd_step),
        ];
        for (k, slot) in slots {
            if let Some(v) = self.tolerances.get(k) {
                *slot = *v;
            }
        }
        s
    }

    pub fn verify_tol(&self) -> f64 {
        self.tolerances
            .get("verify_tol")
            .copied()
            .unwrap_or(DEFAULT_VERIFY_TOL)
    }
}

fn parse_overrides(items: &[String]) -> Result<BTreeMap<String, f64>, String> {
    let mut out = BTreeMap::new();
    for item in items.iter().filter(|s| !s.trim().is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| format!("tolerance override '{item}' is not key=value"))?;
        let k = k.trim();
        if !TOLERANCE_KEYS.iter().any(|(name, _)| *name == k) {
            let known: Vec<&str> = TOLERANCE_KEYS.iter().map(|(n, _)| *n).collect();
            return Err(format!(
                "unknown tolerance '{k}' (known: {})",
                known.join(", ")
            ));
        }
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| format!("tolerance '{k}' has a non-numeric value '{v}'"))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(format!("tolerance '{k}' must be positive, got {v}"));
        }
        out.insert(k.to_string(), v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn overrides_parse_and_validate() {
        let m = parse_overrides(&s(&["rank_tol=1e-5", " verify_tol = 0.02"])).unwrap();
        assert_eq!(m["rank_tol"], 1e-5);
        assert_eq!(m["verify_tol"], 0.02);
        assert!(parse_overrides(&s(&["rank_tol=0"])).is_err());
        assert!(parse_overrides(&s(&["rank_tol=-1"])).is_err());
        assert!(parse_overrides(&s(&["rank_tol=nan"])).is_err());
        assert!(parse_overrides(&s(&["bogus=1"])).is_err());
        assert!(parse_overrides(&s(&["rank_tol"])).is_err());
    }
}
