use std::fs;
use std::io::Write;
use std::path::PathBuf;

use hetero_melnikov::duffing::{self, DuffingParams, FeasibilityWindow};
use hetero_melnikov::melnikov::{self, MelnikovAnalysis};
use hetero_melnikov::spec_file::{LoadedSpec, DUFFING_PRESET};
use hetero_melnikov::system::find_endpoint;
use hetero_melnikov::trajectory::{compute_frozen_halforbits, write_events_csv};
use hetero_melnikov::variational::dichotomy_projections;
use hetero_melnikov::verifier::convergence_study;
use hetero_melnikov::{DMatrix, DVector, Error, PiecewiseTrajectory, Side, SCHEMA_VERSION};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;

const ORBIT_POINTS_PER_STEP: usize = 4;
const INTEGRAND_SAMPLES: usize = 400;

#[derive(Debug, Serialize)]
struct Check {
    name: String,
    ok: bool,
    detail: String,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    schema_version: u32,
    command: &'a str,
    source: String,
    seed: u64,
    exit_code: u8,
    checks: &'a [Check],
    outputs: &'a [String],
}

/// Why a stage stopped early.
enum Stop {
    /// Unreadable input, bad spec or failed write: exit 1.
    Input(String),
    /// A named check failed and was recorded: exit 2.
    Assumption,
}

struct Session<'a> {
    cfg: &'a RunConfig,
    checks: Vec<Check>,
    outputs: Vec<String>,
}

impl<'a> Session<'a> {
    fn new(cfg: &'a RunConfig) -> Self {
        Self {
            cfg,
            checks: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn record(&mut self, name: &str, ok: bool, detail: String) {
        println!("{} {name}: {detail}", if ok { "ok  " } else { "FAIL" });
        self.checks.push(Check {
            name: name.to_string(),
            ok,
            detail,
        });
    }

    fn pass(&mut self, name: &str, detail: String) {
        self.record(name, true, detail);
    }

    fn fail(&mut self, name: &str, detail: String) -> Stop {
        self.record(name, false, detail);
        Stop::Assumption
    }

    /// Maps a library error to exit 1 or to a failed check under `name`.
    fn error(&mut self, name: &str, e: Error) -> Stop {
        match e {
            Error::InvalidInput(msg) => Stop::Input(msg),
            other => self.fail(name, other.to_string()),
        }
    }

    fn write(
        &mut self,
        file: &str,
        f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<(), Stop> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| Stop::Input(format!("cannot format {file}: {e}")))?;
        let path = self.path(file);
        fs::create_dir_all(&self.cfg.out)
            .and_then(|_| fs::write(&path, buf))
            .map_err(|e| Stop::Input(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(file.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, file: &str, value: &T) -> Result<(), Stop> {
        self.write(file, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)
        })
    }

    fn path(&self, file: &str) -> PathBuf {
        self.cfg.out.join(file)
    }

    /// Writes `report.json` and returns the exit code.
    fn finish(mut self, result: Result<(), Stop>) -> u8 {
        let code = match &result {
            Ok(()) if self.checks.iter().all(|c| c.ok) => 0,
            Ok(()) | Err(Stop::Assumption) => 2,
            Err(Stop::Input(msg)) => {
                eprintln!("error: {msg}");
                self.checks.push(Check {
                    name: "input".into(),
                    ok: false,
                    detail: msg.clone(),
                });
                1
            }
        };
        let report = Report {
            schema_version: SCHEMA_VERSION,
            command: self.cfg.command,
            source: self.cfg.source_label(),
            seed: self.cfg.seed,
            exit_code: code,
            checks: &self.checks,
            outputs: &self.outputs,
        };
        let path = self.path("report.json");
        let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        if fs::create_dir_all(&self.cfg.out)
            .and_then(|_| fs::write(&path, text))
            .is_err()
            && code != 1
        {
            eprintln!("error: cannot write {}", path.display());
            return 1;
        }
        code
    }
}

fn load(sess: &Session) -> Result<LoadedSpec, Stop> {
    sess.cfg.load().map_err(Stop::Input)
}

/// The existence window for `c` must contain the switching level.
fn check_feasibility(sess: &mut Session, p: &DuffingParams) -> Result<(), Stop> {
    let window = p
        .window()
        .map_err(|e| sess.fail("feasibility", e.to_string()))?;
    let (lo_a, hi_a) = (p.a_min(), p.a_max());
    match window {
        FeasibilityWindow::Interval { lo, hi } if window.contains(p.c) => {
            sess.pass("feasibility", format!("c = {} inside ({lo:.6}, {hi:.6})", p.c));
            Ok(())
        }
        FeasibilityWindow::Interval { lo, hi } => Err(sess.fail(
            "feasibility",
            format!(
                "c = {} outside the window ({lo:.6}, {hi:.6}) with a_min = {lo_a:.6}, a_max = {hi_a:.6}; a half-orbit does not exist",
                p.c
            ),
        )),
        FeasibilityWindow::Empty => Err(sess.fail(
            "feasibility",
            format!("the window for c is empty for a_min = {lo_a:.6}, a_max = {hi_a:.6}"),
        )),
    }
}

fn analysis_point(spec: &LoadedSpec) -> DVector<f64> {
    match (&spec.y0, spec.y_range) {
        (Some(y), _) => y.clone(),
        (None, Some((lo, hi))) if spec.system.m == 1 => DVector::from_element(1, 0.5 * (lo + hi)),
        _ => DVector::zeros(spec.system.m),
    }
}

fn transversality_name(e: &Error) -> &'static str {
    match e {
        Error::TangentialCrossing { .. }
        | Error::TangentialData { .. }
        | Error::SimultaneousEvents { .. } => "transversality",
        Error::NotHyperbolic { .. }
        | Error::WrongRegion { .. }
        | Error::SpectralGapViolated { .. } => "hyperbolic_endpoints",
        _ => "heteroclinic_orbit",
    }
}

fn write_orbit_csv(w: &mut Vec<u8>, legs: [&PiecewiseTrajectory; 2]) -> std::io::Result<()> {
    let (n, m) = (legs[0].n, legs[0].m);
    let mut header = vec!["leg".to_string(), "t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|j| format!("y{j}")));
    header.push("region".into());
    writeln!(w, "{}", header.join(","))?;
    for (leg, side, traj) in [
        ("minus", Side::Minus, legs[0]),
        ("plus", Side::Plus, legs[1]),
    ] {
        for t in traj.sample_times(ORBIT_POINTS_PER_STEP) {
            let mut row = vec![leg.to_string(), format!("{t}")];
            row.extend(traj.state(t).iter().map(|v| format!("{v}")));
            row.push(traj.region_at(t, side).0.to_string());
            writeln!(w, "{}", row.join(","))?;
        }
    }
    Ok(())
}

fn write_matrix_csv(w: &mut Vec<u8>, m: &DMatrix<f64>) -> std::io::Result<()> {
    for r in m.row_iter() {
        let cells: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EndpointsFile<'a> {
    schema_version: u32,
    y: Vec<f64>,
    minus: &'a hetero_melnikov::system::HyperbolicEndpoint,
    plus: &'a hetero_melnikov::system::HyperbolicEndpoint,
}

fn run_analyze(sess: &mut Session, spec: &LoadedSpec) -> Result<(), Stop> {
    if let Some(p) = &spec.duffing {
        check_feasibility(sess, p)?;
    }
    let sys = &spec.system;
    let y = analysis_point(spec);
    let o = &spec.orbit;
    let em = find_endpoint(sys, Side::Minus, &y, &o.w_minus_guess, &o.newton);
    let ep = find_endpoint(sys, Side::Plus, &y, &o.w_plus_guess, &o.newton);
    let (em, ep) = match (em, ep) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Err(sess.error("hyperbolic_endpoints", e)),
    };
    sess.write_json(
        "endpoints.json",
        &EndpointsFile {
            schema_version: SCHEMA_VERSION,
            y: y.iter().copied().collect(),
            minus: &em,
            plus: &ep,
        },
    )?;
    sess.pass(
        "hyperbolic_endpoints",
        format!(
            "w- = {:?} (k = {}), w+ = {:?} (k = {}), spectral gaps {:.4}, {:.4}",
            em.w, em.k, ep.w, ep.k, em.delta0, ep.delta0
        ),
    );

    let pair = compute_frozen_halforbits(sys, &y, o).map_err(|e| {
        let name = transversality_name(&e);
        sess.error(name, e)
    })?;
    sess.write("orbit.csv", |w| {
        write_orbit_csv(w, [&pair.u_minus, &pair.u_plus])
    })?;
    let mut events: Vec<_> = pair
        .u_minus
        .events
        .iter()
        .chain(&pair.u_plus.events)
        .cloned()
        .collect();
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    sess.write("events.csv", |w| write_events_csv(w, &events))?;
    sess.pass(
        "heteroclinic_orbit",
        format!(
            "anchored at h = {} with gap {:.3e}",
            o.anchor_level,
            pair.gap().norm()
        ),
    );
    let margin = events
        .iter()
        .map(|e| e.margin_minus.abs().min(e.margin_plus.abs()))
        .fold(f64::INFINITY, f64::min);
    sess.pass(
        "transversality",
        if events.is_empty() {
            "no crossings besides the anchor".to_string()
        } else {
            format!(
                "{} crossings, smallest crossing rate {margin:.4e}",
                events.len()
            )
        },
    );

    let setup = sess.cfg.melnikov_setup(spec);
    let dich = dichotomy_projections(sys, &pair, &setup.dichotomy)
        .map_err(|e| sess.error("dichotomy", e))?;
    sess.write_json("dichotomy.json", &dich.report())?;
    sess.write("q_plus.csv", |w| write_matrix_csv(w, &dich.q_plus))?;
    sess.write("q_minus.csv", |w| write_matrix_csv(w, &dich.q_minus))?;
    sess.pass(
        "dichotomy",
        format!(
            "k = {}, d = {}, K = {:.4}, delta = {:.4}",
            dich.k, dich.d, dich.k_const, dich.delta
        ),
    );
    Ok(())
}

fn melnikov_error_name(e: &Error) -> &'static str {
    match e {
        Error::NoSignChange { .. } | Error::DegenerateRoot { .. } | Error::NotConverged { .. } => {
            "simple_zero"
        }
        Error::TailNotDecaying { .. } => "integrand_decay",
        Error::NotInComplement { .. } => "adjoint",
        Error::RankDeficient { .. } => "rank_condition",
        e => transversality_name(e),
    }
}

fn run_melnikov(sess: &mut Session, spec: &LoadedSpec) -> Result<MelnikovAnalysis, Stop> {
    if let Some(p) = &spec.duffing {
        check_feasibility(sess, p)?;
    }
    let setup = sess.cfg.melnikov_setup(spec);
    let a = melnikov::analyze(&spec.system, &setup).map_err(|e| {
        let name = melnikov_error_name(&e);
        sess.error(name, e)
    })?;
    let r = &a.report;
    sess.write_json("melnikov.json", r)?;
    let samples =
        melnikov::integrand_samples(&spec.system, &a.pair, &a.adjoints, INTEGRAND_SAMPLES);
    sess.write("integrand.csv", |w| {
        melnikov::write_integrand_csv(w, &samples, r.d, r.m)
    })?;
    let ag = &r.agreement;
    sess.record(
        "two_form_agreement",
        ag.ok,
        format!(
            "boundary {:?}, integral {:?}, difference {:.3e} (tolerance {:.3e})",
            r.m_boundary, r.m_integral, ag.difference, ag.tolerance
        ),
    );
    let rk = &r.rank;
    sess.record(
        "rank_condition",
        rk.full_rank,
        format!(
            "rank {} of d = {} at y0 = {:?} (threshold {:.3e}{})",
            rk.rank,
            rk.d,
            r.y0,
            rk.threshold,
            if rk.stable {
                ""
            } else {
                ", close to the threshold"
            }
        ),
    );
    Ok(a)
}

fn run_verify(sess: &mut Session, spec: &LoadedSpec, a: &MelnikovAnalysis) -> Result<(), Stop> {
    if !a.report.persists() {
        return Err(sess.fail(
            "shooting_convergence",
            "skipped: persistence is not certified at the frozen level".into(),
        ));
    }
    let y0 = DVector::from_column_slice(&a.report.y0);
    let opts = sess.cfg.shooting_options(spec);
    let table = convergence_study(&spec.system, &spec.eps, &y0, &opts);
    sess.write("convergence.csv", |w| table.write_csv(w))?;
    sess.write_json("convergence.json", &table)?;
    let failed: Vec<String> = table
        .rows
        .iter()
        .filter(|r| !r.ok)
        .map(|r| {
            format!(
                "eps = {}: {}",
                r.epsilon,
                r.error.as_deref().unwrap_or("failed")
            )
        })
        .collect();
    if spec.eps.is_empty() {
        sess.pass("shooting_convergence", "no eps values requested".into());
        return Ok(());
    }
    sess.record(
        "shooting_convergence",
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} runs converged", table.rows.len())
        } else {
            failed.join("; ")
        },
    );
    let tol = sess.cfg.verify_tol();
    let smallest = table
        .rows
        .iter()
        .min_by(|a, b| a.epsilon.total_cmp(&b.epsilon))
        .expect("nonempty eps list");
    let trend = format!(
        "slope {}, monotone {}, sign consistent {}, sup_dev decreasing {}",
        table.slope.map_or("n/a".to_string(), |s| format!("{s:.3}")),
        table.monotone,
        table.sign_consistent,
        table.sup_dev_decreasing
    );
    sess.record(
        "limit",
        smallest.ok && smallest.deviation < tol,
        format!(
            "|y0(eps) - y0| = {:.3e} at eps = {} (verify_tol {tol:e}); {trend}",
            smallest.deviation, smallest.epsilon
        ),
    );
    Ok(())
}

pub fn analyze(cfg: &RunConfig) -> u8 {
    let mut sess = Session::new(cfg);
    let r = load(&sess).and_then(|spec| run_analyze(&mut sess, &spec));
    sess.finish(r)
}

pub fn melnikov(cfg: &RunConfig) -> u8 {
    let mut sess = Session::new(cfg);
    let r = load(&sess).and_then(|spec| run_melnikov(&mut sess, &spec).map(|_| ()));
    sess.finish(r)
}

pub fn verify(cfg: &RunConfig) -> u8 {
    let mut sess = Session::new(cfg);
    let r = load(&sess).and_then(|spec| {
        let a = run_melnikov(&mut sess, &spec)?;
        run_verify(&mut sess, &spec, &a)
    });
    sess.finish(r)
}

const DEFAULT_C: [f64; 19] = [
    0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85,
    0.9, 0.95,
];
const DEFAULT_KAPPA: [f64; 9] = [0.05, 0.075, 0.1, 0.125, 0.15, 0.175, 0.2, 0.225, 0.25];

fn write_sweep(sess: &mut Session, cs: &[f64], kappas: &[f64]) -> Result<(), Stop> {
    let grid: Vec<(f64, f64)> = kappas
        .iter()
        .flat_map(|&k| cs.iter().map(move |&c| (c, k)))
        .collect();
    let cells = grid
        .par_iter()
        .map(|&(c, k)| duffing::sweep_cell(c, k))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Stop::Input(format!("sweep grid: {e}")))?;
    sess.write("sweep.csv", |w| {
        writeln!(
            w,
            "c,kappa,window,window_lo,window_hi,feasible,d_prime,persists"
        )?;
        for cell in &cells {
            let (kind, lo, hi) = match cell.window {
                FeasibilityWindow::Interval { lo, hi } => {
                    ("interval", format!("{lo}"), format!("{hi}"))
                }
                FeasibilityWindow::Empty => ("empty", String::new(), String::new()),
            };
            writeln!(
                w,
                "{},{},{kind},{lo},{hi},{},{},{}",
                cell.c, cell.kappa, cell.feasible, cell.d_prime, cell.persists
            )?;
        }
        Ok(())
    })?;
    let nonempty: Vec<String> = kappas
        .iter()
        .filter(|&&k| cells.iter().any(|c| c.kappa == k && !c.window.is_empty()))
        .map(|k| k.to_string())
        .collect();
    sess.pass(
        "sweep",
        format!(
            "{} cells; nonempty window for kappa in [{}]",
            cells.len(),
            nonempty.join(", ")
        ),
    );
    Ok(())
}

pub fn sweep(cfg: &RunConfig, cs: Option<Vec<f64>>, kappas: Option<Vec<f64>>) -> u8 {
    let mut sess = Session::new(cfg);
    let cs = cs.unwrap_or_else(|| DEFAULT_C.to_vec());
    let kappas = kappas.unwrap_or_else(|| DEFAULT_KAPPA.to_vec());
    let r = write_sweep(&mut sess, &cs, &kappas).and_then(|_| {
        let spec = load(&sess)?;
        let a = run_melnikov(&mut sess, &spec)?;
        run_verify(&mut sess, &spec, &a)
    });
    sess.finish(r)
}

pub fn example(cfg: &RunConfig) -> u8 {
    let mut sess = Session::new(cfg);
    let r = load(&sess).and_then(|spec| {
        if let Some(p) = &spec.duffing {
            let file = serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "preset": DUFFING_PRESET,
                "duffing": p,
                "analysis": { "eps": spec.eps },
            });
            sess.write_json("spec.json", &file)?;
        }
        // later stages still run after an assumption failure so every report is produced
        let analyzed = run_analyze(&mut sess, &spec);
        if let Err(Stop::Input(m)) = analyzed {
            return Err(Stop::Input(m));
        }
        let a = run_melnikov(&mut sess, &spec)?;
        run_verify(&mut sess, &spec, &a)?;
        analyzed
    });
    sess.finish(r)
}
