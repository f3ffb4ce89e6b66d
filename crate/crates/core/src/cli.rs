//! Command-line experiments: each run reads a JSON config, writes CSV and JSON
//! artifacts plus a `run.json` manifest, and reports an outcome that maps to
//! the exit code.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::adjoint::{
    assemble_adjoint, assemble_generator, matrix_csv, pairing_defect, pairing_defect_unchecked, SmoothPair,
};
use crate::admissibility::{
    characteristic_root_near, finite_time_constant, resolvent_norm_analytic, resolvent_norm_discrete, weiss_constant,
    FiniteTimeConstants, WeissReport,
};
use crate::bounds::{
    derivative_report, envelope_report, gronwall_report, log_concave_envelope, main_report, miyadera_voigt_q,
    mv_report, norm_derivative_at_zero, numerical_range_bound, range_report, t0_report, BoundReport, NormSweep,
};
use crate::config::{validate, vector_from, Experiment, ExperimentConfig};
use crate::delay_state::{GridSpec, HistorySegment, LiftedState};
use crate::error::{Error, Result};
use crate::numkernel::CVector;
use crate::output::{fmt_float, to_json_string};
use crate::population::run_population_demo;
use crate::semigroup::{simulate_steps, DelaySystem};

pub const MANIFEST: &str = "run.json";
pub const DEFAULT_OUT: &str = "out";

/// Row budget for the population trajectory CSV; steps are strided to fit.
const TRAJECTORY_ROWS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Passed,
    Failed,
    Error,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Passed => 0,
            Outcome::Failed => 2,
            Outcome::Error => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub experiment: Experiment,
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub refine: usize,
    pub omega: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Advisory checks are reported but do not affect the outcome.
    pub advisory: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), passed, advisory: false, detail: detail.into() }
    }

    fn advisory(mut self) -> Self {
        self.advisory = true;
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridInfo {
    pub m: usize,
    pub dt: f64,
}

/// Contents of `run.json`. Everything except `timings_ms` is deterministic.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: Experiment,
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
    pub refine: usize,
    pub grid: Option<GridInfo>,
    pub outcome: Outcome,
    pub error: Option<String>,
    pub checks: Vec<Check>,
    pub artifacts: Vec<String>,
    pub timings_ms: BTreeMap<String, f64>,
}

struct Run {
    out: PathBuf,
    artifacts: Vec<String>,
    checks: Vec<Check>,
    timings: BTreeMap<String, f64>,
    clock: Instant,
}

impl Run {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.out.join(name), contents)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = to_json_string(value)?;
        self.write(name, &text)
    }

    fn lap(&mut self, phase: &str) {
        let ms = self.clock.elapsed().as_secs_f64() * 1e3;
        self.timings.insert(phase.to_string(), ms);
        self.clock = Instant::now();
    }

    fn check(&mut self, c: Check) {
        self.checks.push(c);
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Read and parse a config file; parse errors are reported as `path:line:column: message`.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let cfg = serde_json::from_slice(&bytes).map_err(|e| {
        Error::Config(format!("{}:{}:{}: {}", path.display(), e.line(), e.column(), strip_position(&e.to_string())))
    })?;
    Ok((cfg, bytes))
}

fn strip_position(msg: &str) -> &str {
    msg.rfind(" at line ").map_or(msg, |i| &msg[..i])
}

/// Run one experiment end to end and write the manifest, also on errors. Only
/// an output directory that cannot be created leaves no manifest behind.
pub fn run(opts: &RunOptions) -> Manifest {
    let total = Instant::now();
    let mut manifest = Manifest {
        tool: "delayadm",
        version: env!("CARGO_PKG_VERSION"),
        experiment: opts.experiment,
        config_sha256: None,
        seed: None,
        refine: opts.refine.max(1),
        grid: None,
        outcome: Outcome::Error,
        error: None,
        checks: Vec::new(),
        artifacts: Vec::new(),
        timings_ms: BTreeMap::new(),
    };
    let loaded = load_config(&opts.config);
    let out = opts
        .out
        .clone()
        .or_else(|| loaded.as_ref().ok().and_then(|(c, _)| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let mut run =
        Run { out, artifacts: Vec::new(), checks: Vec::new(), timings: BTreeMap::new(), clock: Instant::now() };
    let created = fs::create_dir_all(&run.out);
    let result = loaded.and_then(|(cfg, bytes)| {
        manifest.config_sha256 = Some(sha256_hex(&bytes));
        let seed = opts.seed.unwrap_or(cfg.seed);
        manifest.seed = Some(seed);
        let grid = cfg.grid.spec(opts.refine);
        manifest.grid = Some(GridInfo { m: grid.m, dt: grid.dt });
        let diags = validate(&cfg, Some(opts.experiment), opts.refine);
        if !diags.is_empty() {
            return Err(Error::Config(diags.join("; ")));
        }
        created?;
        run.lap("setup");
        dispatch(opts, &cfg, &grid, seed, &mut run)
    });
    manifest.outcome = match result {
        Ok(()) if run.checks.iter().all(|c| c.passed || c.advisory) => Outcome::Passed,
        Ok(()) => Outcome::Failed,
        Err(e) => {
            manifest.error = Some(e.to_string());
            Outcome::Error
        }
    };
    run.timings.insert("total".into(), total.elapsed().as_secs_f64() * 1e3);
    manifest.checks = run.checks;
    manifest.timings_ms = run.timings;
    manifest.artifacts = run.artifacts;
    if run.out.is_dir() {
        manifest.artifacts.push(MANIFEST.to_string());
        let written =
            to_json_string(&manifest).map_err(Error::from).and_then(|t| Ok(fs::write(run.out.join(MANIFEST), t)?));
        if let Err(e) = written {
            manifest.outcome = Outcome::Error;
            manifest.error = Some(format!("could not write manifest: {e}"));
        }
    }
    manifest
}

fn dispatch(opts: &RunOptions, cfg: &ExperimentConfig, grid: &GridSpec, seed: u64, run: &mut Run) -> Result<()> {
    let sys = cfg.system.build()?;
    match opts.experiment {
        Experiment::Simulate => simulate(cfg, &sys, grid, run),
        Experiment::Bounds => bounds(cfg, &sys, grid, seed, run),
        Experiment::Admissibility => admissibility(cfg, &sys, grid, opts.omega, run),
        Experiment::AdjointCheck => adjoint_check(cfg, &sys, grid, seed, run),
        Experiment::PopulationDemo => population(cfg, grid, run),
    }
}

fn complex_pairs(v: &[Complex64]) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

#[derive(Serialize)]
struct ExpectationResult {
    t: f64,
    measured: Vec<[f64; 2]>,
    expected: Vec<[f64; 2]>,
    error: f64,
    tol: f64,
    passed: bool,
}

#[derive(Serialize)]
struct SimulateSummary {
    t_end: f64,
    steps: usize,
    z_end: Vec<[f64; 2]>,
    max_abs: f64,
    expectations: Vec<ExpectationResult>,
}

fn simulate(cfg: &ExperimentConfig, sys: &DelaySystem, grid: &GridSpec, run: &mut Run) -> Result<()> {
    let params = cfg.simulate.as_ref().ok_or_else(|| Error::Config("missing `simulate` section".into()))?;
    let v0 = params.initial.state(sys.dim(), grid.m)?;
    let input = params.input.as_ref().map(|u| u.signal(sys.input_dim())).transpose()?;
    let traj = simulate_steps(sys, &v0, input.as_ref(), params.t_end, grid)?;
    run.lap("simulate");
    let mut max_abs: f64 = 0.0;
    let mut finite = true;
    for j in 0..=traj.steps() {
        for z in traj.sample(j) {
            finite &= z.is_finite();
            max_abs = max_abs.max(z.norm());
        }
    }
    run.check(Check::new("finite", finite, format!("max |z| = {}", fmt_float(max_abs))));
    let mut expectations = Vec::new();
    for (k, e) in params.expect.iter().enumerate() {
        let measured = traj.eval(e.t);
        let expected = vector_from(&e.value);
        let mut diff = measured.clone();
        diff.axpy(Complex64::new(-1.0, 0.0), &expected);
        let error = diff.norm();
        let passed = error <= e.tol;
        run.check(Check::new(
            format!("expect[{k}]"),
            passed,
            format!("|z({}) - expected| = {} (tol {})", e.t, fmt_float(error), fmt_float(e.tol)),
        ));
        expectations.push(ExpectationResult {
            t: e.t,
            measured: complex_pairs(measured.as_slice()),
            expected: complex_pairs(expected.as_slice()),
            error,
            tol: e.tol,
            passed,
        });
    }
    let end = traj.state_at(params.t_end)?;
    run.write("trajectory.csv", &traj.to_csv())?;
    run.write_json("final_state.json", &end)?;
    run.write_json(
        "summary.json",
        &SimulateSummary {
            t_end: params.t_end,
            steps: traj.steps(),
            z_end: complex_pairs(end.head.as_slice()),
            max_abs,
            expectations,
        },
    )?;
    run.lap("write");
    Ok(())
}

fn sub_sweep(sweep: &NormSweep, keep: impl Fn(f64) -> bool) -> Option<NormSweep> {
    let idx: Vec<usize> = (0..sweep.ts.len()).filter(|&i| keep(sweep.ts[i])).collect();
    if idx.is_empty() {
        return None;
    }
    Some(NormSweep {
        ts: idx.iter().map(|&i| sweep.ts[i]).collect(),
        coarse: idx.iter().map(|&i| sweep.coarse[i]).collect(),
        fine: idx.iter().map(|&i| sweep.fine[i]).collect(),
    })
}

fn norms_csv(sweep: &NormSweep) -> String {
    let mut out = String::from("t,norm,norm_refined\n");
    for ((t, a), b) in sweep.ts.iter().zip(&sweep.coarse).zip(&sweep.fine) {
        let _ = writeln!(out, "{},{},{}", fmt_float(*t), fmt_float(*a), fmt_float(*b));
    }
    out
}

fn report_check(r: &BoundReport) -> Check {
    let c =
        Check::new(r.kind.as_str(), r.passed, format!("margin {} (slack {})", fmt_float(r.margin), fmt_float(r.slack)));
    if r.advisory {
        c.advisory()
    } else {
        c
    }
}

#[derive(Serialize)]
struct BoundsSummary<'a> {
    reports: &'a [BoundReport],
    notes: Vec<String>,
    mv: &'a crate::bounds::MvEstimate,
    envelope: &'a crate::bounds::Envelope,
    derivative: &'a crate::bounds::DerivativeEstimate,
    omega_range: f64,
}

fn bounds(cfg: &ExperimentConfig, sys: &DelaySystem, grid: &GridSpec, seed: u64, run: &mut Run) -> Result<()> {
    sys.require_contraction()?;
    let p = &cfg.bounds;
    let sweep = NormSweep::measure(sys, &p.ts, grid)?;
    let sweep0 = NormSweep::measure(&sys.undelayed(), &p.ts, grid)?;
    run.lap("norms");
    let mut reports = vec![t0_report(&sweep0)?];
    let mut notes = Vec::new();
    match (sys.single_delay_norm(), sub_sweep(&sweep, |t| t <= 1.0)) {
        (Ok(a1), Some(unit)) => {
            reports.push(gronwall_report(&unit, a1)?);
            reports.push(main_report(&unit, a1)?);
        }
        (Err(e), _) => notes.push(format!("gronwall and main bounds skipped: {e}")),
        (_, None) => notes.push("gronwall and main bounds skipped: no sample time in [0, 1]".into()),
    }
    let mv = miyadera_voigt_q(sys, p.t0, grid, seed)?;
    reports.push(mv_report(&mv)?);
    run.lap("mv");
    let envelope = log_concave_envelope(&sweep.ts, &sweep.coarse)?;
    reports.push(envelope_report(&envelope, &sweep.coarse)?);
    let omega = numerical_range_bound(sys, grid)?;
    reports.push(range_report(&sweep, omega)?);
    let derivative = norm_derivative_at_zero(sys, &p.hs, grid)?;
    reports.push(derivative_report(&derivative, omega)?);
    run.lap("range");
    for r in &reports {
        run.check(report_check(r));
        run.write(&format!("bounds_{}.csv", r.kind.as_str()), &r.to_csv())?;
    }
    run.write("norms.csv", &norms_csv(&sweep))?;
    run.write_json(
        "bounds.json",
        &BoundsSummary {
            reports: &reports,
            notes,
            mv: &mv,
            envelope: &envelope,
            derivative: &derivative,
            omega_range: omega,
        },
    )?;
    run.lap("write");
    Ok(())
}

#[derive(Serialize)]
struct CrossCheck {
    lambda: [f64; 2],
    analytic: f64,
    discrete: f64,
    relative: f64,
    passed: bool,
}

#[derive(Serialize)]
struct AdmissibilitySummary<'a> {
    omega_source: &'static str,
    weiss: &'a WeissReport,
    finite_time: Vec<FiniteTimeConstants>,
    cross_check: Vec<CrossCheck>,
}

fn admissibility(
    cfg: &ExperimentConfig,
    sys: &DelaySystem,
    grid: &GridSpec,
    omega_flag: Option<f64>,
    run: &mut Run,
) -> Result<()> {
    let p = &cfg.admissibility;
    let (omega, source) = match (omega_flag, p.omega) {
        (Some(w), _) => (w, "flag"),
        (None, Some(w)) => (w, "config"),
        (None, None) => (numerical_range_bound(sys, grid)?, "numerical-range"),
    };
    let weiss = weiss_constant(sys, omega, &p.region.region())?;
    run.lap("sweep");
    let mut detail = format!("C_est = {} at lambda = {}", fmt_float(weiss.c_est), weiss.argmax_lambda);
    if !weiss.skipped.is_empty() {
        let _ = write!(detail, " ({} characteristic roots skipped)", weiss.skipped.len());
    }
    run.check(Check::new("weiss_finite", weiss.c_est.is_finite(), detail));
    if let Some([value, tol]) = p.expect_c_est {
        let err = (weiss.c_est - value).abs();
        run.check(Check::new(
            "expect_c_est",
            err <= tol,
            format!("|C_est - {}| = {} (tol {})", fmt_float(value), fmt_float(err), fmt_float(tol)),
        ));
    }
    let mut finite_time = Vec::new();
    for &tau in &p.taus {
        let c = finite_time_constant(sys, tau, grid)?;
        run.check(Check::new(
            format!("finite_time[{}]", fmt_float(tau)),
            c.c_full.is_finite() && c.c_head <= c.c_full * (1.0 + 1e-12),
            format!("c_full = {}, c_head = {}", fmt_float(c.c_full), fmt_float(c.c_head)),
        ));
        finite_time.push(c);
    }
    run.lap("finite_time");
    let mut cross = Vec::new();
    for &[re, im] in &p.cross_check {
        let lambda = Complex64::new(re, im);
        let a = resolvent_norm_analytic(sys, lambda, omega)?;
        let d = resolvent_norm_discrete(sys, lambda, grid, omega)?;
        let relative = (a.norm - d.norm).abs() / a.norm.max(f64::MIN_POSITIVE);
        let passed = relative <= p.cross_tol;
        run.check(Check::new(
            format!("cross_check[{re},{im}]"),
            passed,
            format!("analytic {} vs discrete {}", fmt_float(a.norm), fmt_float(d.norm)),
        ));
        cross.push(CrossCheck { lambda: [re, im], analytic: a.norm, discrete: d.norm, relative, passed });
    }
    run.lap("cross_check");
    run.write("sweep.csv", &weiss.to_csv())?;
    run.write_json(
        "admissibility.json",
        &AdmissibilitySummary { omega_source: source, weiss: &weiss, finite_time, cross_check: cross },
    )?;
    run.lap("write");
    Ok(())
}

#[derive(Serialize)]
struct EigenCheck {
    shift: [f64; 2],
    discrete: [f64; 2],
    residual: f64,
    root: [f64; 2],
    distance: f64,
}

#[derive(Serialize)]
struct AdjointSummary {
    pairs: usize,
    m: usize,
    m_refined: usize,
    max_defect: f64,
    max_defect_refined: f64,
    observed_order: f64,
    zero_tail_defect: f64,
    boundary_probe_error: String,
    boundary_probe_defect: f64,
    eigen: Option<EigenCheck>,
}

fn adjoint_check(cfg: &ExperimentConfig, sys: &DelaySystem, grid: &GridSpec, seed: u64, run: &mut Run) -> Result<()> {
    let p = &cfg.adjoint_check;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<SmoothPair> = (0..p.pairs).map(|_| SmoothPair::random(sys.dim(), &mut rng)).collect();
    let fine = GridSpec::new(grid.m * 2);
    let max_defect = |g: &GridSpec| -> Result<f64> {
        pairs.iter().try_fold(0.0f64, |acc, pair| {
            let (v, w) = pair.sample(g.m)?;
            Ok(acc.max(pairing_defect(sys, g, &v, &w)?))
        })
    };
    let coarse_defect = max_defect(grid)?;
    let fine_defect = max_defect(&fine)?;
    run.lap("pairing");
    let observed_order = (coarse_defect / fine_defect).log2();
    run.check(Check::new(
        "pairing",
        coarse_defect <= p.tol,
        format!("max defect {} at m = {} (tol {})", fmt_float(coarse_defect), grid.m, fmt_float(p.tol)),
    ));
    run.check(Check::new(
        "refinement",
        fine_defect <= 0.75 * coarse_defect || fine_defect <= 1e-10,
        format!("max defect {} at m = {}, observed order {:.3}", fmt_float(fine_defect), fine.m, observed_order),
    ));
    let zero_tail = pairs.iter().try_fold(0.0f64, |acc, pair| {
        let (v, w) = pair.sample(grid.m)?;
        let n = sys.dim();
        let v0 = LiftedState::new(v.head, HistorySegment::zeros(grid.m, n))?;
        let w0 = LiftedState::new(w.head, HistorySegment::zeros(grid.m, n))?;
        Ok::<f64, Error>(acc.max(pairing_defect_unchecked(sys, grid, &v0, &w0)?))
    })?;
    run.check(Check::new("zero_tail", zero_tail <= 1e-12, format!("max head-only defect {}", fmt_float(zero_tail))));
    // g(0) != 0 must be rejected; the unchecked pairing shows why
    let (v, mut w) = pairs[0].sample(grid.m)?;
    *w.tail.value_mut(grid.m) = CVector(vec![Complex64::new(1.0, 0.0); sys.dim()]);
    let probe_error = match pairing_defect(sys, grid, &v, &w) {
        Err(Error::Domain(msg)) => msg,
        Err(e) => return Err(e),
        Ok(_) => String::new(),
    };
    let probe_defect = pairing_defect_unchecked(sys, grid, &v, &w)?;
    run.check(Check::new(
        "boundary_enforced",
        !probe_error.is_empty(),
        format!("unchecked defect with g(0) != 0: {}", fmt_float(probe_defect)),
    ));
    let gen = assemble_generator(sys, grid)?;
    let eigen = match p.eigen_shift {
        None => None,
        Some([re, im]) => {
            let (mu, residual) = crate::numkernel::nearest_eigenvalue(gen.matrix(), Complex64::new(re, im))?;
            let root = characteristic_root_near(sys, mu)?;
            let distance = (mu - root).norm();
            run.check(Check::new(
                "eigenvalue",
                distance <= p.eigen_tol,
                format!("discrete {mu} vs characteristic root {root}"),
            ));
            Some(EigenCheck { shift: [re, im], discrete: [mu.re, mu.im], residual, root: [root.re, root.im], distance })
        }
    };
    run.lap("eigen");
    if p.dump_matrix {
        run.write("generator.csv", &matrix_csv(gen.matrix()))?;
        run.write("adjoint.csv", &matrix_csv(assemble_adjoint(sys, grid)?.matrix()))?;
    }
    run.write_json(
        "adjoint.json",
        &AdjointSummary {
            pairs: p.pairs,
            m: grid.m,
            m_refined: fine.m,
            max_defect: coarse_defect,
            max_defect_refined: fine_defect,
            observed_order,
            zero_tail_defect: zero_tail,
            boundary_probe_error: probe_error,
            boundary_probe_defect: probe_defect,
            eigen,
        },
    )?;
    run.lap("write");
    Ok(())
}

fn population(cfg: &ExperimentConfig, grid: &GridSpec, run: &mut Run) -> Result<()> {
    let pc =
        cfg.system.population().ok_or_else(|| Error::Config("population-demo needs a population system".into()))?;
    let t_end = cfg.population_demo.t_end;
    let result = run_population_demo(pc, grid, t_end)?;
    run.lap("simulate");
    let s = &result.summary;
    let positivity = Check::new(
        "positivity",
        s.positive,
        format!("min g = {} (nu >= 0: {})", fmt_float(s.overall_min), s.nu_nonnegative),
    );
    run.check(if s.nu_nonnegative { positivity } else { positivity.advisory() });
    run.check(Check::new(
        "finite",
        s.total.iter().all(|x| x.is_finite()),
        format!("max birth residual {}", fmt_float(s.max_birth_residual)),
    ));
    run.check(Check::new("cfl", s.cfl <= 1.0, format!("dt / ds = {}", fmt_float(s.cfl))));
    let mut series = String::from("t,total,birth_residual,min_value\n");
    for i in 0..s.times.len() {
        let _ = writeln!(
            series,
            "{},{},{},{}",
            fmt_float(s.times[i]),
            fmt_float(s.total[i]),
            fmt_float(s.birth_residual[i]),
            fmt_float(s.min_value[i])
        );
    }
    let traj = &result.trajectory;
    let mut trajectory = String::from("t");
    for age in pc.nodes() {
        let _ = write!(trajectory, ",g({})", fmt_float(age));
    }
    trajectory.push('\n');
    let stride = traj.steps().div_ceil(TRAJECTORY_ROWS).max(1);
    for j in (0..=traj.steps()).filter(|j| j % stride == 0 || *j == traj.steps()) {
        let _ = write!(trajectory, "{}", fmt_float(j as f64 * traj.dt()));
        for g in traj.sample(j) {
            let _ = write!(trajectory, ",{}", fmt_float(g.re));
        }
        trajectory.push('\n');
    }
    let mut density = String::from("age,density\n");
    let last = traj.sample(traj.steps());
    for (age, g) in pc.nodes().iter().zip(last) {
        let _ = writeln!(density, "{},{}", fmt_float(*age), fmt_float(g.re));
    }
    run.write("trajectory.csv", &trajectory)?;
    run.write("population.csv", &series)?;
    run.write("density.csv", &density)?;
    run.write_json("summary.json", s)?;
    run.lap("write");
    Ok(())
}

/// Diagnostics for `validate`. A config that cannot be parsed yields a single
/// line-anchored diagnostic.
pub fn validate_file(path: &Path, experiment: Option<Experiment>, refine: usize) -> Vec<String> {
    match load_config(path) {
        Err(Error::Config(msg)) => vec![msg],
        Err(e) => vec![e.to_string()],
        Ok((cfg, _)) => validate(&cfg, experiment.or(cfg.experiment), refine),
    }
}
