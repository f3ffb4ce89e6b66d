//! Experiment configuration files and their static validation.

use std::fmt;
use std::path::PathBuf;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::admissibility::SweepRegion;
use crate::delay_state::{GridSpec, HistorySegment, LiftedState};
use crate::error::{Error, Result};
use crate::numkernel::{CMatrix, CVector};
use crate::population::{build_population_system, PopulationConfig};
use crate::semigroup::{Delay, DelaySystem, InputSignal};

pub const DEFAULT_SEED: u64 = 42;

/// Largest lifted dimension `n (m + 2)` accepted by the dense experiments.
pub const MAX_DENSE_DIM: usize = 6000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    Bounds,
    Admissibility,
    AdjointCheck,
    PopulationDemo,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Bounds => "bounds",
            Experiment::Admissibility => "admissibility",
            Experiment::AdjointCheck => "adjoint-check",
            Experiment::PopulationDemo => "population-demo",
        }
    }
}

impl std::str::FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [
            Experiment::Simulate,
            Experiment::Bounds,
            Experiment::Admissibility,
            Experiment::AdjointCheck,
            Experiment::PopulationDemo,
        ]
        .into_iter()
        .find(|e| e.as_str() == s)
        .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A matrix entry: a real number or `[re, im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Complex([f64; 2]),
}

impl Entry {
    pub fn value(self) -> Complex64 {
        match self {
            Entry::Real(r) => Complex64::new(r, 0.0),
            Entry::Complex([re, im]) => Complex64::new(re, im),
        }
    }
}

/// A scalar (read as 1x1) or a list of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixJson {
    Scalar(Entry),
    Rows(Vec<Vec<Entry>>),
}

impl MatrixJson {
    pub fn to_matrix(&self, name: &str) -> Result<CMatrix> {
        match self {
            MatrixJson::Scalar(e) => Ok(CMatrix::diag(&[e.value()])),
            MatrixJson::Rows(rows) => {
                let r = rows.len();
                let c = rows.first().map_or(0, Vec::len);
                if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
                    return Err(Error::Config(format!("`{name}` must be a nonempty rectangular list of rows")));
                }
                let data = rows.iter().flatten().map(|e| e.value()).collect();
                CMatrix::from_row_major(r, c, data).map_err(|e| Error::Config(format!("`{name}`: {e}")))
            }
        }
    }
}

pub fn vector_from(entries: &[Entry]) -> CVector {
    CVector(entries.iter().map(|e| e.value()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayJson {
    pub matrix: MatrixJson,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SystemConfig {
    Matrices(MatrixSystem),
    Population(PopulationConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSystem {
    pub a: MatrixJson,
    /// Shorthand for a single delay at `h = 1`.
    #[serde(default)]
    pub a1: Option<MatrixJson>,
    #[serde(default)]
    pub delays: Option<Vec<DelayJson>>,
    /// Defaults to a zero column.
    #[serde(default)]
    pub b: Option<MatrixJson>,
}

impl SystemConfig {
    pub fn build(&self) -> Result<DelaySystem> {
        match self {
            SystemConfig::Population(p) => build_population_system(p),
            SystemConfig::Matrices(s) => {
                let a = s.a.to_matrix("a")?;
                let n = a.rows();
                let delays = match (&s.a1, &s.delays) {
                    (Some(_), Some(_)) => {
                        return Err(Error::Config("give either `a1` or `delays`, not both".into()));
                    }
                    (Some(a1), None) => vec![Delay { matrix: a1.to_matrix("a1")?, h: 1.0 }],
                    (None, Some(list)) => list
                        .iter()
                        .enumerate()
                        .map(|(k, d)| Ok(Delay { matrix: d.matrix.to_matrix(&format!("delays[{k}].matrix"))?, h: d.h }))
                        .collect::<Result<_>>()?,
                    (None, None) => vec![Delay { matrix: CMatrix::zeros(n, n), h: 1.0 }],
                };
                let b = match &s.b {
                    Some(b) => b.to_matrix("b")?,
                    None => CMatrix::zeros(n, 1),
                };
                DelaySystem::new(a, delays, b)
            }
        }
    }

    pub fn population(&self) -> Option<&PopulationConfig> {
        match self {
            SystemConfig::Population(p) => Some(p),
            SystemConfig::Matrices(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_m")]
    pub m: usize,
    /// Defaults to `1 / (2m)`.
    #[serde(default)]
    pub dt: Option<f64>,
}

fn default_m() -> usize {
    GridSpec::DEFAULT_M
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { m: default_m(), dt: None }
    }
}

impl GridConfig {
    pub fn spec(&self, refine: usize) -> GridSpec {
        let k = refine.max(1);
        let m = self.m * k;
        match self.dt {
            Some(dt) => GridSpec::with_dt(m, dt / k as f64),
            None => GridSpec::new(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum HistoryConfig {
    /// `f = value`, or `f = x` when no value is given.
    Constant {
        #[serde(default)]
        value: Option<Vec<Entry>>,
    },
    Zero,
    /// Equally spaced samples on `[-1, 0]`, linearly interpolated.
    Table {
        values: Vec<Vec<Entry>>,
    },
}

impl Default for HistoryConfig {
    fn default() -> Self {
        HistoryConfig::Constant { value: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub x: Vec<Entry>,
    #[serde(default)]
    pub history: HistoryConfig,
}

impl InitialConfig {
    pub fn state(&self, n: usize, m: usize) -> Result<LiftedState> {
        let x = vector_from(&self.x);
        if x.len() != n {
            return Err(Error::Config(format!("initial `x` has length {}, system dimension is {n}", x.len())));
        }
        let tail = match &self.history {
            HistoryConfig::Zero => HistorySegment::zeros(m, n),
            HistoryConfig::Constant { value } => {
                let v = value.as_ref().map_or_else(|| x.clone(), |v| vector_from(v));
                if v.len() != n {
                    return Err(Error::Config("history value has the wrong dimension".into()));
                }
                HistorySegment::from_fn(m, n, |_| v.clone())?
            }
            HistoryConfig::Table { values } => {
                if values.len() < 2 || values.iter().any(|v| v.len() != n) {
                    return Err(Error::Config(
                        "history table needs at least two samples of the system dimension".into(),
                    ));
                }
                let samples: Vec<CVector> = values.iter().map(|v| vector_from(v)).collect();
                let coarse = HistorySegment::new(samples)?;
                HistorySegment::from_fn(m, n, |s| coarse.eval(s))?
            }
        };
        LiftedState::new(x, tail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub spacing: f64,
    pub values: Vec<Vec<Entry>>,
}

impl InputConfig {
    pub fn signal(&self, p: usize) -> Result<InputSignal> {
        if !(self.spacing > 0.0) || self.values.is_empty() || self.values.iter().any(|v| v.len() != p) {
            return Err(Error::Config(format!("input needs positive spacing and samples of dimension {p}")));
        }
        Ok(InputSignal { spacing: self.spacing, values: self.values.iter().map(|v| vector_from(v)).collect() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub t: f64,
    pub value: Vec<Entry>,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    #[serde(default = "one")]
    pub t_end: f64,
    pub initial: InitialConfig,
    #[serde(default)]
    pub input: Option<InputConfig>,
    #[serde(default)]
    pub expect: Vec<Expectation>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsParams {
    #[serde(default = "default_ts")]
    pub ts: Vec<f64>,
    #[serde(default = "default_t0")]
    pub t0: f64,
    #[serde(default = "default_hs")]
    pub hs: Vec<f64>,
}

fn default_ts() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

fn default_t0() -> f64 {
    0.25
}

fn default_hs() -> Vec<f64> {
    vec![0.1, 0.05, 0.025]
}

impl Default for BoundsParams {
    fn default() -> Self {
        BoundsParams { ts: default_ts(), t0: default_t0(), hs: default_hs() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    #[serde(default = "region_delta")]
    pub delta: f64,
    #[serde(default = "region_r_max")]
    pub r_max: f64,
    #[serde(default = "region_im_max")]
    pub im_max: f64,
    #[serde(default = "region_n_re")]
    pub n_re: usize,
    #[serde(default = "region_n_im")]
    pub n_im: usize,
}

fn region_delta() -> f64 {
    SweepRegion::default().delta
}
fn region_r_max() -> f64 {
    SweepRegion::default().r_max
}
fn region_im_max() -> f64 {
    SweepRegion::default().im_max
}
fn region_n_re() -> usize {
    SweepRegion::default().n_re
}
fn region_n_im() -> usize {
    SweepRegion::default().n_im
}

impl Default for RegionConfig {
    fn default() -> Self {
        let r = SweepRegion::default();
        RegionConfig { delta: r.delta, r_max: r.r_max, im_max: r.im_max, n_re: r.n_re, n_im: r.n_im }
    }
}

impl RegionConfig {
    pub fn region(&self) -> SweepRegion {
        SweepRegion { delta: self.delta, r_max: self.r_max, im_max: self.im_max, n_re: self.n_re, n_im: self.n_im }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmissibilityParams {
    /// Reference growth rate; defaults to the numerical-range estimate.
    #[serde(default)]
    pub omega: Option<f64>,
    #[serde(default)]
    pub region: RegionConfig,
    #[serde(default)]
    pub taus: Vec<f64>,
    /// Points where the discretized resolvent is compared with the closed form.
    #[serde(default)]
    pub cross_check: Vec<[f64; 2]>,
    #[serde(default = "cross_tol")]
    pub cross_tol: f64,
    /// `[value, tolerance]` expected for the sweep constant.
    #[serde(default)]
    pub expect_c_est: Option<[f64; 2]>,
}

fn cross_tol() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjointParams {
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_pair_tol")]
    pub tol: f64,
    /// Look for a generator eigenvalue near this point and compare with `det Delta`.
    #[serde(default)]
    pub eigen_shift: Option<[f64; 2]>,
    #[serde(default = "default_eigen_tol")]
    pub eigen_tol: f64,
    #[serde(default)]
    pub dump_matrix: bool,
}

fn default_pairs() -> usize {
    100
}

fn default_pair_tol() -> f64 {
    1e-2
}

fn default_eigen_tol() -> f64 {
    2e-2
}

impl Default for AdjointParams {
    fn default() -> Self {
        AdjointParams {
            pairs: default_pairs(),
            tol: default_pair_tol(),
            eigen_shift: None,
            eigen_tol: default_eigen_tol(),
            dump_matrix: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationParams {
    #[serde(default = "two")]
    pub t_end: f64,
}

fn two() -> f64 {
    2.0
}

impl Default for PopulationParams {
    fn default() -> Self {
        PopulationParams { t_end: two() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// When present it must match the experiment named on the command line.
    #[serde(default)]
    pub experiment: Option<Experiment>,
    pub system: SystemConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub simulate: Option<SimulateParams>,
    #[serde(default)]
    pub bounds: BoundsParams,
    #[serde(default)]
    pub admissibility: AdmissibilityParams,
    #[serde(default)]
    pub adjoint_check: AdjointParams,
    #[serde(default)]
    pub population_demo: PopulationParams,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

impl ExperimentConfig {
    /// Parse JSON text; syntax and schema errors carry line and column.
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

fn multiple_of(x: f64, step: f64) -> bool {
    let r = x / step;
    (r - r.round()).abs() <= 1e-6 * r.abs().max(1.0)
}

/// Static checks of a configuration; an empty list means the run can start.
/// Without an experiment only the grid and the system are checked.
pub fn validate(cfg: &ExperimentConfig, experiment: Option<Experiment>, refine: usize) -> Vec<String> {
    let mut diags = Vec::new();
    if let (Some(e), Some(x)) = (cfg.experiment, experiment) {
        if e != x {
            diags.push(format!("config is for experiment `{e}`, invoked as `{x}`"));
        }
    }
    let grid = cfg.grid.spec(refine);
    if grid.m == 0 {
        diags.push("grid.m must be positive".into());
        return diags;
    }
    if !(grid.dt > 0.0) {
        diags.push(format!("grid.dt must be positive, got {}", grid.dt));
        return diags;
    }
    if grid.steps_per_cell().is_err() {
        diags.push(format!("dt = {} does not divide 1/m = {} (m = {})", grid.dt, grid.cell(), grid.m));
    }
    let sys = match cfg.system.build() {
        Ok(s) => s,
        Err(e) => {
            diags.push(format!("system: {e}"));
            return diags;
        }
    };
    if let Some(p) = cfg.system.population() {
        if let Err(e) = p.check_cfl(grid.dt) {
            diags.push(e.to_string());
        }
    }
    let Some(experiment) = experiment else {
        return diags;
    };
    let n = sys.dim();
    let dense = n * (grid.m + 2);
    let contraction = |diags: &mut Vec<String>| {
        if !sys.is_contraction() {
            diags.push(format!("contraction certificate failed: max eig((A+A*)/2) = {:.6e} > 0", sys.omega0()));
        }
    };
    match experiment {
        Experiment::Simulate => match &cfg.simulate {
            None => diags.push("simulate needs a `simulate` section with the initial state".into()),
            Some(s) => {
                if !(s.t_end > 0.0) || !multiple_of(s.t_end, grid.dt) {
                    diags.push(format!("simulate.t_end = {} must be a positive multiple of dt = {}", s.t_end, grid.dt));
                }
                if let Err(e) = s.initial.state(n, grid.m) {
                    diags.push(e.to_string());
                }
                if let Some(u) = &s.input {
                    if let Err(e) = u.signal(sys.input_dim()) {
                        diags.push(e.to_string());
                    }
                }
                for (k, e) in s.expect.iter().enumerate() {
                    if e.value.len() != n || !(e.t >= 0.0 && e.t <= s.t_end) || !(e.tol >= 0.0) {
                        diags.push(format!(
                            "simulate.expect[{k}] needs t in [0, t_end], a value of dimension {n}, tol >= 0"
                        ));
                    }
                }
            }
        },
        Experiment::Bounds => {
            contraction(&mut diags);
            let b = &cfg.bounds;
            if b.ts.is_empty() || b.ts.iter().any(|&t| !(t >= 0.0) || !multiple_of(t, grid.dt)) {
                diags.push(format!("bounds.ts must be nonnegative multiples of dt = {}", grid.dt));
            }
            if b.ts.windows(2).any(|w| !(w[1] > w[0])) {
                diags.push("bounds.ts must be strictly increasing".into());
            }
            if !(b.t0 > 0.0 && b.t0 <= 1.0) {
                diags.push(format!("bounds.t0 = {} outside (0, 1]", b.t0));
            }
            if b.hs.is_empty()
                || b.hs.iter().any(|&h| !(h > 0.0) || !multiple_of(h, grid.dt))
                || b.hs.windows(2).any(|w| !(w[1] < w[0]))
            {
                diags.push(format!("bounds.hs must be strictly decreasing positive multiples of dt = {}", grid.dt));
            }
            if dense > MAX_DENSE_DIM {
                diags.push(format!("lifted dimension {dense} exceeds {MAX_DENSE_DIM}; reduce m or the system size"));
            }
        }
        Experiment::Admissibility => {
            let a = &cfg.admissibility;
            if let Err(e) = a.region.region().validate() {
                diags.push(e.to_string());
            }
            for &tau in &a.taus {
                if !(tau > 0.0) || !multiple_of(tau, grid.cell()) {
                    diags.push(format!(
                        "admissibility.taus entry {tau} must be a positive multiple of 1/m = {}",
                        grid.cell()
                    ));
                }
            }
            if !a.cross_check.is_empty() && dense > MAX_DENSE_DIM {
                diags.push(format!("lifted dimension {dense} exceeds {MAX_DENSE_DIM}; reduce m or the system size"));
            }
            if let Some(omega) = a.omega {
                for l in &a.cross_check {
                    if !(l[0] > omega) {
                        diags.push(format!("cross-check point {:?} must have Re(lambda) > omega = {omega}", l));
                    }
                }
            }
        }
        Experiment::AdjointCheck => {
            if grid.m < 2 {
                diags.push("adjoint-check needs m >= 2".into());
            }
            if dense > MAX_DENSE_DIM / 2 {
                diags.push(format!("lifted dimension {dense} is too large for the refinement study"));
            }
            if cfg.adjoint_check.pairs == 0 {
                diags.push("adjoint_check.pairs must be positive".into());
            }
        }
        Experiment::PopulationDemo => {
            if cfg.system.population().is_none() {
                diags.push("population-demo needs a system of kind `population`".into());
            }
            let t_end = cfg.population_demo.t_end;
            if !(t_end > 0.0) || !multiple_of(t_end, grid.dt) {
                diags.push(format!("population_demo.t_end = {t_end} must be a positive multiple of dt = {}", grid.dt));
            }
        }
    }
    diags
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"{
        "system": {"kind": "matrices", "a": 0, "a1": 1},
        "grid": {"m": 200, "dt": 0.001},
        "simulate": {"t_end": 2.0, "initial": {"x": [1.0]}}
    }"#;

    #[test]
    fn parses_scalar_shorthand() {
        let cfg = ExperimentConfig::parse(SCALAR).unwrap();
        let sys = cfg.system.build().unwrap();
        assert_eq!(sys.dim(), 1);
        assert_eq!(sys.delays().len(), 1);
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert!(validate(&cfg, Some(Experiment::Simulate), 1).is_empty());
    }

    #[test]
    fn complex_entries() {
        let m = MatrixJson::Rows(vec![vec![Entry::Real(1.0), Entry::Complex([0.0, -2.0])]]);
        let c = m.to_matrix("x").unwrap();
        assert_eq!(c[(0, 1)], Complex64::new(0.0, -2.0));
    }

    #[test]
    fn parse_errors_carry_line() {
        let err =
            ExperimentConfig::parse("{\n  \"system\": {\"kind\": \"matrices\", \"a\": 0},\n  \"grid\": {\"m\": -1}\n}")
                .unwrap_err()
                .to_string();
        assert!(err.contains("line 3"), "{err}");
        let err = ExperimentConfig::parse("{\"system\": {\"kind\": \"matrices\", \"a\": 0}, \"bogus\": 1}")
            .unwrap_err()
            .to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn grid_divisibility_diagnostic_names_both_values() {
        let mut cfg = ExperimentConfig::parse(SCALAR).unwrap();
        cfg.grid.dt = Some(0.003);
        let d = validate(&cfg, Some(Experiment::Simulate), 1);
        assert!(d.iter().any(|m| m.contains("0.003") && m.contains("0.005")), "{d:?}");
    }

    #[test]
    fn contraction_diagnostic() {
        let cfg = ExperimentConfig::parse(r#"{"system": {"kind": "matrices", "a": 0.5, "a1": 1}, "grid": {"m": 20}}"#)
            .unwrap();
        let d = validate(&cfg, Some(Experiment::Bounds), 1);
        assert!(d.iter().any(|m| m.contains("contraction certificate failed") && m.contains("5.0")), "{d:?}");
    }

    #[test]
    fn population_system_parses() {
        let text = r#"{"system": {"kind": "population", "n": 40, "s_max": 4.0,
            "mu": {"kind": "constant", "value": 1.0},
            "beta": {"kind": "step", "from": 0.0, "to": 1.0, "value": 0.8}},
            "grid": {"m": 20}}"#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert!(validate(&cfg, Some(Experiment::PopulationDemo), 1).is_empty());
        assert_eq!(cfg.system.build().unwrap().dim(), 40);
    }

    #[test]
    fn refine_scales_grid() {
        let g = GridConfig { m: 10, dt: Some(0.01) }.spec(2);
        assert_eq!(g.m, 20);
        assert!((g.dt - 0.005).abs() < 1e-15);
    }
}
