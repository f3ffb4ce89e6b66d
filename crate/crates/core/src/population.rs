//! Age-structured population with a delayed modulation term,
//!
//! `d_t g + d_s g = -mu g + nu g(t - 1)`, `g(t, 0) = int beta g(t, s) ds`,
//!
//! discretized in age by first-order upwinding on `[0, s_max]` with outflow at
//! `s_max`. The birth node `g_0` is eliminated through the trapezoid birth law.

use serde::{Deserialize, Serialize};

use crate::delay_state::{GridSpec, HistorySegment, LiftedState};
use crate::error::{Error, Result};
use crate::numkernel::{CMatrix, CVector};
use crate::semigroup::{simulate_steps, DelaySystem, Trajectory};

/// A coefficient or data profile on `[0, s_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Profile {
    Constant {
        value: f64,
    },
    Gaussian {
        center: f64,
        width: f64,
        height: f64,
    },
    /// `value` on `[from, to]`, zero elsewhere.
    Step {
        from: f64,
        to: f64,
        value: f64,
    },
    /// Values at equally spaced points covering `[0, s_max]`, linearly interpolated.
    Table {
        values: Vec<f64>,
    },
}

impl Profile {
    pub fn eval(&self, s: f64, s_max: f64) -> f64 {
        match self {
            Profile::Constant { value } => *value,
            Profile::Gaussian { center, width, height } => height * (-((s - center) / width).powi(2) / 2.0).exp(),
            Profile::Step { from, to, value } => {
                if s >= *from - 1e-12 && s <= *to + 1e-12 {
                    *value
                } else {
                    0.0
                }
            }
            Profile::Table { values } => {
                if values.len() == 1 {
                    return values[0];
                }
                let pos = (s / s_max * (values.len() - 1) as f64).clamp(0.0, (values.len() - 1) as f64);
                let k = (pos.floor() as usize).min(values.len() - 2);
                let frac = pos - k as f64;
                values[k] * (1.0 - frac) + values[k + 1] * frac
            }
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            Profile::Constant { value } => value.is_finite(),
            Profile::Gaussian { center, width, height } => center.is_finite() && *width > 0.0 && height.is_finite(),
            Profile::Step { from, to, value } => from <= to && value.is_finite(),
            Profile::Table { values } => !values.is_empty() && values.iter().all(|v| v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("profile `{name}` is malformed")))
        }
    }
}

fn zero_profile() -> Profile {
    Profile::Constant { value: 0.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    /// Number of age cells; the state holds nodes `1..=n`.
    pub n: usize,
    /// Truncation age; defaults to `5 / min(mu)` capped at 50.
    #[serde(default)]
    pub s_max: Option<f64>,
    pub mu: Profile,
    #[serde(default = "zero_profile")]
    pub nu: Profile,
    #[serde(default = "zero_profile")]
    pub beta: Profile,
    /// Age profile of the initial state; the history is held constant in time.
    #[serde(default = "zero_profile")]
    pub initial: Profile,
    /// Add `c e^{-s}` to the initial profile so it satisfies the birth law.
    #[serde(default)]
    pub compatible_initial: bool,
    /// Ages where the single input column injects; `None` gives `B = 0`.
    #[serde(default)]
    pub input_band: Option<[f64; 2]>,
}

pub const S_MAX_CAP: f64 = 50.0;

impl PopulationConfig {
    pub fn s_max(&self) -> f64 {
        self.s_max.unwrap_or_else(|| {
            let min_mu =
                self.nodes_raw(S_MAX_CAP).iter().map(|&s| self.mu.eval(s, S_MAX_CAP)).fold(f64::INFINITY, f64::min);
            if min_mu > 0.0 {
                (5.0 / min_mu).min(S_MAX_CAP)
            } else {
                S_MAX_CAP
            }
        })
    }

    fn nodes_raw(&self, s_max: f64) -> Vec<f64> {
        (0..=self.n).map(|i| i as f64 * s_max / self.n as f64).collect()
    }

    /// Age nodes `s_0 = 0, ..., s_n = s_max`.
    pub fn nodes(&self) -> Vec<f64> {
        self.nodes_raw(self.s_max())
    }

    pub fn ds(&self) -> f64 {
        self.s_max() / self.n as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 8 {
            return Err(Error::Config(format!("population needs n >= 8 age cells, got {}", self.n)));
        }
        if let Some(s) = self.s_max {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("s_max must be positive, got {s}")));
            }
        }
        for (name, p) in [("mu", &self.mu), ("nu", &self.nu), ("beta", &self.beta), ("initial", &self.initial)] {
            p.validate(name)?;
        }
        let s_max = self.s_max();
        for s in self.nodes() {
            if self.mu.eval(s, s_max) < 0.0 {
                return Err(Error::Config(format!("mu is negative at age {s}")));
            }
            if self.beta.eval(s, s_max) < 0.0 {
                return Err(Error::Config(format!("beta is negative at age {s}")));
            }
        }
        if let Some([a, b]) = self.input_band {
            if !(a <= b) {
                return Err(Error::Config(format!("input band [{a}, {b}] is empty")));
            }
        }
        Ok(())
    }

    pub fn nu_nonnegative(&self) -> bool {
        let s_max = self.s_max();
        self.nodes().iter().all(|&s| self.nu.eval(s, s_max) >= 0.0)
    }

    /// `dt / ds`; must not exceed one.
    pub fn cfl(&self, dt: f64) -> f64 {
        dt / self.ds()
    }

    pub fn check_cfl(&self, dt: f64) -> Result<()> {
        let c = self.cfl(dt);
        if c > 1.0 + 1e-12 {
            return Err(Error::Config(format!("CFL violated: dt = {dt} exceeds age step ds = {}", self.ds())));
        }
        Ok(())
    }

    /// Trapezoid weights of the age grid and `beta` at the nodes.
    fn birth_weights(&self) -> (Vec<f64>, f64) {
        let s_max = self.s_max();
        let ds = self.ds();
        let nodes = self.nodes();
        let mut wb: Vec<f64> = nodes
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let w = if i == 0 || i == self.n { 0.5 * ds } else { ds };
                w * self.beta.eval(s, s_max)
            })
            .collect();
        let denom = 1.0 - wb[0];
        wb[0] = 0.0;
        (wb, denom)
    }

    /// `g_0` expressed through `g_1..g_n`: coefficients on the state.
    fn birth_row(&self) -> Result<Vec<f64>> {
        let (wb, denom) = self.birth_weights();
        if denom <= 0.0 {
            return Err(Error::Config("birth law is degenerate: ds * beta(0) / 2 >= 1".into()));
        }
        Ok(wb[1..].iter().map(|w| w / denom).collect())
    }

    /// Initial age profile at nodes `1..=n`, corrected for the birth law if requested.
    pub fn initial_state(&self) -> Result<Vec<f64>> {
        let s_max = self.s_max();
        let nodes = self.nodes();
        let mut p: Vec<f64> = nodes.iter().map(|&s| self.initial.eval(s, s_max)).collect();
        if self.compatible_initial {
            let (wb, denom) = self.birth_weights();
            // full trapezoid of beta, including the s = 0 weight
            let w0 = 1.0 - denom;
            let int_beta = |f: &dyn Fn(usize) -> f64| {
                w0 * f(0) + wb.iter().enumerate().skip(1).map(|(i, w)| w * f(i)).sum::<f64>()
            };
            let bp = int_beta(&|i| p[i]);
            let be = int_beta(&|i| (-nodes[i]).exp());
            if (1.0 - be).abs() < 1e-12 {
                return Err(Error::Config("cannot correct the initial profile: int beta e^{-s} = 1".into()));
            }
            let c = (bp - p[0]) / (1.0 - be);
            for (v, s) in p.iter_mut().zip(&nodes) {
                *v += c * (-s).exp();
            }
        }
        Ok(p[1..].to_vec())
    }
}

/// `A = -D_s - diag(mu)` with the birth law folded into the first row,
/// `A_1 = diag(nu)`, `B` the indicator of the input band.
pub fn build_population_system(cfg: &PopulationConfig) -> Result<DelaySystem> {
    cfg.validate()?;
    let n = cfg.n;
    let s_max = cfg.s_max();
    let ds = cfg.ds();
    let nodes = cfg.nodes();
    let birth = cfg.birth_row()?;
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        let s = nodes[i + 1];
        a[i][i] = -1.0 / ds - cfg.mu.eval(s, s_max);
        if i > 0 {
            a[i][i - 1] = 1.0 / ds;
        } else {
            for (j, b) in birth.iter().enumerate() {
                a[0][j] += b / ds;
            }
        }
    }
    let a = CMatrix::from_real_rows(&a)?;
    let a1 = CMatrix::diag_real(&nodes[1..].iter().map(|&s| cfg.nu.eval(s, s_max)).collect::<Vec<_>>());
    let b_col: Vec<Vec<f64>> = nodes[1..]
        .iter()
        .map(|&s| match cfg.input_band {
            Some([lo, hi]) if s >= lo - 1e-12 && s <= hi + 1e-12 => vec![1.0],
            _ => vec![0.0],
        })
        .collect();
    let b = CMatrix::from_real_rows(&b_col)?;
    DelaySystem::single(a, a1, b)
}

#[derive(Debug, Clone, Serialize)]
pub struct PopulationSummary {
    pub times: Vec<f64>,
    /// `ds * sum_{i >= 1} g_i`, the mass balanced exactly by the upwind scheme.
    pub total: Vec<f64>,
    /// `|g_1 - int beta g|`, the birth law read off the first age cell.
    pub birth_residual: Vec<f64>,
    pub min_value: Vec<f64>,
    pub max_birth_residual: f64,
    pub overall_min: f64,
    pub cfl: f64,
    pub omega0: f64,
    /// Positivity is only expected when `nu >= 0`.
    pub nu_nonnegative: bool,
    pub positive: bool,
}

#[derive(Debug, Clone)]
pub struct PopulationRun {
    pub system: DelaySystem,
    pub trajectory: Trajectory,
    pub summary: PopulationSummary,
}

pub const POSITIVITY_TOL: f64 = 1e-10;

pub fn run_population_demo(cfg: &PopulationConfig, grid: &GridSpec, t_end: f64) -> Result<PopulationRun> {
    let sys = build_population_system(cfg)?;
    cfg.check_cfl(grid.dt)?;
    let x = CVector::from_real(&cfg.initial_state()?);
    let tail = HistorySegment::from_fn(grid.m, cfg.n, |_| x.clone())?;
    let v0 = LiftedState::new(x, tail)?;
    let traj = simulate_steps(&sys, &v0, None, t_end, grid)?;
    let birth = cfg.birth_row()?;
    let ds = cfg.ds();
    let mut summary = PopulationSummary {
        times: Vec::with_capacity(traj.steps() + 1),
        total: Vec::new(),
        birth_residual: Vec::new(),
        min_value: Vec::new(),
        max_birth_residual: 0.0,
        overall_min: f64::INFINITY,
        cfl: cfg.cfl(grid.dt),
        omega0: sys.omega0(),
        nu_nonnegative: cfg.nu_nonnegative(),
        positive: true,
    };
    for j in 0..=traj.steps() {
        let z = traj.sample(j);
        let g0: f64 = birth.iter().zip(z).map(|(b, g)| b * g.re).sum();
        let total = ds * z.iter().map(|g| g.re).sum::<f64>();
        let residual = (z[0].re - g0).abs();
        let min = z.iter().map(|g| g.re).fold(g0, f64::min);
        summary.times.push(j as f64 * grid.dt);
        summary.total.push(total);
        summary.birth_residual.push(residual);
        summary.min_value.push(min);
        summary.max_birth_residual = summary.max_birth_residual.max(residual);
        summary.overall_min = summary.overall_min.min(min);
    }
    summary.positive = summary.overall_min >= -POSITIVITY_TOL;
    Ok(PopulationRun { system: sys, trajectory: traj, summary })
}
