//! Convex-concave procedure over a second-order cone backend.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, SecondOrderConeT, SolverStatus,
    SupportedConeT,
};
use log::{debug, info, warn};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundKind, RiskAllocation};
use crate::error::{Error, Result};
use crate::reformulate::{ConicProblem, LinearizationPoint, Reformulation};
use crate::scenario::Scenario;

/// Environment variable naming the conic backend.
pub const BACKEND_ENV: &str = "CCPLAN_BACKEND";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CcpConfig {
    /// Stop once the penalized objective moves less than this.
    pub tolerance: f64,
    /// Total slack below which the convexified rows count as satisfied.
    pub slack_tolerance: f64,
    pub max_iterations: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    /// Amount by which every row is tightened in the subproblems so that
    /// backend round-off cannot turn a satisfied row into a violated one.
    pub margin: f64,
    /// Largest violation of an exact row still counted as satisfied.
    pub certify_tolerance: f64,
}

impl Default for CcpConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            slack_tolerance: 1e-8,
            max_iterations: 100,
            initial_penalty: 1e4,
            penalty_growth: 2.0,
            max_penalty: 1e9,
            margin: 1e-7,
            certify_tolerance: 1e-9,
        }
    }
}

impl CcpConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tolerance", self.tolerance),
            ("slack_tolerance", self.slack_tolerance),
            ("initial_penalty", self.initial_penalty),
            ("max_penalty", self.max_penalty),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.penalty_growth >= 1.0) {
            return Err(Error::param("penalty_growth", "must be at least 1"));
        }
        if self.max_iterations == 0 {
            return Err(Error::param("max_iterations", "must be at least 1"));
        }
        if !(self.margin >= 0.0) || !(self.certify_tolerance >= 0.0) {
            return Err(Error::param("margin", "tolerances must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct BackendSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub iterations: u32,
}

/// Anything that can solve a [`ConicProblem`].
pub trait ConicBackend {
    fn name(&self) -> &'static str;
    fn solve(&self, problem: &ConicProblem) -> Result<BackendSolution>;
}

/// Interior-point backend built on Clarabel.
#[derive(Debug, Clone)]
pub struct ClarabelBackend {
    pub tolerance: f64,
    pub max_iterations: u32,
}

impl Default for ClarabelBackend {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 500,
        }
    }
}

/// Sparse column accumulator for the constraint matrix.
struct Columns {
    cols: Vec<Vec<(usize, f64)>>,
    rows: usize,
}

impl Columns {
    fn new(n: usize) -> Self {
        Self {
            cols: vec![Vec::new(); n],
            rows: 0,
        }
    }

    fn push(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        for (col, v) in entries {
            if v != 0.0 {
                self.cols[col].push((self.rows, v));
            }
        }
        self.rows += 1;
    }

    fn into_csc(self) -> CscMatrix<f64> {
        let n = self.cols.len();
        let mut colptr = Vec::with_capacity(n + 1);
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        colptr.push(0);
        for mut col in self.cols {
            col.sort_by_key(|e| e.0);
            for (r, v) in col {
                if rowval.len() > *colptr.last().unwrap() && *rowval.last().unwrap() == r {
                    *nzval.last_mut().unwrap() += v;
                } else {
                    rowval.push(r);
                    nzval.push(v);
                }
            }
            colptr.push(rowval.len());
        }
        CscMatrix::new(self.rows, n, colptr, rowval, nzval)
    }
}

impl ConicBackend for ClarabelBackend {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve(&self, problem: &ConicProblem) -> Result<BackendSolution> {
        let n = problem.num_vars;
        let p = {
            let mut colptr = vec![0];
            let mut rowval = Vec::new();
            let mut nzval = Vec::new();
            for (j, &w) in problem.quadratic.iter().enumerate() {
                if w != 0.0 {
                    rowval.push(j);
                    nzval.push(2.0 * w);
                }
                colptr.push(rowval.len());
            }
            CscMatrix::new(n, n, colptr, rowval, nzval)
        };

        // A x + s = b with s in the product cone.
        let mut a = Columns::new(n);
        let mut b = Vec::new();
        // Each row is divided by its largest coefficient; this leaves the
        // feasible set unchanged and keeps the KKT system well scaled.
        let unit = |m: f64| if m > 0.0 { 1.0 / m } else { 1.0 };
        for row in &problem.rows {
            let w = unit(row.coeffs.iter().fold(0.0_f64, |m, (_, v)| m.max(v.abs())));
            a.push(row.coeffs.iter().map(|&(j, v)| (j, v * w)));
            b.push(row.rhs * w);
        }
        for bound in &problem.bounds {
            if bound.upper.is_finite() {
                a.push([(bound.var, 1.0)]);
                b.push(bound.upper);
            }
            if bound.lower.is_finite() {
                a.push([(bound.var, -1.0)]);
                b.push(-bound.lower);
            }
        }
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        if a.rows > 0 {
            cones.push(NonnegativeConeT(a.rows));
        }
        for cone in &problem.cones {
            let w = unit(
                cone.coeffs
                    .iter()
                    .fold(cone.matrix.abs().max(), |m, (_, v)| m.max(v.abs())),
            );
            a.push(cone.coeffs.iter().map(|&(j, v)| (j, -v * w)));
            b.push(cone.constant * w);
            for r in 0..cone.matrix.nrows() {
                a.push((0..n).map(|j| (j, -cone.matrix[(r, j)] * w)));
                b.push(cone.offset[r] * w);
            }
            cones.push(SecondOrderConeT(cone.matrix.nrows() + 1));
        }
        let a = a.into_csc();

        let settings = DefaultSettings {
            verbose: log::log_enabled!(log::Level::Trace),
            max_iter: self.max_iterations,
            tol_gap_abs: self.tolerance,
            tol_gap_rel: self.tolerance,
            tol_feas: self.tolerance,
            tol_ktratio: 1e-8,
            max_threads: 1,
            ..DefaultSettings::default()
        };
        let mut solver = DefaultSolver::new(&p, &problem.linear, &a, &b, &cones, settings)
            .map_err(|e| Error::Backend(format!("{e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::AlmostSolved => {
                warn!("conic subproblem solved to reduced accuracy");
                SolveStatus::Optimal
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SolveStatus::Infeasible
            }
            other => {
                debug!("backend stopped with {other:?}");
                SolveStatus::NumericalFailure
            }
        };
        Ok(BackendSolution {
            status,
            x: sol.x.clone(),
            iterations: sol.iterations,
        })
    }
}

/// Backend named by [`BACKEND_ENV`], defaulting to Clarabel.
pub fn backend_from_env() -> Result<Box<dyn ConicBackend>> {
    match std::env::var(BACKEND_ENV) {
        Err(_) => Ok(Box::new(ClarabelBackend::default())),
        Ok(name) => backend_by_name(&name),
    }
}

pub fn backend_by_name(name: &str) -> Result<Box<dyn ConicBackend>> {
    match name {
        "" | "clarabel" => Ok(Box::new(ClarabelBackend::default())),
        other => Err(Error::Backend(format!(
            "unknown backend `{other}`; available: clarabel"
        ))),
    }
}

/// One CCP iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `Σ ‖U_i‖²`.
    pub cost: f64,
    /// Cost plus penalty times slack.
    pub penalized: f64,
    pub slack: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMargin {
    pub row: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSolution {
    pub bound: BoundKind,
    pub backend: String,
    /// Stacked input per vehicle.
    pub inputs: Vec<Vec<f64>>,
    /// Mean state per vehicle for `k = 0..=N`.
    pub mean_trajectories: Vec<Vec<Vec<f64>>>,
    pub cost: f64,
    pub iterations: usize,
    pub slack: f64,
    pub converged: bool,
    /// Every exact row holds at the returned inputs.
    pub certified: bool,
    pub trace: Vec<IterationRecord>,
    pub target_lambdas: Vec<f64>,
    pub target_risks: Vec<f64>,
    /// `h - E - λ Std` per target row.
    pub target_margins: Vec<RowMargin>,
    /// Exact difference-of-convex value per obstacle and collision row.
    pub collision_margins: Vec<RowMargin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_hash: Option<String>,
}

impl PlanSolution {
    pub fn input_vectors(&self) -> Vec<DVector<f64>> {
        self.inputs.iter().map(|u| DVector::from_column_slice(u)).collect()
    }

    pub fn min_target_margin(&self) -> f64 {
        self.target_margins.iter().map(|m| m.value).fold(f64::INFINITY, f64::min)
    }

    pub fn min_collision_margin(&self) -> f64 {
        self.collision_margins.iter().map(|m| m.value).fold(f64::INFINITY, f64::min)
    }
}

/// Run the convex-concave procedure from a zero-input linearization.
pub fn solve_ccp(
    reform: &Reformulation,
    backend: &dyn ConicBackend,
    cfg: &CcpConfig,
) -> Result<PlanSolution> {
    cfg.validate()?;
    let layout = reform.layout();
    let mut tightened = reform.clone();
    for row in &mut tightened.targets {
        row.h -= cfg.margin;
    }
    for row in &mut tightened.collisions {
        // shift r² up by the margin
        row.radius = (row.radius * row.radius + cfg.margin).sqrt();
    }

    let mut point = LinearizationPoint::zero(reform.vehicles(), reform.stacked_input_len());
    let mut penalty = cfg.initial_penalty;
    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut x = Vec::new();
    let mut converged = false;

    for iteration in 1..=cfg.max_iterations {
        let problem = tightened.assemble(&point, penalty)?;
        let sol = backend.solve(&problem)?;
        match sol.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => {
                return Err(Error::Infeasible(format!(
                    "convex subproblem {iteration} has no feasible point; \
                     the target or input constraints cannot be met"
                )))
            }
            SolveStatus::NumericalFailure => {
                return Err(Error::Backend(format!(
                    "{} failed on subproblem {iteration}",
                    backend.name()
                )))
            }
        }
        x = sol.x;
        let inputs = layout.split_inputs(&x);
        let slack = (0..layout.slack_count).fold(0.0, |acc, r| acc + x[layout.slack(r)].max(0.0));
        let cost: f64 = inputs.iter().map(|u| u.norm_squared()).sum();
        let penalized = cost + penalty * slack;
        debug!(
            "iteration {iteration}: cost {cost:.9e} slack {slack:.3e} penalty {penalty:.1e} ({} backend steps)",
            sol.iterations
        );
        let previous = trace.last().map(|r| r.penalized);
        trace.push(IterationRecord {
            iteration,
            cost,
            penalized,
            slack,
            penalty,
        });
        point = LinearizationPoint { inputs };

        if tightened.collisions.is_empty() {
            converged = true;
            break;
        }
        let settled = previous.is_some_and(|p| (penalized - p).abs() < cfg.tolerance);
        if settled && slack < cfg.slack_tolerance {
            converged = true;
            break;
        }
        if slack >= cfg.slack_tolerance {
            penalty = (penalty * cfg.penalty_growth).min(cfg.max_penalty);
        }
    }

    let last = *trace.last().expect("at least one iteration ran");
    let inputs = point.inputs;
    let lambdas = tightened.lambdas_from_solution(&x);
    let target_margins: Vec<RowMargin> = reform
        .targets
        .iter()
        .zip(&lambdas)
        .map(|(row, &l)| RowMargin {
            row: row.id.to_string(),
            value: row.margin(&inputs[row.id.vehicle], l),
        })
        .collect();
    let collision_margins: Vec<RowMargin> = reform
        .collisions
        .iter()
        .zip(&reform.collision_lambdas)
        .map(|(row, &l)| RowMargin {
            row: row.id.to_string(),
            value: row.exact_value(&inputs, l),
        })
        .collect();
    let rows_hold = target_margins
        .iter()
        .chain(&collision_margins)
        .all(|m| m.value >= -cfg.certify_tolerance);
    let certified = converged && last.slack < cfg.slack_tolerance && rows_hold;
    if converged {
        info!(
            "{} plan converged after {} iterations, cost {:.6e}",
            reform.bound().name(),
            last.iteration,
            last.cost
        );
    } else {
        warn!("CCP stopped at the iteration limit without converging");
    }

    let cd = &reform.dynamics;
    let mean_trajectories = (0..reform.vehicles())
        .map(|v| {
            let x0 = reform.initial_state(v);
            let wmean = reform.noise_mean(v);
            let mut traj = vec![x0.as_slice().to_vec()];
            for k in 1..=cd.horizon() {
                traj.push(cd.mean_state(k, x0, &inputs[v], wmean).as_slice().to_vec());
            }
            traj
        })
        .collect();

    Ok(PlanSolution {
        bound: reform.bound(),
        backend: backend.name().to_string(),
        inputs: inputs.iter().map(|u| u.as_slice().to_vec()).collect(),
        mean_trajectories,
        cost: last.cost,
        iterations: last.iteration,
        slack: last.slack,
        converged,
        certified,
        trace,
        target_risks: reform.target_risks(&lambdas),
        target_lambdas: lambdas,
        target_margins,
        collision_margins,
        scenario_hash: None,
    })
}

/// Build the reformulation and solve it with the default backend.
pub fn plan(scenario: &Scenario, allocation: &RiskAllocation, cfg: &CcpConfig) -> Result<PlanSolution> {
    let reform = Reformulation::new(scenario, allocation)?;
    let backend = backend_from_env()?;
    solve_ccp(&reform, backend.as_ref(), cfg)
}

/// Solve the same scenario and per-row risks under each bound.
pub fn compare_bounds(
    scenario: &Scenario,
    allocation: &RiskAllocation,
    kinds: &[BoundKind],
    backend: &dyn ConicBackend,
    cfg: &CcpConfig,
) -> Vec<(BoundKind, Result<PlanSolution>)> {
    kinds
        .iter()
        .map(|&kind| {
            let result = allocation
                .with_kind(kind)
                .and_then(|alloc| Reformulation::new(scenario, &alloc))
                .and_then(|reform| solve_ccp(&reform, backend, cfg));
            (kind, result)
        })
        .collect()
}
