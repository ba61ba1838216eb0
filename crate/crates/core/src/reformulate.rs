//! Deterministic reformulation of the chance constraints.
//!
//! Target rows become linear in the stacked inputs. Collision and obstacle
//! rows are difference-of-convex; around a linearization point their concave
//! part is replaced by its tangent, which yields a second-order cone row that
//! is a conservative inner approximation of the exact row.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundKind, RiskAllocation};
use crate::dynamics::ConcatenatedDynamics;
use crate::error::{Error, Result};
use crate::moments::{quadratic_moments, AffineMoments, QuadraticMomentData};
use crate::scenario::{CollisionKind, CollisionRowId, Scenario, TargetRowId};

/// Upper end of the multiplier range when target multipliers are optimized.
pub const OPTIMIZED_LAMBDA_MAX: f64 = 100.0;
/// Breakpoints of the chord over-approximation of the tail bound.
pub const OPTIMIZED_LAMBDA_BREAKPOINTS: usize = 64;

/// One target row `g' x_i(k) ≤ h` in terms of the vehicle's stacked input.
#[derive(Debug, Clone)]
pub struct TargetRow {
    pub id: TargetRowId,
    /// `g' C(k)`.
    pub input_coeffs: DVector<f64>,
    /// `g' (A^k x0 + D(k) E[W])`.
    pub offset: f64,
    /// `Std[g' x(k)]`.
    pub std: f64,
    pub h: f64,
}

impl TargetRow {
    pub fn build(
        id: TargetRowId,
        scenario: &Scenario,
        cd: &ConcatenatedDynamics,
    ) -> Result<Self> {
        let vehicle = &scenario.vehicles[id.vehicle];
        let set = &vehicle.targets[id.set];
        let g = set.polytope.normal(id.halfspace);
        let k = id.step;
        let moments = AffineMoments::compute(&g, cd, &scenario.disturbance, k, id.vehicle)?;
        Ok(Self {
            id,
            input_coeffs: cd.input_map(k).tr_mul(&g),
            offset: g.dot(&(cd.state_power(k) * &vehicle.x0)) + moments.mean_shift,
            std: moments.std,
            h: set.polytope.offsets()[id.halfspace],
        })
    }

    /// `E[g' x(k)]` under `inputs`.
    pub fn mean(&self, inputs: &DVector<f64>) -> f64 {
        self.input_coeffs.dot(inputs) + self.offset
    }

    /// `h - E - λ Std`; non-negative when the row holds.
    pub fn margin(&self, inputs: &DVector<f64>, lambda: f64) -> f64 {
        self.h - self.mean(inputs) - lambda * self.std
    }

    /// Right-hand side of `input_coeffs' U ≤ rhs` for a fixed multiplier.
    pub fn rhs(&self, lambda: f64) -> f64 {
        self.h - self.offset - lambda * self.std
    }
}

/// Which stacked inputs a collision row depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputCombination {
    /// `U_first - U_second`.
    Difference(usize, usize),
    Single(usize),
}

impl InputCombination {
    pub fn combine(&self, inputs: &[DVector<f64>]) -> DVector<f64> {
        match *self {
            InputCombination::Difference(i, j) => &inputs[i] - &inputs[j],
            InputCombination::Single(i) => inputs[i].clone(),
        }
    }

    fn terms(&self) -> Vec<(usize, f64)> {
        match *self {
            InputCombination::Difference(i, j) => vec![(i, 1.0), (j, -1.0)],
            InputCombination::Single(i) => vec![(i, 1.0)],
        }
    }
}

/// Chance constraint `P(‖z̄ + z‖ ≤ r) ≤ ω` on a selected separation.
#[derive(Debug, Clone)]
pub struct CollisionRow {
    pub id: CollisionRowId,
    pub radius: f64,
    pub inputs: InputCombination,
    /// Deterministic separation at zero input, including the disturbance mean.
    pub offset: DVector<f64>,
    /// `S C(k)`.
    pub input_map: DMatrix<f64>,
    pub moments: QuadraticMomentData,
}

/// Tangent of a collision row at a linearization point, as
/// `‖F Δ + f‖ ≤ c' Δ + d` over the combined input Δ.
#[derive(Debug, Clone)]
pub struct LinearizedCollision {
    pub cone_matrix: DMatrix<f64>,
    pub cone_offset: DVector<f64>,
    pub gradient: DVector<f64>,
    pub constant: f64,
}

impl CollisionRow {
    pub fn build(
        id: CollisionRowId,
        scenario: &Scenario,
        cd: &ConcatenatedDynamics,
    ) -> Result<Self> {
        let k = id.step;
        let s = &scenario.selector;
        let noise_map = s * cd.noise_map(k);
        let power = cd.state_power(k);
        let dist = &scenario.disturbance;
        let (inputs, deterministic, comps) = match id.kind {
            CollisionKind::Pair { first, second } => {
                let dx0 = &scenario.vehicles[first].x0 - &scenario.vehicles[second].x0;
                (
                    InputCombination::Difference(first, second),
                    s * (power * dx0),
                    dist.difference(first, second),
                )
            }
            CollisionKind::Obstacle { vehicle, obstacle } => {
                let x0 = &scenario.vehicles[vehicle].x0;
                let o = &scenario.obstacles[obstacle].trajectory[k - 1];
                (
                    InputCombination::Single(vehicle),
                    s * (power * x0 - o),
                    dist.vehicle_moments(vehicle).to_vec(),
                )
            }
        };
        let moments = quadratic_moments(&noise_map, &comps)?;
        Ok(Self {
            id,
            radius: scenario.radius_for(id.kind),
            inputs,
            offset: deterministic + &moments.mean_offset,
            input_map: s * cd.input_map(k),
            moments,
        })
    }

    /// Mean separation `z̄` under `inputs`.
    pub fn mean_separation(&self, inputs: &[DVector<f64>]) -> DVector<f64> {
        &self.offset + &self.input_map * self.inputs.combine(inputs)
    }

    /// Exact row value `E‖z̄+z‖² - λ Std‖z̄+z‖² - r²`; non-negative when
    /// the row holds.
    pub fn exact_value(&self, inputs: &[DVector<f64>], lambda: f64) -> f64 {
        let zbar = self.mean_separation(inputs);
        self.moments.norm_sq_mean(&zbar) - lambda * self.moments.norm_sq_std(&zbar)
            - self.radius * self.radius
    }

    /// First-order expansion of `E‖z̄+z‖²` at `point`, evaluated at `inputs`.
    /// Never exceeds the exact mean.
    pub fn linearized_mean(&self, point: &[DVector<f64>], inputs: &[DVector<f64>]) -> f64 {
        let zp = self.mean_separation(point);
        let delta = self.inputs.combine(inputs) - self.inputs.combine(point);
        zp.norm_squared() + self.moments.e_ztz + 2.0 * zp.dot(&(&self.input_map * delta))
    }

    /// Value of the convexified row, `linearized mean - λ Std - r²`.
    pub fn linearized_value(
        &self,
        point: &[DVector<f64>],
        inputs: &[DVector<f64>],
        lambda: f64,
    ) -> f64 {
        let zbar = self.mean_separation(inputs);
        self.linearized_mean(point, inputs) - lambda * self.moments.norm_sq_std(&zbar)
            - self.radius * self.radius
    }

    pub fn linearize(&self, point: &[DVector<f64>], lambda: f64) -> LinearizedCollision {
        let q = self.moments.dim();
        let root = &self.moments.var_block_sqrt;
        let root_q = root.columns(0, q);
        let cone_matrix = (root_q * &self.input_map) * lambda;
        let cone_offset = (root_q * &self.offset + root.column(q)) * lambda;

        let zp = self.mean_separation(point);
        let delta_p = self.inputs.combine(point);
        let gradient = self.input_map.tr_mul(&zp) * 2.0;
        let constant = zp.norm_squared() + self.moments.e_ztz - gradient.dot(&delta_p)
            - self.radius * self.radius;
        LinearizedCollision {
            cone_matrix,
            cone_offset,
            gradient,
            constant,
        }
    }
}

/// Stacked inputs `U_1, …, U_V` at which collision rows are linearized.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationPoint {
    pub inputs: Vec<DVector<f64>>,
}

impl LinearizationPoint {
    pub fn zero(vehicles: usize, stacked_len: usize) -> Self {
        Self {
            inputs: vec![DVector::zeros(stacked_len); vehicles],
        }
    }
}

/// Provenance of a conic row, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowTag {
    Target(TargetRowId),
    Collision(CollisionRowId),
    TailChord(usize),
    RiskBudget,
}

/// `Σ coeffs · x ≤ rhs`.
#[derive(Debug, Clone)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
    pub tag: RowTag,
}

/// `‖matrix x + offset‖ ≤ Σ coeffs · x + constant`. `matrix` has one column
/// per variable.
#[derive(Debug, Clone)]
pub struct ConeRow {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub coeffs: Vec<(usize, f64)>,
    pub constant: f64,
    pub tag: RowTag,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarBound {
    pub var: usize,
    pub lower: f64,
    pub upper: f64,
}

/// Where each block of decision variables lives in the solver vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableLayout {
    pub vehicles: usize,
    pub stacked_input_len: usize,
    pub slack_start: usize,
    pub slack_count: usize,
    pub lambda_start: usize,
    pub lambda_count: usize,
    pub num_vars: usize,
}

impl VariableLayout {
    pub fn input(&self, vehicle: usize, idx: usize) -> usize {
        vehicle * self.stacked_input_len + idx
    }

    pub fn slack(&self, row: usize) -> usize {
        self.slack_start + row
    }

    pub fn lambda(&self, row: usize) -> usize {
        self.lambda_start + row
    }

    /// Chord epigraph variable paired with `lambda(row)`.
    pub fn tail(&self, row: usize) -> usize {
        self.lambda_start + self.lambda_count + row
    }

    pub fn split_inputs(&self, x: &[f64]) -> Vec<DVector<f64>> {
        (0..self.vehicles)
            .map(|v| {
                let start = self.input(v, 0);
                DVector::from_column_slice(&x[start..start + self.stacked_input_len])
            })
            .collect()
    }
}

/// Backend-neutral convex program: minimize `Σ quadratic_i x_i² + linear' x`
/// subject to linear rows, second-order cone rows and variable bounds.
#[derive(Debug, Clone)]
pub struct ConicProblem {
    pub num_vars: usize,
    pub quadratic: Vec<f64>,
    pub linear: Vec<f64>,
    pub rows: Vec<LinearRow>,
    pub cones: Vec<ConeRow>,
    pub bounds: Vec<VarBound>,
    pub layout: VariableLayout,
}

impl ConicProblem {
    pub fn objective(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.quadratic)
            .zip(&self.linear)
            .map(|((v, q), l)| q * v * v + l * v)
            .sum()
    }

    /// Largest violation over every row and bound.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let dot = |c: &[(usize, f64)]| c.iter().map(|(i, a)| a * x[*i]).sum::<f64>();
        let xv = DVector::from_column_slice(x);
        let mut worst: f64 = 0.0;
        for r in &self.rows {
            worst = worst.max(dot(&r.coeffs) - r.rhs);
        }
        for c in &self.cones {
            let lhs = (&c.matrix * &xv + &c.offset).norm();
            worst = worst.max(lhs - dot(&c.coeffs) - c.constant);
        }
        for b in &self.bounds {
            worst = worst.max(b.lower - x[b.var]).max(x[b.var] - b.upper);
        }
        worst
    }
}

/// All precomputed rows of a scenario under a risk allocation.
#[derive(Debug, Clone)]
pub struct Reformulation {
    pub dynamics: ConcatenatedDynamics,
    pub allocation: RiskAllocation,
    pub targets: Vec<TargetRow>,
    /// Obstacle rows first, then vehicle-pair rows.
    pub collisions: Vec<CollisionRow>,
    pub collision_lambdas: Vec<f64>,
    input_bounds: Option<(DVector<f64>, DVector<f64>)>,
    initial_states: Vec<DVector<f64>>,
    noise_means: Vec<DVector<f64>>,
    vehicles: usize,
}

impl Reformulation {
    pub fn new(scenario: &Scenario, allocation: &RiskAllocation) -> Result<Self> {
        scenario.validate()?;
        allocation.validate()?;
        let cd = scenario.concatenated()?;

        let target_ids = scenario.target_row_ids();
        let obstacle_ids = scenario.obstacle_row_ids();
        let pair_ids = scenario.pair_row_ids();
        for (name, want, got) in [
            ("target", target_ids.len(), allocation.target.len()),
            ("obstacle", obstacle_ids.len(), allocation.obstacle.len()),
            ("collision", pair_ids.len(), allocation.collision.len()),
        ] {
            if want != got {
                return Err(Error::InfeasibleAllocation(format!(
                    "{got} {name} risks for {want} {name} rows"
                )));
            }
        }

        let targets = target_ids
            .into_iter()
            .map(|id| TargetRow::build(id, scenario, &cd))
            .collect::<Result<Vec<_>>>()?;
        let collisions = obstacle_ids
            .into_iter()
            .chain(pair_ids)
            .map(|id| CollisionRow::build(id, scenario, &cd))
            .collect::<Result<Vec<_>>>()?;
        let collision_lambdas = allocation
            .obstacle
            .iter()
            .chain(&allocation.collision)
            .map(|e| e.lambda)
            .collect();

        let m = cd.stacked_input_len();
        let input_bounds = scenario.inputs.as_ref().map(|b| {
            let per = b.lower.len();
            (
                DVector::from_fn(m, |i, _| b.lower[i % per]),
                DVector::from_fn(m, |i, _| b.upper[i % per]),
            )
        });

        Ok(Self {
            dynamics: cd,
            allocation: allocation.clone(),
            targets,
            collisions,
            collision_lambdas,
            input_bounds,
            initial_states: scenario.vehicles.iter().map(|v| v.x0.clone()).collect(),
            noise_means: (0..scenario.vehicles.len())
                .map(|v| scenario.disturbance.mean_vector(v))
                .collect(),
            vehicles: scenario.vehicles.len(),
        })
    }

    pub fn initial_state(&self, vehicle: usize) -> &DVector<f64> {
        &self.initial_states[vehicle]
    }

    /// Stacked disturbance mean of one vehicle.
    pub fn noise_mean(&self, vehicle: usize) -> &DVector<f64> {
        &self.noise_means[vehicle]
    }

    pub fn vehicles(&self) -> usize {
        self.vehicles
    }

    pub fn stacked_input_len(&self) -> usize {
        self.dynamics.stacked_input_len()
    }

    pub fn bound(&self) -> BoundKind {
        self.allocation.kind
    }

    /// Rows whose multiplier is a decision variable.
    fn optimized_rows(&self) -> Vec<usize> {
        if !self.allocation.optimize_target {
            return Vec::new();
        }
        (0..self.targets.len())
            .filter(|&r| self.targets[r].std > 0.0)
            .collect()
    }

    pub fn layout(&self) -> VariableLayout {
        let inputs = self.vehicles * self.stacked_input_len();
        let slack_count = self.collisions.len();
        let lambda_count = self.optimized_rows().len();
        VariableLayout {
            vehicles: self.vehicles,
            stacked_input_len: self.stacked_input_len(),
            slack_start: inputs,
            slack_count,
            lambda_start: inputs + slack_count,
            lambda_count,
            num_vars: inputs + slack_count + 2 * lambda_count,
        }
    }

    /// Range of the optimized target multipliers.
    pub fn lambda_range(&self) -> (f64, f64) {
        let kind = self.bound();
        let lo = kind.min_lambda().max(kind.convexity_floor());
        (lo, OPTIMIZED_LAMBDA_MAX.max(lo))
    }

    /// Fixed target multipliers from the allocation.
    pub fn target_lambdas(&self) -> Vec<f64> {
        self.allocation.target.iter().map(|e| e.lambda).collect()
    }

    /// Convex subproblem around `point` with slack penalty `penalty`.
    pub fn assemble(&self, point: &LinearizationPoint, penalty: f64) -> Result<ConicProblem> {
        if point.inputs.len() != self.vehicles
            || point.inputs.iter().any(|u| u.len() != self.stacked_input_len())
        {
            return Err(Error::dims(
                "linearization point",
                self.vehicles * self.stacked_input_len(),
                point.inputs.iter().map(|u| u.len()).sum(),
            ));
        }
        let layout = self.layout();
        let n = layout.num_vars;
        let mut quadratic = vec![0.0; n];
        let mut linear = vec![0.0; n];
        for v in 0..self.vehicles {
            for i in 0..layout.stacked_input_len {
                quadratic[layout.input(v, i)] = 1.0;
            }
        }
        for r in 0..layout.slack_count {
            linear[layout.slack(r)] = penalty;
        }

        let mut rows = Vec::new();
        let mut bounds = Vec::new();
        let optimized = self.optimized_rows();
        let lambdas = self.target_lambdas();
        for (r, row) in self.targets.iter().enumerate() {
            let mut coeffs: Vec<(usize, f64)> = row
                .input_coeffs
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(i, c)| (layout.input(row.id.vehicle, i), *c))
                .collect();
            let rhs = match optimized.iter().position(|&o| o == r) {
                Some(slot) => {
                    coeffs.push((layout.lambda(slot), row.std));
                    row.h - row.offset
                }
                None => row.rhs(lambdas[r]),
            };
            rows.push(LinearRow {
                coeffs,
                rhs,
                tag: RowTag::Target(row.id),
            });
        }
        if !optimized.is_empty() {
            self.push_tail_chords(&layout, optimized.len(), &mut rows, &mut bounds)?;
        }

        let mut cones = Vec::with_capacity(self.collisions.len());
        for (r, row) in self.collisions.iter().enumerate() {
            let lin = row.linearize(&point.inputs, self.collision_lambdas[r]);
            let mut matrix = DMatrix::zeros(lin.cone_matrix.nrows(), n);
            let mut coeffs = Vec::new();
            for (vehicle, sign) in row.inputs.terms() {
                let start = layout.input(vehicle, 0);
                let mut block = matrix.columns_mut(start, layout.stacked_input_len);
                block += &lin.cone_matrix * sign;
                for (i, g) in lin.gradient.iter().enumerate() {
                    if *g != 0.0 {
                        coeffs.push((start + i, g * sign));
                    }
                }
            }
            coeffs.push((layout.slack(r), 1.0));
            cones.push(ConeRow {
                matrix,
                offset: lin.cone_offset,
                coeffs,
                constant: lin.constant,
                tag: RowTag::Collision(row.id),
            });
            bounds.push(VarBound {
                var: layout.slack(r),
                lower: 0.0,
                upper: f64::INFINITY,
            });
        }

        if let Some((lo, hi)) = &self.input_bounds {
            for v in 0..self.vehicles {
                for i in 0..layout.stacked_input_len {
                    bounds.push(VarBound {
                        var: layout.input(v, i),
                        lower: lo[i],
                        upper: hi[i],
                    });
                }
            }
        }

        Ok(ConicProblem {
            num_vars: n,
            quadratic,
            linear,
            rows,
            cones,
            bounds,
            layout,
        })
    }

    /// Chord epigraph `t_j ≥ tail_bound(λ_j)` on geometric breakpoints and
    /// the budget `Σ t_j ≤ α`. Chords lie above a convex function, so the
    /// budget is never understated.
    fn push_tail_chords(
        &self,
        layout: &VariableLayout,
        count: usize,
        rows: &mut Vec<LinearRow>,
        bounds: &mut Vec<VarBound>,
    ) -> Result<()> {
        let kind = self.bound();
        let (lo, hi) = self.lambda_range();
        let pts = OPTIMIZED_LAMBDA_BREAKPOINTS;
        let ratio = (hi / lo).powf(1.0 / (pts - 1) as f64);
        let mut knots: Vec<f64> = (0..pts).map(|i| lo * ratio.powi(i as i32)).collect();
        knots[pts - 1] = hi;
        let values = knots
            .iter()
            .map(|&l| kind.tail_bound(l))
            .collect::<Result<Vec<_>>>()?;
        for j in 0..count {
            let lam = layout.lambda(j);
            let tail = layout.tail(j);
            for s in 0..pts - 1 {
                let slope = (values[s + 1] - values[s]) / (knots[s + 1] - knots[s]);
                // slope λ - t ≤ slope λ_s - f(λ_s)
                rows.push(LinearRow {
                    coeffs: vec![(lam, slope), (tail, -1.0)],
                    rhs: slope * knots[s] - values[s],
                    tag: RowTag::TailChord(j),
                });
            }
            bounds.push(VarBound {
                var: lam,
                lower: lo,
                upper: hi,
            });
            bounds.push(VarBound {
                var: tail,
                lower: 0.0,
                upper: f64::INFINITY,
            });
        }
        rows.push(LinearRow {
            coeffs: (0..count).map(|j| (layout.tail(j), 1.0)).collect(),
            rhs: self.allocation.alpha,
            tag: RowTag::RiskBudget,
        });
        Ok(())
    }

    /// Target multipliers encoded in a solver vector.
    pub fn lambdas_from_solution(&self, x: &[f64]) -> Vec<f64> {
        let layout = self.layout();
        let mut out = self.target_lambdas();
        for (slot, r) in self.optimized_rows().into_iter().enumerate() {
            out[r] = x[layout.lambda(slot)];
        }
        out
    }

    /// Per-row risk actually charged for the given target multipliers.
    pub fn target_risks(&self, lambdas: &[f64]) -> Vec<f64> {
        self.targets
            .iter()
            .zip(lambdas)
            .map(|(row, &l)| {
                if row.std == 0.0 {
                    0.0
                } else {
                    self.bound().tail_bound(l).unwrap_or(f64::INFINITY)
                }
            })
            .collect()
    }
}
