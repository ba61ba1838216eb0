//! In-memory description of a planning problem and the canonical ordering of
//! its individual chance constraints.

mod file;

pub use file::{
    AllocationSpec, CollisionsSpec, DisturbanceFile, DynamicsSpec, HalfspaceSpec, InputBoxSpec, NamedPairs,
    NamedSteps, ObstacleSpec, PairsSpec, ScenarioFile, StepsSpec, TargetSpec, ThresholdsSpec,
    VehicleSpec,
};

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundKind, RiskAllocation, MAX_THRESHOLD};
use crate::dynamics::{ConcatenatedDynamics, LtiSystem};
use crate::error::{Error, Result};
use crate::moments::DisturbanceSpec;

/// Intersection of halfspaces `G x ≤ h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    g: DMatrix<f64>,
    h: DVector<f64>,
}

impl Polytope {
    pub fn new(g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        if g.nrows() == 0 {
            return Err(Error::Scenario("polytope needs at least one halfspace".into()));
        }
        if g.nrows() != h.len() {
            return Err(Error::dims("polytope offsets", g.nrows(), h.len()));
        }
        if g.iter().chain(h.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Scenario("polytope entries must be finite".into()));
        }
        Ok(Self { g, h })
    }

    /// Axis-aligned box `lower ≤ x ≤ upper`.
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dims("box bounds", lower.len(), upper.len()));
        }
        let n = lower.len();
        let mut g = DMatrix::zeros(2 * n, n);
        let mut h = DVector::zeros(2 * n);
        for i in 0..n {
            g[(2 * i, i)] = 1.0;
            h[2 * i] = upper[i];
            g[(2 * i + 1, i)] = -1.0;
            h[2 * i + 1] = -lower[i];
        }
        Self::new(g, h)
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.g.ncols()
    }

    pub fn normal(&self, row: usize) -> DVector<f64> {
        self.g.row(row).transpose()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        (&self.g * x - &self.h).iter().all(|&v| v <= 0.0)
    }
}

/// A polytope the vehicle must occupy at `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    pub step: usize,
    pub polytope: Polytope,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub x0: DVector<f64>,
    pub targets: Vec<TargetSet>,
}

/// Known obstacle centre `o(k)` for `k = 1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub trajectory: Vec<DVector<f64>>,
    pub radius: f64,
}

/// Per-component input box applied at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            beta: 0.05,
            gamma: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TargetRowId {
    pub vehicle: usize,
    pub step: usize,
    /// Index of the target set in the vehicle's list.
    pub set: usize,
    pub halfspace: usize,
}

impl fmt::Display for TargetRowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "target[v{} k{} set{} h{}]",
            self.vehicle, self.step, self.set, self.halfspace
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionKind {
    Pair { first: usize, second: usize },
    Obstacle { vehicle: usize, obstacle: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CollisionRowId {
    pub kind: CollisionKind,
    pub step: usize,
}

impl fmt::Display for CollisionRowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            CollisionKind::Pair { first, second } => {
                write!(f, "pair[v{first} v{second} k{}]", self.step)
            }
            CollisionKind::Obstacle { vehicle, obstacle } => {
                write!(f, "obstacle[v{vehicle} o{obstacle} k{}]", self.step)
            }
        }
    }
}

/// A full planning problem: dynamics, vehicles, chance constraints and
/// disturbance model.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub system: LtiSystem,
    pub horizon: usize,
    pub vehicles: Vec<Vehicle>,
    /// Position selector `S`, q × n.
    pub selector: DMatrix<f64>,
    /// Separation radius between vehicle pairs.
    pub pair_radius: f64,
    pub pairs: Vec<(usize, usize)>,
    pub obstacles: Vec<Obstacle>,
    pub disturbance: DisturbanceSpec,
    pub thresholds: Thresholds,
    pub inputs: Option<InputBox>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let n = self.system.state_dim();
        let m = self.system.input_dim();
        if self.horizon == 0 {
            return Err(Error::InvalidHorizon);
        }
        if self.vehicles.is_empty() {
            return Err(Error::Scenario("at least one vehicle is required".into()));
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            if v.x0.len() != n {
                return Err(Error::Scenario(format!(
                    "vehicles[{i}].x0 has {} entries, expected {n}",
                    v.x0.len()
                )));
            }
            for t in &v.targets {
                if t.step == 0 || t.step > self.horizon {
                    return Err(Error::Scenario(format!(
                        "vehicles[{i}] target step {} outside 1..={}",
                        t.step, self.horizon
                    )));
                }
                if t.polytope.dim() != n {
                    return Err(Error::Scenario(format!(
                        "vehicles[{i}] target halfspaces have {} columns, expected {n}",
                        t.polytope.dim()
                    )));
                }
            }
        }
        let d = &self.disturbance;
        if d.vehicles() != self.vehicles.len() || d.horizon() != self.horizon || d.state_dim() != n {
            return Err(Error::Scenario(
                "disturbance dimensions do not match vehicles × horizon × state".into(),
            ));
        }
        let needs_selector = !self.pairs.is_empty() || !self.obstacles.is_empty();
        if needs_selector {
            if self.selector.ncols() != n || self.selector.nrows() == 0 {
                return Err(Error::Scenario(format!(
                    "selector must be q × {n} with q ≥ 1, got {} × {}",
                    self.selector.nrows(),
                    self.selector.ncols()
                )));
            }
            for row in self.selector.row_iter() {
                let nonzero = row.iter().filter(|v| **v != 0.0).count();
                if nonzero != 1 || row.iter().any(|v| *v < 0.0) {
                    return Err(Error::Scenario(
                        "selector rows must pick exactly one state with a positive weight".into(),
                    ));
                }
            }
        }
        if !self.pairs.is_empty() && !(self.pair_radius > 0.0) {
            return Err(Error::Scenario("collision radius must be positive".into()));
        }
        for &(i, j) in &self.pairs {
            if i >= j || j >= self.vehicles.len() {
                return Err(Error::Scenario(format!(
                    "pair ({i}, {j}) must satisfy i < j < {}",
                    self.vehicles.len()
                )));
            }
        }
        for (o, obs) in self.obstacles.iter().enumerate() {
            if obs.trajectory.len() != self.horizon {
                return Err(Error::Scenario(format!(
                    "obstacles[{o}] trajectory has {} points, expected {}",
                    obs.trajectory.len(),
                    self.horizon
                )));
            }
            if obs.trajectory.iter().any(|p| p.len() != n) {
                return Err(Error::Scenario(format!("obstacles[{o}] points must have {n} entries")));
            }
            if !(obs.radius > 0.0) {
                return Err(Error::Scenario(format!("obstacles[{o}] radius must be positive")));
            }
        }
        if let Some(b) = &self.inputs {
            if b.lower.len() != m || b.upper.len() != m {
                return Err(Error::Scenario(format!("input bounds must have {m} entries")));
            }
            if b.lower.iter().zip(b.upper.iter()).any(|(l, u)| l > u) {
                return Err(Error::Scenario("input lower bound exceeds upper bound".into()));
            }
        }
        let used = [
            ("alpha", self.thresholds.alpha, self.target_count() > 0),
            ("beta", self.thresholds.beta, !self.obstacles.is_empty()),
            ("gamma", self.thresholds.gamma, !self.pairs.is_empty()),
        ];
        for (name, value, needed) in used {
            if needed {
                check_threshold(name, value)?;
            }
        }
        Ok(())
    }

    pub fn concatenated(&self) -> Result<ConcatenatedDynamics> {
        ConcatenatedDynamics::build(&self.system, self.horizon)
    }

    pub fn target_row_ids(&self) -> Vec<TargetRowId> {
        let mut ids = Vec::new();
        for (vehicle, v) in self.vehicles.iter().enumerate() {
            for (set, t) in v.targets.iter().enumerate() {
                for halfspace in 0..t.polytope.len() {
                    ids.push(TargetRowId {
                        vehicle,
                        step: t.step,
                        set,
                        halfspace,
                    });
                }
            }
        }
        ids
    }

    pub fn target_count(&self) -> usize {
        self.vehicles
            .iter()
            .flat_map(|v| v.targets.iter())
            .map(|t| t.polytope.len())
            .sum()
    }

    pub fn obstacle_row_ids(&self) -> Vec<CollisionRowId> {
        let mut ids = Vec::new();
        for vehicle in 0..self.vehicles.len() {
            for obstacle in 0..self.obstacles.len() {
                for step in 1..=self.horizon {
                    ids.push(CollisionRowId {
                        kind: CollisionKind::Obstacle { vehicle, obstacle },
                        step,
                    });
                }
            }
        }
        ids
    }

    pub fn pair_row_ids(&self) -> Vec<CollisionRowId> {
        let mut ids = Vec::new();
        for &(first, second) in &self.pairs {
            for step in 1..=self.horizon {
                ids.push(CollisionRowId {
                    kind: CollisionKind::Pair { first, second },
                    step,
                });
            }
        }
        ids
    }

    /// All vehicle pairs `i < j`.
    pub fn all_pairs(vehicles: usize) -> Vec<(usize, usize)> {
        (0..vehicles)
            .flat_map(|i| (i + 1..vehicles).map(move |j| (i, j)))
            .collect()
    }

    /// Even split of α, β and γ over the individual constraints.
    pub fn uniform_allocation(&self, kind: BoundKind) -> Result<RiskAllocation> {
        RiskAllocation::uniform(
            kind,
            [
                self.target_count(),
                self.obstacle_row_ids().len(),
                self.pair_row_ids().len(),
            ],
            [self.thresholds.alpha, self.thresholds.beta, self.thresholds.gamma],
        )
    }

    /// Radius used by a collision row.
    pub fn radius_for(&self, kind: CollisionKind) -> f64 {
        match kind {
            CollisionKind::Pair { .. } => self.pair_radius,
            CollisionKind::Obstacle { obstacle, .. } => self.obstacles[obstacle].radius,
        }
    }
}

pub(crate) fn check_threshold(name: &str, value: f64) -> Result<()> {
    if !(value > 0.0 && value < MAX_THRESHOLD) {
        return Err(Error::Scenario(format!(
            "thresholds.{name} = {value} must lie in the open interval (0, 1/6)"
        )));
    }
    Ok(())
}

/// Selector built from a diagonal: one row per non-zero entry.
pub fn selector_from_diag(diag: &[f64]) -> DMatrix<f64> {
    let picks: Vec<(usize, f64)> = diag
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, v)| *v != 0.0)
        .collect();
    let mut s = DMatrix::zeros(picks.len(), diag.len());
    for (row, (col, v)) in picks.into_iter().enumerate() {
        s[(row, col)] = v;
    }
    s
}
