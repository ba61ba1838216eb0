//! Open-loop planning for multiple vehicles under chance constraints with
//! disturbances known only through their first four moments.
//!
//! Target, obstacle and inter-vehicle collision chance constraints are
//! tightened with one-sided tail bounds and solved as a sequence of
//! second-order cone programs. Monte Carlo and unimodality checks validate
//! the resulting plans.

pub mod bounds;
pub mod dynamics;
pub mod error;
pub mod moments;
pub mod reformulate;
pub mod scenario;
pub mod solver;
pub mod unimodality;
pub mod validation;

pub use bounds::{BoundKind, RiskAllocation, RiskEntry};
pub use dynamics::{ConcatenatedDynamics, CwhParams, LtiSystem, ThrustModel};
pub use error::{Error, Result};
pub use moments::{ComponentLaw, ComponentMoments, DisturbanceSpec};
pub use reformulate::{ConicProblem, LinearizationPoint, Reformulation};
pub use scenario::{Scenario, ScenarioFile};
pub use solver::{solve_ccp, CcpConfig, ClarabelBackend, ConicBackend, PlanSolution};
