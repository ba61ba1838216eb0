//! JSON scenario format.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    check_threshold, selector_from_diag, InputBox, Obstacle, Polytope, Scenario, TargetSet,
    Thresholds, Vehicle,
};
use crate::bounds::{BoundKind, RiskAllocation};
use crate::dynamics::{discretize_cwh_with, CwhParams, LtiSystem, ThrustModel};
use crate::error::{Error, Result};
use crate::moments::{centered_moments, ComponentLaw, ComponentMoments, DisturbanceSpec};
use crate::solver::CcpConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub dynamics: DynamicsSpec,
    pub horizon: usize,
    pub vehicles: Vec<VehicleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collisions: Option<CollisionsSpec>,
    pub disturbance: DisturbanceFile,
    #[serde(default)]
    pub thresholds: ThresholdsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<InputBoxSpec>,
    #[serde(default = "default_bound")]
    pub bound: BoundKind,
    #[serde(default)]
    pub allocation: AllocationSpec,
    #[serde(default)]
    pub ccp: CcpConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_bound() -> BoundKind {
    BoundKind::VysochanskijPetunin
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsSpec {
    Cwh {
        #[serde(default = "default_mu")]
        mu: f64,
        #[serde(default = "default_orbit_radius")]
        orbit_radius: f64,
        mass: f64,
        dt: f64,
        #[serde(default)]
        thrust: ThrustModel,
    },
    /// Discrete-time matrices given row by row.
    Explicit {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        dt: f64,
    },
}

fn default_mu() -> f64 {
    CwhParams::MU_EARTH
}

fn default_orbit_radius() -> f64 {
    CwhParams::R_GEO
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub x0: Vec<f64>,
    #[serde(default)]
    pub targets: Vec<TargetSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub rows: Vec<HalfspaceSpec>,
    pub steps: StepsSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfspaceSpec {
    pub g: Vec<f64>,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedSteps {
    Terminal,
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepsSpec {
    Named(NamedSteps),
    List(Vec<usize>),
}

impl StepsSpec {
    fn resolve(&self, horizon: usize) -> Vec<usize> {
        match self {
            StepsSpec::Named(NamedSteps::Terminal) => vec![horizon],
            StepsSpec::Named(NamedSteps::All) => (1..=horizon).collect(),
            StepsSpec::List(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollisionsSpec {
    /// Vehicle separation radius.
    #[serde(default)]
    pub r: f64,
    /// Diagonal of the position selector; zero entries are dropped.
    pub s_diag: Vec<f64>,
    #[serde(default)]
    pub pairs: PairsSpec,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedPairs {
    #[default]
    All,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairsSpec {
    Named(NamedPairs),
    List(Vec<[usize; 2]>),
}

impl Default for PairsSpec {
    fn default() -> Self {
        PairsSpec::Named(NamedPairs::All)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    /// One state per step `1..=N`, or a single state for a fixed obstacle.
    pub trajectory: Vec<Vec<f64>>,
    pub r: f64,
}

/// Disturbance shared by every vehicle and step, one entry per state
/// component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceFile {
    None,
    Gaussian {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean: Option<Vec<f64>>,
        var: Vec<f64>,
    },
    Exponential {
        rates: Vec<f64>,
    },
    /// Equal mixture of `N(-offset, var)` and `N(offset, var)`.
    Bimodal {
        offset: Vec<f64>,
        var: Vec<f64>,
    },
    /// Moments only; Monte Carlo validation is unavailable.
    Explicit {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        central: Option<Vec<ComponentMoments>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        raw: Option<Vec<[f64; 4]>>,
    },
}

impl DisturbanceFile {
    fn component_laws(&self, n: usize) -> Result<Vec<ComponentLaw>> {
        let check = |name: &str, len: usize| -> Result<()> {
            if len != n {
                return Err(Error::Scenario(format!(
                    "disturbance.{name} has {len} entries, expected {n}"
                )));
            }
            Ok(())
        };
        let laws = match self {
            DisturbanceFile::None => vec![ComponentLaw::Constant { value: 0.0 }; n],
            DisturbanceFile::Gaussian { mean, var } => {
                check("var", var.len())?;
                let zeros = vec![0.0; n];
                let mean = mean.as_ref().unwrap_or(&zeros);
                check("mean", mean.len())?;
                mean.iter()
                    .zip(var)
                    .map(|(&m, &v)| {
                        if v == 0.0 {
                            ComponentLaw::Constant { value: m }
                        } else {
                            ComponentLaw::Gaussian { mean: m, var: v }
                        }
                    })
                    .collect()
            }
            DisturbanceFile::Exponential { rates } => {
                check("rates", rates.len())?;
                rates.iter().map(|&rate| ComponentLaw::Exponential { rate }).collect()
            }
            DisturbanceFile::Bimodal { offset, var } => {
                check("offset", offset.len())?;
                check("var", var.len())?;
                offset
                    .iter()
                    .zip(var)
                    .map(|(&offset, &var)| ComponentLaw::SymmetricBimodal { offset, var })
                    .collect()
            }
            DisturbanceFile::Explicit { central, raw } => match (central, raw) {
                (Some(c), None) => {
                    check("central", c.len())?;
                    c.iter().map(|m| ComponentLaw::Moments(*m)).collect()
                }
                (None, Some(r)) => {
                    check("raw", r.len())?;
                    r.iter()
                        .map(|m| centered_moments(*m).map(ComponentLaw::Moments))
                        .collect::<Result<_>>()?
                }
                _ => {
                    return Err(Error::Scenario(
                        "disturbance.explicit needs exactly one of `central` or `raw`".into(),
                    ))
                }
            },
        };
        Ok(laws)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputBoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationSpec {
    #[default]
    Uniform,
    /// Uniform obstacle and collision risks; target multipliers chosen by
    /// the solver.
    OptimizeTarget,
    Explicit {
        #[serde(default)]
        target: Vec<f64>,
        #[serde(default)]
        obstacle: Vec<f64>,
        #[serde(default)]
        collision: Vec<f64>,
    },
}

impl ScenarioFile {
    /// Parse JSON. Errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Scenario(format!("at `{path}`: {}", e.into_inner()))
        })
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("scenario serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn system(&self) -> Result<LtiSystem> {
        match &self.dynamics {
            DynamicsSpec::Cwh {
                mu,
                orbit_radius,
                mass,
                dt,
                thrust,
            } => {
                let params = CwhParams {
                    mu: *mu,
                    orbit_radius: *orbit_radius,
                    mass: *mass,
                };
                discretize_cwh_with(&params, *dt, *thrust)
            }
            DynamicsSpec::Explicit { a, b, dt } => {
                let a = matrix_from_rows("dynamics.a", a)?;
                let b = matrix_from_rows("dynamics.b", b)?;
                LtiSystem::new(a, b, *dt)
            }
        }
    }

    pub fn to_scenario(&self) -> Result<Scenario> {
        let system = self.system()?;
        let n = system.state_dim();
        let horizon = self.horizon;
        if horizon == 0 {
            return Err(Error::InvalidHorizon);
        }

        let mut vehicles = Vec::with_capacity(self.vehicles.len());
        for (i, v) in self.vehicles.iter().enumerate() {
            let mut targets = Vec::new();
            for (t, spec) in v.targets.iter().enumerate() {
                let rows: Vec<Vec<f64>> = spec.rows.iter().map(|r| r.g.clone()).collect();
                let g = matrix_from_rows("target rows", &rows).map_err(|e| {
                    Error::Scenario(format!("vehicles[{i}].targets[{t}]: {e}"))
                })?;
                let h = DVector::from_iterator(spec.rows.len(), spec.rows.iter().map(|r| r.h));
                let polytope = Polytope::new(g, h)?;
                for step in spec.steps.resolve(horizon) {
                    targets.push(TargetSet {
                        step,
                        polytope: polytope.clone(),
                    });
                }
            }
            vehicles.push(Vehicle {
                x0: DVector::from_vec(v.x0.clone()),
                targets,
            });
        }

        let (selector, pair_radius, pairs, obstacles) = match &self.collisions {
            None => (DMatrix::zeros(0, n), 0.0, Vec::new(), Vec::new()),
            Some(c) => {
                if c.s_diag.len() != n {
                    return Err(Error::Scenario(format!(
                        "collisions.s_diag has {} entries, expected {n}",
                        c.s_diag.len()
                    )));
                }
                let pairs = match &c.pairs {
                    PairsSpec::Named(NamedPairs::All) => Scenario::all_pairs(vehicles.len()),
                    PairsSpec::Named(NamedPairs::None) => Vec::new(),
                    PairsSpec::List(list) => list.iter().map(|p| (p[0], p[1])).collect(),
                };
                let mut obstacles = Vec::new();
                for (o, spec) in c.obstacles.iter().enumerate() {
                    let points: Vec<DVector<f64>> = spec
                        .trajectory
                        .iter()
                        .map(|p| DVector::from_vec(p.clone()))
                        .collect();
                    let trajectory = match points.len() {
                        1 => vec![points[0].clone(); horizon],
                        len if len == horizon => points,
                        len => {
                            return Err(Error::Scenario(format!(
                                "collisions.obstacles[{o}].trajectory has {len} points, \
                                 expected 1 or {horizon}"
                            )))
                        }
                    };
                    obstacles.push(Obstacle {
                        trajectory,
                        radius: spec.r,
                    });
                }
                (selector_from_diag(&c.s_diag), c.r, pairs, obstacles)
            }
        };

        let laws = self.disturbance.component_laws(n)?;
        let disturbance = DisturbanceSpec::iid(vehicles.len(), horizon, &laws)?;

        let inputs = match &self.inputs {
            None => None,
            Some(b) => Some(InputBox {
                lower: DVector::from_vec(b.lower.clone()),
                upper: DVector::from_vec(b.upper.clone()),
            }),
        };

        let scenario = Scenario {
            system,
            horizon,
            vehicles,
            selector,
            pair_radius,
            pairs,
            obstacles,
            disturbance,
            thresholds: self.thresholds()?,
            inputs,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Thresholds with unset entries defaulted. Any value given must lie in
    /// `(0, 1/6)`.
    pub fn thresholds(&self) -> Result<Thresholds> {
        let d = Thresholds::default();
        let t = &self.thresholds;
        for (name, v) in [("alpha", t.alpha), ("beta", t.beta), ("gamma", t.gamma)] {
            if let Some(v) = v {
                check_threshold(name, v)?;
            }
        }
        Ok(Thresholds {
            alpha: t.alpha.unwrap_or(d.alpha),
            beta: t.beta.unwrap_or(d.beta),
            gamma: t.gamma.unwrap_or(d.gamma),
        })
    }

    /// Risk allocation requested by the file, expressed for `kind`.
    pub fn allocation(&self, scenario: &Scenario, kind: BoundKind) -> Result<RiskAllocation> {
        match &self.allocation {
            AllocationSpec::Uniform => scenario.uniform_allocation(kind),
            AllocationSpec::OptimizeTarget => {
                let mut alloc = scenario.uniform_allocation(kind)?;
                alloc.optimize_target = true;
                Ok(alloc)
            }
            AllocationSpec::Explicit {
                target,
                obstacle,
                collision,
            } => {
                let counts = [
                    scenario.target_count(),
                    scenario.obstacle_row_ids().len(),
                    scenario.pair_row_ids().len(),
                ];
                for (name, given, want) in [
                    ("target", target.len(), counts[0]),
                    ("obstacle", obstacle.len(), counts[1]),
                    ("collision", collision.len(), counts[2]),
                ] {
                    if given != want {
                        return Err(Error::Scenario(format!(
                            "allocation.explicit.{name} has {given} risks, expected {want}"
                        )));
                    }
                }
                let t = scenario.thresholds;
                RiskAllocation::explicit(
                    kind,
                    [target.clone(), obstacle.clone(), collision.clone()],
                    [t.alpha, t.beta, t.gamma],
                )
            }
        }
    }
}

fn matrix_from_rows(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::Scenario(format!("{name} must be a non-empty matrix")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Scenario(format!("{name} rows have unequal lengths")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "dynamics": {"kind": "cwh", "mass": 1.0, "dt": 60.0},
        "horizon": 4,
        "vehicles": [
            {"x0": [10, 0, 0, 0], "targets": [{"rows": [{"g": [1, 0, 0, 0], "h": 1.0}], "steps": "terminal"}]},
            {"x0": [-10, 0, 0, 0]}
        ],
        "collisions": {"r": 2.0, "s_diag": [1, 1, 0, 0]},
        "disturbance": {"family": "gaussian", "var": [1e-3, 1e-3, 0, 0]},
        "thresholds": {"alpha": 0.05, "gamma": 0.05}
    }"#;

    #[test]
    fn minimal_file_parses() {
        let f = ScenarioFile::from_json(MINIMAL).unwrap();
        let s = f.to_scenario().unwrap();
        assert_eq!(s.vehicles.len(), 2);
        assert_eq!(s.pairs, vec![(0, 1)]);
        assert_eq!(s.selector.shape(), (2, 4));
        assert_eq!(s.target_count(), 1);
        assert_eq!(s.pair_row_ids().len(), 4);
        assert_eq!(f.bound, BoundKind::VysochanskijPetunin);
    }

    #[test]
    fn canonical_round_trip() {
        let f = ScenarioFile::from_json(MINIMAL).unwrap();
        let again = ScenarioFile::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(f, again);
        assert_eq!(f.hash(), again.hash());
        assert_eq!(f.hash().len(), 64);
    }

    #[test]
    fn unknown_field_names_path() {
        let text = MINIMAL.replace("\"mass\"", "\"masss\"");
        let err = ScenarioFile::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("dynamics"), "{err}");
        assert!(err.contains("masss"), "{err}");
    }

    #[test]
    fn large_threshold_is_rejected() {
        let text = MINIMAL.replace("\"alpha\": 0.05", "\"alpha\": 0.3");
        let f = ScenarioFile::from_json(&text).unwrap();
        let err = f.to_scenario().unwrap_err().to_string();
        assert!(err.contains("alpha") && err.contains("1/6"), "{err}");
    }

    #[test]
    fn explicit_needs_one_moment_form() {
        let d = DisturbanceFile::Explicit {
            central: None,
            raw: None,
        };
        assert!(d.component_laws(2).is_err());
        let d = DisturbanceFile::Explicit {
            central: None,
            raw: Some(vec![[0.0, 1.0, 0.0, 3.0]; 2]),
        };
        assert_eq!(d.component_laws(2).unwrap().len(), 2);
    }

    #[test]
    fn fixed_obstacle_is_replicated() {
        let text = MINIMAL.replace(
            "\"s_diag\": [1, 1, 0, 0]",
            "\"s_diag\": [1, 1, 0, 0], \"pairs\": \"none\", \"obstacles\": [{\"trajectory\": [[0, 5, 0, 0]], \"r\": 1.0}]",
        )
        .replace("\"gamma\": 0.05", "\"beta\": 0.05");
        let s = ScenarioFile::from_json(&text).unwrap().to_scenario().unwrap();
        assert!(s.pairs.is_empty());
        assert_eq!(s.obstacles[0].trajectory.len(), 4);
        assert_eq!(s.obstacle_row_ids().len(), 8);
    }
}
