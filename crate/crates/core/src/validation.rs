//! Monte Carlo validation of a plan.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{ComponentLaw, DisturbanceSpec};
use crate::scenario::{CollisionKind, Scenario};
use crate::solver::PlanSolution;
use crate::unimodality::{check_unimodal, UnimodalityConfig, UnimodalityOutcome};

/// Disturbance draws: one `L × count` matrix per vehicle, `L = N n`.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub seed: u64,
    pub count: usize,
    pub draws: Vec<DMatrix<f64>>,
}

enum Sampler {
    Constant(f64),
    Normal(Normal<f64>),
    Exp(Exp<f64>),
    Bimodal(f64, Normal<f64>),
}

impl Sampler {
    fn new(law: &ComponentLaw) -> Result<Self> {
        let bad = |e: &dyn std::fmt::Display| Error::NotSamplable(e.to_string());
        Ok(match *law {
            ComponentLaw::Constant { value } => Sampler::Constant(value),
            ComponentLaw::Gaussian { mean, var } => {
                Sampler::Normal(Normal::new(mean, var.sqrt()).map_err(|e| bad(&e))?)
            }
            ComponentLaw::Exponential { rate } => Sampler::Exp(Exp::new(rate).map_err(|e| bad(&e))?),
            ComponentLaw::SymmetricBimodal { offset, var } => {
                Sampler::Bimodal(offset, Normal::new(0.0, var.sqrt()).map_err(|e| bad(&e))?)
            }
            ComponentLaw::Moments(_) => {
                return Err(Error::NotSamplable(
                    "components given only by their moments cannot be sampled".into(),
                ))
            }
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampler::Constant(v) => *v,
            Sampler::Normal(d) => d.sample(rng),
            Sampler::Exp(d) => d.sample(rng),
            Sampler::Bimodal(offset, d) => {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * offset + d.sample(rng)
            }
        }
    }
}

/// Draw `count` independent disturbance realizations with a seeded ChaCha8
/// stream. The same seed always yields the same batch.
pub fn sample_disturbances(spec: &DisturbanceSpec, count: usize, seed: u64) -> Result<SampleBatch> {
    if count == 0 {
        return Err(Error::param("samples", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(spec.vehicles());
    for v in 0..spec.vehicles() {
        let samplers = spec
            .vehicle_laws(v)
            .iter()
            .map(Sampler::new)
            .collect::<Result<Vec<_>>>()?;
        let mut m = DMatrix::zeros(samplers.len(), count);
        for s in 0..count {
            for (p, sampler) in samplers.iter().enumerate() {
                m[(p, s)] = sampler.draw(&mut rng);
            }
        }
        draws.push(m);
    }
    Ok(SampleBatch { seed, count, draws })
}

/// Sampled states: `states[vehicle][k - 1]` is `n × count`.
pub fn simulate(
    scenario: &Scenario,
    inputs: &[DVector<f64>],
    batch: &SampleBatch,
) -> Result<Vec<Vec<DMatrix<f64>>>> {
    let cd = scenario.concatenated()?;
    if inputs.len() != scenario.vehicles.len() || batch.draws.len() != inputs.len() {
        return Err(Error::dims("vehicles", scenario.vehicles.len(), inputs.len()));
    }
    let mut out = Vec::with_capacity(inputs.len());
    for (v, vehicle) in scenario.vehicles.iter().enumerate() {
        if inputs[v].len() != cd.stacked_input_len() {
            return Err(Error::dims("stacked input", cd.stacked_input_len(), inputs[v].len()));
        }
        let mut per_step = Vec::with_capacity(cd.horizon());
        for k in 1..=cd.horizon() {
            let nominal = cd.state_power(k) * &vehicle.x0 + cd.input_map(k) * &inputs[v];
            let mut x = cd.noise_map(k) * &batch.draws[v];
            for mut col in x.column_iter_mut() {
                col += &nominal;
            }
            per_step.push(x);
        }
        out.push(per_step);
    }
    Ok(out)
}

/// Per-sample values of one constraint function.
#[derive(Debug, Clone, PartialEq)]
pub struct RowStatistic {
    pub row: String,
    pub values: Vec<f64>,
    /// For targets, `g' x ≤ limit`; for separations, `‖·‖² ≥ limit`.
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintStatistics {
    pub target: Vec<RowStatistic>,
    pub obstacle: Vec<RowStatistic>,
    pub collision: Vec<RowStatistic>,
}

/// Sampled `g' x_i(k)` for every target row and `‖S(·)‖²` for every
/// obstacle and collision row, in canonical row order.
pub fn constraint_statistics(
    scenario: &Scenario,
    inputs: &[DVector<f64>],
    batch: &SampleBatch,
) -> Result<ConstraintStatistics> {
    let states = simulate(scenario, inputs, batch)?;
    let mut target = Vec::new();
    for id in scenario.target_row_ids() {
        let set = &scenario.vehicles[id.vehicle].targets[id.set];
        let g = set.polytope.normal(id.halfspace);
        let x = &states[id.vehicle][id.step - 1];
        target.push(RowStatistic {
            row: id.to_string(),
            values: x.tr_mul(&g).iter().copied().collect(),
            limit: set.polytope.offsets()[id.halfspace],
        });
    }
    let s = &scenario.selector;
    let separation = |a: &DMatrix<f64>, b: Option<&DMatrix<f64>>, shift: Option<&DVector<f64>>| {
        let mut d = match b {
            Some(b) => s * (a - b),
            None => s * a,
        };
        if let Some(o) = shift {
            let so = s * o;
            for mut col in d.column_iter_mut() {
                col -= &so;
            }
        }
        d.column_iter().map(|c| c.norm_squared()).collect::<Vec<f64>>()
    };
    let mut obstacle = Vec::new();
    for id in scenario.obstacle_row_ids() {
        if let CollisionKind::Obstacle { vehicle, obstacle: o } = id.kind {
            let obs = &scenario.obstacles[o];
            obstacle.push(RowStatistic {
                row: id.to_string(),
                values: separation(
                    &states[vehicle][id.step - 1],
                    None,
                    Some(&obs.trajectory[id.step - 1]),
                ),
                limit: obs.radius * obs.radius,
            });
        }
    }
    let mut collision = Vec::new();
    for id in scenario.pair_row_ids() {
        if let CollisionKind::Pair { first, second } = id.kind {
            collision.push(RowStatistic {
                row: id.to_string(),
                values: separation(
                    &states[first][id.step - 1],
                    Some(&states[second][id.step - 1]),
                    None,
                ),
                limit: scenario.pair_radius * scenario.pair_radius,
            });
        }
    }
    Ok(ConstraintStatistics {
        target,
        obstacle,
        collision,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowReport {
    pub row: String,
    pub satisfied: f64,
}

/// Empirical probability that every row of one group holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointReport {
    pub probability: f64,
    /// Required probability `1 - threshold`.
    pub required: f64,
    /// Binomial standard error at the required probability.
    pub std_error: f64,
    pub passed: bool,
    pub rows: Vec<RowReport>,
}

impl JointReport {
    fn from_rows(rows: &[RowStatistic], upper: bool, threshold: f64, count: usize) -> Self {
        let mut joint = vec![true; count];
        let mut reports = Vec::with_capacity(rows.len());
        for r in rows {
            let mut hits = 0usize;
            for (s, &v) in r.values.iter().enumerate() {
                let ok = if upper { v <= r.limit } else { v >= r.limit };
                hits += usize::from(ok);
                joint[s] &= ok;
            }
            reports.push(RowReport {
                row: r.row.clone(),
                satisfied: hits as f64 / count as f64,
            });
        }
        let probability = joint.iter().filter(|b| **b).count() as f64 / count as f64;
        let required = 1.0 - threshold;
        let std_error = (required * threshold / count as f64).sqrt();
        Self {
            probability,
            required,
            std_error,
            passed: probability >= required - 3.0 * std_error,
            rows: reports,
        }
    }

    /// The 3σ band is at least as wide as the allowed violation.
    pub fn wide_interval(&self) -> bool {
        3.0 * self.std_error >= 1.0 - self.required
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatisfactionReport {
    pub samples: usize,
    pub seed: u64,
    pub target: Option<JointReport>,
    pub obstacle: Option<JointReport>,
    pub collision: Option<JointReport>,
    /// Too few samples for the comparison to be informative.
    pub wide_interval: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_hash: Option<String>,
}

impl SatisfactionReport {
    pub fn passed(&self) -> bool {
        [&self.target, &self.obstacle, &self.collision]
            .iter()
            .all(|r| r.as_ref().is_none_or(|r| r.passed))
    }
}

/// Sample the disturbance and measure joint satisfaction of every
/// constraint group.
pub fn measure_satisfaction(
    scenario: &Scenario,
    solution: &PlanSolution,
    samples: usize,
    seed: u64,
) -> Result<SatisfactionReport> {
    let batch = sample_disturbances(&scenario.disturbance, samples, seed)?;
    let stats = constraint_statistics(scenario, &solution.input_vectors(), &batch)?;
    let t = scenario.thresholds;
    let group = |rows: &[RowStatistic], upper: bool, threshold: f64| {
        (!rows.is_empty()).then(|| JointReport::from_rows(rows, upper, threshold, samples))
    };
    let target = group(&stats.target, true, t.alpha);
    let obstacle = group(&stats.obstacle, false, t.beta);
    let collision = group(&stats.collision, false, t.gamma);
    let wide_interval = [&target, &obstacle, &collision]
        .iter()
        .any(|r| r.as_ref().is_some_and(JointReport::wide_interval));
    if wide_interval {
        warn!("{samples} samples give a confidence band wider than the risk budget");
    }
    Ok(SatisfactionReport {
        samples,
        seed,
        target,
        obstacle,
        collision,
        wide_interval,
        scenario_hash: solution.scenario_hash.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowUnimodality {
    pub group: String,
    pub row: String,
    #[serde(flatten)]
    pub outcome: UnimodalityOutcome,
}

/// Run the unimodality check on the sampled value of every constraint
/// function of a plan.
pub fn constraint_unimodality(
    scenario: &Scenario,
    solution: &PlanSolution,
    samples: usize,
    seed: u64,
    cfg: &UnimodalityConfig,
) -> Result<Vec<RowUnimodality>> {
    let batch = sample_disturbances(&scenario.disturbance, samples, seed)?;
    let stats = constraint_statistics(scenario, &solution.input_vectors(), &batch)?;
    let mut out = Vec::new();
    for (group, rows) in [
        ("target", &stats.target),
        ("obstacle", &stats.obstacle),
        ("collision", &stats.collision),
    ] {
        for r in rows {
            out.push(RowUnimodality {
                group: group.to_string(),
                row: r.row.clone(),
                outcome: check_unimodal(&r.values, cfg)?,
            });
        }
    }
    Ok(out)
}
