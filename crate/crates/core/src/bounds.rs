//! One-sided tail bounds and risk allocation.
//!
//! A constraint `E[x] + λ Std[x] ≤ h` caps `P(x ≥ h)` at `tail_bound(λ)`. The
//! one-sided Vysochanskij–Petunin bound `4 / (9 (λ² + 1))` needs a unimodal
//! `x` and `λ ≥ sqrt(5/3)`; Cantelli's bound `1 / (λ² + 1)` holds for any
//! distribution with finite variance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest joint violation probability accepted for α, β and γ.
pub const MAX_THRESHOLD: f64 = 1.0 / 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundKind {
    #[serde(rename = "vp")]
    VysochanskijPetunin,
    #[serde(rename = "cantelli")]
    Cantelli,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundKind::VysochanskijPetunin => "vp",
            BoundKind::Cantelli => "cantelli",
        }
    }

    fn numerator(self) -> f64 {
        match self {
            BoundKind::VysochanskijPetunin => 4.0 / 9.0,
            BoundKind::Cantelli => 1.0,
        }
    }

    /// Smallest admissible multiplier.
    pub fn min_lambda(self) -> f64 {
        match self {
            BoundKind::VysochanskijPetunin => (5.0_f64 / 3.0).sqrt(),
            BoundKind::Cantelli => 0.0,
        }
    }

    /// Largest admissible per-constraint risk.
    pub fn max_risk(self) -> f64 {
        match self {
            BoundKind::VysochanskijPetunin => 1.0 / 6.0,
            BoundKind::Cantelli => 1.0,
        }
    }

    /// Upper bound on `P(x - E[x] ≥ λ Std[x])`.
    pub fn tail_bound(self, lambda: f64) -> Result<f64> {
        let ok = match self {
            // λ² ≥ 5/3 up to round-off in sqrt(5/3)²
            BoundKind::VysochanskijPetunin => lambda * lambda >= 5.0 / 3.0 - 1e-14,
            BoundKind::Cantelli => lambda > 0.0,
        };
        if !ok || !lambda.is_finite() {
            return Err(Error::BoundDomain {
                kind: self.name(),
                what: "lambda",
                value: lambda,
            });
        }
        Ok(self.numerator() / (lambda * lambda + 1.0))
    }

    /// Inverse of [`Self::tail_bound`]: the multiplier whose bound equals `omega`.
    pub fn lambda_for_risk(self, omega: f64) -> Result<f64> {
        let ok = match self {
            BoundKind::VysochanskijPetunin => omega > 0.0 && omega <= 1.0 / 6.0,
            BoundKind::Cantelli => omega > 0.0 && omega < 1.0,
        };
        if !ok {
            return Err(Error::BoundDomain {
                kind: self.name(),
                what: "omega",
                value: omega,
            });
        }
        Ok((self.numerator() / omega - 1.0).max(0.0).sqrt())
    }

    /// Lower end of the interval on which `tail_bound` is convex in λ.
    pub fn convexity_floor(self) -> f64 {
        (1.0_f64 / 3.0).sqrt()
    }
}

/// Risk and multiplier assigned to one individual constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEntry {
    pub omega: f64,
    pub lambda: f64,
}

/// Split `total` evenly over `count` constraints so that neither the exact
/// nor the floating-point running sum of the pieces exceeds `total`.
pub fn uniform_allocation(total: f64, count: usize, kind: BoundKind) -> Result<Vec<RiskEntry>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if !(total > 0.0 && total < 1.0) {
        return Err(Error::InfeasibleAllocation(format!(
            "total risk {total} must lie in (0, 1)"
        )));
    }
    let mut omega = total / count as f64;
    if omega >= kind.max_risk() {
        return Err(Error::InfeasibleAllocation(format!(
            "per-constraint risk {omega} is not below the {} limit {}",
            kind.name(),
            kind.max_risk()
        )));
    }
    while !exact_product_within(omega, count, total) || sequential_sum(omega, count) > total {
        omega = omega.next_down();
    }
    let lambda = kind.lambda_for_risk(omega)?;
    Ok(vec![RiskEntry { omega, lambda }; count])
}

fn sequential_sum(value: f64, count: usize) -> f64 {
    (0..count).fold(0.0, |acc, _| acc + value)
}

/// `count · value ≤ total` in exact arithmetic, for non-negative operands.
fn exact_product_within(value: f64, count: usize, total: f64) -> bool {
    let n = count as f64;
    let product = n * value;
    // product + residual is the exact value of n · value
    let residual = n.mul_add(value, -product);
    if product > total {
        return false;
    }
    if product < 0.5 * total {
        return true;
    }
    // Sterbenz: the difference of values within a factor of two is exact
    residual <= total - product
}

/// Per-row risk for every individual constraint of a scenario. Rows appear in
/// the canonical order produced by [`crate::scenario::Scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskAllocation {
    pub kind: BoundKind,
    pub target: Vec<RiskEntry>,
    pub obstacle: Vec<RiskEntry>,
    pub collision: Vec<RiskEntry>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Let the solver pick the target multipliers under the α budget.
    #[serde(default)]
    pub optimize_target: bool,
}

impl RiskAllocation {
    /// Even split of each joint budget.
    pub fn uniform(
        kind: BoundKind,
        counts: [usize; 3],
        thresholds: [f64; 3],
    ) -> Result<Self> {
        let [nt, no, nc] = counts;
        let [alpha, beta, gamma] = thresholds;
        Ok(Self {
            kind,
            target: uniform_allocation(alpha, nt, kind)?,
            obstacle: uniform_allocation(beta, no, kind)?,
            collision: uniform_allocation(gamma, nc, kind)?,
            alpha,
            beta,
            gamma,
            optimize_target: false,
        })
    }

    /// Explicit per-row risks.
    pub fn explicit(
        kind: BoundKind,
        omegas: [Vec<f64>; 3],
        thresholds: [f64; 3],
    ) -> Result<Self> {
        let [t, o, c] = omegas;
        let entries = |v: Vec<f64>| -> Result<Vec<RiskEntry>> {
            v.into_iter()
                .map(|omega| {
                    Ok(RiskEntry {
                        omega,
                        lambda: kind.lambda_for_risk(omega)?,
                    })
                })
                .collect()
        };
        let alloc = Self {
            kind,
            target: entries(t)?,
            obstacle: entries(o)?,
            collision: entries(c)?,
            alpha: thresholds[0],
            beta: thresholds[1],
            gamma: thresholds[2],
            optimize_target: false,
        };
        alloc.validate()?;
        Ok(alloc)
    }

    /// Every per-row risk is in the bound's domain and each group stays
    /// within its joint budget.
    pub fn validate(&self) -> Result<()> {
        for (name, entries, total) in [
            ("alpha", &self.target, self.alpha),
            ("beta", &self.obstacle, self.beta),
            ("gamma", &self.collision, self.gamma),
        ] {
            if entries.is_empty() {
                continue;
            }
            let sum = entries.iter().fold(0.0, |acc, e| acc + e.omega);
            // room for round-off in decimal inputs such as 24 × 0.003125
            let slack = entries.len() as f64 * f64::EPSILON * total;
            if sum > total + slack {
                return Err(Error::InfeasibleAllocation(format!(
                    "risks sum to {sum}, above {name} = {total}"
                )));
            }
            for e in entries.iter() {
                if !(e.omega > 0.0 && e.omega < self.kind.max_risk()) {
                    return Err(Error::InfeasibleAllocation(format!(
                        "risk {} outside (0, {}) for the {} bound",
                        e.omega,
                        self.kind.max_risk(),
                        self.kind.name()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Same row risks expressed for a different bound.
    pub fn with_kind(&self, kind: BoundKind) -> Result<Self> {
        let convert = |v: &[RiskEntry]| -> Result<Vec<RiskEntry>> {
            v.iter()
                .map(|e| {
                    Ok(RiskEntry {
                        omega: e.omega,
                        lambda: kind.lambda_for_risk(e.omega)?,
                    })
                })
                .collect()
        };
        Ok(Self {
            kind,
            target: convert(&self.target)?,
            obstacle: convert(&self.obstacle)?,
            collision: convert(&self.collision)?,
            ..self.clone()
        })
    }
}
