//! Discrete-time LTI models and their stacked-horizon form.
//!
//! For a horizon of `N` steps the state at step `k` is an affine function of
//! the initial state, the stacked input `U = [u(0); …; u(N-1)]` and the stacked
//! disturbance `W = [w(0); …; w(N-1)]`:
//!
//! ```text
//! x(k) = A^k x(0) + C(k) U + D(k) W
//! C(k) = [A^{k-1}B … AB B 0 … 0]
//! D(k) = [A^{k-1}  … A  I 0 … 0]
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete-time pair `x(k+1) = A x(k) + B u(k)` sampled every `dt` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    dt: f64,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, dt: f64) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dims("state matrix columns", a.nrows(), a.ncols()));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::dims("input matrix rows", a.nrows(), b.nrows()));
        }
        if a.nrows() == 0 || b.ncols() == 0 {
            return Err(Error::param("dimensions", "state and input must be non-empty"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt", format!("must be positive, got {dt}")));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::param("matrices", "entries must be finite"));
        }
        Ok(Self { a, b, dt })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// One step of the nominal recursion.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
}

/// Physical constants of the planar Clohessy–Wiltshire–Hill model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CwhParams {
    /// Gravitational parameter, m³/s².
    pub mu: f64,
    /// Radius of the chief's circular orbit, m.
    pub orbit_radius: f64,
    /// Deputy mass, kg.
    pub mass: f64,
}

impl CwhParams {
    /// Earth's gravitational parameter.
    pub const MU_EARTH: f64 = 3.986004418e14;
    /// Geostationary orbit radius.
    pub const R_GEO: f64 = 4.2164e7;

    pub fn geostationary(mass: f64) -> Self {
        Self {
            mu: Self::MU_EARTH,
            orbit_radius: Self::R_GEO,
            mass,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mu", self.mu),
            ("orbit_radius", self.orbit_radius),
            ("mass", self.mass),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Mean motion `sqrt(mu / R0^3)` in rad/s.
    pub fn orbital_rate(&self) -> f64 {
        (self.mu / self.orbit_radius.powi(3)).sqrt()
    }
}

/// How a per-step input enters the discrete model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThrustModel {
    /// Velocity impulse `u / m` applied at the start of the interval.
    #[default]
    Impulse,
    /// Constant force `u` held over the interval.
    ZeroOrderHold,
}

/// `sin(θ) - θ`, accurate for small θ.
fn sin_minus_angle(theta: f64) -> f64 {
    if theta.abs() < 0.1 {
        let t2 = theta * theta;
        // -θ³/3! + θ⁵/5! - θ⁷/7! + θ⁹/9! - θ¹¹/11!
        let mut term = -theta * t2 / 6.0;
        let mut sum = term;
        for k in 1..6 {
            let d = ((2 * k + 2) * (2 * k + 3)) as f64;
            term *= -t2 / d;
            sum += term;
        }
        sum
    } else {
        theta.sin() - theta
    }
}

/// Continuous-time planar CWH state matrix for state `(x, y, vx, vy)`.
pub fn cwh_continuous(omega: f64) -> DMatrix<f64> {
    let w2 = omega * omega;
    DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, //
            3.0 * w2, 0.0, 0.0, 2.0 * omega, //
            0.0, 0.0, -2.0 * omega, 0.0,
        ],
    )
}

/// Closed-form state-transition matrix of the planar CWH equations over `t`
/// seconds. Well defined for `omega = 0`, where it reduces to free motion.
pub fn cwh_transition(omega: f64, t: f64) -> DMatrix<f64> {
    let theta = omega * t;
    let (s, c) = theta.sin_cos();
    let half = (0.5 * theta).sin();
    let one_minus_c = 2.0 * half * half;
    // sin(θ)/ω and (1 - cos θ)/ω written in terms of t to survive ω → 0.
    let (s_over_w, omc_over_w) = if theta == 0.0 {
        (t, 0.0)
    } else {
        (t * s / theta, t * one_minus_c / theta)
    };
    DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0 + 3.0 * one_minus_c,
            0.0,
            s_over_w,
            2.0 * omc_over_w,
            6.0 * sin_minus_angle(theta),
            1.0,
            -2.0 * omc_over_w,
            4.0 * s_over_w - 3.0 * t,
            3.0 * omega * s,
            0.0,
            c,
            2.0 * s,
            -6.0 * omega * one_minus_c,
            0.0,
            -2.0 * s,
            1.0 - 4.0 * one_minus_c,
        ],
    )
}

/// Discretize the planar CWH model with impulsive thrust.
pub fn discretize_cwh(params: &CwhParams, dt: f64) -> Result<LtiSystem> {
    discretize_cwh_with(params, dt, ThrustModel::Impulse)
}

pub fn discretize_cwh_with(params: &CwhParams, dt: f64, model: ThrustModel) -> Result<LtiSystem> {
    params.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param("dt", format!("must be positive, got {dt}")));
    }
    let omega = params.orbital_rate();
    let a = cwh_transition(omega, dt);
    let mut input = DMatrix::zeros(4, 2);
    input[(2, 0)] = 1.0 / params.mass;
    input[(3, 1)] = 1.0 / params.mass;
    let b = match model {
        ThrustModel::Impulse => &a * input,
        ThrustModel::ZeroOrderHold => {
            // exp([[Ac, Bc], [0, 0]] dt) carries ∫Φ(τ)dτ Bc in its top-right block.
            let mut aug = DMatrix::zeros(6, 6);
            aug.view_mut((0, 0), (4, 4)).copy_from(&(cwh_continuous(omega) * dt));
            aug.view_mut((0, 4), (4, 2)).copy_from(&(input * dt));
            aug.exp().view((0, 4), (4, 2)).into_owned()
        }
    };
    LtiSystem::new(a, b, dt)
}

/// Matrices of the stacked-horizon form for steps `1..=N`.
#[derive(Debug, Clone)]
pub struct ConcatenatedDynamics {
    horizon: usize,
    state_dim: usize,
    input_dim: usize,
    /// `A^0 … A^N`.
    powers: Vec<DMatrix<f64>>,
    /// `C(1) … C(N)`.
    input_maps: Vec<DMatrix<f64>>,
    /// `D(1) … D(N)`.
    noise_maps: Vec<DMatrix<f64>>,
}

impl ConcatenatedDynamics {
    pub fn build(sys: &LtiSystem, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidHorizon);
        }
        let n = sys.state_dim();
        let m = sys.input_dim();
        let mut powers = Vec::with_capacity(horizon + 1);
        powers.push(DMatrix::identity(n, n));
        for k in 1..=horizon {
            let next = sys.a() * &powers[k - 1];
            powers.push(next);
        }
        let mut input_maps = Vec::with_capacity(horizon);
        let mut noise_maps = Vec::with_capacity(horizon);
        for k in 1..=horizon {
            let mut c = DMatrix::zeros(n, horizon * m);
            let mut d = DMatrix::zeros(n, horizon * n);
            for t in 0..k {
                let p = &powers[k - 1 - t];
                c.view_mut((0, t * m), (n, m)).copy_from(&(p * sys.b()));
                d.view_mut((0, t * n), (n, n)).copy_from(p);
            }
            input_maps.push(c);
            noise_maps.push(d);
        }
        Ok(Self {
            horizon,
            state_dim: n,
            input_dim: m,
            powers,
            input_maps,
            noise_maps,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Length of a stacked input vector, `N m`.
    pub fn stacked_input_len(&self) -> usize {
        self.horizon * self.input_dim
    }

    /// Length of a stacked disturbance vector, `N n`.
    pub fn stacked_noise_len(&self) -> usize {
        self.horizon * self.state_dim
    }

    /// `A^k` for `k` in `0..=N`.
    pub fn state_power(&self, k: usize) -> &DMatrix<f64> {
        &self.powers[k]
    }

    /// `C(k)` for `k` in `1..=N`.
    pub fn input_map(&self, k: usize) -> &DMatrix<f64> {
        assert!(k >= 1 && k <= self.horizon, "step {k} outside 1..={}", self.horizon);
        &self.input_maps[k - 1]
    }

    /// `D(k)` for `k` in `1..=N`.
    pub fn noise_map(&self, k: usize) -> &DMatrix<f64> {
        assert!(k >= 1 && k <= self.horizon, "step {k} outside 1..={}", self.horizon);
        &self.noise_maps[k - 1]
    }

    /// Mean state at step `k`: `A^k x0 + C(k) U + D(k) E[W]`.
    pub fn mean_state(
        &self,
        k: usize,
        x0: &DVector<f64>,
        inputs: &DVector<f64>,
        noise_mean: &DVector<f64>,
    ) -> DVector<f64> {
        self.state_power(k) * x0 + self.input_map(k) * inputs + self.noise_map(k) * noise_mean
    }

    /// Mean states for `k = 1..=N`.
    pub fn mean_trajectory(
        &self,
        x0: &DVector<f64>,
        inputs: &DVector<f64>,
        noise_mean: &DVector<f64>,
    ) -> Result<Vec<DVector<f64>>> {
        if x0.len() != self.state_dim {
            return Err(Error::dims("initial state", self.state_dim, x0.len()));
        }
        if inputs.len() != self.stacked_input_len() {
            return Err(Error::dims("stacked input", self.stacked_input_len(), inputs.len()));
        }
        if noise_mean.len() != self.stacked_noise_len() {
            return Err(Error::dims(
                "stacked disturbance mean",
                self.stacked_noise_len(),
                noise_mean.len(),
            ));
        }
        Ok((1..=self.horizon)
            .map(|k| self.mean_state(k, x0, inputs, noise_mean))
            .collect())
    }
}
