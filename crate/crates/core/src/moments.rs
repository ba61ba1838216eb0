//! Disturbance moments and their propagation through the stacked dynamics.
//!
//! Every disturbance component is independent of every other one and has
//! finite moments through order four. That is enough to get closed forms
//! for the mean and variance of both affine functionals `g' x(k)` and
//! squared norms `‖z̄ + z‖²`, where `z = M W` is the zero-mean part of a
//! selected position difference.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::ConcatenatedDynamics;
use crate::error::{Error, Result};

/// Mean and central moments (orders 2 to 4) of one scalar component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MomentFields")]
pub struct ComponentMoments {
    mean: f64,
    var: f64,
    c3: f64,
    c4: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MomentFields {
    mean: f64,
    var: f64,
    c3: f64,
    c4: f64,
}

impl TryFrom<MomentFields> for ComponentMoments {
    type Error = Error;

    fn try_from(f: MomentFields) -> Result<Self> {
        Self::new(f.mean, f.var, f.c3, f.c4)
    }
}

impl ComponentMoments {
    /// Explicit central moments. Requires `var > 0` and `c4 >= var²`.
    pub fn new(mean: f64, var: f64, c3: f64, c4: f64) -> Result<Self> {
        if ![mean, var, c3, c4].iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateDistribution("moments must be finite".into()));
        }
        if var <= 0.0 {
            return Err(Error::DegenerateDistribution(format!(
                "variance must be positive, got {var}"
            )));
        }
        // Relative slack for round-off in the raw-to-central conversion.
        if c4 < var * var * (1.0 - 1e-12) {
            return Err(Error::DegenerateDistribution(format!(
                "fourth central moment {c4} is below the squared variance {}",
                var * var
            )));
        }
        Ok(Self { mean, var, c3, c4 })
    }

    /// A point mass.
    pub fn point(value: f64) -> Self {
        Self {
            mean: value,
            var: 0.0,
            c3: 0.0,
            c4: 0.0,
        }
    }

    pub fn gaussian(mean: f64, var: f64) -> Result<Self> {
        Self::new(mean, var, 0.0, 3.0 * var * var)
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        let mut raw = [0.0; 4];
        for (order, slot) in (1..=4).zip(raw.iter_mut()) {
            *slot = exponential_raw_moment(rate, order)?;
        }
        centered_moments(raw)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn var(&self) -> f64 {
        self.var
    }

    pub fn c3(&self) -> f64 {
        self.c3
    }

    pub fn c4(&self) -> f64 {
        self.c4
    }

    pub fn std(&self) -> f64 {
        self.var.sqrt()
    }
}

/// `E[x^n] = n! / rate^n` for an exponential variable.
pub fn exponential_raw_moment(rate: f64, order: u32) -> Result<f64> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::param("rate", format!("must be positive, got {rate}")));
    }
    if !(1..=4).contains(&order) {
        return Err(Error::param("order", format!("must be in 1..=4, got {order}")));
    }
    let factorial: f64 = (1..=order).map(f64::from).product();
    Ok(factorial / rate.powi(order as i32))
}

/// Convert raw moments `E[x], E[x²], E[x³], E[x⁴]` to mean plus central moments.
pub fn centered_moments(raw: [f64; 4]) -> Result<ComponentMoments> {
    let [m1, m2, m3, m4] = raw;
    let var = m2 - m1 * m1;
    let c3 = m3 - 3.0 * m1 * m2 + 2.0 * m1.powi(3);
    let c4 = m4 - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1.powi(4);
    ComponentMoments::new(m1, var, c3, c4)
}

/// Moments of `a - b` for independent `a` and `b`.
pub fn difference_moments(a: &ComponentMoments, b: &ComponentMoments) -> ComponentMoments {
    ComponentMoments {
        mean: a.mean - b.mean,
        var: a.var + b.var,
        c3: a.c3 - b.c3,
        c4: a.c4 + b.c4 + 6.0 * a.var * b.var,
    }
}

/// Distribution of one scalar disturbance component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum ComponentLaw {
    Constant { value: f64 },
    Gaussian { mean: f64, var: f64 },
    Exponential { rate: f64 },
    /// Equal-weight mixture of `N(-offset, var)` and `N(offset, var)`.
    SymmetricBimodal { offset: f64, var: f64 },
    /// Known moments without a sampler.
    Moments(ComponentMoments),
}

impl ComponentLaw {
    pub fn moments(&self) -> Result<ComponentMoments> {
        match *self {
            ComponentLaw::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::param("value", "must be finite"));
                }
                Ok(ComponentMoments::point(value))
            }
            ComponentLaw::Gaussian { mean, var } => ComponentMoments::gaussian(mean, var),
            ComponentLaw::Exponential { rate } => ComponentMoments::exponential(rate),
            ComponentLaw::SymmetricBimodal { offset, var } => {
                let d2 = offset * offset;
                ComponentMoments::new(0.0, d2 + var, 0.0, d2 * d2 + 6.0 * d2 * var + 3.0 * var * var)
            }
            ComponentLaw::Moments(m) => Ok(m),
        }
    }

    pub fn is_samplable(&self) -> bool {
        !matches!(self, ComponentLaw::Moments(_))
    }
}

/// Per-vehicle, per-step, per-component disturbance description. Components
/// are mutually independent.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSpec {
    vehicles: usize,
    horizon: usize,
    state_dim: usize,
    laws: Vec<ComponentLaw>,
    moments: Vec<ComponentMoments>,
}

impl DisturbanceSpec {
    /// `laws` is ordered vehicle-major, then step, then state component.
    pub fn from_laws(
        vehicles: usize,
        horizon: usize,
        state_dim: usize,
        laws: Vec<ComponentLaw>,
    ) -> Result<Self> {
        let expected = vehicles * horizon * state_dim;
        if laws.len() != expected {
            return Err(Error::dims("disturbance components", expected, laws.len()));
        }
        let moments = laws.iter().map(|l| l.moments()).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            vehicles,
            horizon,
            state_dim,
            laws,
            moments,
        })
    }

    /// Same per-step law for every vehicle and step.
    pub fn iid(vehicles: usize, horizon: usize, per_step: &[ComponentLaw]) -> Result<Self> {
        let laws = (0..vehicles * horizon)
            .flat_map(|_| per_step.iter().copied())
            .collect();
        Self::from_laws(vehicles, horizon, per_step.len(), laws)
    }

    /// Zero disturbance.
    pub fn deterministic(vehicles: usize, horizon: usize, state_dim: usize) -> Self {
        Self::iid(vehicles, horizon, &vec![ComponentLaw::Constant { value: 0.0 }; state_dim])
            .expect("constant laws are always valid")
    }

    pub fn vehicles(&self) -> usize {
        self.vehicles
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn stacked_len(&self) -> usize {
        self.horizon * self.state_dim
    }

    /// Laws of `W_i`, length `N n`.
    pub fn vehicle_laws(&self, vehicle: usize) -> &[ComponentLaw] {
        let len = self.stacked_len();
        &self.laws[vehicle * len..(vehicle + 1) * len]
    }

    /// Moments of `W_i`, length `N n`.
    pub fn vehicle_moments(&self, vehicle: usize) -> &[ComponentMoments] {
        let len = self.stacked_len();
        &self.moments[vehicle * len..(vehicle + 1) * len]
    }

    /// `E[W_i]`.
    pub fn mean_vector(&self, vehicle: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.stacked_len(),
            self.vehicle_moments(vehicle).iter().map(|m| m.mean),
        )
    }

    /// Diagonal of `Var[W_i]`.
    pub fn variance_diag(&self, vehicle: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.stacked_len(),
            self.vehicle_moments(vehicle).iter().map(|m| m.var),
        )
    }

    /// Component moments of `W_i - W_j`.
    pub fn difference(&self, i: usize, j: usize) -> Vec<ComponentMoments> {
        self.vehicle_moments(i)
            .iter()
            .zip(self.vehicle_moments(j))
            .map(|(a, b)| difference_moments(a, b))
            .collect()
    }

    pub fn is_samplable(&self) -> bool {
        self.laws.iter().all(ComponentLaw::is_samplable)
    }

    pub fn is_deterministic(&self) -> bool {
        self.moments.iter().all(|m| m.var == 0.0)
    }
}

/// Mean contribution and standard deviation of `g' x(k)` due to the disturbance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMoments {
    /// `g' D(k) E[W]`.
    pub mean_shift: f64,
    /// `sqrt(g' D(k) Var[W] D(k)' g)`; does not depend on the input.
    pub std: f64,
}

impl AffineMoments {
    /// Like [`affine_moments`] but returns a zero `std` instead of failing.
    pub fn compute(
        g: &DVector<f64>,
        cd: &ConcatenatedDynamics,
        spec: &DisturbanceSpec,
        k: usize,
        vehicle: usize,
    ) -> Result<Self> {
        if g.len() != cd.state_dim() {
            return Err(Error::dims("halfspace normal", cd.state_dim(), g.len()));
        }
        if spec.state_dim() != cd.state_dim() || spec.horizon() != cd.horizon() {
            return Err(Error::dims("disturbance horizon", cd.horizon(), spec.horizon()));
        }
        let row = cd.noise_map(k).tr_mul(g);
        let moments = spec.vehicle_moments(vehicle);
        let mut mean_shift = 0.0;
        let mut var = 0.0;
        for (r, m) in row.iter().zip(moments) {
            mean_shift += r * m.mean;
            var += r * r * m.var;
        }
        Ok(Self {
            mean_shift,
            std: var.sqrt(),
        })
    }
}

/// Disturbance moments of the affine functional `g' x_i(k)`.
pub fn affine_moments(
    g: &DVector<f64>,
    cd: &ConcatenatedDynamics,
    spec: &DisturbanceSpec,
    k: usize,
    vehicle: usize,
) -> Result<AffineMoments> {
    let out = AffineMoments::compute(g, cd, spec, k, vehicle)?;
    if out.std == 0.0 {
        return Err(Error::ZeroStd(format!("g'x(k) at step {k} for vehicle {vehicle}")));
    }
    Ok(out)
}

/// Moments of the centered quadratic form `z'z` with `z = M (W - E[W])`.
#[derive(Debug, Clone)]
pub struct QuadraticMomentData {
    /// `M`, q × L.
    pub map: DMatrix<f64>,
    /// `M E[W]`; the caller folds this into the deterministic part z̄.
    pub mean_offset: DVector<f64>,
    /// `Var[z] = M diag(σ²) M'`.
    pub var_z: DMatrix<f64>,
    /// `E[z'z] = tr Var[z]`.
    pub e_ztz: f64,
    /// `Var[z'z]`.
    pub var_ztz: f64,
    /// `Cov(z, z'z)`.
    pub cov_z_ztz: DVector<f64>,
    /// `M'M`.
    pub gram: DMatrix<f64>,
    /// Square root of `[[I, E z], [E z', E z'z]]` (E z = 0 after centering).
    pub exp_block_sqrt: DMatrix<f64>,
    /// Square root of `[[4 Var z, 2 Cov], [2 Cov', Var z'z]]`.
    pub var_block_sqrt: DMatrix<f64>,
}

impl QuadraticMomentData {
    pub fn dim(&self) -> usize {
        self.map.nrows()
    }

    /// `E‖z̄ + z‖²`.
    pub fn norm_sq_mean(&self, zbar: &DVector<f64>) -> f64 {
        zbar.norm_squared() + self.e_ztz
    }

    /// `Var‖z̄ + z‖² = 4 z̄'Var[z]z̄ + 4 z̄'Cov(z, z'z) + Var[z'z]`.
    pub fn norm_sq_variance(&self, zbar: &DVector<f64>) -> f64 {
        4.0 * (zbar.transpose() * &self.var_z * zbar)[(0, 0)]
            + 4.0 * zbar.dot(&self.cov_z_ztz)
            + self.var_ztz
    }

    pub fn norm_sq_std(&self, zbar: &DVector<f64>) -> f64 {
        self.norm_sq_variance(zbar).max(0.0).sqrt()
    }

    /// `‖exp_block_sqrt (z̄; 1)‖²`, equal to [`Self::norm_sq_mean`].
    pub fn exp_block_norm_sq(&self, zbar: &DVector<f64>) -> f64 {
        (&self.exp_block_sqrt * augment(zbar)).norm_squared()
    }

    /// `‖var_block_sqrt (z̄; 1)‖`, equal to [`Self::norm_sq_std`].
    pub fn var_block_norm(&self, zbar: &DVector<f64>) -> f64 {
        (&self.var_block_sqrt * augment(zbar)).norm()
    }
}

fn augment(z: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(z.len() + 1);
    out.rows_mut(0, z.len()).copy_from(z);
    out[z.len()] = 1.0;
    out
}

/// Moments of `z'z` for `z = M w`, `w` independent components centered at
/// their means.
pub fn quadratic_moments(map: &DMatrix<f64>, comps: &[ComponentMoments]) -> Result<QuadraticMomentData> {
    let q = map.nrows();
    let len = map.ncols();
    if comps.len() != len {
        return Err(Error::dims("quadratic moment components", len, comps.len()));
    }
    let var: Vec<f64> = comps.iter().map(|c| c.var).collect();
    let mean = DVector::from_iterator(len, comps.iter().map(|c| c.mean));

    let mut scaled = map.clone();
    for (p, v) in var.iter().enumerate() {
        scaled.column_mut(p).scale_mut(*v);
    }
    let var_z = &scaled * map.transpose();
    let e_ztz = var_z.trace();
    let gram = map.tr_mul(map);

    let mut var_ztz = 0.0;
    for p in 0..len {
        let app = gram[(p, p)];
        var_ztz += app * app * (comps[p].c4 - var[p] * var[p]);
        for r in 0..len {
            if r != p {
                let apr = gram[(p, r)];
                var_ztz += 2.0 * apr * apr * var[p] * var[r];
            }
        }
    }

    let cov_z_ztz = DVector::from_fn(q, |i, _| {
        (0..len)
            .map(|p| map[(i, p)] * gram[(p, p)] * comps[p].c3)
            .sum::<f64>()
    });

    let mut exp_block = DMatrix::identity(q + 1, q + 1);
    exp_block[(q, q)] = e_ztz;

    let mut var_block = DMatrix::zeros(q + 1, q + 1);
    var_block.view_mut((0, 0), (q, q)).copy_from(&(&var_z * 4.0));
    for i in 0..q {
        var_block[(i, q)] = 2.0 * cov_z_ztz[i];
        var_block[(q, i)] = 2.0 * cov_z_ztz[i];
    }
    var_block[(q, q)] = var_ztz;

    Ok(QuadraticMomentData {
        map: map.clone(),
        mean_offset: map * mean,
        var_z,
        e_ztz,
        var_ztz,
        cov_z_ztz,
        gram,
        exp_block_sqrt: psd_sqrt(&exp_block)?,
        var_block_sqrt: psd_sqrt(&var_block)?,
    })
}

/// Eigenvalues down to this (scaled) level are treated as round-off and clipped.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Symmetric square root of a positive semi-definite matrix.
pub fn psd_sqrt(sym: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !sym.is_square() {
        return Err(Error::dims("psd_sqrt columns", sym.nrows(), sym.ncols()));
    }
    let scale = sym.abs().max().max(1.0);
    if (sym - sym.transpose()).abs().max() > 1e-12 * scale {
        return Err(Error::param("matrix", "must be symmetric"));
    }
    let sym = (sym + sym.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -PSD_TOLERANCE * scale {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let root = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok((&root + root.transpose()) * 0.5)
}
