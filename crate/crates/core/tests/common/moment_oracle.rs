//! Sampling estimates of `E[z'z]`, `Var[z'z]` and `Cov(z, z'z)` with their
//! standard errors, for `z = M (w - E w)`.

use ccplan::dynamics::discretize_cwh;
use ccplan::moments::{centered_moments, difference_moments, quadratic_moments, QuadraticMomentData};
use ccplan::{ComponentMoments, ConcatenatedDynamics, CwhParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// How the test draws one scalar component.
#[derive(Debug, Clone, Copy)]
pub enum Draw {
    /// Inverse-CDF exponential.
    Exp(f64),
    Gauss(f64, f64),
    /// Uniform on `[lo, hi)`.
    Uniform(f64, f64),
    /// Difference of two independent draws.
    Diff(&'static Draw, &'static Draw),
}

impl Draw {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Draw::Exp(rate) => -(1.0 - rng.random::<f64>()).ln() / rate,
            Draw::Gauss(mean, var) => Normal::new(mean, var.sqrt()).unwrap().sample(rng),
            Draw::Uniform(lo, hi) => rng.random_range(lo..hi),
            Draw::Diff(a, b) => a.sample(rng) - b.sample(rng),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Draw::Exp(rate) => 1.0 / rate,
            Draw::Gauss(mean, _) => mean,
            Draw::Uniform(lo, hi) => 0.5 * (lo + hi),
            Draw::Diff(a, b) => a.mean() - b.mean(),
        }
    }
}

pub struct Case {
    pub name: &'static str,
    pub map: DMatrix<f64>,
    /// Library-side description of each column's component.
    pub comps: Vec<ComponentMoments>,
    /// Test-side sampler for each column.
    pub draws: Vec<Draw>,
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn z_score(&self, exact: f64) -> f64 {
        if self.se == 0.0 {
            if (exact - self.value).abs() <= 1e-15 * (1.0 + exact.abs()) {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (exact - self.value).abs() / self.se
        }
    }
}

pub struct Report {
    pub e_ztz: Estimate,
    pub var_ztz: Estimate,
    pub cov: Vec<Estimate>,
}

pub fn estimate(case: &Case, samples: usize, seed: u64) -> Report {
    let q = case.map.nrows();
    let len = case.map.ncols();
    let means: Vec<f64> = case.draws.iter().map(Draw::mean).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut zs = vec![0.0; samples * q];
    let mut qs = vec![0.0; samples];
    let mut w = vec![0.0; len];
    for s in 0..samples {
        for (p, d) in case.draws.iter().enumerate() {
            w[p] = d.sample(&mut rng) - means[p];
        }
        let mut norm = 0.0;
        for i in 0..q {
            let mut zi = 0.0;
            for p in 0..len {
                zi += case.map[(i, p)] * w[p];
            }
            zs[s * q + i] = zi;
            norm += zi * zi;
        }
        qs[s] = norm;
    }
    let n = samples as f64;
    let q_mean = qs.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in &qs {
        let d = v - q_mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m4 /= n;
    let var = m2 * n / (n - 1.0);
    let e_ztz = Estimate {
        value: q_mean,
        se: (var / n).sqrt(),
    };
    let var_ztz = Estimate {
        value: var,
        se: ((m4 - m2 * m2) / n).max(0.0).sqrt(),
    };
    let cov = (0..q)
        .map(|i| {
            let zi_mean = (0..samples).map(|s| zs[s * q + i]).sum::<f64>() / n;
            let products: Vec<f64> = (0..samples)
                .map(|s| (zs[s * q + i] - zi_mean) * (qs[s] - q_mean))
                .collect();
            let mean = products.iter().sum::<f64>() / n;
            let spread = products.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (n - 1.0);
            Estimate {
                value: mean,
                se: (spread / n).sqrt(),
            }
        })
        .collect();
    Report {
        e_ztz,
        var_ztz,
        cov,
    }
}

/// Largest standard-error distance between the library's moments and the
/// sampled estimate.
pub fn worst_z_score(data: &QuadraticMomentData, report: &Report) -> f64 {
    let mut worst = report
        .e_ztz
        .z_score(data.e_ztz)
        .max(report.var_ztz.z_score(data.var_ztz));
    for (i, c) in report.cov.iter().enumerate() {
        worst = worst.max(c.z_score(data.cov_z_ztz[i]));
    }
    worst
}

/// Position-selecting map `S D(k)` of the planar CWH model at GEO over a
/// short horizon.
pub fn cwh_position_map(horizon: usize, k: usize) -> DMatrix<f64> {
    let sys = discretize_cwh(&CwhParams::geostationary(1.0), 60.0).unwrap();
    let cd = ConcatenatedDynamics::build(&sys, horizon).unwrap();
    let mut s = DMatrix::zeros(2, 4);
    s[(0, 0)] = 1.0;
    s[(1, 1)] = 1.0;
    s * cd.noise_map(k)
}

static EXP_POS: Draw = Draw::Exp(20.0);
static EXP_VEL: Draw = Draw::Exp(1e4);

fn per_step<T: Clone>(horizon: usize, step: &[T]) -> Vec<T> {
    (0..horizon).flat_map(|_| step.iter().cloned()).collect()
}

/// Five disturbance models: two exponential, two Gaussian, one given only by
/// explicit moments.
pub fn standard_cases() -> Vec<Case> {
    let horizon = 3;
    let map = cwh_position_map(horizon, horizon);
    let exp = |r: f64| ComponentMoments::exponential(r).unwrap();
    let gauss = |m: f64, v: f64| ComponentMoments::gaussian(m, v).unwrap();

    let diff_comps = [exp(20.0), exp(20.0), exp(1e4), exp(1e4)]
        .map(|c| difference_moments(&c, &c));
    let asym_rates = [1.0, 2.0, 5.0, 0.5];
    let uniform_raw = [0.5, 1.0 / 3.0, 0.25, 0.2];

    vec![
        Case {
            name: "exponential pair difference",
            map: map.clone(),
            comps: per_step(horizon, &diff_comps),
            draws: per_step(
                horizon,
                &[
                    Draw::Diff(&EXP_POS, &EXP_POS),
                    Draw::Diff(&EXP_POS, &EXP_POS),
                    Draw::Diff(&EXP_VEL, &EXP_VEL),
                    Draw::Diff(&EXP_VEL, &EXP_VEL),
                ],
            ),
        },
        Case {
            name: "exponential single vehicle",
            map: map.clone() * 1e-2,
            comps: per_step(horizon, &asym_rates.map(exp)),
            draws: per_step(horizon, &asym_rates.map(Draw::Exp)),
        },
        Case {
            name: "gaussian diagonal",
            map: map.clone(),
            comps: per_step(
                horizon,
                &[gauss(0.0, 1e-3), gauss(0.0, 1e-3), gauss(0.0, 1e-8), gauss(0.0, 1e-8)],
            ),
            draws: per_step(
                horizon,
                &[
                    Draw::Gauss(0.0, 1e-3),
                    Draw::Gauss(0.0, 1e-3),
                    Draw::Gauss(0.0, 1e-8),
                    Draw::Gauss(0.0, 1e-8),
                ],
            ),
        },
        Case {
            name: "gaussian with mean",
            map: DMatrix::from_row_slice(2, 3, &[1.0, 0.5, -2.0, 0.0, 1.5, 1.0]),
            comps: vec![gauss(0.3, 0.5), gauss(-0.2, 2.0), gauss(1.0, 0.1)],
            draws: vec![Draw::Gauss(0.3, 0.5), Draw::Gauss(-0.2, 2.0), Draw::Gauss(1.0, 0.1)],
        },
        Case {
            name: "explicit uniform moments",
            map: DMatrix::from_row_slice(2, 4, &[1.0, -1.0, 0.5, 0.0, 0.25, 2.0, 0.0, 1.0]),
            comps: vec![centered_moments(uniform_raw).unwrap(); 4],
            draws: vec![Draw::Uniform(0.0, 1.0); 4],
        },
    ]
}

/// `12 a' V² a + 8 tr((A V)²)` with `A = M'M`, `a = diag(A)` and `V` the
/// per-vehicle variance of each component.
pub fn exponential_closed_form(map: &DMatrix<f64>, per_vehicle_var: &[f64]) -> f64 {
    let gram = map.tr_mul(map);
    let v = DMatrix::from_diagonal(&DVector::from_column_slice(per_vehicle_var));
    let a = gram.diagonal();
    let va = &v * &a;
    let av = &gram * &v;
    12.0 * va.norm_squared() + 8.0 * (&av * &av).trace()
}

/// Relative gap between the closed form and the general formula on the
/// exponential pair-difference case.
pub fn exponential_closed_form_gap() -> f64 {
    let horizon = 8;
    let map = cwh_position_map(horizon, horizon);
    let rates = per_step(horizon, &[20.0, 20.0, 1e4, 1e4]);
    let comps: Vec<ComponentMoments> = rates
        .iter()
        .map(|r| {
            let c = ComponentMoments::exponential(*r).unwrap();
            difference_moments(&c, &c)
        })
        .collect();
    let general = quadratic_moments(&map, &comps).unwrap().var_ztz;
    let var: Vec<f64> = rates.iter().map(|r| 1.0 / (r * r)).collect();
    let closed = exponential_closed_form(&map, &var);
    (general - closed).abs() / closed.abs()
}
