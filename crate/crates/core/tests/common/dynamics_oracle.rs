//! Independent checks of the discrete dynamics: fixed-step RK4 on the
//! continuous CWH equations and the one-step recursion.

use ccplan::{ConcatenatedDynamics, LtiSystem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Planar CWH right-hand side, state (x, y, vx, vy), optional constant force.
fn cwh_rhs(omega: f64, s: &[f64; 4], force: [f64; 2]) -> [f64; 4] {
    [
        s[2],
        s[3],
        3.0 * omega * omega * s[0] + 2.0 * omega * s[3] + force[0],
        -2.0 * omega * s[2] + force[1],
    ]
}

pub fn rk4(omega: f64, mut s: [f64; 4], force: [f64; 2], t: f64, steps: usize) -> [f64; 4] {
    let h = t / steps as f64;
    let add = |a: &[f64; 4], b: &[f64; 4], c: f64| -> [f64; 4] {
        [a[0] + c * b[0], a[1] + c * b[1], a[2] + c * b[2], a[3] + c * b[3]]
    };
    for _ in 0..steps {
        let k1 = cwh_rhs(omega, &s, force);
        let k2 = cwh_rhs(omega, &add(&s, &k1, h / 2.0), force);
        let k3 = cwh_rhs(omega, &add(&s, &k2, h / 2.0), force);
        let k4 = cwh_rhs(omega, &add(&s, &k3, h), force);
        for i in 0..4 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    s
}

pub fn rk4_transition(omega: f64, t: f64, steps: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(4, 4);
    for j in 0..4 {
        let mut e = [0.0; 4];
        e[j] = 1.0;
        let col = rk4(omega, e, [0.0; 2], t, steps);
        for i in 0..4 {
            a[(i, j)] = col[i];
        }
    }
    a
}

pub fn random_stable_system(rng: &mut ChaCha8Rng, n: usize, m: usize) -> LtiSystem {
    let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let radius = raw.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let a = raw * (0.95 / radius.max(1e-9));
    let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
    LtiSystem::new(a, b, 1.0).unwrap()
}

/// Largest gap between the stacked form and the step recursion over random
/// systems, inputs and disturbances, relative to the state size.
pub fn worst_recursion_gap(trials: usize, horizon: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = (4, 2);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let sys = random_stable_system(&mut rng, n, m);
        let cd = ConcatenatedDynamics::build(&sys, horizon).unwrap();
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
        let u = DVector::from_fn(horizon * m, |_, _| rng.random_range(-1.0..1.0));
        let w = DVector::from_fn(horizon * n, |_, _| rng.random_range(-0.1..0.1));
        let stacked = cd.mean_trajectory(&x0, &u, &w).unwrap();
        let mut x = x0.clone();
        for k in 0..horizon {
            x = sys.a() * &x + sys.b() * u.rows(k * m, m) + w.rows(k * n, n);
            worst = worst.max((&stacked[k] - &x).amax() / (1.0 + x.amax()));
        }
    }
    worst
}
