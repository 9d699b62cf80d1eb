//! Second, plain-arithmetic evaluation of every bound formula, compared
//! against the library over random valid hyperparameters.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use maopac::actor_critic::HyperParams;
use maopac::bounds::{
    recursive_critic_bound, theorem2_bounds, trajectory_bounds, BoundConstants, Theorem2Inputs,
};

struct Plain {
    b_m: f64,
    b_e: f64,
    b_mt: f64,
    big_omega: f64,
    i1: f64,
    i2: f64,
    i3: f64,
}

fn plain_constants(h: &HyperParams) -> Plain {
    let (g, l, z, b) = (h.gamma, h.lambda, h.zeta, h.b_eps);
    let b_m = l + (1.0 - l) / (1.0 - g / b);
    let b_e = b_m / (1.0 - l * g);
    let b_mt = (1.0 - (1.0 - z) * g / b) / (1.0 - g / b);
    let big_omega = 1.0 + h.beta0 * (1.0 + g) * b_e / b;
    Plain {
        b_m,
        b_e,
        b_mt,
        big_omega,
        i1: 1.0 / (big_omega / (g * l)).ln(),
        i2: 2.0 / (b * big_omega / g).ln(),
        i3: 2.0 / (b / g).ln(),
    }
}

fn beta(h: &HyperParams, i: usize) -> f64 {
    h.beta0 / (1.0 + i as f64).powf(h.beta_exponent)
}

fn plain_b_omega(h: &HyperParams, p: &Plain, n: usize, w0: f64, r: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..n {
        total += p.big_omega.powi((n - i) as i32) * beta(h, i) * r * p.b_e * w0 / h.b_eps;
    }
    total
}

fn plain_b_delta(h: &HyperParams, p: &Plain, n: usize, w0: f64, r: f64) -> f64 {
    r + (1.0 + h.gamma) * plain_b_omega(h, p, n, w0, r)
}

fn plain_phi(h: &HyperParams, p: &Plain, n: usize) -> f64 {
    4.0 * h.beta0 * (1.0 + h.gamma) * PI * PI * p.b_mt * (n as f64).powi(3)
}

#[allow(clippy::too_many_arguments)]
fn plain_finite_time(h: &HyperParams, n: usize, j: usize, eps: f64, m: f64, f: f64, w0: f64, r: f64) -> [f64; 5] {
    let p = plain_constants(h);
    let (g, l, b) = (h.gamma, h.lambda, h.b_eps);
    let phi = plain_phi(h, &p, n);
    let (nf, jf) = (n as f64, j as f64);
    let bd_n = plain_b_delta(h, &p, n, w0, r);
    let bd_j = plain_b_delta(h, &p, j, w0, r);
    let bw_j = plain_b_omega(h, &p, j, w0, r);
    let om = p.big_omega;
    let b1 = eps * b / (1.0 + g) / p.b_e / (phi * beta(h, j) * bw_j * om.powf(nf - jf));
    let b2 = eps / h.beta0 / p.i1
        / (2.0 * phi * m.abs() * bd_n * om.powf(nf - p.i1) * (g * l).powf(p.i1 - jf));
    let d1 = eps * b / p.b_e / (phi * beta(h, j) * bd_j * om.powf(nf - jf));
    let d2 = (b / g).powf(p.i2 - jf) * eps / (p.i2 * p.i2) / (1.0 - l) / h.beta0
        / (2.0 * phi * f * bd_n * om.powf(nf - p.i2));
    let d3 = (b / g).powf(p.i3 - jf) * 3.0 * eps * b / (p.i3 * p.i3) / h.zeta
        / (8.0 * beta(h, n) * PI * PI * bd_n * f);
    [b1, b2, d1, d2, d3]
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn random_hyper(rng: &mut ChaCha8Rng) -> HyperParams {
    let gamma = rng.random_range(0.05..0.6);
    HyperParams {
        gamma,
        lambda: rng.random_range(0.05..0.95),
        zeta: rng.random_range(0.05..0.95),
        b_eps: rng.random_range(gamma + 0.05..1.0),
        beta0: rng.random_range(0.01..0.5),
        beta_exponent: rng.random_range(0.51..1.0),
        ..HyperParams::default()
    }
}

#[test]
fn independent_evaluator_agrees_on_random_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let h = random_hyper(&mut rng);
        let n = rng.random_range(1..12);
        let j = rng.random_range(1..=n);
        let eps = rng.random_range(0.01..1.0);
        let m = rng.random_range(0.5..2.0);
        let f = rng.random_range(1.0..2.0);
        let w0 = rng.random_range(0.05..2.0);
        let r = rng.random_range(0.5..2.0);

        let c = BoundConstants::new(&h).unwrap();
        let p = plain_constants(&h);
        for (a, b) in [
            (c.b_m, p.b_m),
            (c.b_e, p.b_e),
            (c.b_m_theta, p.b_mt),
            (c.omega, p.big_omega),
            (c.i1, p.i1),
            (c.i2, p.i2),
            (c.i3, p.i3),
        ] {
            worst = worst.max(rel(a, b));
        }

        let t = trajectory_bounds(&h, n, w0, r).unwrap();
        worst = worst.max(rel(t.b_omega, plain_b_omega(&h, &p, n, w0, r)));
        worst = worst.max(rel(t.b_delta, plain_b_delta(&h, &p, n, w0, r)));
        worst = worst.max(rel(t.phi, plain_phi(&h, &p, n)));

        let lib = theorem2_bounds(
            &h,
            &Theorem2Inputs {
                n,
                j,
                eps,
                m_kj: m,
                f_kj: f,
                omega0_max_norm: w0,
                reward_bound: r,
            },
        )
        .unwrap()
        .values();
        let plain = plain_finite_time(&h, n, j, eps, m, f, w0, r);
        for (a, b) in lib.iter().zip(plain) {
            assert!(b.is_finite() && b > 0.0, "plain evaluation left f64 range: {b}");
            worst = worst.max(rel(*a, b));
        }

        let mut w = w0;
        for i in 0..n {
            w = p.big_omega * w + beta(&h, i) * r * p.b_e / h.b_eps;
        }
        worst = worst.max(rel(recursive_critic_bound(&h, n, w0, r).unwrap(), w));
    }
    assert!(worst < 1e-12, "max relative deviation {worst:e}");
}

#[test]
fn first_bound_vanishes_with_horizon_on_shipped_defaults() {
    let h = HyperParams::default();
    let c = BoundConstants::new(&h).unwrap();
    let ln_b1: Vec<f64> = [10, 100, 1000]
        .iter()
        .map(|&n| {
            theorem2_bounds(
                &h,
                &Theorem2Inputs {
                    n,
                    j: 1,
                    eps: 0.1,
                    m_kj: c.b_m,
                    f_kj: c.f_max,
                    omega0_max_norm: 0.4,
                    reward_bound: 1.0,
                },
            )
            .unwrap()
            .ln_b1
        })
        .collect();
    assert!(ln_b1[0] > ln_b1[1] && ln_b1[1] > ln_b1[2], "{ln_b1:?}");
}

#[test]
fn doubling_horizon_shrinks_every_bound() {
    let h = HyperParams::default();
    let c = BoundConstants::new(&h).unwrap();
    let logs: Vec<[f64; 5]> = [10, 20, 40]
        .iter()
        .map(|&n| {
            theorem2_bounds(
                &h,
                &Theorem2Inputs {
                    n,
                    j: 5,
                    eps: 0.1,
                    m_kj: c.b_m,
                    f_kj: c.f_max,
                    omega0_max_norm: 0.4,
                    reward_bound: 1.0,
                },
            )
            .unwrap()
            .logs()
        })
        .collect();
    for i in 0..5 {
        assert!(logs[0][i] > logs[1][i] && logs[1][i] > logs[2][i], "bound {i}: {logs:?}");
    }
}
