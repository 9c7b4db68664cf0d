//! Hand-coded closed forms of the hyperelliptic model, used as independent
//! oracles, plus seeded samplers.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Product of all coordinates except those listed.
fn product_without(x: &[f64], skip: &[usize]) -> f64 {
    x.iter()
        .enumerate()
        .filter(|(i, _)| !skip.contains(i))
        .map(|(_, v)| v)
        .product()
}

/// Right-hand side of the hyperelliptic system, written from the hatted
/// products.
pub fn hyperelliptic_rhs(k: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = vec![product_without(x, &[0]), -product_without(x, &[1])];
    for (i, ki) in k.iter().enumerate() {
        out.push(-ki * ki * product_without(x, &[i + 2]));
    }
    out
}

/// `ε_3⋯ε_n √Π(2y_{i+2} − k_i² y1²)`.
pub fn nu_phi(k: &[f64], signs: &[i8], y: &[f64]) -> f64 {
    let sign: f64 = signs.iter().map(|s| f64::from(*s)).product();
    let prod: f64 = k
        .iter()
        .enumerate()
        .map(|(i, ki)| 2.0 * y[i + 2] - ki * ki * y[0] * y[0])
        .product();
    sign * prod.sqrt()
}

/// The pushed-forward field `ν_Φ(y2, −y1, 0, …, 0)`.
pub fn hyperdarb(k: &[f64], signs: &[i8], y: &[f64]) -> Vec<f64> {
    let nu = nu_phi(k, signs, y);
    let mut out = vec![0.0; y.len()];
    out[0] = nu * y[1];
    out[1] = -nu * y[0];
    out
}

pub fn chart_forward(k: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y = vec![x[0], x[1]];
    for (i, ki) in k.iter().enumerate() {
        y.push(0.5 * (ki * ki * x[0] * x[0] + x[i + 2] * x[i + 2]));
    }
    y
}

/// Perturbation part of the leaf-fixed perturbed system, transcribed term by
/// term. `p1`, `p2`, `r[i][j]` are evaluated at the chart point.
pub fn leaf_fixed_perturbation(
    k: &[f64],
    c: &[f64],
    x: &[f64],
    p1: &dyn Fn(&[f64]) -> f64,
    p2: &dyn Fn(&[f64]) -> f64,
    r: &dyn Fn(usize, usize, &[f64]) -> f64,
) -> Vec<f64> {
    let y = chart_forward(k, x);
    let (a, b) = (p1(&y), p2(&y));
    let mut out = vec![
        product_without(x, &[0, 1]) * a,
        product_without(x, &[0, 1]) * b,
    ];
    for (l, kl) in k.iter().enumerate() {
        let mut v = -kl * kl * x[0] * product_without(x, &[0, 1, l + 2]) * a;
        for (i, ki) in k.iter().enumerate() {
            v += (ki * ki * x[0] * x[0] + x[i + 2] * x[i + 2] - 2.0 * c[i]) / (2.0 * x[l + 2])
                * r(l, i, &y);
        }
        out.push(v);
    }
    out
}

pub fn random_k(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let m = rng.random_range(0.3..2.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// A point with `ε_i x_{i+2} ≥ 0.2`.
pub fn random_source_point(rng: &mut ChaCha8Rng, signs: &[i8]) -> Vec<f64> {
    let mut x = vec![rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
    for s in signs {
        x.push(f64::from(*s) * rng.random_range(0.2..1.5));
    }
    x
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn inf_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
