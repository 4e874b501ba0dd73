//! Closed-form law of the five-site simulation written out independently of
//! the library, used as the reference for estimator and oracle tests.

#![allow(dead_code)]

pub const CELLS: [(f64, f64); 4] = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)];

pub fn expit(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `P(S = s | L)` for sites 1..5, index `s - 1`.
pub fn site_probs(l1: f64, l2: f64) -> [f64; 5] {
    let w = [
        1.0,
        (0.01 + 0.45 * l1 + 0.3 * l2 + 0.5 * l1 * l2).exp(),
        (0.01 - 0.2 * l1 + 0.2 * l2 - l1 * l2).exp(),
        (0.01 + 0.45 * l1 + 0.1 * l2).exp(),
        (-0.25 + 0.55 * l1 - 0.25 * l2 - l1 * l2).exp(),
    ];
    let t: f64 = w.iter().sum();
    w.map(|v| v / t)
}

pub fn p_m(x: f64, l1: f64, l2: f64) -> f64 {
    expit(1.37 - 0.5 * x - 0.5 * l1 + x * l1 - 0.5 * l2)
}

pub fn p_y(x: f64, m: f64, l1: f64, l2: f64, s: u32) -> f64 {
    let shift = if s == 2 || s == 4 { 0.5 } else { 0.0 };
    let xm = if s == 1 || s == 3 { 0.65 } else { 0.0 };
    expit(-1.0 - x + shift + 0.75 * m + xm * x * m + 0.5 * l1 + 0.5 * m * l1 - 0.5 * l2 + x * l1)
}

/// `θ(x, j, k, p)` by summing the joint table of `(L, S)`. The mediator
/// law is shared by all sites, so `p` drops out.
pub fn theta(x: u8, j: u32, k: u32, _p: u32) -> f64 {
    let x = f64::from(x);
    let joint: Vec<f64> = CELLS.iter().map(|&(l1, l2)| 0.25 * site_probs(l1, l2)[j as usize - 1]).collect();
    let pj: f64 = joint.iter().sum();
    CELLS
        .iter()
        .zip(&joint)
        .map(|(&(l1, l2), w)| {
            let pm = p_m(x, l1, l2);
            let inner = pm * p_y(x, 1.0, l1, l2, k) + (1.0 - pm) * p_y(x, 0.0, l1, l2, k);
            w / pj * inner
        })
        .sum()
}

pub fn lambda(j: u32, k: u32, p: u32) -> f64 {
    theta(1, j, k, p).ln() - theta(0, j, k, p).ln()
}
