//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use voltgp_core::scenario::Scenario;
use voltgp_core::{DMatrix, DVector, Line, RadialNetwork};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).expect("shipped scenario loads")
}

/// Random tree on `n + 1` buses: each new bus attaches to a uniformly chosen
/// earlier bus. Line endpoints are randomly swapped so orientation handling
/// is exercised.
pub fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> RadialNetwork {
    let lines = (1..=n)
        .map(|to| {
            let from = rng.random_range(0..to);
            let x = rng.random_range(0.005..0.5);
            let r = x * rng.random_range(0.0..1.5);
            if rng.random_bool(0.3) {
                Line { from: to, to: from, r, x }
            } else {
                Line { from, to, r, x }
            }
        })
        .collect();
    RadialNetwork::new(n + 1, lines, 1.0).expect("generated tree is valid")
}

/// Reactance matrix by dense inversion of the incidence identity
/// `X = (M^T)^{-1} D_x M^{-1}`, with `M` built here from the line list.
pub fn reactance_by_inversion(net: &RadialNetwork) -> DMatrix<f64> {
    let n = net.n();
    let mut m = DMatrix::zeros(n, n);
    let mut dx = DMatrix::zeros(n, n);
    for (col, line) in net.lines().iter().enumerate() {
        // Column per line: +1 at the upstream bus, -1 downstream; root row dropped.
        let (up, down) = if net.parent(line.to) == Some(line.from) {
            (line.from, line.to)
        } else {
            (line.to, line.from)
        };
        if up > 0 {
            m[(up - 1, col)] = 1.0;
        }
        m[(down - 1, col)] = -1.0;
        dx[(col, col)] = line.x;
    }
    let minv = m.clone().try_inverse().expect("reduced incidence is invertible");
    minv.transpose() * dx * minv
}

/// Voltages from the LinDistFlow equations solved directly on the tree:
/// line flows are subtree sums of the injections, and voltages accumulate
/// `r P + x Q` drops from the root (with `v = v0 + ...` for generation).
pub fn lindistflow_bruteforce(net: &RadialNetwork, p: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
    let buses = net.buses();
    let mut flow_p = vec![0.0; buses];
    let mut flow_q = vec![0.0; buses];
    for &bus in net.bfs_order().iter().rev() {
        flow_p[bus] += p[bus - 1];
        flow_q[bus] += q[bus - 1];
        if let Some(parent) = net.parent(bus) {
            if parent > 0 {
                flow_p[parent] += flow_p[bus];
                flow_q[parent] += flow_q[bus];
            }
        }
    }
    let mut v = vec![net.v0(); buses];
    for &bus in net.bfs_order() {
        let parent = net.parent(bus).unwrap();
        let line = &net.lines()[net.parent_line(bus).unwrap()];
        v[bus] = v[parent] + line.r * flow_p[bus] + line.x * flow_q[bus];
    }
    DVector::from_iterator(net.n(), v[1..].iter().copied())
}

/// Exhaustive active-set solution of `min 1/2 q^T X q + w^T q` over a box:
/// every free/lower/upper pattern is solved as an equality-constrained QP and
/// kept only if it is feasible and satisfies the KKT sign conditions.
pub fn enumerate_box_qp(
    x: &DMatrix<f64>,
    w: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
) -> DVector<f64> {
    let n = w.len();
    let tol = 1e-11;
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut pattern = vec![0u8; n];
        let mut c = code;
        for slot in pattern.iter_mut() {
            *slot = (c % 3) as u8;
            c /= 3;
        }
        let mut q = DVector::zeros(n);
        let free: Vec<usize> = (0..n).filter(|&j| pattern[j] == 0).collect();
        for j in 0..n {
            match pattern[j] {
                1 => q[j] = lo[j],
                2 => q[j] = hi[j],
                _ => {}
            }
        }
        if !free.is_empty() {
            let xff = DMatrix::from_fn(free.len(), free.len(), |a, b| x[(free[a], free[b])]);
            let fixed_part = x * &q;
            let rhs = DVector::from_fn(free.len(), |a, _| -(w[free[a]] + fixed_part[free[a]]));
            let Some(sol) = xff.lu().solve(&rhs) else { continue };
            for (a, &j) in free.iter().enumerate() {
                q[j] = sol[a];
            }
        }
        let g = x * &q + w;
        let feasible = (0..n).all(|j| q[j] >= lo[j] - tol && q[j] <= hi[j] + tol);
        let kkt = (0..n).all(|j| match pattern[j] {
            1 => g[j] >= -tol,
            2 => g[j] <= tol,
            _ => true,
        });
        if feasible && kkt {
            let obj = 0.5 * q.dot(&(x * &q)) + w.dot(&q);
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, q));
            }
        }
    }
    best.expect("a KKT point always exists for a nonempty box").1
}

/// Linear interpolation of `ys` over nondecreasing `xs` at `at`.
pub fn interpolate(xs: &[f64], ys: &[f64], at: f64) -> f64 {
    match xs.partition_point(|&x| x < at) {
        i if i == xs.len() => *ys.last().unwrap(),
        0 => ys[0],
        i => {
            let (x0, x1) = (xs[i - 1], xs[i]);
            if x1 == x0 {
                ys[i]
            } else {
                ys[i - 1] + (ys[i] - ys[i - 1]) * (at - x0) / (x1 - x0)
            }
        }
    }
}

/// Relative area between two curves sampled against their own x-axes,
/// over the common range `[0, x_end]`: returns `(area between, area a, area b)`.
pub fn curve_areas(xa: &[f64], ya: &[f64], xb: &[f64], yb: &[f64], x_end: f64) -> (f64, f64, f64) {
    let samples = 4000;
    let h = x_end / samples as f64;
    let mut between = 0.0;
    let mut area_a = 0.0;
    let mut area_b = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for s in 0..=samples {
        let at = h * s as f64;
        let a = interpolate(xa, ya, at);
        let b = interpolate(xb, yb, at);
        if let Some((pa, pb)) = prev {
            area_a += 0.5 * h * (a + pa);
            area_b += 0.5 * h * (b + pb);
            between += 0.5 * h * ((a - b).abs() + (pa - pb).abs());
        }
        prev = Some((a, b));
    }
    (between, area_a, area_b)
}
