//! Fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use alphafair::alloc::utility;
use alphafair::rng::SimRng;
use alphafair::NetworkSpec;
use rand::Rng;

/// Two resources, a local route on each and one route across both.
pub fn linear_network(nu: f64, alpha: f64) -> NetworkSpec {
    NetworkSpec::new(
        vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]],
        vec![1.0, 1.0],
        vec![nu; 3],
        vec![1.0; 3],
        vec![1.0; 3],
        alpha,
    )
    .unwrap()
}

/// Three links meeting at a hub: one local route per link and one route per
/// pair of links.
pub fn star_network() -> NetworkSpec {
    NetworkSpec::new(
        vec![
            vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
            vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0],
        ],
        vec![1.0, 1.0, 1.0],
        vec![0.3, 0.4, 0.5, 0.2, 0.1, 0.25],
        vec![1.0, 2.0, 1.5, 1.0, 0.5, 1.0],
        vec![1.0; 6],
        1.0,
    )
    .unwrap()
}

/// Random zero-one network with `j` resources. Every resource gets a local
/// route so `A` has full row rank; extra routes cross random subsets.
pub fn random_network(rng: &mut SimRng, j: usize, extra: usize, alpha: f64, unit_weights: bool) -> NetworkSpec {
    let mut cols: Vec<Vec<f64>> = (0..j).map(|r| (0..j).map(|k| f64::from(u8::from(k == r))).collect()).collect();
    for _ in 0..extra {
        let mut col: Vec<f64> = (0..j).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
        if col.iter().all(|&x| x == 0.0) {
            col[rng.random_range(0..j)] = 1.0;
        }
        cols.push(col);
    }
    let i = cols.len();
    let a: Vec<Vec<f64>> = (0..j).map(|r| cols.iter().map(|c| c[r]).collect()).collect();
    let c: Vec<f64> = (0..j).map(|_| rng.random_range(0.5..2.0)).collect();
    let nu: Vec<f64> = (0..i).map(|_| rng.random_range(0.1..1.0)).collect();
    let mu: Vec<f64> = (0..i).map(|_| rng.random_range(0.5..2.0)).collect();
    let kappa: Vec<f64> = if unit_weights { vec![1.0; i] } else { (0..i).map(|_| rng.random_range(0.5..2.0)).collect() };
    NetworkSpec::new(a, c, nu, mu, kappa, alpha).unwrap()
}

/// Random network whose incidence has a random full-rank pattern rather than
/// guaranteed local routes.
pub fn random_full_rank_network(rng: &mut SimRng, j: usize, i: usize) -> NetworkSpec {
    loop {
        let a: Vec<Vec<f64>> =
            (0..j).map(|_| (0..i).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect()).collect();
        let nu: Vec<f64> = (0..i).map(|_| rng.random_range(0.1..1.0)).collect();
        let mu: Vec<f64> = (0..i).map(|_| rng.random_range(0.5..2.0)).collect();
        let c: Vec<f64> = (0..j).map(|_| rng.random_range(0.5..2.0)).collect();
        if let Ok(spec) = NetworkSpec::new(a, c, nu, mu, vec![1.0; i], 1.0) {
            return spec;
        }
    }
}

/// Best utility over a uniform grid of feasible bandwidth vectors with
/// `steps` cells per coordinate. Brute force, for `I ≤ 3`.
pub fn grid_best_utility(spec: &NetworkSpec, n: &[f64], steps: usize) -> f64 {
    let a = spec.a();
    let (jn, inn) = (spec.resources(), spec.routes());
    let upper: Vec<f64> = (0..inn)
        .map(|i| {
            (0..jn)
                .filter(|&j| a[(j, i)] > 0.0)
                .map(|j| spec.c()[j] / a[(j, i)])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut best = f64::NEG_INFINITY;
    let total = (steps + 1).pow(inn as u32);
    let mut lambda = vec![0.0; inn];
    for code in 0..total {
        let mut rest = code;
        for i in 0..inn {
            lambda[i] = if n[i] > 0.0 { upper[i] * (rest % (steps + 1)) as f64 / steps as f64 } else { 0.0 };
            rest /= steps + 1;
        }
        let feasible = (0..jn).all(|j| (0..inn).map(|i| a[(j, i)] * lambda[i]).sum::<f64>() <= spec.c()[j]);
        if feasible {
            best = best.max(utility(spec, n, &lambda).unwrap());
        }
    }
    best
}

/// Total variation distance between two pmfs on `0..`, padding with zeros.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let len = p.len().max(q.len());
    let at = |v: &[f64], k: usize| v.get(k).copied().unwrap_or(0.0);
    0.5 * (0..len).map(|k| (at(p, k) - at(q, k)).abs()).sum::<f64>()
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 0 {
        0.5 * (xs[m - 1] + xs[m])
    } else {
        xs[m]
    }
}
