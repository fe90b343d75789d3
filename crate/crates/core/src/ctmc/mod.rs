//! Exact simulation of the flow-count Markov chain.
//!
//! In state `n` documents arrive on route `i` at rate `ν_i` and complete at
//! rate `μ_i Λ_i(n)`. Since `Λ` only changes at events the chain is simulated
//! event by event (Gillespie's direct method) with one allocation solve per
//! distinct state visited.

mod scaling;
mod stationary;

pub use scaling::{scale_path, ssc_statistic, ScaleMode, ScaledPath};
pub use stationary::{
    batch_half_width, empirical_joint_pmf, exact_linear_law, linear_law_of, stationary_approx, stationary_estimate,
    stationary_estimate_with, LinearLaw, StationaryApprox, StationaryEstimate, DEFAULT_BATCHES,
    DEFAULT_BURN_IN,
};

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::alloc::{self, AllocError};
use crate::fluid::FluidError;
use crate::model::{ModelError, NetworkSpec};
use crate::rng;

/// Default cap on the number of events stored in one path.
pub const DEFAULT_EVENT_BUDGET: usize = 20_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CtmcError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Fluid(#[from] FluidError),
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("path covers time {available} but {required} is needed")]
    HorizonTooShort { required: f64, available: f64 },
    #[error("only {batches} batches available, need at least 2")]
    TooFewBatches { batches: usize },
    #[error("rho_0 + rho_{route} = {load} is not below one")]
    StabilityViolated { route: usize, load: f64 },
    #[error("resource {resource} has slack {slack:e}; the approximation needs C - A rho > 0")]
    NotSubcritical { resource: usize, slack: f64 },
}

impl CtmcError {
    pub fn code(&self) -> &'static str {
        match self {
            CtmcError::Model(e) => e.code(),
            CtmcError::Alloc(e) => e.code(),
            CtmcError::Fluid(e) => e.code(),
            CtmcError::InvalidParameters(_) => "InvalidParameters",
            CtmcError::HorizonTooShort { .. } => "HorizonTooShort",
            CtmcError::TooFewBatches { .. } => "TooFewBatches",
            CtmcError::StabilityViolated { .. } => "StabilityViolated",
            CtmcError::NotSubcritical { .. } => "NotSubcritical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Maximum number of events; the path is cut short (and reports its
    /// coverage) when reached.
    pub max_events: usize,
    /// Scale parameter recorded in the path (1 for an unscaled system).
    pub r: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { max_events: DEFAULT_EVENT_BUDGET, r: 1.0 }
    }
}

/// A piecewise-constant path. Entry `k` holds the state entered at
/// `event_times[k]`; entry 0 is the initial state at time 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub event_times: Vec<f64>,
    pub states: Vec<Vec<u32>>,
    /// Index into `allocation_table` for each entry of `states`.
    pub allocation_index: Vec<u32>,
    /// Distinct allocations met along the path.
    pub allocation_table: Vec<Vec<f64>>,
    /// Requested horizon.
    pub horizon: f64,
    /// Time up to which the path is valid (`horizon` unless the event budget
    /// ran out).
    pub simulated_until: f64,
    pub seed: u64,
    pub r: f64,
}

impl PathSample {
    pub fn len(&self) -> usize {
        self.event_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.event_times.is_empty()
    }

    pub fn routes(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// Fraction of the requested horizon that was simulated.
    pub fn coverage(&self) -> f64 {
        if self.horizon > 0.0 {
            self.simulated_until / self.horizon
        } else {
            1.0
        }
    }

    pub fn allocation(&self, k: usize) -> &[f64] {
        &self.allocation_table[self.allocation_index[k] as usize]
    }

    /// Index of the state in force at time `t` (right-continuous).
    pub fn index_at(&self, t: f64) -> usize {
        self.event_times.partition_point(|&s| s <= t).saturating_sub(1)
    }

    pub fn state_at(&self, t: f64) -> &[u32] {
        &self.states[self.index_at(t)]
    }

    /// Cumulative bandwidth `T_i(t) = ∫_0^t Λ_i(N(s)) ds` at each event time.
    pub fn cumulative_t(&self) -> Vec<Vec<f64>> {
        let routes = self.routes();
        let mut acc = vec![0.0; routes];
        let mut out = Vec::with_capacity(self.len());
        for k in 0..self.len() {
            if k > 0 {
                let dt = self.event_times[k] - self.event_times[k - 1];
                for (a, l) in acc.iter_mut().zip(self.allocation(k - 1)) {
                    *a += l * dt;
                }
            }
            out.push(acc.clone());
        }
        out
    }

    /// Holding time of entry `k` within `[0, simulated_until]`.
    pub fn holding_time(&self, k: usize) -> f64 {
        let end = self.event_times.get(k + 1).copied().unwrap_or(self.simulated_until);
        end - self.event_times[k]
    }
}

pub fn simulate(spec: &NetworkSpec, n0: &[u32], horizon: f64, seed: u64) -> Result<PathSample, CtmcError> {
    simulate_with(spec, n0, horizon, seed, SimOptions::default())
}

pub fn simulate_with(
    spec: &NetworkSpec,
    n0: &[u32],
    horizon: f64,
    seed: u64,
    options: SimOptions,
) -> Result<PathSample, CtmcError> {
    let inn = spec.routes();
    if n0.len() != inn {
        return Err(ModelError::DimensionMismatch { what: "initial state", expected: inn, found: n0.len() }.into());
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(CtmcError::InvalidParameters(format!("horizon = {horizon}")));
    }
    if !(options.r > 0.0) || options.max_events == 0 {
        return Err(CtmcError::InvalidParameters(format!(
            "r = {}, max_events = {}",
            options.r, options.max_events
        )));
    }
    let mut holding = rng::substream(seed, rng::STREAM_HOLDING);
    let mut chooser = rng::substream(seed, rng::STREAM_EVENT);
    let nu = spec.nu();
    let mu = spec.mu();
    let arrival_total: f64 = nu.iter().sum();

    let mut cache: HashMap<Vec<u32>, u32> = HashMap::new();
    let mut table: Vec<Vec<f64>> = Vec::new();
    let mut prices: HashMap<u32, Vec<f64>> = HashMap::new();
    let mut last_prices: Option<Vec<f64>> = None;
    let mut lookup = |n: &[u32], table: &mut Vec<Vec<f64>>| -> Result<u32, CtmcError> {
        if let Some(&k) = cache.get(n) {
            last_prices = prices.get(&k).cloned().or(last_prices.take());
            return Ok(k);
        }
        let x: Vec<f64> = n.iter().map(|&v| v as f64).collect();
        let res = alloc::allocate_warm(spec, &x, last_prices.as_deref())?;
        let k = table.len() as u32;
        table.push(res.lambda);
        cache.insert(n.to_vec(), k);
        prices.insert(k, res.p.clone());
        last_prices = Some(res.p);
        Ok(k)
    };

    let mut n = n0.to_vec();
    let mut path = PathSample {
        event_times: vec![0.0],
        states: vec![n.clone()],
        allocation_index: vec![lookup(&n, &mut table)?],
        allocation_table: Vec::new(),
        horizon,
        simulated_until: horizon,
        seed,
        r: options.r,
    };
    let mut t = 0.0;
    loop {
        let lam = &table[*path.allocation_index.last().unwrap() as usize];
        let departures: Vec<f64> = (0..inn).map(|i| if n[i] > 0 { mu[i] * lam[i] } else { 0.0 }).collect();
        let total = arrival_total + departures.iter().sum::<f64>();
        let dt = Exp::new(total).expect("total rate is positive").sample(&mut holding);
        t += dt;
        if t > horizon {
            break;
        }
        if path.len() >= options.max_events {
            path.simulated_until = *path.event_times.last().unwrap();
            break;
        }
        let mut u = chooser.random::<f64>() * total;
        let mut event = None;
        for i in 0..inn {
            if u < nu[i] {
                event = Some((i, true));
                break;
            }
            u -= nu[i];
        }
        if event.is_none() {
            for i in 0..inn {
                if u < departures[i] {
                    event = Some((i, false));
                    break;
                }
                u -= departures[i];
            }
        }
        // Roundoff can leave u just above the last rate; fall back to the last positive one.
        let (i, arrival) = event.unwrap_or_else(|| match (0..inn).rev().find(|&i| departures[i] > 0.0) {
            Some(i) => (i, false),
            None => (inn - 1, true),
        });
        if arrival {
            n[i] += 1;
        } else {
            n[i] -= 1;
        }
        path.event_times.push(t);
        path.states.push(n.clone());
        let k = lookup(&n, &mut table)?;
        path.allocation_index.push(k);
    }
    path.allocation_table = table;
    Ok(path)
}

/// Runs independent replications in parallel, one per seed.
pub fn simulate_many(
    spec: &NetworkSpec,
    n0: &[u32],
    horizon: f64,
    seeds: &[u64],
    options: SimOptions,
) -> Vec<Result<PathSample, CtmcError>> {
    seeds.par_iter().map(|&s| simulate_with(spec, n0, horizon, s, options)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(super) fn mm1() -> NetworkSpec {
        NetworkSpec::new(vec![vec![1.0]], vec![1.0], vec![1.0], vec![2.0], vec![1.0], 1.0).unwrap()
    }

    #[test]
    fn single_step_transitions() {
        let spec = NetworkSpec::new(
            vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]],
            vec![1.0, 1.0],
            vec![0.3, 0.4, 0.4],
            vec![1.0; 3],
            vec![1.0; 3],
            1.0,
        )
        .unwrap();
        let path = simulate(&spec, &[0, 0, 0], 200.0, 3).unwrap();
        assert!(path.len() > 10);
        for k in 1..path.len() {
            assert!(path.event_times[k] > path.event_times[k - 1]);
            let moved: i64 = path.states[k]
                .iter()
                .zip(&path.states[k - 1])
                .map(|(a, b)| (*a as i64 - *b as i64).abs())
                .sum();
            assert_eq!(moved, 1);
        }
        let ct = path.cumulative_t();
        for k in 1..ct.len() {
            for i in 0..3 {
                assert!(ct[k][i] >= ct[k - 1][i]);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = simulate(&mm1(), &[0], 100.0, 11).unwrap();
        let b = simulate(&mm1(), &[0], 100.0, 11).unwrap();
        let c = simulate(&mm1(), &[0], 100.0, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.event_times, c.event_times);
    }

    #[test]
    fn tiny_horizon_stays_put() {
        let path = simulate(&mm1(), &[0], 1e-9, 5).unwrap();
        assert_eq!(path.len(), 1);
        assert_eq!(path.states[0], vec![0]);
        assert_eq!(path.state_at(1e-9), &[0]);
    }

    #[test]
    fn event_budget_reports_coverage() {
        let opts = SimOptions { max_events: 50, r: 1.0 };
        let path = simulate_with(&mm1(), &[0], 1e4, 1, opts).unwrap();
        assert_eq!(path.len(), 50);
        assert!(path.coverage() < 0.1);
    }

    #[test]
    fn parallel_replications_match_serial() {
        let runs = simulate_many(&mm1(), &[2], 50.0, &[1, 2, 3], SimOptions::default());
        for (seed, run) in [1u64, 2, 3].iter().zip(runs) {
            assert_eq!(run.unwrap(), simulate(&mm1(), &[2], 50.0, *seed).unwrap());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(simulate(&mm1(), &[0, 0], 1.0, 1), Err(CtmcError::Model(_))));
        assert!(matches!(simulate(&mm1(), &[0], 0.0, 1), Err(CtmcError::InvalidParameters(_))));
    }
}
