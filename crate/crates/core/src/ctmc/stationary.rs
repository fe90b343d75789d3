//! Stationary estimates from simulated paths, and the exact and approximate
//! stationary laws they are compared with.

use std::collections::HashMap;

use rand_distr::{Distribution, Exp};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{CtmcError, PathSample};
use crate::model::NetworkSpec;
use crate::rng::{self, SimRng};

pub const DEFAULT_BURN_IN: f64 = 0.2;
pub const DEFAULT_BATCHES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryEstimate {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Time-weighted marginal pmf of each route on `0..=max`.
    pub histogram: Vec<Vec<f64>>,
    pub correlation: Vec<Vec<f64>>,
    pub burn_in: f64,
    pub batches: usize,
    /// 95% batch-means half-widths of `mean`.
    pub half_width: Vec<f64>,
}

/// 95% Student-t half-width of the mean of batch means.
pub fn batch_half_width(batch_means: &[f64]) -> f64 {
    let b = batch_means.len();
    if b < 2 {
        return f64::INFINITY;
    }
    let m = batch_means.iter().sum::<f64>() / b as f64;
    let var = batch_means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (b - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (b - 1) as f64).expect("valid degrees of freedom").inverse_cdf(0.975);
    t * (var / b as f64).sqrt()
}

pub fn stationary_estimate(path: &PathSample) -> Result<StationaryEstimate, CtmcError> {
    stationary_estimate_with(path, DEFAULT_BURN_IN, DEFAULT_BATCHES)
}

/// Time averages over `[burn_in·T, T]` with `T` the simulated time.
pub fn stationary_estimate_with(
    path: &PathSample,
    burn_in: f64,
    batches: usize,
) -> Result<StationaryEstimate, CtmcError> {
    if !(0.0..1.0).contains(&burn_in) {
        return Err(CtmcError::InvalidParameters(format!("burn_in = {burn_in}")));
    }
    if batches < 2 {
        return Err(CtmcError::TooFewBatches { batches });
    }
    let end = path.simulated_until;
    let start = burn_in * end;
    let span = end - start;
    if !(span > 0.0) {
        return Err(CtmcError::TooFewBatches { batches: 0 });
    }
    let inn = path.routes();
    let width = span / batches as f64;
    let mut sum = vec![0.0; inn];
    let mut cross = vec![vec![0.0; inn]; inn];
    let mut hist: Vec<Vec<f64>> = vec![Vec::new(); inn];
    let mut batch_sum = vec![vec![0.0; inn]; batches];

    let first = path.index_at(start);
    let mut batch = 0;
    for k in first..path.len() {
        let lo = path.event_times[k].max(start);
        let hi = path.event_times.get(k + 1).copied().unwrap_or(end).min(end);
        if hi <= lo {
            continue;
        }
        let x: Vec<f64> = path.states[k].iter().map(|&v| v as f64).collect();
        let d = hi - lo;
        for i in 0..inn {
            sum[i] += x[i] * d;
            for m in 0..inn {
                cross[i][m] += x[i] * x[m] * d;
            }
            let h = &mut hist[i];
            let level = path.states[k][i] as usize;
            if h.len() <= level {
                h.resize(level + 1, 0.0);
            }
            h[level] += d;
        }
        // Split the holding interval across batch boundaries.
        let mut a = lo;
        while a < hi {
            let bound = if batch + 1 < batches { start + (batch + 1) as f64 * width } else { f64::INFINITY };
            if a >= bound {
                batch += 1;
                continue;
            }
            let b = bound.min(hi);
            for i in 0..inn {
                batch_sum[batch][i] += x[i] * (b - a);
            }
            a = b;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / span).collect();
    let cov: Vec<Vec<f64>> = (0..inn)
        .map(|i| (0..inn).map(|m| cross[i][m] / span - mean[i] * mean[m]).collect())
        .collect();
    let variance: Vec<f64> = (0..inn).map(|i| cov[i][i].max(0.0)).collect();
    let correlation = (0..inn)
        .map(|i| {
            (0..inn)
                .map(|m| {
                    if i == m {
                        1.0
                    } else if variance[i] > 0.0 && variance[m] > 0.0 {
                        cov[i][m] / (variance[i] * variance[m]).sqrt()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let histogram = hist
        .into_iter()
        .map(|h| {
            let total: f64 = h.iter().sum();
            h.into_iter().map(|v| v / total).collect()
        })
        .collect();
    let half_width = (0..inn)
        .map(|i| {
            let means: Vec<f64> = batch_sum.iter().map(|b| b[i] / width).collect();
            batch_half_width(&means)
        })
        .collect();
    Ok(StationaryEstimate { mean, variance, histogram, correlation, burn_in, batches, half_width })
}

/// Time-weighted joint pmf of the states visited after the burn-in.
pub fn empirical_joint_pmf(path: &PathSample, burn_in: f64) -> HashMap<Vec<u32>, f64> {
    let end = path.simulated_until;
    let start = burn_in * end;
    let mut out: HashMap<Vec<u32>, f64> = HashMap::new();
    for k in path.index_at(start)..path.len() {
        let lo = path.event_times[k].max(start);
        let hi = path.event_times.get(k + 1).copied().unwrap_or(end).min(end);
        if hi > lo {
            *out.entry(path.states[k].clone()).or_insert(0.0) += (hi - lo) / (end - start);
        }
    }
    out
}

/// Stationary law of the proportionally fair linear network with unit
/// capacities: route 0 crosses every resource, route `j ≥ 1` uses resource
/// `j` only.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLaw {
    pub rho0: f64,
    pub rho: Vec<f64>,
}

pub fn exact_linear_law(resources: usize, rho0: f64, rho: &[f64]) -> Result<LinearLaw, CtmcError> {
    if rho.len() != resources || resources == 0 {
        return Err(crate::model::ModelError::DimensionMismatch {
            what: "per-resource loads",
            expected: resources,
            found: rho.len(),
        }
        .into());
    }
    if !(rho0 >= 0.0) || rho.iter().any(|&v| !(v > 0.0)) {
        return Err(CtmcError::InvalidParameters("loads must be positive".into()));
    }
    for (j, &r) in rho.iter().enumerate() {
        if !(rho0 + r < 1.0) {
            return Err(CtmcError::StabilityViolated { route: j + 1, load: rho0 + r });
        }
    }
    Ok(LinearLaw { rho0, rho: rho.to_vec() })
}

/// Recognizes a linear network (one route across every resource, one local
/// route per resource, unit capacities, `α = 1`, unit weights) and returns
/// its law together with the spec route behind each law coordinate
/// (coordinate 0 is the long route).
pub fn linear_law_of(spec: &NetworkSpec) -> Result<(LinearLaw, Vec<usize>), CtmcError> {
    let (jn, inn) = (spec.resources(), spec.routes());
    let not_linear = |why: &str| CtmcError::InvalidParameters(format!("not a linear network: {why}"));
    if inn != jn + 1 {
        return Err(not_linear("needs one more route than resources"));
    }
    if spec.alpha() != 1.0 || spec.kappa().iter().any(|&k| k != 1.0) || spec.c().iter().any(|&c| c != 1.0) {
        return Err(not_linear("needs alpha = 1, unit weights and unit capacities"));
    }
    let a = spec.a();
    let long = (0..inn)
        .find(|&i| (0..jn).all(|j| a[(j, i)] == 1.0))
        .ok_or_else(|| not_linear("no route crosses every resource"))?;
    let mut order = vec![long];
    for j in 0..jn {
        let local = (0..inn)
            .find(|&i| i != long && (0..jn).all(|k| a[(k, i)] == if k == j { 1.0 } else { 0.0 }))
            .ok_or_else(|| not_linear("missing a local route"))?;
        order.push(local);
    }
    let rho = spec.rho();
    let law = exact_linear_law(jn, rho[long], &order[1..].iter().map(|&i| rho[i]).collect::<Vec<_>>())?;
    Ok((law, order))
}

impl LinearLaw {
    pub fn resources(&self) -> usize {
        self.rho.len()
    }

    /// Joint pmf at `(n_0, n_1, …, n_J)`.
    pub fn pmf(&self, n: &[u32]) -> f64 {
        assert_eq!(n.len(), self.rho.len() + 1, "state has J + 1 components");
        let jn = self.rho.len() as i32;
        let norm = self.rho.iter().map(|r| (1.0 - self.rho0 - r).ln()).sum::<f64>()
            - (jn - 1) as f64 * (1.0 - self.rho0).ln();
        let total: u64 = n.iter().map(|&v| v as u64).sum();
        let mut log = norm + ln_binomial(total, n[0] as u64);
        if n[0] > 0 {
            log += n[0] as f64 * self.rho0.ln();
        }
        for (k, &r) in self.rho.iter().enumerate() {
            log += n[k + 1] as f64 * r.ln();
        }
        log.exp()
    }

    /// Marginal pmf of route `i ≥ 1`: geometric with ratio `ρ_i/(1−ρ_0)`.
    pub fn marginal_pmf(&self, i: usize, k: u32) -> f64 {
        let ratio = self.rho[i - 1] / (1.0 - self.rho0);
        (1.0 - ratio) * ratio.powi(k as i32)
    }

    /// `E N_i = ρ_i / (1 − ρ_0 − ρ_i)` for `i ≥ 1`.
    pub fn marginal_mean(&self, i: usize) -> f64 {
        self.rho[i - 1] / (1.0 - self.rho0 - self.rho[i - 1])
    }

    /// `E N_0`. Given `m = Σ_{j≥1} N_j`, `N_0` is negative binomial with mean
    /// `(m + 1) ρ_0 / (1 − ρ_0)`.
    pub fn long_route_mean(&self) -> f64 {
        let locals: f64 = (1..=self.resources()).map(|j| self.marginal_mean(j)).sum();
        self.rho0 / (1.0 - self.rho0) * (1.0 + locals)
    }

    /// The network whose stationary law this is, with unit service rates.
    pub fn network(&self) -> NetworkSpec {
        let jn = self.rho.len();
        let a: Vec<Vec<f64>> = (0..jn)
            .map(|j| (0..=jn).map(|i| if i == 0 || i == j + 1 { 1.0 } else { 0.0 }).collect())
            .collect();
        let mut nu = vec![self.rho0];
        nu.extend(&self.rho);
        NetworkSpec::new(a, vec![1.0; jn], nu, vec![1.0; jn + 1], vec![1.0; jn + 1], 1.0)
            .expect("linear network is valid")
    }
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    statrs::function::factorial::ln_binomial(n, k)
}

/// Product-of-exponentials approximation `N ≈ diag(ρ) A' Q` with independent
/// `Q_j ~ Exp(C_j − (Aρ)_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryApprox {
    pub rho: Vec<f64>,
    /// Rate parameters `C_j − (Aρ)_j`.
    pub rates: Vec<f64>,
    pub mean: Vec<f64>,
    a: Vec<Vec<f64>>,
}

pub fn stationary_approx(spec: &NetworkSpec) -> Result<StationaryApprox, CtmcError> {
    let rho = spec.rho();
    let load = spec.load();
    let mut rates = Vec::with_capacity(spec.resources());
    for (j, (c, l)) in spec.c().iter().zip(&load).enumerate() {
        let slack = c - l;
        if !(slack > 0.0) {
            return Err(CtmcError::NotSubcritical { resource: j, slack });
        }
        rates.push(slack);
    }
    let a = spec.a();
    let mean = (0..spec.routes())
        .map(|i| rho[i] * (0..spec.resources()).map(|j| a[(j, i)] / rates[j]).sum::<f64>())
        .collect();
    let a_rows = crate::linalg::to_rows(a);
    Ok(StationaryApprox { rho, rates, mean, a: a_rows })
}

impl StationaryApprox {
    pub fn sample_with(&self, rng: &mut SimRng) -> Vec<f64> {
        let q: Vec<f64> = self.rates.iter().map(|&r| Exp::new(r).expect("positive rate").sample(rng)).collect();
        (0..self.rho.len())
            .map(|i| self.rho[i] * self.a.iter().zip(&q).map(|(row, qj)| row[i] * qj).sum::<f64>())
            .collect()
    }

    /// `count` independent draws from the approximation.
    pub fn sample(&self, seed: u64, count: usize) -> Vec<Vec<f64>> {
        let mut rng = rng::substream(seed, rng::STREAM_APPROX);
        (0..count).map(|_| self.sample_with(&mut rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(state: Vec<u32>) -> PathSample {
        PathSample {
            event_times: vec![0.0],
            states: vec![state],
            allocation_index: vec![0],
            allocation_table: vec![vec![0.0]],
            horizon: 10.0,
            simulated_until: 10.0,
            seed: 0,
            r: 1.0,
        }
    }

    #[test]
    fn constant_path_estimate() {
        let est = stationary_estimate(&constant(vec![3, 0])).unwrap();
        assert_eq!(est.mean, vec![3.0, 0.0]);
        assert_eq!(est.variance, vec![0.0, 0.0]);
        assert!(est.half_width.iter().all(|&h| h < 1e-12));
        assert_eq!(est.histogram[0], vec![0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            stationary_estimate_with(&constant(vec![1]), 0.2, 1),
            Err(CtmcError::TooFewBatches { batches: 1 })
        ));
    }

    #[test]
    fn two_level_path() {
        let mut p = constant(vec![0]);
        p.event_times.push(5.0);
        p.states.push(vec![2]);
        p.allocation_index.push(0);
        let est = stationary_estimate_with(&p, 0.0, 2).unwrap();
        assert!((est.mean[0] - 1.0).abs() < 1e-12);
        assert!((est.variance[0] - 1.0).abs() < 1e-12);
        assert!((est.histogram[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let joint = empirical_joint_pmf(&p, 0.0);
        assert!((joint[&vec![2]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn linear_law_examples() {
        let law = exact_linear_law(2, 0.3, &[0.4, 0.4]).unwrap();
        assert!((law.marginal_mean(1) - 4.0 / 3.0).abs() < 1e-12);
        assert!((law.marginal_pmf(1, 0) - 0.3 / 0.7).abs() < 1e-12);
        let total: f64 = (0..=200).map(|k| law.marginal_pmf(1, k)).sum();
        assert!((total - 1.0).abs() < 1e-10);
        // Summing the joint law over n_0 recovers the product of marginals.
        let s: f64 = (0..400).map(|n0| law.pmf(&[n0, 2, 1])).sum();
        assert!((s - law.marginal_pmf(1, 2) * law.marginal_pmf(2, 1)).abs() < 1e-12);
        let free = exact_linear_law(2, 0.0, &[0.5, 0.25]).unwrap();
        assert!((free.marginal_mean(1) - 1.0).abs() < 1e-12);
        assert!((free.marginal_mean(2) - 1.0 / 3.0).abs() < 1e-12);
        assert!(matches!(exact_linear_law(2, 0.5, &[0.5, 0.1]), Err(CtmcError::StabilityViolated { route: 1, .. })));
    }

    #[test]
    fn approximation_examples() {
        let law = exact_linear_law(2, 0.3, &[0.4, 0.4]).unwrap();
        let approx = stationary_approx(&law.network()).unwrap();
        assert!((approx.mean[1] - 4.0 / 3.0).abs() < 1e-12);
        let roomy = law.network().with_capacity(vec![1e9, 1e9]).unwrap();
        assert!(stationary_approx(&roomy).unwrap().mean.iter().all(|&m| m < 1e-8));
        let critical = law.network().with_capacity(vec![0.7, 0.7]).unwrap();
        assert!(matches!(stationary_approx(&critical), Err(CtmcError::NotSubcritical { .. })));
        let draws = approx.sample(1, 20_000);
        let m: f64 = draws.iter().map(|d| d[1]).sum::<f64>() / draws.len() as f64;
        assert!((m - 4.0 / 3.0).abs() < 0.1);
    }

    #[test]
    fn half_width_of_spread_batches() {
        let hw = batch_half_width(&[1.0, 2.0, 3.0]);
        // t_{0.975,2} = 4.3027, sd = 1, b = 3.
        assert!((hw - 4.302_652_7 / 3f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn recognizes_linear_networks_in_any_route_order() {
        let spec = NetworkSpec::new(
            vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]],
            vec![1.0, 1.0],
            vec![0.2, 0.3, 0.1],
            vec![1.0, 1.0, 1.0],
            vec![1.0; 3],
            1.0,
        )
        .unwrap();
        let (law, order) = linear_law_of(&spec).unwrap();
        assert_eq!(order, vec![2, 0, 1]);
        assert!((law.rho0 - 0.1).abs() < 1e-15);
        assert_eq!(law.rho, vec![0.2, 0.3]);
        assert!(linear_law_of(&spec.with_alpha(2.0).unwrap()).is_err());
    }

    #[test]
    fn long_route_mean_matches_summed_pmf() {
        let law = exact_linear_law(2, 0.3, &[0.4, 0.2]).unwrap();
        let mut mean = 0.0;
        for a in 0..120u32 {
            for b in 0..120u32 {
                for c in 0..60u32 {
                    mean += a as f64 * law.pmf(&[a, b, c]);
                }
            }
        }
        assert!((mean - law.long_route_mean()).abs() < 1e-8, "{mean} vs {}", law.long_route_mean());
    }
}
