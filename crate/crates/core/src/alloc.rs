//! Weighted α-fair bandwidth allocation.
//!
//! For a state `n`, routes with `n_i > 0` receive the unique maximiser of
//!
//! ```text
//! G_n(Λ) = Σ κ_i n_i^α Λ_i^{1−α} / (1−α)     (α ≠ 1)
//!        = Σ κ_i n_i log Λ_i                  (α = 1)
//! ```
//!
//! subject to `AΛ ≤ C`. The solver works on the Lagrange dual: stationarity
//! gives `Λ_i(p) = n_i (κ_i / (p'A)_i)^{1/α}`, so only `p ≥ 0` is searched.
//! A short run of multiplicative price updates
//! `p_j ← p_j ((AΛ(p))_j / C_j)^τ` brings the prices into the right basin,
//! then a projected Newton method on the dual objective drives the KKT
//! residual below [`KKT_TOL`].

use nalgebra::DMatrix;

use crate::model::{ModelError, NetworkSpec};
use crate::optim::{self, NewtonOutcome, OrthantObjective};

pub const KKT_TOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 10_000;
const MULTIPLICATIVE_BLOCK: usize = 40;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AllocError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("dual iteration did not converge: KKT residual {residual:e} after {iterations} iterations")]
    SolverDiverged { residual: f64, iterations: usize },
}

impl AllocError {
    pub fn code(&self) -> &'static str {
        match self {
            AllocError::Model(e) => e.code(),
            AllocError::SolverDiverged { .. } => "SolverDiverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    /// Bandwidth per route.
    pub lambda: Vec<f64>,
    /// Resource prices (Lagrange multipliers). Not unique in general when the
    /// support columns of `A` are linearly dependent.
    pub p: Vec<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Utility `G_n(Λ)`. Routes with `n_i = 0` are ignored. Returns `-∞` when
/// `α ≥ 1` and some supported route has zero bandwidth.
pub fn utility(spec: &NetworkSpec, n: &[f64], lambda: &[f64]) -> Result<f64, ModelError> {
    spec.check_state(n)?;
    if lambda.len() != n.len() {
        return Err(ModelError::DimensionMismatch {
            what: "bandwidth",
            expected: n.len(),
            found: lambda.len(),
        });
    }
    let alpha = spec.alpha();
    let mut total = 0.0;
    for i in 0..n.len() {
        if n[i] <= 0.0 {
            continue;
        }
        let k = spec.kappa()[i];
        if lambda[i] <= 0.0 && alpha >= 1.0 {
            return Ok(f64::NEG_INFINITY);
        }
        total += if alpha == 1.0 {
            k * n[i] * lambda[i].ln()
        } else {
            k * n[i].powf(alpha) * lambda[i].powf(1.0 - alpha) / (1.0 - alpha)
        };
    }
    Ok(total)
}

/// Bandwidth implied by prices through the stationarity condition.
fn lambda_of_prices(spec: &NetworkSpec, n: &[f64], p: &[f64]) -> Vec<f64> {
    let a = spec.a();
    let inv_alpha = 1.0 / spec.alpha();
    (0..spec.routes())
        .map(|i| {
            if n[i] <= 0.0 {
                return 0.0;
            }
            let s: f64 = (0..spec.resources()).map(|j| p[j] * a[(j, i)]).sum();
            if s <= 0.0 {
                f64::INFINITY
            } else {
                n[i] * (spec.kappa()[i] / s).powf(inv_alpha)
            }
        })
        .collect()
}

/// Largest violation among primal feasibility, dual sign, complementary
/// slackness and (relative) stationarity on the support.
pub fn kkt_residual(spec: &NetworkSpec, n: &[f64], lambda: &[f64], p: &[f64]) -> f64 {
    let a = spec.a();
    let (jn, inn) = (spec.resources(), spec.routes());
    let mut res = 0.0_f64;
    for j in 0..jn {
        let used: f64 = (0..inn).map(|i| a[(j, i)] * lambda[i]).sum();
        let slack = spec.c()[j] - used;
        res = res.max(-slack);
        res = res.max(-p[j]);
        res = res.max((p[j] * slack).abs());
    }
    let target = lambda_of_prices(spec, n, p);
    for i in 0..inn {
        if n[i] <= 0.0 {
            res = res.max(lambda[i].abs());
        } else if !target[i].is_finite() || target[i] <= 0.0 {
            return f64::INFINITY;
        } else {
            res = res.max((lambda[i] / target[i] - 1.0).abs());
        }
        res = res.max(-lambda[i]);
    }
    if res.is_nan() {
        f64::INFINITY
    } else {
        res
    }
}

/// Dual objective restricted to the resources touched by the support.
struct Dual<'a> {
    spec: &'a NetworkSpec,
    n: &'a [f64],
    support: Vec<usize>,
    resources: Vec<usize>,
}

impl Dual<'_> {
    fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.spec.resources()];
        for (k, &j) in self.resources.iter().enumerate() {
            p[j] = x[k];
        }
        p
    }

    fn shadow(&self, x: &[f64]) -> Vec<f64> {
        let a = self.spec.a();
        self.support
            .iter()
            .map(|&i| self.resources.iter().zip(x).map(|(&j, &pj)| pj * a[(j, i)]).sum())
            .collect()
    }

    fn lambda_support(&self, s: &[f64]) -> Vec<f64> {
        let inv_alpha = 1.0 / self.spec.alpha();
        self.support
            .iter()
            .zip(s)
            .map(|(&i, &si)| self.n[i] * (self.spec.kappa()[i] / si).powf(inv_alpha))
            .collect()
    }
}

impl OrthantObjective for Dual<'_> {
    fn dim(&self) -> usize {
        self.resources.len()
    }

    fn value(&self, x: &[f64]) -> Option<f64> {
        let s = self.shadow(x);
        if s.iter().any(|&v| !(v > 0.0)) {
            return None;
        }
        let alpha = self.spec.alpha();
        let mut v: f64 = self.resources.iter().zip(x).map(|(&j, &pj)| pj * self.spec.c()[j]).sum();
        for (&i, &si) in self.support.iter().zip(&s) {
            let k = self.spec.kappa()[i];
            let ni = self.n[i];
            v += if alpha == 1.0 {
                -k * ni * si.ln()
            } else {
                ni * k.powf(1.0 / alpha) * si.powf((alpha - 1.0) / alpha) * alpha / (1.0 - alpha)
            };
        }
        Some(v)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let s = self.shadow(x);
        let lam = self.lambda_support(&s);
        let a = self.spec.a();
        self.resources
            .iter()
            .map(|&j| {
                let used: f64 =
                    self.support.iter().zip(&lam).map(|(&i, &l)| a[(j, i)] * l).sum();
                self.spec.c()[j] - used
            })
            .collect()
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let s = self.shadow(x);
        let lam = self.lambda_support(&s);
        let a = self.spec.a();
        let alpha = self.spec.alpha();
        let weights: Vec<f64> = lam.iter().zip(&s).map(|(l, si)| l / (alpha * si)).collect();
        let m = self.resources.len();
        DMatrix::from_fn(m, m, |r, c| {
            let (jr, jc) = (self.resources[r], self.resources[c]);
            self.support
                .iter()
                .zip(&weights)
                .map(|(&i, &w)| a[(jr, i)] * w * a[(jc, i)])
                .sum()
        })
    }
}

/// Solves the allocation problem for state `n`.
pub fn allocate(spec: &NetworkSpec, n: &[f64]) -> Result<AllocationResult, AllocError> {
    allocate_warm(spec, n, None)
}

/// As [`allocate`], optionally starting from prices `p0` (for example the
/// prices of a nearby state).
pub fn allocate_warm(
    spec: &NetworkSpec,
    n: &[f64],
    p0: Option<&[f64]>,
) -> Result<AllocationResult, AllocError> {
    spec.check_state(n)?;
    let (jn, inn) = (spec.resources(), spec.routes());
    let a = spec.a();
    let support: Vec<usize> = (0..inn).filter(|&i| n[i] > 0.0).collect();
    if support.is_empty() {
        return Ok(AllocationResult {
            lambda: vec![0.0; inn],
            p: vec![0.0; jn],
            kkt_residual: 0.0,
            iterations: 0,
        });
    }
    let resources: Vec<usize> =
        (0..jn).filter(|&j| support.iter().any(|&i| a[(j, i)] > 0.0)).collect();
    let dual = Dual { spec, n, support, resources };
    let residual_of = |x: &[f64]| {
        let p = dual.expand(x);
        let lam = lambda_of_prices(spec, n, &p);
        kkt_residual(spec, n, &lam, &p)
    };

    let mut iterations = 0;
    if let Some(p0) = p0 {
        let mut x: Vec<f64> = dual.resources.iter().map(|&j| p0[j].max(0.0)).collect();
        if dual.value(&x).is_some() {
            let out = optim::projected_newton(&dual, &mut x, 100, |x| residual_of(x) < KKT_TOL);
            if let NewtonOutcome::Converged { iterations: it } = out {
                return Ok(finish(spec, n, &dual.expand(&x), it));
            }
        }
    }

    // Dimensional starting guess p_j = Σ_i A_ji κ_i n_i^α / C_j.
    let alpha = spec.alpha();
    let mut x: Vec<f64> = dual
        .resources
        .iter()
        .map(|&j| {
            let s: f64 = dual
                .support
                .iter()
                .map(|&i| a[(j, i)] * spec.kappa()[i] * n[i].powf(alpha))
                .sum();
            s / spec.c()[j]
        })
        .collect();
    let mut tau = 0.5;
    let mut last_residual = residual_of(&x);
    while iterations < MAX_ITERATIONS {
        for _ in 0..MULTIPLICATIVE_BLOCK {
            if last_residual < KKT_TOL {
                return Ok(finish(spec, n, &dual.expand(&x), iterations));
            }
            let g = dual.gradient(&x);
            let trial: Vec<f64> = dual
                .resources
                .iter()
                .zip(&x)
                .zip(&g)
                .map(|((&j, &pj), &gj)| {
                    let c = spec.c()[j];
                    pj * ((c - gj) / c).powf(tau)
                })
                .collect();
            iterations += 1;
            let r = residual_of(&trial);
            if r > last_residual && tau > 1e-3 {
                tau *= 0.5;
            }
            if trial.iter().all(|v| v.is_finite() && *v > 0.0) {
                x = trial;
                last_residual = r;
            }
        }
        let mut xn = x.clone();
        let budget = (MAX_ITERATIONS - iterations.min(MAX_ITERATIONS)).min(200);
        let out = optim::projected_newton(&dual, &mut xn, budget, |x| residual_of(x) < KKT_TOL);
        match out {
            NewtonOutcome::Converged { iterations: it } => {
                return Ok(finish(spec, n, &dual.expand(&xn), iterations + it));
            }
            NewtonOutcome::Stalled { iterations: it } => iterations += it.max(1),
            NewtonOutcome::IterationCap => iterations += budget.max(1),
        }
        let rn = residual_of(&xn);
        if rn < last_residual && xn.iter().all(|v| *v > 0.0) {
            x = xn;
            last_residual = rn;
        }
    }
    Err(AllocError::SolverDiverged { residual: last_residual, iterations })
}

fn finish(spec: &NetworkSpec, n: &[f64], p: &[f64], iterations: usize) -> AllocationResult {
    let lambda = lambda_of_prices(spec, n, p);
    let kkt_residual = kkt_residual(spec, n, &lambda, p);
    AllocationResult { lambda, p: p.to_vec(), kkt_residual, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(alpha: f64) -> NetworkSpec {
        NetworkSpec::new(
            vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]],
            vec![1.0, 1.0],
            vec![1.0; 3],
            vec![1.0; 3],
            vec![1.0; 3],
            alpha,
        )
        .unwrap()
    }

    #[test]
    fn proportional_fair_linear_network() {
        let r = allocate(&linear(1.0), &[1.0, 1.0, 1.0]).unwrap();
        let want = [2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0];
        for (l, w) in r.lambda.iter().zip(want) {
            assert!((l - w).abs() < 1e-10, "{:?}", r.lambda);
        }
        assert!((r.p[0] - 1.5).abs() < 1e-9 && (r.p[1] - 1.5).abs() < 1e-9);
        assert!(r.kkt_residual < KKT_TOL);
    }

    #[test]
    fn single_active_route_takes_capacity() {
        let r = allocate(&linear(1.0), &[5.0, 0.0, 0.0]).unwrap();
        assert!((r.lambda[0] - 1.0).abs() < 1e-10);
        assert_eq!(r.lambda[1], 0.0);
        assert_eq!(r.lambda[2], 0.0);
        assert_eq!(r.p[1], 0.0);
    }

    #[test]
    fn zero_state() {
        let r = allocate(&linear(2.0), &[0.0; 3]).unwrap();
        assert_eq!(r.lambda, vec![0.0; 3]);
        assert_eq!(r.p, vec![0.0; 2]);
    }

    #[test]
    fn degenerate_duals_still_converge() {
        // Only the two-resource route is active: p_1 + p_2 is pinned, the split is not.
        let r = allocate(&linear(1.0), &[0.0, 0.0, 3.0]).unwrap();
        assert!((r.lambda[2] - 1.0).abs() < 1e-10);
        assert!(r.kkt_residual < KKT_TOL);
    }

    #[test]
    fn utility_examples() {
        let s = linear(1.0);
        let u = utility(&s, &[1.0; 3], &[2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0]).unwrap();
        assert!((u - (2.0 * (2.0f64 / 3.0).ln() + (1.0f64 / 3.0).ln())).abs() < 1e-14);
        assert!((u + 1.90954).abs() < 1e-5);
        assert_eq!(utility(&s, &[1.0; 3], &[0.5, 0.0, 0.5]).unwrap(), f64::NEG_INFINITY);
        let single = NetworkSpec::new(vec![vec![1.0]], vec![1.0], vec![1.0], vec![1.0], vec![1.0], 2.0)
            .unwrap();
        assert_eq!(utility(&single, &[1.0], &[1.0]).unwrap(), -1.0);
    }

    #[test]
    fn kkt_residual_examples() {
        let s = linear(1.0);
        let n = [1.0; 3];
        let lam = [2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0];
        assert!(kkt_residual(&s, &n, &lam, &[1.5, 1.5]) < 1e-12);
        // Perturbed price on a tight resource breaks stationarity.
        assert!(kkt_residual(&s, &n, &lam, &[1.6, 1.5]) > 0.05);
        // Scaled bandwidth violates capacity by 0.5.
        let big: Vec<f64> = lam.iter().map(|l| 1.5 * l).collect();
        assert!(kkt_residual(&s, &n, &big, &[1.5, 1.5]) >= 0.5 - 1e-12);
    }

    #[test]
    fn warm_start_agrees_with_cold_start() {
        let s = linear(0.5);
        let a = allocate(&s, &[1.0, 2.0, 0.5]).unwrap();
        let b = allocate_warm(&s, &[1.1, 2.0, 0.5], Some(&a.p)).unwrap();
        let c = allocate(&s, &[1.1, 2.0, 0.5]).unwrap();
        for (x, y) in b.lambda.iter().zip(&c.lambda) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
