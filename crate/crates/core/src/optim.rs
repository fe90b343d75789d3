//! Projected Newton method for smooth convex objectives on the nonnegative
//! orthant (Bertsekas' two-metric projection). Used for the allocation dual
//! and for the lifting-map dual.

use nalgebra::DMatrix;

use crate::linalg;

pub(crate) trait OrthantObjective {
    fn dim(&self) -> usize;
    /// Objective value, or `None` outside the domain.
    fn value(&self, x: &[f64]) -> Option<f64>;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;
}

pub(crate) enum NewtonOutcome {
    Converged { iterations: usize },
    /// No descent step could be found (typically roundoff at the optimum).
    Stalled { iterations: usize },
    IterationCap,
}

/// Projected-gradient stationarity measure `‖x − [x − ∇f]⁺‖_∞`.
pub(crate) fn projected_gradient_norm(x: &[f64], g: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| (xi - (xi - gi).max(0.0)).abs())
        .fold(0.0, f64::max)
}

/// Minimises `f` over `x ≥ 0`, updating `x` in place. `done` is consulted at
/// the top of every iteration.
pub(crate) fn projected_newton<F: OrthantObjective>(
    f: &F,
    x: &mut Vec<f64>,
    max_iter: usize,
    mut done: impl FnMut(&[f64]) -> bool,
) -> NewtonOutcome {
    const EPS0: f64 = 1e-3;
    const SIGMA: f64 = 1e-4;
    let n = f.dim();
    for iter in 0..max_iter {
        if done(x) {
            return NewtonOutcome::Converged { iterations: iter };
        }
        let f0 = match f.value(x) {
            Some(v) => v,
            None => return NewtonOutcome::Stalled { iterations: iter },
        };
        let g = f.gradient(x);
        let pg = projected_gradient_norm(x, &g);
        let eps = EPS0.min(pg);
        let binding: Vec<bool> = (0..n).map(|j| x[j] <= eps && g[j] > 0.0).collect();
        let free: Vec<usize> = (0..n).filter(|&j| !binding[j]).collect();

        let h = f.hessian(x);
        let mut d = vec![0.0; n];
        if !free.is_empty() {
            let hff = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
            let rhs: Vec<f64> = free.iter().map(|&j| -g[j]).collect();
            match linalg::solve_spd_regularized(&hff, &rhs) {
                Some(step) => {
                    for (k, &j) in free.iter().enumerate() {
                        d[j] = step[k];
                    }
                }
                None => {
                    for &j in &free {
                        d[j] = -g[j] / h[(j, j)].max(1e-300);
                    }
                }
            }
        }
        for j in 0..n {
            if binding[j] {
                d[j] = -g[j] / h[(j, j)].max(1e-12);
            }
        }

        let mut beta = 1.0;
        let mut accepted = false;
        let mut trial = vec![0.0; n];
        for _ in 0..60 {
            for j in 0..n {
                trial[j] = (x[j] + beta * d[j]).max(0.0);
            }
            if let Some(v) = f.value(&trial) {
                let decrease: f64 = (0..n)
                    .map(|j| {
                        if binding[j] {
                            g[j] * (x[j] - trial[j])
                        } else {
                            -beta * g[j] * d[j]
                        }
                    })
                    .sum();
                if v <= f0 - SIGMA * decrease {
                    accepted = true;
                    break;
                }
            }
            beta *= 0.5;
        }
        if !accepted {
            return NewtonOutcome::Stalled { iterations: iter };
        }
        x.copy_from_slice(&trial);
    }
    if done(x) {
        NewtonOutcome::Converged { iterations: max_iter }
    } else {
        NewtonOutcome::IterationCap
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// ½ x'Qx − b'x with a bound-active optimum.
    struct Quad {
        q: DMatrix<f64>,
        b: Vec<f64>,
    }

    impl OrthantObjective for Quad {
        fn dim(&self) -> usize {
            self.b.len()
        }
        fn value(&self, x: &[f64]) -> Option<f64> {
            let qx = linalg::mat_vec(&self.q, x);
            Some(0.5 * linalg::dot(x, &qx) - linalg::dot(&self.b, x))
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            let qx = linalg::mat_vec(&self.q, x);
            qx.iter().zip(&self.b).map(|(a, b)| a - b).collect()
        }
        fn hessian(&self, _x: &[f64]) -> DMatrix<f64> {
            self.q.clone()
        }
    }

    #[test]
    fn finds_bound_constrained_minimum() {
        // Unconstrained minimiser (2, -1) is infeasible; constrained one is (1, 0).
        let f = Quad {
            q: linalg::from_rows(&[vec![1.0, 1.0], vec![1.0, 2.0]]),
            b: vec![1.0, 0.0],
        };
        let mut x = vec![1.0, 1.0];
        let out = projected_newton(&f, &mut x, 100, |x| {
            projected_gradient_norm(x, &f.gradient(x)) < 1e-13
        });
        assert!(matches!(out, NewtonOutcome::Converged { .. }));
        assert!((x[0] - 1.0).abs() < 1e-12 && x[1].abs() < 1e-12);
    }
}
