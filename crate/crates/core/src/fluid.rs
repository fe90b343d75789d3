//! Fluid model: the ODE `dn_i/dt = ν_i − μ_i Λ_i(n)`, the Lyapunov function
//! `F`, the lifting map `Δ` and the invariant manifold it parameterises.

use nalgebra::DMatrix;

use crate::alloc::{self, AllocError};
use crate::linalg;
use crate::model::{self, ModelError, NetworkSpec};
use crate::optim::{self, NewtonOutcome, OrthantObjective};

/// Tolerance on the lifting-map optimality conditions (relative to `|w|`).
pub const LIFT_TOL: f64 = 1e-9;
/// Cone-membership slack for the closed-form lift.
pub const CONE_TOL: f64 = 1e-9;
const LIFT_MAX_ITER: usize = 500;
const BISECTION_SWEEPS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FluidError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error("step h = {h} overshoots route {route} to {value:e} at t = {time}")]
    StepTooLarge { h: f64, route: usize, value: f64, time: f64 },
    #[error("invalid integration parameters: {0}")]
    InvalidParameters(String),
    #[error("lifting map did not converge (residual {residual:e})")]
    SolverDiverged { residual: f64 },
    #[error("workload is outside the proportional-fair cone (dual component {component} = {value:e})")]
    NotInCone { component: usize, value: f64 },
    #[error("closed-form lift needs alpha = 1, got {0}")]
    AlphaNotOne(f64),
    #[error("state is not invariant: |Λ(n) − ρ| = {gap:e} on the support")]
    NotInvariant { gap: f64 },
}

impl FluidError {
    pub fn code(&self) -> &'static str {
        match self {
            FluidError::Model(e) => e.code(),
            FluidError::Alloc(e) => e.code(),
            FluidError::StepTooLarge { .. } => "StepTooLarge",
            FluidError::InvalidParameters(_) => "InvalidParameters",
            FluidError::SolverDiverged { .. } => "SolverDiverged",
            FluidError::NotInCone { .. } => "NotInCone",
            FluidError::AlphaNotOne(_) => "AlphaNotOne",
            FluidError::NotInvariant { .. } => "NotInvariant",
        }
    }
}

/// `F(n) = (1/(α+1)) Σ ν_i κ_i μ_i^{α−1} (n_i/ν_i)^{α+1}`.
pub fn lyapunov_f(spec: &NetworkSpec, n: &[f64]) -> Result<f64, ModelError> {
    spec.check_state(n)?;
    Ok(lyapunov_unchecked(spec, n))
}

fn lyapunov_unchecked(spec: &NetworkSpec, n: &[f64]) -> f64 {
    let alpha = spec.alpha();
    let sum: f64 = (0..spec.routes())
        .map(|i| {
            let nu = spec.nu()[i];
            nu * spec.kappa()[i] * spec.mu()[i].powf(alpha - 1.0) * (n[i] / nu).powf(alpha + 1.0)
        })
        .sum();
    sum / (alpha + 1.0)
}

/// `n_i = ρ_i ((q'A)_i / κ_i)^{1/α}`.
fn state_of_dual(spec: &NetworkSpec, q: &[f64]) -> Vec<f64> {
    let a = spec.a();
    let rho = spec.rho();
    let inv_alpha = 1.0 / spec.alpha();
    (0..spec.routes())
        .map(|i| {
            let s: f64 = (0..spec.resources()).map(|j| q[j] * a[(j, i)]).sum();
            if s <= 0.0 {
                0.0
            } else {
                rho[i] * (s / spec.kappa()[i]).powf(inv_alpha)
            }
        })
        .collect()
}

/// The lifted state together with the dual vector certifying it.
#[derive(Debug, Clone, PartialEq)]
pub struct Lift {
    pub n: Vec<f64>,
    pub q: Vec<f64>,
}

/// Dual of the lifting problem: `min_{q ≥ 0} ψ(q) − w·q` where `∇ψ(q)` is
/// the workload of `n(q)`.
struct LiftDual<'a> {
    spec: &'a NetworkSpec,
    w: &'a [f64],
    coef: Vec<f64>,
}

impl<'a> LiftDual<'a> {
    fn new(spec: &'a NetworkSpec, w: &'a [f64]) -> Self {
        let alpha = spec.alpha();
        let coef = (0..spec.routes())
            .map(|i| spec.rho()[i] / spec.mu()[i] * spec.kappa()[i].powf(-1.0 / alpha))
            .collect();
        LiftDual { spec, w, coef }
    }

    fn shadow(&self, q: &[f64]) -> Vec<f64> {
        linalg::mat_t_vec(self.spec.a(), q)
    }
}

impl OrthantObjective for LiftDual<'_> {
    fn dim(&self) -> usize {
        self.spec.resources()
    }

    fn value(&self, q: &[f64]) -> Option<f64> {
        let p = 1.0 + 1.0 / self.spec.alpha();
        let s = self.shadow(q);
        let psi: f64 = s.iter().zip(&self.coef).map(|(si, c)| c * si.max(0.0).powf(p) / p).sum();
        Some(psi - linalg::dot(self.w, q))
    }

    fn gradient(&self, q: &[f64]) -> Vec<f64> {
        let n = state_of_dual(self.spec, q);
        let wl = model::workload_unchecked(self.spec, &n);
        wl.iter().zip(self.w).map(|(a, b)| a - b).collect()
    }

    fn hessian(&self, q: &[f64]) -> DMatrix<f64> {
        let alpha = self.spec.alpha();
        let s = self.shadow(q);
        let floor = 1e-12 * s.iter().fold(1e-300_f64, |m, v| m.max(*v));
        let d: Vec<f64> = s
            .iter()
            .zip(&self.coef)
            .map(|(si, c)| c / alpha * si.max(floor).powf(1.0 / alpha - 1.0))
            .collect();
        let a = self.spec.a();
        let m = self.spec.resources();
        DMatrix::from_fn(m, m, |r, c| (0..self.spec.routes()).map(|i| a[(r, i)] * d[i] * a[(c, i)]).sum())
    }
}

fn lift_residual(spec: &NetworkSpec, w: &[f64], q: &[f64]) -> f64 {
    let n = state_of_dual(spec, q);
    let wl = model::workload_unchecked(spec, &n);
    let qscale = linalg::max_abs(q).max(1.0);
    let mut res = 0.0_f64;
    for j in 0..w.len() {
        let gap = wl[j] - w[j];
        res = res.max(-gap);
        res = res.max((q[j] * gap).abs() / qscale);
        res = res.max(-q[j]);
    }
    res
}

/// Lifting map `Δ(w)`: the minimiser of `F` over states with workload at
/// least `w`, returned with its dual vector `q`.
pub fn lift_delta_with_dual(spec: &NetworkSpec, w: &[f64]) -> Result<Lift, FluidError> {
    let jn = spec.resources();
    if w.len() != jn {
        return Err(ModelError::DimensionMismatch { what: "workload", expected: jn, found: w.len() }.into());
    }
    if let Some(index) = w.iter().position(|v| !(*v >= 0.0)) {
        return Err(ModelError::NegativeState { index, value: w[index] }.into());
    }
    let scale = linalg::max_abs(w).max(1.0);
    if w.iter().all(|&v| v == 0.0) {
        return Ok(Lift { n: vec![0.0; spec.routes()], q: vec![0.0; jn] });
    }
    let dual = LiftDual::new(spec, w);

    // Uniform start q = t·1 sized so that the workload has the right magnitude.
    let unit = model::workload_unchecked(spec, &state_of_dual(spec, &vec![1.0; jn]));
    let t = (linalg::max_abs(w) / linalg::max_abs(&unit)).powf(spec.alpha());
    let mut q = vec![t; jn];
    let tol = 1e-13 * scale;
    let out = optim::projected_newton(&dual, &mut q, LIFT_MAX_ITER, |q| {
        optim::projected_gradient_norm(q, &dual.gradient(q)) < tol
    });
    if !matches!(out, NewtonOutcome::Converged { .. }) || lift_residual(spec, w, &q) > LIFT_TOL * scale {
        if jn <= 4 {
            q = coordinate_bisection(spec, w, q, scale);
        }
    }
    let residual = lift_residual(spec, w, &q);
    if residual > LIFT_TOL * scale {
        return Err(FluidError::SolverDiverged { residual });
    }
    Ok(Lift { n: state_of_dual(spec, &q), q })
}

/// Nonlinear Gauss–Seidel on the complementarity conditions, one bisection
/// per coordinate. Each coordinate map is monotone in its own variable.
fn coordinate_bisection(spec: &NetworkSpec, w: &[f64], mut q: Vec<f64>, scale: f64) -> Vec<f64> {
    let jn = w.len();
    let gap = |q: &[f64], j: usize| {
        let n = state_of_dual(spec, q);
        model::workload_unchecked(spec, &n)[j] - w[j]
    };
    for _ in 0..BISECTION_SWEEPS {
        let mut moved = 0.0_f64;
        for j in 0..jn {
            let old = q[j];
            q[j] = 0.0;
            if gap(&q, j) >= 0.0 {
                moved = moved.max(old);
                continue;
            }
            let mut hi = old.max(1e-12);
            q[j] = hi;
            while gap(&q, j) < 0.0 {
                hi *= 2.0;
                q[j] = hi;
            }
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                q[j] = mid;
                if gap(&q, j) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-16 * hi {
                    break;
                }
            }
            q[j] = hi;
            moved = moved.max((hi - old).abs());
        }
        if lift_residual(spec, w, &q) < 1e-2 * LIFT_TOL * scale && moved < 1e-15 * scale {
            break;
        }
    }
    q
}

pub fn lift_delta(spec: &NetworkSpec, w: &[f64]) -> Result<Vec<f64>, FluidError> {
    lift_delta_with_dual(spec, w).map(|l| l.n)
}

/// Gram matrix `ABA'` with `B = diag(ν_i / (μ_i² κ_i))`.
pub fn pf_gram(spec: &NetworkSpec) -> DMatrix<f64> {
    let a = spec.a();
    let b: Vec<f64> = (0..spec.routes())
        .map(|i| spec.nu()[i] / (spec.mu()[i] * spec.mu()[i] * spec.kappa()[i]))
        .collect();
    let jn = spec.resources();
    DMatrix::from_fn(jn, jn, |r, c| (0..spec.routes()).map(|i| a[(r, i)] * b[i] * a[(c, i)]).sum())
}

/// Closed-form lift for `α = 1` on the workload cone:
/// `Δ(w) = diag(ρ) diag(κ)⁻¹ A' (ABA')⁻¹ w`.
pub fn lift_delta_pf(spec: &NetworkSpec, w: &[f64]) -> Result<Vec<f64>, FluidError> {
    if spec.alpha() != 1.0 {
        return Err(FluidError::AlphaNotOne(spec.alpha()));
    }
    let jn = spec.resources();
    if w.len() != jn {
        return Err(ModelError::DimensionMismatch { what: "workload", expected: jn, found: w.len() }.into());
    }
    let g = pf_gram(spec);
    let q = linalg::solve_spd_regularized(&g, w)
        .ok_or(FluidError::SolverDiverged { residual: f64::INFINITY })?;
    let scale = linalg::max_abs(w).max(1.0);
    if let Some(component) = q.iter().position(|&v| v < -CONE_TOL * scale) {
        return Err(FluidError::NotInCone { component, value: q[component] });
    }
    let q: Vec<f64> = q.into_iter().map(|v| v.max(0.0)).collect();
    Ok(state_of_dual(spec, &q))
}

/// A point of the invariant manifold with its generating dual vector.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantState {
    pub n: Vec<f64>,
    pub q: Vec<f64>,
}

/// Builds `n_i = ρ_i ((q'A)_i/κ_i)^{1/α}` and checks `Λ(n)_i = ρ_i` on the
/// support (requires a critically loaded network).
pub fn invariant_from_q(spec: &NetworkSpec, q: &[f64]) -> Result<InvariantState, FluidError> {
    let jn = spec.resources();
    if q.len() != jn {
        return Err(ModelError::DimensionMismatch { what: "dual vector", expected: jn, found: q.len() }.into());
    }
    if let Some(index) = q.iter().position(|v| !(*v >= 0.0)) {
        return Err(ModelError::NegativeState { index, value: q[index] }.into());
    }
    let n = state_of_dual(spec, q);
    let alloc = alloc::allocate(spec, &n)?;
    let rho = spec.rho();
    let gap = (0..spec.routes())
        .filter(|&i| n[i] > 0.0)
        .map(|i| (alloc.lambda[i] - rho[i]).abs() / rho[i])
        .fold(0.0, f64::max);
    if gap > 1e-7 {
        return Err(FluidError::NotInvariant { gap });
    }
    Ok(InvariantState { n, q: q.to_vec() })
}

/// `|n − Δ(w(n))|`, zero exactly on the invariant manifold.
pub fn manifold_proxy(spec: &NetworkSpec, n: &[f64]) -> Result<f64, FluidError> {
    let w = model::workload(spec, n)?;
    let lifted = lift_delta(spec, &w)?;
    Ok(linalg::dist2(n, &lifted))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluidTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub f_values: Vec<f64>,
    pub manifold_proxy: Vec<f64>,
}

impl FluidTrajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one point")
    }
}

/// Default Euler step: `1e-3` of the shortest characteristic time `1/μ_i`.
pub fn default_step(spec: &NetworkSpec) -> f64 {
    1e-3 / spec.mu().iter().fold(0.0_f64, |m, v| m.max(*v))
}

/// Integrates the fluid model with clamped explicit Euler, recording every
/// step.
pub fn integrate_fluid(
    spec: &NetworkSpec,
    n0: &[f64],
    horizon: f64,
    h: f64,
) -> Result<FluidTrajectory, FluidError> {
    integrate_fluid_with(spec, n0, horizon, h, 1)
}

/// As [`integrate_fluid`], recording every `record_every`-th step (the final
/// step is always recorded).
///
/// Components at zero (below `1e-9 (1 + |n0|)`) keep zero derivative as long
/// as the free capacity left by the positive routes absorbs the zero routes'
/// nominal load on every resource they use. Otherwise the component leaves
/// zero with derivative `ν_i`, since it receives no bandwidth.
pub fn integrate_fluid_with(
    spec: &NetworkSpec,
    n0: &[f64],
    horizon: f64,
    h: f64,
    record_every: usize,
) -> Result<FluidTrajectory, FluidError> {
    spec.check_state(n0)?;
    if !(h > 0.0 && h.is_finite()) || !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(FluidError::InvalidParameters(format!("h = {h}, horizon = {horizon}")));
    }
    let record_every = record_every.max(1);
    let (inn, jn) = (spec.routes(), spec.resources());
    let a = spec.a();
    let rho = spec.rho();
    let threshold = 1e-9 * (1.0 + linalg::norm2(n0));
    let scale = linalg::max_abs(n0).max(linalg::max_abs(&rho));
    let steps = (horizon / h).round() as usize;

    let mut traj = FluidTrajectory {
        times: Vec::new(),
        states: Vec::new(),
        f_values: Vec::new(),
        manifold_proxy: Vec::new(),
    };
    let record = |t: f64, n: &[f64], traj: &mut FluidTrajectory| -> Result<(), FluidError> {
        traj.times.push(t);
        traj.states.push(n.to_vec());
        traj.f_values.push(lyapunov_unchecked(spec, n));
        traj.manifold_proxy.push(manifold_proxy(spec, n)?);
        Ok(())
    };

    let mut n: Vec<f64> = n0.iter().map(|&v| if v <= threshold { 0.0 } else { v }).collect();
    record(0.0, &n, &mut traj)?;
    let mut prices: Option<Vec<f64>> = None;
    for step in 1..=steps {
        let t = step as f64 * h;
        let alloc = alloc::allocate_warm(spec, &n, prices.as_deref())?;
        let used = linalg::mat_vec(a, &alloc.lambda);
        let zero_load: Vec<f64> = (0..jn)
            .map(|j| (0..inn).filter(|&i| n[i] == 0.0).map(|i| a[(j, i)] * rho[i]).sum())
            .collect();
        let absorbed: Vec<bool> = (0..jn)
            .map(|j| zero_load[j] <= spec.c()[j] - used[j] + 1e-9 * spec.c()[j])
            .collect();
        let mut next = n.clone();
        for i in 0..inn {
            let drift = if n[i] == 0.0 {
                if (0..jn).all(|j| a[(j, i)] == 0.0 || absorbed[j]) {
                    0.0
                } else {
                    spec.nu()[i]
                }
            } else {
                spec.nu()[i] - spec.mu()[i] * alloc.lambda[i]
            };
            let v = n[i] + h * drift;
            if v < -0.1 * scale {
                return Err(FluidError::StepTooLarge { h, route: i, value: v, time: t });
            }
            next[i] = if v <= threshold { 0.0 } else { v };
        }
        prices = Some(alloc.p);
        n = next;
        if step % record_every == 0 || step == steps {
            record(t, &n, &mut traj)?;
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn critical() -> NetworkSpec {
        NetworkSpec::new(
            vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]],
            vec![1.0, 1.0],
            vec![0.5; 3],
            vec![1.0; 3],
            vec![1.0; 3],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn lyapunov_examples() {
        let s = critical().with_nu(vec![1.0; 3]).unwrap();
        assert!((lyapunov_f(&s, &[1.0; 3]).unwrap() - 1.5).abs() < 1e-15);
        assert_eq!(lyapunov_f(&s, &[0.0; 3]).unwrap(), 0.0);
    }

    #[test]
    fn lift_linear_network() {
        let s = critical();
        let lift = lift_delta_with_dual(&s, &[1.0, 1.0]).unwrap();
        let want = [1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0];
        for (a, b) in lift.n.iter().zip(want) {
            assert!((a - b).abs() < 1e-10, "{:?}", lift.n);
        }
        assert!((lift.q[0] - 2.0 / 3.0).abs() < 1e-10 && (lift.q[1] - 2.0 / 3.0).abs() < 1e-10);
        assert_eq!(lift_delta(&s, &[0.0, 0.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn lift_outside_cone_sets_dual_to_zero() {
        // w = (1, 0) is below the cone: the constraint on resource 2 is slack.
        let s = critical();
        let lift = lift_delta_with_dual(&s, &[1.0, 0.0]).unwrap();
        assert_eq!(lift.q[1], 0.0);
        assert!(matches!(lift_delta_pf(&s, &[1.0, 0.0]), Err(FluidError::NotInCone { component: 1, .. })));
    }

    #[test]
    fn closed_form_lift() {
        let s = critical();
        let n = lift_delta_pf(&s, &[1.0, 1.0]).unwrap();
        assert!((n[2] - 2.0 / 3.0).abs() < 1e-14);
        let n = lift_delta_pf(&s, &[1.0, 0.5]).unwrap();
        assert!((n[0] - 0.5).abs() < 1e-14 && n[1].abs() < 1e-14 && (n[2] - 0.5).abs() < 1e-14);
        assert_eq!(lift_delta_pf(&s, &[0.0, 0.0]).unwrap(), vec![0.0; 3]);
        assert!(matches!(
            lift_delta_pf(&s.with_alpha(2.0).unwrap(), &[1.0, 1.0]),
            Err(FluidError::AlphaNotOne(_))
        ));
    }

    #[test]
    fn invariant_states() {
        let s = critical();
        let inv = invariant_from_q(&s, &[1.0, 1.0]).unwrap();
        assert_eq!(inv.n, vec![0.5, 0.5, 1.0]);
        assert_eq!(invariant_from_q(&s, &[0.0, 0.0]).unwrap().n, vec![0.0; 3]);
        assert_eq!(invariant_from_q(&s, &[1.0, 0.0]).unwrap().n, vec![0.5, 0.0, 0.5]);
        // Below critical load the constructed state is not a fixed point.
        let sub = s.with_nu(vec![0.4; 3]).unwrap();
        assert!(matches!(invariant_from_q(&sub, &[1.0, 1.0]), Err(FluidError::NotInvariant { .. })));
    }

    #[test]
    fn proxy_examples() {
        let s = critical();
        assert!(manifold_proxy(&s, &[0.5, 0.5, 1.0]).unwrap() < 1e-8);
        let p1 = manifold_proxy(&s, &[1.0, 1.0, 1.0]).unwrap();
        assert!(p1 > 0.1);
        let p2 = manifold_proxy(&s, &[2.0, 2.0, 2.0]).unwrap();
        assert!((p2 - 2.0 * p1).abs() < 1e-8);
    }

    #[test]
    fn zero_start_stays_zero() {
        let traj = integrate_fluid(&critical(), &[0.0; 3], 1.0, 1e-2).unwrap();
        assert!(traj.states.iter().all(|n| n.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn invariant_start_is_stationary() {
        let traj = integrate_fluid_with(&critical(), &[0.5, 0.5, 1.0], 10.0, 1e-3, 100).unwrap();
        for n in &traj.states {
            assert!(linalg::dist2(n, &[0.5, 0.5, 1.0]) < 1e-6);
        }
    }

    #[test]
    fn blocked_zero_route_leaves_zero() {
        // Route 1 saturates resource 1, so the arrivals to route 3 cannot be absorbed.
        let traj = integrate_fluid_with(&critical(), &[1.0, 0.0, 0.0], 0.1, 1e-3, 10).unwrap();
        assert!(traj.final_state()[2] > 0.0);
    }

    #[test]
    fn coarse_step_is_rejected() {
        let err = integrate_fluid(&critical(), &[0.01, 0.01, 0.01], 5.0, 2.0).unwrap_err();
        assert!(matches!(err, FluidError::StepTooLarge { .. }), "{err:?}");
    }

    #[test]
    fn bisection_fallback_matches_newton() {
        let s = critical().with_alpha(2.0).unwrap();
        let w = [1.0, 0.7];
        let newton = lift_delta_with_dual(&s, &w).unwrap();
        let q = coordinate_bisection(&s, &w, vec![1.0, 1.0], 1.0);
        assert!(linalg::dist2(&q, &newton.q) < 1e-9);
    }
}
