//! Reflected Brownian motion in the proportional-fair workload cone.
//!
//! The cone `{Gq : q ≥ 0}` is handled in dual coordinates `Q = G⁻¹W`, where
//! it becomes the orthant and pushing along `e_j` in `W` becomes pushing
//! along column `j` of `G⁻¹`. Each Euler step is projected back by solving a
//! small linear complementarity problem with projected Gauss–Seidel.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;

use crate::cone::{ConeError, ConeGeometry};
use crate::ctmc::{batch_half_width, DEFAULT_BATCHES, DEFAULT_BURN_IN};
use crate::linalg;
use crate::model::ModelError;
use crate::rng::{self, SimRng};

pub const LCP_MAX_SWEEPS: usize = 10_000;
pub const LCP_TOL: f64 = 1e-10;
/// Multiple of `√h` below which a pre-step dual coordinate counts as "at the
/// face" in the complementarity diagnostic.
pub const COMPLEMENTARITY_C: f64 = 3.0;
/// Fixed (step-independent) threshold used by the second diagnostic.
pub const COMPLEMENTARITY_FIXED: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SrbmError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cone(#[from] ConeError),
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("covariance matrix is not positive definite")]
    CovarianceNotPd,
    #[error("complementarity solve did not converge in {sweeps} sweeps (change {change:e})")]
    LcpNotConverged { sweeps: usize, change: f64 },
    #[error("product-form validation does not apply: {0}")]
    NotApplicable(String),
    #[error("path too short for {batches} batches")]
    TooFewBatches { batches: usize },
}

impl SrbmError {
    pub fn code(&self) -> &'static str {
        match self {
            SrbmError::Model(e) => e.code(),
            SrbmError::Cone(e) => e.code(),
            SrbmError::InvalidParameters(_) => "InvalidParameters",
            SrbmError::CovarianceNotPd => "CovarianceNotPd",
            SrbmError::LcpNotConverged { .. } => "LcpNotConverged",
            SrbmError::NotApplicable(_) => "NotApplicable",
            SrbmError::TooFewBatches { .. } => "TooFewBatches",
        }
    }
}

/// How boundary contact inside a step is detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Push only when the end-of-step candidate leaves the orthant.
    Euler,
    /// Also push when the Brownian bridge of a coordinate dips below zero
    /// during the step. Each coordinate's bridge minimum is sampled from its
    /// exact conditional law; this removes the `O(√h)` reflection bias in
    /// one dimension and on the interior of each face.
    BridgeCorrected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrbmOptions {
    /// Record every `record_every`-th step (the last step is always kept).
    pub record_every: usize,
    pub scheme: Scheme,
}

impl Default for SrbmOptions {
    fn default() -> Self {
        SrbmOptions { record_every: 1, scheme: Scheme::BridgeCorrected }
    }
}

/// Pushing statistics accumulated over every step (not only recorded ones).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplementarityStats {
    /// Total push per face.
    pub total: Vec<f64>,
    /// Push applied while the lowest point of `Q_j` during the step stayed
    /// above `1e-9` after pushing (zero up to roundoff by construction).
    pub post_step_off_face: Vec<f64>,
    /// Push applied while the pre-step `Q_j` exceeded `COMPLEMENTARITY_C·√h`.
    pub pre_step_scaled: Vec<f64>,
    /// Push applied while the pre-step `Q_j` exceeded `COMPLEMENTARITY_FIXED`.
    pub pre_step_fixed: Vec<f64>,
}

impl ComplementarityStats {
    fn ratio(part: &[f64], total: &[f64]) -> Vec<f64> {
        part.iter().zip(total).map(|(p, t)| if *t > 0.0 { p / t } else { 0.0 }).collect()
    }

    pub fn post_step_ratio(&self) -> Vec<f64> {
        Self::ratio(&self.post_step_off_face, &self.total)
    }

    pub fn pre_step_scaled_ratio(&self) -> Vec<f64> {
        Self::ratio(&self.pre_step_scaled, &self.total)
    }

    pub fn pre_step_fixed_ratio(&self) -> Vec<f64> {
        Self::ratio(&self.pre_step_fixed, &self.total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrbmPath {
    pub times: Vec<f64>,
    pub w: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub h: f64,
    pub horizon: f64,
    pub seed: u64,
    pub complementarity: ComplementarityStats,
    /// Largest number of Gauss–Seidel sweeps used by a single step.
    pub max_sweeps: usize,
}

/// Solves `find z ≥ 0 with y = b + Mz ≥ 0, y·z = 0` for a positive definite
/// `M` by projected Gauss–Seidel, warm-started from zero.
pub fn solve_lcp(m: &DMatrix<f64>, b: &[f64]) -> Result<(Vec<f64>, usize), SrbmError> {
    let n = b.len();
    let mut z = vec![0.0; n];
    let scale = 1.0 + linalg::max_abs(b);
    let mut change = f64::INFINITY;
    for sweep in 1..=LCP_MAX_SWEEPS {
        change = 0.0;
        for j in 0..n {
            let mut y = b[j];
            for k in 0..n {
                y += m[(j, k)] * z[k];
            }
            let new = (z[j] - y / m[(j, j)]).max(0.0);
            change = f64::max(change, (new - z[j]).abs());
            z[j] = new;
        }
        if change < LCP_TOL * scale {
            return Ok((z, sweep));
        }
    }
    Err(SrbmError::LcpNotConverged { sweeps: LCP_MAX_SWEEPS, change })
}

struct Stepper {
    g_inv: DMatrix<f64>,
    /// `G⁻¹θ`.
    drift: Vec<f64>,
    /// `G⁻¹ chol(Γ)`.
    noise: DMatrix<f64>,
    /// Per-coordinate variance rate of the dual increments, `(G⁻¹ΓG⁻¹)_jj`.
    var: Vec<f64>,
}

impl Stepper {
    fn new(geom: &ConeGeometry) -> Result<Self, SrbmError> {
        let chol = geom.gamma.clone().cholesky().ok_or(SrbmError::CovarianceNotPd)?;
        Ok(Stepper {
            g_inv: geom.g_inv.clone(),
            drift: linalg::mat_vec(&geom.g_inv, &geom.theta),
            noise: &geom.g_inv * chol.l(),
            var: (0..geom.dim()).map(|j| (&geom.g_inv * &geom.gamma * &geom.g_inv)[(j, j)]).collect(),
        })
    }
}

pub fn simulate_srbm(
    geom: &ConeGeometry,
    w0: &[f64],
    horizon: f64,
    h: f64,
    seed: u64,
) -> Result<SrbmPath, SrbmError> {
    simulate_srbm_with(geom, w0, horizon, h, seed, SrbmOptions::default())
}

/// As [`simulate_srbm`] with the initial workload drawn by `sampler` from
/// the seed's initial-state stream.
pub fn simulate_srbm_sampled(
    geom: &ConeGeometry,
    sampler: impl FnOnce(&mut SimRng) -> Vec<f64>,
    horizon: f64,
    h: f64,
    seed: u64,
    options: SrbmOptions,
) -> Result<SrbmPath, SrbmError> {
    let mut rng = rng::substream(seed, rng::STREAM_INITIAL);
    let w0 = sampler(&mut rng);
    simulate_srbm_with(geom, &w0, horizon, h, seed, options)
}

pub fn simulate_srbm_with(
    geom: &ConeGeometry,
    w0: &[f64],
    horizon: f64,
    h: f64,
    seed: u64,
    options: SrbmOptions,
) -> Result<SrbmPath, SrbmError> {
    let jn = geom.dim();
    if !(h > 0.0 && h.is_finite()) || !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(SrbmError::InvalidParameters(format!("h = {h}, horizon = {horizon}")));
    }
    geom.check_in_cone(w0)?;
    let stepper = Stepper::new(geom)?;
    let record_every = options.record_every.max(1);
    let steps = (horizon / h).round() as usize;
    let sqrt_h = h.sqrt();
    let mut noise_rng = rng::substream(seed, rng::STREAM_NOISE);

    let mut q: Vec<f64> = geom.to_q(w0).into_iter().map(|v| v.max(0.0)).collect();
    let mut u = vec![0.0; jn];
    let mut stats = ComplementarityStats {
        total: vec![0.0; jn],
        post_step_off_face: vec![0.0; jn],
        pre_step_scaled: vec![0.0; jn],
        pre_step_fixed: vec![0.0; jn],
    };
    let cap = steps / record_every + 2;
    let mut path = SrbmPath {
        times: Vec::with_capacity(cap),
        w: Vec::with_capacity(cap),
        q: Vec::with_capacity(cap),
        u: Vec::with_capacity(cap),
        h,
        horizon,
        seed,
        complementarity: stats.clone(),
        max_sweeps: 0,
    };
    let record = |t: f64, q: &[f64], u: &[f64], path: &mut SrbmPath| {
        path.times.push(t);
        path.w.push(geom.to_w(q));
        path.q.push(q.to_vec());
        path.u.push(u.to_vec());
    };
    record(0.0, &q, &u, &mut path);

    let mut z = vec![0.0; jn];
    let mut cand = vec![0.0; jn];
    // Lowest point of each coordinate during the step.
    let mut low = vec![0.0; jn];
    for step in 1..=steps {
        for zj in z.iter_mut() {
            *zj = StandardNormal.sample(&mut noise_rng);
        }
        for j in 0..jn {
            let mut x = stepper.drift[j] * h;
            for k in 0..jn {
                x += stepper.noise[(j, k)] * z[k] * sqrt_h;
            }
            cand[j] = q[j] + x;
            low[j] = match options.scheme {
                Scheme::Euler => cand[j],
                Scheme::BridgeCorrected => {
                    let e: f64 = Exp1.sample(&mut noise_rng);
                    q[j] + 0.5 * (x - (x * x + 2.0 * stepper.var[j] * h * e).sqrt())
                }
            };
        }
        if low.iter().all(|&x| x >= 0.0) {
            q.copy_from_slice(&cand);
        } else {
            let (du, sweeps) = solve_lcp(&stepper.g_inv, &low)?;
            path.max_sweeps = path.max_sweeps.max(sweeps);
            let push = linalg::mat_vec(&stepper.g_inv, &du);
            for j in 0..jn {
                let post = (cand[j] + push[j]).max(0.0);
                if du[j] > 0.0 {
                    stats.total[j] += du[j];
                    if low[j] + push[j] > 1e-9 {
                        stats.post_step_off_face[j] += du[j];
                    }
                    if q[j] > COMPLEMENTARITY_C * sqrt_h {
                        stats.pre_step_scaled[j] += du[j];
                    }
                    if q[j] > COMPLEMENTARITY_FIXED {
                        stats.pre_step_fixed[j] += du[j];
                    }
                    u[j] += du[j];
                }
                cand[j] = post;
            }
            q.copy_from_slice(&cand);
        }
        if step % record_every == 0 || step == steps {
            record(step as f64 * h, &q, &u, &mut path);
        }
    }
    path.complementarity = stats;
    Ok(path)
}

/// Independent replications in parallel, one per seed.
pub fn simulate_srbm_many(
    geom: &ConeGeometry,
    w0: &[f64],
    horizon: f64,
    h: f64,
    seeds: &[u64],
    options: SrbmOptions,
) -> Vec<Result<SrbmPath, SrbmError>> {
    seeds.par_iter().map(|&s| simulate_srbm_with(geom, w0, horizon, h, s, options)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductFormReport {
    /// Empirical means of `Q_j` after the burn-in.
    pub mean: Vec<f64>,
    /// `1/(−θ_j)`.
    pub target_mean: Vec<f64>,
    pub mean_half_width: Vec<f64>,
    /// Kolmogorov–Smirnov distance of each `Q_j` marginal to `Exp(−θ_j)`.
    pub ks_distance: Vec<f64>,
    pub correlation: Vec<Vec<f64>>,
    /// Batch-means half-widths of the pairwise correlations.
    pub correlation_half_width: Vec<Vec<f64>>,
    /// Weighted least-squares slope of the binned log-density of `W`.
    pub log_density_slope: Vec<f64>,
    /// The product-form exponent `v` the slope should match.
    pub v: Vec<f64>,
    pub samples: usize,
}

impl ProductFormReport {
    pub fn slope_relative_error(&self) -> f64 {
        linalg::dist2(&self.log_density_slope, &self.v) / linalg::norm2(&self.v)
    }
}

/// Compares the recorded path (after a 20% burn-in) with the product-form
/// law: independent `Q_j ~ Exp(−θ_j)` and `W` density `∝ exp(v·w)`.
pub fn validate_product_form(geom: &ConeGeometry, path: &SrbmPath) -> Result<ProductFormReport, SrbmError> {
    let v = geom
        .v
        .clone()
        .ok_or_else(|| SrbmError::NotApplicable("weights are not all equal to one".into()))?;
    if let Some(j) = geom.theta.iter().position(|&t| !(t < 0.0)) {
        return Err(SrbmError::NotApplicable(format!("theta[{j}] = {} is not negative", geom.theta[j])));
    }
    let jn = geom.dim();
    let start = (DEFAULT_BURN_IN * path.q.len() as f64).ceil() as usize;
    let qs = &path.q[start.min(path.q.len())..];
    let ws = &path.w[start.min(path.w.len())..];
    let batches = DEFAULT_BATCHES;
    if qs.len() < batches * 2 {
        return Err(SrbmError::TooFewBatches { batches });
    }
    let n = qs.len() as f64;
    let target_mean: Vec<f64> = geom.theta.iter().map(|t| -1.0 / t).collect();
    let mean: Vec<f64> = (0..jn).map(|j| qs.iter().map(|q| q[j]).sum::<f64>() / n).collect();
    let batch_len = qs.len() / batches;
    let chunks: Vec<&[Vec<f64>]> = (0..batches).map(|b| &qs[b * batch_len..(b + 1) * batch_len]).collect();
    let mean_half_width = (0..jn)
        .map(|j| {
            let bm: Vec<f64> = chunks.iter().map(|c| c.iter().map(|q| q[j]).sum::<f64>() / c.len() as f64).collect();
            batch_half_width(&bm)
        })
        .collect();
    let ks_distance = (0..jn)
        .map(|j| {
            let mut xs: Vec<f64> = qs.iter().map(|q| q[j]).collect();
            xs.sort_by(f64::total_cmp);
            let rate = -geom.theta[j];
            let m = xs.len() as f64;
            xs.iter()
                .enumerate()
                .map(|(k, &x)| {
                    let f = 1.0 - (-rate * x).exp();
                    (f - k as f64 / m).abs().max(((k + 1) as f64 / m - f).abs())
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let correlation = correlation_matrix(qs);
    let per_batch: Vec<Vec<Vec<f64>>> = chunks.iter().map(|c| correlation_matrix(c)).collect();
    let correlation_half_width = (0..jn)
        .map(|a| {
            (0..jn)
                .map(|b| if a == b { 0.0 } else { batch_half_width(&per_batch.iter().map(|m| m[a][b]).collect::<Vec<_>>()) })
                .collect()
        })
        .collect();
    let log_density_slope = log_density_slope(geom, ws, &v);
    Ok(ProductFormReport {
        mean,
        target_mean,
        mean_half_width,
        ks_distance,
        correlation,
        correlation_half_width,
        log_density_slope,
        v,
        samples: qs.len(),
    })
}

fn correlation_matrix(xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let jn = xs.first().map_or(0, Vec::len);
    let n = xs.len() as f64;
    let mean: Vec<f64> = (0..jn).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    let cov = |a: usize, b: usize| xs.iter().map(|x| (x[a] - mean[a]) * (x[b] - mean[b])).sum::<f64>() / n;
    let var: Vec<f64> = (0..jn).map(|j| cov(j, j)).collect();
    (0..jn)
        .map(|a| {
            (0..jn)
                .map(|b| {
                    if a == b {
                        1.0
                    } else if var[a] > 0.0 && var[b] > 0.0 {
                        cov(a, b) / (var[a] * var[b]).sqrt()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Bins `W` on a cubic grid, keeps cells lying entirely inside the cone with
/// at least 30 samples, and fits `log(count) = c + s·w` at the cell centres
/// by weighted least squares.
fn log_density_slope(geom: &ConeGeometry, ws: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    use std::collections::HashMap;
    let jn = geom.dim();
    let width = 0.25 / linalg::max_abs(v).max(1e-12);
    let mut cells: HashMap<Vec<i64>, usize> = HashMap::new();
    for w in ws {
        let key: Vec<i64> = w.iter().map(|x| (x / width).floor() as i64).collect();
        *cells.entry(key).or_insert(0) += 1;
    }
    let corners = 1usize << jn;
    // Normal equations for (c, s_1..s_J).
    let dim = jn + 1;
    let mut xtx = DMatrix::<f64>::zeros(dim, dim);
    let mut xty = vec![0.0; dim];
    for (key, &count) in &cells {
        if count < 30 {
            continue;
        }
        let inside = (0..corners).all(|mask| {
            let corner: Vec<f64> =
                (0..jn).map(|j| (key[j] + ((mask >> j) & 1) as i64) as f64 * width).collect();
            geom.normals.iter().all(|nj| linalg::dot(nj, &corner) >= 0.0)
        });
        if !inside {
            continue;
        }
        let mut row = vec![1.0];
        row.extend(key.iter().map(|&k| (k as f64 + 0.5) * width));
        let y = (count as f64).ln();
        let wt = count as f64;
        for a in 0..dim {
            xty[a] += wt * row[a] * y;
            for b in 0..dim {
                xtx[(a, b)] += wt * row[a] * row[b];
            }
        }
    }
    match linalg::solve_spd_regularized(&xtx, &xty) {
        Some(beta) => beta[1..].to_vec(),
        None => vec![f64::NAN; jn],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::build_geometry;
    use crate::NetworkSpec;

    fn linear_geom(theta: [f64; 2]) -> ConeGeometry {
        let s = NetworkSpec::new(
            vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]],
            vec![1.0, 1.0],
            vec![0.5; 3],
            vec![1.0; 3],
            vec![1.0; 3],
            1.0,
        )
        .unwrap();
        build_geometry(&s, &theta).unwrap()
    }

    #[test]
    fn lcp_examples() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0 / 3.0, -2.0 / 3.0, -2.0 / 3.0, 4.0 / 3.0]);
        let (z, _) = solve_lcp(&m, &[-1.0, 0.5]).unwrap();
        let y: Vec<f64> = (0..2).map(|j| [-1.0, 0.5][j] + m[(j, 0)] * z[0] + m[(j, 1)] * z[1]).collect();
        for j in 0..2 {
            assert!(z[j] >= 0.0 && y[j] >= -1e-10 && (z[j] * y[j]).abs() < 1e-10);
        }
        assert!((z[0] - 0.75).abs() < 1e-9 && z[1] == 0.0);
        let (z, _) = solve_lcp(&m, &[1.0, 2.0]).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn invariants_hold_without_drift() {
        let g = linear_geom([0.0, 0.0]);
        let path = simulate_srbm(&g, &[0.0, 0.0], 5.0, 1e-2, 9).unwrap();
        assert_eq!(path.times.len(), 501);
        for k in 0..path.q.len() {
            assert!(path.q[k].iter().all(|&x| x >= 0.0));
            assert!(g.normals.iter().all(|n| linalg::dot(n, &path.w[k]) >= -1e-9));
            if k > 0 {
                assert!((0..2).all(|j| path.u[k][j] >= path.u[k - 1][j]));
            }
        }
        assert_eq!(path.u[0], vec![0.0, 0.0]);
        assert!(path.complementarity.post_step_ratio().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn deterministic_and_strided() {
        let g = linear_geom([-1.0, -1.0]);
        let a = simulate_srbm_with(&g, &[1.0, 1.0], 2.0, 1e-3, 4, SrbmOptions { record_every: 100, ..Default::default() }).unwrap();
        let b = simulate_srbm_with(&g, &[1.0, 1.0], 2.0, 1e-3, 4, SrbmOptions { record_every: 1, ..Default::default() }).unwrap();
        assert_eq!(a.times.len(), 21);
        assert_eq!(a.q.last(), b.q.last());
        assert_eq!(a.complementarity, b.complementarity);
    }

    #[test]
    fn sampled_initial_state() {
        let g = linear_geom([-1.0, -1.0]);
        let path = simulate_srbm_sampled(&g, |_| vec![1.5, 1.5], 0.01, 1e-3, 2, SrbmOptions::default()).unwrap();
        assert_eq!(path.w[0], vec![1.5, 1.5]);
        assert!(matches!(
            simulate_srbm(&g, &[1.0, 0.0], 1.0, 1e-3, 1),
            Err(SrbmError::Cone(ConeError::NotInCone { .. }))
        ));
    }

    #[test]
    fn validation_needs_negative_drift() {
        let g = linear_geom([-1.0, 0.0]);
        let path = simulate_srbm(&g, &[0.0, 0.0], 1.0, 1e-2, 1).unwrap();
        assert!(matches!(validate_product_form(&g, &path), Err(SrbmError::NotApplicable(_))));
    }
}
