//! Geometry of the proportional-fair workload cone `W_1 = {Gq : q ≥ 0}` with
//! `G = ABA'`, the completely-S test, the skew-symmetry residual behind the
//! product-form law, and the two-resource wedge for general `α`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::fluid;
use crate::linalg;
use crate::lp::{self, LpOutcome};
use crate::model::{ModelError, NetworkSpec};

/// Largest matrix accepted by [`completely_s_check`] (`2^n − 1` submatrices).
pub const MAX_COMPLETELY_S_DIM: usize = 12;
/// Slack allowed on the inward-normal test for cone membership.
pub const CONE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cone geometry needs alpha = 1, got {0}")]
    AlphaNotOne(f64),
    #[error("ABA' is numerically singular")]
    SingularG,
    #[error("point is outside the cone (normal {face} gives {value:e})")]
    NotInCone { face: usize, value: f64 },
    #[error("face index {index} out of range for {faces} faces")]
    FaceOutOfRange { index: usize, faces: usize },
    #[error("matrix dimension {0} exceeds the completely-S limit")]
    DimensionTooLarge(usize),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("product-form exponent needs kappa = 1 on every route")]
    UnequalWeights,
    #[error("eigendecomposition of the covariance failed")]
    Eigen,
    #[error("wedge slopes need the two-resource linear topology A = [[1,0,1],[0,1,1]]")]
    TopologyMismatch,
}

impl ConeError {
    pub fn code(&self) -> &'static str {
        match self {
            ConeError::Model(e) => e.code(),
            ConeError::AlphaNotOne(_) => "AlphaNotOne",
            ConeError::SingularG => "SingularG",
            ConeError::NotInCone { .. } => "NotInCone",
            ConeError::FaceOutOfRange { .. } => "FaceOutOfRange",
            ConeError::DimensionTooLarge(_) => "DimensionTooLarge",
            ConeError::NotSquare { .. } => "NotSquare",
            ConeError::UnequalWeights => "UnequalWeights",
            ConeError::Eigen => "EigenFailed",
            ConeError::TopologyMismatch => "TopologyMismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeGeometry {
    /// Diagonal of `B`, `ν_i / (μ_i² κ_i)`.
    pub b: Vec<f64>,
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    /// Inward normals `n^j`, the rows of `G⁻¹`.
    pub normals: Vec<Vec<f64>>,
    pub gamma: DMatrix<f64>,
    pub theta: Vec<f64>,
    /// `2Γ⁻¹θ`; only defined when every `κ_i = 1`.
    pub v: Option<Vec<f64>>,
}

impl ConeGeometry {
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// `G⁻¹w`, the dual coordinates of a workload.
    pub fn to_q(&self, w: &[f64]) -> Vec<f64> {
        linalg::mat_vec(&self.g_inv, w)
    }

    pub fn to_w(&self, q: &[f64]) -> Vec<f64> {
        linalg::mat_vec(&self.g, q)
    }

    /// Checks `n^j · w ≥ −CONE_TOL·scale` for every face.
    pub fn check_in_cone(&self, w: &[f64]) -> Result<(), ConeError> {
        let jn = self.dim();
        if w.len() != jn {
            return Err(ModelError::DimensionMismatch { what: "workload", expected: jn, found: w.len() }.into());
        }
        let scale = linalg::max_abs(w).max(1.0);
        for (face, nj) in self.normals.iter().enumerate() {
            let value = linalg::dot(nj, w);
            if value < -CONE_TOL * scale {
                return Err(ConeError::NotInCone { face, value });
            }
        }
        Ok(())
    }
}

/// Covariance `Γ = 2 A M⁻¹ diag(ν) M⁻¹ A'`.
pub fn covariance(spec: &NetworkSpec) -> DMatrix<f64> {
    let a = spec.a();
    let d: Vec<f64> = (0..spec.routes()).map(|i| 2.0 * spec.nu()[i] / (spec.mu()[i] * spec.mu()[i])).collect();
    let jn = spec.resources();
    DMatrix::from_fn(jn, jn, |r, c| (0..spec.routes()).map(|i| a[(r, i)] * d[i] * a[(c, i)]).sum())
}

pub fn build_geometry(spec: &NetworkSpec, theta: &[f64]) -> Result<ConeGeometry, ConeError> {
    if spec.alpha() != 1.0 {
        return Err(ConeError::AlphaNotOne(spec.alpha()));
    }
    let jn = spec.resources();
    if theta.len() != jn {
        return Err(ModelError::DimensionMismatch { what: "theta", expected: jn, found: theta.len() }.into());
    }
    let g = fluid::pf_gram(spec);
    let g = (&g + g.transpose()) * 0.5;
    let chol = g.clone().cholesky().ok_or(ConeError::SingularG)?;
    let g_inv = chol.inverse();
    let g_inv = (&g_inv + g_inv.transpose()) * 0.5;
    let check = (&g * &g_inv - DMatrix::identity(jn, jn)).amax();
    if !(check < 1e-8) {
        return Err(ConeError::SingularG);
    }
    let normals = (0..jn).map(|j| g_inv.row(j).iter().copied().collect()).collect();
    let gamma = covariance(spec);
    let v = if spec.kappa().iter().all(|&k| k == 1.0) {
        let gc = gamma.clone().cholesky().ok_or(ConeError::SingularG)?;
        let sol = gc.solve(&nalgebra::DVector::from_column_slice(theta));
        Some(sol.iter().map(|x| 2.0 * x).collect())
    } else {
        None
    };
    let b = (0..spec.routes())
        .map(|i| spec.nu()[i] / (spec.mu()[i] * spec.mu()[i] * spec.kappa()[i]))
        .collect();
    Ok(ConeGeometry { b, g, g_inv, normals, gamma, theta: theta.to_vec(), v })
}

/// Euclidean distance from a cone point to face `j`: `n^j·w / |n^j|`.
pub fn face_distance(geom: &ConeGeometry, w: &[f64], j: usize) -> Result<f64, ConeError> {
    if j >= geom.dim() {
        return Err(ConeError::FaceOutOfRange { index: j, faces: geom.dim() });
    }
    geom.check_in_cone(w)?;
    let nj = &geom.normals[j];
    Ok((linalg::dot(nj, w) / linalg::norm2(nj)).max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletelySVerdict {
    pub holds: bool,
    /// Zero-based indices of a principal submatrix with no `x ≥ 0`, `Dx > 0`.
    pub witness: Option<Vec<usize>>,
}

/// Decides whether every principal submatrix `D` of `m` admits `x ≥ 0` with
/// `Dx > 0`. Each submatrix is tested with the linear program
/// `max t` subject to `Dx ≥ t·1`, `Σx = 1`, `x ≥ 0`, `t ≥ 0`.
pub fn completely_s_check(m: &DMatrix<f64>) -> Result<CompletelySVerdict, ConeError> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(ConeError::NotSquare { rows, cols });
    }
    if rows > MAX_COMPLETELY_S_DIM {
        return Err(ConeError::DimensionTooLarge(rows));
    }
    let tol = 1e-9 * m.amax().max(1e-300);
    for mask in 1u32..(1u32 << rows) {
        let idx: Vec<usize> = (0..rows).filter(|&k| mask & (1 << k) != 0).collect();
        if !submatrix_is_s(m, &idx, tol) {
            return Ok(CompletelySVerdict { holds: false, witness: Some(idx) });
        }
    }
    Ok(CompletelySVerdict { holds: true, witness: None })
}

fn submatrix_is_s(m: &DMatrix<f64>, idx: &[usize], tol: f64) -> bool {
    let k = idx.len();
    // Variables (x_1..x_k, t).
    let mut a = Vec::with_capacity(k + 2);
    for &r in idx {
        let mut row: Vec<f64> = idx.iter().map(|&c| -m[(r, c)]).collect();
        row.push(1.0);
        a.push(row);
    }
    let mut sum = vec![1.0; k];
    sum.push(0.0);
    a.push(sum.clone());
    a.push(sum.iter().map(|v| -v).collect());
    let mut b = vec![0.0; k];
    b.extend([1.0, -1.0]);
    let mut c = vec![0.0; k];
    c.push(1.0);
    match lp::maximize(&c, &a, &b) {
        LpOutcome::Optimal { value, .. } => value > tol,
        LpOutcome::Unbounded => true,
        LpOutcome::Infeasible => false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkewReport {
    /// Rows are the unit inward normals of the whitened cone.
    pub theta_matrix: DMatrix<f64>,
    /// Rows are the tangential parts of the normalised reflection directions.
    pub xi: DMatrix<f64>,
    pub residual: DMatrix<f64>,
    /// Frobenius norm of `residual`.
    pub norm: f64,
}

/// Whitens the SRBM with `V = D^{-1/2} L` (`Γ = L'DL`), normalises the
/// normals and reflection directions of the image cone and returns the
/// skew-symmetry residual `ΘΞ' + ΞΘ'`. The cone normals are the rows of
/// `G⁻¹V⁻¹`, so the construction is meaningful for any weights; the residual
/// vanishes when every `κ_i = 1`.
pub fn skew_symmetry_report(geom: &ConeGeometry) -> Result<SkewReport, ConeError> {
    let jn = geom.dim();
    let eig = SymmetricEigen::try_new(geom.gamma.clone(), 1e-15, 10_000).ok_or(ConeError::Eigen)?;
    let mut order: Vec<usize> = (0..jn).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    if order.iter().any(|&k| !(eig.eigenvalues[k] > 0.0)) {
        return Err(ConeError::Eigen);
    }
    // Rows of L are the eigenvectors.
    let l = DMatrix::from_fn(jn, jn, |r, c| eig.eigenvectors[(c, order[r])]);
    let d: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let v = DMatrix::from_fn(jn, jn, |r, c| l[(r, c)] / d[r].sqrt());
    let v_inv = DMatrix::from_fn(jn, jn, |r, c| l[(c, r)] * d[c].sqrt());
    let mut theta = &geom.g_inv * &v_inv;
    for r in 0..jn {
        let norm = theta.row(r).norm();
        theta.row_mut(r).scale_mut(1.0 / norm);
    }
    let tv = &theta * &v;
    let r_mat = DMatrix::from_fn(jn, jn, |r, c| v[(r, c)] / tv[(c, c)]);
    let xi_t = &r_mat - theta.transpose();
    let xi = xi_t.transpose();
    let residual = &theta * &xi_t + &xi * theta.transpose();
    let norm = residual.norm();
    Ok(SkewReport { theta_matrix: theta, xi, residual, norm })
}

/// Unnormalised product-form density `exp(v·w)` on the cone.
pub fn product_form_density(geom: &ConeGeometry, w: &[f64]) -> Result<f64, ConeError> {
    let v = geom.v.as_ref().ok_or(ConeError::UnequalWeights)?;
    geom.check_in_cone(w)?;
    Ok(linalg::dot(v, w).exp())
}

/// Whether the product-form density is integrable, i.e. every `θ_j < 0`.
pub fn product_form_integrable(geom: &ConeGeometry) -> bool {
    geom.theta.iter().all(|&t| t < 0.0)
}

/// Slopes of the two-resource wedge `{β_2⁻¹ w_2 ≤ ... }`: the upper face is
/// `w_2 = β_1 w_1` and the lower face is `w_1 = β_2 w_2`. Routes are ordered
/// as resource 1 only, resource 2 only, both resources.
pub fn wedge_slopes(spec: &NetworkSpec, alpha: f64) -> Result<(f64, f64), ConeError> {
    let linear = [[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]];
    let a = spec.a();
    if a.shape() != (2, 3) || (0..2).any(|j| (0..3).any(|i| a[(j, i)] != linear[j][i])) {
        return Err(ConeError::TopologyMismatch);
    }
    if !(alpha > 0.0) {
        return Err(ModelError::NonPositiveParameter { name: "alpha", index: 0, value: alpha }.into());
    }
    let (nu, mu, kappa) = (spec.nu(), spec.mu(), spec.kappa());
    let load = |i: usize| nu[i] / (mu[i] * mu[i]);
    let beta1 = 1.0 + load(1) / load(2) * (kappa[2] / kappa[1]).powf(1.0 / alpha);
    let beta2 = 1.0 + load(0) / load(2) * (kappa[2] / kappa[0]).powf(1.0 / alpha);
    Ok((beta1, beta2))
}
