//! Network descriptions and the maps that act on them directly: workload,
//! heavy-traffic sequences and the mixture-of-exponentials route split.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg;

/// Tolerance for rank and critical-load checks.
pub const STRUCTURE_TOL: f64 = 1e-10;
/// Tolerance on mixture fractions summing to one.
pub const MIXTURE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("incidence matrix has rank {rank} but {resources} resources")]
    RankDeficient { rank: usize, resources: usize },
    #[error("route {route} uses no resource")]
    EmptyRoute { route: usize },
    #[error("parameter {name}[{index}] = {value} must be positive")]
    NonPositiveParameter { name: &'static str, index: usize, value: f64 },
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("state component {index} = {value} is negative")]
    NegativeState { index: usize, value: f64 },
    #[error("resource {resource} is not critically loaded: (A rho - C) = {excess:e}")]
    NotCriticallyLoaded { resource: usize, excess: f64 },
    #[error("scale r = {r} makes the arrival rate of route {route} nonpositive")]
    RatePositivityViolated { r: f64, route: usize },
    #[error("scale values must be positive and strictly increasing")]
    InvalidScales,
    #[error("invalid mixture on route {route}: {reason}")]
    InvalidMixture { route: usize, reason: String },
    #[error("cannot parse network document: {0}")]
    Parse(String),
}

impl ModelError {
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::RankDeficient { .. } => "RankDeficient",
            ModelError::EmptyRoute { .. } => "EmptyRoute",
            ModelError::NonPositiveParameter { .. } => "NonPositiveParameter",
            ModelError::DimensionMismatch { .. } => "DimensionMismatch",
            ModelError::NegativeState { .. } => "NegativeState",
            ModelError::NotCriticallyLoaded { .. } => "NotCriticallyLoaded",
            ModelError::RatePositivityViolated { .. } => "RatePositivityViolated",
            ModelError::InvalidScales => "InvalidScales",
            ModelError::InvalidMixture { .. } => "InvalidMixture",
            ModelError::Parse(_) => "Parse",
        }
    }
}

/// Network as read from a JSON document, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawNetwork {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
    pub nu: Vec<f64>,
    pub mu: Vec<f64>,
    pub kappa: Vec<f64>,
    pub alpha: f64,
}

/// A validated flow-level network: `J` resources, `I` routes.
///
/// `a` is the `J × I` matrix of nonnegative resource coefficients (zero-one
/// for single-path networks, general after multi-path reduction).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    a: DMatrix<f64>,
    c: Vec<f64>,
    nu: Vec<f64>,
    mu: Vec<f64>,
    kappa: Vec<f64>,
    alpha: f64,
}

fn check_positive(name: &'static str, v: &[f64]) -> Result<(), ModelError> {
    for (index, &value) in v.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(ModelError::NonPositiveParameter { name, index, value });
        }
    }
    Ok(())
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), ModelError> {
    if expected != found {
        return Err(ModelError::DimensionMismatch { what, expected, found });
    }
    Ok(())
}

/// Checks every structural assumption and returns the validated network.
pub fn validate_network(raw: RawNetwork) -> Result<NetworkSpec, ModelError> {
    let j = raw.a.len();
    if j == 0 {
        return Err(ModelError::DimensionMismatch { what: "A rows", expected: 1, found: 0 });
    }
    let i = raw.a[0].len();
    for row in &raw.a {
        check_len("A row length", i, row.len())?;
    }
    check_len("C", j, raw.c.len())?;
    check_len("nu", i, raw.nu.len())?;
    check_len("mu", i, raw.mu.len())?;
    check_len("kappa", i, raw.kappa.len())?;
    for (r, row) in raw.a.iter().enumerate() {
        for &v in row {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ModelError::NonPositiveParameter { name: "A", index: r, value: v });
            }
        }
    }
    check_positive("C", &raw.c)?;
    check_positive("nu", &raw.nu)?;
    check_positive("mu", &raw.mu)?;
    check_positive("kappa", &raw.kappa)?;
    check_positive("alpha", &[raw.alpha])?;
    let a = linalg::from_rows(&raw.a);
    let rank = linalg::rank(&a, STRUCTURE_TOL);
    if rank < j {
        return Err(ModelError::RankDeficient { rank, resources: j });
    }
    for route in 0..i {
        if (0..j).all(|r| a[(r, route)] == 0.0) {
            return Err(ModelError::EmptyRoute { route });
        }
    }
    Ok(NetworkSpec { a, c: raw.c, nu: raw.nu, mu: raw.mu, kappa: raw.kappa, alpha: raw.alpha })
}

impl NetworkSpec {
    pub fn new(
        a: Vec<Vec<f64>>,
        c: Vec<f64>,
        nu: Vec<f64>,
        mu: Vec<f64>,
        kappa: Vec<f64>,
        alpha: f64,
    ) -> Result<Self, ModelError> {
        validate_network(RawNetwork { a, c, nu, mu, kappa, alpha })
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let raw: RawNetwork =
            serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        validate_network(raw)
    }

    pub fn to_raw(&self) -> RawNetwork {
        RawNetwork {
            a: linalg::to_rows(&self.a),
            c: self.c.clone(),
            nu: self.nu.clone(),
            mu: self.mu.clone(),
            kappa: self.kappa.clone(),
            alpha: self.alpha,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_raw()).expect("network serialises")
    }

    pub fn routes(&self) -> usize {
        self.a.ncols()
    }

    pub fn resources(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Nominal loads `ρ_i = ν_i / μ_i`.
    pub fn rho(&self) -> Vec<f64> {
        self.nu.iter().zip(&self.mu).map(|(n, m)| n / m).collect()
    }

    /// Resource loads `Aρ`.
    pub fn load(&self) -> Vec<f64> {
        linalg::mat_vec(&self.a, &self.rho())
    }

    pub fn is_critically_loaded(&self) -> bool {
        self.critical_gap().is_none()
    }

    /// First resource whose load differs from capacity by more than the
    /// structural tolerance, with the signed excess.
    pub fn critical_gap(&self) -> Option<(usize, f64)> {
        self.load()
            .iter()
            .zip(&self.c)
            .enumerate()
            .map(|(j, (l, c))| (j, l - c))
            .find(|(j, e)| e.abs() > STRUCTURE_TOL * self.c[*j].max(1.0))
    }

    /// Same topology and policy with new arrival rates.
    pub fn with_nu(&self, nu: Vec<f64>) -> Result<Self, ModelError> {
        let mut raw = self.to_raw();
        raw.nu = nu;
        validate_network(raw)
    }

    pub fn with_kappa(&self, kappa: Vec<f64>) -> Result<Self, ModelError> {
        let mut raw = self.to_raw();
        raw.kappa = kappa;
        validate_network(raw)
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self, ModelError> {
        let mut raw = self.to_raw();
        raw.alpha = alpha;
        validate_network(raw)
    }

    pub fn with_capacity(&self, c: Vec<f64>) -> Result<Self, ModelError> {
        let mut raw = self.to_raw();
        raw.c = c;
        validate_network(raw)
    }

    pub(crate) fn check_state(&self, n: &[f64]) -> Result<(), ModelError> {
        check_len("state", self.routes(), n.len())?;
        for (index, &value) in n.iter().enumerate() {
            if !(value >= 0.0) {
                return Err(ModelError::NegativeState { index, value });
            }
        }
        Ok(())
    }
}

/// A nonnegative per-route state (fluid values or integer counts).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState(Vec<f64>);

impl FlowState {
    pub fn new(n: Vec<f64>) -> Result<Self, ModelError> {
        for (index, &value) in n.iter().enumerate() {
            if !(value >= 0.0) {
                return Err(ModelError::NegativeState { index, value });
            }
        }
        Ok(FlowState(n))
    }

    pub fn from_counts(n: &[u32]) -> Self {
        FlowState(n.iter().map(|&k| f64::from(k)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for FlowState {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Workload `w_j = Σ_i A_ji n_i / μ_i`.
pub fn workload(spec: &NetworkSpec, n: &[f64]) -> Result<Vec<f64>, ModelError> {
    spec.check_state(n)?;
    Ok(workload_unchecked(spec, n))
}

pub(crate) fn workload_unchecked(spec: &NetworkSpec, n: &[f64]) -> Vec<f64> {
    let a = spec.a();
    (0..spec.resources())
        .map(|j| (0..spec.routes()).map(|i| a[(j, i)] * n[i] / spec.mu[i]).sum())
        .collect()
}

/// One member of a heavy-traffic family.
#[derive(Debug, Clone, PartialEq)]
pub struct HeavyTrafficMember {
    pub r: f64,
    pub spec: NetworkSpec,
}

impl HeavyTrafficMember {
    /// `r (A ρ^r − C)` recomputed from the member's parameters.
    pub fn scaled_excess(&self) -> Vec<f64> {
        self.spec
            .load()
            .iter()
            .zip(self.spec.c())
            .map(|(l, c)| self.r * (l - c))
            .collect()
    }
}

/// A critically loaded base network together with perturbed systems
/// `r(Aρ^r − C) = θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeavyTrafficSequence {
    pub base: NetworkSpec,
    pub theta: Vec<f64>,
    /// Minimum-norm load perturbation `δ = A'(AA')⁻¹θ`.
    pub delta: Vec<f64>,
    pub members: Vec<HeavyTrafficMember>,
}

impl HeavyTrafficSequence {
    pub fn r_values(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.r).collect()
    }

    pub fn member(&self, r: f64) -> Option<&HeavyTrafficMember> {
        self.members.iter().find(|m| m.r == r)
    }
}

/// Builds `ν^r = ν + diag(μ) δ / r` with `μ^r = μ` and `δ` the minimum-norm
/// solution of `Aδ = θ`.
pub fn build_ht_sequence(
    base: &NetworkSpec,
    theta: &[f64],
    r_values: &[f64],
) -> Result<HeavyTrafficSequence, ModelError> {
    check_len("theta", base.resources(), theta.len())?;
    if let Some((resource, excess)) = base.critical_gap() {
        return Err(ModelError::NotCriticallyLoaded { resource, excess });
    }
    if r_values.iter().any(|&r| !(r > 0.0 && r.is_finite()))
        || r_values.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(ModelError::InvalidScales);
    }
    let a = base.a();
    let aat = a * a.transpose();
    let y = linalg::solve_spd_regularized(&aat, theta)
        .ok_or(ModelError::RankDeficient { rank: 0, resources: base.resources() })?;
    let delta = linalg::mat_t_vec(a, &y);

    let mut members = Vec::with_capacity(r_values.len());
    for &r in r_values {
        let nu: Vec<f64> = (0..base.routes())
            .map(|i| base.nu()[i] + base.mu()[i] * delta[i] / r)
            .collect();
        if let Some(route) = nu.iter().position(|&v| v <= 0.0) {
            return Err(ModelError::RatePositivityViolated { r, route });
        }
        members.push(HeavyTrafficMember { r, spec: base.with_nu(nu)? });
    }
    Ok(HeavyTrafficSequence { base: base.clone(), theta: theta.to_vec(), delta, members })
}

/// One exponential component of a route's document-size mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    /// Fraction of the route's arrivals carried by this copy.
    pub fraction: f64,
    /// Exponential rate (inverse mean size) of the copy.
    pub rate: f64,
}

/// Extended exponential network obtained by splitting routes into copies.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureExtension {
    pub spec: NetworkSpec,
    /// Original route of each copy.
    pub origin: Vec<usize>,
}

impl MixtureExtension {
    /// Collapses copies back to `(ν_i, 1/μ_i)` per original route.
    pub fn collapse(&self) -> (Vec<f64>, Vec<f64>) {
        let routes = self.origin.iter().copied().max().map_or(0, |m| m + 1);
        let mut nu = vec![0.0; routes];
        for (k, &i) in self.origin.iter().enumerate() {
            nu[i] += self.spec.nu()[k];
        }
        let mut mean = vec![0.0; routes];
        for (k, &i) in self.origin.iter().enumerate() {
            mean[i] += self.spec.nu()[k] / nu[i] / self.spec.mu()[k];
        }
        (nu, mean)
    }

    /// Collapses per-copy quantities (counts, means) by summing over copies.
    pub fn collapse_values(&self, values: &[f64]) -> Vec<f64> {
        let routes = self.origin.iter().copied().max().map_or(0, |m| m + 1);
        let mut out = vec![0.0; routes];
        for (k, &i) in self.origin.iter().enumerate() {
            out[i] += values[k];
        }
        out
    }
}

/// Splits every route into exponential copies sharing its resources and
/// weight. The mixture mean of route `i` must equal `1/μ_i`.
pub fn extend_mixture(
    spec: &NetworkSpec,
    mixtures: &[Vec<MixtureComponent>],
) -> Result<MixtureExtension, ModelError> {
    check_len("mixtures", spec.routes(), mixtures.len())?;
    let j = spec.resources();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut nu = Vec::new();
    let mut mu = Vec::new();
    let mut kappa = Vec::new();
    let mut origin = Vec::new();
    for (route, mix) in mixtures.iter().enumerate() {
        if mix.is_empty() {
            return Err(ModelError::InvalidMixture { route, reason: "no components".into() });
        }
        let total: f64 = mix.iter().map(|m| m.fraction).sum();
        if (total - 1.0).abs() > MIXTURE_TOL {
            return Err(ModelError::InvalidMixture {
                route,
                reason: format!("fractions sum to {total}"),
            });
        }
        let mut mean = 0.0;
        for m in mix {
            if !(m.fraction > 0.0) {
                return Err(ModelError::InvalidMixture {
                    route,
                    reason: format!("fraction {} is not positive", m.fraction),
                });
            }
            if !(m.rate > 0.0 && m.rate.is_finite()) {
                return Err(ModelError::InvalidMixture {
                    route,
                    reason: format!("component rate {} is not positive", m.rate),
                });
            }
            mean += m.fraction / m.rate;
        }
        let expected = 1.0 / spec.mu()[route];
        if (mean - expected).abs() > 1e-12 * expected.max(1.0) {
            return Err(ModelError::InvalidMixture {
                route,
                reason: format!("mixture mean {mean} differs from 1/mu = {expected}"),
            });
        }
        for m in mix {
            columns.push((0..j).map(|r| spec.a()[(r, route)]).collect());
            nu.push(m.fraction * spec.nu()[route]);
            mu.push(m.rate);
            kappa.push(spec.kappa()[route]);
            origin.push(route);
        }
    }
    let a = (0..j).map(|r| columns.iter().map(|col| col[r]).collect()).collect();
    let ext = NetworkSpec::new(a, spec.c().to_vec(), nu, mu, kappa, spec.alpha())?;
    Ok(MixtureExtension { spec: ext, origin })
}
