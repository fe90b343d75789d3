//! Multi-path routing: source–destination pairs `i` own several routes `k`
//! (`H_ik = 1`), routes use resources through `Ā`, and the achievable pair
//! bandwidths form the polytope `HY` with `Y = {y ≥ 0 : Āy ≤ C̄}`. The
//! projection removes `y` by Fourier–Motzkin elimination in exact rational
//! arithmetic and returns `HY = {Λ ≥ 0 : AΛ ≤ C}`.

use std::collections::HashSet;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::lp::{self, LpOutcome};
use crate::model::{ModelError, NetworkSpec};

/// Cap on the number of inequalities alive during elimination.
pub const MAX_INEQUALITIES: usize = 100_000;
/// Above this many eliminated variables a warning is attached to the result.
pub const ELIMINATION_WARNING: usize = 20;
const LP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MultipathError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid multipath spec: {0}")]
    InvalidSpec(String),
    #[error("elimination produced {count} inequalities (cap {cap})")]
    EliminationBlowup { count: usize, cap: usize },
    #[error("polytope is unbounded in direction of inequality {row}")]
    Unbounded { row: usize },
    #[error("projection is inconsistent: {0}")]
    Inconsistent(String),
}

impl MultipathError {
    pub fn code(&self) -> &'static str {
        match self {
            MultipathError::Model(e) => e.code(),
            MultipathError::InvalidSpec(_) => "InvalidSpec",
            MultipathError::EliminationBlowup { .. } => "EliminationBlowup",
            MultipathError::Unbounded { .. } => "Unbounded",
            MultipathError::Inconsistent(_) => "Inconsistent",
        }
    }
}

/// Multi-path network as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultipathSpec {
    /// Pair-by-route assignment (`I × K`).
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    /// Resource-by-route incidence (`L × K`).
    #[serde(rename = "Abar")]
    pub abar: Vec<Vec<f64>>,
    #[serde(rename = "Cbar")]
    pub cbar: Vec<f64>,
    pub nu: Vec<f64>,
    pub mu: Vec<f64>,
    pub kappa: Vec<f64>,
    pub alpha: f64,
}

impl MultipathSpec {
    pub fn from_json(text: &str) -> Result<Self, MultipathError> {
        let spec: MultipathSpec =
            serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn pairs(&self) -> usize {
        self.h.len()
    }

    pub fn routes(&self) -> usize {
        self.h.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), MultipathError> {
        let invalid = |s: String| Err(MultipathError::InvalidSpec(s));
        let (i_n, k_n) = (self.pairs(), self.routes());
        if i_n == 0 || k_n == 0 {
            return invalid("H must be nonempty".into());
        }
        if self.h.iter().any(|row| row.len() != k_n) || self.abar.iter().any(|row| row.len() != k_n) {
            return invalid("H and Abar must have one column per route".into());
        }
        if self.abar.is_empty() || self.cbar.len() != self.abar.len() {
            return invalid("Cbar must have one entry per row of Abar".into());
        }
        if self.h.iter().flatten().any(|&v| v != 0.0 && v != 1.0) {
            return invalid("H must contain only zeros and ones".into());
        }
        for k in 0..k_n {
            if self.h.iter().map(|row| row[k]).sum::<f64>() != 1.0 {
                return invalid(format!("route {k} must belong to exactly one pair"));
            }
            if self.abar.iter().all(|row| row[k] == 0.0) {
                return invalid(format!("route {k} uses no resource"));
            }
        }
        if let Some(i) = self.h.iter().position(|row| row.iter().all(|&v| v == 0.0)) {
            return invalid(format!("pair {i} has no route"));
        }
        if self.abar.iter().flatten().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return invalid("Abar must be nonnegative".into());
        }
        for (name, v) in [("Cbar", &self.cbar), ("nu", &self.nu), ("mu", &self.mu), ("kappa", &self.kappa)] {
            if let Some(index) = v.iter().position(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(ModelError::NonPositiveParameter { name, index, value: v[index] }.into());
            }
        }
        for (name, v) in [("nu", &self.nu), ("mu", &self.mu), ("kappa", &self.kappa)] {
            if v.len() != i_n {
                return Err(ModelError::DimensionMismatch { what: name, expected: i_n, found: v.len() }.into());
            }
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(ModelError::NonPositiveParameter { name: "alpha", index: 0, value: self.alpha }.into());
        }
        Ok(())
    }
}

/// `{Λ ≥ 0 : AΛ ≤ C}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
}

/// A point of `HY` on a retained hyperplane, with the route split producing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub lambda: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedRepresentation {
    pub a: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub a_exact: Vec<Vec<BigRational>>,
    pub c_exact: Vec<BigRational>,
    pub certificates: Vec<Certificate>,
    pub warnings: Vec<String>,
}

impl ReducedRepresentation {
    pub fn polytope(&self) -> Polytope {
        Polytope { a: self.a.clone(), c: self.c.clone() }
    }

    /// Single-path network with the pairs as routes.
    pub fn network(&self, mspec: &MultipathSpec) -> Result<NetworkSpec, ModelError> {
        NetworkSpec::new(
            self.a.clone(),
            self.c.clone(),
            mspec.nu.clone(),
            mspec.mu.clone(),
            mspec.kappa.clone(),
            mspec.alpha,
        )
    }
}

/// Rational inequality `coef·x ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Row {
    coef: Vec<BigRational>,
    rhs: BigRational,
}

impl Row {
    /// Scales so that the largest coefficient magnitude is one.
    fn normalized(mut self) -> Row {
        let max = self.coef.iter().map(|c| c.abs()).max().unwrap_or_else(BigRational::zero);
        if !max.is_zero() {
            for c in self.coef.iter_mut() {
                *c = &*c / &max;
            }
            self.rhs = &self.rhs / &max;
        }
        self
    }

    fn to_f64(&self) -> (Vec<f64>, f64) {
        (self.coef.iter().map(rat_to_f64).collect(), rat_to_f64(&self.rhs))
    }

    fn is_sign_row(&self) -> bool {
        self.rhs.is_zero()
            && self.coef.iter().filter(|c| !c.is_zero()).count() == 1
            && self.coef.iter().any(|c| c.is_negative())
    }
}

fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite input")
}

fn rat_to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Whether `row` is implied by `others` together with `x ≥ 0`.
fn redundant(row: &Row, others: &[&Row]) -> bool {
    let (c, b) = row.to_f64();
    let a: Vec<Vec<f64>> = others.iter().map(|r| r.to_f64().0).collect();
    let rhs: Vec<f64> = others.iter().map(|r| r.to_f64().1).collect();
    match lp::maximize(&c, &a, &rhs) {
        LpOutcome::Optimal { value, .. } => value <= b + LP_TOL * (1.0 + b.abs()),
        LpOutcome::Infeasible => true,
        LpOutcome::Unbounded => false,
    }
}

/// Removes duplicates and LP-redundant rows, keeping sign rows.
fn prune(rows: Vec<Row>) -> Vec<Row> {
    let mut seen = HashSet::new();
    let mut rows: Vec<Row> = rows
        .into_iter()
        .map(Row::normalized)
        .filter(|r| !(r.coef.iter().all(|c| c.is_zero()) && !r.rhs.is_negative()))
        .filter(|r| seen.insert(r.clone()))
        .collect();
    let mut k = 0;
    while k < rows.len() {
        if rows[k].is_sign_row() {
            k += 1;
            continue;
        }
        let others: Vec<&Row> = rows.iter().enumerate().filter(|(m, _)| *m != k).map(|(_, r)| r).collect();
        if redundant(&rows[k], &others) {
            rows.remove(k);
        } else {
            k += 1;
        }
    }
    rows
}

/// Eliminates variable `v` from `rows`.
fn eliminate(rows: Vec<Row>, v: usize) -> Vec<Row> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut out = Vec::new();
    for r in rows {
        if r.coef[v].is_positive() {
            pos.push(r);
        } else if r.coef[v].is_negative() {
            neg.push(r);
        } else {
            out.push(r);
        }
    }
    for p in &pos {
        for n in &neg {
            let sp = -n.coef[v].clone();
            let sn = p.coef[v].clone();
            let coef = p.coef.iter().zip(&n.coef).map(|(a, b)| a * &sp + b * &sn).collect();
            let rhs = &p.rhs * &sp + &n.rhs * &sn;
            out.push(Row { coef, rhs });
        }
    }
    out
}

/// Projects `{y ≥ 0 : Āy ≤ C̄}` through `H` and returns a minimal
/// representation with nonnegative coefficients, rows scaled so that their
/// largest coefficient is one.
pub fn project(mspec: &MultipathSpec) -> Result<ReducedRepresentation, MultipathError> {
    mspec.validate()?;
    let (i_n, k_n) = (mspec.pairs(), mspec.routes());
    let pair_of: Vec<usize> = (0..k_n).map(|k| (0..i_n).find(|&i| mspec.h[i][k] == 1.0).unwrap()).collect();
    // One route per pair is written as Λ_i minus the pair's other routes.
    let pivot: Vec<usize> = (0..i_n).map(|i| (0..k_n).find(|&k| pair_of[k] == i).unwrap()).collect();
    let free: Vec<usize> = (0..k_n).filter(|k| !pivot.contains(k)).collect();
    let dim = i_n + free.len();
    // Route k as an affine form over (Λ, y_free).
    let route_form = |k: usize| -> Vec<BigRational> {
        let mut f = vec![BigRational::zero(); dim];
        if let Some(pos) = free.iter().position(|&m| m == k) {
            f[i_n + pos] = BigRational::one();
        } else {
            let i = pair_of[k];
            f[i] = BigRational::one();
            for (pos, &m) in free.iter().enumerate() {
                if pair_of[m] == i {
                    f[i_n + pos] = -BigRational::one();
                }
            }
        }
        f
    };
    let mut rows = Vec::new();
    for k in 0..k_n {
        let f = route_form(k);
        rows.push(Row { coef: f.iter().map(|c| -c).collect(), rhs: BigRational::zero() });
    }
    for (l, arow) in mspec.abar.iter().enumerate() {
        let mut coef = vec![BigRational::zero(); dim];
        for k in 0..k_n {
            if arow[k] != 0.0 {
                let w = rat(arow[k]);
                for (c, f) in coef.iter_mut().zip(route_form(k)) {
                    *c += &w * f;
                }
            }
        }
        rows.push(Row { coef, rhs: rat(mspec.cbar[l]) });
    }
    for i in 0..i_n {
        let mut coef = vec![BigRational::zero(); dim];
        coef[i] = -BigRational::one();
        rows.push(Row { coef, rhs: BigRational::zero() });
    }
    let mut warnings = Vec::new();
    if free.len() > ELIMINATION_WARNING {
        warnings.push(format!("eliminating {} variables may be slow", free.len()));
    }

    let mut rows = prune(rows);
    let mut remaining: Vec<usize> = (i_n..dim).collect();
    while !remaining.is_empty() {
        // Eliminate the variable producing the fewest new rows.
        let (idx, &v) = remaining
            .iter()
            .enumerate()
            .min_by_key(|(_, &v)| {
                let p = rows.iter().filter(|r| r.coef[v].is_positive()).count();
                let n = rows.iter().filter(|r| r.coef[v].is_negative()).count();
                p * n
            })
            .unwrap();
        rows = eliminate(rows, v);
        if rows.len() > MAX_INEQUALITIES {
            return Err(MultipathError::EliminationBlowup { count: rows.len(), cap: MAX_INEQUALITIES });
        }
        rows = prune(rows);
        remaining.remove(idx);
    }

    // Back to Λ only; drop hyperplanes through the origin.
    let lambda_rows: Vec<Row> = rows
        .into_iter()
        .map(|r| Row { coef: r.coef[..i_n].to_vec(), rhs: r.rhs })
        .collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for r in prune(lambda_rows) {
        if r.rhs.is_positive() {
            kept.push(r);
        } else {
            dropped.push(r);
        }
    }
    if let Some(r) = kept.iter().find(|r| r.coef.iter().any(|c| c.is_negative())) {
        return Err(MultipathError::Inconsistent(format!("retained row has a negative coefficient: {:?}", r.to_f64())));
    }
    let kept_refs: Vec<&Row> = kept.iter().collect();
    if let Some(r) = dropped.iter().find(|r| !redundant(r, &kept_refs)) {
        return Err(MultipathError::Inconsistent(format!("origin hyperplane is not implied: {:?}", r.to_f64())));
    }
    for i in 0..i_n {
        if kept.iter().all(|r| r.coef[i].is_zero()) {
            return Err(MultipathError::Inconsistent(format!("pair {i} is unbounded")));
        }
    }

    let certificates = kept.iter().map(|r| certificate(mspec, &pair_of, r)).collect::<Result<Vec<_>, _>>()?;
    let a = kept.iter().map(|r| r.to_f64().0).collect();
    let c = kept.iter().map(|r| r.to_f64().1).collect();
    Ok(ReducedRepresentation {
        a,
        c,
        a_exact: kept.iter().map(|r| r.coef.clone()).collect(),
        c_exact: kept.iter().map(|r| r.rhs.clone()).collect(),
        certificates,
        warnings,
    })
}

/// Maximises the row over `Y` directly: the optimum must reach the
/// right-hand side, and the maximiser is a point of `HY` on the hyperplane.
fn certificate(mspec: &MultipathSpec, pair_of: &[usize], row: &Row) -> Result<Certificate, MultipathError> {
    let (coef, rhs) = row.to_f64();
    let c: Vec<f64> = pair_of.iter().map(|&i| coef[i]).collect();
    match lp::maximize(&c, &mspec.abar, &mspec.cbar) {
        LpOutcome::Optimal { x, value } if (value - rhs).abs() <= 1e-8 * (1.0 + rhs.abs()) => {
            let mut lambda = vec![0.0; mspec.pairs()];
            for (k, &i) in pair_of.iter().enumerate() {
                lambda[i] += x[k];
            }
            Ok(Certificate { lambda, y: x })
        }
        other => Err(MultipathError::Inconsistent(format!(
            "row {:?} ≤ {rhs} does not support HY (LP gives {:?})",
            coef,
            other.value()
        ))),
    }
}

/// Mutual inclusion of `{Λ ≥ 0 : A₁Λ ≤ C₁}` and `{Λ ≥ 0 : A₂Λ ≤ C₂}`.
pub fn polytopes_equal(p1: &Polytope, p2: &Polytope, dim: usize) -> Result<bool, MultipathError> {
    for p in [p1, p2] {
        if p.a.len() != p.c.len() || p.a.iter().any(|r| r.len() != dim) {
            return Err(MultipathError::InvalidSpec("polytope rows must have one entry per pair".into()));
        }
    }
    Ok(contained(p1, p2)? && contained(p2, p1)?)
}

/// Whether `inner ⊆ outer`.
fn contained(inner: &Polytope, outer: &Polytope) -> Result<bool, MultipathError> {
    for (row, (a, &c)) in outer.a.iter().zip(&outer.c).enumerate() {
        match lp::maximize(a, &inner.a, &inner.c) {
            LpOutcome::Optimal { value, .. } => {
                if value > c + 1e-8 * (1.0 + c.abs()) {
                    return Ok(false);
                }
            }
            LpOutcome::Unbounded => return Err(MultipathError::Unbounded { row }),
            LpOutcome::Infeasible => {}
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalTraffic {
    pub holds: bool,
    /// For each resource, a route using that resource only.
    pub witnesses: Vec<Option<usize>>,
}

pub fn local_traffic_check(a: &[Vec<f64>]) -> LocalTraffic {
    let cols = a.first().map_or(0, Vec::len);
    let witnesses: Vec<Option<usize>> = (0..a.len())
        .map(|j| (0..cols).find(|&i| a[j][i] > 0.0 && (0..a.len()).all(|k| k == j || a[k][i] == 0.0)))
        .collect();
    LocalTraffic { holds: witnesses.iter().all(Option::is_some), witnesses }
}

/// Formats a rational as `p/q` (or `p` when integral).
pub fn format_rational(x: &BigRational) -> String {
    if x.denom() == &BigInt::one() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}
