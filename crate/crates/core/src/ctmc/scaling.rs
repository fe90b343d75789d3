//! Fluid and diffusion scaling of simulated paths, and the state-space
//! collapse statistic.

use std::collections::HashMap;

use super::{CtmcError, PathSample};
use crate::fluid;
use crate::linalg;
use crate::model::{self, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleMode {
    /// `N̄(t) = N(rt)/r`.
    Fluid,
    /// `N̂(t) = N(r²t)/r`, with workload `Ŵ = A M⁻¹ N̂`.
    Diffusion,
}

impl ScaleMode {
    fn time_factor(self, r: f64) -> f64 {
        match self {
            ScaleMode::Fluid => r,
            ScaleMode::Diffusion => r * r,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledPath {
    pub mode: ScaleMode,
    pub r: f64,
    pub times: Vec<f64>,
    pub n: Vec<Vec<f64>>,
    /// Scaled workload (diffusion mode only).
    pub w: Option<Vec<Vec<f64>>>,
    /// Index into the source path of the state sampled at each grid time.
    pub source_index: Vec<usize>,
}

/// Resamples `path` on the grid `0, dt, 2dt, …, horizon` of scaled time.
pub fn scale_path(
    spec: &NetworkSpec,
    path: &PathSample,
    r: f64,
    mode: ScaleMode,
    horizon: f64,
    dt: f64,
) -> Result<ScaledPath, CtmcError> {
    if !(r > 0.0) || !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(CtmcError::InvalidParameters(format!("r = {r}, dt = {dt}, horizon = {horizon}")));
    }
    if path.routes() != spec.routes() {
        return Err(crate::model::ModelError::DimensionMismatch {
            what: "path state",
            expected: spec.routes(),
            found: path.routes(),
        }
        .into());
    }
    let factor = mode.time_factor(r);
    let required = factor * horizon;
    if required > path.simulated_until * (1.0 + 1e-12) {
        return Err(CtmcError::HorizonTooShort { required, available: path.simulated_until });
    }
    let steps = (horizon / dt).round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut n = Vec::with_capacity(steps + 1);
    let mut source_index = Vec::with_capacity(steps + 1);
    let mut k = 0;
    for s in 0..=steps {
        let t = if s == steps { horizon } else { s as f64 * dt };
        let real = (factor * t).min(path.simulated_until);
        while k + 1 < path.len() && path.event_times[k + 1] <= real {
            k += 1;
        }
        times.push(t);
        n.push(path.states[k].iter().map(|&v| v as f64 / r).collect::<Vec<f64>>());
        source_index.push(k);
    }
    let w = match mode {
        ScaleMode::Fluid => None,
        ScaleMode::Diffusion => Some(n.iter().map(|x| model::workload(spec, x)).collect::<Result<Vec<_>, _>>()?),
    };
    Ok(ScaledPath { mode, r, times, n, w, source_index })
}

/// `sup_t |N̂(t) − Δ(Ŵ(t))| / (sup_t |N̂(t)| ∨ 1)` over the diffusion grid on
/// `[0, horizon]`, with `Δ` the lifting map of `spec`.
pub fn ssc_statistic(
    spec: &NetworkSpec,
    path: &PathSample,
    r: f64,
    horizon: f64,
    dt: f64,
) -> Result<f64, CtmcError> {
    let scaled = scale_path(spec, path, r, ScaleMode::Diffusion, horizon, dt)?;
    let w = scaled.w.as_ref().expect("diffusion mode carries workload");
    let mut gaps: HashMap<usize, f64> = HashMap::new();
    let mut sup_gap = 0.0_f64;
    let mut sup_n = 0.0_f64;
    for (g, &k) in scaled.source_index.iter().enumerate() {
        let gap = match gaps.get(&k) {
            Some(&v) => v,
            None => {
                let lifted = fluid::lift_delta(spec, &w[g])?;
                let v = linalg::dist2(&scaled.n[g], &lifted);
                gaps.insert(k, v);
                v
            }
        };
        sup_gap = sup_gap.max(gap);
        sup_n = sup_n.max(linalg::norm2(&scaled.n[g]));
    }
    Ok(sup_gap / sup_n.max(1.0))
}
