//! Flow-level bandwidth sharing under weighted α-fair allocation.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: network descriptions, workload, heavy-traffic sequences and
//!   the mixture-of-exponentials route split.
//! * [`alloc`]: the α-fair allocation and its Lagrange duals.
//! * [`fluid`]: the fluid ODE, the Lyapunov function, the lifting map Δ and
//!   the invariant manifold.
//! * [`cone`]: workload-cone geometry for proportional fairness, the
//!   completely-S and skew-symmetry checks, and the two-resource wedge.
//! * [`ctmc`]: exact event-driven simulation of the flow-count chain,
//!   path scaling, the state-space-collapse statistic and stationary laws.
//! * [`srbm`]: reflected Brownian motion in the workload cone, simulated in
//!   the dual orthant.
//! * [`multipath`]: reduction of multi-path routing to a single constraint
//!   matrix by Fourier–Motzkin elimination.

pub mod alloc;
pub mod cone;
pub mod ctmc;
pub mod fluid;
pub mod linalg;
pub mod lp;
pub mod model;
pub mod multipath;
pub mod rng;
pub mod srbm;

mod optim;

pub use alloc::{allocate, AllocError, AllocationResult};
pub use model::{FlowState, ModelError, NetworkSpec};

/// Version string written at the top of every CSV/JSON artifact.
pub const SCHEMA_VERSION: &str = "alphafair/v1";

/// Crate-level error: wraps the per-module errors so that callers can report
/// the originating module and a stable code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Fluid(#[from] fluid::FluidError),
    #[error(transparent)]
    Cone(#[from] cone::ConeError),
    #[error(transparent)]
    Ctmc(#[from] ctmc::CtmcError),
    #[error(transparent)]
    Srbm(#[from] srbm::SrbmError),
    #[error(transparent)]
    Multipath(#[from] multipath::MultipathError),
}

impl Error {
    /// Module where the failure originated; wrapped errors report the inner
    /// module.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Model(_) => "model",
            Error::Alloc(e) => alloc_origin(e),
            Error::Fluid(e) => fluid_origin(e),
            Error::Cone(e) => cone_origin(e),
            Error::Ctmc(e) => match e {
                ctmc::CtmcError::Model(_) => "model",
                ctmc::CtmcError::Alloc(a) => alloc_origin(a),
                ctmc::CtmcError::Fluid(f) => fluid_origin(f),
                _ => "ctmc",
            },
            Error::Srbm(e) => match e {
                srbm::SrbmError::Model(_) => "model",
                srbm::SrbmError::Cone(c) => cone_origin(c),
                _ => "srbm",
            },
            Error::Multipath(multipath::MultipathError::Model(_)) => "model",
            Error::Multipath(_) => "multipath",
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Error::Model(e) => e.code(),
            Error::Alloc(e) => e.code(),
            Error::Fluid(e) => e.code(),
            Error::Cone(e) => e.code(),
            Error::Ctmc(e) => e.code(),
            Error::Srbm(e) => e.code(),
            Error::Multipath(e) => e.code(),
        }
    }
}

fn alloc_origin(e: &AllocError) -> &'static str {
    match e {
        AllocError::Model(_) => "model",
        _ => "alloc",
    }
}

fn fluid_origin(e: &fluid::FluidError) -> &'static str {
    match e {
        fluid::FluidError::Model(_) => "model",
        fluid::FluidError::Alloc(a) => alloc_origin(a),
        _ => "fluid",
    }
}

fn cone_origin(e: &cone::ConeError) -> &'static str {
    match e {
        cone::ConeError::Model(_) => "model",
        _ => "cone",
    }
}
