//! Gradient-based posterior sampling: a reverse-mode expression graph,
//! constraining transforms, a model builder, an HMC sampler with dual
//! averaging, and convergence diagnostics.

pub mod autodiff;
pub mod density;
pub mod diagnostics;
pub mod hmc;
pub mod transforms;

pub use autodiff::{Expr, Graph, Workspace};
pub use density::{grad_check, GraphDensity, LogDensity, ModelBuilder};
pub use diagnostics::{diagnostics, ess, rhat, ParamDiagnostics};
pub use hmc::{hmc_sample, HmcConfig, PosteriorDraws};
pub use transforms::{Block, ParamSpace, Transform};
