//! Non-centered mean-field variational inference for hierarchical linear
//! inverse problems on a 1D elliptic model.
//!
//! The unknown field is parameterized as `u = λv` with `v ~ N(0, C₀)` and a
//! Gaussian hyper-prior on the scale `λ`. [`vi::run_vi`] computes the
//! product-Gaussian approximation `ν^v × ν^λ` by closed-form coordinate
//! updates; [`gibbs::run_chain`] is a pCN-within-Gibbs sampler of the exact
//! posterior used as a reference.

pub mod diagnostics;
pub mod discretize;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod gibbs;
pub mod io;
pub mod lowrank;
pub mod par;
pub mod prior;
pub mod vi;

pub use discretize::{build_grid, Boundary, FieldVector, Grid1D, SymTridiagonal};
pub use error::{Error, Result};
pub use forward::{DataVector, ForwardOperator};
pub use lowrank::{EigenPairs, LowRankPosteriorCov};
pub use par::Execution;
pub use prior::{LambdaPrior, PriorOperator};
pub use vi::{LambdaPosterior, VPosterior, ViConfig, ViTrace};
