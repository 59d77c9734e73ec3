//! Coordinate-ascent updates for the product approximation `ν^v × ν^λ`.
//!
//! Given `ν^λ = N(λ*, C_λ)` and `ρ = C_λ + (λ*)²`:
//!
//! ```text
//! C_v⁻¹ = ρ H*Γ⁻¹H + C₀⁻¹,          v* = C_v (λ* H*Γ⁻¹ d)
//! C_λ⁻¹ = Tr(C_v H*Γ⁻¹H) + ‖Hv*‖²_Γ + 1/σ,   λ* = C_λ (⟨v*, H*Γ⁻¹d⟩_M + λ̄/σ)
//! ```
//!
//! The eigenpairs of `G̃` do not depend on λ and are computed once per model.

use std::sync::Arc;

use crate::discretize::FieldVector;
use crate::error::{Error, Result};
use crate::forward::{DataVector, ForwardOperator};
use crate::lowrank::{gtilde_eigenpairs, EigenPairs, LowRankPosteriorCov, DEFAULT_OVERSAMPLE, DEFAULT_RANK};
use crate::par::Execution;
use crate::prior::{LambdaPrior, PriorOperator};

/// Gaussian approximation `ν^v = N(v*, C_v)`.
#[derive(Debug, Clone)]
pub struct VPosterior {
    pub v_star: FieldVector,
    pub cov: LowRankPosteriorCov,
}

/// Gaussian approximation `ν^λ = N(λ*, C_λ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaPosterior {
    pub lam_star: f64,
    pub c_lambda: f64,
}

impl LambdaPosterior {
    pub fn new(lam_star: f64, c_lambda: f64) -> Result<Self> {
        if !(c_lambda >= 0.0) || !lam_star.is_finite() || !c_lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("invalid lambda posterior ({lam_star}, {c_lambda})")));
        }
        Ok(Self { lam_star, c_lambda })
    }

    /// `ρ = C_λ + (λ*)²`, the second moment of λ.
    pub fn rho(&self) -> f64 {
        self.c_lambda + self.lam_star * self.lam_star
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub r_max: usize,
    pub oversample: usize,
    /// Initial λ; `None` starts from the hyper-prior mean.
    pub lambda0: Option<f64>,
    /// Initial `C_λ`. Zero makes the first v-update a fixed-scale solve.
    pub c_lambda0: f64,
    pub eig_seed: u64,
    pub execution: Execution,
}

impl Default for ViConfig {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 1500,
            r_max: DEFAULT_RANK,
            oversample: DEFAULT_OVERSAMPLE,
            lambda0: None,
            c_lambda0: 0.0,
            eig_seed: 0,
            execution: Execution::default(),
        }
    }
}

impl ViConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        if !(self.c_lambda0 >= 0.0) {
            return Err(Error::InvalidParameter("initial C_lambda must be >= 0".into()));
        }
        Ok(())
    }
}

/// One row of the iteration history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViRecord {
    pub iter: usize,
    pub lambda: f64,
    pub c_lambda: f64,
    /// Squared relative M-norm error of `λ*v*` against the truth, if supplied.
    pub rel_err: Option<f64>,
    /// `‖λ_k v_k − λ_{k−1}v_{k−1}‖_M / ‖λ_k v_k‖_M`.
    pub step_norm: f64,
    /// `|λ_k − λ_{k−1}| / |λ_{k−1}|`.
    pub lambda_step: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViTrace {
    pub records: Vec<ViRecord>,
}

#[derive(Debug, Clone)]
pub struct ViResult {
    pub v_post: VPosterior,
    pub lam_post: LambdaPosterior,
    pub trace: ViTrace,
    pub converged: bool,
}

impl ViResult {
    pub fn iterations(&self) -> usize {
        self.trace.records.len()
    }

    /// `u* = λ* v*`.
    pub fn u_mean(&self) -> FieldVector {
        self.v_post.v_star.scaled(self.lam_post.lam_star)
    }
}

/// Everything the coordinate updates need, with the λ-free pieces cached.
#[derive(Debug, Clone)]
pub struct NcpModel {
    prior: PriorOperator,
    lam_prior: LambdaPrior,
    forward: ForwardOperator,
    data: DataVector,
    eig: Arc<EigenPairs>,
    /// `H*Γ⁻¹d = τ H*d`.
    hstar_gamma_d: FieldVector,
}

impl NcpModel {
    pub fn new(
        prior: PriorOperator,
        lam_prior: LambdaPrior,
        forward: ForwardOperator,
        data: DataVector,
        cfg: &ViConfig,
    ) -> Result<Self> {
        data.check_against(&forward)?;
        let eig = gtilde_eigenpairs(&prior, &forward, data.tau, cfg.r_max, cfg.oversample, cfg.eig_seed, cfg.execution)?;
        Self::with_eigenpairs(prior, lam_prior, forward, data, Arc::new(eig))
    }

    pub fn with_eigenpairs(
        prior: PriorOperator,
        lam_prior: LambdaPrior,
        forward: ForwardOperator,
        data: DataVector,
        eig: Arc<EigenPairs>,
    ) -> Result<Self> {
        data.check_against(&forward)?;
        if prior.grid() != forward.grid() {
            return Err(Error::GridMismatch { expected: prior.grid().n(), got: forward.grid().n() });
        }
        let hstar_gamma_d = forward.apply_h_adjoint(&data.d)?.scaled(data.tau);
        Ok(Self { prior, lam_prior, forward, data, eig, hstar_gamma_d })
    }

    pub fn prior(&self) -> &PriorOperator {
        &self.prior
    }

    pub fn lam_prior(&self) -> &LambdaPrior {
        &self.lam_prior
    }

    pub fn forward(&self) -> &ForwardOperator {
        &self.forward
    }

    pub fn data(&self) -> &DataVector {
        &self.data
    }

    pub fn eig(&self) -> &Arc<EigenPairs> {
        &self.eig
    }

    /// New `ν^v` from the current `ν^λ`.
    pub fn update_v(&self, lam_post: &LambdaPosterior) -> Result<VPosterior> {
        let rho = lam_post.rho();
        if !(rho > 0.0) {
            return Err(Error::InvalidParameter("second moment of lambda must be positive".into()));
        }
        let cov = LowRankPosteriorCov::new(self.prior.clone(), self.eig.clone(), rho)?;
        let rhs: Vec<f64> = self.hstar_gamma_d.values().iter().map(|v| lam_post.lam_star * v).collect();
        let v = cov.apply_slice(&rhs);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("non-finite posterior mean".into()));
        }
        Ok(VPosterior { v_star: FieldVector::from_raw(self.prior.grid().clone(), v), cov })
    }

    /// New `ν^λ` from the current `ν^v`; the trace uses the `ρ` that built `C_v`.
    pub fn update_lambda(&self, v_post: &VPosterior) -> Result<LambdaPosterior> {
        let trace = v_post.cov.trace();
        let hv = self.forward.apply_h(&v_post.v_star)?;
        let misfit_prec = self.data.tau * hv.iter().map(|x| x * x).sum::<f64>();
        let precision = trace + misfit_prec + 1.0 / self.lam_prior.variance();
        if !(precision > 0.0 && precision.is_finite()) {
            return Err(Error::Numerical(format!("lambda precision is {precision}")));
        }
        let c_lambda = 1.0 / precision;
        let lam_star = c_lambda * (v_post.v_star.inner(&self.hstar_gamma_d) + self.lam_prior.mean() / self.lam_prior.variance());
        LambdaPosterior::new(lam_star, c_lambda)
    }
}

/// Free-function form of [`NcpModel::update_v`].
pub fn update_v(model: &NcpModel, lam_post: &LambdaPosterior) -> Result<VPosterior> {
    model.update_v(lam_post)
}

/// Free-function form of [`NcpModel::update_lambda`].
pub fn update_lambda(model: &NcpModel, v_post: &VPosterior) -> Result<LambdaPosterior> {
    model.update_lambda(v_post)
}

fn relative_step(new: f64, old: f64) -> f64 {
    if old.abs() < 1e-300 {
        (new - old).abs()
    } else {
        (new - old).abs() / old.abs()
    }
}

/// Alternates the two updates until
/// `max(‖u_k − u_{k−1}‖_M/‖u_k‖_M, |λ_k − λ_{k−1}|/|λ_{k−1}|) ≤ tol`
/// or `max_iter` is reached (reported through `converged = false`).
pub fn run_vi(model: &NcpModel, cfg: &ViConfig, truth: Option<&FieldVector>) -> Result<ViResult> {
    cfg.validate()?;
    if let Some(t) = truth {
        t.check_grid(model.prior.grid())?;
    }
    let lambda0 = cfg.lambda0.unwrap_or(model.lam_prior.mean());
    let mut lam_post = LambdaPosterior::new(lambda0, cfg.c_lambda0)?;
    let grid = model.prior.grid().clone();
    let mut u_prev = FieldVector::zeros(grid.clone());
    let mut trace = ViTrace::default();
    let mut converged = false;
    let mut v_post = None;
    for iter in 1..=cfg.max_iter {
        let vp = model.update_v(&lam_post)?;
        let next = model.update_lambda(&vp)?;
        let u = vp.v_star.scaled(next.lam_star);
        let diff = u.sub(&u_prev).norm();
        let unorm = u.norm();
        let step_norm = if unorm < 1e-300 { diff } else { diff / unorm };
        let lambda_step = relative_step(next.lam_star, lam_post.lam_star);
        let rel_err = truth.map(|t| {
            let e = u.sub(t).norm();
            (e * e) / t.inner(t)
        });
        trace.records.push(ViRecord { iter, lambda: next.lam_star, c_lambda: next.c_lambda, rel_err, step_norm, lambda_step });
        lam_post = next;
        u_prev = u;
        v_post = Some(vp);
        if step_norm.max(lambda_step) <= cfg.tol {
            converged = true;
            break;
        }
    }
    let v_post = v_post.expect("max_iter >= 1");
    // ν^v is reported at the final ρ so that both factors are mutually consistent.
    Ok(ViResult { v_post, lam_post, trace, converged })
}
