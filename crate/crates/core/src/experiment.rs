//! The 1D elliptic inverse-source problem: defaults, operator construction,
//! and data generation shared by the CLI, benches and acceptance tests.

use std::sync::Arc;

use crate::discretize::{build_grid, Boundary, FieldVector, Grid1D};
use crate::error::{Error, Result};
use crate::forward::{default_obs_points, default_truth, generate_data, DataVector, ForwardOperator, DEFAULT_ALPHA_PDE};
use crate::prior::{LambdaPrior, PriorOperator, DEFAULT_ALPHA};
use crate::vi::{run_vi, NcpModel, ViConfig, ViResult};

/// Fine mesh used to synthesize data.
pub const DEFAULT_FINE_N: usize = 10_000;
pub const DEFAULT_COARSE_N: usize = 100;
pub const DEFAULT_NOISE_PCT: f64 = 0.05;
pub const DEFAULT_MESHES: [usize; 5] = [100, 300, 500, 700, 900];

#[derive(Debug, Clone)]
pub struct ProblemSetup {
    pub alpha_prior: f64,
    /// Multiplier `s` in `C₀ = s(I − αΔ)⁻²`.
    pub prior_scale: f64,
    pub alpha_pde: f64,
    pub obs_points: Vec<f64>,
    pub lam_prior: LambdaPrior,
    pub n_fine: usize,
    pub noise_pct: f64,
    pub truth: fn(f64) -> f64,
}

impl Default for ProblemSetup {
    fn default() -> Self {
        Self {
            alpha_prior: DEFAULT_ALPHA,
            prior_scale: 1.0,
            alpha_pde: DEFAULT_ALPHA_PDE,
            obs_points: default_obs_points(),
            lam_prior: LambdaPrior::default(),
            n_fine: DEFAULT_FINE_N,
            noise_pct: DEFAULT_NOISE_PCT,
            truth: default_truth,
        }
    }
}

impl ProblemSetup {
    pub fn grid(&self, n: usize) -> Result<Arc<Grid1D>> {
        Ok(Arc::new(build_grid(n, Boundary::Neumann)?))
    }

    pub fn operators(&self, n: usize) -> Result<(PriorOperator, ForwardOperator)> {
        let g = self.grid(n)?;
        let prior = PriorOperator::with_scale(g.clone(), self.alpha_prior, self.prior_scale)?;
        let fwd = ForwardOperator::new(g, self.alpha_pde, self.obs_points.clone())?;
        Ok((prior, fwd))
    }

    /// Synthesizes data on the fine mesh. The result depends only on the
    /// observation points, so it can be shared across inversion meshes
    /// coarser than `n_fine`.
    pub fn generate_data(&self, seed: u64) -> Result<DataVector> {
        let probe = ForwardOperator::new(self.grid(11)?, self.alpha_pde, self.obs_points.clone())?;
        generate_data(self.truth, self.n_fine, &probe, self.noise_pct, seed)
    }

    pub fn truth_on(&self, grid: &Arc<Grid1D>) -> FieldVector {
        FieldVector::from_fn(grid.clone(), self.truth)
    }

    pub fn model(&self, n: usize, data: &DataVector, cfg: &ViConfig) -> Result<NcpModel> {
        if n >= self.n_fine {
            return Err(Error::InverseCrime { fine: self.n_fine, coarse: n });
        }
        let (prior, fwd) = self.operators(n)?;
        NcpModel::new(prior, self.lam_prior, fwd, data.clone(), cfg)
    }

    /// Builds the model on an `n`-node mesh and runs VI, tracking the error against the truth.
    pub fn solve(&self, n: usize, data: &DataVector, cfg: &ViConfig) -> Result<(NcpModel, ViResult)> {
        let model = self.model(n, data, cfg)?;
        let truth = self.truth_on(model.prior().grid());
        let res = run_vi(&model, cfg, Some(&truth))?;
        Ok((model, res))
    }
}
