//! Non-centered pCN-within-Gibbs sampler for `(v, λ)`.
//!
//! Each sweep makes one pCN move on `v` at fixed λ and then draws λ from
//! its exact Gaussian conditional. Summaries are accumulated for
//! `u = λv` after burn-in and thinning.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::discretize::FieldVector;
use crate::error::{Error, Result};
use crate::forward::{misfit, DataVector, ForwardOperator};
use crate::par::{self, Execution};
use crate::prior::{LambdaPrior, PriorOperator};

/// Largest grid for which the full sample covariance is accumulated.
pub const DENSE_COV_MAX_N: usize = 200;

/// Off-diagonal offsets tracked when the full covariance is too large.
pub const DEFAULT_BAND_OFFSETS: [usize; 3] = [20, 40, 50];

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsConfig {
    pub beta: f64,
    /// Total sweeps per chain, burn-in included.
    pub n_samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Independent chains, pooled after burn-in.
    pub chains: usize,
    /// Wall-clock budget per chain; exceeding it yields a partial summary.
    pub max_seconds: Option<f64>,
    pub execution: Execution,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            n_samples: 100_000,
            burn_in: 10_000,
            thin: 1,
            seed: 0,
            chains: 1,
            max_seconds: None,
            execution: Execution::default(),
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidParameter(format!("beta must lie in (0,1], got {}", self.beta)));
        }
        if self.burn_in >= self.n_samples {
            return Err(Error::InvalidParameter(format!(
                "burn_in ({}) must be smaller than n_samples ({})",
                self.burn_in, self.n_samples
            )));
        }
        if self.thin == 0 || self.chains == 0 {
            return Err(Error::InvalidParameter("thin and chains must be at least 1".into()));
        }
        Ok(())
    }
}

/// Posterior target. `data = None` means `Φ ≡ 0`, so the chain samples the prior.
#[derive(Debug, Clone)]
pub struct GibbsTarget<'a> {
    pub prior: &'a PriorOperator,
    pub lam_prior: &'a LambdaPrior,
    pub forward: &'a ForwardOperator,
    pub data: Option<&'a DataVector>,
}

impl<'a> GibbsTarget<'a> {
    pub fn new(
        prior: &'a PriorOperator,
        lam_prior: &'a LambdaPrior,
        forward: &'a ForwardOperator,
        data: Option<&'a DataVector>,
    ) -> Result<Self> {
        if let Some(d) = data {
            d.check_against(forward)?;
        }
        if prior.grid() != forward.grid() {
            return Err(Error::GridMismatch { expected: prior.grid().n(), got: forward.grid().n() });
        }
        Ok(Self { prior, lam_prior, forward, data })
    }

    fn potential(&self, hv: &[f64], lam: f64) -> f64 {
        match self.data {
            Some(d) => misfit(hv, lam, d),
            None => 0.0,
        }
    }

    /// Mean and variance of λ given `Hv`.
    pub fn lambda_conditional(&self, hv: &[f64]) -> (f64, f64) {
        let (prec, shift) = self.lambda_natural(hv);
        (shift / prec, 1.0 / prec)
    }

    /// `(P, h)` with `log π(λ | v) = −½Pλ² + hλ + const`.
    fn lambda_natural(&self, hv: &[f64]) -> (f64, f64) {
        let (mean0, var0) = (self.lam_prior.mean(), self.lam_prior.variance());
        let Some(d) = self.data else {
            return (1.0 / var0, mean0 / var0);
        };
        let hh: f64 = hv.iter().map(|x| x * x).sum();
        let dh: f64 = hv.iter().zip(&d.d).map(|(a, b)| a * b).sum();
        (d.tau * hh + 1.0 / var0, d.tau * dh + mean0 / var0)
    }
}

/// Current chain position with cached `Hv` and `Φ(v, λ)`.
#[derive(Debug, Clone)]
pub struct GibbsState {
    pub v: Vec<f64>,
    pub lam: f64,
    hv: Vec<f64>,
    phi: f64,
}

impl GibbsState {
    pub fn new(target: &GibbsTarget, v: Vec<f64>, lam: f64) -> Result<Self> {
        if v.len() != target.prior.grid().n() {
            return Err(Error::DimensionMismatch { expected: target.prior.grid().n(), got: v.len() });
        }
        let mut hv = vec![0.0; target.forward.n_obs()];
        target.forward.apply_h_slice(&v, &mut hv);
        let phi = target.potential(&hv, lam);
        Ok(Self { v, lam, hv, phi })
    }

    pub fn hv(&self) -> &[f64] {
        &self.hv
    }

    pub fn potential(&self) -> f64 {
        self.phi
    }
}

/// One pCN move on `v` at fixed λ. Returns whether the proposal was accepted.
pub fn pcn_v_step<R: Rng + ?Sized>(target: &GibbsTarget, state: &mut GibbsState, beta: f64, rng: &mut R) -> bool {
    let n = state.v.len();
    let mut prop = vec![0.0; n];
    target.prior.sample_into(rng, &mut prop);
    let keep = (1.0 - beta * beta).sqrt();
    for (p, v) in prop.iter_mut().zip(&state.v) {
        *p = keep * v + beta * *p;
    }
    let mut hv = vec![0.0; state.hv.len()];
    target.forward.apply_h_slice(&prop, &mut hv);
    let phi = target.potential(&hv, state.lam);
    let log_a = state.phi - phi;
    let u: f64 = rng.random();
    if log_a >= 0.0 || u.ln() < log_a {
        state.v = prop;
        state.hv = hv;
        state.phi = phi;
        true
    } else {
        false
    }
}

/// Draws λ from its conditional and applies the Metropolis correction.
/// Returns the log acceptance ratio, which is zero up to round-off because
/// the proposal is the exact conditional.
pub fn lambda_gibbs_step<R: Rng + ?Sized>(target: &GibbsTarget, state: &mut GibbsState, rng: &mut R) -> f64 {
    let proposal = target.lambda_natural(&state.hv);
    let (mean, sd) = (proposal.1 / proposal.0, (1.0 / proposal.0).sqrt());
    let z: f64 = rng.sample(StandardNormal);
    let prop = mean + sd * z;
    let log_ratio = lambda_log_ratio(target, &state.hv, state.lam, prop, proposal);
    let u: f64 = rng.random();
    if log_ratio >= 0.0 || u.ln() < log_ratio {
        state.lam = prop;
        state.phi = target.potential(&state.hv, prop);
    }
    log_ratio
}

/// `log π(x)q(y) − log π(y)q(x)` for moving λ from `y` to `x` under a
/// Gaussian proposal with natural parameters `(P_q, h_q)`. Both densities
/// are quadratic in λ, so the ratio is `(x − y)[(x + y)/2·(P_q − P_π) + h_π − h_q]`.
fn lambda_log_ratio(target: &GibbsTarget, hv: &[f64], y: f64, x: f64, proposal: (f64, f64)) -> f64 {
    let (p_pi, h_pi) = target.lambda_natural(hv);
    let (p_q, h_q) = proposal;
    (x - y) * (0.5 * (x + y) * (p_q - p_pi) + (h_pi - h_q))
}

/// Streaming first and second moments of a vector, mergeable across chains.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    count: u64,
    mean: Vec<f64>,
    store: CoMoments,
}

#[derive(Debug, Clone, PartialEq)]
enum CoMoments {
    /// Full co-moment matrix, row-major.
    Dense(Vec<f64>),
    /// Diagonal plus `x_i x_{i+k}` co-moments for each offset.
    Banded { diag: Vec<f64>, offsets: Vec<usize>, bands: Vec<Vec<f64>> },
}

impl MomentAccumulator {
    pub fn dense(n: usize) -> Self {
        Self { count: 0, mean: vec![0.0; n], store: CoMoments::Dense(vec![0.0; n * n]) }
    }

    pub fn banded(n: usize, offsets: &[usize]) -> Self {
        let offsets: Vec<usize> = offsets.iter().copied().filter(|&k| k > 0 && k < n).collect();
        let bands = offsets.iter().map(|k| vec![0.0; n - k]).collect();
        Self { count: 0, mean: vec![0.0; n], store: CoMoments::Banded { diag: vec![0.0; n], offsets, bands } }
    }

    /// Dense for small grids, banded otherwise.
    pub fn for_grid(n: usize) -> Self {
        if n <= DENSE_COV_MAX_N {
            Self::dense(n)
        } else {
            Self::banded(n, &DEFAULT_BAND_OFFSETS)
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn push(&mut self, x: &[f64]) {
        let n = self.mean.len();
        self.count += 1;
        let c = self.count as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d / c;
        }
        let after: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        match &mut self.store {
            CoMoments::Dense(cm) => {
                for i in 0..n {
                    let row = &mut cm[i * n..(i + 1) * n];
                    let di = delta[i];
                    for (r, a) in row.iter_mut().zip(&after) {
                        *r += di * a;
                    }
                }
            }
            CoMoments::Banded { diag, offsets, bands } => {
                for i in 0..n {
                    diag[i] += delta[i] * after[i];
                }
                for (k, band) in offsets.iter().zip(bands.iter_mut()) {
                    for (i, b) in band.iter_mut().enumerate() {
                        *b += delta[i] * after[i + k];
                    }
                }
            }
        }
    }

    /// Pooled moments of two sample sets.
    pub fn merge(&mut self, other: &MomentAccumulator) -> Result<()> {
        if self.mean.len() != other.mean.len() {
            return Err(Error::DimensionMismatch { expected: self.mean.len(), got: other.mean.len() });
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let n = self.mean.len();
        let (na, nb) = (self.count as f64, other.count as f64);
        let tot = na + nb;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        let w = na * nb / tot;
        match (&mut self.store, &other.store) {
            (CoMoments::Dense(a), CoMoments::Dense(b)) => {
                for i in 0..n {
                    for j in 0..n {
                        a[i * n + j] += b[i * n + j] + w * delta[i] * delta[j];
                    }
                }
            }
            (
                CoMoments::Banded { diag: da, offsets: oa, bands: ba },
                CoMoments::Banded { diag: db, offsets: ob, bands: bb },
            ) if oa == ob => {
                for i in 0..n {
                    da[i] += db[i] + w * delta[i] * delta[i];
                }
                for ((k, band_a), band_b) in oa.iter().zip(ba.iter_mut()).zip(bb) {
                    for (i, (x, y)) in band_a.iter_mut().zip(band_b).enumerate() {
                        *x += y + w * delta[i] * delta[i + k];
                    }
                }
            }
            _ => return Err(Error::InvalidParameter("cannot merge accumulators of different layouts".into())),
        }
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d * nb / tot;
        }
        self.count += other.count;
        Ok(())
    }

    fn denom(&self) -> f64 {
        (self.count.max(2) - 1) as f64
    }

    /// Unbiased sample variances.
    pub fn variance(&self) -> Vec<f64> {
        let n = self.mean.len();
        let s = self.denom();
        match &self.store {
            CoMoments::Dense(cm) => (0..n).map(|i| cm[i * n + i] / s).collect(),
            CoMoments::Banded { diag, .. } => diag.iter().map(|d| d / s).collect(),
        }
    }

    /// Sample covariances `c(x_i, x_{i+k})`, `None` if offset `k` was not tracked.
    pub fn band(&self, k: usize) -> Option<Vec<f64>> {
        let n = self.mean.len();
        if k == 0 {
            return Some(self.variance());
        }
        if k >= n {
            return None;
        }
        let s = self.denom();
        match &self.store {
            CoMoments::Dense(cm) => Some((0..n - k).map(|i| 0.5 * (cm[i * n + i + k] + cm[(i + k) * n + i]) / s).collect()),
            CoMoments::Banded { offsets, bands, .. } => {
                let pos = offsets.iter().position(|&o| o == k)?;
                Some(bands[pos].iter().map(|b| b / s).collect())
            }
        }
    }

    /// Full sample covariance when accumulated densely.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        let n = self.mean.len();
        let s = self.denom();
        match &self.store {
            CoMoments::Dense(cm) => {
                let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (cm[i * n + j] + cm[j * n + i]) / s);
                Some(m)
            }
            CoMoments::Banded { .. } => None,
        }
    }
}

/// Post-burn-in summary of one or more pooled chains.
#[derive(Debug, Clone)]
pub struct ChainSummary {
    pub u_moments: MomentAccumulator,
    pub lambda_mean: f64,
    pub lambda_var: f64,
    pub acceptance_rate_v: f64,
    pub ess_lambda: f64,
    /// Kept λ values, chain after chain.
    pub lambda_trace: Vec<f64>,
    /// Set when a chain stopped on the wall-clock budget.
    pub truncated: bool,
    /// Largest `|log ratio|` seen in the λ step.
    pub max_lambda_log_ratio: f64,
    pub sweeps: usize,
    pub proposals_v: u64,
    pub accepted_v: u64,
}

impl ChainSummary {
    pub fn mean_u(&self, grid: &std::sync::Arc<crate::discretize::Grid1D>) -> Result<FieldVector> {
        FieldVector::new(grid.clone(), self.u_moments.mean().to_vec())
    }

    pub fn n_kept(&self) -> usize {
        self.lambda_trace.len()
    }
}

/// Effective sample size by Geyer's initial positive sequence.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = xs.iter().map(|x| x - mean).collect();
    let var = c.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return n as f64;
    }
    let acf = |lag: usize| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / (n as f64 * var);
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = acf(lag) + acf(lag + 1);
        if pair <= 0.0 {
            break;
        }
        // Monotone sequence estimator.
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        lag += 2;
    }
    let tau = (2.0 * sum - 1.0).max(1.0);
    n as f64 / tau
}

fn run_one(target: &GibbsTarget, cfg: &GibbsConfig, chain: u64, start: Option<(Vec<f64>, f64)>) -> Result<ChainSummary> {
    let n = target.prior.grid().n();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain);
    let (v0, lam0) = match start {
        Some(s) => s,
        // The posterior is symmetric under (v, λ) → (−v, −λ) up to the weak
        // hyper-prior; starting at λ̄ > 0 selects the positive mode.
        None => (vec![0.0; n], target.lam_prior.mean()),
    };
    let mut state = GibbsState::new(target, v0, lam0)?;
    let mut acc = MomentAccumulator::for_grid(n);
    let mut trace = Vec::with_capacity((cfg.n_samples - cfg.burn_in) / cfg.thin + 1);
    let (mut lam_mean, mut lam_m2) = (0.0, 0.0);
    let (mut accepted, mut proposals) = (0u64, 0u64);
    let mut max_ratio: f64 = 0.0;
    let mut u = vec![0.0; n];
    let clock = Instant::now();
    let mut truncated = false;
    let mut sweeps = 0;
    for it in 0..cfg.n_samples {
        if let Some(limit) = cfg.max_seconds {
            if it % 1000 == 0 && clock.elapsed().as_secs_f64() > limit {
                truncated = true;
                break;
            }
        }
        proposals += 1;
        if pcn_v_step(target, &mut state, cfg.beta, &mut rng) {
            accepted += 1;
        }
        let r = lambda_gibbs_step(target, &mut state, &mut rng);
        max_ratio = max_ratio.max(r.abs());
        sweeps = it + 1;
        if it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
            for (ui, vi) in u.iter_mut().zip(&state.v) {
                *ui = state.lam * vi;
            }
            acc.push(&u);
            trace.push(state.lam);
            let k = trace.len() as f64;
            let d = state.lam - lam_mean;
            lam_mean += d / k;
            lam_m2 += d * (state.lam - lam_mean);
        }
    }
    if trace.len() < 2 {
        return Err(Error::Numerical("chain kept fewer than two samples".into()));
    }
    let ess = effective_sample_size(&trace);
    Ok(ChainSummary {
        u_moments: acc,
        lambda_mean: lam_mean,
        lambda_var: lam_m2 / (trace.len() - 1) as f64,
        acceptance_rate_v: accepted as f64 / proposals.max(1) as f64,
        ess_lambda: ess,
        lambda_trace: trace,
        truncated,
        max_lambda_log_ratio: max_ratio,
        sweeps,
        proposals_v: proposals,
        accepted_v: accepted,
    })
}

/// Pools independently run chains into one summary.
pub fn merge_summaries(parts: Vec<ChainSummary>) -> Result<ChainSummary> {
    let mut it = parts.into_iter();
    let mut out = it.next().ok_or_else(|| Error::InvalidParameter("no chains to merge".into()))?;
    let mut lam_m2 = out.lambda_var * (out.n_kept() - 1) as f64;
    for p in it {
        out.u_moments.merge(&p.u_moments)?;
        let (na, nb) = (out.n_kept() as f64, p.n_kept() as f64);
        let d = p.lambda_mean - out.lambda_mean;
        lam_m2 += p.lambda_var * (nb - 1.0) + d * d * na * nb / (na + nb);
        out.lambda_mean += d * nb / (na + nb);
        out.lambda_trace.extend_from_slice(&p.lambda_trace);
        out.ess_lambda += p.ess_lambda;
        out.truncated |= p.truncated;
        out.max_lambda_log_ratio = out.max_lambda_log_ratio.max(p.max_lambda_log_ratio);
        out.sweeps += p.sweeps;
        out.proposals_v += p.proposals_v;
        out.accepted_v += p.accepted_v;
    }
    out.lambda_var = lam_m2 / (out.n_kept() - 1) as f64;
    out.acceptance_rate_v = out.accepted_v as f64 / out.proposals_v.max(1) as f64;
    Ok(out)
}

/// Runs `cfg.chains` chains (in parallel when enabled) from `(0, λ̄)` and pools them.
pub fn run_chain(target: &GibbsTarget, cfg: &GibbsConfig) -> Result<ChainSummary> {
    run_chain_from(target, cfg, None)
}

/// Like [`run_chain`] but every chain starts at the given `(v, λ)`.
pub fn run_chain_from(target: &GibbsTarget, cfg: &GibbsConfig, start: Option<(&FieldVector, f64)>) -> Result<ChainSummary> {
    cfg.validate()?;
    if let Some((v, _)) = start {
        v.check_grid(target.prior.grid())?;
    }
    let start = start.map(|(v, l)| (v.values().to_vec(), l));
    let parts: Vec<Result<ChainSummary>> =
        par::map_range(cfg.execution, cfg.chains, |c| run_one(target, cfg, c as u64, start.clone()));
    merge_summaries(parts.into_iter().collect::<Result<Vec<_>>>()?)
}
