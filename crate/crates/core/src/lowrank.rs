//! Low-rank structure of the posterior covariance.
//!
//! The prior-preconditioned misfit operator `G̃ = C₀^{1/2} H* Γ⁻¹ H C₀^{1/2}`
//! is λ-independent, so its dominant eigenpairs are computed once by a
//! randomized double-pass eigensolver. For any `ρ = C_λ + (λ*)²`:
//!
//! ```text
//! C_v = C₀^{1/2} (ρG̃ + I)⁻¹ C₀^{1/2} ≈ C₀^{1/2} (I − V_r D_r V_rᵀM) C₀^{1/2},  d_i = ρξ_i/(ρξ_i + 1)
//! Tr(C_v H* Γ⁻¹ H)  = Tr((ρG̃ + I)⁻¹ G̃) ≈ Σ ξ_i/(ρξ_i + 1)
//! ```

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::discretize::{FieldVector, Grid1D};
use crate::error::{Error, Result};
use crate::forward::ForwardOperator;
use crate::par::{self, Execution};
use crate::prior::PriorOperator;

/// Default number of retained eigenpairs.
pub const DEFAULT_RANK: usize = 10;
/// Default number of extra random probes.
pub const DEFAULT_OVERSAMPLE: usize = 10;

/// `G̃f = C₀^{1/2} H* τ H C₀^{1/2} f`.
pub fn gtilde_matvec(prior: &PriorOperator, forward: &ForwardOperator, tau: f64, f: &FieldVector) -> Result<FieldVector> {
    f.check_grid(prior.grid())?;
    f.check_grid(forward.grid())?;
    let mut out = vec![0.0; f.len()];
    gtilde_slice(prior, forward, tau, f.values(), &mut out);
    Ok(FieldVector::from_raw(prior.grid().clone(), out))
}

pub(crate) fn gtilde_slice(prior: &PriorOperator, forward: &ForwardOperator, tau: f64, f: &[f64], out: &mut [f64]) {
    let mut x = f.to_vec();
    prior.sqrt_in_place(&mut x);
    let mut y = vec![0.0; forward.n_obs()];
    forward.apply_h_slice(&x, &mut y);
    y.iter_mut().for_each(|v| *v *= tau);
    forward.apply_h_adjoint_slice(&y, out);
    prior.sqrt_in_place(out);
}

/// Dominant eigenpairs of an M-self-adjoint PSD operator.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPairs {
    xis: Vec<f64>,
    vecs: Vec<FieldVector>,
    rank_deficient: bool,
}

impl EigenPairs {
    pub fn new(xis: Vec<f64>, vecs: Vec<FieldVector>) -> Result<Self> {
        if xis.len() != vecs.len() {
            return Err(Error::DimensionMismatch { expected: xis.len(), got: vecs.len() });
        }
        if xis.iter().any(|x| !(*x >= 0.0)) || xis.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidParameter("eigenvalues must be nonnegative and descending".into()));
        }
        Ok(Self { xis, vecs, rank_deficient: false })
    }

    pub fn empty() -> Self {
        Self { xis: Vec::new(), vecs: Vec::new(), rank_deficient: false }
    }

    pub fn xis(&self) -> &[f64] {
        &self.xis
    }

    pub fn vecs(&self) -> &[FieldVector] {
        &self.vecs
    }

    pub fn len(&self) -> usize {
        self.xis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xis.is_empty()
    }

    /// Set when the random probe block collapsed to a lower rank than requested.
    pub fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    /// Keeps only the leading `r` pairs.
    pub fn truncated(&self, r: usize) -> Self {
        let r = r.min(self.len());
        Self { xis: self.xis[..r].to_vec(), vecs: self.vecs[..r].to_vec(), rank_deficient: self.rank_deficient }
    }

    /// Number of pairs with `ρξ ≥ 1`.
    pub fn count_informed(&self, rho: f64) -> usize {
        self.xis.iter().filter(|&&x| rho * x >= 1.0).count()
    }
}

/// M-orthonormalizes `cols` in place by modified Gram-Schmidt with one
/// reorthogonalization pass. Columns that collapse are dropped.
fn m_orthonormalize(grid: &Grid1D, cols: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let scale = cols.iter().map(|c| grid.norm(c)).fold(0.0, f64::max);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    if scale == 0.0 {
        return q;
    }
    for mut c in cols {
        let orig = grid.norm(&c);
        for _pass in 0..2 {
            for qj in &q {
                let proj = grid.inner(qj, &c);
                c.iter_mut().zip(qj).for_each(|(ci, qi)| *ci -= proj * qi);
            }
        }
        let nrm = grid.norm(&c);
        if nrm <= 1e-10 * scale || nrm <= 1e-12 * orig {
            continue;
        }
        c.iter_mut().for_each(|v| *v /= nrm);
        q.push(c);
    }
    q
}

/// Randomized double-pass eigensolver for an operator that is self-adjoint
/// and PSD in the mass inner product of `grid`.
///
/// Uses `2(r + oversample)` applications of `matvec`; each pass runs as one
/// batch under `exec`.
pub fn double_pass_eig<F>(
    grid: &Arc<Grid1D>,
    matvec: F,
    r: usize,
    oversample: usize,
    seed: u64,
    exec: Execution,
) -> Result<EigenPairs>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync + Send,
{
    let n = grid.n();
    let k = r + oversample;
    if k > n {
        return Err(Error::InvalidParameter(format!("rank + oversample = {k} exceeds dimension {n}")));
    }
    if r == 0 {
        return Ok(EigenPairs::empty());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let y = par::map(exec, &omega, |w| matvec(w));
    let q = m_orthonormalize(grid, y);
    let kq = q.len();
    let rank_deficient = kq < k;
    if kq == 0 {
        return Ok(EigenPairs { xis: Vec::new(), vecs: Vec::new(), rank_deficient });
    }
    let z = par::map(exec, &q, |qi| matvec(qi));
    let mut t = DMatrix::from_fn(kq, kq, |i, j| grid.inner(&q[i], &z[j]));
    t = (&t + t.transpose()) * 0.5;
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..kq).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let keep = r.min(kq);
    let mut xis = Vec::with_capacity(keep);
    let mut vecs = Vec::with_capacity(keep);
    for &idx in order.iter().take(keep) {
        xis.push(eig.eigenvalues[idx].max(0.0));
        let mut v = vec![0.0; n];
        for (j, qj) in q.iter().enumerate() {
            let c = eig.eigenvectors[(j, idx)];
            v.iter_mut().zip(qj).for_each(|(vi, qi)| *vi += c * qi);
        }
        vecs.push(FieldVector::from_raw(grid.clone(), v));
    }
    Ok(EigenPairs { xis, vecs, rank_deficient })
}

/// Eigenpairs of `G̃` for a given prior, forward map and noise precision.
pub fn gtilde_eigenpairs(
    prior: &PriorOperator,
    forward: &ForwardOperator,
    tau: f64,
    r: usize,
    oversample: usize,
    seed: u64,
    exec: Execution,
) -> Result<EigenPairs> {
    if prior.grid() != forward.grid() {
        return Err(Error::GridMismatch { expected: prior.grid().n(), got: forward.grid().n() });
    }
    let k = (r + oversample).min(prior.grid().n());
    let over = k - r.min(k);
    double_pass_eig(
        prior.grid(),
        |f| {
            let mut out = vec![0.0; f.len()];
            gtilde_slice(prior, forward, tau, f, &mut out);
            out
        },
        r.min(k),
        over,
        seed,
        exec,
    )
}

/// `Σ ξ_i/(ρξ_i + 1)` over the retained pairs.
pub fn trace_lowrank(eig: &EigenPairs, rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    Ok(eig.xis.iter().map(|x| x / (rho * x + 1.0)).sum())
}

/// `C_v` at a fixed `ρ`, held as prior plus a rank-r correction.
#[derive(Debug, Clone)]
pub struct LowRankPosteriorCov {
    prior: PriorOperator,
    eig: Arc<EigenPairs>,
    rho: f64,
    dr: Vec<f64>,
}

impl LowRankPosteriorCov {
    pub fn new(prior: PriorOperator, eig: Arc<EigenPairs>, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
        }
        if let Some(v) = eig.vecs.first() {
            v.check_grid(prior.grid())?;
        }
        let dr = eig.xis.iter().map(|x| rho * x / (rho * x + 1.0)).collect();
        Ok(Self { prior, eig, rho, dr })
    }

    pub fn prior(&self) -> &PriorOperator {
        &self.prior
    }

    pub fn eig(&self) -> &Arc<EigenPairs> {
        &self.eig
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn dr(&self) -> &[f64] {
        &self.dr
    }

    /// `Tr(C_v H*Γ⁻¹H)` at this `ρ`.
    pub fn trace(&self) -> f64 {
        self.eig.xis.iter().map(|x| x / (self.rho * x + 1.0)).sum()
    }

    pub(crate) fn apply_slice(&self, f: &[f64]) -> Vec<f64> {
        let grid = self.prior.grid();
        let mut x = f.to_vec();
        self.prior.sqrt_in_place(&mut x);
        let coeffs: Vec<f64> = self.eig.vecs.iter().zip(&self.dr).map(|(v, d)| d * grid.inner(v.values(), &x)).collect();
        for (v, c) in self.eig.vecs.iter().zip(coeffs) {
            x.iter_mut().zip(v.values()).for_each(|(xi, vi)| *xi -= c * vi);
        }
        self.prior.sqrt_in_place(&mut x);
        x
    }

    /// `C_v f ≈ C₀^{1/2}(I − V_r D_r V_rᵀM)C₀^{1/2} f`.
    pub fn smw_apply(&self, f: &FieldVector) -> Result<FieldVector> {
        f.check_grid(self.prior.grid())?;
        Ok(FieldVector::from_raw(self.prior.grid().clone(), self.apply_slice(f.values())))
    }

    /// `ṽ_k = C₀^{1/2} v_k`.
    pub fn tilde_vectors(&self) -> Vec<Vec<f64>> {
        self.eig
            .vecs
            .iter()
            .map(|v| {
                let mut x = v.values().to_vec();
                self.prior.sqrt_in_place(&mut x);
                x
            })
            .collect()
    }

    /// Column `j` of the nodal covariance `C_v M⁻¹`.
    pub fn nodal_column(&self, j: usize, tilde: &[Vec<f64>]) -> Vec<f64> {
        let n = self.prior.grid().n();
        let mut e = vec![0.0; n];
        e[j] = 1.0 / self.prior.grid().mass();
        self.prior.sqrt_in_place(&mut e);
        self.prior.sqrt_in_place(&mut e);
        for (t, d) in tilde.iter().zip(&self.dr) {
            let c = d * t[j];
            e.iter_mut().zip(t).for_each(|(ei, ti)| *ei -= c * ti);
        }
        e
    }
}

/// `LowRankPosteriorCov::smw_apply` as a free function.
pub fn smw_apply(cov: &LowRankPosteriorCov, f: &FieldVector) -> Result<FieldVector> {
    cov.smw_apply(f)
}
