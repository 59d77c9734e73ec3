//! Comparisons between approximations: relative errors, Gaussian KL,
//! covariance fields and bands, credibility bands, the CP/NCP density
//! relation, and mesh sweeps.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::discretize::FieldVector;
use crate::error::{Error, Result};
use crate::experiment::ProblemSetup;
use crate::forward::{DataVector, ForwardOperator};
use crate::gibbs::MomentAccumulator;
use crate::par::{self, Execution};
use crate::prior::{LambdaPrior, PriorOperator};
use crate::vi::{LambdaPosterior, VPosterior, ViConfig};

/// `‖u_est − u_truth‖²_M / ‖u_truth‖²_M`.
pub fn relative_error(u_est: &FieldVector, u_truth: &FieldVector) -> Result<f64> {
    u_est.check_grid(u_truth.grid())?;
    let den = u_truth.inner(u_truth);
    if den == 0.0 {
        return Err(Error::InvalidData("reference field has zero norm".into()));
    }
    let e = u_est.sub(u_truth).norm();
    Ok(e * e / den)
}

/// `KL(N(m1, v1) ‖ N(m2, v2))` with variances, not standard deviations.
pub fn kl_gaussian_1d(p: (f64, f64), q: (f64, f64)) -> Result<f64> {
    let ((m1, v1), (m2, v2)) = (p, q);
    if !(v1 > 0.0 && v2 > 0.0) {
        return Err(Error::InvalidParameter(format!("variances must be positive, got {v1} and {v2}")));
    }
    Ok(0.5 * (v2 / v1).ln() + (v1 - v2) / (2.0 * v2) + (m1 - m2).powi(2) / (2.0 * v2))
}

/// `Σ(a − b)² / Σb²`, with `b` the reference.
pub fn squared_relative_error(a: &[f64], reference: &[f64]) -> Result<f64> {
    if a.len() != reference.len() {
        return Err(Error::DimensionMismatch { expected: reference.len(), got: a.len() });
    }
    let den: f64 = reference.iter().map(|x| x * x).sum();
    if den == 0.0 {
        return Err(Error::InvalidData("reference has zero norm".into()));
    }
    Ok(a.iter().zip(reference).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / den)
}

/// Anything that can report nodal covariances `c(x_i, x_{i+k})`.
pub trait CovarianceSource {
    fn size(&self) -> usize;

    fn band(&self, k: usize) -> Result<Vec<f64>>;

    fn variance(&self) -> Result<Vec<f64>> {
        self.band(0)
    }

    /// The full nodal covariance, if available.
    fn dense(&self) -> Option<DMatrix<f64>>;
}

/// Nodal covariance of `u = λv` under the factorized posterior:
/// `Cov(u) = ρ C_v + C_λ v* v*ᵀ` with `C_v = C₀ − Σ_k d_k ṽ_k ṽ_kᵀ`.
#[derive(Debug, Clone)]
pub struct UCovariance {
    c0: DMatrix<f64>,
    tilde: Vec<Vec<f64>>,
    dr: Vec<f64>,
    rho: f64,
    c_lambda: f64,
    v_star: Vec<f64>,
}

impl UCovariance {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let mut cv = self.c0[(i, j)];
        for (t, d) in self.tilde.iter().zip(&self.dr) {
            cv -= d * (t[i] * t[j]);
        }
        self.rho * cv + self.c_lambda * (self.v_star[i] * self.v_star[j])
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn c_lambda(&self) -> f64 {
        self.c_lambda
    }
}

impl CovarianceSource for UCovariance {
    fn size(&self) -> usize {
        self.v_star.len()
    }

    fn band(&self, k: usize) -> Result<Vec<f64>> {
        let n = self.size();
        if k >= n {
            return Err(Error::InvalidParameter(format!("offset {k} must be below {n}")));
        }
        Ok((0..n - k).map(|i| self.entry(i, i + k)).collect())
    }

    fn dense(&self) -> Option<DMatrix<f64>> {
        let n = self.size();
        Some(DMatrix::from_fn(n, n, |i, j| self.entry(i, j)))
    }
}

impl CovarianceSource for MomentAccumulator {
    fn size(&self) -> usize {
        self.mean().len()
    }

    fn band(&self, k: usize) -> Result<Vec<f64>> {
        MomentAccumulator::band(self, k).ok_or_else(|| Error::InvalidParameter(format!("offset {k} was not accumulated")))
    }

    fn dense(&self) -> Option<DMatrix<f64>> {
        self.covariance()
    }
}

/// Symmetrized nodal prior covariance `s·A⁻¹M⁻¹A⁻¹`, built column by column
/// from tridiagonal solves.
pub fn prior_nodal_covariance(prior: &PriorOperator) -> DMatrix<f64> {
    let n = prior.grid().n();
    let inv_h = 1.0 / prior.grid().mass();
    let mut c = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = inv_h;
        prior.sqrt_in_place(&mut e);
        prior.sqrt_in_place(&mut e);
        c.set_column(j, &DVector::from_vec(e));
    }
    (&c + c.transpose()) * 0.5
}

#[derive(Debug, Clone)]
pub struct UPosterior {
    pub mean: FieldVector,
    pub cov: UCovariance,
}

/// Mean and covariance of `u = λv` for independent `v ~ ν^v`, `λ ~ ν^λ`.
pub fn u_posterior_moments(v_post: &VPosterior, lam_post: &LambdaPosterior) -> Result<UPosterior> {
    let cov_v = &v_post.cov;
    let rho = lam_post.rho();
    if (cov_v.rho() - rho).abs() > 1e-9 * rho {
        // C_v was built at a different ρ; rebuild it so both factors agree.
        let rebuilt = crate::lowrank::LowRankPosteriorCov::new(cov_v.prior().clone(), cov_v.eig().clone(), rho)?;
        return u_posterior_moments(&VPosterior { v_star: v_post.v_star.clone(), cov: rebuilt }, lam_post);
    }
    let mean = v_post.v_star.scaled(lam_post.lam_star);
    let cov = UCovariance {
        c0: prior_nodal_covariance(cov_v.prior()),
        tilde: cov_v.tilde_vectors(),
        dr: cov_v.dr().to_vec(),
        rho,
        c_lambda: lam_post.c_lambda,
        v_star: v_post.v_star.values().to_vec(),
    };
    Ok(UPosterior { mean, cov })
}

/// `{c(x_i, x_{i+k})}` for each requested offset.
pub fn covariance_bands<C: CovarianceSource + ?Sized>(cov: &C, offsets: &[usize]) -> Result<Vec<Vec<f64>>> {
    offsets.iter().map(|&k| cov.band(k)).collect()
}

/// Squared relative errors of `approx` against `reference`: one entry per
/// offset, plus the full matrix (Frobenius) when both sides have it.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceComparison {
    pub matrix: Option<f64>,
    pub bands: Vec<(usize, f64)>,
}

pub fn compare_covariances<A, B>(approx: &A, reference: &B, offsets: &[usize]) -> Result<CovarianceComparison>
where
    A: CovarianceSource + ?Sized,
    B: CovarianceSource + ?Sized,
{
    if approx.size() != reference.size() {
        return Err(Error::DimensionMismatch { expected: reference.size(), got: approx.size() });
    }
    let matrix = match (approx.dense(), reference.dense()) {
        (Some(a), Some(b)) => Some(squared_relative_error(a.as_slice(), b.as_slice())?),
        _ => None,
    };
    let bands = offsets
        .iter()
        .map(|&k| Ok((k, squared_relative_error(&approx.band(k)?, &reference.band(k)?)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CovarianceComparison { matrix, bands })
}

/// Two-sided standard normal quantile for a central `level` region.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("level must lie in (0,1), got {level}")));
    }
    let std = Normal::standard();
    Ok(std.inverse_cdf(0.5 + 0.5 * level))
}

/// Pointwise band `mean ± z·sqrt(variance)`.
pub fn credibility_band(mean: &FieldVector, variance: &[f64], level: f64) -> Result<(FieldVector, FieldVector)> {
    if variance.len() != mean.len() {
        return Err(Error::DimensionMismatch { expected: mean.len(), got: variance.len() });
    }
    if let Some(v) = variance.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidData(format!("negative variance {v}")));
    }
    let z = normal_quantile(level)?;
    let half: Vec<f64> = variance.iter().map(|v| z * v.sqrt()).collect();
    let lo = mean.values().iter().zip(&half).map(|(m, h)| m - h).collect();
    let hi = mean.values().iter().zip(&half).map(|(m, h)| m + h).collect();
    Ok((FieldVector::new(mean.grid().clone(), lo)?, FieldVector::new(mean.grid().clone(), hi)?))
}

/// Fraction of nodes where `lower ≤ f ≤ upper`.
pub fn band_coverage(f: &FieldVector, lower: &FieldVector, upper: &FieldVector) -> Result<f64> {
    f.check_grid(lower.grid())?;
    f.check_grid(upper.grid())?;
    let inside = f
        .values()
        .iter()
        .zip(lower.values().iter().zip(upper.values()))
        .filter(|(x, (l, u))| *l <= *x && *x <= *u)
        .count();
    Ok(inside as f64 / f.len() as f64)
}

/// Checks on random finite-dimensional problems that the CP and NCP
/// posterior log-densities differ by `N log|λ|` plus a constant.
///
/// The NCP side uses `C₀⁻¹` directly; the CP side factors `λ²C₀` with its
/// own Cholesky. Returns the largest deviation of the difference from its
/// value at the first accepted point. Points with `λ ≤ 0` are skipped.
pub fn cp_ncp_density_check(n_small: usize, n_points: usize, seed: u64) -> Result<f64> {
    if n_small == 0 || n_small > 10 {
        return Err(Error::InvalidParameter(format!("dimension must lie in 1..=10, got {n_small}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let nd = 4;
    let b = gauss(n_small, n_small);
    let c0 = &b * b.transpose() + DMatrix::identity(n_small, n_small) * (n_small as f64);
    let h = gauss(nd, n_small);
    let d = gauss(nd, 1).column(0).into_owned();
    let tau = 2.5;
    let lam_prior = LambdaPrior::new(1.0, 4.0)?;
    let c0_inv = c0.clone().try_inverse().ok_or_else(|| Error::Numerical("singular test covariance".into()))?;
    let misfit = |u: &DVector<f64>| 0.5 * tau * (&d - &h * u).norm_squared();

    let log_ncp = |v: &DVector<f64>, lam: f64| -misfit(&(v * lam)) - 0.5 * v.dot(&(&c0_inv * v)) + lam_prior.log_density(lam);
    let log_cp = |u: &DVector<f64>, lam: f64| -> Result<f64> {
        let chol = (&c0 * (lam * lam))
            .cholesky()
            .ok_or_else(|| Error::Numerical("scaled covariance is not positive definite".into()))?;
        let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let quad = u.dot(&chol.solve(u));
        Ok(-misfit(u) - 0.5 * quad - 0.5 * logdet + lam_prior.log_density(lam))
    };

    let mut reference = None;
    let mut worst: f64 = 0.0;
    for _ in 0..n_points {
        let lam: f64 = 1.0 + 2.0 * rng.sample::<f64, _>(StandardNormal);
        let v = DVector::from_fn(n_small, |_, _| rng.sample::<f64, _>(StandardNormal));
        if lam <= 0.0 {
            continue;
        }
        let u = &v * lam;
        let delta = log_cp(&u, lam)? - (log_ncp(&v, lam) - n_small as f64 * lam.abs().ln());
        match reference {
            None => reference = Some(delta),
            Some(r) => worst = worst.max((delta - r).abs()),
        }
    }
    Ok(worst)
}

/// Dense `H` as an `N_d × n` matrix acting on nodal values.
pub fn dense_forward_matrix(forward: &ForwardOperator) -> DMatrix<f64> {
    let n = forward.grid().n();
    let mut hm = DMatrix::zeros(forward.n_obs(), n);
    let mut out = vec![0.0; forward.n_obs()];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        forward.apply_h_slice(&e, &mut out);
        hm.set_column(j, &DVector::from_column_slice(&out));
    }
    hm
}

/// Mean and variance of the exact marginal posterior of λ restricted to
/// `λ > 0`, by quadrature of `N(d; 0, λ²HC₀H* + τ⁻¹I)·p₀(λ)`.
///
/// Given λ the model is linear-Gaussian, so this is an independent reference
/// for the λ-marginal of the sampler. Also returns the posterior mass ratio
/// of the `λ < 0` branch to the `λ > 0` branch.
pub fn lambda_marginal_positive(
    prior: &PriorOperator,
    forward: &ForwardOperator,
    data: &DataVector,
    lam_prior: &LambdaPrior,
    lam_max: f64,
    points: usize,
) -> Result<(f64, f64, f64)> {
    data.check_against(forward)?;
    if !(lam_max > 0.0) || points < 10 {
        return Err(Error::InvalidParameter("need lam_max > 0 and at least 10 points".into()));
    }
    let hm = dense_forward_matrix(forward);
    let s = &hm * prior_nodal_covariance(prior) * hm.transpose();
    let eig = s.symmetric_eigen();
    let proj = eig.eigenvectors.transpose() * DVector::from_column_slice(&data.d);
    let noise = 1.0 / data.tau;
    let log_p = |l: f64| {
        let mut v = lam_prior.log_density(l);
        for (e, p) in eig.eigenvalues.iter().zip(proj.iter()) {
            let q = l * l * e.max(0.0) + noise;
            v -= 0.5 * q.ln() + 0.5 * p * p / q;
        }
        v
    };
    let dx = lam_max / points as f64;
    let xs: Vec<f64> = (1..=points).map(|i| (i as f64 - 0.5) * dx).collect();
    let lp: Vec<f64> = xs.iter().map(|&x| log_p(x)).collect();
    let ln: Vec<f64> = xs.iter().map(|&x| log_p(-x)).collect();
    let top = lp.iter().chain(&ln).cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lp.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = w.iter().sum();
    let mean = xs.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / z;
    let var = xs.iter().zip(&w).map(|(x, w)| (x - mean).powi(2) * w).sum::<f64>() / z;
    let neg: f64 = ln.iter().map(|l| (l - top).exp()).sum();
    Ok((mean, var, neg / z))
}

/// One mesh of a mesh-independence sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshRow {
    pub n: usize,
    pub lambda_mean: f64,
    pub lambda_var: f64,
    pub iterations: usize,
    pub converged: bool,
    pub step_norms: Vec<f64>,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshStudy {
    pub rows: Vec<MeshRow>,
}

impl MeshStudy {
    /// `(max − min) / mean` of λ* over meshes.
    pub fn lambda_spread(&self) -> f64 {
        let ls: Vec<f64> = self.rows.iter().map(|r| r.lambda_mean).collect();
        let max = ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = ls.iter().cloned().fold(f64::INFINITY, f64::min);
        (max - min) / (ls.iter().sum::<f64>() / ls.len() as f64)
    }

    /// Largest pointwise ratio between step-norm curves over the common
    /// iteration range, skipping the first step (it is 1 by definition).
    pub fn step_norm_max_ratio(&self) -> f64 {
        let len = self.rows.iter().map(|r| r.step_norms.len()).min().unwrap_or(0);
        (1..len)
            .map(|k| {
                let vals = self.rows.iter().map(|r| r.step_norms[k]);
                let max = vals.clone().fold(f64::NEG_INFINITY, f64::max);
                let min = vals.fold(f64::INFINITY, f64::min);
                if min > 0.0 {
                    max / min
                } else {
                    f64::INFINITY
                }
            })
            .fold(1.0, f64::max)
    }
}

/// Runs VI on every mesh against the same data, one mesh per worker.
pub fn mesh_independence_study(
    setup: &ProblemSetup,
    meshes: &[usize],
    data: &DataVector,
    cfg: &ViConfig,
    exec: Execution,
) -> Result<MeshStudy> {
    if meshes.is_empty() {
        return Err(Error::InvalidParameter("no meshes requested".into()));
    }
    let inner = ViConfig { execution: Execution::Sequential, ..*cfg };
    let rows = par::map(exec, meshes, |&n| -> Result<MeshRow> {
        let (_, res) = setup.solve(n, data, &inner)?;
        let rel_err = res.trace.records.last().and_then(|r| r.rel_err).unwrap_or(f64::NAN);
        Ok(MeshRow {
            n,
            lambda_mean: res.lam_post.lam_star,
            lambda_var: res.lam_post.c_lambda,
            iterations: res.iterations(),
            converged: res.converged,
            step_norms: res.trace.records.iter().map(|r| r.step_norm).collect(),
            rel_err,
        })
    });
    Ok(MeshStudy { rows: rows.into_iter().collect::<Result<Vec<_>>>()? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{build_grid, Boundary};
    use crate::lowrank::{EigenPairs, LowRankPosteriorCov};
    use std::sync::Arc;

    #[test]
    fn relative_error_cases() {
        let g = Arc::new(build_grid(30, Boundary::Neumann).unwrap());
        let t = FieldVector::from_fn(g.clone(), |x| 1.0 + x);
        assert_eq!(relative_error(&t, &t).unwrap(), 0.0);
        assert!((relative_error(&t.scaled(2.0), &t).unwrap() - 1.0).abs() < 1e-14);
        let e = FieldVector::from_fn(g.clone(), |x| x * x);
        let a = relative_error(&e, &t).unwrap();
        let b = relative_error(&e.scaled(-3.0), &t.scaled(-3.0)).unwrap();
        assert!((a - b).abs() < 1e-14);
        assert!(relative_error(&t, &FieldVector::zeros(g)).is_err());
    }

    #[test]
    fn kl_cases() {
        assert_eq!(kl_gaussian_1d((2.0, 3.0), (2.0, 3.0)).unwrap(), 0.0);
        assert!((kl_gaussian_1d((0.0, 1.0), (1.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        assert!((kl_gaussian_1d((313.387, 11.861), (312.006, 12.972)).unwrap() - 0.07546).abs() < 1e-4);
        assert!(kl_gaussian_1d((0.0, 0.0), (0.0, 1.0)).is_err());
        for m in [-2.0, 0.0, 0.5, 4.0] {
            for v1 in [0.1, 1.0, 7.0] {
                for v2 in [0.2, 1.0, 30.0] {
                    assert!(kl_gaussian_1d((m, v1), (0.3, v2)).unwrap() >= 0.0);
                }
            }
        }
    }

    fn vi_pair(n: usize, xis: Vec<f64>, v_star: Vec<f64>, lam: LambdaPosterior) -> (PriorOperator, VPosterior) {
        let g = Arc::new(build_grid(n, Boundary::Neumann).unwrap());
        let prior = PriorOperator::new(g.clone(), 0.05).unwrap();
        let vecs: Vec<FieldVector> = (0..xis.len())
            .map(|k| {
                let f = FieldVector::from_fn(g.clone(), |x| (std::f64::consts::PI * (k + 1) as f64 * x).cos());
                f.scaled(1.0 / f.norm())
            })
            .collect();
        let eig = Arc::new(EigenPairs::new(xis, vecs).unwrap());
        let cov = LowRankPosteriorCov::new(prior.clone(), eig, lam.rho()).unwrap();
        (prior, VPosterior { v_star: FieldVector::new(g, v_star).unwrap(), cov })
    }

    #[test]
    fn u_covariance_special_cases() {
        let n = 25;
        let v: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let lam = LambdaPosterior::new(2.0, 0.0).unwrap();
        let (prior, vp) = vi_pair(n, vec![3.0, 0.5], v.clone(), lam);
        let up = u_posterior_moments(&vp, &lam).unwrap();
        let c0 = prior.dense_nodal_covariance();
        // C_λ = 0: Cov(u) = λ²C_v.
        for i in 0..n {
            let col = vp.cov.nodal_column(i, &vp.cov.tilde_vectors());
            for j in 0..n {
                assert!((up.cov.entry(j, i) - 4.0 * col[j]).abs() < 1e-10 * c0[(i, i)]);
                assert_eq!(up.cov.entry(i, j), up.cov.entry(j, i));
            }
        }
        // v* = 0: Cov(u) = ρ C_v.
        let lam = LambdaPosterior::new(1.5, 0.7).unwrap();
        let (_, vp) = vi_pair(n, vec![3.0], vec![0.0; n], lam);
        let up = u_posterior_moments(&vp, &lam).unwrap();
        let t = vp.cov.tilde_vectors();
        let col = vp.cov.nodal_column(4, &t);
        for j in 0..n {
            assert!((up.cov.entry(j, 4) - lam.rho() * col[j]).abs() < 1e-10);
        }
        // No data: bands equal the prior's.
        let (prior, vp) = vi_pair(n, vec![], vec![0.0; n], LambdaPosterior::new(1.0, 0.0).unwrap());
        let up = u_posterior_moments(&vp, &LambdaPosterior::new(1.0, 0.0).unwrap()).unwrap();
        let c0 = prior.dense_nodal_covariance();
        for k in [0, 5, 20] {
            let b = up.cov.band(k).unwrap();
            for (i, x) in b.iter().enumerate() {
                assert!((x - c0[(i, i + k)]).abs() < 1e-10);
            }
        }
        assert!(up.cov.band(n).is_err());
    }

    #[test]
    fn u_moments_match_monte_carlo() {
        let n = 30;
        let v: Vec<f64> = (0..n).map(|i| 0.5 + (i as f64 * 0.2).cos()).collect();
        let lam = LambdaPosterior::new(2.0, 0.3).unwrap();
        let (_, vp) = vi_pair(n, vec![4.0, 1.0, 0.2], v, lam);
        let up = u_posterior_moments(&vp, &lam).unwrap();
        // Sample v ~ N(v*, C_v) through a dense Cholesky of the nodal covariance.
        let cv = DMatrix::from_fn(n, n, |i, j| (up.cov.entry(i, j) - lam.c_lambda * vp.v_star.values()[i] * vp.v_star.values()[j]) / lam.rho());
        let l = cv.cholesky().unwrap().l();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut acc = MomentAccumulator::dense(n);
        let vs = DVector::from_column_slice(vp.v_star.values());
        for _ in 0..100_000 {
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let l_draw = lam.lam_star + lam.c_lambda.sqrt() * rng.sample::<f64, _>(StandardNormal);
            let u = (&vs + &l * z) * l_draw;
            acc.push(u.as_slice());
        }
        let var = acc.variance();
        for i in 0..n {
            let se = (up.cov.entry(i, i) / 1e5).sqrt();
            assert!((acc.mean()[i] - up.mean.values()[i]).abs() < 4.0 * se);
            assert!((var[i] / up.cov.entry(i, i) - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn comparison_of_identical_sources_is_zero() {
        let n = 40;
        let lam = LambdaPosterior::new(1.0, 0.1).unwrap();
        let (_, vp) = vi_pair(n, vec![2.0], vec![0.1; n], lam);
        let up = u_posterior_moments(&vp, &lam).unwrap();
        let c = compare_covariances(&up.cov, &up.cov, &[0, 20]).unwrap();
        assert_eq!(c.matrix, Some(0.0));
        assert_eq!(c.bands, vec![(0, 0.0), (20, 0.0)]);
        assert_eq!(covariance_bands(&up.cov, &[0, 20, 39]).unwrap().iter().map(|b| b.len()).collect::<Vec<_>>(), vec![40, 20, 1]);
        assert!(up.cov.variance().unwrap().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn credibility_band_cases() {
        let g = Arc::new(build_grid(5, Boundary::Neumann).unwrap());
        let m = FieldVector::zeros(g.clone());
        let (lo, hi) = credibility_band(&m, &[1.0; 5], 0.95).unwrap();
        assert!((hi.values()[0] - 1.959964).abs() < 1e-6 && (lo.values()[0] + 1.959964).abs() < 1e-6);
        let (lo, hi) = credibility_band(&m, &[0.0; 5], 0.95).unwrap();
        assert_eq!((lo.values(), hi.values()), (m.values(), m.values()));
        assert!(credibility_band(&m, &[-1.0, 0.0, 0.0, 0.0, 0.0], 0.95).is_err());
        assert!(credibility_band(&m, &[1.0; 5], 1.0).is_err());
        let (lo, hi) = credibility_band(&m, &[1.0; 5], 0.5).unwrap();
        assert!((band_coverage(&FieldVector::constant(g, 0.7), &lo, &hi).unwrap()).abs() < 1e-15);
        assert!((hi.values()[2] - 0.6744897).abs() < 1e-6);
    }

    #[test]
    fn cp_ncp_relation_holds() {
        for n in [1, 3, 5, 10] {
            let dev = cp_ncp_density_check(n, 1000, n as u64).unwrap();
            assert!(dev < 1e-10, "n={n}: {dev}");
        }
        assert!(cp_ncp_density_check(11, 10, 0).is_err());
    }

    #[test]
    fn lambda_marginal_without_information_is_the_prior() {
        let g = Arc::new(build_grid(30, Boundary::Neumann).unwrap());
        let prior = PriorOperator::new(g.clone(), 0.05).unwrap();
        let fwd = ForwardOperator::with_defaults(g).unwrap();
        // Huge noise: the data carry no information on λ.
        let data = DataVector::new(fwd.obs_points().to_vec(), vec![0.0; 20], 1e-14, 0.05).unwrap();
        let lp = LambdaPrior::new(50.0, 25.0).unwrap();
        let (m, v, neg) = lambda_marginal_positive(&prior, &fwd, &data, &lp, 100.0, 20_000).unwrap();
        assert!((m - 50.0).abs() < 1e-6 && (v - 25.0).abs() < 1e-4, "{m} {v}");
        assert!(neg < 1e-20);
    }
}
