//! Gaussian prior measures: the field prior `N(0, C₀)` with
//! `C₀ = s·(I − αΔ)⁻²` on a Neumann grid, and the scalar hyper-prior on λ.
//!
//! Covariance convention: `C₀` acts as an operator on nodal vectors that is
//! self-adjoint in `⟨·,·⟩_M`. The nodal covariance of a prior draw is then
//! `s·A⁻¹M⁻¹A⁻¹`, which keeps prior samples mesh-independent in law.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::discretize::{laplacian, Boundary, FieldVector, Grid1D, SymTridiagonal, TridiagFactor};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Default smoothing length of the prior operator.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Discretized `C₀ = scale·(I − αΔ_N)⁻²` with a cached factorization of `A = I − αΔ_N`.
#[derive(Debug, Clone)]
pub struct PriorOperator {
    grid: Arc<Grid1D>,
    alpha: f64,
    scale: f64,
    a: SymTridiagonal,
    a_factor: TridiagFactor,
}

impl PriorOperator {
    pub fn new(grid: Arc<Grid1D>, alpha: f64) -> Result<Self> {
        Self::with_scale(grid, alpha, 1.0)
    }

    /// `C₀ = scale·(I − αΔ)⁻²`; `scale = 4` gives the `N(0, 4C₀)` prior.
    pub fn with_scale(grid: Arc<Grid1D>, alpha: f64, scale: f64) -> Result<Self> {
        if grid.boundary() != Boundary::Neumann {
            return Err(Error::InvalidGrid("prior operator needs a Neumann grid".into()));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale must be positive, got {scale}")));
        }
        let a = laplacian(&grid, Boundary::Neumann).affine(alpha, 1.0);
        let a_factor = a.factor()?;
        Ok(Self { grid, alpha, scale, a, a_factor })
    }

    pub fn grid(&self) -> &Arc<Grid1D> {
        &self.grid
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// The tridiagonal `A = I − αΔ_N`.
    pub fn a_matrix(&self) -> &SymTridiagonal {
        &self.a
    }

    /// `C₀^{1/2} = √s·A⁻¹` applied to a raw nodal slice.
    pub(crate) fn sqrt_in_place(&self, x: &mut [f64]) {
        self.a_factor.solve_in_place(x);
        let c = self.scale.sqrt();
        if c != 1.0 {
            x.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn apply_c0(&self, f: &FieldVector) -> Result<FieldVector> {
        f.check_grid(&self.grid)?;
        let mut x = f.values().to_vec();
        self.a_factor.solve_in_place(&mut x);
        self.a_factor.solve_in_place(&mut x);
        if self.scale != 1.0 {
            x.iter_mut().for_each(|v| *v *= self.scale);
        }
        Ok(FieldVector::from_raw(self.grid.clone(), x))
    }

    pub fn apply_c0_sqrt(&self, f: &FieldVector) -> Result<FieldVector> {
        f.check_grid(&self.grid)?;
        let mut x = f.values().to_vec();
        self.sqrt_in_place(&mut x);
        Ok(FieldVector::from_raw(self.grid.clone(), x))
    }

    pub fn apply_c0_inv(&self, f: &FieldVector) -> Result<FieldVector> {
        f.check_grid(&self.grid)?;
        let y = self.a.matvec(f.values());
        let mut z = self.a.matvec(&y);
        if self.scale != 1.0 {
            z.iter_mut().for_each(|v| *v /= self.scale);
        }
        Ok(FieldVector::from_raw(self.grid.clone(), z))
    }

    /// Draws `v = √s·A⁻¹w` with white noise `w_i ~ N(0, 1/h)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FieldVector {
        let mut w = vec![0.0; self.grid.n()];
        self.sample_into(rng, &mut w);
        FieldVector::from_raw(self.grid.clone(), w)
    }

    pub(crate) fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let sd = (1.0 / self.grid.mass()).sqrt();
        for v in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = sd * z;
        }
        self.sqrt_in_place(out);
    }

    /// Dense nodal covariance `s·A⁻¹M⁻¹A⁻¹` (test and diagnostic oracle).
    pub fn dense_nodal_covariance(&self) -> DMatrix<f64> {
        let a_inv = self
            .a
            .to_dense()
            .try_inverse()
            .expect("I - αΔ is nonsingular for α > 0");
        (&a_inv * &a_inv) * (self.scale / self.grid.mass())
    }
}

/// Seeded convenience wrapper around [`PriorOperator::sample`].
pub fn sample_prior(prior: &PriorOperator, seed: u64) -> FieldVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    prior.sample(&mut rng)
}

/// `count` independent draws. Draw `i` uses stream `i` of the seeded
/// generator, so the result does not depend on `exec`.
pub fn sample_batch(prior: &PriorOperator, count: usize, seed: u64, exec: Execution) -> Vec<FieldVector> {
    par::map_range(exec, count, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        prior.sample(&mut rng)
    })
}

/// Gaussian hyper-prior `N(mean, variance)` on the scale λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaPrior {
    mean: f64,
    variance: f64,
}

impl LambdaPrior {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) || !mean.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda prior needs finite mean and positive variance, got ({mean}, {variance})"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn log_density(&self, lam: f64) -> f64 {
        let z = lam - self.mean;
        -0.5 * z * z / self.variance - 0.5 * (2.0 * std::f64::consts::PI * self.variance).ln()
    }
}

impl Default for LambdaPrior {
    fn default() -> Self {
        Self { mean: 1.0, variance: 1.0e4 }
    }
}
