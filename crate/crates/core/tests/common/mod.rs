//! Dense reference implementations assembled directly from the
//! finite-difference stencils. They share nothing with the library's
//! tridiagonal and low-rank code paths.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// `A = I − αΔ_N` on `n` nodes of `[0, 1]` with spacing `1/(n−1)`.
pub fn neumann_a(n: usize, alpha: f64) -> DMatrix<f64> {
    let h = 1.0 / (n - 1) as f64;
    let s = alpha / (h * h);
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            let k = if i == 0 || i == n - 1 { s } else { 2.0 * s };
            1.0 + k
        } else if i.abs_diff(j) == 1 {
            -s
        } else {
            0.0
        }
    })
}

/// `C₀ = scale·A⁻²` as an operator on nodal vectors.
pub fn c0_operator(n: usize, alpha: f64, scale: f64) -> DMatrix<f64> {
    let a_inv = neumann_a(n, alpha).try_inverse().unwrap();
    &a_inv * &a_inv * scale
}

/// Dense observation map: Dirichlet solve of `−αw″ + w = u` on the interior
/// nodes, then linear interpolation of `w` (zero at both ends).
pub fn forward_matrix(n: usize, alpha_pde: f64, obs: &[f64]) -> DMatrix<f64> {
    let h = 1.0 / (n - 1) as f64;
    let m = n - 2;
    let s = alpha_pde / (h * h);
    let b = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            1.0 + 2.0 * s
        } else if i.abs_diff(j) == 1 {
            -s
        } else {
            0.0
        }
    });
    let b_inv = b.try_inverse().unwrap();
    // Node values of w for unit sources at node k.
    let mut w = DMatrix::zeros(n, n);
    for j in 1..n - 1 {
        for k in 1..n - 1 {
            w[(j, k)] = b_inv[(j - 1, k - 1)];
        }
    }
    let mut hm = DMatrix::zeros(obs.len(), n);
    for (i, &x) in obs.iter().enumerate() {
        let pos = x / h;
        let left = (pos.floor() as usize).min(n - 2);
        let t = (pos - left as f64).clamp(0.0, 1.0);
        for k in 0..n {
            hm[(i, k)] = (1.0 - t) * w[(left, k)] + t * w[(left + 1, k)];
        }
    }
    hm
}

/// Dense posterior pieces for `v` at fixed `ρ` on the lumped-mass grid.
pub struct DenseModel {
    pub n: usize,
    pub h: f64,
    pub tau: f64,
    pub c0: DMatrix<f64>,
    pub hm: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl DenseModel {
    pub fn new(n: usize, alpha: f64, scale: f64, alpha_pde: f64, obs: &[f64], d: &[f64], tau: f64) -> Self {
        Self {
            n,
            h: 1.0 / (n - 1) as f64,
            tau,
            c0: c0_operator(n, alpha, scale),
            hm: forward_matrix(n, alpha_pde, obs),
            d: DVector::from_column_slice(d),
        }
    }

    /// `H*Γ⁻¹H = τ Hᵀ H / h` as an operator.
    pub fn misfit_hessian(&self) -> DMatrix<f64> {
        self.hm.transpose() * &self.hm * (self.tau / self.h)
    }

    /// `C_v = (ρ H*Γ⁻¹H + C₀⁻¹)⁻¹`.
    pub fn c_v(&self, rho: f64) -> DMatrix<f64> {
        let prec = self.misfit_hessian() * rho + self.c0.clone().try_inverse().unwrap();
        prec.try_inverse().unwrap()
    }

    pub fn trace(&self, rho: f64) -> f64 {
        (self.c_v(rho) * self.misfit_hessian()).trace()
    }

    /// `v* = C_v(λ τ H*d)`.
    pub fn v_star(&self, lam: f64, rho: f64) -> DVector<f64> {
        let rhs = self.hm.transpose() * &self.d * (lam * self.tau / self.h);
        self.c_v(rho) * rhs
    }

    /// `(λ*, C_λ)` from `v*` and the trace at `ρ`.
    pub fn lambda_update(&self, v: &DVector<f64>, rho: f64, lam_mean: f64, lam_var: f64) -> (f64, f64) {
        let hv = &self.hm * v;
        let prec = self.trace(rho) + self.tau * hv.norm_squared() + 1.0 / lam_var;
        let c = 1.0 / prec;
        (c * (self.tau * hv.dot(&self.d) + lam_mean / lam_var), c)
    }
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

/// Two-sided one-sample Kolmogorov-Smirnov p-value against a continuous CDF,
/// from the asymptotic Kolmogorov series with the small-sample correction.
pub fn ks_p_value(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let t = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    if t < 0.3 {
        // The series converges too slowly here; the true value exceeds 0.9999.
        return 1.0;
    }
    let p: f64 = (1..=100).map(|k| {
        let k = k as f64;
        2.0 * (-1f64).powi(k as i32 - 1) * (-2.0 * k * k * t * t).exp()
    }).sum();
    p.clamp(0.0, 1.0)
}

pub fn normal_cdf(x: f64, mean: f64, var: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::new(mean, var.sqrt()).unwrap().cdf(x)
}
