//! Elliptic forward map `−α w'' + w = u`, `w(0) = w(1) = 0`, observed at
//! fixed points by piecewise-linear interpolation.
//!
//! The adjoint is taken in the mass-weighted inner product on the parameter
//! grid: `⟨Hu, y⟩ = ⟨u, H*y⟩_M`, so `H* = M⁻¹Hᵀ` rather than the transpose.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::discretize::{dot, laplacian, Boundary, FieldVector, Grid1D, TridiagFactor};
use crate::error::{Error, Result};

/// Default coefficient of the forward equation.
pub const DEFAULT_ALPHA_PDE: f64 = 0.05;

/// Observation points `{i/20 : i = 1..20}`.
pub fn default_obs_points() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ObsRow {
    left: usize,
    w_left: f64,
    w_right: f64,
}

/// Discrete forward operator `H: u ↦ (w(x_1), …, w(x_{N_d}))`.
///
/// The PDE is solved on the uniform node set `{j·h}` of the parameter grid
/// with the boundary values pinned to zero. For a Neumann parameter grid the
/// two endpoint values of `u` therefore never enter the solve.
#[derive(Debug, Clone)]
pub struct ForwardOperator {
    grid: Arc<Grid1D>,
    alpha_pde: f64,
    obs_points: Vec<f64>,
    /// Number of cells `N = 1/h`; interior solve unknowns are ext nodes `1..N`.
    cells: usize,
    /// Parameter index of ext node `j` is `j - offset`.
    offset: usize,
    solver: TridiagFactor,
    rows: Vec<ObsRow>,
}

impl ForwardOperator {
    pub fn new(grid: Arc<Grid1D>, alpha_pde: f64, obs_points: Vec<f64>) -> Result<Self> {
        if !(alpha_pde > 0.0 && alpha_pde.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha_pde must be positive, got {alpha_pde}")));
        }
        if obs_points.is_empty() {
            return Err(Error::InvalidParameter("no observation points".into()));
        }
        if obs_points.iter().any(|x| !(0.0..=1.0).contains(x))
            || obs_points.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidParameter(
                "observation points must lie in [0, 1] and be strictly increasing".into(),
            ));
        }
        let (cells, offset) = match grid.boundary() {
            Boundary::Neumann => (grid.n() - 1, 0),
            Boundary::Dirichlet => (grid.n() + 1, 1),
        };
        if cells < 3 {
            return Err(Error::InvalidGrid("forward solve needs at least 2 interior nodes".into()));
        }
        let interior = Grid1D::new(cells - 1, Boundary::Dirichlet)?;
        let solver = laplacian(&interior, Boundary::Dirichlet).affine(alpha_pde, 1.0).factor()?;
        let h = grid.h();
        let rows = obs_points
            .iter()
            .map(|&x| {
                let s = x / h;
                let left = (s.floor() as usize).min(cells - 1);
                let t = (s - left as f64).clamp(0.0, 1.0);
                ObsRow { left, w_left: 1.0 - t, w_right: t }
            })
            .collect();
        Ok(Self { grid, alpha_pde, obs_points, cells, offset, solver, rows })
    }

    /// Forward operator with the default coefficient and observation points.
    pub fn with_defaults(grid: Arc<Grid1D>) -> Result<Self> {
        Self::new(grid, DEFAULT_ALPHA_PDE, default_obs_points())
    }

    pub fn grid(&self) -> &Arc<Grid1D> {
        &self.grid
    }

    pub fn alpha_pde(&self) -> f64 {
        self.alpha_pde
    }

    pub fn obs_points(&self) -> &[f64] {
        &self.obs_points
    }

    pub fn n_obs(&self) -> usize {
        self.obs_points.len()
    }

    /// Row `i` of the interpolation matrix as `(ext_node, weight)` pairs.
    pub fn obs_weights(&self, i: usize) -> [(usize, f64); 2] {
        let r = self.rows[i];
        [(r.left, r.w_left), (r.left + 1, r.w_right)]
    }

    fn param_index(&self, ext: usize) -> Option<usize> {
        if ext == 0 || ext >= self.cells {
            return None;
        }
        Some(ext - self.offset)
    }

    /// Solves for `w` on the interior ext nodes `1..N`.
    fn solve_interior(&self, u: &[f64]) -> Vec<f64> {
        let mut w: Vec<f64> = (1..self.cells).map(|j| u[j - self.offset]).collect();
        self.solver.solve_in_place(&mut w);
        w
    }

    fn observe_interior(&self, w: &[f64], out: &mut [f64]) {
        let val = |ext: usize| if ext == 0 || ext >= self.cells { 0.0 } else { w[ext - 1] };
        for (o, r) in out.iter_mut().zip(&self.rows) {
            *o = r.w_left * val(r.left) + r.w_right * val(r.left + 1);
        }
    }

    /// `w` on the parameter grid (zero on boundary nodes).
    pub fn solve_pde(&self, u: &FieldVector) -> Result<FieldVector> {
        u.check_grid(&self.grid)?;
        let w = self.solve_interior(u.values());
        let mut out = vec![0.0; self.grid.n()];
        for (j, wj) in (1..self.cells).zip(w) {
            if let Some(p) = self.param_index(j) {
                out[p] = wj;
            }
        }
        Ok(FieldVector::from_raw(self.grid.clone(), out))
    }

    pub(crate) fn apply_h_slice(&self, u: &[f64], out: &mut [f64]) {
        let w = self.solve_interior(u);
        self.observe_interior(&w, out);
    }

    pub fn apply_h(&self, u: &FieldVector) -> Result<Vec<f64>> {
        u.check_grid(&self.grid)?;
        let mut out = vec![0.0; self.n_obs()];
        self.apply_h_slice(u.values(), &mut out);
        Ok(out)
    }

    pub(crate) fn apply_h_adjoint_slice(&self, y: &[f64], out: &mut [f64]) {
        let mut w = vec![0.0; self.cells - 1];
        for (yi, r) in y.iter().zip(&self.rows) {
            for (ext, wt) in [(r.left, r.w_left), (r.left + 1, r.w_right)] {
                if ext >= 1 && ext < self.cells {
                    w[ext - 1] += wt * yi;
                }
            }
        }
        self.solver.solve_in_place(&mut w);
        out.iter_mut().for_each(|v| *v = 0.0);
        let m_inv = 1.0 / self.grid.mass();
        for (j, wj) in (1..self.cells).zip(w) {
            out[j - self.offset] = wj * m_inv;
        }
    }

    /// `H*y = M⁻¹Hᵀy`.
    pub fn apply_h_adjoint(&self, y: &[f64]) -> Result<FieldVector> {
        if y.len() != self.n_obs() {
            return Err(Error::DimensionMismatch { expected: self.n_obs(), got: y.len() });
        }
        let mut out = vec![0.0; self.grid.n()];
        self.apply_h_adjoint_slice(y, &mut out);
        Ok(FieldVector::from_raw(self.grid.clone(), out))
    }

    /// `½τ‖d − λHv‖²`.
    pub fn potential(&self, v: &FieldVector, lam: f64, data: &DataVector) -> Result<f64> {
        data.check_against(self)?;
        let hv = self.apply_h(v)?;
        Ok(misfit(&hv, lam, data))
    }
}

pub(crate) fn misfit(hv: &[f64], lam: f64, data: &DataVector) -> f64 {
    let r2: f64 = data.d.iter().zip(hv).map(|(d, h)| (d - lam * h).powi(2)).sum();
    0.5 * data.tau * r2
}

/// Observed data with the noise precision that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct DataVector {
    pub obs_points: Vec<f64>,
    pub d: Vec<f64>,
    /// Noise precision τ, `Γ_noise = τ⁻¹I`.
    pub tau: f64,
    /// Noise level as a fraction of `max|Hu†|` (0.05 = 5%).
    pub noise_pct: f64,
}

impl DataVector {
    pub fn new(obs_points: Vec<f64>, d: Vec<f64>, tau: f64, noise_pct: f64) -> Result<Self> {
        if obs_points.len() != d.len() {
            return Err(Error::DimensionMismatch { expected: obs_points.len(), got: d.len() });
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidData(format!("noise precision must be positive, got {tau}")));
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite observation".into()));
        }
        Ok(Self { obs_points, d, tau, noise_pct })
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// Shape check plus a finite precision, required by every inference routine.
    pub fn check_against(&self, f: &ForwardOperator) -> Result<()> {
        if self.d.len() != f.n_obs() {
            return Err(Error::DimensionMismatch { expected: f.n_obs(), got: self.d.len() });
        }
        if !self.tau.is_finite() {
            return Err(Error::InvalidData("noise-free data has infinite precision".into()));
        }
        Ok(())
    }
}

/// Synthesizes `d = H_fine u† + ε` on a fine Neumann mesh.
///
/// `ε_i ~ N(0, τ⁻¹)` with `τ⁻¹ = (noise_pct·max|H_fine u†|)²`. With
/// `noise_pct = 0` the data are the exact fine-mesh observations and τ is
/// infinite.
pub fn generate_data(
    truth: impl Fn(f64) -> f64,
    fine_n: usize,
    coarse: &ForwardOperator,
    noise_pct: f64,
    seed: u64,
) -> Result<DataVector> {
    if fine_n <= coarse.grid().n() {
        return Err(Error::InverseCrime { fine: fine_n, coarse: coarse.grid().n() });
    }
    if !(noise_pct >= 0.0 && noise_pct.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise level must be >= 0, got {noise_pct}")));
    }
    let fine_grid = Arc::new(Grid1D::new(fine_n, Boundary::Neumann)?);
    let fine = ForwardOperator::new(fine_grid.clone(), coarse.alpha_pde(), coarse.obs_points().to_vec())?;
    let u = FieldVector::from_fn(fine_grid, truth);
    let clean = fine.apply_h(&u)?;
    let peak = clean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sd = noise_pct * peak;
    let mut d = clean;
    let tau = if sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sd).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        d.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
        1.0 / (sd * sd)
    } else {
        f64::INFINITY
    };
    DataVector::new(coarse.obs_points().to_vec(), d, tau, noise_pct)
}

/// Truth signal `u†(x) = 10(cos 4πx + 1)`.
pub fn default_truth(x: f64) -> f64 {
    10.0 * ((4.0 * std::f64::consts::PI * x).cos() + 1.0)
}

/// `⟨Hu, y⟩` in the plain Euclidean data-space inner product.
pub fn data_inner(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b)
}
