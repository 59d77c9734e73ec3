//! Uniform 1D grids, finite-difference Laplacians and the lumped mass
//! weighting that defines the discrete L² inner product.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Boundary condition / node layout of a [`Grid1D`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Interior nodes only; the field vanishes on both endpoints.
    Dirichlet,
    /// Nodes include both endpoints; zero normal derivative.
    Neumann,
}

/// Uniform discretization of the unit interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    n: usize,
    h: f64,
    boundary: Boundary,
    nodes: Vec<f64>,
}

impl Grid1D {
    /// Builds a grid with `n` stored nodes.
    ///
    /// Dirichlet grids store `n` interior nodes with spacing `1/(n+1)`;
    /// Neumann grids store `n` nodes including both endpoints with
    /// spacing `1/(n-1)`.
    pub fn new(n: usize, boundary: Boundary) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 nodes, got {n}")));
        }
        let (h, nodes) = match boundary {
            Boundary::Dirichlet => {
                let h = 1.0 / (n as f64 + 1.0);
                (h, (1..=n).map(|i| i as f64 / (n as f64 + 1.0)).collect())
            }
            Boundary::Neumann => {
                let h = 1.0 / (n as f64 - 1.0);
                (h, (0..n).map(|i| i as f64 / (n as f64 - 1.0)).collect())
            }
        };
        Ok(Self { n, h, boundary, nodes })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Weight of the lumped mass matrix `M = hI`.
    pub fn mass(&self) -> f64 {
        self.h
    }

    /// `⟨a, b⟩_M = aᵀ M b`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        self.h * dot(a, b)
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).sqrt()
    }
}

/// Convenience wrapper for [`Grid1D::new`].
pub fn build_grid(n: usize, boundary: Boundary) -> Result<Grid1D> {
    Grid1D::new(n, boundary)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Nodal values of a function on a [`Grid1D`].
#[derive(Debug, Clone, PartialEq)]
pub struct FieldVector {
    grid: Arc<Grid1D>,
    values: Vec<f64>,
}

impl FieldVector {
    pub fn new(grid: Arc<Grid1D>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::GridMismatch { expected: grid.n(), got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite field value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    /// Skips the finiteness scan; for internal results of finite arithmetic.
    pub(crate) fn from_raw(grid: Arc<Grid1D>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n());
        Self { grid, values }
    }

    pub fn zeros(grid: Arc<Grid1D>) -> Self {
        let n = grid.n();
        Self { grid, values: vec![0.0; n] }
    }

    pub fn constant(grid: Arc<Grid1D>, c: f64) -> Self {
        let n = grid.n();
        Self { grid, values: vec![c; n] }
    }

    /// Samples `f` at the grid nodes.
    pub fn from_fn(grid: Arc<Grid1D>, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid1D> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_grid(&self, other: &FieldVector) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub(crate) fn check_grid(&self, grid: &Grid1D) -> Result<()> {
        if self.grid.as_ref() != grid {
            return Err(Error::GridMismatch { expected: grid.n(), got: self.grid.n() });
        }
        Ok(())
    }

    pub fn inner(&self, other: &FieldVector) -> f64 {
        self.grid.inner(&self.values, &other.values)
    }

    pub fn norm(&self) -> f64 {
        self.grid.norm(&self.values)
    }

    pub fn scaled(&self, c: f64) -> FieldVector {
        let values = self.values.iter().map(|v| c * v).collect();
        Self::from_raw(self.grid.clone(), values)
    }

    /// `self + c·other`.
    pub fn add_scaled(&self, c: f64, other: &FieldVector) -> FieldVector {
        debug_assert!(self.same_grid(other));
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + c * b).collect();
        Self::from_raw(self.grid.clone(), values)
    }

    pub fn sub(&self, other: &FieldVector) -> FieldVector {
        self.add_scaled(-1.0, other)
    }
}

/// Symmetric tridiagonal matrix in banded storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiagonal {
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl SymTridiagonal {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Result<Self> {
        if diag.is_empty() || off.len() + 1 != diag.len() {
            return Err(Error::DimensionMismatch { expected: diag.len().saturating_sub(1), got: off.len() });
        }
        Ok(Self { diag, off })
    }

    pub fn identity(n: usize) -> Self {
        Self { diag: vec![1.0; n], off: vec![0.0; n.saturating_sub(1)] }
    }

    pub fn size(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn off(&self) -> &[f64] {
        &self.off
    }

    /// `a·self + b·I`.
    pub fn affine(&self, a: f64, b: f64) -> Self {
        Self {
            diag: self.diag.iter().map(|d| a * d + b).collect(),
            off: self.off.iter().map(|o| a * o).collect(),
        }
    }

    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.size();
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(out.len(), n);
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * x[i + 1];
            }
            out[i] = s;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size()];
        self.matvec_into(x, &mut out);
        out
    }

    /// LDLᵀ factorization; fails unless every pivot is positive.
    pub fn factor(&self) -> Result<TridiagFactor> {
        let n = self.size();
        let mut d = vec![0.0; n];
        let mut l = vec![0.0; n.saturating_sub(1)];
        d[0] = self.diag[0];
        for i in 0..n {
            if i > 0 {
                l[i - 1] = self.off[i - 1] / d[i - 1];
                d[i] = self.diag[i] - l[i - 1] * self.off[i - 1];
            }
            if !(d[i] > 0.0) {
                return Err(Error::NotPositiveDefinite { row: i, pivot: d[i] });
            }
        }
        Ok(TridiagFactor { d, l })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.size();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                self.diag[i]
            } else if i + 1 == j {
                self.off[i]
            } else if j + 1 == i {
                self.off[j]
            } else {
                0.0
            }
        })
    }
}

/// Cached LDLᵀ factors of an SPD [`SymTridiagonal`].
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagFactor {
    d: Vec<f64>,
    l: Vec<f64>,
}

impl TridiagFactor {
    pub fn size(&self) -> usize {
        self.d.len()
    }

    pub fn pivots(&self) -> &[f64] {
        &self.d
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.size();
        debug_assert_eq!(x.len(), n);
        for i in 1..n {
            x[i] -= self.l[i - 1] * x[i - 1];
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= self.l[i] * x[i + 1];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Returns `−Δ` with the 3-point stencil `(1/h²)·[−1, 2, −1]`.
///
/// Dirichlet: the stored nodes are interior and the boundary values are
/// zero, so the matrix is SPD. Neumann: the first and last diagonal
/// entries become `1/h²`, making constants the null space.
pub fn laplacian(grid: &Grid1D, boundary: Boundary) -> SymTridiagonal {
    let n = grid.n();
    let s = 1.0 / (grid.h() * grid.h());
    let mut diag = vec![2.0 * s; n];
    if boundary == Boundary::Neumann {
        diag[0] = s;
        diag[n - 1] = s;
    }
    SymTridiagonal { diag, off: vec![-s; n - 1] }
}

/// Lumped mass matrix `M = hI`.
pub fn mass_weights(grid: &Grid1D) -> SymTridiagonal {
    SymTridiagonal::identity(grid.n()).affine(grid.h(), 0.0)
}
