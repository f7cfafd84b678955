//! Functional PCA of clr-image time series and attractor-space estimation.
//!
//! The empirical covariance of a series of clr functions is a quadrature-
//! self-adjoint operator; its eigenproblem is solved after `W^{1/2}`
//! symmetrization so the eigenfunctions come out quadrature-orthonormal. The
//! constant direction (the quadrature complement of the zero-integral
//! subspace) is deflated explicitly, so every returned eigenfunction is a
//! valid clr function. The span of the leading eigenfunctions estimates the
//! attractor space; its orthogonal complement estimates the cointegrating
//! space.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{clr_inv, ClrFunction, Density, Grid};
use crate::operators::{LinearMap, OrthonormalBasis};

/// Rows of a clr series must integrate to zero within this tolerance.
pub const SERIES_ZERO_TOL: f64 = 1e-8;
/// Eigen-residual bound relative to the leading eigenvalue.
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-8;
/// Relative eigenvalue threshold defining the numerical rank.
pub const RANK_REL_TOL: f64 = 1e-12;
/// Default number of reported eigenpairs.
pub const DEFAULT_EIGENPAIRS: usize = 25;

/// A time series of clr functions on a common grid, stored row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct ClrSeries {
    grid: Grid,
    data: DMatrix<f64>,
}

impl ClrSeries {
    /// Build from a row matrix (`T × n`), validating the zero-integral
    /// invariant of every row.
    pub fn from_matrix(grid: Grid, data: DMatrix<f64>) -> Result<ClrSeries> {
        if data.ncols() != grid.len() {
            return Err(Error::Dimension(format!(
                "series has {} columns for a grid of {} nodes",
                data.ncols(),
                grid.len()
            )));
        }
        if data.nrows() < 2 {
            return Err(Error::Config(format!(
                "series needs at least 2 rows, got {}",
                data.nrows()
            )));
        }
        for t in 0..data.nrows() {
            let row: Vec<f64> = data.row(t).iter().cloned().collect();
            let integral = grid.integrate_unchecked(&row);
            if integral.abs() > SERIES_ZERO_TOL {
                return Err(Error::DomainNonPositive(format!(
                    "row {t} integrates to {integral}, beyond the zero-integral tolerance"
                )));
            }
        }
        Ok(ClrSeries { grid, data })
    }

    pub fn from_functions(rows: &[ClrFunction]) -> Result<ClrSeries> {
        if rows.len() < 2 {
            return Err(Error::Config("series needs at least 2 rows".into()));
        }
        let grid = rows[0].grid().clone();
        let n = grid.len();
        let mut data = DMatrix::zeros(rows.len(), n);
        for (t, r) in rows.iter().enumerate() {
            if !r.grid().compatible(&grid) {
                return Err(Error::Dimension("series rows on different grids".into()));
            }
            for j in 0..n {
                data[(t, j)] = r.values()[j];
            }
        }
        ClrSeries::from_matrix(grid, data)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn row(&self, t: usize) -> ClrFunction {
        let values: Vec<f64> = self.data.row(t).iter().cloned().collect();
        ClrFunction::demeaned(self.grid.clone(), values).expect("row length matches grid")
    }

    /// Cross-sectional mean as a clr function.
    pub fn mean(&self) -> ClrFunction {
        let t = self.data.nrows() as f64;
        let mean: Vec<f64> = (0..self.data.ncols())
            .map(|j| self.data.column(j).sum() / t)
            .collect();
        ClrFunction::demeaned(self.grid.clone(), mean).expect("mean length matches grid")
    }
}

/// Empirical covariance operator of the demeaned series,
/// `T⁻¹ Σ (f̃_t - f̄) ⊗ (f̃_t - f̄)`.
pub fn empirical_cov(series: &ClrSeries) -> Result<LinearMap> {
    cov_impl(series, true)
}

/// Second-moment operator without demeaning, for the observable-series
/// variant of the rank test.
pub fn empirical_second_moment(series: &ClrSeries) -> Result<LinearMap> {
    cov_impl(series, false)
}

fn cov_impl(series: &ClrSeries, demean: bool) -> Result<LinearMap> {
    let t = series.data.nrows();
    let n = series.data.ncols();
    let mut centered = series.data.clone();
    if demean {
        for j in 0..n {
            let mu = centered.column(j).sum() / t as f64;
            for i in 0..t {
                centered[(i, j)] -= mu;
            }
        }
    }
    // V = (XᵀX/T) W acting on nodal values; self-adjoint under ⟨·,·⟩_W.
    let mut m = centered.transpose() * &centered / t as f64;
    let w = series.grid.weights();
    for j in 0..n {
        for i in 0..n {
            m[(i, j)] *= w[j];
        }
    }
    LinearMap::from_matrix(&series.grid, m)
}

/// Eigenvalues (decreasing, clamped at zero) and quadrature-orthonormal
/// eigenfunctions of a covariance operator.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    eigenvalues: Vec<f64>,
    basis: OrthonormalBasis,
}

impl EigenSystem {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn basis(&self) -> &OrthonormalBasis {
        &self.basis
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

/// Top-`k` eigenpairs of a quadrature-self-adjoint positive semidefinite
/// operator. The constant direction is deflated so all eigenfunctions are
/// zero-integral; `k` may not exceed `n - 1`. Eigenfunction signs follow the
/// first-significant-coordinate-positive convention.
pub fn eigenpairs(v: &LinearMap, k: usize) -> Result<EigenSystem> {
    let grid = v.grid().clone();
    let n = grid.len();
    if k == 0 || k > n - 1 {
        return Err(Error::Rank(format!(
            "k = {k} outside 1..={} (the zero-integral subspace dimension)",
            n - 1
        )));
    }
    let w = grid.weights();
    let sqrt_w: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] = sqrt_w[i] * v.matrix()[(i, j)] / sqrt_w[j];
        }
    }
    let asym = (&s - s.transpose()).amax();
    let scale = s.amax().max(1.0);
    if asym > 1e-7 * scale {
        return Err(Error::Numerical(format!(
            "operator is not self-adjoint under the quadrature inner product (asymmetry {asym})"
        )));
    }
    let s = (&s + s.transpose()) * 0.5;

    // Deflate the constant direction: it is a null vector of any covariance
    // built from zero-integral rows; shifting it far negative keeps it out of
    // the leading pairs and keeps every other eigenvector orthogonal to it.
    let shift = s.amax() + 1.0;
    let mut c = DVector::from_column_slice(&sqrt_w);
    c /= c.norm();
    let s = s - (&c * c.transpose()) * shift;

    let eig = nalgebra::linalg::SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| {
        eig.eigenvalues[*b]
            .partial_cmp(&eig.eigenvalues[*a])
            .expect("eigenvalues are finite")
    });

    let lead = eig.eigenvalues[order[0]].max(0.0);
    let mut eigenvalues = Vec::with_capacity(k);
    let mut functions = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let raw = eig.eigenvalues[idx];
        if raw < -1e-10 * lead.max(1.0) {
            return Err(Error::Numerical(format!(
                "covariance operator has a significantly negative eigenvalue {raw}"
            )));
        }
        let zeta = raw.max(0.0);
        let y = eig.eigenvectors.column(idx);
        let mut vals: Vec<f64> = (0..n).map(|i| y[i] / sqrt_w[i]).collect();
        // Sign convention: first coordinate larger than 1e-9 of the sup norm
        // must be positive.
        let sup = vals.iter().cloned().fold(0.0_f64, |a, b| a.max(b.abs()));
        if let Some(first) = vals.iter().find(|x| x.abs() > 1e-9 * sup) {
            if *first < 0.0 {
                for v in &mut vals {
                    *v = -*v;
                }
            }
        }
        let f = ClrFunction::demeaned(grid.clone(), vals)?;
        // Residual check against the original operator.
        let image = v.apply(&f)?;
        let residual = image.add_scaled(-zeta, &f)?.norm();
        if residual > EIGEN_RESIDUAL_TOL * lead.max(f64::MIN_POSITIVE) {
            return Err(Error::Numerical(format!(
                "eigenpair residual {residual} exceeds tolerance for eigenvalue {zeta}"
            )));
        }
        eigenvalues.push(zeta);
        functions.push(f);
    }
    let basis = OrthonormalBasis::new(grid, functions)?;
    Ok(EigenSystem { eigenvalues, basis })
}

/// Estimated attractor span and its quadrature-orthogonal projector.
#[derive(Debug, Clone)]
pub struct AttractorEstimate {
    pub basis: OrthonormalBasis,
    pub projector: LinearMap,
    pub eigenvalues: Vec<f64>,
}

/// Span of the top-`r` eigenfunctions of the empirical covariance and the
/// orthogonal projector onto it. The cointegrating-space projector is the
/// complement `I - P`. Errors when `r` exceeds the numerical rank.
pub fn estimate_attractor(series: &ClrSeries, r: usize) -> Result<AttractorEstimate> {
    let v = empirical_cov(series)?;
    let n = series.grid().len();
    let eigen = eigenpairs(&v, n - 1)?;
    if r == 0 {
        return Err(Error::Rank("attractor dimension must be at least 1".into()));
    }
    let lead = eigen.eigenvalues[0];
    let rank = eigen
        .eigenvalues
        .iter()
        .filter(|z| **z > RANK_REL_TOL * lead.max(f64::MIN_POSITIVE))
        .count();
    if r > rank {
        return Err(Error::Rank(format!(
            "requested dimension {r} exceeds the numerical rank {rank}"
        )));
    }
    let top: Vec<ClrFunction> = eigen.basis.functions()[..r].to_vec();
    let basis = OrthonormalBasis::new(series.grid().clone(), top)?;
    let projector = LinearMap::projection(&basis)?;
    Ok(AttractorEstimate {
        basis,
        projector,
        eigenvalues: eigen.eigenvalues[..r].to_vec(),
    })
}

/// Transport an orthonormal clr family back to densities through the inverse
/// clr transform.
pub fn attractor_to_density_space(basis: &OrthonormalBasis) -> Result<Vec<Density>> {
    basis.functions().iter().map(clr_inv).collect()
}
