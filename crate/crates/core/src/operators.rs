//! Finite-rank operators on the discretized space, orthonormal bases,
//! autoregressive operator pencils, and unit-root diagnostics.
//!
//! Operators are stored as plain matrices acting on nodal clr values. The
//! quadrature weights enter through the inner product, so the adjoint is the
//! weight-conjugated transpose `W⁻¹ Aᵀ W` and symmetric eigenproblems are
//! solved after `W^{1/2}` symmetrization. The pencil of an AR(p) law is
//! `A(z) = I - z A₁ - … - z^p A_p`; stationarity is read off the companion
//! operator's spectrum, and the unit-root structure at `z = 1` (kernel
//! dimension, simple-pole condition, residue) is computed from the singular
//! value decomposition of `A(1)` together with the pencil derivative.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{ClrFunction, Grid};

/// Relative singular-value threshold below which directions count as kernel.
pub const KERNEL_REL_TOL: f64 = 1e-8;
/// Relative tolerance for the invertibility of the restricted derivative map.
pub const I1_REL_TOL: f64 = 1e-8;
/// Default margin for the stationarity check: spectrum must stay outside the
/// closed disk of this radius.
pub const DEFAULT_STATIONARITY_RADIUS: f64 = 1.0 + 1e-6;
/// Gram-matrix tolerance for orthonormal bases.
pub const GRAM_TOL: f64 = 1e-8;
/// Pivot tolerance for Gram-Schmidt: relative residual below this means the
/// seed family is numerically dependent.
pub const GS_PIVOT_TOL: f64 = 1e-10;

/// A bounded operator on the discretized zero-integral space, stored as an
/// `n × n` matrix acting on nodal clr values.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    grid: Grid,
    matrix: DMatrix<f64>,
    /// Whether the matrix maps quadrature-zero-integral vectors to
    /// quadrature-zero-integral vectors (within 1e-9), i.e. represents an
    /// operator of the zero-mean subspace.
    zero_mean: bool,
}

impl LinearMap {
    pub fn identity(grid: &Grid) -> LinearMap {
        LinearMap {
            matrix: DMatrix::identity(grid.len(), grid.len()),
            grid: grid.clone(),
            zero_mean: true,
        }
    }

    pub fn zero(grid: &Grid) -> LinearMap {
        LinearMap {
            matrix: DMatrix::zeros(grid.len(), grid.len()),
            grid: grid.clone(),
            zero_mean: true,
        }
    }

    /// Wrap a raw matrix; the zero-mean flag is determined by testing whether
    /// the weighted column sums are proportional to the weights.
    pub fn from_matrix(grid: &Grid, matrix: DMatrix<f64>) -> Result<LinearMap> {
        let n = grid.len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::Dimension(format!(
                "matrix is {}x{} for a grid of {} nodes",
                matrix.nrows(),
                matrix.ncols(),
                n
            )));
        }
        let zero_mean = preserves_zero_mean(grid, &matrix);
        Ok(LinearMap {
            grid: grid.clone(),
            matrix,
            zero_mean,
        })
    }

    /// Rank-one map `g ↦ ⟨g, u⟩ v`.
    pub fn rank_one(u: &ClrFunction, v: &ClrFunction) -> Result<LinearMap> {
        if !u.grid().compatible(v.grid()) {
            return Err(Error::Dimension("rank-one factors on different grids".into()));
        }
        let grid = u.grid().clone();
        let n = grid.len();
        let mut matrix = DMatrix::zeros(n, n);
        let w = grid.weights();
        for i in 0..n {
            for j in 0..n {
                matrix[(i, j)] = v.values()[i] * u.values()[j] * w[j];
            }
        }
        Ok(LinearMap {
            grid,
            matrix,
            zero_mean: true,
        })
    }

    /// Diagonal expansion `g ↦ Σ_j γ_j ⟨g, u_j⟩ u_j` over an orthonormal family.
    pub fn from_spectrum(basis: &OrthonormalBasis, gammas: &[f64]) -> Result<LinearMap> {
        if gammas.len() != basis.len() {
            return Err(Error::Dimension(format!(
                "{} coefficients for {} basis functions",
                gammas.len(),
                basis.len()
            )));
        }
        let grid = basis.grid().clone();
        let n = grid.len();
        let w = grid.weights();
        let mut matrix = DMatrix::zeros(n, n);
        for (gamma, f) in gammas.iter().zip(basis.functions()) {
            let vals = f.values();
            for i in 0..n {
                let gi = gamma * vals[i];
                if gi == 0.0 {
                    continue;
                }
                for j in 0..n {
                    matrix[(i, j)] += gi * vals[j] * w[j];
                }
            }
        }
        Ok(LinearMap {
            grid,
            matrix,
            zero_mean: true,
        })
    }

    /// Orthogonal projection onto the span of an orthonormal family.
    pub fn projection(basis: &OrthonormalBasis) -> Result<LinearMap> {
        LinearMap::from_spectrum(basis, &vec![1.0; basis.len()])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn preserves_zero_mean(&self) -> bool {
        self.zero_mean
    }

    /// Apply to a clr function; the result is re-centered when quadrature
    /// drift exceeds 1e-12.
    pub fn apply(&self, g: &ClrFunction) -> Result<ClrFunction> {
        if !self.grid.compatible(g.grid()) {
            return Err(Error::Dimension("operator and argument on different grids".into()));
        }
        let x = DVector::from_column_slice(g.values());
        let y = &self.matrix * x;
        let values: Vec<f64> = y.iter().cloned().collect();
        let drift = self.grid.integrate_unchecked(&values);
        if drift.abs() > 1e-12 {
            ClrFunction::demeaned(self.grid.clone(), values)
        } else {
            ClrFunction::new(self.grid.clone(), values)
        }
    }

    /// Adjoint under the quadrature inner product: `W⁻¹ Aᵀ W`.
    pub fn adjoint(&self) -> LinearMap {
        let n = self.grid.len();
        let w = self.grid.weights();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = self.matrix[(j, i)] * w[j] / w[i];
            }
        }
        LinearMap {
            grid: self.grid.clone(),
            matrix: out,
            zero_mean: self.zero_mean,
        }
    }

    pub fn scale(&self, c: f64) -> LinearMap {
        LinearMap {
            grid: self.grid.clone(),
            matrix: &self.matrix * c,
            zero_mean: self.zero_mean,
        }
    }

    pub fn add(&self, other: &LinearMap) -> Result<LinearMap> {
        if !self.grid.compatible(&other.grid) {
            return Err(Error::Dimension("operators on different grids".into()));
        }
        Ok(LinearMap {
            grid: self.grid.clone(),
            matrix: &self.matrix + &other.matrix,
            zero_mean: self.zero_mean && other.zero_mean,
        })
    }

    /// Composition `self ∘ other`.
    pub fn compose(&self, other: &LinearMap) -> Result<LinearMap> {
        if !self.grid.compatible(&other.grid) {
            return Err(Error::Dimension("operators on different grids".into()));
        }
        Ok(LinearMap {
            grid: self.grid.clone(),
            matrix: &self.matrix * &other.matrix,
            zero_mean: self.zero_mean && other.zero_mean,
        })
    }

    /// Operator norm under the quadrature inner product: the largest singular
    /// value of `W^{1/2} A W^{-1/2}`.
    pub fn op_norm(&self) -> f64 {
        weighted_op_norm(&self.grid, &self.matrix)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.norm()
    }
}

/// Largest singular value of `W^{1/2} M W^{-1/2}` for a matrix acting on
/// nodal values of the given grid.
pub fn weighted_op_norm(grid: &Grid, m: &DMatrix<f64>) -> f64 {
    let w = grid.weights();
    let n = grid.len();
    let scaled = DMatrix::from_fn(n, n, |i, j| (w[i] / w[j]).sqrt() * m[(i, j)]);
    op_norm(&scaled)
}

fn preserves_zero_mean(grid: &Grid, matrix: &DMatrix<f64>) -> bool {
    // A maps the zero-integral subspace into itself iff the weighted column
    // sums t_j = Σ_i w_i A_ij are proportional to the weights themselves.
    let w = grid.weights();
    let n = grid.len();
    let mut t = vec![0.0; n];
    for j in 0..n {
        let mut s = 0.0;
        for i in 0..n {
            s += w[i] * matrix[(i, j)];
        }
        t[j] = s;
    }
    let c: f64 = t.iter().sum::<f64>() / grid.measure();
    let scale = matrix.amax().max(1.0);
    t.iter()
        .zip(w)
        .all(|(tj, wj)| (tj - c * wj).abs() <= 1e-9 * scale)
}

fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    sv.iter().cloned().fold(0.0, f64::max)
}

/// A quadrature-orthonormal family of clr functions.
#[derive(Debug, Clone)]
pub struct OrthonormalBasis {
    grid: Grid,
    functions: Vec<ClrFunction>,
}

impl OrthonormalBasis {
    /// Validating constructor: the Gram matrix under the quadrature inner
    /// product must equal the identity within `GRAM_TOL`.
    pub fn new(grid: Grid, functions: Vec<ClrFunction>) -> Result<OrthonormalBasis> {
        for f in &functions {
            if !f.grid().compatible(&grid) {
                return Err(Error::Dimension("basis function on a different grid".into()));
            }
        }
        for i in 0..functions.len() {
            for j in i..functions.len() {
                let g = functions[i].dot(&functions[j])?;
                let target = if i == j { 1.0 } else { 0.0 };
                if (g - target).abs() > GRAM_TOL {
                    return Err(Error::DegenerateBasis(format!(
                        "Gram entry ({i},{j}) = {g}, expected {target}"
                    )));
                }
            }
        }
        Ok(OrthonormalBasis { grid, functions })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn functions(&self) -> &[ClrFunction] {
        &self.functions
    }

    pub fn function(&self, j: usize) -> &ClrFunction {
        &self.functions[j]
    }

    /// Orthogonal projection of `g` onto the span of the basis.
    pub fn project(&self, g: &ClrFunction) -> Result<ClrFunction> {
        let mut acc = ClrFunction::zero(&self.grid);
        for f in &self.functions {
            let c = g.dot(f)?;
            acc = acc.add_scaled(c, f)?;
        }
        Ok(acc)
    }
}

/// Modified Gram-Schmidt with one reorthogonalization pass under the
/// quadrature inner product. The first output is proportional to the first
/// input. Near-dependent seeds are rejected.
pub fn gram_schmidt(seed: &[ClrFunction]) -> Result<OrthonormalBasis> {
    if seed.is_empty() {
        return Err(Error::DegenerateBasis("empty seed family".into()));
    }
    let grid = seed[0].grid().clone();
    let mut out: Vec<ClrFunction> = Vec::with_capacity(seed.len());
    for (idx, f) in seed.iter().enumerate() {
        if !f.grid().compatible(&grid) {
            return Err(Error::Dimension("seed function on a different grid".into()));
        }
        let original_norm = f.norm().max(1.0);
        let mut v = f.clone();
        for _ in 0..2 {
            for u in &out {
                let c = v.dot(u)?;
                v = v.add_scaled(-c, u)?;
            }
        }
        let norm = v.norm();
        if norm < GS_PIVOT_TOL * original_norm {
            return Err(Error::DegenerateBasis(format!(
                "seed function {idx} is numerically dependent on its predecessors (residual {norm})"
            )));
        }
        out.push(v.scale(1.0 / norm));
    }
    OrthonormalBasis::new(grid, out)
}

/// First `m` non-constant Fourier elements on the grid interval, in the order
/// sin, cos, sin, cos, … of increasing frequency. They are zero-integral and
/// quadrature-orthonormal (the trapezoid rule is exact for full periods).
pub fn fourier_basis_clr(grid: &Grid, m: usize) -> Result<OrthonormalBasis> {
    if m < 1 {
        return Err(Error::Config("fourier basis needs m >= 1".into()));
    }
    if m > grid.len() / 2 {
        return Err(Error::Dimension(format!(
            "m = {m} exceeds the Nyquist guard n/2 = {}",
            grid.len() / 2
        )));
    }
    let length = grid.measure();
    let amp = (2.0 / length).sqrt();
    let mut functions = Vec::with_capacity(m);
    for j in 1..=m {
        let freq = ((j + 1) / 2) as f64;
        let values: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|x| {
                let phase = 2.0 * std::f64::consts::PI * freq * (x - grid.lower()) / length;
                if j % 2 == 1 {
                    amp * phase.sin()
                } else {
                    amp * phase.cos()
                }
            })
            .collect();
        functions.push(ClrFunction::demeaned(grid.clone(), values)?);
    }
    OrthonormalBasis::new(grid.clone(), functions)
}

/// Quadrature-orthonormal basis of the zero-integral polynomials of degree
/// `1..=m` (Legendre seeds, then Gram-Schmidt against the constant).
pub fn legendre_basis_clr(grid: &Grid, m: usize) -> Result<OrthonormalBasis> {
    if m < 1 {
        return Err(Error::Config("polynomial basis needs m >= 1".into()));
    }
    let n = grid.len();
    if m + 1 >= n {
        return Err(Error::Dimension(format!(
            "polynomial order {m} too large for {n} nodes"
        )));
    }
    // Legendre values on [-1, 1] mapped affinely onto the grid interval.
    let ts: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|x| 2.0 * (x - grid.lower()) / grid.measure() - 1.0)
        .collect();
    let mut prev: Vec<f64> = vec![1.0; n];
    let mut curr: Vec<f64> = ts.clone();
    let mut seeds: Vec<Vec<f64>> = vec![prev.clone(), curr.clone()];
    for j in 1..m {
        let jf = j as f64;
        let next: Vec<f64> = ts
            .iter()
            .zip(curr.iter().zip(&prev))
            .map(|(t, (c, p))| ((2.0 * jf + 1.0) * t * c - jf * p) / (jf + 1.0))
            .collect();
        prev = std::mem::take(&mut curr);
        curr = next;
        seeds.push(curr.clone());
    }
    // Orthonormalize [1, P_1, ..., P_m] under quadrature, then drop the
    // constant so the rest are exactly zero-integral.
    let w = grid.weights();
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    for (idx, mut v) in seeds.into_iter().enumerate() {
        for _ in 0..2 {
            for u in &ortho {
                let c: f64 = w.iter().zip(v.iter().zip(u)).map(|(wi, (a, b))| wi * a * b).sum();
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= c * ui;
                }
            }
        }
        let norm: f64 = w
            .iter()
            .zip(&v)
            .map(|(wi, a)| wi * a * a)
            .sum::<f64>()
            .sqrt();
        if norm < GS_PIVOT_TOL {
            return Err(Error::DegenerateBasis(format!(
                "polynomial seed {idx} collapsed during orthonormalization"
            )));
        }
        for vi in &mut v {
            *vi /= norm;
        }
        ortho.push(v);
    }
    let functions: Vec<ClrFunction> = ortho
        .into_iter()
        .skip(1)
        .map(|v| ClrFunction::demeaned(grid.clone(), v))
        .collect::<Result<_>>()?;
    OrthonormalBasis::new(grid.clone(), functions)
}

/// The autoregressive operator pencil `A(z) = I - z A₁ - … - z^p A_p`.
#[derive(Debug, Clone)]
pub struct OperatorPencil {
    grid: Grid,
    coeffs: Vec<LinearMap>,
}

impl OperatorPencil {
    pub fn new(coeffs: Vec<LinearMap>) -> Result<OperatorPencil> {
        if coeffs.is_empty() {
            return Err(Error::Config("pencil needs at least one coefficient".into()));
        }
        let grid = coeffs[0].grid().clone();
        for c in &coeffs {
            if !c.grid().compatible(&grid) {
                return Err(Error::Dimension("pencil coefficients on different grids".into()));
            }
        }
        Ok(OperatorPencil { grid, coeffs })
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coefficients(&self) -> &[LinearMap] {
        &self.coeffs
    }

    /// Evaluate `A(z) = I - Σ_k z^k A_k` at a real point.
    pub fn eval(&self, z: f64) -> LinearMap {
        let n = self.grid.len();
        let mut m = DMatrix::identity(n, n);
        let mut zk = 1.0;
        let mut zero_mean = true;
        for a in &self.coeffs {
            zk *= z;
            m -= a.matrix() * zk;
            zero_mean = zero_mean && a.preserves_zero_mean();
        }
        LinearMap {
            grid: self.grid.clone(),
            matrix: m,
            zero_mean,
        }
    }

    /// Evaluate at a complex point.
    pub fn eval_complex(&self, z: Complex64) -> DMatrix<Complex64> {
        let n = self.grid.len();
        let mut m = DMatrix::<Complex64>::identity(n, n);
        let mut zk = Complex64::new(1.0, 0.0);
        for a in &self.coeffs {
            zk *= z;
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] -= zk * a.matrix()[(i, j)];
                }
            }
        }
        m
    }

    /// Pencil derivative `A'(z) = -Σ_k k z^{k-1} A_k`.
    pub fn derivative(&self, z: f64) -> LinearMap {
        let n = self.grid.len();
        let mut m = DMatrix::zeros(n, n);
        let mut zk = 1.0;
        let mut zero_mean = true;
        for (k, a) in self.coeffs.iter().enumerate() {
            let kf = (k + 1) as f64;
            m -= a.matrix() * (kf * zk);
            zk *= z;
            zero_mean = zero_mean && a.preserves_zero_mean();
        }
        LinearMap {
            grid: self.grid.clone(),
            matrix: m,
            zero_mean,
        }
    }

    /// Companion operator of the AR(p) recursion: the `pn × pn` block matrix
    /// with the coefficients in the first block row and identities on the
    /// subdiagonal.
    pub fn companion(&self) -> DMatrix<f64> {
        let n = self.grid.len();
        let p = self.coeffs.len();
        let mut m = DMatrix::zeros(p * n, p * n);
        for (k, a) in self.coeffs.iter().enumerate() {
            m.view_mut((0, k * n), (n, n)).copy_from(a.matrix());
        }
        for b in 1..p {
            for i in 0..n {
                m[(b * n + i, (b - 1) * n + i)] = 1.0;
            }
        }
        m
    }
}

/// Outcome of the stationarity check: the pencil satisfies the spectral
/// condition iff every companion eigenvalue has modulus below `1/radius`.
#[derive(Debug, Clone)]
pub struct StationarityCheck {
    pub stationary: bool,
    /// Largest-modulus companion eigenvalue.
    pub witness: Complex64,
    pub spectral_radius: f64,
}

/// Check the stationarity condition on the pencil spectrum. `radius` must
/// exceed one; spectrum points of the pencil inside the disk of that radius
/// correspond to companion eigenvalues of modulus at least `1/radius`.
pub fn spectrum_check_stationary(pencil: &OperatorPencil, radius: f64) -> Result<StationarityCheck> {
    if !(radius > 1.0) {
        return Err(Error::Config(format!("radius must exceed 1, got {radius}")));
    }
    let companion = pencil.companion();
    let schur = nalgebra::linalg::Schur::try_new(companion, 1e-14, 0)
        .ok_or_else(|| Error::Numerical("Schur decomposition of the companion matrix failed".into()))?;
    let eigs = schur.complex_eigenvalues();
    let mut witness = Complex64::new(0.0, 0.0);
    let mut rho = 0.0;
    for e in eigs.iter() {
        let m = e.norm();
        if m > rho {
            rho = m;
            witness = *e;
        }
    }
    Ok(StationarityCheck {
        stationary: rho < 1.0 / radius,
        witness,
        spectral_radius: rho,
    })
}

/// Kernel/cokernel data of the pencil at `z = 1`, in quadrature-orthonormal
/// coordinates.
struct UnitPointAnalysis {
    /// W-orthonormal basis of `ker A(1)` (columns).
    kernel: Vec<DVector<f64>>,
    /// W-orthonormal basis of the W-orthogonal complement of `ran A(1)`.
    cokernel: Vec<DVector<f64>>,
    /// Pencil derivative at 1.
    derivative: DMatrix<f64>,
}

fn analyze_unit_point(pencil: &OperatorPencil, rel_tol: f64) -> Result<UnitPointAnalysis> {
    let a1 = pencil.eval(1.0);
    let n = pencil.grid.len();
    let svd = a1
        .matrix()
        .clone()
        .try_svd(true, true, 1e-14, 0)
        .ok_or_else(|| Error::Numerical("SVD of A(1) failed".into()))?;
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let vt = svd.v_t.as_ref().expect("right singular vectors requested");
    let sigma = &svd.singular_values;
    let smax = sigma.iter().cloned().fold(0.0_f64, f64::max);
    let mut kernel_raw = Vec::new();
    let mut coker_raw = Vec::new();
    let w = pencil.grid.weights();
    for i in 0..sigma.len() {
        if sigma[i] <= rel_tol * smax.max(f64::MIN_POSITIVE) {
            kernel_raw.push(DVector::from_iterator(n, (0..n).map(|r| vt[(i, r)])));
            // ran A(1)^⊥ under the quadrature inner product: q = W⁻¹ u for u
            // in the Euclidean left null space.
            coker_raw.push(DVector::from_iterator(n, (0..n).map(|r| u[(r, i)] / w[r])));
        }
    }
    if kernel_raw.is_empty() {
        return Err(Error::NotSingular);
    }
    let kernel = w_orthonormalize(&pencil.grid, kernel_raw)?;
    let cokernel = w_orthonormalize(&pencil.grid, coker_raw)?;
    Ok(UnitPointAnalysis {
        kernel,
        cokernel,
        derivative: pencil.derivative(1.0).matrix().clone(),
    })
}

fn w_orthonormalize(grid: &Grid, vecs: Vec<DVector<f64>>) -> Result<Vec<DVector<f64>>> {
    let w = grid.weights();
    let dot = |a: &DVector<f64>, b: &DVector<f64>| -> f64 {
        w.iter().zip(a.iter().zip(b.iter())).map(|(wi, (x, y))| wi * x * y).sum()
    };
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(vecs.len());
    for mut v in vecs {
        for _ in 0..2 {
            for u in &out {
                let c = dot(&v, u);
                v -= u * c;
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm < GS_PIVOT_TOL {
            return Err(Error::DegenerateBasis(
                "singular-subspace basis collapsed during orthonormalization".into(),
            ));
        }
        out.push(v / norm);
    }
    Ok(out)
}

/// Result of the unit-root structure check at `z = 1`.
#[derive(Debug, Clone)]
pub struct I1Check {
    /// Dimension of the numerical kernel of `A(1)`.
    pub kernel_dim: usize,
    /// Whether the restricted derivative map is invertible, i.e. whether the
    /// pencil inverse has a simple pole at 1.
    pub satisfied: bool,
    /// Smallest over largest singular value of the restricted map.
    pub condition: f64,
}

/// Check the simple-pole condition: the map `(I - P) A'(1)` restricted to
/// `ker A(1)`, expressed in orthonormal kernel/cokernel coordinates, must be
/// invertible. Errors when `A(1)` is numerically invertible.
pub fn i1_condition_check(pencil: &OperatorPencil) -> Result<I1Check> {
    i1_condition_check_with_tol(pencil, KERNEL_REL_TOL)
}

/// Same as [`i1_condition_check`] with a caller-chosen relative kernel
/// threshold.
pub fn i1_condition_check_with_tol(pencil: &OperatorPencil, kernel_rel_tol: f64) -> Result<I1Check> {
    let analysis = analyze_unit_point(pencil, kernel_rel_tol)?;
    let b = restricted_matrix(pencil.grid(), &analysis);
    let sv = b.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if smax > 0.0 { smin / smax } else { 0.0 };
    Ok(I1Check {
        kernel_dim: analysis.kernel.len(),
        satisfied: smax > 0.0 && smin > I1_REL_TOL * smax,
        condition,
    })
}

/// `B_ij = ⟨q_i, A'(1) u_j⟩_W` over the kernel basis `u` and cokernel basis `q`.
fn restricted_matrix(grid: &Grid, analysis: &UnitPointAnalysis) -> DMatrix<f64> {
    let r = analysis.kernel.len();
    let w = grid.weights();
    let mut b = DMatrix::zeros(r, r);
    for (j, uj) in analysis.kernel.iter().enumerate() {
        let image = &analysis.derivative * uj;
        for (i, qi) in analysis.cokernel.iter().enumerate() {
            let mut s = 0.0;
            for k in 0..grid.len() {
                s += w[k] * qi[k] * image[k];
            }
            b[(i, j)] = s;
        }
    }
    b
}

/// Residue of the pencil inverse at `z = 1`:
/// `N₋₁ = lim_{z→1} (1-z) A(z)⁻¹ = -[(I-P) A'(1)|_{ker A(1)}]⁻¹ (I-P)`,
/// computed with the quadrature-orthogonal projection onto `ran A(1)`. The
/// result does not depend on the projection choice; see
/// [`residue_with_projection`] for a caller-supplied projection.
pub fn residue_n1(pencil: &OperatorPencil) -> Result<LinearMap> {
    let analysis = analyze_unit_point(pencil, KERNEL_REL_TOL)?;
    let b = restricted_matrix(pencil.grid(), &analysis);
    let sv = b.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smax > 0.0) || smin <= I1_REL_TOL * smax {
        return Err(Error::NotI1(format!(
            "restricted derivative map is singular (condition {})",
            if smax > 0.0 { smin / smax } else { 0.0 }
        )));
    }
    let binv = b
        .try_inverse()
        .ok_or_else(|| Error::Numerical("failed to invert the restricted map".into()))?;
    // N₋₁ = -U B⁻¹ Qᵀ W in nodal coordinates.
    let n = pencil.grid.len();
    let r = analysis.kernel.len();
    let w = pencil.grid.weights();
    let mut qtw = DMatrix::zeros(r, n);
    for (i, qi) in analysis.cokernel.iter().enumerate() {
        for j in 0..n {
            qtw[(i, j)] = qi[j] * w[j];
        }
    }
    let mut u = DMatrix::zeros(n, r);
    for (j, uj) in analysis.kernel.iter().enumerate() {
        u.view_mut((0, j), (n, 1)).copy_from(uj);
    }
    let matrix = -(u * binv * qtw);
    LinearMap::from_matrix(pencil.grid(), matrix)
}

/// Residue computed with a caller-supplied (possibly oblique) projection
/// onto `ran A(1)`; used to exercise the projection-independence of the
/// closed form.
pub fn residue_with_projection(pencil: &OperatorPencil, projection: &LinearMap) -> Result<LinearMap> {
    if !projection.grid().compatible(pencil.grid()) {
        return Err(Error::Dimension("projection on a different grid".into()));
    }
    let p = projection.matrix();
    let idem = (p * p - p).norm() / p.norm().max(1.0);
    if idem > 1e-8 {
        return Err(Error::Config(format!("supplied map is not a projection (idempotency residual {idem})")));
    }
    let a1 = pencil.eval(1.0);
    let complement = DMatrix::identity(p.nrows(), p.ncols()) - p;
    let onto_range = (&complement * a1.matrix()).norm() / a1.matrix().norm().max(f64::MIN_POSITIVE);
    if onto_range > 1e-6 {
        return Err(Error::Config(format!(
            "supplied projection does not cover ran A(1) (residual {onto_range})"
        )));
    }
    let analysis = analyze_unit_point(pencil, KERNEL_REL_TOL)?;
    let n = pencil.grid.len();
    let r = analysis.kernel.len();
    let mut u = DMatrix::zeros(n, r);
    for (j, uj) in analysis.kernel.iter().enumerate() {
        u.view_mut((0, j), (n, 1)).copy_from(uj);
    }
    // Solve (I-P) A'(1) U a = (I-P) f for a, then map back through -U a.
    let s = &complement * &analysis.derivative * &u;
    let pinv = s
        .svd(true, true)
        .pseudo_inverse(1e-10)
        .map_err(|e| Error::Numerical(format!("pseudo-inverse of the restricted map failed: {e}")))?;
    let matrix = -(u * pinv * complement);
    LinearMap::from_matrix(pencil.grid(), matrix)
}

/// Estimate the pole order of `A(z)⁻¹` at `z = 1` from the growth of
/// `‖A(z)⁻¹‖ = 1/σ_min(A(z))` along `z = 1 - 10⁻ᵏ`, `k = 2..6`. The log-log
/// slope must be within 0.2 of an integer.
pub fn pole_order_estimate(pencil: &OperatorPencil) -> Result<usize> {
    // Require an actual singularity at 1 first.
    let sv1 = pencil.eval(1.0).matrix().clone().svd(false, false).singular_values;
    let smax1 = sv1.iter().cloned().fold(0.0_f64, f64::max);
    let smin1 = sv1.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin1 > KERNEL_REL_TOL * smax1 {
        return Err(Error::NotSingular);
    }
    let ks: Vec<f64> = (2..=6).map(|k| k as f64).collect();
    let mut ys = Vec::with_capacity(ks.len());
    for k in 2..=6 {
        let z = 1.0 - 10f64.powi(-k);
        let sv = pencil.eval(z).matrix().clone().svd(false, false).singular_values;
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(smin > 0.0) {
            return Err(Error::Numerical(format!("A({z}) is exactly singular")));
        }
        ys.push(-smin.log10());
    }
    let kbar = ks.iter().sum::<f64>() / ks.len() as f64;
    let ybar = ys.iter().sum::<f64>() / ys.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, y) in ks.iter().zip(&ys) {
        num += (k - kbar) * (y - ybar);
        den += (k - kbar) * (k - kbar);
    }
    let slope = num / den;
    let rounded = slope.round();
    if (slope - rounded).abs() > 0.2 || rounded < 1.0 {
        return Err(Error::Indeterminate(format!(
            "log-log growth slope {slope} is not close to a positive integer"
        )));
    }
    Ok(rounded as usize)
}
