//! Discretized Bayes Hilbert space over a compact interval.
//!
//! Probability densities with common support `K = [lower, upper]` are stored
//! by their values on a uniform node grid carrying composite-trapezoid
//! quadrature weights for the uniform reference measure. Perturbation `⊕`
//! (normalized pointwise product) and powering `⊙` (normalized pointwise
//! power) make the set of densities a vector space; the centered log-ratio
//! transform maps it isometrically onto the zero-integral subspace of L².
//! All tolerances used by the validating constructors are module constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Density values must integrate to one within this tolerance.
pub const UNIT_INTEGRAL_TOL: f64 = 1e-10;
/// Clr values must integrate to zero within this tolerance.
pub const ZERO_INTEGRAL_TOL: f64 = 1e-10;
/// Nodal density values at or below this are rejected rather than floored.
pub const POSITIVITY_FLOOR: f64 = 1e-300;
/// Clr values are clipped here before exponentiation; if clipping moves the
/// normalized density by more than `CLIP_IMPACT_TOL` in sup norm the input is
/// rejected as an overflow.
pub const EXP_CLIP: f64 = 700.0;
pub const CLIP_IMPACT_TOL: f64 = 1e-8;

/// Uniform discretization of a compact interval with trapezoid quadrature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lower: f64,
    upper: f64,
    n: usize,
    #[serde(skip)]
    nodes: Vec<f64>,
    #[serde(skip)]
    weights: Vec<f64>,
}

impl Grid {
    /// Build a uniform grid of `n >= 3` nodes on `[lower, upper]`, endpoints
    /// included, with composite-trapezoid weights summing to `upper - lower`.
    pub fn new(lower: f64, upper: f64, n: usize) -> Result<Grid> {
        if !(upper > lower) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::Config(format!(
                "grid interval [{lower}, {upper}] is not a proper interval"
            )));
        }
        if n < 3 {
            return Err(Error::Config(format!("grid needs n >= 3 nodes, got {n}")));
        }
        let h = (upper - lower) / (n - 1) as f64;
        let nodes: Vec<f64> = (0..n).map(|i| lower + h * i as f64).collect();
        let mut weights = vec![h; n];
        weights[0] = h / 2.0;
        weights[n - 1] = h / 2.0;
        Ok(Grid {
            lower,
            upper,
            n,
            nodes,
            weights,
        })
    }

    /// Default fixture grid: `[-3, 3]` with 601 nodes.
    pub fn default_fixture() -> Grid {
        Grid::new(-3.0, 3.0, 601).expect("default grid parameters are valid")
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Total mass of the reference measure, `λ(K) = upper - lower`.
    pub fn measure(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.n - 1) as f64
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Grids are interchangeable when they discretize the same interval with
    /// the same node count.
    pub fn compatible(&self, other: &Grid) -> bool {
        self.n == other.n && self.lower == other.lower && self.upper == other.upper
    }

    /// Quadrature value of `∫ g dλ` for raw nodal values.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.n {
            return Err(Error::Dimension(format!(
                "expected {} values on the grid, got {}",
                self.n,
                values.len()
            )));
        }
        Ok(self.integrate_unchecked(values))
    }

    pub(crate) fn integrate_unchecked(&self, values: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(values)
            .map(|(w, v)| w * v)
            .sum()
    }

    /// Quadrature inner product `∫ f g dλ` of raw nodal values.
    pub(crate) fn dot(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(f)
            .zip(g)
            .map(|((w, a), b)| w * a * b)
            .sum()
    }
}

/// Grid metadata written next to CSV artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
}

impl From<&Grid> for GridSpec {
    fn from(g: &Grid) -> GridSpec {
        GridSpec {
            lower: g.lower,
            upper: g.upper,
            n: g.n,
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        Grid::new(self.lower, self.upper, self.n)
    }
}

/// Strictly positive nodal values integrating to one: the unit-integral
/// representative of a Bayes-space element.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    grid: Grid,
    values: Vec<f64>,
}

/// Real nodal values with zero quadrature integral: an element of the
/// zero-mean subspace the clr transform maps onto.
#[derive(Debug, Clone, PartialEq)]
pub struct ClrFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl Density {
    /// Validating constructor; the values must already integrate to one.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Density> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "density has {} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        check_positive(&values)?;
        let integral = grid.integrate_unchecked(&values);
        if (integral - 1.0).abs() > UNIT_INTEGRAL_TOL {
            return Err(Error::DomainNonPositive(format!(
                "density integrates to {integral}, not 1 (tolerance {UNIT_INTEGRAL_TOL})"
            )));
        }
        Ok(Density { grid, values })
    }

    /// The neutral element of perturbation: constant `1/λ(K)`.
    pub fn uniform(grid: &Grid) -> Density {
        let c = 1.0 / grid.measure();
        Density {
            values: vec![c; grid.len()],
            grid: grid.clone(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate_unchecked(&self.values)
    }
}

impl ClrFunction {
    /// Validating constructor; the values must integrate to zero.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<ClrFunction> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "clr function has {} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        let integral = grid.integrate_unchecked(&values);
        if integral.abs() > ZERO_INTEGRAL_TOL {
            return Err(Error::DomainNonPositive(format!(
                "clr values integrate to {integral}, not 0 (tolerance {ZERO_INTEGRAL_TOL})"
            )));
        }
        Ok(ClrFunction { grid, values })
    }

    /// Subtract the λ-mean so the result integrates to zero, then wrap.
    pub fn demeaned(grid: Grid, mut values: Vec<f64>) -> Result<ClrFunction> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "clr function has {} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        let mean = grid.integrate_unchecked(&values) / grid.measure();
        for v in &mut values {
            *v -= mean;
        }
        Ok(ClrFunction { grid, values })
    }

    pub fn zero(grid: &Grid) -> ClrFunction {
        ClrFunction {
            values: vec![0.0; grid.len()],
            grid: grid.clone(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate_unchecked(&self.values)
    }

    /// Quadrature inner product with another clr function.
    pub fn dot(&self, other: &ClrFunction) -> Result<f64> {
        if !self.grid.compatible(&other.grid) {
            return Err(Error::Dimension("clr functions live on different grids".into()));
        }
        Ok(self.grid.dot(&self.values, &other.values))
    }

    pub fn norm(&self) -> f64 {
        self.grid.dot(&self.values, &self.values).max(0.0).sqrt()
    }

    /// Linear combination `self + c * other`, re-centered for safety.
    pub fn add_scaled(&self, c: f64, other: &ClrFunction) -> Result<ClrFunction> {
        if !self.grid.compatible(&other.grid) {
            return Err(Error::Dimension("clr functions live on different grids".into()));
        }
        let values: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + c * b)
            .collect();
        ClrFunction::demeaned(self.grid.clone(), values)
    }

    pub fn scale(&self, c: f64) -> ClrFunction {
        ClrFunction {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }
}

fn check_positive(values: &[f64]) -> Result<()> {
    for (i, v) in values.iter().enumerate() {
        if !(*v > POSITIVITY_FLOOR) || !v.is_finite() {
            return Err(Error::DomainNonPositive(format!(
                "value {v} at node {i} (values must exceed {POSITIVITY_FLOOR})"
            )));
        }
    }
    Ok(())
}

/// Composite-trapezoid value of `∫ g dλ` for raw values on `grid`.
pub fn integrate(values: &[f64], grid: &Grid) -> Result<f64> {
    grid.integrate(values)
}

/// Divide positive raw values by their quadrature integral, producing the
/// unit-integral representative.
pub fn normalize(raw: &[f64], grid: &Grid) -> Result<Density> {
    if raw.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "expected {} values on the grid, got {}",
            grid.len(),
            raw.len()
        )));
    }
    check_positive(raw)?;
    let integral = grid.integrate_unchecked(raw);
    if !integral.is_finite() || integral <= 0.0 {
        return Err(Error::DomainNonPositive(format!(
            "raw values integrate to {integral}"
        )));
    }
    let values: Vec<f64> = raw.iter().map(|v| v / integral).collect();
    check_positive(&values)?;
    Ok(Density {
        grid: grid.clone(),
        values,
    })
}

/// Centered log-ratio transform: `log f` minus its λ-mean, so the output
/// integrates to zero regardless of `λ(K)`.
pub fn clr(f: &Density) -> ClrFunction {
    let grid = f.grid.clone();
    let logs: Vec<f64> = f.values.iter().map(|v| v.ln()).collect();
    let mean = grid.integrate_unchecked(&logs) / grid.measure();
    let values: Vec<f64> = logs.iter().map(|v| v - mean).collect();
    ClrFunction { grid, values }
}

/// Inverse clr transform: exponentiate and renormalize.
///
/// Inputs whose quadrature integral drifts beyond the zero-integral tolerance
/// are silently re-centered first (the inverse is defined on the quotient).
/// Values are clipped at `±EXP_CLIP` before exponentiation; if the clip moves
/// the normalized density by more than `CLIP_IMPACT_TOL` in sup norm the
/// input is rejected with an overflow error.
pub fn clr_inv(g: &ClrFunction) -> Result<Density> {
    clr_inv_values(&g.grid, &g.values)
}

pub(crate) fn clr_inv_values(grid: &Grid, raw: &[f64]) -> Result<Density> {
    if raw.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "expected {} values on the grid, got {}",
            grid.len(),
            raw.len()
        )));
    }
    let integral = grid.integrate_unchecked(raw);
    let mean = if integral.abs() > ZERO_INTEGRAL_TOL {
        integral / grid.measure()
    } else {
        0.0
    };
    let centered: Vec<f64> = raw.iter().map(|v| v - mean).collect();
    let exact = exp_normalized(grid, &centered)?;
    let clipped_changed = centered.iter().any(|v| v.abs() > EXP_CLIP);
    if clipped_changed {
        let clipped: Vec<f64> = centered.iter().map(|v| v.clamp(-EXP_CLIP, EXP_CLIP)).collect();
        let with_clip = exp_normalized(grid, &clipped)?;
        let sup = exact
            .iter()
            .zip(&with_clip)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        if sup > CLIP_IMPACT_TOL {
            return Err(Error::Overflow(format!(
                "clipping clr values at ±{EXP_CLIP} moves the density by {sup} in sup norm"
            )));
        }
    }
    check_positive(&exact)?;
    Ok(Density {
        grid: grid.clone(),
        values: exact,
    })
}

/// Exponentiate with a max-shift so the normalization never overflows; the
/// shift cancels in the normalization, so the result is exact.
fn exp_normalized(grid: &Grid, values: &[f64]) -> Result<Vec<f64>> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical("non-finite clr values".into()));
    }
    let expd: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let integral = grid.integrate_unchecked(&expd);
    if !(integral > 0.0) || !integral.is_finite() {
        return Err(Error::DomainNonPositive(format!(
            "exponentiated clr values integrate to {integral}"
        )));
    }
    Ok(expd.iter().map(|v| v / integral).collect())
}

/// Perturbation `f ⊕ g`: normalized pointwise product.
pub fn perturb(f: &Density, g: &Density) -> Result<Density> {
    if !f.grid.compatible(&g.grid) {
        return Err(Error::Dimension("densities live on different grids".into()));
    }
    // Work in log space so extreme products cannot overflow.
    let logs: Vec<f64> = f
        .values
        .iter()
        .zip(&g.values)
        .map(|(a, b)| a.ln() + b.ln())
        .collect();
    let values = exp_normalized(&f.grid, &logs)?;
    check_positive(&values)?;
    Ok(Density {
        grid: f.grid.clone(),
        values,
    })
}

/// Negative perturbation `f ⊖ g = f ⊕ ((-1) ⊙ g)`.
pub fn perturb_inv(f: &Density, g: &Density) -> Result<Density> {
    perturb(f, &power(-1.0, g)?)
}

/// Powering `a ⊙ f`: normalized pointwise power.
pub fn power(a: f64, f: &Density) -> Result<Density> {
    let logs: Vec<f64> = f.values.iter().map(|v| a * v.ln()).collect();
    let span = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - logs.iter().cloned().fold(f64::INFINITY, f64::min);
    if !span.is_finite() {
        return Err(Error::Overflow(format!("powering by {a} produced non-finite logs")));
    }
    if span > 2.0 * EXP_CLIP {
        return Err(Error::Overflow(format!(
            "powering by {a} spreads log values over {span}, past the clip window"
        )));
    }
    let values = exp_normalized(&f.grid, &logs)?;
    check_positive(&values)?;
    Ok(Density {
        grid: f.grid.clone(),
        values,
    })
}

/// Bayes-space inner product `⟨f, g⟩ = ∫ clr(f) clr(g) dλ`.
pub fn inner_product(f: &Density, g: &Density) -> Result<f64> {
    if !f.grid.compatible(&g.grid) {
        return Err(Error::Dimension("densities live on different grids".into()));
    }
    Ok(clr(f).dot(&clr(g))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid() -> Grid {
        Grid::default_fixture()
    }

    /// Truncated standard normal on the fixture grid.
    pub(crate) fn trunc_normal(grid: &Grid, var: f64) -> Density {
        let raw: Vec<f64> = grid.nodes().iter().map(|x| (-x * x / (2.0 * var)).exp()).collect();
        normalize(&raw, grid).unwrap()
    }

    #[test]
    fn grid_invariants() {
        let g = grid();
        assert_eq!(g.len(), 601);
        let h = g.spacing();
        for w in g.nodes().windows(2) {
            assert_abs_diff_eq!(w[1] - w[0], h, epsilon = 1e-12 * h);
        }
        let total: f64 = g.weights().iter().sum();
        assert_abs_diff_eq!(total, g.measure(), epsilon = 1e-12 * g.measure());
        assert!(Grid::new(0.0, 1.0, 2).is_err());
        assert!(Grid::new(1.0, 0.0, 10).is_err());
    }

    #[test]
    fn integrate_constant_and_odd() {
        let g = grid();
        let ones = vec![1.0; g.len()];
        assert_abs_diff_eq!(g.integrate(&ones).unwrap(), 6.0, epsilon = 1e-12);

        let g2 = Grid::new(-1.0, 1.0, 201).unwrap();
        let xs: Vec<f64> = g2.nodes().to_vec();
        assert_abs_diff_eq!(g2.integrate(&xs).unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn integrate_quadratic_oracle() {
        // Analytic antiderivative: ∫_0^1 x² dx = 1/3.
        let g = Grid::new(0.0, 1.0, 1001).unwrap();
        let sq: Vec<f64> = g.nodes().iter().map(|x| x * x).collect();
        assert_abs_diff_eq!(g.integrate(&sq).unwrap(), 1.0 / 3.0, epsilon = 1e-6);
    }

    #[test]
    fn integrate_length_mismatch() {
        let g = grid();
        assert!(matches!(g.integrate(&[1.0, 2.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn quadrature_converges_second_order() {
        let exact = 1.0 / 3.0;
        let err = |n: usize| {
            let g = Grid::new(0.0, 1.0, n).unwrap();
            let sq: Vec<f64> = g.nodes().iter().map(|x| x * x).collect();
            (g.integrate(&sq).unwrap() - exact).abs()
        };
        let (e1, e2, e3) = (err(101), err(201), err(401));
        assert!(e1 / e2 > 3.5 && e1 / e2 < 4.5, "ratio {}", e1 / e2);
        assert!(e2 / e3 > 3.5 && e2 / e3 < 4.5, "ratio {}", e2 / e3);
    }

    #[test]
    fn normalize_uniform() {
        let g = grid();
        let d = normalize(&vec![2.0; g.len()], &g).unwrap();
        for v in d.values() {
            assert_abs_diff_eq!(*v, 1.0 / 6.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn normalize_gaussian_matches_direct_division() {
        let g = grid();
        let raw: Vec<f64> = g.nodes().iter().map(|x| (-x * x / 2.0).exp()).collect();
        let c = g.integrate(&raw).unwrap();
        let d = normalize(&raw, &g).unwrap();
        for (v, r) in d.values().iter().zip(&raw) {
            assert_abs_diff_eq!(*v, r / c, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(d.integral(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn normalize_idempotent() {
        let g = grid();
        let d = trunc_normal(&g, 1.0);
        let d2 = normalize(d.values(), &g).unwrap();
        for (a, b) in d.values().iter().zip(d2.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_nonpositive() {
        let g = grid();
        let mut raw = vec![1.0; g.len()];
        raw[17] = 0.0;
        assert!(matches!(normalize(&raw, &g), Err(Error::DomainNonPositive(_))));
        raw[17] = -1.0;
        assert!(matches!(normalize(&raw, &g), Err(Error::DomainNonPositive(_))));
        let zeros = vec![0.0; g.len()];
        assert!(matches!(normalize(&zeros, &g), Err(Error::DomainNonPositive(_))));
    }

    #[test]
    fn clr_of_uniform_is_zero() {
        let g = grid();
        let u = Density::uniform(&g);
        let c = clr(&u);
        for v in c.values() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn clr_gaussian_demeaning_oracle() {
        // clr of the truncated standard normal is -x²/2 + (1/6)∫ x²/2 dx = -x²/2 + 1.5.
        // The demeaning constant converges at the quadrature rate, so the
        // analytic oracle is checked on a grid fine enough for 1e-6.
        let g = Grid::new(-3.0, 3.0, 6001).unwrap();
        let d = trunc_normal(&g, 1.0);
        let c = clr(&d);
        let mid = g.len() / 2;
        assert_abs_diff_eq!(c.values()[mid], 1.5, epsilon = 1e-6);
        for (x, v) in g.nodes().iter().zip(c.values()) {
            assert_abs_diff_eq!(*v, -x * x / 2.0 + 1.5, epsilon = 1e-6);
        }
        assert_abs_diff_eq!(c.integral(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn clr_is_linear_over_perturbation() {
        let g = grid();
        let f = trunc_normal(&g, 1.0);
        let ff = perturb(&f, &f).unwrap();
        let lhs = clr(&ff);
        let rhs = clr(&f);
        for (a, b) in lhs.values().iter().zip(rhs.values()) {
            assert_abs_diff_eq!(*a, 2.0 * b, epsilon = 1e-12);
        }
    }

    #[test]
    fn clr_inv_zero_is_uniform() {
        let g = grid();
        let d = clr_inv(&ClrFunction::zero(&g)).unwrap();
        for v in d.values() {
            assert_abs_diff_eq!(*v, 1.0 / 6.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn clr_round_trips() {
        let g = grid();
        // A deliberately lopsided positive function.
        let raw: Vec<f64> = g
            .nodes()
            .iter()
            .map(|x| 0.3 + (x * 1.3).sin().powi(2) + 0.1 * (x - 0.4).powi(2))
            .collect();
        let f = normalize(&raw, &g).unwrap();
        let back = clr_inv(&clr(&f)).unwrap();
        for (a, b) in f.values().iter().zip(back.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        let c = clr(&f);
        let c2 = clr(&clr_inv(&c).unwrap());
        for (a, b) in c.values().iter().zip(c2.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn clr_inv_gaussian_oracle() {
        let g = grid();
        let values: Vec<f64> = g.nodes().iter().map(|x| -x * x / 2.0).collect();
        let c = ClrFunction::demeaned(g.clone(), values).unwrap();
        let d = clr_inv(&c).unwrap();
        let expect = trunc_normal(&g, 1.0);
        for (a, b) in d.values().iter().zip(expect.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn clr_inv_overflow_policy() {
        let g = grid();
        // Huge spread: clipping at ±700 distorts the density badly.
        let values: Vec<f64> = g.nodes().iter().map(|x| -900.0 * x * x).collect();
        let c = ClrFunction::demeaned(g.clone(), values).unwrap();
        match clr_inv(&c) {
            Err(Error::Overflow(_)) | Err(Error::DomainNonPositive(_)) => {}
            other => panic!("expected overflow/positivity rejection, got {other:?}"),
        }
    }

    #[test]
    fn perturb_neutral_and_inverse() {
        let g = grid();
        let f = trunc_normal(&g, 1.0);
        let u = Density::uniform(&g);
        let same = perturb(&f, &u).unwrap();
        for (a, b) in same.values().iter().zip(f.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
        let inv = power(-1.0, &f).unwrap();
        let unit = perturb(&f, &inv).unwrap();
        for v in unit.values() {
            assert_abs_diff_eq!(*v, 1.0 / 6.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn perturb_gaussians_halves_variance() {
        let g = grid();
        let f = trunc_normal(&g, 1.0);
        let expect = trunc_normal(&g, 0.5);
        let got = perturb(&f, &f).unwrap();
        for (a, b) in got.values().iter().zip(expect.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn perturb_grid_mismatch() {
        let f = trunc_normal(&grid(), 1.0);
        let other = Grid::new(-3.0, 3.0, 301).unwrap();
        let h = trunc_normal(&other, 1.0);
        assert!(matches!(perturb(&f, &h), Err(Error::Dimension(_))));
    }

    #[test]
    fn power_neutral_zero_and_square() {
        let g = grid();
        let f = trunc_normal(&g, 1.0);
        let one = power(1.0, &f).unwrap();
        for (a, b) in one.values().iter().zip(f.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
        let zero = power(0.0, &f).unwrap();
        for v in zero.values() {
            assert_abs_diff_eq!(*v, 1.0 / 6.0, epsilon = 1e-13);
        }
        let two = power(2.0, &f).unwrap();
        let expect = trunc_normal(&g, 0.5);
        for (a, b) in two.values().iter().zip(expect.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn power_overflow_guard() {
        let g = grid();
        let f = trunc_normal(&g, 1.0);
        assert!(matches!(power(1e6, &f), Err(Error::Overflow(_))));
    }

    #[test]
    fn inner_product_uniform_and_symmetry() {
        let g = grid();
        let f = trunc_normal(&g, 1.0);
        let u = Density::uniform(&g);
        assert_abs_diff_eq!(inner_product(&u, &f).unwrap(), 0.0, epsilon = 1e-12);

        let raw: Vec<f64> = g.nodes().iter().map(|x| 1.0 + 0.5 * (x * 2.0).cos()).collect();
        let h = normalize(&raw, &g).unwrap();
        let fg = inner_product(&f, &h).unwrap();
        let gf = inner_product(&h, &f).unwrap();
        assert_abs_diff_eq!(fg, gf, epsilon = 1e-12);
        assert!(inner_product(&f, &f).unwrap() > 0.0);
    }
}
