//! Seedable simulation of density-valued processes.
//!
//! Innovations follow the smooth-bridge recipe: a standard Brownian bridge is
//! rescaled onto the grid interval, demeaned, projected onto low-order
//! polynomials and scaled, and the result is mapped back to a density through
//! the inverse clr transform. AR(p) recursions and I(1) moving averages are
//! iterated in clr coordinates.
//!
//! Reproducibility: all randomness flows through [`RngSeed`], a (seed,
//! stream) pair driving a ChaCha12 generator. Derived streams are obtained by
//! hashing the parent stream together with a child index, so simulations are
//! bit-identical for a fixed seed and crate version regardless of thread
//! scheduling (the pinned `rand_chacha` version is part of the contract).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{clr, clr_inv, ClrFunction, Density, Grid};
use crate::operators::{legendre_basis_clr, LinearMap, OrthonormalBasis};

/// Default number of Brownian-bridge increments per innovation draw.
pub const DEFAULT_BRIDGE_STEPS: usize = 1024;
/// Default polynomial order of the innovation projection.
pub const DEFAULT_POLY_ORDER: usize = 10;
/// Default innovation scale.
pub const DEFAULT_SCALE: f64 = 0.3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A reproducible generator label: identical (seed, stream) pairs reproduce
/// identical draws bit for bit on one build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSeed {
    pub seed: u64,
    pub stream: u64,
}

impl RngSeed {
    pub fn new(seed: u64) -> RngSeed {
        RngSeed { seed, stream: 0 }
    }

    pub fn with_stream(seed: u64, stream: u64) -> RngSeed {
        RngSeed { seed, stream }
    }

    /// Derive an independent child stream: `hash(hash(stream) ^ index)`.
    pub fn substream(&self, index: u64) -> RngSeed {
        RngSeed {
            seed: self.seed,
            stream: splitmix64(splitmix64(self.stream) ^ index),
        }
    }

    pub fn rng(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Discrete standard Brownian bridge on `[0, 1]`: `steps + 1` values with
/// both endpoints pinned at zero.
pub fn brownian_bridge(steps: usize, seed: RngSeed) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(Error::Config(format!("bridge needs at least 2 steps, got {steps}")));
    }
    let mut rng = seed.rng();
    let dt = 1.0 / steps as f64;
    let sd = dt.sqrt();
    let mut path = Vec::with_capacity(steps + 1);
    path.push(0.0);
    let mut w = 0.0;
    for _ in 0..steps {
        let z: f64 = rng.sample(StandardNormal);
        w += sd * z;
        path.push(w);
    }
    let terminal = path[steps];
    for (i, v) in path.iter_mut().enumerate() {
        *v -= terminal * (i as f64 * dt);
    }
    path[steps] = 0.0;
    Ok(path)
}

/// Map a `[0, 1]` path affinely onto the grid interval by linear
/// interpolation, then subtract the quadrature mean so the result is a
/// zero-integral function.
pub fn rescale_demean_bridge(path: &[f64], grid: &Grid) -> Result<ClrFunction> {
    if path.len() < 2 {
        return Err(Error::Config("path needs at least two points".into()));
    }
    let steps = (path.len() - 1) as f64;
    let values: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|x| {
            let r = ((x - grid.lower()) / grid.measure()).clamp(0.0, 1.0);
            let pos = r * steps;
            let lo = pos.floor() as usize;
            if lo >= path.len() - 1 {
                path[path.len() - 1]
            } else {
                let frac = pos - lo as f64;
                path[lo] * (1.0 - frac) + path[lo + 1] * frac
            }
        })
        .collect();
    ClrFunction::demeaned(grid.clone(), values)
}

/// Orthogonal projection onto the zero-integral polynomials of degree at
/// most `m`.
pub fn poly_project(g: &ClrFunction, m: usize) -> Result<ClrFunction> {
    let basis = legendre_basis_clr(g.grid(), m)?;
    basis.project(g)
}

/// Configuration of the smooth bridge innovation.
#[derive(Debug, Clone)]
pub struct InnovationConfig {
    grid: Grid,
    scale: f64,
    poly_order: usize,
    bridge_steps: usize,
    basis: OrthonormalBasis,
}

impl InnovationConfig {
    pub fn new(grid: Grid, scale: f64, poly_order: usize) -> Result<InnovationConfig> {
        InnovationConfig::with_bridge_steps(grid, scale, poly_order, DEFAULT_BRIDGE_STEPS)
    }

    pub fn with_bridge_steps(
        grid: Grid,
        scale: f64,
        poly_order: usize,
        bridge_steps: usize,
    ) -> Result<InnovationConfig> {
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(Error::Config(format!("innovation scale must be nonnegative, got {scale}")));
        }
        if !(1..=20).contains(&poly_order) {
            return Err(Error::Config(format!(
                "polynomial order must be between 1 and 20, got {poly_order}"
            )));
        }
        if bridge_steps < 2 {
            return Err(Error::Config("bridge needs at least 2 steps".into()));
        }
        let basis = legendre_basis_clr(&grid, poly_order)?;
        Ok(InnovationConfig {
            grid,
            scale,
            poly_order,
            bridge_steps,
            basis,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn poly_order(&self) -> usize {
        self.poly_order
    }
}

/// The clr image of one innovation draw: `scale · P_m(rescaled demeaned bridge)`.
pub fn innovation_clr(cfg: &InnovationConfig, seed: RngSeed) -> Result<ClrFunction> {
    let path = brownian_bridge(cfg.bridge_steps, seed)?;
    let bar = rescale_demean_bridge(&path, &cfg.grid)?;
    let projected = cfg.basis.project(&bar)?;
    Ok(projected.scale(cfg.scale))
}

/// One innovation density.
pub fn draw_innovation(cfg: &InnovationConfig, seed: RngSeed) -> Result<Density> {
    clr_inv(&innovation_clr(cfg, seed)?)
}

/// Configuration of an AR(p) recursion in clr coordinates.
#[derive(Debug, Clone)]
pub struct ArConfig {
    /// Coefficient maps `Ã₁ … Ã_p` acting on clr coordinates.
    pub coeffs: Vec<LinearMap>,
    /// Initial densities `f₀, f₋₁, …, f₋ₚ₊₁`.
    pub initial: Vec<Density>,
    pub innovation: InnovationConfig,
    pub horizon: usize,
}

impl ArConfig {
    fn validate(&self) -> Result<()> {
        if self.coeffs.is_empty() {
            return Err(Error::Config("AR recursion needs at least one coefficient".into()));
        }
        if self.coeffs.len() != self.initial.len() {
            return Err(Error::Config(format!(
                "{} coefficients but {} initial densities",
                self.coeffs.len(),
                self.initial.len()
            )));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let grid = self.innovation.grid();
        for c in &self.coeffs {
            if !c.grid().compatible(grid) {
                return Err(Error::Dimension("coefficient grid differs from innovation grid".into()));
            }
        }
        for f in &self.initial {
            if !f.grid().compatible(grid) {
                return Err(Error::Dimension("initial density grid differs from innovation grid".into()));
            }
        }
        Ok(())
    }
}

/// Iterate `f_t = A₁ f_{t-1} ⊕ … ⊕ A_p f_{t-p} ⊕ ε_t` for `t = 1..=horizon`
/// in clr coordinates. Innovation `ε_t` is drawn from `seed.substream(t)`.
pub fn simulate_arp(cfg: &ArConfig, seed: RngSeed) -> Result<Vec<Density>> {
    cfg.validate()?;
    // state[0] = f̃_{t-1}, state[1] = f̃_{t-2}, ...
    let mut state: Vec<ClrFunction> = cfg.initial.iter().map(clr).collect();
    let mut out = Vec::with_capacity(cfg.horizon);
    for t in 1..=cfg.horizon {
        let mut acc = innovation_clr(&cfg.innovation, seed.substream(t as u64))?;
        for (a, lag) in cfg.coeffs.iter().zip(&state) {
            let applied = a.apply(lag)?;
            acc = acc.add_scaled(1.0, &applied)?;
        }
        let density = clr_inv(&acc)
            .map_err(|e| Error::Overflow(format!("at time index {t}: {e}")))?;
        state.rotate_right(1);
        state[0] = acc;
        out.push(density);
    }
    Ok(out)
}

/// Moving-average coefficients of an I(1) specification: `Δf_t` is the MA
/// filter applied to the innovations.
#[derive(Debug, Clone)]
pub struct MaSpec {
    grid: Grid,
    coeffs: Vec<LinearMap>,
}

impl MaSpec {
    pub fn new(coeffs: Vec<LinearMap>) -> Result<MaSpec> {
        if coeffs.is_empty() {
            return Err(Error::Config("MA specification needs at least one coefficient".into()));
        }
        let grid = coeffs[0].grid().clone();
        for c in &coeffs {
            if !c.grid().compatible(&grid) {
                return Err(Error::Dimension("MA coefficients on different grids".into()));
            }
        }
        Ok(MaSpec { grid, coeffs })
    }

    /// Truncate an infinite coefficient rule at the point where the weighted
    /// tail `Σ_{k>K} k‖N_k‖` drops below 1e-8 of the total, probing up to
    /// `max_terms` terms. Rules whose tail does not vanish by then are
    /// rejected as non-summable.
    pub fn from_rule<F>(grid: &Grid, rule: F, max_terms: usize) -> Result<MaSpec>
    where
        F: Fn(usize) -> LinearMap,
    {
        let mut coeffs = Vec::new();
        let mut weighted: Vec<f64> = Vec::new();
        for k in 0..max_terms.max(1) {
            let c = rule(k);
            if !c.grid().compatible(grid) {
                return Err(Error::Dimension("MA rule produced a map on a different grid".into()));
            }
            weighted.push(k.max(1) as f64 * c.frobenius_norm());
            coeffs.push(c);
        }
        let total: f64 = weighted.iter().sum();
        if total == 0.0 {
            return MaSpec::new(coeffs);
        }
        let mut tail = 0.0;
        let mut cut = weighted.len();
        for k in (0..weighted.len()).rev() {
            if tail + weighted[k] >= 1e-8 * total {
                break;
            }
            tail += weighted[k];
            cut = k;
        }
        if cut == weighted.len() && weighted[weighted.len() - 1] >= 1e-8 * total {
            return Err(Error::Config(format!(
                "MA coefficients not summable within {max_terms} terms (last weighted norm {})",
                weighted[weighted.len() - 1]
            )));
        }
        coeffs.truncate(cut.max(1));
        MaSpec::new(coeffs)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coefficients(&self) -> &[LinearMap] {
        &self.coeffs
    }

    /// The long-run map `N(1) = Σ_k N_k`.
    pub fn long_run(&self) -> LinearMap {
        let mut acc = LinearMap::zero(&self.grid);
        for c in &self.coeffs {
            acc = acc.add(c).expect("same grid");
        }
        acc
    }
}

/// Simulate `f_1..f_T` of an I(1) process via the Beveridge-Nelson
/// decomposition `f̃_t = Ñ(1) ξ̃_t + ν̃_t` with the initial condition
/// `f₀ = ν₀` absorbing the transient, where `ξ̃_t` is the innovation partial
/// sum and `ν̃_t` is the stationary tail with coefficients
/// `Ň_k = -Σ_{j>k} N_j`.
pub fn simulate_i1_ma(
    spec: &MaSpec,
    innovation: &InnovationConfig,
    horizon: usize,
    seed: RngSeed,
) -> Result<Vec<Density>> {
    if horizon < 1 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    if !spec.grid().compatible(innovation.grid()) {
        return Err(Error::Dimension("MA grid differs from innovation grid".into()));
    }
    let k_max = spec.coeffs.len();
    let long_run = spec.long_run();
    // Ň_k = -Σ_{j>k} N_j for k = 0..k_max-1 (zero afterwards).
    let mut bn_tail: Vec<LinearMap> = Vec::with_capacity(k_max);
    let mut suffix = LinearMap::zero(spec.grid());
    for k in (1..k_max).rev() {
        suffix = suffix.add(&spec.coeffs[k])?;
        bn_tail.push(suffix.scale(-1.0));
    }
    bn_tail.reverse(); // bn_tail[k] = Ň_k for k = 0..k_max-1

    // Innovations ε_t for t = 1-k_max ..= horizon, indexed from zero.
    let offset = k_max as i64 - 1;
    let draws: Vec<ClrFunction> = (0..(horizon as i64 + k_max as i64))
        .map(|idx| innovation_clr(innovation, seed.substream(idx as u64)))
        .collect::<Result<_>>()?;
    let eps = |t: i64| -> &ClrFunction { &draws[(t + offset) as usize] };

    let mut xi = ClrFunction::zero(spec.grid());
    let mut out = Vec::with_capacity(horizon);
    for t in 1..=horizon as i64 {
        xi = xi.add_scaled(1.0, eps(t))?;
        let mut acc = long_run.apply(&xi)?;
        for (k, tail) in bn_tail.iter().enumerate() {
            let term = tail.apply(eps(t - k as i64))?;
            acc = acc.add_scaled(1.0, &term)?;
        }
        let density = clr_inv(&acc)
            .map_err(|e| Error::Overflow(format!("at time index {t}: {e}")))?;
        out.push(density);
    }
    Ok(out)
}

/// Draw `n` observations from a density by inverting its piecewise-linear
/// trapezoid CDF.
pub fn sample_from_density(density: &Density, n: usize, seed: RngSeed) -> Vec<f64> {
    let grid = density.grid();
    let m = grid.len();
    let values = density.values();
    // Cumulative trapezoid mass at the nodes, normalized to end at one.
    let mut cdf = Vec::with_capacity(m);
    let mut acc = 0.0;
    cdf.push(0.0);
    for i in 1..m {
        acc += 0.5 * (values[i - 1] + values[i]) * grid.spacing();
        cdf.push(acc);
    }
    let total = *cdf.last().expect("nonempty");
    for c in cdf.iter_mut() {
        *c /= total;
    }
    let mut rng = seed.rng();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random_range(0.0..1.0);
        let hi = cdf.partition_point(|c| *c < u).clamp(1, m - 1);
        let lo = hi - 1;
        let span = cdf[hi] - cdf[lo];
        let frac = if span > 0.0 { (u - cdf[lo]) / span } else { 0.5 };
        out.push(grid.nodes()[lo] + frac * grid.spacing());
    }
    out
}

/// The numerical-example autoregression: eigenvalues `2^{1-j}` on the basis
/// obtained by Gram-Schmidt from the normalized clr image of a Cauchy(0, 1/4)
/// density followed by Fourier elements, recursing around the truncated
/// standard normal mean.
#[derive(Debug, Clone)]
pub struct PaperAr1 {
    /// The autoregressive operator in clr coordinates.
    pub operator: LinearMap,
    /// The recursion center: truncated standard normal on the grid.
    pub mean: Density,
    /// Basis carrying the operator's spectrum; the first element spans the
    /// attractor direction.
    pub basis: OrthonormalBasis,
}

/// Build the numerical-example operator with `terms` spectral terms.
pub fn paper_ar1(grid: &Grid, terms: usize) -> Result<PaperAr1> {
    if terms < 1 {
        return Err(Error::Config("need at least one spectral term".into()));
    }
    let raw_cauchy: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|x| 1.0 / (std::f64::consts::PI * 0.25 * (1.0 + (x / 0.25).powi(2))))
        .collect();
    let cauchy = crate::grid::normalize(&raw_cauchy, grid)?;
    let mut seedfns = vec![clr(&cauchy)];
    if terms > 1 {
        let four = crate::operators::fourier_basis_clr(grid, terms)?;
        seedfns.extend(four.functions().iter().skip(1).cloned());
    }
    let basis = crate::operators::gram_schmidt(&seedfns)?;
    let gammas: Vec<f64> = (1..=terms as i32).map(|j| 2f64.powi(1 - j)).collect();
    let operator = LinearMap::from_spectrum(&basis, &gammas)?;

    let raw_normal: Vec<f64> = grid.nodes().iter().map(|x| (-x * x / 2.0).exp()).collect();
    let mean = crate::grid::normalize(&raw_normal, grid)?;
    Ok(PaperAr1 {
        operator,
        mean,
        basis,
    })
}

/// Simulate the numerical example: `f₁` equals the mean density and
/// `(f_t ⊖ g) = Ψ(f_{t-1} ⊖ g) ⊕ ε_t` afterwards.
pub fn simulate_paper_ar1(
    model: &PaperAr1,
    innovation: &InnovationConfig,
    horizon: usize,
    seed: RngSeed,
) -> Result<Vec<Density>> {
    if horizon < 1 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let grid = innovation.grid().clone();
    if !model.mean.grid().compatible(&grid) {
        return Err(Error::Dimension("model grid differs from innovation grid".into()));
    }
    let mean_clr = clr(&model.mean);
    let mut out = Vec::with_capacity(horizon);
    out.push(model.mean.clone());
    let mut centered = ClrFunction::zero(&grid);
    for t in 2..=horizon {
        let eps = innovation_clr(innovation, seed.substream(t as u64))?;
        centered = model.operator.apply(&centered)?.add_scaled(1.0, &eps)?;
        let shifted = centered.add_scaled(1.0, &mean_clr)?;
        let density = clr_inv(&shifted)
            .map_err(|e| Error::Overflow(format!("at time index {t}: {e}")))?;
        out.push(density);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::fourier_basis_clr;
    use approx::assert_abs_diff_eq;

    fn grid() -> Grid {
        Grid::default_fixture()
    }

    fn small_grid() -> Grid {
        Grid::new(-3.0, 3.0, 101).unwrap()
    }

    #[test]
    fn substreams_are_distinct_and_deterministic() {
        let s = RngSeed::new(7);
        assert_eq!(s.substream(1), s.substream(1));
        assert_ne!(s.substream(1), s.substream(2));
        assert_ne!(s.substream(1).substream(3), s.substream(3).substream(1));
        let a: f64 = s.rng().sample(StandardNormal);
        let b: f64 = s.rng().sample(StandardNormal);
        assert_eq!(a, b);
    }

    #[test]
    fn bridge_endpoints_pinned() {
        for k in 0..10 {
            let path = brownian_bridge(256, RngSeed::new(1).substream(k)).unwrap();
            assert_eq!(path[0], 0.0);
            assert_eq!(path[256], 0.0);
            assert_eq!(path.len(), 257);
        }
        assert!(brownian_bridge(1, RngSeed::new(0)).is_err());
    }

    #[test]
    fn bridge_moments_match_theory() {
        // Var B(1/2) = 1/4 and Cov(B(1/4), B(3/4)) = 3/16 - 1/8 = 1/16.
        let paths = 20_000;
        let steps = 256;
        let seed = RngSeed::new(42);
        let mut mid = Vec::with_capacity(paths);
        let mut quarter = Vec::with_capacity(paths);
        let mut three_quarter = Vec::with_capacity(paths);
        for p in 0..paths {
            let b = brownian_bridge(steps, seed.substream(p as u64)).unwrap();
            mid.push(b[steps / 2]);
            quarter.push(b[steps / 4]);
            three_quarter.push(b[3 * steps / 4]);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let mmid = mean(&mid);
        let var: f64 = mid.iter().map(|v| (v - mmid) * (v - mmid)).sum::<f64>() / paths as f64;
        assert_abs_diff_eq!(var, 0.25, epsilon = 0.01);
        let mq = mean(&quarter);
        let mtq = mean(&three_quarter);
        let cov: f64 = quarter
            .iter()
            .zip(&three_quarter)
            .map(|(a, b)| (a - mq) * (b - mtq))
            .sum::<f64>()
            / paths as f64;
        assert_abs_diff_eq!(cov, 1.0 / 16.0, epsilon = 0.01);
    }

    #[test]
    fn rescale_demean_zero_and_endpoints() {
        let g = grid();
        let zero = vec![0.0; 257];
        let out = rescale_demean_bridge(&zero, &g).unwrap();
        for v in out.values() {
            assert_eq!(*v, 0.0);
        }
        // Both grid endpoints map to the pinned bridge endpoints, so before
        // demeaning their values are exactly zero and afterwards both equal
        // minus the quadrature mean.
        let path = brownian_bridge(512, RngSeed::new(3)).unwrap();
        let out = rescale_demean_bridge(&path, &g).unwrap();
        assert_abs_diff_eq!(out.integral(), 0.0, epsilon = 1e-10);
        let first = out.values()[0];
        let last = out.values()[g.len() - 1];
        assert_abs_diff_eq!(first, last, epsilon = 1e-12);

        // Affine-map correctness on a linear ramp: path(r) = r · steps, so
        // nodal differences are unaffected by demeaning and must reproduce
        // the rescaled ramp exactly.
        let steps = 512usize;
        let ramp: Vec<f64> = (0..=steps).map(|i| i as f64).collect();
        let out = rescale_demean_bridge(&ramp, &g).unwrap();
        for (x, v) in g.nodes().iter().zip(out.values()) {
            let r = (x - g.lower()) / g.measure();
            assert_abs_diff_eq!(v - out.values()[0], r * steps as f64, epsilon = 1e-9 * steps as f64);
        }
    }

    #[test]
    fn poly_project_fixed_point_idempotent_contractive() {
        let g = grid();
        let linear: Vec<f64> = g.nodes().to_vec();
        let linear = ClrFunction::demeaned(g.clone(), linear).unwrap();
        let projected = poly_project(&linear, 3).unwrap();
        for (a, b) in projected.values().iter().zip(linear.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }

        let path = brownian_bridge(512, RngSeed::new(9)).unwrap();
        let gfun = rescale_demean_bridge(&path, &g).unwrap();
        let once = poly_project(&gfun, 5).unwrap();
        let twice = poly_project(&once, 5).unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        assert!(once.norm() <= gfun.norm() + 1e-12);
    }

    #[test]
    fn innovation_lies_in_polynomial_span() {
        let g = grid();
        let cfg = InnovationConfig::new(g.clone(), 0.3, 10).unwrap();
        let d = draw_innovation(&cfg, RngSeed::new(11)).unwrap();
        let c = clr(&d);
        let reprojected = poly_project(&c, 10).unwrap();
        for (a, b) in c.values().iter().zip(reprojected.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn innovation_mean_is_near_zero() {
        let g = small_grid();
        let cfg = InnovationConfig::new(g.clone(), 0.3, 5).unwrap();
        let seed = RngSeed::new(123);
        let mut mean = vec![0.0; g.len()];
        let draws = 5000;
        for k in 0..draws {
            let c = innovation_clr(&cfg, seed.substream(k as u64)).unwrap();
            for (m, v) in mean.iter_mut().zip(c.values()) {
                *m += v / draws as f64;
            }
        }
        let sup = mean.iter().cloned().fold(0.0_f64, |a, b| a.max(b.abs()));
        assert!(sup < 0.02, "sup |mean clr| = {sup}");
    }

    #[test]
    fn zero_scale_gives_uniform() {
        let g = grid();
        let cfg = InnovationConfig::new(g.clone(), 0.0, 10).unwrap();
        let d = draw_innovation(&cfg, RngSeed::new(4)).unwrap();
        for v in d.values() {
            assert_abs_diff_eq!(*v, 1.0 / 6.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn arp_with_zero_coefficients_is_iid() {
        let g = small_grid();
        let innovation = InnovationConfig::new(g.clone(), 0.3, 5).unwrap();
        let cfg = ArConfig {
            coeffs: vec![LinearMap::zero(&g)],
            initial: vec![Density::uniform(&g)],
            innovation: innovation.clone(),
            horizon: 5,
        };
        let seed = RngSeed::new(21);
        let sim = simulate_arp(&cfg, seed).unwrap();
        for (t, f) in sim.iter().enumerate() {
            let direct = draw_innovation(&innovation, seed.substream((t + 1) as u64)).unwrap();
            for (a, b) in f.values().iter().zip(direct.values()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn arp_identity_with_zero_scale_is_constant() {
        let g = small_grid();
        let innovation = InnovationConfig::new(g.clone(), 0.0, 5).unwrap();
        let raw: Vec<f64> = g.nodes().iter().map(|x| (-x * x / 2.0).exp()).collect();
        let start = crate::grid::normalize(&raw, &g).unwrap();
        let cfg = ArConfig {
            coeffs: vec![LinearMap::identity(&g)],
            initial: vec![start.clone()],
            innovation,
            horizon: 10,
        };
        let sim = simulate_arp(&cfg, RngSeed::new(2)).unwrap();
        for f in &sim {
            for (a, b) in f.values().iter().zip(start.values()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let g = small_grid();
        let innovation = InnovationConfig::new(g.clone(), 0.3, 5).unwrap();
        let model = paper_ar1(&g, 6).unwrap();
        let a = simulate_paper_ar1(&model, &innovation, 20, RngSeed::new(5)).unwrap();
        let b = simulate_paper_ar1(&model, &innovation, 20, RngSeed::new(5)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.values(), y.values());
        }
        for f in &a {
            assert_abs_diff_eq!(f.integral(), 1.0, epsilon = 1e-10);
            assert!(f.values().iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn ma_pure_random_walk_differences_equal_innovations() {
        let g = small_grid();
        let innovation = InnovationConfig::new(g.clone(), 0.3, 5).unwrap();
        let spec = MaSpec::new(vec![LinearMap::identity(&g)]).unwrap();
        let seed = RngSeed::new(31);
        let sim = simulate_i1_ma(&spec, &innovation, 8, seed).unwrap();
        let mut prev = ClrFunction::zero(&g);
        // With one MA coefficient the innovation for f_t comes from stream t.
        for (t, f) in sim.iter().enumerate() {
            let curr = clr(f);
            let eps = innovation_clr(&innovation, seed.substream((t + 1) as u64)).unwrap();
            for ((c, p), e) in curr.values().iter().zip(prev.values()).zip(eps.values()) {
                assert_abs_diff_eq!(c - p, *e, epsilon = 1e-9);
            }
            prev = curr;
        }
    }

    #[test]
    fn ma_with_cancelling_long_run_is_stationary() {
        // N₀ = I, N₁ = -I gives N(1) = 0 and the BN form collapses to
        // f̃_t = ε̃_t exactly.
        let g = small_grid();
        let innovation = InnovationConfig::new(g.clone(), 0.3, 5).unwrap();
        let spec = MaSpec::new(vec![
            LinearMap::identity(&g),
            LinearMap::identity(&g).scale(-1.0),
        ])
        .unwrap();
        let seed = RngSeed::new(77);
        let sim = simulate_i1_ma(&spec, &innovation, 50, seed).unwrap();
        // With two MA coefficients the draw buffer starts one step earlier,
        // so the innovation for f_t comes from stream t + 1.
        for (t, f) in sim.iter().enumerate() {
            let curr = clr(f);
            let eps = innovation_clr(&innovation, seed.substream((t + 2) as u64)).unwrap();
            for (c, e) in curr.values().iter().zip(eps.values()) {
                assert_abs_diff_eq!(*c, *e, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn ma_rank_one_long_run_scores_grow_linearly() {
        let g = small_grid();
        let innovation = InnovationConfig::new(g.clone(), 0.3, 5).unwrap();
        let basis = fourier_basis_clr(&g, 1).unwrap();
        let direction = basis.function(0).clone();
        let proj = LinearMap::projection(&basis).unwrap();
        let spec = MaSpec::new(vec![proj]).unwrap();
        let seed = RngSeed::new(404);
        let reps = 120;
        let horizon = 240;
        let checkpoints = [60usize, 120, 180, 240];
        let mut scores = vec![vec![0.0; reps]; checkpoints.len()];
        for r in 0..reps {
            let sim = simulate_i1_ma(&spec, &innovation, horizon, seed.substream(r as u64)).unwrap();
            for (ci, t) in checkpoints.iter().enumerate() {
                scores[ci][r] = clr(&sim[t - 1]).dot(&direction).unwrap();
            }
        }
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
        };
        let vars: Vec<f64> = scores.iter().map(|s| var(s)).collect();
        // Projected innovation step variance via Monte Carlo.
        let step_var = {
            let mut vals = Vec::with_capacity(4000);
            for k in 0..4000 {
                let e = innovation_clr(&innovation, seed.substream(1_000_000 + k as u64)).unwrap();
                vals.push(e.dot(&direction).unwrap());
            }
            var(&vals)
        };
        // Linear regression of variance on t: slope within [0.5, 2] × step variance.
        let ts: Vec<f64> = checkpoints.iter().map(|t| *t as f64).collect();
        let tbar = ts.iter().sum::<f64>() / ts.len() as f64;
        let vbar = vars.iter().sum::<f64>() / vars.len() as f64;
        let num: f64 = ts.iter().zip(&vars).map(|(t, v)| (t - tbar) * (v - vbar)).sum();
        let den: f64 = ts.iter().map(|t| (t - tbar) * (t - tbar)).sum();
        let slope = num / den;
        assert!(
            slope > 0.5 * step_var && slope < 2.0 * step_var,
            "slope {slope} vs step variance {step_var}"
        );
    }

    #[test]
    fn sampling_matches_density_moments() {
        let g = Grid::new(-3.0, 3.0, 301).unwrap();
        let raw: Vec<f64> = g.nodes().iter().map(|x| (-(x - 0.5) * (x - 0.5)).exp()).collect();
        let d = crate::grid::normalize(&raw, &g).unwrap();
        let n = 40_000;
        let xs = sample_from_density(&d, n, RngSeed::new(808));
        assert!(xs.iter().all(|x| *x >= -3.0 && *x <= 3.0));
        let mean = xs.iter().sum::<f64>() / n as f64;
        let target: f64 = g
            .weights()
            .iter()
            .zip(g.nodes().iter().zip(d.values()))
            .map(|(w, (x, v))| w * x * v)
            .sum();
        assert_abs_diff_eq!(mean, target, epsilon = 0.02);
    }

    #[test]
    fn ma_rule_truncation_and_rejection() {
        let g = small_grid();
        let id = LinearMap::identity(&g);
        let spec = MaSpec::from_rule(&g, |k| id.scale(0.5f64.powi(k as i32)), 200).unwrap();
        assert!(spec.coefficients().len() < 100);
        assert!(spec.coefficients().len() > 5);
        let err = MaSpec::from_rule(&g, |k| id.scale(1.0 / (k + 1) as f64), 200);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn paper_example_attractor_walks_orthogonal_plateaus() {
        // Light version of the representation check: attractor-direction
        // scores accumulate variance while an orthogonal direction does not.
        let g = small_grid();
        let innovation = InnovationConfig::new(g.clone(), 0.3, 5).unwrap();
        let model = paper_ar1(&g, 6).unwrap();
        let attractor = model.basis.function(0).clone();
        let ortho = model.basis.function(2).clone();
        let reps = 60;
        let horizon = 300;
        let seed = RngSeed::new(2024);
        let mut att_early = Vec::new();
        let mut att_late = Vec::new();
        let mut ortho_late = Vec::new();
        let mut ortho_early = Vec::new();
        for r in 0..reps {
            let sim = simulate_paper_ar1(&model, &innovation, horizon, seed.substream(r as u64)).unwrap();
            att_early.push(clr(&sim[74]).dot(&attractor).unwrap());
            att_late.push(clr(&sim[horizon - 1]).dot(&attractor).unwrap());
            ortho_early.push(clr(&sim[74]).dot(&ortho).unwrap());
            ortho_late.push(clr(&sim[horizon - 1]).dot(&ortho).unwrap());
        }
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
        };
        assert!(
            var(&att_late) > 2.0 * var(&att_early),
            "attractor variance should grow: {} vs {}",
            var(&att_late),
            var(&att_early)
        );
        assert!(
            var(&ortho_late) < 3.0 * var(&ortho_early).max(1e-6),
            "orthogonal variance should plateau: {} vs {}",
            var(&ortho_late),
            var(&ortho_early)
        );
    }
}
