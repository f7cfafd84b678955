//! Weighted local-likelihood log-density estimation from cross-sectional
//! samples.
//!
//! At each evaluation point `x` the log-density is modelled locally as
//! `α₀ + α₁ (u - x)` and the coefficients maximize the kernel-localized
//! likelihood
//!
//! ```text
//! Σ_i w_i 𝒲((X_i - x)/h) (α₀ + α₁ (X_i - x))
//!     - n ∫ 𝒲((u - x)/h) exp(α₀ + α₁ (u - x)) du,
//! ```
//!
//! with the tricube kernel `𝒲(u) = 70/81 (1 - |u|³)³` and the integral taken
//! over the kernel support intersected with the target interval. The
//! estimate at `x` is `α̂₀`; fits on a coarse mesh are interpolated to the
//! analysis grid with a monotone cubic (Fritsch-Carlson) rule and normalized
//! into a density and its clr image.
//!
//! The default bandwidth is `(q(99) - q(1)) n^{-1/5}` on weighted
//! percentiles; `select_bandwidth` scans `[0.75b, 1.25b]` with a generalized
//! BIC whose degrees of freedom are the trace of the local-likelihood
//! influence, accumulated over observations at the evaluation mesh.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ClrFunction, Density, Grid};

/// Newton convergence threshold on the gradient norm.
pub const NEWTON_GRAD_TOL: f64 = 1e-8;
/// Newton iteration cap.
pub const NEWTON_MAX_ITER: usize = 100;
/// Quadrature points for the likelihood integral.
pub const INTEGRAL_POINTS: usize = 65;
/// Default evaluation mesh size.
pub const DEFAULT_MESH: usize = 101;

/// Tricube kernel `70/81 (1 - |u|³)³` on `(-1, 1)`.
pub fn tricube(u: f64) -> f64 {
    let a = u.abs();
    if a >= 1.0 {
        0.0
    } else {
        let b = 1.0 - a * a * a;
        70.0 / 81.0 * b * b * b
    }
}

/// One period of cross-sectional observations with design weights. The
/// constructor sorts observations and renormalizes weights to sum to the
/// observation count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    period: i64,
    observations: Vec<f64>,
    weights: Vec<f64>,
}

impl CrossSection {
    pub fn new(period: i64, observations: Vec<f64>, weights: Vec<f64>) -> Result<CrossSection> {
        if observations.is_empty() {
            return Err(Error::Format(format!("period {period} has no observations")));
        }
        if observations.len() != weights.len() {
            return Err(Error::Format(format!(
                "period {period}: {} observations but {} weights",
                observations.len(),
                weights.len()
            )));
        }
        for (x, w) in observations.iter().zip(&weights) {
            if !x.is_finite() {
                return Err(Error::Format(format!("period {period}: non-finite observation {x}")));
            }
            if !(*w > 0.0) || !w.is_finite() {
                return Err(Error::Format(format!("period {period}: non-positive weight {w}")));
            }
        }
        let mut order: Vec<usize> = (0..observations.len()).collect();
        order.sort_by(|a, b| observations[*a].partial_cmp(&observations[*b]).expect("finite"));
        let obs: Vec<f64> = order.iter().map(|i| observations[*i]).collect();
        let mut w: Vec<f64> = order.iter().map(|i| weights[*i]).collect();
        let total: f64 = w.iter().sum();
        let n = obs.len() as f64;
        for wi in &mut w {
            *wi *= n / total;
        }
        Ok(CrossSection {
            period,
            observations: obs,
            weights: w,
        })
    }

    pub fn unweighted(period: i64, observations: Vec<f64>) -> Result<CrossSection> {
        let w = vec![1.0; observations.len()];
        CrossSection::new(period, observations, w)
    }

    pub fn period(&self) -> i64 {
        self.period
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Observations in ascending order.
    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    /// Weights aligned with the sorted observations, summing to `len()`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted percentile: the smallest observation whose cumulative weight
    /// share reaches `p/100`.
    pub fn percentile(&self, p: f64) -> f64 {
        weighted_percentile(&self.observations, &self.weights, p)
    }

    /// Indices of observations inside the open window `(x - h, x + h)`.
    fn window(&self, x: f64, h: f64) -> std::ops::Range<usize> {
        let lo = self.observations.partition_point(|v| *v <= x - h);
        let hi = self.observations.partition_point(|v| *v < x + h);
        lo..hi
    }
}

/// Weighted percentile over parallel (sorted) value/weight slices.
pub fn weighted_percentile(sorted_values: &[f64], weights: &[f64], p: f64) -> f64 {
    let total: f64 = weights.iter().sum();
    let target = (p / 100.0).clamp(0.0, 1.0) * total;
    let mut cum = 0.0;
    for (x, w) in sorted_values.iter().zip(weights) {
        cum += w;
        if cum >= target - 1e-12 * total {
            return *x;
        }
    }
    *sorted_values.last().expect("non-empty data")
}

/// Objective value, gradient and Hessian of the local log-likelihood at
/// coefficients `(α₀, α₁)`.
#[derive(Debug, Clone, Copy)]
pub struct LoglikEval {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

struct LocalContext {
    /// Σ w_i 𝒲_i and Σ w_i 𝒲_i (X_i - x): α-independent kernel sums.
    s0: f64,
    s1: f64,
    /// Σ w_i 𝒲_i (α-weighted polynomial part is s0 α₀ + s1 α₁).
    /// Quadrature nodes (offsets from x), kernel values and weights.
    nodes: Vec<f64>,
    kernel: Vec<f64>,
    qweights: Vec<f64>,
    n: f64,
}

impl LocalContext {
    fn build(cs: &CrossSection, x: f64, h: f64, support: Option<(f64, f64)>) -> LocalContext {
        let range = cs.window(x, h);
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        for i in range {
            let d = cs.observations[i] - x;
            let k = tricube(d / h);
            s0 += cs.weights[i] * k;
            s1 += cs.weights[i] * k * d;
        }
        let (mut lo, mut hi) = (x - h, x + h);
        if let Some((a, b)) = support {
            lo = lo.max(a);
            hi = hi.min(b);
        }
        let m = INTEGRAL_POINTS;
        let step = (hi - lo) / (m - 1) as f64;
        let mut nodes = Vec::with_capacity(m);
        let mut kernel = Vec::with_capacity(m);
        let mut qweights = Vec::with_capacity(m);
        for q in 0..m {
            let u = lo + step * q as f64;
            nodes.push(u - x);
            kernel.push(tricube((u - x) / h));
            qweights.push(if q == 0 || q == m - 1 { step / 2.0 } else { step });
        }
        LocalContext {
            s0,
            s1,
            nodes,
            kernel,
            qweights,
            n: cs.len() as f64,
        }
    }

    /// Integral moments `m_j = n ∫ 𝒲 s^j exp(α₀ + α₁ s) ds` for j = 0, 1, 2.
    fn moments(&self, alpha: [f64; 2]) -> [f64; 3] {
        let mut m = [0.0; 3];
        for ((s, k), w) in self.nodes.iter().zip(&self.kernel).zip(&self.qweights) {
            if *k == 0.0 {
                continue;
            }
            let e = (alpha[0] + alpha[1] * s).min(700.0).exp();
            let base = w * k * e * self.n;
            m[0] += base;
            m[1] += base * s;
            m[2] += base * s * s;
        }
        m
    }

    fn eval(&self, alpha: [f64; 2]) -> LoglikEval {
        let m = self.moments(alpha);
        LoglikEval {
            value: self.s0 * alpha[0] + self.s1 * alpha[1] - m[0],
            grad: [self.s0 - m[0], self.s1 - m[1]],
            hess: [[-m[0], -m[1]], [-m[1], -m[2]]],
        }
    }
}

/// Evaluate the local log-likelihood with analytic gradient and Hessian.
/// `support`, when given, clamps the integral to the density's interval.
pub fn local_loglik(
    cs: &CrossSection,
    x: f64,
    h: f64,
    alpha: [f64; 2],
    support: Option<(f64, f64)>,
) -> Result<LoglikEval> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
    }
    Ok(LocalContext::build(cs, x, h, support).eval(alpha))
}

/// A fitted local polynomial at one evaluation point; `alpha0` is the
/// log-density estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFit {
    pub x: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    /// `𝒲(0) (J⁻¹)₀₀` at the optimum, the influence of a unit-weight
    /// observation at `x` on its own fit; summed into the GBIC degrees of
    /// freedom.
    pub influence: f64,
}

/// Maximize the local likelihood by Newton iterations with step halving.
pub fn fit_local(cs: &CrossSection, x: f64, h: f64, support: Option<(f64, f64)>) -> Result<LocalFit> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
    }
    let ctx = LocalContext::build(cs, x, h, support);
    // Kernel mass below the floor means no observation carries numerically
    // meaningful weight; treating it as empty avoids underflow-degenerate
    // "fits" whose gradients vanish identically.
    if ctx.s0 <= 1e-12 {
        return Err(Error::EmptyWindow(format!(
            "no effective observations in ({}, {})",
            x - h,
            x + h
        )));
    }
    // Moment-matched start: α₁ = 0 and α₀ solving s0 = n ∫ 𝒲 exp(α₀).
    let i0: f64 = ctx
        .nodes
        .iter()
        .zip(&ctx.kernel)
        .zip(&ctx.qweights)
        .map(|((_, k), w)| w * k)
        .sum();
    let mut alpha = [(ctx.s0 / (ctx.n * i0)).ln(), 0.0];
    let mut eval = ctx.eval(alpha);
    let mut iterations = 0;
    while iterations < NEWTON_MAX_ITER {
        // A single effective observation at the window edge makes the local
        // likelihood unbounded along a ray with α₁ → ∞, α₀ → -∞ and a
        // numerically vanishing gradient; such fits are rejected rather than
        // reported as converged.
        if alpha[0] < -300.0 || alpha[1].abs() * h > 200.0 {
            return Err(Error::NotConverged(format!(
                "degenerate local fit at x = {x} (α₀ = {:.1}, α₁ = {:.1})",
                alpha[0], alpha[1]
            )));
        }
        let gnorm = (eval.grad[0] * eval.grad[0] + eval.grad[1] * eval.grad[1]).sqrt();
        if gnorm < NEWTON_GRAD_TOL {
            let m = ctx.moments(alpha);
            let det = m[0] * m[2] - m[1] * m[1];
            return Ok(LocalFit {
                x,
                alpha0: alpha[0],
                alpha1: alpha[1],
                converged: true,
                iterations,
                grad_norm: gnorm,
                influence: tricube(0.0) * m[2] / det,
            });
        }
        // Newton direction solving H d = -g for the 2x2 Hessian.
        let (a, b, d) = (eval.hess[0][0], eval.hess[0][1], eval.hess[1][1]);
        let det = a * d - b * b;
        if det.abs() < 1e-300 {
            return Err(Error::NotConverged(format!(
                "singular Hessian at x = {x} (iteration {iterations})"
            )));
        }
        let dir = [
            (-d * eval.grad[0] + b * eval.grad[1]) / det,
            (b * eval.grad[0] - a * eval.grad[1]) / det,
        ];
        let mut step = 1.0;
        let mut accepted = false;
        // Near the optimum the objective change falls below f64 resolution
        // while Newton still contracts the gradient, so a step is also
        // accepted when the gradient norm shrinks without a material loss.
        let value_floor = eval.value - 1e-10 * (1.0 + eval.value.abs());
        for _ in 0..40 {
            let trial = [alpha[0] + step * dir[0], alpha[1] + step * dir[1]];
            let trial_eval = ctx.eval(trial);
            if trial_eval.value.is_finite() {
                let tg = (trial_eval.grad[0] * trial_eval.grad[0]
                    + trial_eval.grad[1] * trial_eval.grad[1])
                    .sqrt();
                if trial_eval.value > eval.value || (tg < gnorm && trial_eval.value >= value_floor) {
                    alpha = trial;
                    eval = trial_eval;
                    accepted = true;
                    break;
                }
            }
            step /= 2.0;
        }
        if !accepted {
            return Err(Error::NotConverged(format!(
                "step halving stalled at x = {x} (iteration {iterations}, gradient {gnorm:.3e})"
            )));
        }
        iterations += 1;
    }
    let gnorm = (eval.grad[0] * eval.grad[0] + eval.grad[1] * eval.grad[1]).sqrt();
    Err(Error::NotConverged(format!(
        "no convergence at x = {x} after {NEWTON_MAX_ITER} iterations (gradient {gnorm:.3e})"
    )))
}

/// A fitted log-density on an analysis grid.
#[derive(Debug, Clone)]
pub struct LogDensityFit {
    pub clr: ClrFunction,
    pub density: Density,
    pub bandwidth: f64,
    pub mesh: Vec<LocalFit>,
}

/// Fit the log-density on a `mesh_size`-point mesh spanning the grid,
/// interpolate to the grid nodes with a monotone cubic rule, and package the
/// normalized density together with its clr image. Mesh points whose window
/// is empty are collected into one error.
pub fn estimate_logdensity(
    cs: &CrossSection,
    grid: &Grid,
    h: f64,
    mesh_size: usize,
) -> Result<LogDensityFit> {
    let fits = mesh_fits(cs, grid, h, mesh_size)?;
    let mesh_x: Vec<f64> = fits.iter().map(|f| f.x).collect();
    let mesh_g: Vec<f64> = fits.iter().map(|f| f.alpha0).collect();
    let ghat = pchip_interpolate(&mesh_x, &mesh_g, grid.nodes());
    let density = crate::grid::clr_inv_values(grid, &ghat)?;
    let clr = ClrFunction::demeaned(grid.clone(), ghat)?;
    Ok(LogDensityFit {
        clr,
        density,
        bandwidth: h,
        mesh: fits,
    })
}

fn mesh_fits(cs: &CrossSection, grid: &Grid, h: f64, mesh_size: usize) -> Result<Vec<LocalFit>> {
    if mesh_size < 4 {
        return Err(Error::Config(format!("mesh needs at least 4 points, got {mesh_size}")));
    }
    let support = Some((grid.lower(), grid.upper()));
    let step = grid.measure() / (mesh_size - 1) as f64;
    let mut fits = Vec::with_capacity(mesh_size);
    let mut empty = Vec::new();
    let mut failed = Vec::new();
    for i in 0..mesh_size {
        let x = grid.lower() + step * i as f64;
        match fit_local(cs, x, h, support) {
            Ok(f) => fits.push(f),
            Err(Error::EmptyWindow(_)) => empty.push(x),
            Err(Error::NotConverged(msg)) => failed.push(msg),
            Err(e) => return Err(e),
        }
    }
    if !empty.is_empty() {
        return Err(Error::EmptyWindow(format!(
            "{} mesh points with empty windows at h = {h}: {:?} (widen the bandwidth or re-truncate)",
            empty.len(),
            &empty[..empty.len().min(8)]
        )));
    }
    if !failed.is_empty() {
        return Err(Error::NotConverged(format!(
            "{} mesh fits failed: {}",
            failed.len(),
            failed[0]
        )));
    }
    Ok(fits)
}

/// Monotone cubic (Fritsch-Carlson) interpolation of `(xs, ys)` at `targets`.
/// Targets outside the mesh range are clamped to the boundary values.
fn pchip_interpolate(xs: &[f64], ys: &[f64], targets: &[f64]) -> Vec<f64> {
    let n = xs.len();
    assert!(n >= 2, "interpolation needs at least two points");
    let mut hseg = vec![0.0; n - 1];
    let mut delta = vec![0.0; n - 1];
    for i in 0..n - 1 {
        hseg[i] = xs[i + 1] - xs[i];
        delta[i] = (ys[i + 1] - ys[i]) / hseg[i];
    }
    let mut slope = vec![0.0; n];
    slope[0] = endpoint_slope(hseg[0], hseg.get(1).copied().unwrap_or(hseg[0]), delta[0], delta.get(1).copied().unwrap_or(delta[0]));
    slope[n - 1] = endpoint_slope(
        hseg[n - 2],
        if n >= 3 { hseg[n - 3] } else { hseg[n - 2] },
        delta[n - 2],
        if n >= 3 { delta[n - 3] } else { delta[n - 2] },
    );
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] <= 0.0 {
            slope[i] = 0.0;
        } else {
            let w1 = 2.0 * hseg[i] + hseg[i - 1];
            let w2 = hseg[i] + 2.0 * hseg[i - 1];
            slope[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    targets
        .iter()
        .map(|t| {
            if *t <= xs[0] {
                return ys[0];
            }
            if *t >= xs[n - 1] {
                return ys[n - 1];
            }
            let seg = xs.partition_point(|x| *x <= *t) - 1;
            let seg = seg.min(n - 2);
            let u = (t - xs[seg]) / hseg[seg];
            let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
            let h10 = u * (1.0 - u) * (1.0 - u);
            let h01 = u * u * (3.0 - 2.0 * u);
            let h11 = u * u * (u - 1.0);
            h00 * ys[seg] + h10 * hseg[seg] * slope[seg] + h01 * ys[seg + 1] + h11 * hseg[seg] * slope[seg + 1]
        })
        .collect()
}

fn endpoint_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m * d0 <= 0.0 {
        0.0
    } else if d0 * d1 < 0.0 && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}

/// Rule-of-thumb bandwidth `(q(99) - q(1)) n^{-1/5}` on weighted percentiles.
pub fn default_bandwidth(cs: &CrossSection) -> Result<f64> {
    if cs.len() < 10 {
        return Err(Error::Config(format!(
            "bandwidth rule needs at least 10 observations, got {}",
            cs.len()
        )));
    }
    let spread = cs.percentile(99.0) - cs.percentile(1.0);
    if !(spread > 0.0) {
        return Err(Error::DegenerateData(format!(
            "1st and 99th weighted percentiles coincide at {}",
            cs.percentile(1.0)
        )));
    }
    Ok(spread * (cs.len() as f64).powf(-0.2))
}

/// One candidate in the bandwidth scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthCandidate {
    pub h: f64,
    pub loglik: f64,
    pub df: f64,
    pub gbic: f64,
}

/// Outcome of the generalized-BIC bandwidth selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSelection {
    pub chosen: f64,
    pub base: f64,
    pub candidates: Vec<BandwidthCandidate>,
}

/// Scan 11 bandwidths in `[0.75b, 1.25b]` around the rule-of-thumb `b` and
/// pick the GBIC minimizer: `GBIC(h) = -2 ℒ̂(h) + ν(h) log n`, where `ℒ̂` is
/// the fitted weighted log-likelihood and `ν` the influence trace over the
/// evaluation mesh.
pub fn select_bandwidth(cs: &CrossSection, grid: &Grid, mesh_size: usize) -> Result<BandwidthSelection> {
    let base = default_bandwidth(cs)?;
    select_bandwidth_with_base(cs, grid, mesh_size, base)
}

/// Same scan around a caller-chosen base bandwidth (used to widen the search
/// when the default base leaves empty windows on the mesh).
pub fn select_bandwidth_with_base(
    cs: &CrossSection,
    grid: &Grid,
    mesh_size: usize,
    base: f64,
) -> Result<BandwidthSelection> {
    if !(base > 0.0) || !base.is_finite() {
        return Err(Error::Config(format!("base bandwidth must be positive, got {base}")));
    }
    let mut candidates = Vec::with_capacity(11);
    let mut best: Option<(f64, f64)> = None;
    for i in 0..11 {
        let h = base * (0.75 + 0.05 * i as f64);
        let fit = match estimate_logdensity(cs, grid, h, mesh_size) {
            Ok(f) => f,
            Err(Error::EmptyWindow(_)) | Err(Error::NotConverged(_)) => continue,
            Err(e) => return Err(e),
        };
        // Weighted log-likelihood of the normalized density at the data.
        let logf: Vec<f64> = fit.density.values().iter().map(|v| v.ln()).collect();
        let mut loglik = 0.0;
        for (xi, wi) in cs.observations().iter().zip(cs.weights()) {
            loglik += wi * interp_linear(grid, &logf, *xi);
        }
        // Influence trace: each observation contributes its weight times the
        // influence at the nearest mesh point.
        let mesh_x: Vec<f64> = fit.mesh.iter().map(|f| f.x).collect();
        let mut df = 0.0;
        for (xi, wi) in cs.observations().iter().zip(cs.weights()) {
            let j = nearest_index(&mesh_x, *xi);
            df += wi * fit.mesh[j].influence;
        }
        let gbic = -2.0 * loglik + df * (cs.len() as f64).ln();
        candidates.push(BandwidthCandidate { h, loglik, df, gbic });
        if best.map_or(true, |(g, _)| gbic < g) {
            best = Some((gbic, h));
        }
    }
    match best {
        Some((_, chosen)) => Ok(BandwidthSelection {
            chosen,
            base,
            candidates,
        }),
        None => Err(Error::BandwidthSelection(format!(
            "all 11 candidates in [{:.6}, {:.6}] failed",
            0.75 * base,
            1.25 * base
        ))),
    }
}

fn interp_linear(grid: &Grid, values: &[f64], x: f64) -> f64 {
    let lo = grid.lower();
    let h = grid.spacing();
    let pos = ((x - lo) / h).clamp(0.0, (grid.len() - 1) as f64);
    let i = (pos.floor() as usize).min(grid.len() - 2);
    let frac = pos - i as f64;
    values[i] * (1.0 - frac) + values[i + 1] * frac
}

fn nearest_index(sorted: &[f64], x: f64) -> usize {
    let p = sorted.partition_point(|v| *v < x);
    if p == 0 {
        return 0;
    }
    if p >= sorted.len() {
        return sorted.len() - 1;
    }
    if (x - sorted[p - 1]).abs() <= (sorted[p] - x).abs() {
        p - 1
    } else {
        p
    }
}

/// Root-mean-square log-density error over the grid interval:
/// `sqrt(λ(K)⁻¹ ∫ (log f̂ - log f)² dλ)`.
pub fn log_density_rms_error(estimate: &Density, truth: &Density) -> f64 {
    let g = estimate.grid();
    let mut err2 = 0.0;
    for ((est, tru), w) in estimate
        .values()
        .iter()
        .zip(truth.values())
        .zip(g.weights())
    {
        let d = est.ln() - tru.ln();
        err2 += w * d * d;
    }
    (err2 / g.measure()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::RngSeed;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn sample_trunc_normal(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = RngSeed::new(seed).rng();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            if z.abs() <= 3.0 {
                out.push(z);
            }
        }
        out
    }

    #[test]
    fn tricube_values_and_mass() {
        assert_abs_diff_eq!(tricube(0.0), 70.0 / 81.0, epsilon = 1e-15);
        assert_eq!(tricube(1.0), 0.0);
        assert_eq!(tricube(-1.2), 0.0);
        let n = 40_001;
        let h = 2.0 / (n - 1) as f64;
        let mut mass = 0.0;
        for i in 0..n {
            let u = -1.0 + h * i as f64;
            let w = if i == 0 || i == n - 1 { h / 2.0 } else { h };
            mass += w * tricube(u);
        }
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn cross_section_normalizes_weights() {
        let cs = CrossSection::new(0, vec![3.0, 1.0, 2.0], vec![2.0, 2.0, 2.0]).unwrap();
        assert_eq!(cs.observations(), &[1.0, 2.0, 3.0]);
        let total: f64 = cs.weights().iter().sum();
        assert_abs_diff_eq!(total, 3.0, epsilon = 1e-12);
        assert!(CrossSection::new(0, vec![1.0], vec![-1.0]).is_err());
        assert!(CrossSection::new(0, vec![], vec![]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = sample_trunc_normal(500, 7);
        let cs = CrossSection::unweighted(0, data).unwrap();
        let mut rng = RngSeed::new(8).rng();
        for _ in 0..10 {
            let x = rng.random_range(-2.0..2.0);
            let h = rng.random_range(0.3..1.0);
            let alpha = [rng.random_range(-3.0..0.5), rng.random_range(-1.0..1.0)];
            let eval = local_loglik(&cs, x, h, alpha, None).unwrap();
            let eps = 1e-5;
            for dim in 0..2 {
                let mut up = alpha;
                up[dim] += eps;
                let mut dn = alpha;
                dn[dim] -= eps;
                let fd = (local_loglik(&cs, x, h, up, None).unwrap().value
                    - local_loglik(&cs, x, h, dn, None).unwrap().value)
                    / (2.0 * eps);
                let scale = eval.grad[dim].abs().max(1.0);
                assert_abs_diff_eq!(eval.grad[dim], fd, epsilon = 1e-6 * scale);
            }
            // Hessian against gradient differences.
            for dim in 0..2 {
                let mut up = alpha;
                up[dim] += eps;
                let mut dn = alpha;
                dn[dim] -= eps;
                let gu = local_loglik(&cs, x, h, up, None).unwrap().grad;
                let gd = local_loglik(&cs, x, h, dn, None).unwrap().grad;
                for row in 0..2 {
                    let fd = (gu[row] - gd[row]) / (2.0 * eps);
                    let scale = eval.hess[row][dim].abs().max(1.0);
                    assert_abs_diff_eq!(eval.hess[row][dim], fd, epsilon = 1e-5 * scale);
                }
            }
        }
    }

    #[test]
    fn equal_weights_match_unweighted() {
        let data = sample_trunc_normal(200, 12);
        let a = CrossSection::unweighted(0, data.clone()).unwrap();
        let b = CrossSection::new(0, data, vec![5.5; 200]).unwrap();
        let ea = local_loglik(&a, 0.3, 0.8, [-1.5, 0.2], None).unwrap();
        let eb = local_loglik(&b, 0.3, 0.8, [-1.5, 0.2], None).unwrap();
        assert_abs_diff_eq!(ea.value, eb.value, epsilon = 1e-10 * ea.value.abs());
    }

    #[test]
    fn hessian_is_negative_definite_at_optimum() {
        let data = sample_trunc_normal(2000, 3);
        let cs = CrossSection::unweighted(0, data).unwrap();
        let fit = fit_local(&cs, 0.5, 0.6, None).unwrap();
        assert!(fit.converged);
        assert!(fit.grad_norm < NEWTON_GRAD_TOL);
        let eval = local_loglik(&cs, 0.5, 0.6, [fit.alpha0, fit.alpha1], None).unwrap();
        let (a, b, d) = (eval.hess[0][0], eval.hess[0][1], eval.hess[1][1]);
        // 2x2 negative definiteness: negative trace terms, positive determinant.
        assert!(a < 0.0 && d < 0.0 && a * d - b * b > 0.0);
    }

    #[test]
    fn flat_density_oracle() {
        let mut rng = RngSeed::new(100).rng();
        let data: Vec<f64> = (0..10_000).map(|_| rng.random_range(-3.0..3.0)).collect();
        let cs = CrossSection::unweighted(0, data).unwrap();
        let fit = fit_local(&cs, 0.4, 0.7, None).unwrap();
        assert!(fit.converged);
        assert_abs_diff_eq!(fit.alpha0, (1.0f64 / 6.0).ln(), epsilon = 0.05);
        assert_abs_diff_eq!(fit.alpha1, 0.0, epsilon = 0.15);
    }

    #[test]
    fn empty_window_detected() {
        let cs = CrossSection::unweighted(0, vec![10.0, 10.5, 11.0]).unwrap();
        assert!(matches!(
            fit_local(&cs, 0.0, 1.0, None),
            Err(Error::EmptyWindow(_))
        ));
    }

    #[test]
    fn translation_equivariance() {
        let data = sample_trunc_normal(3000, 5);
        let cs = CrossSection::unweighted(0, data.clone()).unwrap();
        let shifted: Vec<f64> = data.iter().map(|x| x + 17.0).collect();
        let cs2 = CrossSection::unweighted(0, shifted).unwrap();
        let f1 = fit_local(&cs, 0.7, 0.5, None).unwrap();
        let f2 = fit_local(&cs2, 17.7, 0.5, None).unwrap();
        assert_abs_diff_eq!(f1.alpha0, f2.alpha0, epsilon = 1e-8);
        assert_abs_diff_eq!(f1.alpha1, f2.alpha1, epsilon = 1e-8);
    }

    #[test]
    fn duplicated_observation_equals_doubled_weight() {
        // Proportional objectives share the maximizer, so the fits agree.
        let base = sample_trunc_normal(400, 9);
        let mut duplicated = base.clone();
        duplicated.push(base[10]);
        let cs_dup = CrossSection::unweighted(0, duplicated).unwrap();
        let mut weights = vec![1.0; 400];
        weights[10] = 2.0;
        let cs_w = CrossSection::new(0, base, weights).unwrap();
        let f1 = fit_local(&cs_dup, 0.2, 0.8, None).unwrap();
        let f2 = fit_local(&cs_w, 0.2, 0.8, None).unwrap();
        assert_abs_diff_eq!(f1.alpha0, f2.alpha0, epsilon = 1e-10);
        assert_abs_diff_eq!(f1.alpha1, f2.alpha1, epsilon = 1e-10);
    }

    #[test]
    fn kernel_locality() {
        let mut data = sample_trunc_normal(500, 14);
        let cs1 = CrossSection::unweighted(0, data.clone()).unwrap();
        // Move an observation that is already far outside the window even
        // further: the fit at x = 0 with h = 0.5 cannot see it.
        for v in data.iter_mut() {
            if *v > 2.0 {
                *v += 0.4;
            }
        }
        let cs2 = CrossSection::unweighted(0, data).unwrap();
        let f1 = fit_local(&cs1, 0.0, 0.5, None).unwrap();
        let f2 = fit_local(&cs2, 0.0, 0.5, None).unwrap();
        assert_eq!(f1.alpha0, f2.alpha0);
        assert_eq!(f1.alpha1, f2.alpha1);
    }

    #[test]
    fn estimate_recovers_truncated_normal() {
        let g = Grid::new(-3.0, 3.0, 301).unwrap();
        let data = sample_trunc_normal(10_000, 77);
        let cs = CrossSection::unweighted(0, data).unwrap();
        let h = default_bandwidth(&cs).unwrap();
        let fit = estimate_logdensity(&cs, &g, h, DEFAULT_MESH).unwrap();
        assert_abs_diff_eq!(fit.density.integral(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.clr.integral(), 0.0, epsilon = 1e-10);
        // Root-mean-square log-density error over K (the λ-normalized L2
        // norm). The boundary windows of the truncated normal carry few
        // observations, so errors concentrate there.
        let truth = crate::grid::normalize(
            &g.nodes().iter().map(|x| (-x * x / 2.0).exp()).collect::<Vec<_>>(),
            &g,
        )
        .unwrap();
        let l2 = log_density_rms_error(&fit.density, &truth);
        assert!(l2 < 0.1, "RMS log-density error {l2}");
    }

    #[test]
    fn mesh_failure_lists_points() {
        let g = Grid::new(-3.0, 3.0, 101).unwrap();
        let cs = CrossSection::unweighted(0, vec![0.0, 0.1, -0.1, 0.05, 0.2]).unwrap();
        match estimate_logdensity(&cs, &g, 0.2, 31) {
            Err(Error::EmptyWindow(msg)) => assert!(msg.contains("mesh points")),
            other => panic!("expected EmptyWindow, got {other:?}"),
        }
    }

    #[test]
    fn default_bandwidth_arithmetic_and_scaling() {
        let mut data = vec![0.0; 50_000];
        data.extend(vec![10.0; 50_000]);
        let cs = CrossSection::unweighted(0, data).unwrap();
        assert_abs_diff_eq!(default_bandwidth(&cs).unwrap(), 1.0, epsilon = 1e-12);

        let base = sample_trunc_normal(5000, 21);
        let cs1 = CrossSection::unweighted(0, base.clone()).unwrap();
        let scaled: Vec<f64> = base.iter().map(|x| 3.0 * x).collect();
        let cs2 = CrossSection::unweighted(0, scaled).unwrap();
        assert_abs_diff_eq!(
            3.0 * default_bandwidth(&cs1).unwrap(),
            default_bandwidth(&cs2).unwrap(),
            epsilon = 1e-10
        );

        let flat = CrossSection::unweighted(0, vec![2.0; 100]).unwrap();
        assert!(matches!(default_bandwidth(&flat), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn default_bandwidth_uniform_oracle() {
        let mut rng = RngSeed::new(31).rng();
        let data: Vec<f64> = (0..100_000).map(|_| rng.random_range(0.0..1.0)).collect();
        let cs = CrossSection::unweighted(0, data).unwrap();
        let b = default_bandwidth(&cs).unwrap();
        assert_abs_diff_eq!(b, 0.98 * 0.1, epsilon = 0.002);
    }

    #[test]
    fn bandwidth_selection_contained_and_deterministic() {
        let g = Grid::new(-3.5, 3.5, 141).unwrap();
        let data = sample_trunc_normal(3000, 55);
        let cs = CrossSection::unweighted(0, data).unwrap();
        let sel = select_bandwidth(&cs, &g, 41).unwrap();
        let b = sel.base;
        assert!(sel.chosen >= 0.75 * b - 1e-12 && sel.chosen <= 1.25 * b + 1e-12);
        let sel2 = select_bandwidth(&cs, &g, 41).unwrap();
        assert_eq!(sel.chosen, sel2.chosen);
        assert_eq!(sel.candidates.len(), 11);
    }

    #[test]
    fn flat_truth_favors_larger_bandwidths() {
        // A uniform truth has no smoothing bias, so oversmoothing within the
        // scan range only reduces variance and the GBIC minimizer should sit
        // in the upper half of the range on average.
        let g = Grid::new(-3.0, 3.0, 121).unwrap();
        let reps = 10;
        let mut ratio = 0.0;
        for rep in 0..reps {
            let mut rng = RngSeed::new(900 + rep).rng();
            let flat: Vec<f64> = (0..2000).map(|_| rng.random_range(-3.0..3.0)).collect();
            let cs = CrossSection::unweighted(0, flat).unwrap();
            let sel = select_bandwidth(&cs, &g, 41).unwrap();
            ratio += sel.chosen / sel.base / reps as f64;
        }
        assert!(ratio >= 1.0, "mean chosen/base ratio {ratio}");
    }

    #[test]
    fn pchip_is_monotone_and_interpolating() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let ys = [0.0, 0.5, 0.6, 2.0, 2.1];
        let targets: Vec<f64> = (0..=400).map(|i| i as f64 / 100.0).collect();
        let out = pchip_interpolate(&xs, &ys, &targets);
        for (i, x) in xs.iter().enumerate() {
            let j = (x * 100.0) as usize;
            assert_abs_diff_eq!(out[j], ys[i], epsilon = 1e-12);
        }
        for w in out.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "monotone data must interpolate monotonically");
        }
    }
}
