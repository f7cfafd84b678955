//! Shared fixtures for the integration suites: synthetic observed clr series
//! with known attractor structure, and small statistics helpers.

#![allow(dead_code)]

use denscoint::fpca::ClrSeries;
use denscoint::grid::{ClrFunction, Grid};
use denscoint::operators::{fourier_basis_clr, OrthonormalBasis};
use denscoint::simulate::RngSeed;
use rand::Rng;
use rand_distr::StandardNormal;

/// Directly observed clr series with a one-dimensional random-walk attractor
/// plus AR(1) components in `noise_dirs` orthogonal directions.
pub fn observed_i1_series(grid: &Grid, t_len: usize, noise_dirs: usize, seed: RngSeed) -> ClrSeries {
    let basis = fourier_basis_clr(grid, noise_dirs + 1).expect("basis");
    let mut rng = seed.rng();
    let mut walk = 0.0;
    let mut noise = vec![0.0f64; noise_dirs];
    let mut rows = Vec::with_capacity(t_len);
    for _ in 0..t_len {
        walk += rng.sample::<f64, _>(StandardNormal);
        let mut row = basis.function(0).scale(walk);
        for (j, level) in noise.iter_mut().enumerate() {
            *level = 0.5 * *level + rng.sample::<f64, _>(StandardNormal);
            row = row
                .add_scaled(*level, basis.function(j + 1))
                .expect("same grid");
        }
        rows.push(row);
    }
    ClrSeries::from_functions(&rows).expect("valid rows")
}

/// Purely stationary observed clr series: AR(1) components in every
/// direction.
pub fn observed_stationary_series(grid: &Grid, t_len: usize, dirs: usize, seed: RngSeed) -> ClrSeries {
    let basis = fourier_basis_clr(grid, dirs).expect("basis");
    let mut rng = seed.rng();
    let mut levels = vec![0.0f64; dirs];
    let mut rows = Vec::with_capacity(t_len);
    for _ in 0..t_len {
        let mut row = ClrFunction::zero(grid);
        for (j, level) in levels.iter_mut().enumerate() {
            *level = 0.5 * *level + rng.sample::<f64, _>(StandardNormal);
            row = row.add_scaled(*level, basis.function(j)).expect("same grid");
        }
        rows.push(row);
    }
    ClrSeries::from_functions(&rows).expect("valid rows")
}

pub fn basis_for(grid: &Grid, m: usize) -> OrthonormalBasis {
    fourier_basis_clr(grid, m).expect("basis")
}

pub fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Least-squares slope of `ys` on `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - xbar) * (y - ybar);
        den += (x - xbar) * (x - xbar);
    }
    num / den
}
