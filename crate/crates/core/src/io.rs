//! CSV/JSON serialization of densities, clr functions, series matrices,
//! operators and critical-value tables.
//!
//! Single functions are stored as two-column `x,value` CSV files with a
//! `<stem>.grid.json` sidecar holding `{lower, upper, n}`. Series matrices
//! put the grid nodes in the first row and one time point per subsequent
//! row; the grid is inferred back from the node row. Floats are written with
//! Rust's shortest-roundtrip formatting, so read-write cycles are lossless.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fpca::ClrSeries;
use crate::grid::{ClrFunction, Density, Grid, GridSpec};
use crate::operators::LinearMap;
use crate::rank_test::{CriticalValueTable, LEVELS};

fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.grid.json"))
}

fn write_grid_sidecar(path: &Path, grid: &Grid) -> Result<()> {
    let spec = GridSpec::from(grid);
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&spec)?)?;
    Ok(())
}

fn read_grid_sidecar(path: &Path) -> Result<Grid> {
    let raw = std::fs::read_to_string(sidecar_path(path))?;
    let spec: GridSpec = serde_json::from_str(&raw)?;
    spec.build()
}

fn write_xy(path: &Path, grid: &Grid, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "value"])?;
    for (x, v) in grid.nodes().iter().zip(values) {
        w.write_record([x.to_string(), v.to_string()])?;
    }
    w.flush()?;
    write_grid_sidecar(path, grid)
}

fn read_xy(path: &Path) -> Result<(Grid, Vec<f64>)> {
    let grid = read_grid_sidecar(path)?;
    let mut r = csv::Reader::from_path(path)?;
    let mut values = Vec::with_capacity(grid.len());
    for rec in r.records() {
        let rec = rec?;
        let v: f64 = rec
            .get(1)
            .ok_or_else(|| Error::Format("missing value column".into()))?
            .parse()
            .map_err(|e| Error::Format(format!("bad value: {e}")))?;
        values.push(v);
    }
    if values.len() != grid.len() {
        return Err(Error::Format(format!(
            "{} rows in {} but the grid has {} nodes",
            values.len(),
            path.display(),
            grid.len()
        )));
    }
    Ok((grid, values))
}

pub fn write_density_csv(path: &Path, density: &Density) -> Result<()> {
    write_xy(path, density.grid(), density.values())
}

pub fn read_density_csv(path: &Path) -> Result<Density> {
    let (grid, values) = read_xy(path)?;
    Density::new(grid, values)
}

pub fn write_clr_csv(path: &Path, f: &ClrFunction) -> Result<()> {
    write_xy(path, f.grid(), f.values())
}

pub fn read_clr_csv(path: &Path) -> Result<ClrFunction> {
    let (grid, values) = read_xy(path)?;
    ClrFunction::new(grid, values)
}

/// Write a series matrix: first row holds the grid nodes, row `t` the values
/// at time `t`.
pub fn write_matrix_csv<'a, I>(path: &Path, grid: &Grid, rows: I) -> Result<()>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(grid.nodes().iter().map(|x| x.to_string()))?;
    for row in rows {
        if row.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "row has {} values for a grid of {} nodes",
                row.len(),
                grid.len()
            )));
        }
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a series matrix back, inferring the uniform grid from the node row.
pub fn read_matrix_csv(path: &Path) -> Result<(Grid, DMatrix<f64>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Format(format!("bad number {s:?}: {e}"))))
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(Error::Format("matrix file needs a node row and at least one data row".into()));
    }
    let nodes = &rows[0];
    let n = nodes.len();
    if n < 3 {
        return Err(Error::Format("node row too short".into()));
    }
    let grid = Grid::new(nodes[0], nodes[n - 1], n)?;
    let span = grid.measure();
    for (a, b) in nodes.iter().zip(grid.nodes()) {
        if (a - b).abs() > 1e-9 * span {
            return Err(Error::Format("node row is not a uniform grid".into()));
        }
    }
    let t = rows.len() - 1;
    let mut data = DMatrix::zeros(t, n);
    for (i, row) in rows.iter().skip(1).enumerate() {
        if row.len() != n {
            return Err(Error::Format(format!(
                "row {} has {} values, expected {n}",
                i + 1,
                row.len()
            )));
        }
        for j in 0..n {
            data[(i, j)] = row[j];
        }
    }
    Ok((grid, data))
}

/// Read a clr matrix file into a validated series.
pub fn read_clr_series(path: &Path) -> Result<ClrSeries> {
    let (grid, data) = read_matrix_csv(path)?;
    ClrSeries::from_matrix(grid, data)
}

/// Write a density series as a matrix file.
pub fn write_density_matrix(path: &Path, densities: &[Density]) -> Result<()> {
    let grid = densities
        .first()
        .ok_or_else(|| Error::Config("empty density series".into()))?
        .grid();
    write_matrix_csv(path, grid, densities.iter().map(|d| d.values()))
}

/// Write a clr series as a matrix file.
pub fn write_clr_matrix(path: &Path, series: &ClrSeries) -> Result<()> {
    let rows: Vec<Vec<f64>> = (0..series.len())
        .map(|t| series.matrix().row(t).iter().cloned().collect())
        .collect();
    write_matrix_csv(path, series.grid(), rows.iter().map(|r| r.as_slice()))
}

/// Operator as a bare matrix CSV with a grid sidecar.
pub fn write_linear_map(path: &Path, map: &LinearMap) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    let m = map.matrix();
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| m[(i, j)].to_string()))?;
    }
    w.flush()?;
    write_grid_sidecar(path, map.grid())
}

pub fn read_linear_map(path: &Path) -> Result<LinearMap> {
    let grid = read_grid_sidecar(path)?;
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let n = grid.len();
    let mut m = DMatrix::zeros(n, n);
    let mut i = 0;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != n || i >= n {
            return Err(Error::Format(format!("operator file is not {n}x{n}")));
        }
        for (j, s) in rec.iter().enumerate() {
            m[(i, j)] = s
                .parse()
                .map_err(|e| Error::Format(format!("bad number {s:?}: {e}")))?;
        }
        i += 1;
    }
    if i != n {
        return Err(Error::Format(format!("operator file has {i} rows, expected {n}")));
    }
    LinearMap::from_matrix(&grid, m)
}

/// Critical-value table as CSV with columns `R,level,cv,mc_se`.
pub fn write_cv_table_csv(path: &Path, table: &CriticalValueTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["R", "level", "cv", "mc_se"])?;
    for row in &table.rows {
        for (i, level) in LEVELS.iter().enumerate() {
            let se = row.mc_se.map(|s| s[i].to_string()).unwrap_or_default();
            w.write_record([
                row.r.to_string(),
                level.to_string(),
                row.cv[i].to_string(),
                se,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
