//! End-to-end orchestration: ingest raw cross-sections, deflate and trim,
//! estimate per-period log-densities on a shared grid, run FPCA and the
//! sequential rank test, and emit plot-ready artifacts.
//!
//! The shared analysis grid is the weighted percentile band of the pooled
//! truncated observations (at the configured truncation percentiles), padded
//! by one percent of its width. Per-period estimation is parallel; all
//! Monte Carlo randomness derives from the single config seed, so a fixed
//! seed and input reproduce the report byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::{empirical_cov, empirical_second_moment, eigenpairs, ClrSeries};
use crate::grid::{clr_inv, ClrFunction, Density, Grid, GridSpec};
use crate::io;
use crate::logdensity::{estimate_logdensity, CrossSection, LogDensityFit};
use crate::rank_test::{
    sequential_rank, CriticalValueTable, RankTestConfig, RankTestReport,
};
use crate::simulate::RngSeed;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Critical-value source for the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CvMode {
    Builtin,
    Simulate { paths: usize, steps: usize },
}

impl Default for CvMode {
    fn default() -> Self {
        CvMode::Builtin
    }
}

fn default_trunc_lower() -> f64 {
    2.5
}
fn default_trunc_upper() -> f64 {
    97.5
}
fn default_grid_n() -> usize {
    601
}
fn default_grid_pad() -> f64 {
    0.01
}
fn default_mesh() -> usize {
    crate::logdensity::DEFAULT_MESH
}
fn default_r_max() -> usize {
    5
}
fn default_level() -> f64 {
    0.05
}
fn default_demeaned() -> bool {
    true
}
fn default_perturbation_scale() -> f64 {
    1.0
}

/// Pipeline configuration; the JSON config file mirrors this field for field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Input CSV with columns `t,x[,w]`.
    pub input: PathBuf,
    #[serde(default = "default_trunc_lower")]
    pub trunc_lower: f64,
    #[serde(default = "default_trunc_upper")]
    pub trunc_upper: f64,
    /// Optional deflator CSV with columns `t,index`.
    #[serde(default)]
    pub deflator: Option<PathBuf>,
    /// Base period of the deflator; defaults to its first row.
    #[serde(default)]
    pub base_period: Option<i64>,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    #[serde(default = "default_grid_pad")]
    pub grid_pad: f64,
    #[serde(default = "default_mesh")]
    pub mesh: usize,
    /// Fixed bandwidth; absent means per-period GBIC selection.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default = "default_r_max")]
    pub r_max: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub cv: CvMode,
    #[serde(default = "default_demeaned")]
    pub demeaned: bool,
    #[serde(default = "default_perturbation_scale")]
    pub perturbation_scale: f64,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.trunc_lower && self.trunc_lower < self.trunc_upper && self.trunc_upper <= 100.0)
        {
            return Err(Error::Config(format!(
                "truncation percentiles ({}, {}) must satisfy 0 <= lower < upper <= 100",
                self.trunc_lower, self.trunc_upper
            )));
        }
        crate::rank_test::level_index(self.level)?;
        if self.grid_n < 3 {
            return Err(Error::Config("grid_n must be at least 3".into()));
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0) {
                return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
            }
        }
        Ok(())
    }
}

/// Read a `t,x[,w]` CSV into per-period cross-sections (weights renormalized
/// per period). Periods must form a contiguous run of integers.
pub fn ingest(path: &Path) -> Result<Vec<CrossSection>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut names: Vec<String> = headers.iter().map(|h| h.trim().to_lowercase()).collect();
    let has_weights = match names.len() {
        2 => false,
        3 => true,
        _ => {
            return Err(Error::Format(format!(
                "expected columns t,x[,w], found {names:?}"
            )))
        }
    };
    if names[0] != "t" || names[1] != "x" || (has_weights && names[2] != "w") {
        return Err(Error::Format(format!(
            "expected columns t,x[,w], found {names:?}"
        )));
    }
    names.clear();
    let mut groups: BTreeMap<i64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let t: i64 = rec
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Format(format!("row {}: bad period", line + 2)))?;
        let x: f64 = rec
            .get(1)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Format(format!("row {}: bad observation", line + 2)))?;
        let w: f64 = if has_weights {
            let w = rec
                .get(2)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("row {}: bad weight", line + 2)))?;
            if !(w > 0.0) {
                return Err(Error::Format(format!("row {}: non-positive weight {w}", line + 2)));
            }
            w
        } else {
            1.0
        };
        let entry = groups.entry(t).or_default();
        entry.0.push(x);
        entry.1.push(w);
    }
    if groups.is_empty() {
        return Err(Error::Format("input file holds no observations".into()));
    }
    let periods: Vec<i64> = groups.keys().cloned().collect();
    for pair in periods.windows(2) {
        if pair[1] != pair[0] + 1 {
            return Err(Error::Format(format!(
                "periods must be contiguous integers; {} jumps to {}",
                pair[0], pair[1]
            )));
        }
    }
    groups
        .into_iter()
        .map(|(t, (xs, ws))| CrossSection::new(t, xs, ws))
        .collect()
}

/// A deflator index series keyed by period.
#[derive(Debug, Clone, PartialEq)]
pub struct DeflatorSeries {
    pub base_period: i64,
    pub index: BTreeMap<i64, f64>,
}

impl DeflatorSeries {
    /// Read a `t,index` CSV; the base period defaults to the first row.
    pub fn from_csv(path: &Path, base_period: Option<i64>) -> Result<DeflatorSeries> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let names: Vec<String> = headers.iter().map(|h| h.trim().to_lowercase()).collect();
        if names.len() != 2 || names[0] != "t" || names[1] != "index" {
            return Err(Error::Format(format!(
                "expected deflator columns t,index, found {names:?}"
            )));
        }
        let mut index = BTreeMap::new();
        let mut first = None;
        for rec in reader.records() {
            let rec = rec?;
            let t: i64 = rec
                .get(0)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Format("bad deflator period".into()))?;
            let v: f64 = rec
                .get(1)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Format("bad deflator index".into()))?;
            if !(v > 0.0) {
                return Err(Error::Format(format!("deflator index at {t} must be positive, got {v}")));
            }
            first.get_or_insert(t);
            index.insert(t, v);
        }
        let base_period = match base_period {
            Some(b) => b,
            None => first.ok_or_else(|| Error::Format("empty deflator file".into()))?,
        };
        if !index.contains_key(&base_period) {
            return Err(Error::Format(format!("base period {base_period} missing from deflator")));
        }
        Ok(DeflatorSeries { base_period, index })
    }

    pub fn factor(&self, period: i64) -> Result<f64> {
        let base = self.index[&self.base_period];
        let at = self
            .index
            .get(&period)
            .ok_or_else(|| Error::Format(format!("deflator has no entry for period {period}")))?;
        Ok(base / at)
    }
}

/// Rescale every observation to base-period prices: `x · base_index / index_t`.
pub fn deflate(sections: &[CrossSection], deflator: &DeflatorSeries) -> Result<Vec<CrossSection>> {
    sections
        .iter()
        .map(|cs| {
            let factor = deflator.factor(cs.period())?;
            let xs: Vec<f64> = cs.observations().iter().map(|x| x * factor).collect();
            CrossSection::new(cs.period(), xs, cs.weights().to_vec())
        })
        .collect()
}

/// Keep observations inside the closed weighted percentile band
/// `[q(lower), q(upper)]` and renormalize the weights.
pub fn percentile_truncate(cs: &CrossSection, lower: f64, upper: f64) -> Result<CrossSection> {
    if !(0.0 <= lower && lower < upper && upper <= 100.0) {
        return Err(Error::Config(format!(
            "percentile band ({lower}, {upper}) must satisfy 0 <= lower < upper <= 100"
        )));
    }
    let lo = cs.percentile(lower);
    let hi = cs.percentile(upper);
    let mut xs = Vec::new();
    let mut ws = Vec::new();
    for (x, w) in cs.observations().iter().zip(cs.weights()) {
        if *x >= lo && *x <= hi {
            xs.push(*x);
            ws.push(*w);
        }
    }
    if xs.is_empty() {
        return Err(Error::Format(format!(
            "percentile band [{lo}, {hi}] leaves period {} empty",
            cs.period()
        )));
    }
    CrossSection::new(cs.period(), xs, ws)
}

/// Shared analysis grid: weighted percentile band of the pooled truncated
/// data, padded by `pad` of its width.
pub fn common_grid(sections: &[CrossSection], lower: f64, upper: f64, pad: f64, n: usize) -> Result<Grid> {
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    for cs in sections {
        pooled.extend(cs.observations().iter().cloned().zip(cs.weights().iter().cloned()));
    }
    if pooled.is_empty() {
        return Err(Error::Format("no observations to build a grid from".into()));
    }
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
    let xs: Vec<f64> = pooled.iter().map(|p| p.0).collect();
    let ws: Vec<f64> = pooled.iter().map(|p| p.1).collect();
    let lo = crate::logdensity::weighted_percentile(&xs, &ws, lower);
    let hi = crate::logdensity::weighted_percentile(&xs, &ws, upper);
    if !(hi > lo) {
        return Err(Error::DegenerateData(format!(
            "pooled percentile band collapses at {lo}"
        )));
    }
    let width = hi - lo;
    Grid::new(lo - pad * width, hi + pad * width, n)
}

/// Per-period summary carried in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSummary {
    pub period: i64,
    pub n_obs: usize,
    pub bandwidth: f64,
}

/// Stationary-mean perturbation curves (densities on the analysis grid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCurves {
    pub scale: f64,
    pub mean: Vec<f64>,
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
}

/// The versioned pipeline report (serialized as `report.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub config: PipelineConfig,
    pub grid: GridSpec,
    pub periods: Vec<PeriodSummary>,
    pub scree: Vec<f64>,
    pub rank: RankTestReport,
    pub selected: usize,
    /// Leading eigenfunctions spanning the estimated attractor (nodal values).
    pub attractor_basis: Vec<Vec<f64>>,
    pub perturbations: PerturbationCurves,
    pub artifacts: Vec<String>,
}

/// In-memory pipeline results: the report plus the full curves backing the
/// CSV artifacts.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: PipelineReport,
    pub densities: Vec<Density>,
    pub clr: ClrSeries,
    pub perturbation_densities: (Density, Density, Density),
}

/// Fixed artifact names written by [`emit_outputs`].
pub const ARTIFACTS: [&str; 7] = [
    "density_matrix.csv",
    "clr_matrix.csv",
    "scree.csv",
    "tau_table.csv",
    "attractor_basis.csv",
    "perturbations.csv",
    "report.json",
];

/// Run the full pipeline on ingested cross-sections. Stage errors carry the
/// stage name and period index.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let sections = ingest(&config.input).map_err(|e| stage_err("ingest", e))?;
    let sections = match &config.deflator {
        Some(path) => {
            let deflator = DeflatorSeries::from_csv(path, config.base_period)
                .map_err(|e| stage_err("deflate", e))?;
            deflate(&sections, &deflator).map_err(|e| stage_err("deflate", e))?
        }
        None => sections,
    };
    run_pipeline_on(config, sections)
}

/// Pipeline body starting from in-memory cross-sections (used directly by
/// synthetic-feed tests).
pub fn run_pipeline_on(config: &PipelineConfig, sections: Vec<CrossSection>) -> Result<PipelineOutput> {
    config.validate()?;
    let truncated: Vec<CrossSection> = sections
        .iter()
        .map(|cs| {
            percentile_truncate(cs, config.trunc_lower, config.trunc_upper)
                .map_err(|e| stage_err(&format!("truncate period {}", cs.period()), e))
        })
        .collect::<Result<_>>()?;
    let grid = common_grid(
        &truncated,
        config.trunc_lower,
        config.trunc_upper,
        config.grid_pad,
        config.grid_n,
    )
    .map_err(|e| stage_err("grid", e))?;

    let fits: Vec<(LogDensityFit, PeriodSummary)> = truncated
        .par_iter()
        .map(|cs| -> Result<(LogDensityFit, PeriodSummary)> {
            let h = match config.bandwidth {
                Some(h) => h,
                None => select_bandwidth_widening(cs, &grid, config.mesh)
                    .map_err(|e| stage_err(&format!("bandwidth period {}", cs.period()), e))?,
            };
            let fit = estimate_logdensity(cs, &grid, h, config.mesh)
                .map_err(|e| stage_err(&format!("estimate period {}", cs.period()), e))?;
            let summary = PeriodSummary {
                period: cs.period(),
                n_obs: cs.len(),
                bandwidth: h,
            };
            Ok((fit, summary))
        })
        .collect::<Result<_>>()?;

    let densities: Vec<Density> = fits.iter().map(|(f, _)| f.density.clone()).collect();
    let clr_rows: Vec<ClrFunction> = fits.iter().map(|(f, _)| f.clr.clone()).collect();
    let periods: Vec<PeriodSummary> = fits.into_iter().map(|(_, s)| s).collect();
    let series = ClrSeries::from_functions(&clr_rows).map_err(|e| stage_err("series", e))?;

    let seed = RngSeed::new(config.seed);
    let table = match config.cv {
        CvMode::Builtin => CriticalValueTable::builtin(),
        CvMode::Simulate { paths, steps } => CriticalValueTable::simulate(
            config.r_max,
            paths,
            steps,
            config.demeaned,
            seed.substream(1),
        )
        .map_err(|e| stage_err("critical values", e))?,
    };
    let rank = sequential_rank(
        &series,
        &RankTestConfig {
            r_max: config.r_max,
            level: config.level,
            demeaned: config.demeaned,
            table,
        },
    )
    .map_err(|e| stage_err("rank test", e))?;
    let selected = rank.selected;

    // Attractor description and stationary-mean perturbations from the same
    // covariance variant the test used.
    let cov = if config.demeaned {
        empirical_cov(&series)
    } else {
        empirical_second_moment(&series)
    }
    .map_err(|e| stage_err("fpca", e))?;
    let k = rank.scree.len().max(1).min(grid.len() - 1);
    let eigen = eigenpairs(&cov, k).map_err(|e| stage_err("fpca", e))?;
    let r_report = selected.max(1);
    let attractor_basis: Vec<Vec<f64>> = eigen
        .basis()
        .functions()
        .iter()
        .take(r_report)
        .map(|f| f.values().to_vec())
        .collect();

    // Stationary mean: project the series mean onto the cointegrating space
    // (the orthogonal complement of the selected attractor directions).
    let mean = series.mean();
    let mut stationary_mean = mean.clone();
    for f in eigen.basis().functions().iter().take(selected) {
        let c = stationary_mean.dot(f).map_err(|e| stage_err("perturbation", e))?;
        stationary_mean = stationary_mean
            .add_scaled(-c, f)
            .map_err(|e| stage_err("perturbation", e))?;
    }
    let v1 = eigen.basis().function(0);
    let zeta1 = eigen.eigenvalues()[0];
    let c = config.perturbation_scale * zeta1;
    let mean_density = clr_inv(&stationary_mean).map_err(|e| stage_err("perturbation", e))?;
    let plus = clr_inv(&stationary_mean.add_scaled(c, v1).map_err(|e| stage_err("perturbation", e))?)
        .map_err(|e| stage_err("perturbation", e))?;
    let minus = clr_inv(&stationary_mean.add_scaled(-c, v1).map_err(|e| stage_err("perturbation", e))?)
        .map_err(|e| stage_err("perturbation", e))?;

    let report = PipelineReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: config.clone(),
        grid: GridSpec::from(&grid),
        periods,
        scree: rank.scree.clone(),
        rank,
        selected,
        attractor_basis,
        perturbations: PerturbationCurves {
            scale: config.perturbation_scale,
            mean: mean_density.values().to_vec(),
            plus: plus.values().to_vec(),
            minus: minus.values().to_vec(),
        },
        artifacts: ARTIFACTS.iter().map(|s| s.to_string()).collect(),
    };
    Ok(PipelineOutput {
        report,
        densities,
        clr: series,
        perturbation_densities: (mean_density, plus, minus),
    })
}

/// GBIC selection with escalation: when every candidate in the scan range
/// leaves empty kernel windows on the mesh, widen the base bandwidth by
/// half-steps (up to ~3.4x) before giving up. Periods concentrated away from
/// parts of the shared grid need the wider windows.
fn select_bandwidth_widening(
    cs: &crate::logdensity::CrossSection,
    grid: &Grid,
    mesh: usize,
) -> Result<f64> {
    let base = crate::logdensity::default_bandwidth(cs)?;
    let mut last_err = None;
    for factor in [1.0, 1.5, 2.25, 3.375] {
        match crate::logdensity::select_bandwidth_with_base(cs, grid, mesh, base * factor) {
            Ok(sel) => {
                if factor > 1.0 {
                    log::warn!(
                        "period {}: widened bandwidth base by {factor} to cover the shared grid",
                        cs.period()
                    );
                }
                return Ok(sel.chosen);
            }
            Err(e @ Error::BandwidthSelection(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

fn stage_err(stage: &str, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::Io(io),
        other => match other.exit_code() {
            2 => Error::Format(format!("[{stage}] {other}")),
            _ => Error::Numerical(format!("[{stage}] {other}")),
        },
    }
}

/// Write every artifact of [`ARTIFACTS`] into `dir` and return their paths.
pub fn emit_outputs(output: &PipelineOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let grid = output.clr.grid();
    let mut written = Vec::new();

    let path = dir.join("density_matrix.csv");
    io::write_density_matrix(&path, &output.densities)?;
    written.push(path);

    let path = dir.join("clr_matrix.csv");
    io::write_clr_matrix(&path, &output.clr)?;
    written.push(path);

    let path = dir.join("scree.csv");
    {
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["rank", "eigenvalue"])?;
        for (i, z) in output.report.scree.iter().enumerate() {
            w.write_record([(i + 1).to_string(), z.to_string()])?;
        }
        w.flush()?;
    }
    written.push(path);

    let path = dir.join("tau_table.csv");
    {
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["R", "tau", "cv_1pct", "cv_5pct", "cv_10pct", "reject_1pct", "reject_5pct", "reject_10pct"])?;
        for d in &output.report.rank.decisions {
            w.write_record([
                d.r.to_string(),
                d.tau.to_string(),
                d.cv[0].to_string(),
                d.cv[1].to_string(),
                d.cv[2].to_string(),
                d.reject[0].to_string(),
                d.reject[1].to_string(),
                d.reject[2].to_string(),
            ])?;
        }
        w.flush()?;
    }
    written.push(path);

    let path = dir.join("attractor_basis.csv");
    io::write_matrix_csv(
        &path,
        grid,
        output.report.attractor_basis.iter().map(|r| r.as_slice()),
    )?;
    written.push(path);

    let path = dir.join("perturbations.csv");
    {
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["x", "mean", "plus", "minus"])?;
        let p = &output.report.perturbations;
        for i in 0..grid.len() {
            w.write_record([
                grid.nodes()[i].to_string(),
                p.mean[i].to_string(),
                p.plus[i].to_string(),
                p.minus[i].to_string(),
            ])?;
        }
        w.flush()?;
    }
    written.push(path);

    let path = dir.join("report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&output.report)?)?;
    written.push(path);

    Ok(written)
}
