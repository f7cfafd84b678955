//! `denscoint`: density-valued cointegration analysis from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use denscoint::error::{Error, Result};
use denscoint::fpca;
use denscoint::grid::Grid;
use denscoint::io;
use denscoint::logdensity::{estimate_logdensity, select_bandwidth};
use denscoint::pipeline::{emit_outputs, run_pipeline, PipelineConfig};
use denscoint::rank_test::{
    sequential_rank, CriticalValueTable, CvProvenance, RankTestConfig,
};
use denscoint::simulate::{
    paper_ar1, simulate_i1_ma, simulate_paper_ar1, InnovationConfig, MaSpec, RngSeed,
};

#[derive(Parser)]
#[command(
    name = "denscoint",
    about = "Cointegrated density-valued time series analysis",
    version
)]
struct Cli {
    /// Override the RNG seed of any subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a density-valued process and write density/clr matrices.
    Simulate(SimulateArgs),
    /// Estimate per-period log-densities from raw samples.
    Estimate(EstimateArgs),
    /// FPCA of a clr matrix: eigenvalues, eigenfunctions, projector.
    Fpca(FpcaArgs),
    /// Sequential cointegration rank test on a clr matrix.
    RankTest(RankTestArgs),
    /// Simulate critical values of the rank statistic.
    Critval(CritvalArgs),
    /// Full pipeline driven by a JSON config.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// paper-ar1 | random-walk | stationary
    #[arg(long)]
    preset: String,
    /// Horizon (number of simulated periods).
    #[arg(long = "T", default_value_t = 300)]
    horizon: usize,
    #[arg(long, default_value_t = 601)]
    grid_n: usize,
    /// Polynomial order of the innovation projection.
    #[arg(long, default_value_t = 10)]
    m: usize,
    /// Innovation scale.
    #[arg(long, default_value_t = 0.3)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for density_matrix.csv and clr_matrix.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// CSV with columns t,x[,w].
    #[arg(long)]
    input: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    grid_lower: f64,
    #[arg(long, allow_hyphen_values = true)]
    grid_upper: f64,
    #[arg(long, default_value_t = 601)]
    grid_n: usize,
    #[arg(long, default_value_t = 101)]
    mesh: usize,
    /// "auto" for per-period GBIC selection or a fixed number.
    #[arg(long, default_value = "auto")]
    bandwidth: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FpcaArgs {
    /// clr matrix CSV (first row nodes, one row per period).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 25)]
    k: usize,
    /// Attractor dimension for the projector block.
    #[arg(long)]
    r: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankTestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 5)]
    rmax: usize,
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    /// builtin | simulate
    #[arg(long, default_value = "builtin")]
    cv: String,
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = true)]
    demeaned: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CritvalArgs {
    /// Single R or inclusive range, e.g. "3" or "1..7".
    #[arg(long = "R", default_value = "1..7")]
    r_spec: String,
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = true)]
    demeaned: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// JSON config mirroring the pipeline configuration field for field.
    #[arg(long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("warning: could not set thread count: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(mut args) => {
            if let Some(seed) = cli.seed {
                args.seed = seed;
            }
            cmd_simulate(args)
        }
        Command::Estimate(args) => cmd_estimate(args),
        Command::Fpca(args) => cmd_fpca(args),
        Command::RankTest(mut args) => {
            if let Some(seed) = cli.seed {
                args.seed = seed;
            }
            cmd_rank_test(args)
        }
        Command::Critval(mut args) => {
            if let Some(seed) = cli.seed {
                args.seed = seed;
            }
            cmd_critval(args)
        }
        Command::Pipeline(args) => cmd_pipeline(args, cli.seed),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let grid = Grid::new(-3.0, 3.0, args.grid_n)?;
    let innovation = InnovationConfig::new(grid.clone(), args.scale, args.m)?;
    let seed = RngSeed::new(args.seed);
    let densities = match args.preset.as_str() {
        "paper-ar1" => {
            let model = paper_ar1(&grid, 25)?;
            simulate_paper_ar1(&model, &innovation, args.horizon, seed)?
        }
        "random-walk" => {
            let spec = MaSpec::new(vec![denscoint::operators::LinearMap::identity(&grid)])?;
            simulate_i1_ma(&spec, &innovation, args.horizon, seed)?
        }
        "stationary" => {
            let model = paper_ar1(&grid, 25)?;
            let gammas: Vec<f64> = (1..=25).map(|j| 0.5f64.powi(j)).collect();
            let operator =
                denscoint::operators::LinearMap::from_spectrum(&model.basis, &gammas)?;
            let damped = denscoint::simulate::PaperAr1 {
                operator,
                mean: model.mean.clone(),
                basis: model.basis.clone(),
            };
            simulate_paper_ar1(&damped, &innovation, args.horizon, seed)?
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; expected paper-ar1 | random-walk | stationary"
            )))
        }
    };
    std::fs::create_dir_all(&args.out)?;
    io::write_density_matrix(&args.out.join("density_matrix.csv"), &densities)?;
    let rows: Vec<_> = densities.iter().map(denscoint::grid::clr).collect();
    let series = fpca::ClrSeries::from_functions(&rows)?;
    io::write_clr_matrix(&args.out.join("clr_matrix.csv"), &series)?;
    println!(
        "simulated {} periods of preset {} on [{}, {}] with {} nodes -> {}",
        densities.len(),
        args.preset,
        grid.lower(),
        grid.upper(),
        grid.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct BandwidthLogEntry {
    period: i64,
    n_obs: usize,
    bandwidth: f64,
    base: Option<f64>,
    gbic: Option<Vec<denscoint::logdensity::BandwidthCandidate>>,
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    use rayon::prelude::*;
    let sections = denscoint::pipeline::ingest(&args.input)?;
    let grid = Grid::new(args.grid_lower, args.grid_upper, args.grid_n)?;
    let fixed: Option<f64> = match args.bandwidth.as_str() {
        "auto" => None,
        s => Some(
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("bandwidth must be \"auto\" or a number, got {s:?}")))?,
        ),
    };
    let results: Vec<(denscoint::logdensity::LogDensityFit, BandwidthLogEntry)> = sections
        .par_iter()
        .map(|cs| -> Result<_> {
            let (h, base, gbic) = match fixed {
                Some(h) => (h, None, None),
                None => {
                    let sel = select_bandwidth(cs, &grid, args.mesh)?;
                    (sel.chosen, Some(sel.base), Some(sel.candidates))
                }
            };
            let fit = estimate_logdensity(cs, &grid, h, args.mesh)?;
            let log = BandwidthLogEntry {
                period: cs.period(),
                n_obs: cs.len(),
                bandwidth: h,
                base,
                gbic,
            };
            Ok((fit, log))
        })
        .collect::<Result<_>>()?;
    std::fs::create_dir_all(&args.out)?;
    let densities: Vec<_> = results.iter().map(|(f, _)| f.density.clone()).collect();
    io::write_density_matrix(&args.out.join("density_matrix.csv"), &densities)?;
    let rows: Vec<_> = results.iter().map(|(f, _)| f.clr.clone()).collect();
    let series = fpca::ClrSeries::from_functions(&rows)?;
    io::write_clr_matrix(&args.out.join("clr_matrix.csv"), &series)?;
    let logs: Vec<&BandwidthLogEntry> = results.iter().map(|(_, l)| l).collect();
    std::fs::write(
        args.out.join("bandwidths.json"),
        serde_json::to_string_pretty(&logs)?,
    )?;
    println!(
        "estimated {} period densities on [{}, {}] -> {}",
        densities.len(),
        grid.lower(),
        grid.upper(),
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct FpcaReport {
    k: usize,
    r: usize,
    eigenvalues: Vec<f64>,
    nodes: Vec<f64>,
    basis: Vec<Vec<f64>>,
    projector_trace: f64,
    projector_idempotency_residual: f64,
}

fn cmd_fpca(args: FpcaArgs) -> Result<()> {
    let series = io::read_clr_series(&args.input)?;
    let cov = fpca::empirical_cov(&series)?;
    let k = args.k.min(series.grid().len() - 1);
    let eigen = fpca::eigenpairs(&cov, k)?;
    let attractor = fpca::estimate_attractor(&series, args.r)?;
    let p = attractor.projector.matrix();
    let trace: f64 = (0..p.nrows()).map(|i| p[(i, i)]).sum();
    let idem = ((p * p) - p).amax();
    let report = FpcaReport {
        k,
        r: args.r,
        eigenvalues: eigen.eigenvalues().to_vec(),
        nodes: series.grid().nodes().to_vec(),
        basis: eigen
            .basis()
            .functions()
            .iter()
            .map(|f| f.values().to_vec())
            .collect(),
        projector_trace: trace,
        projector_idempotency_residual: idem,
    };
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&args.out, serde_json::to_string_pretty(&report)?)?;
    println!(
        "fpca: T = {}, k = {k}, leading eigenvalue {:.6} -> {}",
        series.len(),
        report.eigenvalues.first().cloned().unwrap_or(0.0),
        args.out.display()
    );
    Ok(())
}

fn cmd_rank_test(args: RankTestArgs) -> Result<()> {
    let series = io::read_clr_series(&args.input)?;
    let table = match args.cv.as_str() {
        "builtin" => {
            if !args.demeaned {
                return Err(Error::Config(
                    "the builtin table is for the demeaned variant; use --cv simulate with --demeaned false".into(),
                ));
            }
            CriticalValueTable::builtin()
        }
        "simulate" => CriticalValueTable::simulate(
            args.rmax,
            args.paths,
            args.steps,
            args.demeaned,
            RngSeed::new(args.seed),
        )?,
        other => {
            return Err(Error::Config(format!(
                "unknown cv mode {other:?}; expected builtin | simulate"
            )))
        }
    };
    let report = sequential_rank(
        &series,
        &RankTestConfig {
            r_max: args.rmax,
            level: args.level,
            demeaned: args.demeaned,
            table,
        },
    )?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&args.out, serde_json::to_string_pretty(&report)?)?;
    println!(
        "rank test: T = {}, R_max = {}, selected dimension {} at level {} -> {}",
        series.len(),
        report.r_max,
        report.selected,
        report.level,
        args.out.display()
    );
    Ok(())
}

fn parse_r_spec(spec: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = spec.split_once("..") {
        let a: usize = a
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad R range {spec:?}")))?;
        let b: usize = b
            .trim()
            .trim_start_matches('=')
            .parse()
            .map_err(|_| Error::Config(format!("bad R range {spec:?}")))?;
        if a < 1 || b < a {
            return Err(Error::Config(format!("bad R range {spec:?}")));
        }
        Ok((a..=b).collect())
    } else {
        let r: usize = spec
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad R value {spec:?}")))?;
        Ok(vec![r])
    }
}

fn cmd_critval(args: CritvalArgs) -> Result<()> {
    let rs = parse_r_spec(&args.r_spec)?;
    let seed = RngSeed::new(args.seed);
    let rows = rs
        .iter()
        .map(|r| {
            denscoint::rank_test::simulate_critical_values(
                *r,
                args.paths,
                args.steps,
                args.demeaned,
                seed.substream(*r as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let table = CriticalValueTable {
        rows,
        demeaned: args.demeaned,
        provenance: CvProvenance::Simulated {
            paths: args.paths,
            steps: args.steps,
            seed: args.seed,
        },
    };
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    io::write_cv_table_csv(&args.out, &table)?;
    for row in &table.rows {
        println!(
            "R = {}: 1% {:.4}  5% {:.4}  10% {:.4}",
            row.r, row.cv[0], row.cv[1], row.cv[2]
        );
    }
    println!("critical values ({} paths, {} steps, demeaned = {}) -> {}",
        args.paths, args.steps, args.demeaned, args.out.display());
    Ok(())
}

fn cmd_pipeline(args: PipelineArgs, seed_override: Option<u64>) -> Result<()> {
    let raw = std::fs::read_to_string(&args.config)?;
    let mut config: PipelineConfig = serde_json::from_str(&raw)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    let output = run_pipeline(&config)?;
    let written = emit_outputs(&output, &config.out_dir)?;
    println!(
        "pipeline: {} periods, selected attractor dimension {} at level {}",
        output.report.periods.len(),
        output.report.selected,
        output.report.rank.level
    );
    for path in written {
        println!("  wrote {}", path.display());
    }
    Ok(())
}
