use denscoint::fpca::ClrSeries;
use denscoint::grid::{clr_inv, ClrFunction, Grid};
use denscoint::logdensity::CrossSection;
use denscoint::operators::{fourier_basis_clr, gram_schmidt};
use denscoint::pipeline::{run_pipeline_on, CvMode, PipelineConfig};
use denscoint::simulate::{sample_from_density, RngSeed};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let sigma_step: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.22);
    let reps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(12);
    let grid = Grid::default_fixture();
    // Attractor direction: smoothed step (minimal sup norm for unit L2 norm),
    // orthonormalized against two Fourier noise directions.
    let step_raw: Vec<f64> = grid.nodes().iter().map(|x| (x / 0.5).tanh()).collect();
    let step = ClrFunction::demeaned(grid.clone(), step_raw).unwrap();
    let four = fourier_basis_clr(&grid, 3).unwrap();
    let family = gram_schmidt(&[step, four.functions()[1].clone(), four.functions()[2].clone()]).unwrap();
    let seed = RngSeed::new(777);
    let horizon = 300usize;
    let per_period = 5000usize;
    let config = PipelineConfig {
        input: "unused.csv".into(),
        trunc_lower: 2.5, trunc_upper: 97.5,
        deflator: None, base_period: None,
        grid_n: 601, grid_pad: 0.01, mesh: 101,
        bandwidth: None, r_max: 5, level: 0.05,
        cv: CvMode::Builtin, demeaned: true,
        perturbation_scale: 1.0, seed: 0,
        out_dir: "unused".into(),
    };
    let t0 = Instant::now();
    let results: Vec<String> = (0..reps).into_par_iter().map(|rep| {
        let rep_seed = seed.substream(rep as u64);
        let mut rng = rep_seed.rng();
        let mut walk = 0.0f64;
        let mut a2 = 0.0f64; let mut a3 = 0.0f64;
        let mut sections = Vec::with_capacity(horizon);
        let mut max_walk: f64 = 0.0;
        for t in 0..horizon {
            walk += sigma_step * rng.sample::<f64,_>(StandardNormal);
            max_walk = max_walk.max(walk.abs());
            a2 = 0.5*a2 + 0.10*rng.sample::<f64,_>(StandardNormal);
            a3 = 0.5*a3 + 0.10*rng.sample::<f64,_>(StandardNormal);
            let mut f = ClrFunction::zero(&grid);
            f = f.add_scaled(walk, family.function(0)).unwrap();
            f = f.add_scaled(a2, family.function(1)).unwrap();
            f = f.add_scaled(a3, family.function(2)).unwrap();
            let d = clr_inv(&f).unwrap();
            let xs = sample_from_density(&d, per_period, rep_seed.substream(500_000 + t as u64));
            sections.push(CrossSection::unweighted(t as i64 + 1, xs).unwrap());
        }
        match run_pipeline_on(&config, sections) {
            Ok(out) => {
                let d1 = out.report.rank.decisions.iter().find(|d| d.r == 1).unwrap();
                format!("rep {rep}: sel={} tau1={:.5} cv1={:.4} tau2={:.5} maxwalk={:.2}",
                    out.report.selected, d1.tau, d1.cv[1],
                    out.report.rank.decisions.iter().find(|d| d.r == 2).unwrap().tau, max_walk)
            }
            Err(e) => format!("rep {rep}: FAIL maxwalk={max_walk:.2} ({e})"),
        }
    }).collect();
    for r in &results { println!("{r}"); }
    println!("elapsed {:?}", t0.elapsed());
    let _ = ClrSeries::from_functions(&[]);
}
