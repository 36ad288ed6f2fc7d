//! Variance of the integrated drift fluctuation against the long-run
//! covariance for a two-level drift.

use convhom::cell::{CellConfig, CellSolver};
use convhom::env::{EnvironmentSpec, PeriodicProfile};
use convhom::kernels::DispersalKernel;
use convhom::stochastics::{clt_check, sample_g0_paths, CltTolerances};

fn main() -> convhom::Result<()> {
    let spec = EnvironmentSpec::markov(1, vec![PeriodicProfile::constant(0.5), PeriodicProfile::constant(1.5)], 1.0, 2);
    let kernel = DispersalKernel::shifted_gaussian(&[0.3], 0.2)?;
    let cell = CellSolver::new(&kernel, &spec, CellConfig { n: 8, relax_time: 10.0, ..CellConfig::default() })?;
    // levels 0.15 and 0.45 with unit switching rate
    let sigma_sq = 2.0 * 0.09 * 0.25;
    let paths = sample_g0_paths(&cell, Some(&[0.3]), 0.1, &[0.0, 0.5, 1.0], 300, 1)?;
    let report = clt_check(&paths, &[sigma_sq], &[0.0], &CltTolerances::default())?;
    for (t, (c, se)) in report.times.iter().zip(report.covariance.iter().zip(&report.covariance_std_error)) {
        println!("t = {t:<4} Var = {:.4e} +- {:.1e}  target {:.4e}", c[0], se[0], sigma_sq * t);
    }
    println!("increment correlation {:?}", report.increment_correlation);
    println!("pass {}", report.pass);
    Ok(())
}
