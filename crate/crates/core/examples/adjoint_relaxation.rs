//! Integrates the adjoint equation backward from a constant and shows how the
//! result forgets its terminal time.

use convhom::cell::{CellConfig, CellSolver};
use convhom::env::{EnvironmentSpec, PeriodicProfile};
use convhom::kernels::DispersalKernel;

fn main() -> convhom::Result<()> {
    let profiles = vec![
        PeriodicProfile::constant(1.0)
            .with_term(&[1], &[0], 0.3, 0.0)
            .with_term(&[0], &[1], 0.2, 0.5),
        PeriodicProfile::constant(1.0).with_term(&[1], &[-1], 0.25, 0.3),
    ];
    let spec = EnvironmentSpec::markov(1, profiles, 1.0, 5);
    let kernel = DispersalKernel::shifted_gaussian(&[0.1], 0.3)?;
    let cell = CellSolver::new(&kernel, &spec, CellConfig { n: 32, relax_time: 25.0, ..CellConfig::default() })?;
    let path = cell.sample_path(0.0, 5.0, 0)?;
    let p = cell.compute_p_inf(&path, (0.0, 5.0), &[0.0, 2.5, 5.0])?;
    let r = &p.report;
    println!("window doubling change  {:.2e}", r.doubling);
    if let Some(fit) = &r.decay {
        println!("decay rate              {:.4} (R^2 {:.4})", fit.rate, fit.r_squared);
    }
    println!("range of p              [{:.4}, {:.4}]", r.pi1, r.pi2);
    println!("mass error              {:.2e}", r.mass_error);
    let beta = cell.compute_beta(&p);
    println!("mean drift on window    {:.6}", beta.mean()[0]);
    Ok(())
}
