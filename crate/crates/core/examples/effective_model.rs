//! Effective drift, diffusion and fluctuation covariance of a switching cell.

use convhom::cell::{CellConfig, CellSolver, EffectiveOptions};
use convhom::env::{EnvironmentSpec, PeriodicProfile};
use convhom::kernels::DispersalKernel;

fn main() -> convhom::Result<()> {
    let profiles = vec![
        PeriodicProfile::constant(1.0).with_term(&[1], &[0], 0.3, 0.0),
        PeriodicProfile::constant(1.4).with_term(&[1], &[-1], 0.2, 0.3),
    ];
    let spec = EnvironmentSpec::markov(1, profiles, 1.0, 3);
    let kernel = DispersalKernel::shifted_gaussian(&[0.1], 0.3)?;
    let cell = CellSolver::new(&kernel, &spec, CellConfig { n: 16, relax_time: 30.0, ..CellConfig::default() })?;
    let model = cell.effective_model(&EffectiveOptions { drift_horizon: 400.0, theta_horizon: 100.0, replicas: 2 })?;
    println!("b             {:.6} +- {:.1e}", model.b[0], model.b_std_error[0]);
    println!("Theta         {:.6} +- {:.1e}", model.theta[0], model.theta_std_error[0]);
    println!("sigma sigma*  {:.3e} +- {:.1e}", model.sigma_sq[0], model.sigma_sq_std_error[0]);
    println!("lag cutoff    {:.2}", model.lag_cutoff);
    println!("{}", serde_json::to_string_pretty(&model.provenance)?);
    Ok(())
}
