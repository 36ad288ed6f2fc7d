//! Moving-frame error of the rescaled problem against the homogenized heat
//! equation for a shrinking scale parameter.

use convhom::cell::{CellConfig, EffectiveOptions};
use convhom::env::{EnvironmentSpec, PeriodicProfile};
use convhom::eps_sim::{cell_for, eps_sweep, EpsProblem, GaussianBump};
use convhom::kernels::{KernelFamily, KernelSpec};

fn main() -> convhom::Result<()> {
    let profiles = vec![
        PeriodicProfile::constant(1.0).with_term(&[1], &[1], 0.3, 0.0),
        PeriodicProfile::constant(1.2).with_term(&[2], &[2], 0.25, 1.0),
    ];
    let template = EpsProblem {
        epsilon: 0.2,
        box_length: 12.0,
        points_per_cell: 8,
        initial: GaussianBump { center: None, width: 0.4 },
        final_time: 0.5,
        samples: 10,
        dt_fraction: 1.0,
        kernel: KernelSpec { family: KernelFamily::Gaussian, center: Vec::new(), width: 0.3 },
        environment: EnvironmentSpec::markov(1, profiles, 1.0, 7),
        seed_offset: 0,
    };
    let cell = cell_for(&template, CellConfig { relax_time: 20.0, ..CellConfig::default() })?;
    let effective = cell.effective_model(&EffectiveOptions { drift_horizon: 100.0, theta_horizon: 50.0, replicas: 1 })?;
    println!("b = {:.2e}, Theta = {:.5}", effective.b[0], effective.theta[0]);
    let sweep = eps_sweep(&template, &[0.2, 0.1, 0.05], &cell, &effective)?;
    for r in &sweep.runs {
        println!("eps {:<5} sup error {:.4e}", r.epsilon, r.error.sup);
    }
    println!("ratios {:?}, decreasing {}", sweep.ratios, sweep.strictly_decreasing);
    Ok(())
}
