//! Product environment: the rescaled solution is the autonomous one run on the
//! random clock `s(t)`.

use convhom::env::{EnvironmentSpec, PeriodicProfile};
use convhom::eps_sim::{product_case_check, time_change_deviation, EpsProblem, GaussianBump};
use convhom::kernels::{KernelFamily, KernelSpec};

fn main() -> convhom::Result<()> {
    let spec = EnvironmentSpec::product(
        1,
        PeriodicProfile::constant(1.0).with_term(&[1], &[0], 0.3, 0.2),
        vec![0.5, 1.5],
        1.0,
        1,
    );
    let problem = EpsProblem {
        epsilon: 0.2,
        box_length: 12.0,
        points_per_cell: 8,
        initial: GaussianBump { center: None, width: 0.4 },
        final_time: 0.5,
        samples: 5,
        dt_fraction: 1.0,
        kernel: KernelSpec { family: KernelFamily::ShiftedGaussian, center: vec![0.1], width: 0.3 },
        environment: spec.clone(),
        seed_offset: 0,
    };
    let check = product_case_check(&problem)?;
    for ((t, s), m) in check.times.iter().zip(&check.time_change).zip(&check.mismatch) {
        println!("t = {t:<4} s(t) = {s:.5}  mismatch {m:.1e}");
    }
    let dev = time_change_deviation(&spec, &[0.2, 0.1, 0.05], 1.0, 20, 200)?;
    println!("rms sup |s(t) - m t| for eps 0.2, 0.1, 0.05: {dev:.4?}");
    Ok(())
}
