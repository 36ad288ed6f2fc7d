//! Periodizes the built-in kernels on a unit torus and compares the discrete
//! moments with the continuous ones.

use convhom::grid::TorusGrid;
use convhom::kernels::{periodize, DispersalKernel};

fn main() -> convhom::Result<()> {
    let kernels = [
        ("gaussian", DispersalKernel::gaussian(1, 0.15)?),
        ("shifted gaussian", DispersalKernel::shifted_gaussian(&[0.2], 0.25)?),
        ("compact bump", DispersalKernel::compact_bump(&[0.1], 0.7)?),
    ];
    println!("{:<18} {:>5} {:>12} {:>12} {:>12}", "kernel", "n", "mass - 1", "m1 error", "m2 error");
    for (name, k) in &kernels {
        for n in [32, 128] {
            let m = periodize(k, TorusGrid::unit(n, 1)?, 1e-12)?;
            println!(
                "{name:<18} {n:>5} {:>12.2e} {:>12.2e} {:>12.2e}",
                m.mass() - 1.0,
                m.mean_first()[0] - k.first_moment()[0],
                m.mean_second()[0] - k.second_moment()[0],
            );
        }
    }
    Ok(())
}
