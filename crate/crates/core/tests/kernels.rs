mod common;

use convhom::env::{EnvironmentSpec, PeriodicProfile};
use convhom::grid::TorusGrid;
use convhom::kernels::*;
use convhom::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn moments(k: &DispersalKernel, n: usize) -> PeriodizedMoments {
    periodize(k, TorusGrid::unit(n, k.dim).unwrap(), 1e-12).unwrap()
}

#[test]
fn mass_of_narrow_gaussian() {
    let m = moments(&DispersalKernel::gaussian(1, 0.1).unwrap(), 64);
    assert!((m.mass() - 1.0).abs() < 1e-10);
}

#[test]
fn odd_first_moment_for_even_kernel() {
    let m = moments(&DispersalKernel::gaussian(1, 0.2).unwrap(), 32);
    let g = m.grid;
    for i in 0..g.len() {
        let neg = (g.len() - i) % g.len();
        assert!((m.m1[0][i] + m.m1[0][neg]).abs() < 1e-12);
    }
    assert!(m.mean_first()[0].abs() < 1e-10);
}

#[test]
fn shifted_gaussian_first_moment() {
    let m = moments(&DispersalKernel::shifted_gaussian(&[0.3], 0.1).unwrap(), 64);
    assert!((m.mean_first()[0] - 0.3).abs() < 1e-10);
}

#[test]
fn moment_consistency_for_built_in_families() {
    let kernels = [
        DispersalKernel::gaussian(1, 0.15).unwrap(),
        DispersalKernel::shifted_gaussian(&[-0.2], 0.3).unwrap(),
        DispersalKernel::compact_bump(&[0.1], 0.7).unwrap(),
    ];
    for k in &kernels {
        // the bump is smooth but steep near its edge and needs finer grids
        let ns: &[usize] = if k.spec.family == KernelFamily::CompactBump { &[128, 256, 512] } else { &[32, 64, 128] };
        for &n in ns {
            let m = moments(k, n);
            assert!((m.mass() - 1.0).abs() < 1e-9, "{:?} n={n} {:e}", k.spec.family, m.mass() - 1.0);
            assert!((m.mean_first()[0] - k.first_moment()[0]).abs() < 1e-9);
            assert!((m.mean_second()[0] - k.second_moment()[0]).abs() < 1e-9);
        }
    }
    // two dimensions, coarser grids
    let k2 = DispersalKernel::shifted_gaussian(&[0.1, -0.05], 0.2).unwrap();
    let m = moments(&k2, 32);
    let tr: f64 = m.mean_second()[0] + m.mean_second()[3];
    let exact = k2.second_moment()[0] + k2.second_moment()[3];
    assert!((m.mass() - 1.0).abs() < 1e-9 && (tr - exact).abs() < 1e-9);
}

#[test]
fn compact_bump_normalized() {
    let k = DispersalKernel::compact_bump(&[0.0], 0.4).unwrap();
    let fine: f64 = (0..200_000)
        .map(|i| {
            let z = -0.4 + 0.8 * (i as f64 + 0.5) / 200_000.0;
            k.eval(&[z]) * 0.8 / 200_000.0
        })
        .sum();
    assert!((fine - 1.0).abs() < 1e-10);
    assert!(k.eval(&[0.41]) == 0.0);
}

#[test]
fn constants_in_kernel_of_generator() {
    let m = moments(&DispersalKernel::shifted_gaussian(&[0.1], 0.3).unwrap(), 16);
    let gen = Generator::from_fn(&m, |_, _| 1.0);
    let mut out = vec![0.0; 16];
    gen.apply(&[1.0; 16], &mut out);
    assert!(out.iter().all(|x| x.abs() < 1e-15));
}

#[test]
fn generator_matches_fine_quadrature() {
    let width = 0.3;
    let k = DispersalKernel::gaussian(1, width).unwrap();
    let m = moments(&k, 8);
    let gen = Generator::from_fn(&m, |_, _| 1.0);
    let v: Vec<f64> = (0..8).map(|i| (std::f64::consts::TAU * i as f64 / 8.0).cos()).collect();
    let mut av = vec![0.0; 8];
    gen.apply(&v, &mut av);
    let rho = 12.0 * width;
    let pts = 10_000;
    for (i, got) in av.iter().enumerate() {
        let xi = i as f64 / 8.0;
        let h = 2.0 * rho / pts as f64;
        let exact: f64 = (0..pts)
            .map(|q| {
                let z = -rho + (q as f64 + 0.5) * h;
                ((std::f64::consts::TAU * (xi - z)).cos() - (std::f64::consts::TAU * xi).cos()) * k.eval(&[z]) * h
            })
            .sum();
        assert!((got - exact).abs() < 1e-6, "node {i}: {got} vs {exact}");
    }
}

#[test]
fn induced_norm_bound() {
    let m = moments(&DispersalKernel::shifted_gaussian(&[0.2], 0.25).unwrap(), 16);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (lo, hi) = (0.5, 1.7);
    for _ in 0..100 {
        let vals: Vec<f64> = (0..256).map(|_| rng.random_range(lo..=hi)).collect();
        let gen = Generator::from_fn(&m, |i, j| vals[i * 16 + j]);
        assert!(gen.inf_norm() <= 2.0 * hi * (1.0 + 1e-12));
        assert!(gen.kernel.to_dense().iter().all(|&x| x >= 0.0));
        let rows = gen.kernel.row_sums();
        assert!(rows.iter().zip(&gen.diag).all(|(a, b)| (a - b).abs() < 1e-14));
    }
}

#[test]
fn adjoint_conserves_mass() {
    let m = moments(&DispersalKernel::shifted_gaussian(&[0.2], 0.25).unwrap(), 16);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let vals: Vec<f64> = (0..256).map(|_| rng.random_range(0.5..1.5)).collect();
    let gen = Generator::from_fn(&m, |i, j| vals[i * 16 + j]);
    for _ in 0..10 {
        let p: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..2.0)).collect();
        let mut out = vec![0.0; 16];
        gen.apply_adjoint(&p, &mut out);
        assert!(m.grid.integrate(&out).abs() < 1e-12);
    }
}

#[test]
fn symmetric_data_give_symmetric_kernel() {
    let m = moments(&DispersalKernel::gaussian(1, 0.2).unwrap(), 32);
    let spec = EnvironmentSpec::markov(1, common::sym_profiles(), 1.0, 0);
    for gen in state_generators(&m, &spec).unwrap() {
        let k = gen.kernel.to_dense();
        for i in 0..32 {
            for j in 0..32 {
                assert!((k[i * 32 + j] - k[j * 32 + i]).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn mismatched_slice_is_dimension_error() {
    let m = moments(&DispersalKernel::gaussian(1, 0.2).unwrap(), 16);
    let slice = MuSlice::from_fn(TorusGrid::unit(8, 1).unwrap(), |_, _| 1.0);
    assert!(matches!(assemble_generator(&m, &slice), Err(Error::Dimension(_))));
    let ok = MuSlice::from_fn(m.grid, |x, y| PeriodicProfile::constant(1.0).with_term(&[1], &[0], 0.2, 0.0).eval(&x[..1], &y[..1]));
    let gen = assemble_generator(&m, &ok).unwrap();
    let dense = common::dense(&gen);
    let spec = EnvironmentSpec::constant(1, PeriodicProfile::constant(1.0).with_term(&[1], &[0], 0.2, 0.0), 0);
    let oracle = common::generator(&m, &spec, 0);
    assert!((dense - oracle).abs().max() < 1e-14);
}
