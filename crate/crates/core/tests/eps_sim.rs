mod common;

use common::*;
use convhom::cell::{CellConfig, EffectiveOptions};
use convhom::env::{EnvironmentSpec, PeriodicProfile};
use convhom::eps_sim::*;
use convhom::evolution::{evolve_on_nodes, Dynamics};
use convhom::grid::TorusGrid;
use convhom::kernels::{periodize, DispersalKernel, KernelFamily, KernelSpec};
use convhom::Error;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kernel(family: KernelFamily, center: f64, width: f64) -> KernelSpec {
    KernelSpec {
        family,
        center: vec![center],
        width,
    }
}

fn problem(epsilon: f64, kernel: KernelSpec, environment: EnvironmentSpec) -> EpsProblem {
    EpsProblem {
        epsilon,
        box_length: 12.0,
        points_per_cell: 8,
        initial: GaussianBump { center: None, width: 0.4 },
        final_time: 0.5,
        samples: 10,
        dt_fraction: 1.0,
        kernel,
        environment,
        seed_offset: 0,
    }
}

fn l2(u: &[f64], dx: f64) -> f64 {
    (u.iter().map(|v| v * v).sum::<f64>() * dx).sqrt()
}

#[test]
fn constants_stay_constant_on_the_box() {
    let spec = EnvironmentSpec::markov(1, asym_profiles(), 1.0, 3);
    let p = problem(0.5, kernel(KernelFamily::ShiftedGaussian, 0.1, 0.3), spec);
    let dyn_ = p.dynamics().unwrap();
    let n = dyn_.grid.len();
    let nodes: Vec<f64> = (0..=40).map(|k| k as f64 * 0.05).collect();
    for g in &dyn_.generators {
        let out = evolve_on_nodes(g, &vec![2.5; n], &nodes, &[40]);
        assert!(out[0].iter().all(|v| (v - 2.5).abs() < 1e-12));
    }
}

#[test]
fn unit_epsilon_reduces_to_the_cell_generator() {
    let spec = EnvironmentSpec::constant(1, PeriodicProfile::constant(1.0), 0);
    let ks = kernel(KernelFamily::ShiftedGaussian, 0.2, 0.3);
    let p = EpsProblem {
        box_length: 4.0,
        points_per_cell: 16,
        initial: GaussianBump { center: None, width: 0.1 },
        ..problem(1.0, ks.clone(), spec.clone())
    };
    let boxed = p.dynamics().unwrap();
    let grid = TorusGrid::with_period(64, 1, 4.0).unwrap();
    let moments = periodize(&DispersalKernel::new(ks, 1).unwrap(), grid, 1e-12).unwrap();
    let direct = Dynamics::new(&moments, &spec).unwrap();
    let oracle = generator(&moments, &spec, 0);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let v: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = vec![0.0; 64];
    boxed.generators[0].apply(&v, &mut out);
    let want = &oracle * DVector::from_vec(v.clone());
    for (a, b) in out.iter().zip(want.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    let nodes = [0.0, 0.05];
    let a = evolve_on_nodes(&boxed.generators[0], &v, &nodes, &[1]);
    let b = evolve_on_nodes(&direct.generators[0], &v, &nodes, &[1]);
    for (x, y) in a[0].iter().zip(&b[0]) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn symmetric_problem_contracts_in_l2() {
    let spec = EnvironmentSpec::markov(1, sym_profiles(), 1.0, 4);
    let p = problem(0.1, kernel(KernelFamily::Gaussian, 0.0, 0.3), spec);
    let path = p.sample_path(0.0).unwrap();
    let sol = solve_eps(&p, &p.dynamics().unwrap(), &path).unwrap();
    let dx = p.box_length / sol.fields[0].len() as f64;
    let start = l2(&sol.fields[0], dx);
    let mut prev = start;
    for f in &sol.fields[1..] {
        let now = l2(f, dx);
        assert!(now <= prev * (1.0 + 1e-12));
        prev = now;
    }
    assert!(prev <= start * (1.0 + 1e-6));
    assert!(prev < start);
}

#[test]
fn heat_solution_matches_the_gaussian_closed_form() {
    let l = 20.0;
    let n = 512;
    let w = 0.5;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 * l / n as f64).collect();
    let u0: Vec<f64> = xs.iter().map(|x| (-(x - 10.0).powi(2) / (2.0 * w * w)).exp()).collect();
    let times = [0.0, 0.3, 1.0];
    let sol = solve_homogenized(&u0, l, 0.5, &times).unwrap();
    for (t, u) in times.iter().zip(&sol) {
        let s2 = w * w + t;
        for (x, v) in xs.iter().zip(u) {
            let exact = w / s2.sqrt() * (-(x - 10.0).powi(2) / (2.0 * s2)).exp();
            assert!((v - exact).abs() < 1e-12, "t = {t}");
        }
        let mass: f64 = u.iter().sum::<f64>() - u0.iter().sum::<f64>();
        assert!(mass.abs() * l / (n as f64) < 1e-12);
    }
    assert_eq!(sol[0].len(), n);
    assert!(sol[0].iter().zip(&u0).all(|(a, b)| (a - b).abs() < 1e-15));
    assert!(matches!(solve_homogenized(&u0, l, 0.0, &times), Err(Error::Config(_))));
}

#[test]
fn spectral_shift_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // odd length: arbitrary data; even length: no energy in the Nyquist mode
    for n in [63usize, 64] {
        let u: Vec<f64> = if n % 2 == 1 {
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
        } else {
            let amps: Vec<(f64, f64)> = (0..n / 2).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(0.0..6.0))).collect();
            (0..n)
                .map(|i| {
                    amps.iter()
                        .enumerate()
                        .map(|(k, (a, ph))| a * (std::f64::consts::TAU * (k * i) as f64 / n as f64 + ph).cos())
                        .sum()
                })
                .collect()
        };
        let delta = rng.random_range(-3.0..3.0);
        let back = spectral_shift(&spectral_shift(&u, 7.0, delta), 7.0, -delta);
        for (a, b) in u.iter().zip(&back) {
            assert!((a - b).abs() < 1e-13);
        }
    }
    // whole-cell shifts are exact index rotations
    let u: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
    let s = spectral_shift(&u, 16.0, 3.0);
    for i in 0..16 {
        assert!((s[i] - u[(i + 3) % 16]).abs() < 1e-13);
    }
}

#[test]
fn frame_error_vanishes_at_time_zero_and_rejects_large_shifts() {
    let spec = EnvironmentSpec::constant(1, PeriodicProfile::constant(1.0), 0);
    let p = problem(0.2, kernel(KernelFamily::ShiftedGaussian, 0.1, 0.3), spec);
    let path = p.sample_path(0.0).unwrap();
    let sol = solve_eps(&p, &p.dynamics().unwrap(), &path).unwrap();
    let hom = solve_homogenized(&p.initial_values(), p.box_length, 0.05, &sol.times).unwrap();
    let frame = FrameShift::pure_drift(&sol.times, 0.1, 0.2);
    let err = moving_frame_error(&sol, &hom, &frame, p.box_length).unwrap();
    assert_eq!(err.error[0], 0.0);
    assert_eq!(frame.total()[0], 0.0);
    let far = FrameShift::pure_drift(&sol.times, 100.0, 0.2);
    assert!(matches!(moving_frame_error(&sol, &hom, &far, p.box_length), Err(Error::Domain(_))));
}

#[test]
fn fluctuation_frame_starts_at_zero() {
    let spec = EnvironmentSpec::markov(1, asym_profiles(), 1.0, 5);
    let p = problem(0.2, kernel(KernelFamily::ShiftedGaussian, 0.1, 0.3), spec);
    let cell = cell_for(&p, CellConfig { relax_time: 25.0, ..CellConfig::default() }).unwrap();
    let path = p.sample_path(25.0).unwrap();
    let frame = FrameShift::from_path(&cell, &path, &p.sample_times(), p.epsilon, 0.09).unwrap();
    assert_eq!(frame.fluctuation[0], 0.0);
    assert!(frame.fluctuation.iter().any(|g| g.abs() > 0.0));
}

#[test]
fn autonomous_drift_error_decreases_with_epsilon() {
    let spec = EnvironmentSpec::constant(1, PeriodicProfile::constant(1.0), 0);
    let template = problem(0.2, kernel(KernelFamily::ShiftedGaussian, 0.1, 0.3), spec);
    let cell = cell_for(&template, CellConfig { relax_time: 10.0, ..CellConfig::default() }).unwrap();
    let effective = cell
        .effective_model(&EffectiveOptions { drift_horizon: 20.0, theta_horizon: 4.0, replicas: 1 })
        .unwrap();
    assert!((effective.b[0] - 0.1).abs() < 1e-10);
    let sweep = eps_sweep(&template, &[0.2, 0.1, 0.05], &cell, &effective).unwrap();
    assert!(sweep.strictly_decreasing, "{:?}", sweep.sup_errors);
    for r in &sweep.runs {
        assert!(r.frame.fluctuation.iter().all(|&g| g == 0.0));
    }
    let mut csv = Vec::new();
    sweep.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("epsilon,seed,t,error,shift,delta\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 11);
}

#[test]
fn weighted_energy_does_not_grow() {
    let spec = EnvironmentSpec::markov(1, asym_profiles(), 1.0, 6);
    let p = problem(0.2, kernel(KernelFamily::ShiftedGaussian, 0.1, 0.3), spec);
    let cell = cell_for(&p, CellConfig { relax_time: 25.0, ..CellConfig::default() }).unwrap();
    let effective = cell
        .effective_model(&EffectiveOptions { drift_horizon: 200.0, theta_horizon: 20.0, replicas: 1 })
        .unwrap();
    let run = run_eps_case(&p, &cell, &effective, true).unwrap();
    assert!(run.energy_increase.unwrap() <= 1e-8, "{:?}", run.energy_increase);
}

#[test]
fn product_case_with_unit_lambda_is_exact() {
    let profile = PeriodicProfile::constant(1.0).with_term(&[1], &[0], 0.3, 0.2);
    let spec = EnvironmentSpec::product(1, profile, vec![1.0, 1.0], 1.0, 1);
    let p = problem(0.2, kernel(KernelFamily::ShiftedGaussian, 0.1, 0.3), spec);
    let check = product_case_check(&p).unwrap();
    assert!(check.max_mismatch <= 1e-12, "{}", check.max_mismatch);
    for (s, t) in check.time_change.iter().zip(&check.times) {
        assert!((s - t).abs() < 1e-12);
    }
}

#[test]
fn product_case_follows_the_time_change() {
    let profile = PeriodicProfile::constant(1.0).with_term(&[1], &[0], 0.3, 0.2);
    let spec = EnvironmentSpec::product(1, profile, vec![0.5, 1.5], 1.0, 1);
    let p = problem(0.2, kernel(KernelFamily::ShiftedGaussian, 0.1, 0.3), spec.clone());
    let check = product_case_check(&p).unwrap();
    assert!(check.max_mismatch <= 1e-8, "{}", check.max_mismatch);
    assert_eq!(check.delta[0], 0.0);
    let dev = time_change_deviation(&spec, &[0.2, 0.1, 0.05], 1.0, 20, 100).unwrap();
    assert!(dev[0] > dev[1] && dev[1] > dev[2], "{dev:?}");

    let markov = EnvironmentSpec::markov(1, asym_profiles(), 1.0, 1);
    let q = problem(0.2, kernel(KernelFamily::ShiftedGaussian, 0.1, 0.3), markov);
    assert!(matches!(product_case_check(&q), Err(Error::Config(_))));
}

#[test]
fn problem_validation() {
    let spec = EnvironmentSpec::constant(1, PeriodicProfile::constant(1.0), 0);
    let ks = kernel(KernelFamily::Gaussian, 0.0, 0.3);
    let bad = EpsProblem {
        box_length: 2.0,
        ..problem(0.3, ks.clone(), spec.clone())
    };
    assert!(matches!(bad.validate(), Err(Error::Config(m)) if m.contains("integer multiple")));
    let coarse = EpsProblem {
        points_per_cell: 4,
        ..problem(0.2, ks.clone(), spec.clone())
    };
    assert!(matches!(coarse.validate(), Err(Error::Config(_))));
    let wide = EpsProblem {
        initial: GaussianBump { center: None, width: 1.5 },
        ..problem(0.2, ks.clone(), spec.clone())
    };
    assert!(matches!(wide.validate(), Err(Error::Domain(_))));
    let unstable = EpsProblem {
        dt_fraction: 1.5,
        ..problem(0.2, ks, spec)
    };
    assert!(unstable.validate().is_err());
}

#[test]
fn escaping_solution_is_a_domain_error() {
    let spec = EnvironmentSpec::constant(1, PeriodicProfile::constant(1.0), 0);
    let p = EpsProblem {
        final_time: 2.0,
        ..problem(0.2, kernel(KernelFamily::ShiftedGaussian, 0.8, 0.3), spec)
    };
    let path = p.sample_path(0.0).unwrap();
    assert!(matches!(solve_eps(&p, &p.dynamics().unwrap(), &path), Err(Error::Domain(_))));
}
