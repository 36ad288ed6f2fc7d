use convhom::env::{lambda_of, sample_environment, EnvironmentSpec, PeriodicProfile};
use convhom::eps_sim::{solve_homogenized, spectral_shift};
use convhom::grid::TorusGrid;
use convhom::kernels::{periodize, state_generators, DispersalKernel};
use convhom::stats;
use proptest::prelude::*;

/// Up to three trigonometric terms whose amplitudes stay below the offset.
fn profile() -> impl Strategy<Value = PeriodicProfile> {
    (
        0.5f64..2.0,
        prop::collection::vec((-2i32..=2, -2i32..=2, 0.0f64..1.0, 0.0f64..6.3), 0..=3),
    )
        .prop_map(|(offset, terms)| {
            let scale = 0.9 * offset / terms.len().max(1) as f64;
            terms.into_iter().fold(PeriodicProfile::constant(offset), |p, (a, b, amp, ph)| {
                p.with_term(&[a], &[b], scale * amp, ph)
            })
        })
}

fn symmetric_profile() -> impl Strategy<Value = PeriodicProfile> {
    (0.5f64..2.0, prop::collection::vec((1i32..=2, 0.0f64..1.0, 0.0f64..6.3, any::<bool>()), 0..=3)).prop_map(
        |(offset, terms)| {
            let scale = 0.9 * offset / terms.len().max(1) as f64;
            terms.into_iter().fold(PeriodicProfile::constant(offset), |p, (k, amp, ph, same)| {
                if same {
                    // cos(2 pi k (xi + eta) + phase) is invariant under the swap
                    p.with_term(&[k], &[k], scale * amp, ph)
                } else {
                    p.with_term(&[k], &[-k], scale * amp, 0.0)
                }
            })
        },
    )
}

fn field(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn profiles_respect_their_bounds(p in profile(), pts in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 64)) {
        let (lo, hi) = p.bounds();
        prop_assert!(lo > 0.0);
        for (x, y) in pts {
            let v = p.eval(&[x], &[y]);
            prop_assert!(lo <= v && v <= hi);
        }
    }

    #[test]
    fn sampled_environments_stay_in_bounds(a in profile(), b in profile(), seed in 0u64..1000, t in 0.0f64..50.0, x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let spec = EnvironmentSpec::markov(1, vec![a, b], 0.7, seed);
        let path = sample_environment(&spec, (0.0, 50.0), seed).unwrap();
        let v = spec.state_mu(path.state_at(t).unwrap(), &[x], &[y]);
        prop_assert!(spec.alpha_lo <= v && v <= spec.alpha_hi);
        let occ: f64 = path.occupation().iter().sum();
        prop_assert!((occ - 1.0).abs() < 1e-12);
        prop_assert!(path.jump_times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn generators_conserve_and_are_transposes(
        p in profile(),
        center in -0.3f64..0.3,
        width in 0.1f64..0.4,
        v in field(16),
        w in field(16),
    ) {
        let grid = TorusGrid::unit(16, 1).unwrap();
        let kernel = DispersalKernel::shifted_gaussian(&[center], width).unwrap();
        let moments = periodize(&kernel, grid, 1e-12).unwrap();
        let spec = EnvironmentSpec::constant(1, p, 0);
        let gen = &state_generators(&moments, &spec).unwrap()[0];
        let mut av = vec![0.0; 16];
        let mut aw = vec![0.0; 16];
        gen.apply(&v, &mut av);
        gen.apply_adjoint(&w, &mut aw);
        let lhs = grid.inner(&av, &w);
        let rhs = grid.inner(&v, &aw);
        prop_assert!((lhs - rhs).abs() < 1e-12);
        // adjoint flow keeps the integral of p
        prop_assert!(grid.integrate(&aw).abs() < 1e-12);
        // forward flow kills constants
        gen.apply(&[1.0; 16], &mut av);
        prop_assert!(av.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn even_kernels_and_symmetric_weights_give_self_adjoint_generators(p in symmetric_profile(), width in 0.1f64..0.4, v in field(16)) {
        let grid = TorusGrid::unit(16, 1).unwrap();
        let moments = periodize(&DispersalKernel::gaussian(1, width).unwrap(), grid, 1e-12).unwrap();
        let spec = EnvironmentSpec::constant(1, p, 0);
        prop_assert!(spec.is_symmetric());
        let gen = &state_generators(&moments, &spec).unwrap()[0];
        let mut a = vec![0.0; 16];
        let mut b = vec![0.0; 16];
        gen.apply(&v, &mut a);
        gen.apply_adjoint(&v, &mut b);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn lambda_integrals_are_additive(seed in 0u64..500, a in 0.0f64..10.0, b in 0.0f64..10.0, c in 0.0f64..10.0) {
        let spec = EnvironmentSpec::product(1, PeriodicProfile::constant(1.0), vec![0.5, 1.5], 2.0, seed);
        let lam = lambda_of(&sample_environment(&spec, (0.0, 30.0), 0).unwrap());
        let mut t = [a, a + b, a + b + c];
        t.sort_by(f64::total_cmp);
        let whole = lam.integral(t[0], t[2]);
        prop_assert!((lam.integral(t[0], t[1]) + lam.integral(t[1], t[2]) - whole).abs() < 1e-12);
        prop_assert!(whole >= 0.5 * (t[2] - t[0]) - 1e-12 && whole <= 1.5 * (t[2] - t[0]) + 1e-12);
    }

    #[test]
    fn shifts_compose(u in field(33), s1 in -4.0f64..4.0, s2 in -4.0f64..4.0) {
        let once = spectral_shift(&u, 5.0, s1 + s2);
        let twice = spectral_shift(&spectral_shift(&u, 5.0, s1), 5.0, s2);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let mass: f64 = once.iter().sum::<f64>() - u.iter().sum::<f64>();
        prop_assert!(mass.abs() < 1e-12);
    }

    #[test]
    fn heat_flow_keeps_mass_and_contracts(u in field(40), theta in 0.01f64..2.0, t in 0.0f64..3.0) {
        let out = solve_homogenized(&u, 8.0, theta, &[t]).unwrap().remove(0);
        let sum = |x: &[f64]| x.iter().sum::<f64>();
        prop_assert!((sum(&out) - sum(&u)).abs() < 1e-11);
        let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        prop_assert!(norm(&out) <= norm(&u) * (1.0 + 1e-12));
    }

    #[test]
    fn two_sample_distances(a in prop::collection::vec(-5.0f64..5.0, 1..60), b in prop::collection::vec(-5.0f64..5.0, 1..60), c in -3.0f64..3.0) {
        let ks = stats::ks_statistic(&a, &b);
        prop_assert!((0.0..=1.0).contains(&ks));
        prop_assert!((ks - stats::ks_statistic(&b, &a)).abs() < 1e-15);
        prop_assert_eq!(stats::ks_statistic(&a, &a), 0.0);
        let moved: Vec<f64> = a.iter().map(|x| x + c).collect();
        prop_assert!((stats::wasserstein1(&a, &moved) - c.abs()).abs() < 1e-9);
        prop_assert!(stats::wasserstein1(&a, &b) >= 0.0);
    }

    #[test]
    fn symmetric_square_roots(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
        // a a^T is PSD
        let m = [x * x + y * y, y * z + x * y, y * z + x * y, z * z + y * y];
        let r = stats::psd_sqrt(&m, 2);
        let back = [
            r[0] * r[0] + r[1] * r[2],
            r[0] * r[1] + r[1] * r[3],
            r[2] * r[0] + r[3] * r[2],
            r[2] * r[1] + r[3] * r[3],
        ];
        for (u, v) in m.iter().zip(&back) {
            prop_assert!((u - v).abs() < 1e-10);
        }
        prop_assert!(stats::sym_eigenvalues(&m, 2).iter().all(|&e| e >= -1e-12));
    }
}
