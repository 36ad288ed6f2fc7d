//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use convhom::env::{EnvironmentPath, EnvironmentSpec, PeriodicProfile};
use convhom::kernels::{Generator, PeriodizedMoments};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub fn dense(gen: &Generator) -> DMatrix<f64> {
    let n = gen.grid.len();
    DMatrix::from_row_slice(n, n, &gen.to_dense())
}

/// Matrix exponential by scaling and squaring of a degree-24 Taylor polynomial.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let norm = a.iter().map(|x| x.abs()).sum::<f64>().max(1e-300);
    let s = (norm.log2().ceil() as i32 + 1).max(0);
    let scaled = a / 2f64.powi(s);
    let n = a.nrows();
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=24 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// `U(t1, t0)` for `du/dt = A(t) u` along a piecewise-constant path.
pub fn propagator(path: &EnvironmentPath, mats: &[DMatrix<f64>], t0: f64, t1: f64) -> DMatrix<f64> {
    let n = mats[0].nrows();
    let mut u = DMatrix::<f64>::identity(n, n);
    for seg in path.segments(t0, t1).unwrap() {
        u = expm(&(&mats[seg.state] * (seg.end - seg.start))) * u;
    }
    u
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Golub-Welsch.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(m, m);
    for k in 1..m {
        let b = k as f64 / ((4 * k * k - 1) as f64).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|k| (eig.eigenvalues[k], 2.0 * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

/// Composite Gauss-Legendre rule on `[a, b]`.
pub fn gl_rule(a: f64, b: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let c = a + (p as f64 + 0.5) * h;
        for (xi, wi) in x.iter().zip(&w) {
            out.push((c + 0.5 * h * xi, 0.5 * h * wi));
        }
    }
    out
}

/// Dense matrices `h^d M(xi - eta) mu_k(xi, eta)` for one moment component.
pub fn weighted(moments: &PeriodizedMoments, comp: &[f64], spec: &EnvironmentSpec, state: usize) -> DMatrix<f64> {
    let g = moments.grid;
    let d = g.dim;
    let n = g.len();
    let hd = g.cell_volume();
    DMatrix::from_fn(n, n, |i, j| {
        let (x, y) = (g.coords(i), g.coords(j));
        hd * comp[g.offset_index(i, j)] * spec.state_mu(state, &x[..d], &y[..d])
    })
}

/// Generator `K - diag(K 1)` built straight from the moment kernel.
pub fn generator(moments: &PeriodizedMoments, spec: &EnvironmentSpec, state: usize) -> DMatrix<f64> {
    let k = weighted(moments, &moments.m0, spec, state);
    let rows = k.column_sum();
    k - DMatrix::from_diagonal(&rows)
}

/// Null vector of `a` normalized by `h^d sum = 1`, via an augmented least-squares solve.
pub fn null_vector(a: &DMatrix<f64>, hd: f64) -> DVector<f64> {
    let n = a.nrows();
    let mut aug = DMatrix::<f64>::zeros(n + 1, n);
    aug.rows_mut(0, n).copy_from(a);
    aug.row_mut(n).fill(hd);
    let mut rhs = DVector::<f64>::zeros(n + 1);
    rhs[n] = 1.0;
    aug.svd(true, true).solve(&rhs, 1e-14).unwrap()
}

/// Solves `a x = rhs` with zero grid mean (`rhs` must be compatible).
pub fn gauge_solve(a: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let n = a.nrows();
    let mut aug = DMatrix::<f64>::zeros(n + 1, n);
    aug.rows_mut(0, n).copy_from(a);
    aug.row_mut(n).fill(1.0);
    let mut r = DVector::<f64>::zeros(n + 1);
    r.rows_mut(0, n).copy_from(rhs);
    aug.svd(true, true).solve(&r, 1e-14).unwrap()
}

/// Effective drift and symmetrized diffusion (d = 1) of a time-constant environment.
pub struct Autonomous {
    pub p: DVector<f64>,
    pub beta: f64,
    pub kappa: DVector<f64>,
    pub theta: f64,
}

pub fn autonomous_cell(moments: &PeriodizedMoments, spec: &EnvironmentSpec) -> Autonomous {
    assert_eq!(moments.grid.dim, 1);
    let hd = moments.grid.cell_volume();
    let a = generator(moments, spec, 0);
    let p = null_vector(&a.transpose(), hd);
    let b1 = weighted(moments, &moments.m1[0], spec, 0);
    let w2 = weighted(moments, &moments.m2[0], spec, 0) * 0.5;
    let m = b1.column_sum();
    let beta = hd * m.dot(&p);
    let rhs = m.map(|x| x - beta);
    let kappa = gauge_solve(&a, &rhs);
    let g = kappa.map(|k| k * beta) + w2.column_sum() - &b1 * &kappa;
    Autonomous {
        theta: hd * g.dot(&p),
        p,
        beta,
        kappa,
    }
}

/// `p_inf(t)` along a path by backward dense propagation from terminal 1 at `t_far`.
pub fn p_inf_at(path: &EnvironmentPath, mats: &[DMatrix<f64>], t: f64, t_far: f64, hd: f64) -> DVector<f64> {
    let n = mats[0].nrows();
    let u = propagator(path, mats, t, t_far);
    let p = u.transpose() * DVector::from_element(n, 1.0);
    let mass = hd * p.sum();
    p / mass
}

/// A path with prescribed jumps, for oracle comparisons.
pub fn fixed_path(spec: &EnvironmentSpec, t0: f64, t1: f64, jumps: &[f64], states: &[usize]) -> EnvironmentPath {
    assert_eq!(states.len(), jumps.len() + 1);
    EnvironmentPath {
        spec: spec.clone(),
        t0,
        t1,
        jump_times: jumps.to_vec(),
        states: states.to_vec(),
        seed_offset: 0,
    }
}

/// Two asymmetric one-dimensional profiles used across the tests.
pub fn asym_profiles() -> Vec<PeriodicProfile> {
    vec![
        PeriodicProfile::constant(1.0)
            .with_term(&[1], &[0], 0.3, 0.0)
            .with_term(&[0], &[1], 0.2, 0.5),
        PeriodicProfile::constant(1.0).with_term(&[1], &[-1], 0.25, 0.3),
    ]
}

pub fn sym_profiles() -> Vec<PeriodicProfile> {
    vec![
        PeriodicProfile::constant(1.0)
            .with_term(&[1], &[1], 0.3, 0.0)
            .with_term(&[1], &[-1], 0.2, 0.0),
        PeriodicProfile::constant(1.2).with_term(&[2], &[2], 0.25, 1.0),
    ]
}

pub fn config_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}
