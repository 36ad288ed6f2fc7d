//! Monte Carlo checks of the limit laws: the central limit theorem for the
//! integrated drift fluctuation `G0` and the law of the moving-frame solution.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{CellSolver, EffectiveModel};
use crate::env::{replica_rng, sample_environment};
use crate::eps_sim::{solve_eps, solve_homogenized, spectral_shift, EpsProblem};
use crate::error::{config, Error, Result};
use crate::stats;

/// Samples of `G0(t) = eps int_0^{t/eps^2} (beta - b)` per replica.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct G0Paths {
    pub epsilon: f64,
    pub times: Vec<f64>,
    /// `paths[replica][time][component]`.
    pub paths: Vec<Vec<Vec<f64>>>,
}

impl G0Paths {
    /// Component `c` at time index `k` across replicas.
    pub fn column(&self, k: usize, c: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p[k][c]).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.paths.first().and_then(|p| p.first()).map_or(0, Vec::len);
        write!(out, "replica,t")?;
        for c in 0..d {
            write!(out, ",g{c}")?;
        }
        writeln!(out)?;
        for (r, p) in self.paths.iter().enumerate() {
            for (t, v) in self.times.iter().zip(p) {
                write!(out, "{r},{t}")?;
                for x in v {
                    write!(out, ",{x:.12e}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

/// Integrates the centred drift of independent replicas. Replica `r` uses
/// environment stream `first_stream + r`.
pub fn sample_g0_paths(
    cell: &CellSolver,
    b: Option<&[f64]>,
    epsilon: f64,
    times: &[f64],
    replicas: usize,
    first_stream: u64,
) -> Result<G0Paths> {
    let b = b.ok_or_else(|| Error::Dependency("the effective drift b must be computed first".into()))?;
    if b.len() != cell.dim() {
        return Err(config("drift has the wrong dimension"));
    }
    if !(epsilon > 0.0) || times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) || times[0] < 0.0 {
        return Err(config("epsilon must be positive and times strictly increasing from 0"));
    }
    let eps2 = epsilon * epsilon;
    let fast: Vec<f64> = times.iter().map(|t| t / eps2).collect();
    let top = *fast.last().unwrap();
    let relax = cell.cfg.relax_time;
    let paths = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let path = sample_environment(&cell.spec, (-1.0, top + 2.0 * relax + 1.0), first_stream + r)?;
            let (series, _) = cell.beta_series(&path, (0.0, top), &fast)?;
            let cum = series.cumulative_at(&fast)?;
            Ok(cum
                .iter()
                .zip(&fast)
                .map(|(c, tau)| c.iter().zip(b).map(|(x, bi)| epsilon * (x - bi * tau)).collect())
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(G0Paths {
        epsilon,
        times: times.to_vec(),
        paths,
    })
}

/// Tolerances of [`clt_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltTolerances {
    /// Agreement in combined standard errors.
    pub sigmas: f64,
    /// Bound on the excess kurtosis of every component.
    pub kurtosis: f64,
    /// Replica count from which the kurtosis bound is enforced.
    pub kurtosis_min_replicas: usize,
}

impl Default for CltTolerances {
    fn default() -> Self {
        Self {
            sigmas: 3.0,
            kurtosis: 0.3,
            kurtosis_min_replicas: 2000,
        }
    }
}

/// Empirical statistics of `G0` against the Wiener limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub replicas: usize,
    pub epsilon: f64,
    pub times: Vec<f64>,
    /// Row-major empirical covariance per sample time.
    pub covariance: Vec<Vec<f64>>,
    pub covariance_std_error: Vec<Vec<f64>>,
    /// `sigma sigma* t`.
    pub target: Vec<Vec<f64>>,
    pub target_std_error: Vec<Vec<f64>>,
    /// Per component, at the last time.
    pub skewness: Vec<f64>,
    pub excess_kurtosis: Vec<f64>,
    /// `Corr(G(T) - G(T/2), G(T/2))` per component, when `T/2` is sampled.
    pub increment_correlation: Option<Vec<f64>>,
    /// `Cov(T) / Cov(T/2)` per component, when `T/2` is sampled.
    pub covariance_ratio: Option<Vec<f64>>,
    pub covariance_ok: bool,
    pub kurtosis_ok: bool,
    pub increments_ok: bool,
    pub ratio_ok: bool,
    pub pass: bool,
}

/// Compares the paths with `sigma_sq * t` (row-major `d x d`, with standard errors).
pub fn clt_check(paths: &G0Paths, sigma_sq: &[f64], sigma_sq_se: &[f64], tol: &CltTolerances) -> Result<CltReport> {
    let r = paths.paths.len();
    if r < 2 {
        return Err(Error::Statistical("at least two replicas are needed".into()));
    }
    let d = paths.paths[0][0].len();
    if sigma_sq.len() != d * d || sigma_sq_se.len() != d * d {
        return Err(config("sigma_sq has the wrong size"));
    }
    let nt = paths.times.len();
    let mut covariance = Vec::with_capacity(nt);
    let mut covariance_std_error = Vec::with_capacity(nt);
    let mut target = Vec::with_capacity(nt);
    let mut target_std_error = Vec::with_capacity(nt);
    let mut covariance_ok = true;
    for k in 0..nt {
        let t = paths.times[k];
        let cols: Vec<Vec<f64>> = (0..d).map(|c| paths.column(k, c)).collect();
        let means: Vec<f64> = cols.iter().map(|c| stats::mean(c)).collect();
        let mut cov = vec![0.0; d * d];
        let mut se = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let z: Vec<f64> = (0..r)
                    .map(|q| (cols[i][q] - means[i]) * (cols[j][q] - means[j]))
                    .collect();
                cov[i * d + j] = stats::mean(&z);
                se[i * d + j] = if r > 1 { (stats::variance(&z) / r as f64).sqrt() } else { 0.0 };
            }
        }
        let tgt: Vec<f64> = sigma_sq.iter().map(|s| s * t).collect();
        let tse: Vec<f64> = sigma_sq_se.iter().map(|s| s * t).collect();
        for ij in 0..d * d {
            let band = tol.sigmas * (se[ij].powi(2) + tse[ij].powi(2)).sqrt();
            if (cov[ij] - tgt[ij]).abs() > band.max(1e-14) {
                covariance_ok = false;
            }
        }
        covariance.push(cov);
        covariance_std_error.push(se);
        target.push(tgt);
        target_std_error.push(tse);
    }
    let last = nt - 1;
    // round-off level fluctuations of an identically zero drift
    let degenerate = |c: &[f64]| stats::variance(c) <= 1e-24;
    let last_cols: Vec<Vec<f64>> = (0..d).map(|c| paths.column(last, c)).collect();
    let skewness: Vec<f64> = last_cols
        .iter()
        .map(|c| if degenerate(c) { 0.0 } else { stats::skewness(c) })
        .collect();
    let excess_kurtosis: Vec<f64> = last_cols
        .iter()
        .map(|c| if degenerate(c) { 0.0 } else { stats::excess_kurtosis(c) })
        .collect();
    let kurtosis_ok = r < tol.kurtosis_min_replicas || excess_kurtosis.iter().all(|k| k.abs() <= tol.kurtosis);
    let t_end = paths.times[last];
    let mid = paths
        .times
        .iter()
        .position(|&t| (t - 0.5 * t_end).abs() <= 1e-9 * t_end.max(1.0));
    let (mut increment_correlation, mut covariance_ratio) = (None, None);
    let (mut increments_ok, mut ratio_ok) = (true, true);
    if let Some(m) = mid.filter(|&m| m > 0 && m < last) {
        let mut corr = Vec::with_capacity(d);
        let mut ratio = Vec::with_capacity(d);
        for c in 0..d {
            let g_mid = paths.column(m, c);
            let inc: Vec<f64> = last_cols[c].iter().zip(&g_mid).map(|(a, b)| a - b).collect();
            if degenerate(&g_mid) || degenerate(&inc) {
                corr.push(0.0);
                ratio.push(2.0);
                continue;
            }
            let rho = stats::correlation(&inc, &g_mid);
            if rho.abs() > tol.sigmas / (r as f64).sqrt() {
                increments_ok = false;
            }
            corr.push(rho);
            let (c1, s1) = (covariance[last][c * d + c], covariance_std_error[last][c * d + c]);
            let (c0, s0) = (covariance[m][c * d + c], covariance_std_error[m][c * d + c]);
            let q = c1 / c0;
            let se = q * ((s1 / c1).powi(2) + (s0 / c0).powi(2)).sqrt();
            if (q - 2.0).abs() > tol.sigmas * se {
                ratio_ok = false;
            }
            ratio.push(q);
        }
        increment_correlation = Some(corr);
        covariance_ratio = Some(ratio);
    }
    Ok(CltReport {
        replicas: r,
        epsilon: paths.epsilon,
        times: paths.times.clone(),
        covariance,
        covariance_std_error,
        target,
        target_std_error,
        skewness,
        excess_kurtosis,
        increment_correlation,
        covariance_ratio,
        pass: covariance_ok && kurtosis_ok && increments_ok && ratio_ok,
        covariance_ok,
        kurtosis_ok,
        increments_ok,
        ratio_ok,
    })
}

/// Scalar functional of a solution on the box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Functional {
    /// Value at the grid point nearest to `x`.
    PointValue { x: f64 },
    /// Rectangle-rule integral over `[a, b]`.
    WindowMass { a: f64, b: f64 },
}

impl Functional {
    pub fn eval(&self, u: &[f64], box_length: f64) -> f64 {
        let n = u.len();
        let dx = box_length / n as f64;
        match *self {
            Functional::PointValue { x } => u[((x / dx).round() as usize) % n],
            Functional::WindowMass { a, b } => (0..n)
                .filter(|&i| {
                    let x = i as f64 * dx;
                    x >= a && x < b
                })
                .map(|i| u[i] * dx)
                .sum(),
        }
    }
}

/// Two-sample comparison for one functional at one epsilon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawComparison {
    pub epsilon: f64,
    pub functional: Functional,
    pub ks_statistic: f64,
    pub critical_value: f64,
    /// First Wasserstein distance between the two samples.
    pub wasserstein: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawReport {
    pub replicas: usize,
    pub limit_samples: usize,
    pub comparisons: Vec<LawComparison>,
    pub warnings: Vec<String>,
    /// All comparisons at the smallest epsilon pass. When the limit law is a
    /// point mass the KS test is void; such comparisons pass when the
    /// Wasserstein distance shrinks from the previous epsilon.
    pub pass: bool,
}

/// Replica count below which the law comparison is flagged as underpowered.
const LAW_MIN_REPLICAS: usize = 100;

/// Compares the law of `F(u_eps(. + b t / eps, T))` with that of
/// `F(u0(. - sigma W_T, T))` for each epsilon and functional.
pub fn law_limit_check(
    template: &EpsProblem,
    effective: &EffectiveModel,
    epsilons: &[f64],
    functionals: &[Functional],
    replicas: usize,
    limit_samples: usize,
) -> Result<LawReport> {
    if effective.b.len() != 1 {
        return Err(config("law check is one-dimensional"));
    }
    if epsilons.is_empty() || functionals.is_empty() || replicas < 2 || limit_samples < 2 {
        return Err(config("law check needs epsilons, functionals and at least two samples"));
    }
    let mut warnings = Vec::new();
    if replicas < LAW_MIN_REPLICAS {
        warnings.push(format!(
            "only {replicas} replicas: the two-sample test has little power"
        ));
    }
    let (b, theta) = (effective.b[0], effective.theta[0]);
    let sigma = effective.sigma_sq[0].max(0.0).sqrt();
    let l = template.box_length;
    let t = template.final_time;
    // limit ensemble
    let u0 = template.initial_values();
    let hom = solve_homogenized(&u0, l, theta, &[t])?.remove(0);
    let mut rng = replica_rng(template.environment.seed, u64::MAX);
    let limit: Vec<Vec<f64>> = (0..limit_samples)
        .map(|_| {
            let w: f64 = StandardNormal.sample(&mut rng);
            let moved = spectral_shift(&hom, l, -sigma * t.sqrt() * w);
            functionals.iter().map(|f| f.eval(&moved, l)).collect()
        })
        .collect();
    let mut comparisons = Vec::new();
    for &eps in epsilons {
        let problem = EpsProblem {
            epsilon: eps,
            samples: 1,
            ..template.clone()
        };
        problem.validate()?;
        let dynamics = problem.dynamics()?;
        let values: Vec<Vec<f64>> = (0..replicas as u64)
            .into_par_iter()
            .map(|r| {
                let p = EpsProblem {
                    seed_offset: template.seed_offset + r,
                    ..problem.clone()
                };
                let path = p.sample_path(0.0)?;
                let sol = solve_eps(&p, &dynamics, &path)?;
                let moved = spectral_shift(sol.fields.last().unwrap(), l, b * t / eps);
                Ok(functionals.iter().map(|f| f.eval(&moved, l)).collect())
            })
            .collect::<Result<_>>()?;
        for (q, f) in functionals.iter().enumerate() {
            let a: Vec<f64> = values.iter().map(|v| v[q]).collect();
            let z: Vec<f64> = limit.iter().map(|v| v[q]).collect();
            let ks = stats::ks_statistic(&a, &z);
            let crit = stats::ks_critical_5pct(a.len(), z.len());
            let wasserstein = stats::wasserstein1(&a, &z);
            let point_mass = stats::variance(&z) <= 1e-24 * (1.0 + stats::mean(&z).powi(2));
            let pass = if point_mass {
                comparisons
                    .iter()
                    .rev()
                    .find(|c: &&LawComparison| c.functional == *f)
                    .is_none_or(|c| wasserstein < c.wasserstein)
            } else {
                ks <= crit
            };
            comparisons.push(LawComparison {
                epsilon: eps,
                functional: f.clone(),
                ks_statistic: ks,
                critical_value: crit,
                wasserstein,
                pass,
            });
        }
    }
    let smallest = epsilons.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = comparisons
        .iter()
        .filter(|c| c.epsilon == smallest)
        .all(|c| c.pass);
    Ok(LawReport {
        replicas,
        limit_samples,
        comparisons,
        warnings,
        pass,
    })
}
