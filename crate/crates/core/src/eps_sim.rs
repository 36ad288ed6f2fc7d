//! The rescaled problem on a periodic box, its homogenized limit and the
//! moving-frame comparison between the two. One space dimension.
//!
//! In cell units `y = x / eps` the box `[0, L)` is a torus of period `L / eps`
//! sampled with `points_per_cell` nodes per unit cell, and the equation reads
//! `du/dtau = A(tau) u` in the fast time `tau = t / eps^2`, with `A` assembled
//! exactly like the cell generator.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::cell::{CellSolver, EffectiveModel};
use crate::env::{lambda_of, sample_environment, EnvironmentModel, EnvironmentPath, EnvironmentSpec};
use crate::error::{config, dimension, Error, Result};
use crate::evolution::{evolve_on_nodes, integrate_forward, Dynamics, IntegratorConfig, StepGrid};
use crate::grid::{TorusField, TorusGrid, Trajectory};
use crate::kernels::{periodize, state_generators, DispersalKernel, Generator, KernelSpec};

/// Gaussian initial datum `exp(-(x - center)^2 / (2 width^2))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    /// Defaults to the middle of the box.
    pub center: Option<f64>,
    pub width: f64,
}

impl GaussianBump {
    pub fn eval(&self, x: f64, box_length: f64) -> f64 {
        let c = self.center.unwrap_or(0.5 * box_length);
        (-(x - c).powi(2) / (2.0 * self.width * self.width)).exp()
    }
}

/// One instance of the rescaled problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsProblem {
    pub epsilon: f64,
    pub box_length: f64,
    pub points_per_cell: usize,
    pub initial: GaussianBump,
    pub final_time: f64,
    /// Number of equal sample intervals on `[0, final_time]`.
    pub samples: usize,
    /// Step as a fraction of the stability cap.
    pub dt_fraction: f64,
    pub kernel: KernelSpec,
    pub environment: EnvironmentSpec,
    pub seed_offset: u64,
}

/// Points closer to the boundary than this fraction of `L` count as boundary.
const BOUNDARY_ZONE: f64 = 0.125;
/// Largest tolerated boundary value relative to the initial peak.
const BOUNDARY_LIMIT: f64 = 1e-8;

impl EpsProblem {
    /// Cells per box, `L / eps`.
    pub fn cells(&self) -> Result<usize> {
        let r = self.box_length / self.epsilon;
        let k = r.round();
        if !(self.epsilon > 0.0) || k < 1.0 || (r - k).abs() > 1e-9 * r.max(1.0) {
            return Err(config(format!(
                "box length {} is not an integer multiple of epsilon {}",
                self.box_length, self.epsilon
            )));
        }
        Ok(k as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.cells()?;
        self.environment.validate()?;
        if self.environment.dim != 1 {
            return Err(dimension("the rescaled problem is one-dimensional"));
        }
        if self.points_per_cell < 8 {
            return Err(config(format!(
                "points per cell {} below the minimum of 8",
                self.points_per_cell
            )));
        }
        if !(self.final_time > 0.0) || self.samples == 0 {
            return Err(config("final_time must be positive and samples nonzero"));
        }
        IntegratorConfig::from_fraction(self.environment.alpha_hi, self.dt_fraction)?;
        let l = self.box_length;
        let peak = self.grid_points().map(|x| self.initial.eval(x, l).abs()).fold(0.0, f64::max);
        let edge = self
            .grid_points()
            .filter(|&x| x < 0.25 * l || x > 0.75 * l)
            .map(|x| self.initial.eval(x, l).abs())
            .fold(0.0, f64::max);
        if edge >= 1e-12 * peak.max(1.0) {
            return Err(Error::Domain(format!(
                "initial datum reaches {edge:.2e} within L/4 of the box boundary"
            )));
        }
        Ok(())
    }

    fn grid_points(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.box_grid_len();
        let dx = self.box_length / n as f64;
        (0..n).map(move |i| i as f64 * dx)
    }

    fn box_grid_len(&self) -> usize {
        self.cells().unwrap_or(1) * self.points_per_cell
    }

    /// Torus of the box in cell units.
    pub fn grid(&self) -> Result<TorusGrid> {
        let cells = self.cells()?;
        TorusGrid::with_period(cells * self.points_per_cell, 1, cells as f64)
    }

    /// Macroscopic sample times `k T / samples`.
    pub fn sample_times(&self) -> Vec<f64> {
        (0..=self.samples)
            .map(|k| self.final_time * k as f64 / self.samples as f64)
            .collect()
    }

    pub fn fast_horizon(&self) -> f64 {
        self.final_time / (self.epsilon * self.epsilon)
    }

    /// Initial datum on the box grid.
    pub fn initial_values(&self) -> Vec<f64> {
        self.grid_points().map(|x| self.initial.eval(x, self.box_length)).collect()
    }

    /// Box generators, one per environment state.
    pub fn dynamics(&self) -> Result<Dynamics> {
        let grid = self.grid()?;
        let kernel = DispersalKernel::new(self.kernel.clone(), 1)?;
        let moments = periodize(&kernel, grid, 1e-12)?;
        Dynamics::from_generators(state_generators(&moments, &self.environment)?)
    }

    /// Environment path over the fast horizon with room for cell relaxation.
    pub fn sample_path(&self, relax_time: f64) -> Result<EnvironmentPath> {
        let top = self.fast_horizon() + 2.0 * relax_time + 1.0;
        sample_environment(&self.environment, (-4.0 * relax_time - 1.0, top), self.seed_offset)
    }
}

/// Solution of the rescaled problem at the sample times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsSolution {
    pub epsilon: f64,
    /// Macroscopic times.
    pub times: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
    /// Largest value seen in the boundary zones, relative to the initial peak.
    pub boundary_peak: f64,
}

/// Integrates the rescaled problem along `path` (fast time) up to the final time.
pub fn solve_eps(problem: &EpsProblem, dynamics: &Dynamics, path: &EnvironmentPath) -> Result<EpsSolution> {
    problem.validate()?;
    let grid = problem.grid()?;
    dynamics.grid.check_same(&grid)?;
    let eps2 = problem.epsilon * problem.epsilon;
    let times = problem.sample_times();
    let fast: Vec<f64> = times.iter().map(|t| t / eps2).collect();
    let cfg = IntegratorConfig::from_fraction(problem.environment.alpha_hi, problem.dt_fraction)?;
    let steps = StepGrid::build(path, 0.0, problem.fast_horizon(), &fast, cfg.dt, 1)?;
    let wanted: Vec<usize> = fast
        .iter()
        .map(|&t| steps.find(t).ok_or_else(|| Error::Inconsistency(format!("{t} is not a node"))))
        .collect::<Result<_>>()?;
    let mut u = problem.initial_values();
    let mut fields = Vec::with_capacity(wanted.len());
    integrate_forward(&steps, dynamics, &mut u, 1, 0, steps.len() - 1, 1, None, |i, v| {
        for &w in &wanted {
            if w == i {
                fields.push(v.to_vec());
            }
        }
    })?;
    let n = grid.len();
    let peak = fields[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let zone = (BOUNDARY_ZONE * n as f64) as usize;
    let boundary_peak = fields
        .iter()
        .flat_map(|f| f[..zone].iter().chain(&f[n - zone..]))
        .fold(0.0f64, |m, v| m.max(v.abs()))
        / peak;
    if boundary_peak > BOUNDARY_LIMIT {
        return Err(Error::Domain(format!(
            "solution reached the box boundary (relative value {boundary_peak:.2e}); enlarge the box"
        )));
    }
    Ok(EpsSolution {
        epsilon: problem.epsilon,
        times,
        fields,
        boundary_peak,
    })
}

fn fft(values: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

fn ifft(mut buf: Vec<Complex64>) -> Vec<f64> {
    let n = buf.len();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Signed integer frequency of FFT bin `k`.
fn frequency(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Exact solution of `u_t = theta u_xx` on the periodic box `[0, L)`.
pub fn solve_homogenized(u0: &[f64], box_length: f64, theta: f64, times: &[f64]) -> Result<Vec<Vec<f64>>> {
    if !(theta > 0.0) {
        return Err(config(format!("diffusion coefficient {theta} is not positive")));
    }
    let hat = fft(u0);
    let n = u0.len();
    Ok(times
        .iter()
        .map(|&t| {
            let scaled = hat
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let w = std::f64::consts::TAU * frequency(k, n) / box_length;
                    c * (-t * theta * w * w).exp()
                })
                .collect();
            ifft(scaled)
        })
        .collect())
}

/// Spectral translation `v(x) = u(x + shift)` on the periodic box.
pub fn spectral_shift(u: &[f64], box_length: f64, shift: f64) -> Vec<f64> {
    let n = u.len();
    let hat = fft(u);
    let shifted = hat
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let phase = std::f64::consts::TAU * frequency(k, n) * shift / box_length;
            if n % 2 == 0 && k == n / 2 {
                c * phase.cos()
            } else {
                c * Complex64::from_polar(1.0, phase)
            }
        })
        .collect();
    ifft(shifted)
}

/// Frame `b t / eps + G0(t)` followed by the rescaled solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameShift {
    pub times: Vec<f64>,
    pub drift: Vec<f64>,
    /// `G0(t) = eps int_0^{t/eps^2} (beta - b)`.
    pub fluctuation: Vec<f64>,
}

impl FrameShift {
    pub fn pure_drift(times: &[f64], b: f64, epsilon: f64) -> Self {
        Self {
            times: times.to_vec(),
            drift: times.iter().map(|t| b * t / epsilon).collect(),
            fluctuation: vec![0.0; times.len()],
        }
    }

    /// Frame built from the drift series of the same environment path.
    pub fn from_path(cell: &CellSolver, path: &EnvironmentPath, times: &[f64], epsilon: f64, b: f64) -> Result<Self> {
        let eps2 = epsilon * epsilon;
        let fast: Vec<f64> = times.iter().map(|t| t / eps2).collect();
        let top = *fast.last().ok_or_else(|| config("no sample times"))?;
        let cum = if top > 0.0 {
            let (series, _) = cell.beta_series(path, (0.0, top), &fast)?;
            series.cumulative_at(&fast)?
        } else {
            vec![vec![0.0]; fast.len()]
        };
        Ok(Self {
            times: times.to_vec(),
            drift: times.iter().map(|t| b * t / epsilon).collect(),
            fluctuation: cum.iter().zip(&fast).map(|(c, tau)| epsilon * (c[0] - b * tau)).collect(),
        })
    }

    pub fn total(&self) -> Vec<f64> {
        self.drift.iter().zip(&self.fluctuation).map(|(a, b)| a + b).collect()
    }
}

/// Moving-frame error trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub times: Vec<f64>,
    pub error: Vec<f64>,
    pub shift: Vec<f64>,
    pub sup: f64,
}

/// `|| u_eps(. + shift(t), t) - u0(., t) ||_{L2(box)}` at every sample time.
pub fn moving_frame_error(
    u_eps: &EpsSolution,
    u_hom: &[Vec<f64>],
    frame: &FrameShift,
    box_length: f64,
) -> Result<FrameError> {
    if u_eps.fields.len() != u_hom.len() || frame.times.len() != u_hom.len() {
        return Err(dimension("solutions and frame are not sampled at the same times"));
    }
    let shift = frame.total();
    let mut error = Vec::with_capacity(shift.len());
    for ((u, h), &s) in u_eps.fields.iter().zip(u_hom).zip(&shift) {
        if s.abs() > 0.5 * box_length {
            return Err(Error::Domain(format!("frame shift {s} exceeds half the box")));
        }
        let dx = box_length / u.len() as f64;
        let moved = spectral_shift(u, box_length, s);
        error.push((moved.iter().zip(h).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * dx).sqrt());
    }
    let sup = error.iter().copied().fold(0.0, f64::max);
    Ok(FrameError {
        times: frame.times.clone(),
        error,
        shift,
        sup,
    })
}

/// `int p_inf(x/eps, t/eps^2) u^2 dx` at the sample times.
pub fn weighted_energy(cell: &CellSolver, path: &EnvironmentPath, u_eps: &EpsSolution, box_length: f64) -> Result<Vec<f64>> {
    let eps2 = u_eps.epsilon * u_eps.epsilon;
    let fast: Vec<f64> = u_eps.times.iter().map(|t| t / eps2).collect();
    let top = *fast.last().unwrap();
    let p = cell.compute_p_inf(path, (0.0, top), &fast)?;
    let traj = p.sample(cell.grid(), &fast)?;
    let n = cell.grid().len();
    Ok(u_eps
        .fields
        .iter()
        .zip(&traj.fields)
        .map(|(u, pf)| {
            let dx = box_length / u.len() as f64;
            u.iter()
                .enumerate()
                .map(|(i, v)| pf.values[i % n] * v * v)
                .sum::<f64>()
                * dx
        })
        .collect())
}

/// One rescaled run compared against the homogenized solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsRun {
    pub epsilon: f64,
    pub seed_offset: u64,
    pub frame: FrameShift,
    pub error: FrameError,
    pub boundary_peak: f64,
    /// Largest relative increase of the weighted energy between samples.
    pub energy_increase: Option<f64>,
}

/// Solves one rescaled problem and measures its moving-frame error against
/// the homogenized solution with coefficients `b` and `theta`.
pub fn run_eps_case(
    problem: &EpsProblem,
    cell: &CellSolver,
    effective: &EffectiveModel,
    monitor_energy: bool,
) -> Result<EpsRun> {
    problem.validate()?;
    if cell.cfg.n != problem.points_per_cell || cell.dim() != 1 {
        return Err(config(format!(
            "cell grid n = {} must equal points_per_cell = {}",
            cell.cfg.n, problem.points_per_cell
        )));
    }
    if effective.b.len() != 1 {
        return Err(dimension("effective model is not one-dimensional"));
    }
    let path = problem.sample_path(cell.cfg.relax_time)?;
    let dynamics = problem.dynamics()?;
    let sol = solve_eps(problem, &dynamics, &path)?;
    let times = sol.times.clone();
    let b = effective.b[0];
    let frame = if problem.environment.model == EnvironmentModel::ConstantInTime {
        FrameShift::pure_drift(&times, b, problem.epsilon)
    } else {
        FrameShift::from_path(cell, &path, &times, problem.epsilon, b)?
    };
    let hom = solve_homogenized(&problem.initial_values(), problem.box_length, effective.theta[0], &times)?;
    let error = moving_frame_error(&sol, &hom, &frame, problem.box_length)?;
    let energy_increase = if monitor_energy {
        let e = weighted_energy(cell, &path, &sol, problem.box_length)?;
        Some(e.windows(2).map(|w| (w[1] - w[0]) / w[0]).fold(f64::NEG_INFINITY, f64::max))
    } else {
        None
    };
    Ok(EpsRun {
        epsilon: problem.epsilon,
        seed_offset: problem.seed_offset,
        frame,
        error,
        boundary_peak: sol.boundary_peak,
        energy_increase,
    })
}

/// Sweep over decreasing `epsilons` with one fixed environment seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsSweep {
    pub runs: Vec<EpsRun>,
    pub sup_errors: Vec<f64>,
    pub strictly_decreasing: bool,
    /// `sup_error(eps_k) / sup_error(eps_{k-1})`.
    pub ratios: Vec<f64>,
}

pub fn eps_sweep(
    template: &EpsProblem,
    epsilons: &[f64],
    cell: &CellSolver,
    effective: &EffectiveModel,
) -> Result<EpsSweep> {
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(config("epsilon list must be strictly decreasing"));
    }
    use rayon::prelude::*;
    let runs: Vec<EpsRun> = epsilons
        .par_iter()
        .map(|&eps| {
            let problem = EpsProblem {
                epsilon: eps,
                ..template.clone()
            };
            run_eps_case(&problem, cell, effective, false)
        })
        .collect::<Result<_>>()?;
    let sup_errors: Vec<f64> = runs.iter().map(|r| r.error.sup).collect();
    Ok(EpsSweep {
        strictly_decreasing: sup_errors.windows(2).all(|w| w[1] < w[0]),
        ratios: sup_errors.windows(2).map(|w| w[1] / w[0]).collect(),
        sup_errors,
        runs,
    })
}

impl EpsSweep {
    /// CSV with columns `epsilon,seed,t,error,shift,delta`; `delta` is the
    /// fluctuation part `G0` of the shift.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epsilon,seed,t,error,shift,delta")?;
        for r in &self.runs {
            for k in 0..r.error.times.len() {
                writeln!(
                    out,
                    "{},{},{},{:.12e},{:.12e},{:.12e}",
                    r.epsilon, r.seed_offset, r.error.times[k], r.error.error[k], r.error.shift[k], r.frame.fluctuation[k]
                )?;
            }
        }
        Ok(())
    }
}

/// Outcome of the time-change verification in the product model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductCheck {
    pub epsilon: f64,
    pub times: Vec<f64>,
    /// `s(t) = int_0^t lambda(r / eps^2) dr`.
    pub time_change: Vec<f64>,
    /// `s(t) - m t` with `m` the stationary mean of `lambda`.
    pub delta: Vec<f64>,
    pub mismatch: Vec<f64>,
    pub max_mismatch: f64,
}

/// Compares the rescaled solution with the autonomous solution evaluated at
/// the time change `s(t)`.
pub fn product_case_check(problem: &EpsProblem) -> Result<ProductCheck> {
    let spec = &problem.environment;
    if spec.model != EnvironmentModel::ProductScalar {
        return Err(config("product case check needs the product_scalar model"));
    }
    problem.validate()?;
    let path = problem.sample_path(0.0)?;
    let dynamics = problem.dynamics()?;
    let sol = solve_eps(problem, &dynamics, &path)?;
    let lambda = lambda_of(&path);
    // autonomous generator of mu0 alone
    let grid = problem.grid()?;
    let kernel = DispersalKernel::new(problem.kernel.clone(), 1)?;
    let moments = periodize(&kernel, grid, 1e-12)?;
    let coords: Vec<f64> = (0..grid.len()).map(|i| grid.coords(i)[0]).collect();
    let base = Generator::from_fn(&moments, |i, j| spec.profiles[0].eval(&[coords[i]], &[coords[j]]));
    // same step layout as the rescaled run, mapped through s
    let eps2 = problem.epsilon * problem.epsilon;
    let fast: Vec<f64> = sol.times.iter().map(|t| t / eps2).collect();
    let cfg = IntegratorConfig::from_fraction(spec.alpha_hi, problem.dt_fraction)?;
    let steps = StepGrid::build(&path, 0.0, problem.fast_horizon(), &fast, cfg.dt, 1)?;
    let s_nodes: Vec<f64> = steps.nodes.iter().map(|&tau| lambda.integral(0.0, tau)).collect();
    let record: Vec<usize> = fast.iter().map(|&t| steps.find(t).unwrap()).collect();
    let reference = evolve_on_nodes(&base, &problem.initial_values(), &s_nodes, &record);
    let mismatch: Vec<f64> = sol
        .fields
        .iter()
        .zip(&reference)
        .map(|(u, r)| {
            let num: f64 = u.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum();
            let den: f64 = r.iter().map(|b| b * b).sum();
            (num / den).sqrt()
        })
        .collect();
    let m = spec.lambda_mean();
    let time_change: Vec<f64> = record.iter().map(|&i| eps2 * s_nodes[i]).collect();
    Ok(ProductCheck {
        epsilon: problem.epsilon,
        delta: time_change.iter().zip(&sol.times).map(|(s, t)| s - m * t).collect(),
        max_mismatch: mismatch.iter().copied().fold(0.0, f64::max),
        times: sol.times,
        time_change,
        mismatch,
    })
}

/// Root mean square over `seeds` of `sup_t |s(t) - m t|` on `[0, t_max]` for
/// each `eps`. Needs only the scalar factor of the product model.
pub fn time_change_deviation(spec: &EnvironmentSpec, epsilons: &[f64], t_max: f64, samples: usize, seeds: u64) -> Result<Vec<f64>> {
    if spec.model != EnvironmentModel::ProductScalar {
        return Err(config("time change needs the product_scalar model"));
    }
    let m = spec.lambda_mean();
    epsilons
        .iter()
        .map(|&eps| {
            let eps2 = eps * eps;
            let mut acc = 0.0;
            for seed in 0..seeds {
                let lam = crate::env::sample_lambda(spec, (0.0, t_max / eps2 + 1.0), seed)?;
                let sup = (0..=samples)
                    .map(|k| {
                        let t = t_max * k as f64 / samples as f64;
                        (eps2 * lam.integral(0.0, t / eps2) - m * t).abs()
                    })
                    .fold(0.0, f64::max);
                acc += sup * sup;
            }
            Ok((acc / seeds as f64).sqrt())
        })
        .collect()
}

/// Effective model of the rescaled problem's cell, taking `b` and `theta`
/// from a cell solver whose grid matches `points_per_cell`.
pub fn cell_for(problem: &EpsProblem, cfg: crate::cell::CellConfig) -> Result<CellSolver> {
    let kernel = DispersalKernel::new(problem.kernel.clone(), 1)?;
    CellSolver::new(
        &kernel,
        &problem.environment,
        crate::cell::CellConfig {
            n: problem.points_per_cell,
            ..cfg
        },
    )
}

/// Homogenized profile helper for tests and examples: `u0` sampled on the box.
pub fn box_field(problem: &EpsProblem) -> Result<TorusField> {
    TorusField::from_values(problem.grid()?, 1, problem.initial_values())
}

/// Trajectory of the rescaled solution as torus fields.
pub fn as_trajectory(problem: &EpsProblem, sol: &EpsSolution) -> Result<Trajectory> {
    let g = problem.grid()?;
    Ok(Trajectory {
        times: sol.times.clone(),
        fields: sol
            .fields
            .iter()
            .map(|f| TorusField::from_values(g, 1, f.clone()))
            .collect::<Result<_>>()?,
    })
}
