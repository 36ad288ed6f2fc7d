//! Stationary cell problem: the adjoint density `p_inf`, the drift process
//! `beta`, the correctors `kappa1`, `kappa2` and the effective coefficients.
//!
//! Every stationary object is obtained by relaxation. For a requested output
//! window `[s0, s1]` and relaxation time `T` the time axis is laid out as
//!
//! ```text
//! s0-4T      s0-3T      s0-2T      s0-T       s0 .. s1     s1+T      s1+2T
//!   | p_inf stored from here                      |          | terminal  | doubling terminal
//!   | kappa1 doubling | kappa1 main | kappa2 doubling | kappa2 main ...
//! ```
//!
//! All runs share one [`StepGrid`] whose intervals hold a multiple of eight
//! steps, so global node indices divisible by 2 and 4 form the coarser grids
//! used by `kappa1` and `kappa2` (the midpoints of their RK4 steps are nodes of
//! the next finer level).

use std::cell::Cell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{sample_environment, EnvironmentPath, EnvironmentSpec};
use crate::error::{config, dimension, Error, Result};
use crate::evolution::{integrate_adjoint, integrate_forward, Dynamics, IntegratorConfig, StepGrid};
use crate::grid::{TorusField, TorusGrid, Trajectory};
use crate::kernels::{periodize, DispersalKernel, KernelMatrix, PeriodizedMoments};
use crate::stats::{self, ExpFit};

/// Numerical parameters of the cell solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CellConfig {
    /// Grid points per unit cell and dimension.
    pub n: usize,
    pub tail_tolerance: f64,
    /// Finest step as a fraction of a quarter of the stability cap.
    pub dt_fraction: f64,
    pub relax_time: f64,
    /// Doubling tolerance for the relaxed fields.
    pub tol: f64,
    /// Bound on the solvability integrals of the corrector forcings.
    pub compat_tol: f64,
    /// Output window length per relaxation chunk on long horizons.
    pub chunk_length: f64,
    /// Bin width of the drift series used by the covariance estimator.
    pub bin_width: f64,
    /// Relative weight of the neglected autocovariance tail.
    pub cov_tail: f64,
}

impl Default for CellConfig {
    fn default() -> Self {
        Self {
            n: 32,
            tail_tolerance: 1e-12,
            dt_fraction: 1.0,
            relax_time: 40.0,
            tol: 1e-8,
            compat_tol: 1e-10,
            chunk_length: 400.0,
            bin_width: 0.5,
            cov_tail: 1e-3,
        }
    }
}

impl CellConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tail_tolerance", self.tail_tolerance),
            ("dt_fraction", self.dt_fraction),
            ("relax_time", self.relax_time),
            ("tol", self.tol),
            ("compat_tol", self.compat_tol),
            ("chunk_length", self.chunk_length),
            ("bin_width", self.bin_width),
            ("cov_tail", self.cov_tail),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(config(format!("cell.{name} must be positive, got {v}")));
            }
        }
        if self.dt_fraction > 1.0 {
            return Err(config("cell.dt_fraction must not exceed 1"));
        }
        if self.n < 4 {
            return Err(config("cell.n must be at least 4"));
        }
        Ok(())
    }
}

/// First and second moment weights of one environment state.
#[derive(Clone, Debug)]
struct StateData {
    /// `m[i][xi] = sum_eta h^d M1^i(xi - eta) mu(xi, eta)`.
    m: Vec<Vec<f64>>,
    /// `w2[i*d+j][xi] = sum_eta h^d M2^{ij}(xi - eta) mu(xi, eta) / 2`.
    w2: Vec<Vec<f64>>,
    /// `b[i][xi, eta] = h^d M1^i(xi - eta) mu(xi, eta)`.
    b: Vec<KernelMatrix>,
}

/// Shared operators of the cell problem for one kernel and environment spec.
#[derive(Clone, Debug)]
pub struct CellSolver {
    pub kernel: DispersalKernel,
    pub spec: EnvironmentSpec,
    pub cfg: CellConfig,
    pub moments: PeriodizedMoments,
    pub dynamics: Dynamics,
    states: Vec<StateData>,
    step: f64,
}

/// Node bookkeeping for one output window.
#[derive(Clone, Debug)]
struct Layout {
    grid: StepGrid,
    s0: f64,
    s1: f64,
    p0: usize,
    k1_start: usize,
    k1_out: usize,
    k2_start: usize,
    i_s0: usize,
    i_s1: usize,
    i_check: usize,
    i_term: usize,
    i_top: usize,
}

/// Relaxation diagnostics of a backward adjoint run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationReport {
    /// Sup over the checked window of the L2 change under window doubling.
    pub doubling: f64,
    /// Exponential fit of that change against the distance to the terminal time.
    pub decay: Option<ExpFit>,
    /// Range of `p` over the stored window.
    pub pi1: f64,
    pub pi2: f64,
    /// Largest deviation of the mass from 1.
    pub mass_error: f64,
}

/// Relaxed adjoint density on a window, stored at every fine node.
#[derive(Clone, Debug)]
pub struct PInf {
    layout: Layout,
    len: usize,
    values: Vec<f64>,
    pub report: RelaxationReport,
}

impl PInf {
    fn at(&self, node: usize) -> &[f64] {
        let k = node - self.layout.p0;
        &self.values[k * self.len..(k + 1) * self.len]
    }

    pub fn window(&self) -> (f64, f64) {
        (self.layout.s0, self.layout.s1)
    }

    /// `p_inf` at the given times, which must be nodes of the window.
    pub fn sample(&self, grid: TorusGrid, times: &[f64]) -> Result<Trajectory> {
        let mut out = Trajectory {
            times: Vec::new(),
            fields: Vec::new(),
        };
        for &t in times {
            let i = self.node_of(t)?;
            out.times.push(t);
            out.fields.push(TorusField::from_values(grid, 1, self.at(i).to_vec())?);
        }
        Ok(out)
    }

    fn node_of(&self, t: f64) -> Result<usize> {
        let l = &self.layout;
        match l.grid.find(t) {
            Some(i) if i >= l.i_s0 && i <= l.i_s1 => Ok(i),
            _ => Err(Error::Domain(format!(
                "time {t} is not a sample node of the window [{}, {}]",
                l.s0, l.s1
            ))),
        }
    }
}

/// Relaxed first corrector, stored at every second node from `s0 - 2T`.
#[derive(Clone, Debug)]
pub struct Kappa1 {
    start: usize,
    stride_len: usize,
    values: Vec<f64>,
    pub doubling: f64,
    pub residual: f64,
    pub compatibility: f64,
}

impl Kappa1 {
    fn at(&self, node: usize) -> &[f64] {
        let k = (node - self.start) / 2;
        &self.values[k * self.stride_len..(k + 1) * self.stride_len]
    }

    /// Adds the constant vector `c` to every component.
    pub fn shifted(&self, c: &[f64]) -> Self {
        let mut out = self.clone();
        let len = self.stride_len / c.len();
        for chunk in out.values.chunks_mut(self.stride_len) {
            for (i, ci) in c.iter().enumerate() {
                chunk[i * len..(i + 1) * len].iter_mut().for_each(|v| *v += ci);
            }
        }
        out
    }
}

/// Outcome of the second corrector run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kappa2Report {
    pub residual: f64,
    pub doubling: f64,
    pub compatibility: f64,
}

/// Piecewise-smooth time series: one piece per constant environment state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseSeries {
    pub ncomp: usize,
    pub pieces: Vec<Piece>,
}

/// Uniformly sampled values of a series on one state interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub state: usize,
    pub times: Vec<f64>,
    /// `ncomp` values per sample.
    pub values: Vec<f64>,
}

impl PiecewiseSeries {
    pub fn new(ncomp: usize) -> Self {
        Self {
            ncomp,
            pieces: Vec::new(),
        }
    }

    pub fn span(&self) -> (f64, f64) {
        match (self.pieces.first(), self.pieces.last()) {
            (Some(a), Some(b)) => (a.times[0], *b.times.last().unwrap()),
            _ => (0.0, 0.0),
        }
    }

    /// All samples in time order (both one-sided values at state changes).
    pub fn samples(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        self.pieces.iter().flat_map(move |p| {
            p.times
                .iter()
                .enumerate()
                .map(move |(k, &t)| (t, &p.values[k * self.ncomp..(k + 1) * self.ncomp]))
        })
    }

    /// Cumulative integrals at the starts of pieces and at even samples.
    fn cumulative(&self) -> Vec<(f64, Vec<f64>)> {
        let nc = self.ncomp;
        let mut acc = vec![0.0; nc];
        let mut out = Vec::new();
        for p in &self.pieces {
            let v = |k: usize, c: usize| p.values[k * nc + c];
            out.push((p.times[0], acc.clone()));
            let n = p.times.len();
            let mut k = 0;
            while k + 2 < n {
                let h = 0.5 * (p.times[k + 2] - p.times[k]);
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += h / 3.0 * (v(k, c) + 4.0 * v(k + 1, c) + v(k + 2, c));
                }
                k += 2;
                out.push((p.times[k], acc.clone()));
            }
            if k + 1 < n {
                let h = p.times[k + 1] - p.times[k];
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += 0.5 * h * (v(k, c) + v(k + 1, c));
                }
                out.push((p.times[k + 1], acc.clone()));
            }
        }
        out
    }

    pub fn integral(&self) -> Vec<f64> {
        self.cumulative()
            .pop()
            .map(|(_, v)| v)
            .unwrap_or_else(|| vec![0.0; self.ncomp])
    }

    pub fn mean(&self) -> Vec<f64> {
        let (a, b) = self.span();
        self.integral().into_iter().map(|v| v / (b - a)).collect()
    }

    /// Cumulative integral from the start of the series to each of `times`
    /// (ascending, and each a piece boundary or an even sample).
    pub fn cumulative_at(&self, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        let cum = self.cumulative();
        let mut out = Vec::with_capacity(times.len());
        let mut k = 0;
        for &t in times {
            let tol = 1e-9 * (1.0 + t.abs());
            while k < cum.len() && cum[k].0 < t - tol {
                k += 1;
            }
            if k == cum.len() || (cum[k].0 - t).abs() > tol {
                return Err(Error::Domain(format!("time {t} is not a quadrature node")));
            }
            out.push(cum[k].1.clone());
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.pieces
            .iter()
            .flat_map(|p| p.values.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Everything computed on one output window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSolution {
    pub window: (f64, f64),
    pub relax_time: f64,
    pub p_inf: Trajectory,
    pub kappa1: Trajectory,
    pub beta: PiecewiseSeries,
    /// Row-major `d x d` matrices.
    pub theta_inst: PiecewiseSeries,
    pub diagnostics: CellDiagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellDiagnostics {
    pub relaxation: RelaxationReport,
    pub kappa1_doubling: f64,
    pub kappa1_residual: f64,
    pub kappa1_compatibility: f64,
    pub kappa2: Option<Kappa2Report>,
    /// Smallest eigenvalue of the symmetric part of `theta_inst` over all samples.
    pub theta_min_eigenvalue: f64,
}

/// Point estimate with a standard error per entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: Vec<f64>,
    pub std_error: Vec<f64>,
}

/// Long-run covariance of the drift and the statistics behind it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaSq {
    pub value: Vec<f64>,
    pub std_error: Vec<f64>,
    pub lag_cutoff: f64,
    pub decay: Option<ExpFit>,
}

/// Time-and-replica average of `theta_inst`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    /// Symmetrized average.
    pub value: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Average before symmetrization.
    pub raw: Vec<f64>,
    pub min_eigenvalue: f64,
    pub min_inst_eigenvalue: f64,
    pub max_kappa2_residual: Option<f64>,
}

/// Drift statistics of several replicas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftStatistics {
    pub b: Estimate,
    pub sigma_sq: SigmaSq,
}

/// Provenance of an effective model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub dim: usize,
    pub n: usize,
    pub relax_time: f64,
    pub fine_step: f64,
    pub drift_horizon: f64,
    pub theta_horizon: f64,
    pub replicas: usize,
    pub bin_width: f64,
    pub tail_tolerance: f64,
}

/// Constant coefficients of the homogenized problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveModel {
    pub b: Vec<f64>,
    pub b_std_error: Vec<f64>,
    pub theta: Vec<f64>,
    pub theta_std_error: Vec<f64>,
    pub theta_raw: Vec<f64>,
    pub sigma_sq: Vec<f64>,
    pub sigma_sq_std_error: Vec<f64>,
    pub lag_cutoff: f64,
    pub theta_min_eigenvalue: f64,
    pub theta_inst_min_eigenvalue: f64,
    pub provenance: Provenance,
}

/// Horizons and replica count for [`CellSolver::effective_model`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveOptions {
    pub drift_horizon: f64,
    pub theta_horizon: f64,
    pub replicas: usize,
}

impl CellSolver {
    pub fn new(kernel: &DispersalKernel, spec: &EnvironmentSpec, cfg: CellConfig) -> Result<Self> {
        spec.validate()?;
        cfg.validate()?;
        if kernel.dim != spec.dim {
            return Err(dimension("kernel and environment dimensions differ"));
        }
        let grid = TorusGrid::unit(cfg.n, spec.dim)?;
        let moments = periodize(kernel, grid, cfg.tail_tolerance)?;
        let dynamics = Dynamics::new(&moments, spec)?;
        let offsets = moments.active_offsets();
        let hd = grid.cell_volume();
        let d = grid.dim;
        let coords: Vec<[f64; 2]> = (0..grid.len()).map(|i| grid.coords(i)).collect();
        let states = (0..spec.state_count())
            .map(|k| {
                let mu = |i: usize, j: usize| spec.state_mu(k, &coords[i][..d], &coords[j][..d]);
                let b: Vec<KernelMatrix> = (0..d)
                    .map(|c| KernelMatrix::assemble(&grid, &offsets, |o| moments.m1[c][o] * hd, mu))
                    .collect();
                let m = b.iter().map(KernelMatrix::row_sums).collect();
                let w2 = (0..d * d)
                    .map(|ij| {
                        KernelMatrix::assemble(&grid, &offsets, |o| 0.5 * moments.m2[ij][o] * hd, mu)
                            .row_sums()
                    })
                    .collect();
                StateData { m, w2, b }
            })
            .collect();
        let step = cfg.dt_fraction * IntegratorConfig::stability_cap(spec.alpha_hi) / 4.0;
        Ok(Self {
            kernel: kernel.clone(),
            spec: spec.clone(),
            cfg,
            moments,
            dynamics,
            states,
            step,
        })
    }

    pub fn grid(&self) -> TorusGrid {
        self.moments.grid
    }

    pub fn dim(&self) -> usize {
        self.moments.grid.dim
    }

    /// Finest integration step.
    pub fn fine_step(&self) -> f64 {
        self.step
    }

    /// Horizon a path needs for an output window `[s0, s1]`.
    pub fn required_horizon(&self, s0: f64, s1: f64) -> (f64, f64) {
        let t = self.cfg.relax_time;
        (s0 - 4.0 * t, s1 + 2.0 * t)
    }

    /// Samples a path long enough for the output window `[s0, s1]`.
    pub fn sample_path(&self, s0: f64, s1: f64, stream: u64) -> Result<EnvironmentPath> {
        let (a, b) = self.required_horizon(s0, s1);
        sample_environment(&self.spec, (a - 1.0, b + 1.0), stream)
    }

    fn layout(&self, path: &EnvironmentPath, s0: f64, s1: f64, extra: &[f64]) -> Result<Layout> {
        if !(s1 > s0) {
            return Err(config(format!("empty output window [{s0}, {s1}]")));
        }
        let t = self.cfg.relax_time;
        let (a, b) = self.required_horizon(s0, s1);
        if path.t0 > a + 1e-9 || path.t1 < b - 1e-9 {
            return Err(Error::Domain(format!(
                "path horizon [{}, {}] does not cover [{a}, {b}]",
                path.t0, path.t1
            )));
        }
        let check = (s1 - t).max(s0);
        let mut breaks = vec![a + t, a + 2.0 * t, s0 - t, s0, s1, check, s1 + t];
        breaks.extend(extra.iter().copied().filter(|&x| x > s0 && x < s1));
        let grid = StepGrid::build(path, a, b, &breaks, self.step, 8)?;
        let node = |x: f64| {
            grid.find(x)
                .ok_or_else(|| Error::Inconsistency(format!("time {x} is not a node")))
        };
        Ok(Layout {
            p0: 0,
            k1_start: node(a + t)?,
            k1_out: node(a + 2.0 * t)?,
            k2_start: node(s0 - t)?,
            i_s0: node(s0)?,
            i_s1: node(s1)?,
            i_check: node(check)?,
            i_term: node(s1 + t)?,
            i_top: grid.len() - 1,
            grid,
            s0,
            s1,
        })
    }

    fn beta_of(&self, state: usize, p: &[f64]) -> Vec<f64> {
        let g = self.grid();
        self.states[state].m.iter().map(|m| g.inner(m, p)).collect()
    }

    /// Relaxed adjoint density `p_inf` on `[s0, s1]`.
    ///
    /// `p` is integrated backward from the terminal value 1 at `s1 + T`; a
    /// second run from `s1 + 2T` certifies convergence.
    pub fn compute_p_inf(&self, path: &EnvironmentPath, window: (f64, f64), record: &[f64]) -> Result<PInf> {
        let layout = self.layout(path, window.0, window.1, record)?;
        let g = self.grid();
        let len = g.len();
        let l = &layout;
        // doubling run, kept on [check, s1 + T]
        let mut p = vec![1.0; len];
        let keep = l.i_term - l.i_check + 1;
        let mut reference = vec![0.0; keep * len];
        integrate_adjoint(&l.grid, &self.dynamics, &mut p, l.i_top, l.i_check, |i, v| {
            if i <= l.i_term {
                let k = i - l.i_check;
                reference[k * len..(k + 1) * len].copy_from_slice(v);
            }
        })?;
        let stored = l.i_s1 - l.p0 + 1;
        let mut values = vec![0.0; stored * len];
        let mut diffs = vec![0.0; keep];
        let mut mass_error: f64 = 0.0;
        let mut pi = (f64::INFINITY, f64::NEG_INFINITY);
        let mut p = vec![1.0; len];
        integrate_adjoint(&l.grid, &self.dynamics, &mut p, l.i_term, l.p0, |i, v| {
            if i >= l.i_check {
                let k = i - l.i_check;
                let r = &reference[k * len..(k + 1) * len];
                diffs[k] = g.l2_norm(&v.iter().zip(r).map(|(a, b)| a - b).collect::<Vec<_>>());
            }
            if i <= l.i_s1 {
                let k = i - l.p0;
                values[k * len..(k + 1) * len].copy_from_slice(v);
                mass_error = mass_error.max((g.integrate(v) - 1.0).abs());
                for &x in v {
                    pi.0 = pi.0.min(x);
                    pi.1 = pi.1.max(x);
                }
            }
        })?;
        for chunk in values.chunks_mut(len) {
            let mass = g.integrate(chunk);
            chunk.iter_mut().for_each(|x| *x /= mass);
        }
        let doubling = diffs[..=l.i_s1 - l.i_check].iter().copied().fold(0.0, f64::max);
        let decay = self.fit_decay(l, &diffs);
        let report = RelaxationReport {
            doubling,
            decay,
            pi1: pi.0,
            pi2: pi.1,
            mass_error,
        };
        self.check_doubling("p_inf", doubling, report.decay.as_ref())?;
        Ok(PInf {
            layout,
            len,
            values,
            report,
        })
    }

    fn fit_decay(&self, l: &Layout, diffs: &[f64]) -> Option<ExpFit> {
        let term = l.grid.nodes[l.i_term];
        let floor = 1e-13;
        let (mut t, mut y) = (Vec::new(), Vec::new());
        for (k, &dv) in diffs.iter().enumerate() {
            let tau = term - l.grid.nodes[l.i_check + k];
            if tau >= 1.0 && dv > floor {
                t.push(tau);
                y.push(dv);
            }
        }
        stats::fit_exponential_decay(&t, &y).ok()
    }

    fn check_doubling(&self, what: &str, change: f64, decay: Option<&ExpFit>) -> Result<()> {
        if change <= self.cfg.tol {
            return Ok(());
        }
        let gamma = decay.map_or(f64::NAN, |f| f.rate);
        let extra = if gamma > 0.0 {
            (change / self.cfg.tol).ln() / gamma
        } else {
            self.cfg.relax_time
        };
        Err(Error::Relaxation {
            message: format!(
                "{what} changed by {change:.3e} under window doubling (tolerance {:.1e})",
                self.cfg.tol
            ),
            gamma,
            suggested_relax: 1.25 * (self.cfg.relax_time + extra),
        })
    }

    /// `beta(s) = sum_xi h^d m(xi, s) p_inf(xi, s)` on the output window.
    pub fn compute_beta(&self, p: &PInf) -> PiecewiseSeries {
        let l = &p.layout;
        self.series(l, l.i_s0, l.i_s1, 4, self.dim(), |node, state| self.beta_of(state, p.at(node)))
    }

    fn series(
        &self,
        l: &Layout,
        from: usize,
        to: usize,
        stride: usize,
        ncomp: usize,
        mut eval: impl FnMut(usize, usize) -> Vec<f64>,
    ) -> PiecewiseSeries {
        let mut out = PiecewiseSeries::new(ncomp);
        for iv in &l.grid.intervals {
            let a = iv.first.max(from);
            let b = iv.last.min(to);
            if a >= b {
                continue;
            }
            let mut piece = Piece {
                state: iv.state,
                times: Vec::new(),
                values: Vec::new(),
            };
            let mut i = a;
            while i <= b {
                piece.times.push(l.grid.nodes[i]);
                piece.values.extend(eval(i, iv.state));
                i += stride;
            }
            out.pieces.push(piece);
        }
        out
    }

    /// Relaxed first corrector: the stationary solution of
    /// `d kappa/ds = A(s) kappa - m(s) + beta(s)`, with zero grid mean at `s0`.
    pub fn compute_kappa1(&self, p: &PInf) -> Result<Kappa1> {
        let l = &p.layout;
        let g = self.grid();
        let (len, d) = (g.len(), g.dim);
        let compat = Cell::new(0.0f64);
        let forcing = |node: usize, state: usize, out: &mut [f64]| {
            let pv = p.at(node);
            let beta = self.beta_of(state, pv);
            let m = &self.states[state].m;
            for c in 0..d {
                let f = &mut out[c * len..(c + 1) * len];
                for x in 0..len {
                    f[x] = beta[c] - m[c][x];
                }
                compat.set(compat.get().max(g.inner(f, pv).abs()));
            }
        };
        let width = d * len;
        let mut k = vec![0.0; width];
        integrate_forward(&l.grid, &self.dynamics, &mut k, d, l.p0, l.k1_out, 2, Some(&forcing), |_, _| {})?;
        let early = k;
        let slots = (l.i_s1 - l.k1_out) / 2 + 1;
        let mut values = vec![0.0; slots * width];
        let mut k = vec![0.0; width];
        integrate_forward(&l.grid, &self.dynamics, &mut k, d, l.k1_start, l.i_s1, 2, Some(&forcing), |i, v| {
            if i >= l.k1_out {
                let s = (i - l.k1_out) / 2;
                values[s * width..(s + 1) * width].copy_from_slice(v);
            }
        })?;
        let doubling = gauge_distance(g, d, &values[..width], &early);
        let s0 = (l.i_s0 - l.k1_out) / 2;
        let shift: Vec<f64> = (0..d)
            .map(|c| -g.integrate(&values[s0 * width + c * len..s0 * width + (c + 1) * len]))
            .collect();
        let mut kappa = Kappa1 {
            start: l.k1_out,
            stride_len: width,
            values,
            doubling,
            residual: 0.0,
            compatibility: compat.get(),
        };
        kappa = kappa.shifted(&shift);
        if kappa.compatibility >= self.cfg.compat_tol {
            return Err(Error::Inconsistency(format!(
                "first corrector forcing violates solvability: |(f, p_inf)| = {:.3e}",
                kappa.compatibility
            )));
        }
        self.check_doubling("kappa1", doubling, p.report.decay.as_ref())?;
        kappa.residual = self.simpson_residual(l, l.i_s0, l.i_s1, 2, d, |i| kappa.at(i), &forcing);
        Ok(kappa)
    }

    /// Sup over Simpson triples of `|(k(t+2H) - k(t))/2H - avg(A k + f)|` in L2.
    #[allow(clippy::too_many_arguments)]
    fn simpson_residual<'a>(
        &self,
        l: &Layout,
        from: usize,
        to: usize,
        stride: usize,
        ncomp: usize,
        field: impl Fn(usize) -> &'a [f64],
        forcing: &dyn Fn(usize, usize, &mut [f64]),
    ) -> f64 {
        let g = self.grid();
        let len = g.len();
        let mut worst: f64 = 0.0;
        let mut f = [vec![0.0; ncomp * len], vec![0.0; ncomp * len], vec![0.0; ncomp * len]];
        let mut av = vec![0.0; len];
        let mut j = from;
        while j + 2 * stride <= to {
            let iv = *l.grid.interval_at(j);
            if j + 2 * stride > iv.last {
                j = iv.last;
                continue;
            }
            let gen = &self.dynamics.generators[iv.state];
            for (q, fq) in f.iter_mut().enumerate() {
                let node = j + q * stride;
                forcing(node, iv.state, fq);
                let k = field(node);
                for c in 0..ncomp {
                    gen.apply(&k[c * len..(c + 1) * len], &mut av);
                    fq[c * len..(c + 1) * len].iter_mut().zip(&av).for_each(|(a, b)| *a += b);
                }
            }
            let h = l.grid.nodes[j + stride] - l.grid.nodes[j];
            let (k0, k2) = (field(j), field(j + 2 * stride));
            for c in 0..ncomp {
                let r: Vec<f64> = (c * len..(c + 1) * len)
                    .map(|x| (k2[x] - k0[x]) / (2.0 * h) - (f[0][x] + 4.0 * f[1][x] + f[2][x]) / 6.0)
                    .collect();
                worst = worst.max(g.l2_norm(&r));
            }
            j += 2 * stride;
        }
        worst
    }

    /// `g~^{ij} = kappa1^i beta^j + w2^{ij} - B^i kappa1^j`, row-major in `(i, j)`.
    fn g_tilde(&self, state: usize, k1: &[f64], beta: &[f64], out: &mut [f64]) {
        let g = self.grid();
        let (len, d) = (g.len(), g.dim);
        let sd = &self.states[state];
        let mut bk = vec![0.0; len];
        for i in 0..d {
            for j in 0..d {
                sd.b[i].apply(&k1[j * len..(j + 1) * len], &mut bk);
                let o = &mut out[(i * d + j) * len..(i * d + j + 1) * len];
                for x in 0..len {
                    o[x] = k1[i * len + x] * beta[j] + sd.w2[i * d + j][x] - bk[x];
                }
            }
        }
    }

    fn theta_at(&self, state: usize, k1: &[f64], pv: &[f64], gt: &mut [f64]) -> Vec<f64> {
        let g = self.grid();
        let (len, d) = (g.len(), g.dim);
        let beta = self.beta_of(state, pv);
        self.g_tilde(state, k1, &beta, gt);
        (0..d * d).map(|ij| g.inner(&gt[ij * len..(ij + 1) * len], pv)).collect()
    }

    /// `Theta_omega(s) = sum_xi h^d g~(xi, s) p_inf(xi, s)` on the output window.
    pub fn compute_theta_inst(&self, k1: &Kappa1, p: &PInf) -> PiecewiseSeries {
        let l = &p.layout;
        let d = self.dim();
        let mut gt = vec![0.0; d * d * self.grid().len()];
        self.series(l, l.i_s0, l.i_s1, 4, d * d, |node, state| {
            self.theta_at(state, k1.at(node), p.at(node), &mut gt)
        })
    }

    /// Relaxes the second corrector with forcing `g~ - Theta_omega` and
    /// returns the residual of its defining equation on the window.
    pub fn compute_kappa2_residual(&self, k1: &Kappa1, p: &PInf) -> Result<Kappa2Report> {
        let l = &p.layout;
        let g = self.grid();
        let (len, d) = (g.len(), g.dim);
        let nc = d * d;
        let compat = Cell::new(0.0f64);
        let forcing = |node: usize, state: usize, out: &mut [f64]| {
            let pv = p.at(node);
            let theta = self.theta_at(state, k1.at(node), pv, out);
            for ij in 0..nc {
                let f = &mut out[ij * len..(ij + 1) * len];
                f.iter_mut().for_each(|v| *v -= theta[ij]);
                compat.set(compat.get().max(g.inner(f, pv).abs()));
            }
        };
        let mut early = vec![0.0; nc * len];
        integrate_forward(&l.grid, &self.dynamics, &mut early, nc, l.k1_out, l.i_s0, 4, Some(&forcing), |_, _| {})?;
        let mut k = vec![0.0; nc * len];
        let mut at_s0 = Vec::new();
        let mut window: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut residual: f64 = 0.0;
        let mut f = [vec![0.0; nc * len], vec![0.0; nc * len], vec![0.0; nc * len]];
        let mut av = vec![0.0; len];
        integrate_forward(&l.grid, &self.dynamics, &mut k, nc, l.k2_start, l.i_s1, 4, Some(&forcing), |i, v| {
            if i == l.i_s0 {
                at_s0 = v.to_vec();
            }
            if i < l.i_s0 {
                return;
            }
            let iv = *l.grid.interval_before(i.max(1));
            if window.first().is_some_and(|(j, _)| *j < iv.first) {
                window.clear();
            }
            window.push((i, v.to_vec()));
            if window.len() == 3 {
                let j0 = window[0].0;
                let gen = &self.dynamics.generators[iv.state];
                for (q, fq) in f.iter_mut().enumerate() {
                    forcing(window[q].0, iv.state, fq);
                    for c in 0..nc {
                        gen.apply(&window[q].1[c * len..(c + 1) * len], &mut av);
                        fq[c * len..(c + 1) * len].iter_mut().zip(&av).for_each(|(a, b)| *a += b);
                    }
                }
                let h = l.grid.nodes[j0 + 4] - l.grid.nodes[j0];
                for c in 0..nc {
                    let r: Vec<f64> = (c * len..(c + 1) * len)
                        .map(|x| {
                            (window[2].1[x] - window[0].1[x]) / (2.0 * h)
                                - (f[0][x] + 4.0 * f[1][x] + f[2][x]) / 6.0
                        })
                        .collect();
                    residual = residual.max(g.l2_norm(&r));
                }
                let last = window.pop().unwrap();
                window.clear();
                window.push(last);
            }
            if i == iv.last {
                // the next step starts a new interval
                window.clear();
                window.push((i, v.to_vec()));
            }
        })?;
        let doubling = gauge_distance(g, nc, &at_s0, &early);
        let report = Kappa2Report {
            residual,
            doubling,
            compatibility: compat.get(),
        };
        if report.compatibility >= self.cfg.compat_tol {
            return Err(Error::Inconsistency(format!(
                "second corrector forcing violates solvability: {:.3e}",
                report.compatibility
            )));
        }
        self.check_doubling("kappa2", doubling, p.report.decay.as_ref())?;
        Ok(report)
    }

    /// Runs the full chain of cell computations on `[s0, s1]`, recording
    /// fields at `record` (times inside the window).
    pub fn solve_window(
        &self,
        path: &EnvironmentPath,
        window: (f64, f64),
        record: &[f64],
        with_kappa2: bool,
    ) -> Result<CellSolution> {
        let p = self.compute_p_inf(path, window, record)?;
        let beta = self.compute_beta(&p);
        let k1 = self.compute_kappa1(&p)?;
        let theta_inst = self.compute_theta_inst(&k1, &p);
        let kappa2 = if with_kappa2 {
            Some(self.compute_kappa2_residual(&k1, &p)?)
        } else {
            None
        };
        let d = self.dim();
        let theta_min_eigenvalue = theta_inst
            .samples()
            .map(|(_, m)| stats::sym_eigenvalues(&stats::symmetrize(m, d), d)[0])
            .fold(f64::INFINITY, f64::min);
        let g = self.grid();
        let mut kappa1 = Trajectory {
            times: Vec::new(),
            fields: Vec::new(),
        };
        for &t in record {
            let i = p.node_of(t)?;
            kappa1.times.push(t);
            kappa1.fields.push(TorusField::from_values(g, d, k1.at(i).to_vec())?);
        }
        Ok(CellSolution {
            window,
            relax_time: self.cfg.relax_time,
            p_inf: p.sample(g, record)?,
            kappa1,
            beta,
            theta_inst,
            diagnostics: CellDiagnostics {
                relaxation: p.report.clone(),
                kappa1_doubling: k1.doubling,
                kappa1_residual: k1.residual,
                kappa1_compatibility: k1.compatibility,
                kappa2,
                theta_min_eigenvalue,
            },
        })
    }

    /// Drift series `beta` on `[s0, s1]` from a single backward sweep, with
    /// extra quadrature nodes at `breaks`. Suited to long horizons: only the
    /// latest stretch of `p` is held in memory.
    pub fn beta_series(
        &self,
        path: &EnvironmentPath,
        window: (f64, f64),
        breaks: &[f64],
    ) -> Result<(PiecewiseSeries, RelaxationReport)> {
        let (s0, s1) = window;
        if !(s1 > s0) {
            return Err(config(format!("empty output window [{s0}, {s1}]")));
        }
        let t = self.cfg.relax_time;
        if path.t0 > s0 + 1e-9 || path.t1 < s1 + 2.0 * t - 1e-9 {
            return Err(Error::Domain(format!(
                "path horizon [{}, {}] does not cover [{s0}, {}]",
                path.t0,
                path.t1,
                s1 + 2.0 * t
            )));
        }
        let check = (s1 - t).max(s0);
        let mut cuts = vec![s1, check, s1 + t];
        cuts.extend(breaks.iter().copied().filter(|&x| x > s0 && x < s1));
        let grid = StepGrid::build(path, s0, s1 + 2.0 * t, &cuts, self.step, 8)?;
        let node = |x: f64| grid.find(x).ok_or_else(|| Error::Inconsistency(format!("{x} is not a node")));
        let layout = Layout {
            p0: 0,
            k1_start: 0,
            k1_out: 0,
            k2_start: 0,
            i_s0: 0,
            i_s1: node(s1)?,
            i_check: node(check)?,
            i_term: node(s1 + t)?,
            i_top: grid.len() - 1,
            grid,
            s0,
            s1,
        };
        let l = &layout;
        let g = self.grid();
        let len = g.len();
        let mut p = vec![1.0; len];
        let keep = l.i_term - l.i_check + 1;
        let mut reference = vec![0.0; keep * len];
        integrate_adjoint(&l.grid, &self.dynamics, &mut p, l.i_top, l.i_check, |i, v| {
            if i <= l.i_term {
                let k = i - l.i_check;
                reference[k * len..(k + 1) * len].copy_from_slice(v);
            }
        })?;
        let nstates = self.states.len();
        let d = g.dim;
        let slots = l.i_s1 / 2 + 1;
        let mut betas = vec![0.0; slots * nstates * d];
        let mut diffs = vec![0.0; keep];
        let mut mass_error: f64 = 0.0;
        let mut pi = (f64::INFINITY, f64::NEG_INFINITY);
        let mut p = vec![1.0; len];
        integrate_adjoint(&l.grid, &self.dynamics, &mut p, l.i_term, 0, |i, v| {
            if i >= l.i_check {
                let k = i - l.i_check;
                let r = &reference[k * len..(k + 1) * len];
                diffs[k] = g.l2_norm(&v.iter().zip(r).map(|(a, b)| a - b).collect::<Vec<_>>());
            }
            if i <= l.i_s1 {
                let mass = g.integrate(v);
                mass_error = mass_error.max((mass - 1.0).abs());
                for &x in v {
                    pi.0 = pi.0.min(x);
                    pi.1 = pi.1.max(x);
                }
                if i % 2 == 0 {
                    for st in 0..nstates {
                        let b = self.beta_of(st, v);
                        let at = ((i / 2) * nstates + st) * d;
                        for c in 0..d {
                            betas[at + c] = b[c] / mass;
                        }
                    }
                }
            }
        })?;
        let doubling = diffs[..=l.i_s1 - l.i_check].iter().copied().fold(0.0, f64::max);
        let report = RelaxationReport {
            doubling,
            decay: self.fit_decay(l, &diffs),
            pi1: pi.0,
            pi2: pi.1,
            mass_error,
        };
        self.check_doubling("p_inf", doubling, report.decay.as_ref())?;
        let series = self.series(l, 0, l.i_s1, 2, d, |i, st| {
            let at = ((i / 2) * nstates + st) * d;
            betas[at..at + d].to_vec()
        });
        Ok((series, report))
    }

    fn replicas<T: Send>(&self, replicas: usize, f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
        if replicas == 0 {
            return Err(config("at least one replica is required"));
        }
        (0..replicas as u64).into_par_iter().map(|r| f(r)).collect()
    }

    /// Ergodic mean of `beta` over `[0, horizon]`, averaged over replicas.
    pub fn compute_b(&self, horizon: f64, replicas: usize) -> Result<Estimate> {
        Ok(self.drift_statistics(horizon, replicas)?.b)
    }

    /// Long-run covariance `2 int_0^inf E[beta°(0) (x) beta°(t)] dt`.
    pub fn compute_sigma_sq(&self, horizon: f64, replicas: usize) -> Result<SigmaSq> {
        Ok(self.drift_statistics(horizon, replicas)?.sigma_sq)
    }

    /// Bin averages of `beta` over `[0, horizon]` for each replica.
    pub fn drift_bins(&self, horizon: f64, replicas: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        let delta = self.cfg.bin_width;
        let nbins = (horizon / delta).floor() as usize;
        if nbins < 8 {
            return Err(config(format!(
                "horizon {horizon} holds fewer than 8 bins of width {delta}"
            )));
        }
        let edges: Vec<f64> = (0..=nbins).map(|k| k as f64 * delta).collect();
        let top = edges[nbins];
        self.replicas(replicas, |r| {
            let path = sample_environment(&self.spec, (-1.0, top + 2.0 * self.cfg.relax_time + 1.0), r)?;
            let (series, _) = self.beta_series(&path, (0.0, top), &edges)?;
            let cum = series.cumulative_at(&edges)?;
            Ok(cum
                .windows(2)
                .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| (a - b) / delta).collect())
                .collect())
        })
    }

    /// `b` and `sigma sigma*` from the same replicas.
    pub fn drift_statistics(&self, horizon: f64, replicas: usize) -> Result<DriftStatistics> {
        let bins = self.drift_bins(horizon, replicas)?;
        drift_statistics_from_bins(&bins, self.cfg.bin_width, self.cfg.cov_tail)
    }

    /// Time average of `theta_inst` over `[0, horizon]` and replicas, computed
    /// in chunks that are relaxed independently.
    pub fn compute_theta(&self, horizon: f64, replicas: usize, with_kappa2: bool) -> Result<ThetaEstimate> {
        if !(horizon > 0.0) {
            return Err(config("theta horizon must be positive"));
        }
        let d = self.dim();
        let chunks = (horizon / self.cfg.chunk_length).ceil().max(1.0) as usize;
        let width = horizon / chunks as f64;
        let per_replica = self.replicas(replicas, |r| {
            let path = self.sample_path(0.0, horizon, r)?;
            let mut means = Vec::with_capacity(chunks);
            let mut min_eig = f64::INFINITY;
            let mut k2: Option<f64> = None;
            for c in 0..chunks {
                let w = (c as f64 * width, (c + 1) as f64 * width);
                let sol = self.solve_window(&path, w, &[], with_kappa2)?;
                min_eig = min_eig.min(sol.diagnostics.theta_min_eigenvalue);
                if let Some(rep) = sol.diagnostics.kappa2 {
                    k2 = Some(k2.unwrap_or(0.0).max(rep.residual));
                }
                means.push(sol.theta_inst.mean());
            }
            Ok((means, min_eig, k2))
        })?;
        let nc = d * d;
        let replica_means: Vec<Vec<f64>> = per_replica
            .iter()
            .map(|(m, _, _)| (0..nc).map(|ij| stats::mean(&m.iter().map(|v| v[ij]).collect::<Vec<_>>())).collect())
            .collect();
        let samples: Vec<Vec<f64>> = if replicas >= 2 {
            replica_means.clone()
        } else {
            per_replica[0].0.clone()
        };
        let raw: Vec<f64> = (0..nc)
            .map(|ij| stats::mean(&replica_means.iter().map(|v| v[ij]).collect::<Vec<_>>()))
            .collect();
        let value = stats::symmetrize(&raw, d);
        let sym_samples: Vec<Vec<f64>> = samples.iter().map(|s| stats::symmetrize(s, d)).collect();
        let std_error = (0..nc)
            .map(|ij| {
                let col: Vec<f64> = sym_samples.iter().map(|v| v[ij]).collect();
                if col.len() >= 2 {
                    stats::std_error(&col)
                } else {
                    0.0
                }
            })
            .collect();
        let min_eigenvalue = stats::sym_eigenvalues(&value, d)[0];
        let out = ThetaEstimate {
            value,
            std_error,
            raw,
            min_eigenvalue,
            min_inst_eigenvalue: per_replica.iter().map(|x| x.1).fold(f64::INFINITY, f64::min),
            max_kappa2_residual: per_replica.iter().filter_map(|x| x.2).reduce(f64::max),
        };
        if !(out.min_eigenvalue > 0.0) {
            return Err(Error::Statistical(format!(
                "estimated Theta is not positive definite (smallest eigenvalue {:.3e}); increase the horizon",
                out.min_eigenvalue
            )));
        }
        Ok(out)
    }

    /// Drift, diffusion matrix and drift covariance of the homogenized problem.
    pub fn effective_model(&self, opts: &EffectiveOptions) -> Result<EffectiveModel> {
        let drift = self.drift_statistics(opts.drift_horizon, opts.replicas)?;
        let theta = self.compute_theta(opts.theta_horizon, opts.replicas, false)?;
        Ok(EffectiveModel {
            b: drift.b.value,
            b_std_error: drift.b.std_error,
            theta: theta.value,
            theta_std_error: theta.std_error,
            theta_raw: theta.raw,
            sigma_sq: drift.sigma_sq.value,
            sigma_sq_std_error: drift.sigma_sq.std_error,
            lag_cutoff: drift.sigma_sq.lag_cutoff,
            theta_min_eigenvalue: theta.min_eigenvalue,
            theta_inst_min_eigenvalue: theta.min_inst_eigenvalue,
            provenance: Provenance {
                seed: self.spec.seed,
                dim: self.dim(),
                n: self.cfg.n,
                relax_time: self.cfg.relax_time,
                fine_step: self.step,
                drift_horizon: opts.drift_horizon,
                theta_horizon: opts.theta_horizon,
                replicas: opts.replicas,
                bin_width: self.cfg.bin_width,
                tail_tolerance: self.cfg.tail_tolerance,
            },
        })
    }
}

/// L2 distance of two stacked fields after removing the grid mean of the difference.
fn gauge_distance(g: TorusGrid, ncomp: usize, a: &[f64], b: &[f64]) -> f64 {
    let len = g.len();
    (0..ncomp)
        .map(|c| {
            let diff: Vec<f64> = (c * len..(c + 1) * len).map(|x| a[x] - b[x]).collect();
            let mean = g.integrate(&diff);
            g.l2_norm(&diff.iter().map(|v| v - mean).collect::<Vec<_>>())
        })
        .fold(0.0, f64::max)
}

/// Estimates `b` and `sigma sigma*` from bin averages `bins[replica][k][i]`
/// of width `delta`.
pub fn drift_statistics_from_bins(bins: &[Vec<Vec<f64>>], delta: f64, cov_tail: f64) -> Result<DriftStatistics> {
    let d = bins
        .first()
        .and_then(|r| r.first())
        .map(Vec::len)
        .ok_or_else(|| config("no drift samples"))?;
    let nrep = bins.len();
    let per_rep_means: Vec<Vec<f64>> = bins
        .iter()
        .map(|r| (0..d).map(|i| stats::mean(&r.iter().map(|v| v[i]).collect::<Vec<_>>())).collect())
        .collect();
    let b: Vec<f64> = (0..d)
        .map(|i| stats::mean(&per_rep_means.iter().map(|v| v[i]).collect::<Vec<_>>()))
        .collect();
    let centred: Vec<Vec<Vec<f64>>> = bins
        .iter()
        .map(|r| r.iter().map(|v| v.iter().zip(&b).map(|(x, m)| x - m).collect()).collect())
        .collect();
    let nbins = centred.iter().map(Vec::len).min().unwrap_or(0);
    let max_lag = (nbins / 4).max(1);
    let gamma = pooled_covariances(&centred, max_lag);
    let g0 = gamma[0].iter().step_by(d + 1).sum::<f64>();
    let b_se = |series: &[Vec<f64>]| -> Vec<f64> {
        if series.len() >= 2 {
            (0..d)
                .map(|i| stats::std_error(&series.iter().map(|v| v[i]).collect::<Vec<_>>()))
                .collect()
        } else {
            vec![0.0; d]
        }
    };
    if g0.max(0.0).sqrt() < 1e-12 {
        return Ok(DriftStatistics {
            b: Estimate {
                value: b,
                std_error: b_se(&per_rep_means),
            },
            sigma_sq: SigmaSq {
                value: vec![0.0; d * d],
                std_error: vec![0.0; d * d],
                lag_cutoff: 0.0,
                decay: None,
            },
        });
    }
    let norms: Vec<f64> = gamma.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let noise = 4.0 * norms[0] / ((nbins * nrep) as f64).sqrt();
    let floor = noise.max(0.02 * norms[0]);
    let (mut t, mut y) = (Vec::new(), Vec::new());
    for (k, &v) in norms.iter().enumerate().skip(1) {
        if v <= floor {
            break;
        }
        t.push(k as f64 * delta);
        y.push(v);
    }
    if t.len() < 2 {
        t.insert(0, 0.0);
        y.insert(0, norms[0]);
    }
    let fit = stats::fit_exponential_decay(&t, &y)
        .map_err(|e| Error::Mixing(format!("autocovariance fit failed: {e}")))?;
    if !(fit.rate > 0.0) || !fit.rate.is_finite() {
        return Err(Error::Mixing(format!(
            "autocovariance of the drift does not decay (fitted rate {:.3e})",
            fit.rate
        )));
    }
    let estimate = |g: &[Vec<f64>], lags: usize| -> Vec<f64> {
        let mut s = g[0].clone();
        for gk in g.iter().take(lags + 1).skip(1) {
            for i in 0..d {
                for j in 0..d {
                    s[i * d + j] += gk[i * d + j] + gk[j * d + i];
                }
            }
        }
        s.iter().map(|v| v * delta).collect()
    };
    let rough = estimate(&gamma, t.len());
    let scale = rough.iter().step_by(d + 1).sum::<f64>().abs().max(norms[0] * delta);
    // tail of A e^{-rate t} beyond T is A e^{-rate T} / rate
    let t_cov = ((fit.amplitude / (fit.rate * cov_tail * scale)).ln() / fit.rate).max(delta);
    let lags = ((t_cov / delta).ceil() as usize).min(max_lag);
    if (lags as f64) * delta < t_cov * 0.999 {
        return Err(Error::Mixing(format!(
            "lag cutoff {t_cov:.2} exceeds a quarter of the horizon; increase it"
        )));
    }
    let value = stats::symmetrize(&estimate(&gamma, lags), d);
    let groups: Vec<Vec<Vec<Vec<f64>>>> = if nrep >= 2 {
        centred.iter().map(|r| vec![r.clone()]).collect()
    } else {
        let nb = 10.min(nbins / (4 * lags.max(1))).max(2);
        let size = nbins / nb;
        (0..nb).map(|k| vec![centred[0][k * size..(k + 1) * size].to_vec()]).collect()
    };
    let per_group: Vec<Vec<f64>> = groups
        .iter()
        .map(|grp| stats::symmetrize(&estimate(&pooled_covariances(grp, lags), lags), d))
        .collect();
    let std_error = (0..d * d)
        .map(|ij| stats::std_error(&per_group.iter().map(|v| v[ij]).collect::<Vec<_>>()))
        .collect();
    let b_samples = if nrep >= 2 {
        per_rep_means
    } else {
        groups
            .iter()
            .map(|g| (0..d).map(|i| stats::mean(&g[0].iter().map(|v| v[i] + b[i]).collect::<Vec<_>>())).collect())
            .collect()
    };
    Ok(DriftStatistics {
        b: Estimate {
            value: b,
            std_error: b_se(&b_samples),
        },
        sigma_sq: SigmaSq {
            value,
            std_error,
            lag_cutoff: lags as f64 * delta,
            decay: Some(fit),
        },
    })
}

/// Lagged covariances pooled over replicas.
fn pooled_covariances(series: &[Vec<Vec<f64>>], max_lag: usize) -> Vec<Vec<f64>> {
    let d = series[0][0].len();
    let mut sums = vec![vec![0.0; d * d]; max_lag + 1];
    let mut counts = vec![0usize; max_lag + 1];
    for s in series {
        let n = s.len();
        for (k, sk) in sums.iter_mut().enumerate() {
            if k >= n {
                break;
            }
            for t in 0..n - k {
                for i in 0..d {
                    for j in 0..d {
                        sk[i * d + j] += s[t + k][i] * s[t][j];
                    }
                }
            }
            counts[k] += n - k;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| s.into_iter().map(|v| v / c.max(1) as f64).collect())
        .collect()
}
