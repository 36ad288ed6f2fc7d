//! Time integration of `du/dt = A(t) u` and of the adjoint `-dp/dt = A(t)^T p`.
//!
//! `A(t)` is piecewise constant in time (every environment model switches
//! between finitely many frozen states), so the integrator works on a
//! [`StepGrid`] whose intervals never straddle a jump. Each interval is split
//! into equal steps of the classical four-stage Runge-Kutta method.

use serde::{Deserialize, Serialize};

use crate::env::{EnvironmentPath, EnvironmentSpec};
use crate::error::{config, dimension, Error, Result};
use crate::grid::{TorusField, TorusGrid, Trajectory};
use crate::kernels::{state_generators, Generator, PeriodizedMoments};

/// Step size of the explicit integrator, bounded by `0.1 / (2 alpha_hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub alpha_hi: f64,
}

impl IntegratorConfig {
    pub fn stability_cap(alpha_hi: f64) -> f64 {
        0.1 / (2.0 * alpha_hi)
    }

    pub fn new(dt: f64, alpha_hi: f64) -> Result<Self> {
        let cap = Self::stability_cap(alpha_hi);
        if !(dt > 0.0) || dt > cap * (1.0 + 1e-12) {
            return Err(config(format!(
                "time step {dt} violates the stability cap {cap} (alpha_hi = {alpha_hi})"
            )));
        }
        Ok(Self { dt, alpha_hi })
    }

    /// Step equal to `fraction` of the stability cap.
    pub fn from_fraction(alpha_hi: f64, fraction: f64) -> Result<Self> {
        Self::new(fraction * Self::stability_cap(alpha_hi), alpha_hi)
    }
}

/// Generators of every environment state on one grid.
#[derive(Clone, Debug)]
pub struct Dynamics {
    pub grid: TorusGrid,
    pub generators: Vec<Generator>,
}

impl Dynamics {
    pub fn new(moments: &PeriodizedMoments, spec: &EnvironmentSpec) -> Result<Self> {
        Ok(Self {
            grid: moments.grid,
            generators: state_generators(moments, spec)?,
        })
    }

    pub fn from_generators(generators: Vec<Generator>) -> Result<Self> {
        let grid = generators
            .first()
            .ok_or_else(|| config("no generators"))?
            .grid;
        Ok(Self { grid, generators })
    }
}

/// Constant-state interval of a [`StepGrid`]: nodes `first..=last`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub first: usize,
    pub last: usize,
    pub state: usize,
}

/// Time nodes aligned with the jumps of an environment path.
#[derive(Clone, Debug, PartialEq)]
pub struct StepGrid {
    pub nodes: Vec<f64>,
    pub intervals: Vec<Interval>,
    interval_of: Vec<u32>,
}

impl StepGrid {
    /// Splits `[t0, t1]` at the path jumps and at `breaks`, then cuts every
    /// piece into a multiple of `multiple` equal steps no longer than `max_step`.
    pub fn build(
        path: &EnvironmentPath,
        t0: f64,
        t1: f64,
        breaks: &[f64],
        max_step: f64,
        multiple: usize,
    ) -> Result<Self> {
        if !(t1 > t0) {
            return Err(config(format!("empty integration window [{t0}, {t1}]")));
        }
        path.segments(t0, t1)?;
        let tol = 1e-12 * (1.0 + t0.abs().max(t1.abs()));
        let mut cuts: Vec<f64> = path
            .jumps_between(t0, t1)
            .into_iter()
            .chain(breaks.iter().copied().filter(|&b| b > t0 && b < t1))
            .collect();
        cuts.sort_by(f64::total_cmp);
        let mut points = vec![t0];
        for c in cuts {
            if c - points.last().unwrap() > tol && t1 - c > tol {
                points.push(c);
            }
        }
        points.push(t1);
        let multiple = multiple.max(1);
        let mut nodes = vec![t0];
        let mut intervals = Vec::with_capacity(points.len() - 1);
        let mut interval_of = Vec::new();
        for w in points.windows(2) {
            let (a, b) = (w[0], w[1]);
            let blocks = ((b - a) / (multiple as f64 * max_step)).ceil().max(1.0) as usize;
            let m = blocks * multiple;
            let first = nodes.len() - 1;
            for k in 1..m {
                nodes.push(a + (b - a) * k as f64 / m as f64);
            }
            nodes.push(b);
            let state = path.state_at(0.5 * (a + b))?;
            let idx = intervals.len() as u32;
            interval_of.extend(std::iter::repeat_n(idx, m));
            intervals.push(Interval {
                first,
                last: nodes.len() - 1,
                state,
            });
        }
        interval_of.push((intervals.len() - 1) as u32);
        Ok(Self {
            nodes,
            intervals,
            interval_of,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Interval that owns the step starting at `node`.
    pub fn interval_at(&self, node: usize) -> &Interval {
        &self.intervals[self.interval_of[node] as usize]
    }

    /// Interval that owns the step ending at `node`.
    pub fn interval_before(&self, node: usize) -> &Interval {
        &self.intervals[self.interval_of[node - 1] as usize]
    }

    /// True when `node` sits a multiple of `stride` steps into its interval.
    pub fn is_aligned(&self, node: usize, stride: usize) -> bool {
        if node + 1 == self.nodes.len() {
            let iv = self.intervals.last().unwrap();
            return (node - iv.first) % stride == 0;
        }
        let iv = self.interval_at(node);
        (node - iv.first) % stride == 0
    }

    /// Nodes aligned to `stride` in `[from, to]`.
    pub fn aligned_nodes(&self, from: usize, to: usize, stride: usize) -> Vec<usize> {
        (from..=to).filter(|&i| self.is_aligned(i, stride)).collect()
    }

    /// Index of the node equal to `t` up to rounding.
    pub fn find(&self, t: f64) -> Option<usize> {
        let tol = 1e-10 * (1.0 + t.abs());
        let i = self.nodes.partition_point(|&x| x < t - tol);
        (i < self.nodes.len() && (self.nodes[i] - t).abs() <= tol).then_some(i)
    }

    /// First node at or after `t`.
    pub fn first_at_or_after(&self, t: f64) -> usize {
        let tol = 1e-10 * (1.0 + t.abs());
        self.nodes.partition_point(|&x| x < t - tol)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Op {
    Forward,
    Adjoint,
}

/// Workspace for RK4 steps of `ncomp` stacked scalar fields.
pub(crate) struct Rk4 {
    len: usize,
    ncomp: usize,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    pub(crate) fn new(len: usize, ncomp: usize) -> Self {
        let n = len * ncomp;
        Self {
            len,
            ncomp,
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
        }
    }

    fn eval(gen: &Generator, op: Op, len: usize, ncomp: usize, x: &[f64], out: &mut [f64]) {
        for c in 0..ncomp {
            let r = c * len..(c + 1) * len;
            match op {
                Op::Forward => gen.apply(&x[r.clone()], &mut out[r]),
                Op::Adjoint => gen.apply_adjoint(&x[r.clone()], &mut out[r]),
            }
        }
    }

    /// One step `u <- u + dt * Phi(u)` for `u' = A u + f(t)` with forcing at the
    /// start, middle and end of the step.
    pub(crate) fn step(
        &mut self,
        gen: &Generator,
        op: Op,
        u: &mut [f64],
        dt: f64,
        forcing: Option<[&[f64]; 3]>,
    ) {
        let (len, nc) = (self.len, self.ncomp);
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        let add = |k: &mut [f64], f: Option<&[f64]>| {
            if let Some(f) = f {
                k.iter_mut().zip(f).for_each(|(a, b)| *a += b);
            }
        };
        Self::eval(gen, op, len, nc, u, k1);
        add(k1, forcing.map(|f| f[0]));
        tmp.iter_mut().zip(u.iter()).zip(k1.iter()).for_each(|((t, x), k)| *t = x + 0.5 * dt * k);
        Self::eval(gen, op, len, nc, tmp, k2);
        add(k2, forcing.map(|f| f[1]));
        tmp.iter_mut().zip(u.iter()).zip(k2.iter()).for_each(|((t, x), k)| *t = x + 0.5 * dt * k);
        Self::eval(gen, op, len, nc, tmp, k3);
        add(k3, forcing.map(|f| f[1]));
        tmp.iter_mut().zip(u.iter()).zip(k3.iter()).for_each(|((t, x), k)| *t = x + dt * k);
        Self::eval(gen, op, len, nc, tmp, k4);
        add(k4, forcing.map(|f| f[2]));
        for i in 0..u.len() {
            u[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

/// Forcing callback: writes the forcing at a node, with the environment in
/// the given state, into the buffer.
pub(crate) type Forcing<'a> = &'a dyn Fn(usize, usize, &mut [f64]);

/// Integrates forward from node `from` to node `to` in steps of `stride` nodes.
/// `record` sees every visited node, starting with `from`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn integrate_forward(
    grid: &StepGrid,
    dynamics: &Dynamics,
    u: &mut [f64],
    ncomp: usize,
    from: usize,
    to: usize,
    stride: usize,
    forcing: Option<Forcing<'_>>,
    mut record: impl FnMut(usize, &[f64]),
) -> Result<()> {
    let len = dynamics.grid.len();
    if u.len() != len * ncomp {
        return Err(dimension("state size does not match the grid"));
    }
    if forcing.is_some() && stride % 2 != 0 {
        return Err(config("forced integration needs an even stride"));
    }
    let mut rk = Rk4::new(len, ncomp);
    let mut f = [vec![0.0; len * ncomp], vec![0.0; len * ncomp], vec![0.0; len * ncomp]];
    let mut i = from;
    record(i, u);
    while i < to {
        let iv = *grid.interval_at(i);
        let j = i + stride;
        if j > iv.last || (i - iv.first) % stride != 0 {
            return Err(Error::Inconsistency(format!(
                "step {i}->{j} is not aligned with interval {}..{}",
                iv.first, iv.last
            )));
        }
        let dt = grid.nodes[j] - grid.nodes[i];
        let gen = &dynamics.generators[iv.state];
        match forcing {
            Some(force) => {
                force(i, iv.state, &mut f[0]);
                force(i + stride / 2, iv.state, &mut f[1]);
                force(j, iv.state, &mut f[2]);
                rk.step(gen, Op::Forward, u, dt, Some([&f[0], &f[1], &f[2]]));
            }
            None => rk.step(gen, Op::Forward, u, dt, None),
        }
        i = j;
        record(i, u);
    }
    Ok(())
}

/// Integrates the adjoint backward from node `from` down to node `to`.
pub(crate) fn integrate_adjoint(
    grid: &StepGrid,
    dynamics: &Dynamics,
    p: &mut [f64],
    from: usize,
    to: usize,
    mut record: impl FnMut(usize, &[f64]),
) -> Result<()> {
    let len = dynamics.grid.len();
    if p.len() != len {
        return Err(dimension("state size does not match the grid"));
    }
    let mut rk = Rk4::new(len, 1);
    let mut i = from;
    record(i, p);
    while i > to {
        let iv = *grid.interval_before(i);
        let dt = grid.nodes[i] - grid.nodes[i - 1];
        rk.step(&dynamics.generators[iv.state], Op::Adjoint, p, dt, None);
        i -= 1;
        record(i, p);
    }
    Ok(())
}

/// Integrates `du/dt = A u` for one fixed generator through the given nodes,
/// returning the state at every node listed in `record` (ascending).
pub fn evolve_on_nodes(gen: &Generator, u0: &[f64], nodes: &[f64], record: &[usize]) -> Vec<Vec<f64>> {
    let mut rk = Rk4::new(u0.len(), 1);
    let mut u = u0.to_vec();
    let mut out = Vec::with_capacity(record.len());
    let mut r = 0;
    for i in 0..nodes.len() {
        if i > 0 {
            rk.step(gen, Op::Forward, &mut u, nodes[i] - nodes[i - 1], None);
        }
        while r < record.len() && record[r] == i {
            out.push(u.clone());
            r += 1;
        }
    }
    out
}

fn check_samples(samples: &[f64], a: f64, b: f64) -> Result<()> {
    let tol = 1e-12 * (1.0 + a.abs().max(b.abs()));
    if samples.iter().any(|&s| s < a - tol || s > b + tol) {
        return Err(Error::Domain(format!("sample times must lie in [{a}, {b}]")));
    }
    Ok(())
}

/// Solves `du/dt = A(t) u` on `[t0, t1]`, recording at `sample_times`.
pub fn evolve_forward(
    u0: &TorusField,
    path: &EnvironmentPath,
    dynamics: &Dynamics,
    (t0, t1): (f64, f64),
    sample_times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    u0.grid.check_same(&dynamics.grid)?;
    IntegratorConfig::new(cfg.dt, cfg.alpha_hi)?;
    check_samples(sample_times, t0, t1)?;
    let grid = StepGrid::build(path, t0, t1, sample_times, cfg.dt, 1)?;
    let wanted: Vec<(usize, f64)> = sample_times
        .iter()
        .map(|&t| (grid.find(t).expect("sample is a node"), t))
        .collect();
    let mut u = u0.values.clone();
    let mut recorded = vec![None; wanted.len()];
    integrate_forward(&grid, dynamics, &mut u, u0.ncomp, 0, grid.len() - 1, 1, None, |i, v| {
        for (k, (node, _)) in wanted.iter().enumerate() {
            if *node == i {
                recorded[k] = Some(v.to_vec());
            }
        }
    })?;
    collect(u0.grid, u0.ncomp, &wanted, recorded)
}

/// Solves `-dp/dt = A(t)^T p` backward from `p(terminal_time) = terminal` to `t_stop`.
pub fn evolve_adjoint_backward(
    terminal: &TorusField,
    path: &EnvironmentPath,
    dynamics: &Dynamics,
    terminal_time: f64,
    t_stop: f64,
    sample_times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    terminal.grid.check_same(&dynamics.grid)?;
    if terminal.ncomp != 1 {
        return Err(dimension("adjoint evolution takes a scalar terminal field"));
    }
    IntegratorConfig::new(cfg.dt, cfg.alpha_hi)?;
    if !(t_stop < terminal_time) {
        return Err(config("t_stop must precede the terminal time"));
    }
    check_samples(sample_times, t_stop, terminal_time)?;
    let grid = StepGrid::build(path, t_stop, terminal_time, sample_times, cfg.dt, 1)?;
    let wanted: Vec<(usize, f64)> = sample_times
        .iter()
        .map(|&t| (grid.find(t).expect("sample is a node"), t))
        .collect();
    let mut p = terminal.values.clone();
    let mut recorded = vec![None; wanted.len()];
    integrate_adjoint(&grid, dynamics, &mut p, grid.len() - 1, 0, |i, v| {
        for (k, (node, _)) in wanted.iter().enumerate() {
            if *node == i {
                recorded[k] = Some(v.to_vec());
            }
        }
    })?;
    collect(terminal.grid, 1, &wanted, recorded)
}

fn collect(
    grid: TorusGrid,
    ncomp: usize,
    wanted: &[(usize, f64)],
    recorded: Vec<Option<Vec<f64>>>,
) -> Result<Trajectory> {
    let mut times = Vec::with_capacity(wanted.len());
    let mut fields = Vec::with_capacity(wanted.len());
    for ((_, t), v) in wanted.iter().zip(recorded) {
        times.push(*t);
        fields.push(TorusField {
            grid,
            ncomp,
            values: v.ok_or_else(|| Error::Inconsistency("sample time not visited".into()))?,
        });
    }
    Ok(Trajectory { times, fields })
}

/// Largest relative change of the pairing `(u(t), p(t))` over common sample times.
pub fn duality_check(u: &Trajectory, p: &Trajectory) -> Result<f64> {
    if u.times.len() != p.times.len()
        || u
            .times
            .iter()
            .zip(&p.times)
            .any(|(a, b)| (a - b).abs() > 1e-10 * (1.0 + a.abs()))
    {
        return Err(dimension("trajectories are not sampled at the same times"));
    }
    if u.is_empty() {
        return Err(dimension("empty trajectories"));
    }
    let pairs: Vec<f64> = u
        .fields
        .iter()
        .zip(&p.fields)
        .map(|(a, b)| a.inner(b))
        .collect::<Result<_>>()?;
    let reference = pairs[0];
    let scale = if reference.abs() > 0.0 { reference.abs() } else { 1.0 };
    Ok(pairs
        .iter()
        .map(|c| (c - reference).abs() / scale)
        .fold(0.0, f64::max))
}
