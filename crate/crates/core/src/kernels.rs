//! Dispersal kernels, their periodized moments, and the discrete generator.
//!
//! On a torus of side `L` sampled with `n` points per direction the operator
//! `(A v)(xi) = int (v(xi - z) - v(xi)) a(z) mu(xi, xi - z) dz` becomes
//! `A v = K v - G v` with
//!
//! ```text
//! K[xi, eta] = M0(xi - eta) * mu(xi, eta) * h^d,    G(xi) = sum_eta K[xi, eta],
//! M0(zeta)   = sum_k a(zeta + k L).
//! ```
//!
//! The first and second periodized moments `M1`, `M2` are the lattice sums of
//! `z a(z)` and `z (x) z a(z)` and feed the drift and diffusion quadratures.

use serde::{Deserialize, Serialize};

use crate::env::EnvironmentSpec;
use crate::error::{config, dimension, Result};
use crate::grid::TorusGrid;
use crate::quadrature;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    ShiftedGaussian,
    CompactBump,
}

/// Serializable description of a dispersal density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Center `m0`; ignored (taken as zero) for the centered gaussian.
    #[serde(default)]
    pub center: Vec<f64>,
    /// Standard deviation for gaussians, support radius for the bump.
    pub width: f64,
}

/// Normalized density `a(z)` on `R^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct DispersalKernel {
    pub spec: KernelSpec,
    pub dim: usize,
    center: Vec<f64>,
    norm: f64,
    /// `int |z - center|^2 a(z) dz`.
    spread: f64,
}

fn bump(r2: f64) -> f64 {
    if r2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r2)).exp()
    }
}

impl DispersalKernel {
    pub fn new(spec: KernelSpec, dim: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(config(format!("kernel dimension must be 1 or 2, got {dim}")));
        }
        if !(spec.width > 0.0 && spec.width.is_finite()) {
            return Err(config(format!("kernel width must be positive, got {}", spec.width)));
        }
        let center = match spec.family {
            KernelFamily::Gaussian => vec![0.0; dim],
            _ if spec.center.is_empty() => vec![0.0; dim],
            _ if spec.center.len() == dim => spec.center.clone(),
            _ => {
                return Err(config(format!(
                    "kernel center has {} entries, expected {dim}",
                    spec.center.len()
                )))
            }
        };
        let w = spec.width;
        let (norm, spread) = match spec.family {
            KernelFamily::Gaussian | KernelFamily::ShiftedGaussian => (
                (std::f64::consts::TAU * w * w).powf(-(dim as f64) / 2.0),
                dim as f64 * w * w,
            ),
            KernelFamily::CompactBump => {
                // radial integrals of exp(-1/(1-r^2)) on the unit ball
                let (mass, second) = if dim == 1 {
                    let m = 2.0 * quadrature::integrate(|x| bump(x * x), 0.0, 1.0, 400, 12);
                    let s = 2.0 * quadrature::integrate(|x| x * x * bump(x * x), 0.0, 1.0, 400, 12);
                    (m * w, s * w * w * w)
                } else {
                    let tau = std::f64::consts::TAU;
                    let m = tau * quadrature::integrate(|r| r * bump(r * r), 0.0, 1.0, 400, 12);
                    let s = tau * quadrature::integrate(|r| r * r * r * bump(r * r), 0.0, 1.0, 400, 12);
                    (m * w * w, s * w.powi(4))
                };
                (1.0 / mass, second / mass)
            }
        };
        Ok(Self {
            spec,
            dim,
            center,
            norm,
            spread,
        })
    }

    pub fn gaussian(dim: usize, width: f64) -> Result<Self> {
        Self::new(
            KernelSpec {
                family: KernelFamily::Gaussian,
                center: Vec::new(),
                width,
            },
            dim,
        )
    }

    pub fn shifted_gaussian(center: &[f64], width: f64) -> Result<Self> {
        Self::new(
            KernelSpec {
                family: KernelFamily::ShiftedGaussian,
                center: center.to_vec(),
                width,
            },
            center.len(),
        )
    }

    pub fn compact_bump(center: &[f64], radius: f64) -> Result<Self> {
        Self::new(
            KernelSpec {
                family: KernelFamily::CompactBump,
                center: center.to_vec(),
                width: radius,
            },
            center.len(),
        )
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        let r2: f64 = z
            .iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum();
        let w = self.spec.width;
        match self.spec.family {
            KernelFamily::Gaussian | KernelFamily::ShiftedGaussian => {
                self.norm * (-0.5 * r2 / (w * w)).exp()
            }
            KernelFamily::CompactBump => self.norm * bump(r2 / (w * w)),
        }
    }

    /// `int z a(z) dz`.
    pub fn first_moment(&self) -> Vec<f64> {
        self.center.clone()
    }

    /// `int z (x) z a(z) dz`, row-major `d x d`.
    pub fn second_moment(&self) -> Vec<f64> {
        let d = self.dim;
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                m[i * d + j] = self.center[i] * self.center[j];
            }
            m[i * d + i] += self.spread / d as f64;
        }
        m
    }

    /// `int |z| a(z) dz`, by quadrature.
    pub fn abs_first_moment(&self) -> f64 {
        let rho = self.support_radius(1e-14);
        if self.dim == 1 {
            quadrature::integrate(|z| z.abs() * self.eval(&[z]), -rho, rho, 2000, 8)
        } else {
            quadrature::integrate(
                |x| {
                    quadrature::integrate(
                        |y| (x * x + y * y).sqrt() * self.eval(&[x, y]),
                        -rho,
                        rho,
                        200,
                        8,
                    )
                },
                -rho,
                rho,
                200,
                8,
            )
        }
    }

    /// Radius (sup norm) outside of which the omitted mass and second moment fall below `tol`.
    pub fn support_radius(&self, tol: f64) -> f64 {
        let c = self.center.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        match self.spec.family {
            KernelFamily::CompactBump => c + self.spec.width,
            _ => c + self.spec.width * ((2.0 * (1.0 / tol).ln()).sqrt() + 3.0),
        }
    }
}

/// Lattice sums of the kernel and its first two moments on a torus grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodizedMoments {
    pub grid: TorusGrid,
    pub m0: Vec<f64>,
    /// `m1[c][offset]`.
    pub m1: Vec<Vec<f64>>,
    /// `m2[i * d + j][offset]`.
    pub m2: Vec<Vec<f64>>,
    pub tail_tolerance: f64,
    pub lattice_radius: usize,
}

/// Periodizes `kernel` over the torus of `grid`, truncating the lattice sum
/// once the omitted tail falls below `tail_tolerance`.
pub fn periodize(
    kernel: &DispersalKernel,
    grid: TorusGrid,
    tail_tolerance: f64,
) -> Result<PeriodizedMoments> {
    if grid.dim != kernel.dim {
        return Err(dimension(format!(
            "kernel dimension {} does not match grid dimension {}",
            kernel.dim, grid.dim
        )));
    }
    if !(tail_tolerance > 0.0) {
        return Err(config("tail_tolerance must be positive"));
    }
    let d = grid.dim;
    let period = grid.period;
    let rho = kernel.support_radius(tail_tolerance);
    let radius = (rho / period).ceil() as usize + 1;
    let k = radius as i64;
    let shifts: Vec<[f64; 2]> = if d == 1 {
        (-k..=k).map(|a| [a as f64 * period, 0.0]).collect()
    } else {
        (-k..=k)
            .flat_map(|a| (-k..=k).map(move |b| [a as f64 * period, b as f64 * period]))
            .collect()
    };
    let len = grid.len();
    let mut m0 = vec![0.0; len];
    let mut m1 = vec![vec![0.0; len]; d];
    let mut m2 = vec![vec![0.0; len]; d * d];
    for off in 0..len {
        let zeta = grid.coords(off);
        for s in &shifts {
            let z = [zeta[0] + s[0], zeta[1] + s[1]];
            if z[..d].iter().zip(kernel.center()).any(|(x, c)| (x - c).abs() > rho) {
                continue;
            }
            let a = kernel.eval(&z[..d]);
            if a == 0.0 {
                continue;
            }
            m0[off] += a;
            for i in 0..d {
                m1[i][off] += z[i] * a;
                for j in 0..d {
                    m2[i * d + j][off] += z[i] * z[j] * a;
                }
            }
        }
    }
    Ok(PeriodizedMoments {
        grid,
        m0,
        m1,
        m2,
        tail_tolerance,
        lattice_radius: radius,
    })
}

impl PeriodizedMoments {
    /// Rectangle-rule integral of `M0` (the total mass, 1 up to quadrature).
    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.m0)
    }

    pub fn mean_first(&self) -> Vec<f64> {
        self.m1.iter().map(|c| self.grid.integrate(c)).collect()
    }

    pub fn mean_second(&self) -> Vec<f64> {
        self.m2.iter().map(|c| self.grid.integrate(c)).collect()
    }

    /// Offsets whose `M0` is not negligible; the generator is sparse in them.
    pub fn active_offsets(&self) -> Vec<usize> {
        let peak = self.m0.iter().copied().fold(0.0, f64::max);
        let cutoff = 1e-6 * self.tail_tolerance * peak;
        (0..self.m0.len()).filter(|&o| self.m0[o] > cutoff).collect()
    }
}

/// `mu(xi, eta)` at fixed time, sampled on all grid pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct MuSlice {
    pub grid: TorusGrid,
    /// Row-major `mu[xi * len + eta]`.
    pub values: Vec<f64>,
}

impl MuSlice {
    pub fn from_fn(grid: TorusGrid, f: impl Fn([f64; 2], [f64; 2]) -> f64) -> Self {
        let len = grid.len();
        let mut values = Vec::with_capacity(len * len);
        for i in 0..len {
            let xi = grid.coords(i);
            for j in 0..len {
                values.push(f(xi, grid.coords(j)));
            }
        }
        Self { grid, values }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.len() + j]
    }
}

/// Sparse row storage of a nonnegative kernel matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    pub rows: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl KernelMatrix {
    /// Builds `W[i, j] = weight(offset) * mu(i, j)` over the given offsets.
    pub fn assemble(
        grid: &TorusGrid,
        offsets: &[usize],
        weight: impl Fn(usize) -> f64,
        mu: impl Fn(usize, usize) -> f64,
    ) -> Self {
        let rows = grid.len();
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut cols = Vec::with_capacity(rows * offsets.len());
        let mut vals = Vec::with_capacity(rows * offsets.len());
        row_ptr.push(0);
        let wts: Vec<f64> = offsets.iter().map(|&o| weight(o)).collect();
        for i in 0..rows {
            for (&o, &w) in offsets.iter().zip(&wts) {
                let j = grid.sub_offset(i, o);
                cols.push(j as u32);
                vals.push(w * mu(i, j));
            }
            row_ptr.push(cols.len());
        }
        Self {
            rows,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .zip(&self.vals[r])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    /// `out = W v`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            let mut acc = 0.0;
            for (&c, &w) in self.cols[r.clone()].iter().zip(&self.vals[r]) {
                acc += w * v[c as usize];
            }
            *o = acc;
        }
    }

    /// `out = W^T p`.
    pub fn apply_transpose(&self, p: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &pi) in p.iter().enumerate() {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            for (&c, &w) in self.cols[r.clone()].iter().zip(&self.vals[r]) {
                out[c as usize] += w * pi;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.vals.iter_mut().for_each(|v| *v *= c);
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.rows * self.rows];
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                m[i * self.rows + j] += v;
            }
        }
        m
    }
}

/// Discrete generator `A = K - diag(G)` at one frozen environment state.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub grid: TorusGrid,
    pub kernel: KernelMatrix,
    /// Row sums of `K`.
    pub diag: Vec<f64>,
}

impl Generator {
    pub fn from_fn(moments: &PeriodizedMoments, mu: impl Fn(usize, usize) -> f64) -> Self {
        let grid = moments.grid;
        let hd = grid.cell_volume();
        let kernel =
            KernelMatrix::assemble(&grid, &moments.active_offsets(), |o| moments.m0[o] * hd, mu);
        let diag = kernel.row_sums();
        Self { grid, kernel, diag }
    }

    /// `out = A v`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        self.kernel.apply(v, out);
        for ((o, g), x) in out.iter_mut().zip(&self.diag).zip(v) {
            *o -= g * x;
        }
    }

    /// `out = A^T p`, the discrete adjoint in the flat `h^d`-weighted pairing.
    pub fn apply_adjoint(&self, p: &[f64], out: &mut [f64]) {
        self.kernel.apply_transpose(p, out);
        for ((o, g), x) in out.iter_mut().zip(&self.diag).zip(p) {
            *o -= g * x;
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut g = self.clone();
        g.kernel.scale(c);
        g.diag.iter_mut().for_each(|x| *x *= c);
        g
    }

    /// Induced infinity norm `max_i (G_i + sum_j |A_ij|)` which equals `2 max G`.
    pub fn inf_norm(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| {
                let mut s = 0.0;
                let mut diag_entry = -self.diag[i];
                for (j, v) in self.kernel.row(i) {
                    if j == i {
                        diag_entry += v;
                    } else {
                        s += v.abs();
                    }
                }
                s + diag_entry.abs()
            })
            .fold(0.0, f64::max)
    }

    /// Row-major dense matrix of `A`.
    pub fn to_dense(&self) -> Vec<f64> {
        let len = self.grid.len();
        let mut m = self.kernel.to_dense();
        for i in 0..len {
            m[i * len + i] -= self.diag[i];
        }
        m
    }
}

/// Assembles the generator for a sampled `mu` slice.
pub fn assemble_generator(moments: &PeriodizedMoments, mu: &MuSlice) -> Result<Generator> {
    moments.grid.check_same(&mu.grid)?;
    Ok(Generator::from_fn(moments, |i, j| mu.get(i, j)))
}

/// One generator per state of the environment chain.
pub fn state_generators(moments: &PeriodizedMoments, spec: &EnvironmentSpec) -> Result<Vec<Generator>> {
    if spec.dim != moments.grid.dim {
        return Err(dimension("environment and kernel grids differ in dimension"));
    }
    let grid = moments.grid;
    let d = grid.dim;
    let coords: Vec<[f64; 2]> = (0..grid.len()).map(|i| grid.coords(i)).collect();
    if spec.model == crate::env::EnvironmentModel::ProductScalar {
        let base = Generator::from_fn(moments, |i, j| {
            spec.profiles[0].eval(&coords[i][..d], &coords[j][..d])
        });
        return Ok(spec.lambda_values.iter().map(|&l| base.scaled(l)).collect());
    }
    Ok((0..spec.state_count())
        .map(|k| {
            Generator::from_fn(moments, |i, j| spec.state_mu(k, &coords[i][..d], &coords[j][..d]))
        })
        .collect())
}
