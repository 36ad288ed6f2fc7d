//! Uniform grids on the torus and fields sampled on them.

use serde::{Deserialize, Serialize};

use crate::error::{config, dimension, Result};

/// Uniform grid with `n` points per direction on a torus of side `period`.
///
/// Points are `x_i = i * h` with `h = period / n`; in two dimensions the linear
/// index of `(i0, i1)` is `i0 + n * i1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    pub n: usize,
    pub dim: usize,
    pub period: f64,
}

impl TorusGrid {
    pub fn unit(n: usize, dim: usize) -> Result<Self> {
        Self::with_period(n, dim, 1.0)
    }

    pub fn with_period(n: usize, dim: usize, period: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(config(format!("dimension must be 1 or 2, got {dim}")));
        }
        if n < 4 {
            return Err(config(format!("grid size must be at least 4, got {n}")));
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(config(format!("torus period must be positive, got {period}")));
        }
        Ok(Self { n, dim, period })
    }

    /// Number of grid points, `n^dim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.period / self.n as f64
    }

    /// Quadrature weight `h^dim` of the rectangle rule.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx % self.n, idx / self.n]
        }
    }

    pub fn linear_index(&self, mi: [usize; 2]) -> usize {
        if self.dim == 1 {
            mi[0]
        } else {
            mi[0] + self.n * mi[1]
        }
    }

    /// Coordinates of grid point `idx` (unused trailing entries are zero).
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let mi = self.multi_index(idx);
        let h = self.spacing();
        [mi[0] as f64 * h, mi[1] as f64 * h]
    }

    /// Linear index of the offset `x_i - x_j` reduced modulo the period.
    pub fn offset_index(&self, i: usize, j: usize) -> usize {
        let (a, b) = (self.multi_index(i), self.multi_index(j));
        let n = self.n;
        let d0 = (a[0] + n - b[0]) % n;
        let d1 = (a[1] + n - b[1]) % n;
        self.linear_index([d0, d1])
    }

    /// Linear index of `x_i - offset` modulo the period.
    pub fn sub_offset(&self, i: usize, offset: usize) -> usize {
        let (a, o) = (self.multi_index(i), self.multi_index(offset));
        let n = self.n;
        self.linear_index([(a[0] + n - o[0]) % n, (a[1] + n - o[1]) % n])
    }

    pub fn check_same(&self, other: &TorusGrid) -> Result<()> {
        if self != other {
            return Err(dimension(format!(
                "grid mismatch: n={} d={} period={} vs n={} d={} period={}",
                self.n, self.dim, self.period, other.n, other.dim, other.period
            )));
        }
        Ok(())
    }

    /// Rectangle-rule integral of a scalar grid function.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.cell_volume() * values.iter().sum::<f64>()
    }

    /// Discrete L2 inner product.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.cell_volume() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    pub fn l2_norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).sqrt()
    }
}

/// Real field on a torus grid with `ncomp` components stored component-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusField {
    pub grid: TorusGrid,
    pub ncomp: usize,
    pub values: Vec<f64>,
}

impl TorusField {
    pub fn zeros(grid: TorusGrid, ncomp: usize) -> Self {
        Self {
            grid,
            ncomp,
            values: vec![0.0; grid.len() * ncomp],
        }
    }

    pub fn constant(grid: TorusGrid, value: f64) -> Self {
        Self {
            grid,
            ncomp: 1,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Self {
            grid,
            ncomp: 1,
            values,
        }
    }

    pub fn from_values(grid: TorusGrid, ncomp: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * ncomp {
            return Err(dimension(format!(
                "expected {} values for {} components, got {}",
                grid.len() * ncomp,
                ncomp,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(config("torus field contains non-finite values"));
        }
        Ok(Self {
            grid,
            ncomp,
            values,
        })
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let len = self.grid.len();
        &self.values[c * len..(c + 1) * len]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let len = self.grid.len();
        &mut self.values[c * len..(c + 1) * len]
    }

    pub fn integral(&self, c: usize) -> f64 {
        self.grid.integrate(self.component(c))
    }

    /// L2 norm over all components.
    pub fn l2_norm(&self) -> f64 {
        (self.grid.cell_volume() * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn inner(&self, other: &TorusField) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        if self.ncomp != other.ncomp {
            return Err(dimension("component count mismatch in inner product"));
        }
        Ok(self.grid.inner(&self.values, &other.values))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Fields recorded at a list of times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub fields: Vec<TorusField>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Writes `time, v_0, v_1, ...` rows (component-major values).
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        if let Some(first) = self.fields.first() {
            write!(out, "time")?;
            for c in 0..first.ncomp {
                for i in 0..first.grid.len() {
                    write!(out, ",c{c}_{i}")?;
                }
            }
            writeln!(out)?;
        }
        for (t, f) in self.times.iter().zip(&self.fields) {
            write!(out, "{t:.12e}")?;
            for v in &f.values {
                write!(out, ",{v:.12e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}
