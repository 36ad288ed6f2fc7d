//! Stationary random environments `mu(xi, eta; t)`.
//!
//! Three generative models are provided. `MarkovSwitching` jumps between a
//! finite list of smooth periodic profiles, `ProductScalar` multiplies a
//! single profile by a scalar process `lambda(t)` driven by the same kind of
//! chain, and `ConstantInTime` freezes one profile.
//!
//! The chain is a refresh chain: at rate `switching_rate` the state is redrawn
//! from the stationary weights. Only actual changes of state are recorded as
//! jumps. Its autocorrelation is exactly `exp(-switching_rate * t)` and the
//! initial state is drawn from the stationary law, so the law of a path does
//! not depend on the time origin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentModel {
    MarkovSwitching,
    ProductScalar,
    ConstantInTime,
}

/// One term `amplitude * cos(2 pi (k . xi + l . eta) + phase)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileTerm {
    pub xi: Vec<i32>,
    pub eta: Vec<i32>,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Trigonometric polynomial on the 2d-torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicProfile {
    pub offset: f64,
    #[serde(default)]
    pub terms: Vec<ProfileTerm>,
}

impl PeriodicProfile {
    pub fn constant(value: f64) -> Self {
        Self {
            offset: value,
            terms: Vec::new(),
        }
    }

    pub fn with_term(mut self, xi: &[i32], eta: &[i32], amplitude: f64, phase: f64) -> Self {
        self.terms.push(ProfileTerm {
            xi: xi.to_vec(),
            eta: eta.to_vec(),
            amplitude,
            phase,
        });
        self
    }

    pub fn eval(&self, xi: &[f64], eta: &[f64]) -> f64 {
        let mut v = self.offset;
        for t in &self.terms {
            let mut arg = t.phase;
            for (k, x) in t.xi.iter().zip(xi) {
                arg += std::f64::consts::TAU * *k as f64 * x;
            }
            for (l, y) in t.eta.iter().zip(eta) {
                arg += std::f64::consts::TAU * *l as f64 * y;
            }
            v += t.amplitude * arg.cos();
        }
        v
    }

    /// Guaranteed range `offset -/+ sum |amplitude|`.
    pub fn bounds(&self) -> (f64, f64) {
        let spread: f64 = self.terms.iter().map(|t| t.amplitude.abs()).sum();
        (self.offset - spread, self.offset + spread)
    }

    /// True when `mu(xi, eta) = mu(eta, xi)` holds term by term.
    pub fn is_symmetric(&self) -> bool {
        let neg = |v: &[i32]| v.iter().map(|x| -x).collect::<Vec<_>>();
        self.terms.iter().all(|t| {
            // the swapped term, or its mirror image under cos(-x) = cos(x)
            let swapped = |u: &ProfileTerm| {
                u.amplitude == t.amplitude
                    && ((u.xi == t.eta && u.eta == t.xi && u.phase == t.phase)
                        || (u.xi == neg(&t.eta) && u.eta == neg(&t.xi) && u.phase == -t.phase))
            };
            self.terms.iter().any(swapped)
        })
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        for t in &self.terms {
            if t.xi.len() != dim || t.eta.len() != dim {
                return Err(config(format!(
                    "profile term frequencies must have {dim} entries, got xi={:?} eta={:?}",
                    t.xi, t.eta
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub model: EnvironmentModel,
    pub dim: usize,
    pub profiles: Vec<PeriodicProfile>,
    /// Refresh rate of the switching chain (1/time).
    #[serde(default)]
    pub switching_rate: f64,
    /// Stationary weights of the chain states; uniform when absent.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Values of `lambda` per chain state (product model only).
    #[serde(default)]
    pub lambda_values: Vec<f64>,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub seed: u64,
}

impl EnvironmentSpec {
    pub fn constant(dim: usize, profile: PeriodicProfile, seed: u64) -> Self {
        let (lo, hi) = profile.bounds();
        Self {
            model: EnvironmentModel::ConstantInTime,
            dim,
            profiles: vec![profile],
            switching_rate: 0.0,
            weights: None,
            lambda_values: Vec::new(),
            alpha_lo: lo,
            alpha_hi: hi,
            seed,
        }
    }

    pub fn markov(dim: usize, profiles: Vec<PeriodicProfile>, rate: f64, seed: u64) -> Self {
        let lo = profiles.iter().map(|p| p.bounds().0).fold(f64::INFINITY, f64::min);
        let hi = profiles.iter().map(|p| p.bounds().1).fold(f64::NEG_INFINITY, f64::max);
        Self {
            model: EnvironmentModel::MarkovSwitching,
            dim,
            profiles,
            switching_rate: rate,
            weights: None,
            lambda_values: Vec::new(),
            alpha_lo: lo,
            alpha_hi: hi,
            seed,
        }
    }

    pub fn product(
        dim: usize,
        profile: PeriodicProfile,
        lambda_values: Vec<f64>,
        rate: f64,
        seed: u64,
    ) -> Self {
        let (plo, phi) = profile.bounds();
        let lmin = lambda_values.iter().copied().fold(f64::INFINITY, f64::min);
        let lmax = lambda_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            model: EnvironmentModel::ProductScalar,
            dim,
            profiles: vec![profile],
            switching_rate: rate,
            weights: None,
            lambda_values,
            alpha_lo: plo * lmin,
            alpha_hi: phi * lmax,
            seed,
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.alpha_lo = lo;
        self.alpha_hi = hi;
        self
    }

    /// Number of states of the driving chain.
    pub fn state_count(&self) -> usize {
        match self.model {
            EnvironmentModel::MarkovSwitching => self.profiles.len(),
            EnvironmentModel::ProductScalar => self.lambda_values.len(),
            EnvironmentModel::ConstantInTime => 1,
        }
    }

    /// Normalized stationary weights of the chain.
    pub fn stationary_weights(&self) -> Vec<f64> {
        let k = self.state_count();
        match &self.weights {
            Some(w) if w.len() == k => {
                let s: f64 = w.iter().sum();
                w.iter().map(|x| x / s).collect()
            }
            _ => vec![1.0 / k as f64; k],
        }
    }

    /// `mu` in chain state `state`.
    pub fn state_mu(&self, state: usize, xi: &[f64], eta: &[f64]) -> f64 {
        match self.model {
            EnvironmentModel::MarkovSwitching => self.profiles[state].eval(xi, eta),
            EnvironmentModel::ProductScalar => {
                self.lambda_values[state] * self.profiles[0].eval(xi, eta)
            }
            EnvironmentModel::ConstantInTime => self.profiles[0].eval(xi, eta),
        }
    }

    /// Stationary mean of `lambda` (product model).
    pub fn lambda_mean(&self) -> f64 {
        self.stationary_weights()
            .iter()
            .zip(&self.lambda_values)
            .map(|(w, l)| w * l)
            .sum()
    }

    /// True when every state profile is symmetric in `(xi, eta)`.
    pub fn is_symmetric(&self) -> bool {
        self.profiles.iter().all(PeriodicProfile::is_symmetric)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_lo > 0.0) {
            return Err(config(format!("alpha_lo must be positive, got {}", self.alpha_lo)));
        }
        if !(self.alpha_lo <= self.alpha_hi) || !self.alpha_hi.is_finite() {
            return Err(config(format!(
                "alpha bounds must satisfy 0 < alpha_lo <= alpha_hi, got [{}, {}]",
                self.alpha_lo, self.alpha_hi
            )));
        }
        if !(1..=2).contains(&self.dim) {
            return Err(config(format!("environment dimension must be 1 or 2, got {}", self.dim)));
        }
        if self.profiles.is_empty() {
            return Err(config("environment needs at least one profile"));
        }
        for p in &self.profiles {
            p.check_dim(self.dim)?;
        }
        let tol = 1e-12;
        match self.model {
            EnvironmentModel::MarkovSwitching => {
                for (k, p) in self.profiles.iter().enumerate() {
                    let (lo, hi) = p.bounds();
                    if lo < self.alpha_lo - tol || hi > self.alpha_hi + tol {
                        return Err(config(format!(
                            "profile {k} range [{lo}, {hi}] leaves [{}, {}]",
                            self.alpha_lo, self.alpha_hi
                        )));
                    }
                }
            }
            EnvironmentModel::ProductScalar => {
                if self.profiles.len() != 1 {
                    return Err(config("product model takes exactly one profile"));
                }
                if self.lambda_values.is_empty() {
                    return Err(config("product model needs lambda_values"));
                }
                let (lo, hi) = self.profiles[0].bounds();
                for &l in &self.lambda_values {
                    if !(l > 0.0) || l * lo < self.alpha_lo - tol || l * hi > self.alpha_hi + tol {
                        return Err(config(format!(
                            "lambda value {l} with profile range [{lo}, {hi}] leaves [{}, {}]",
                            self.alpha_lo, self.alpha_hi
                        )));
                    }
                }
            }
            EnvironmentModel::ConstantInTime => {
                let (lo, hi) = self.profiles[0].bounds();
                if lo < self.alpha_lo - tol || hi > self.alpha_hi + tol {
                    return Err(config(format!(
                        "profile range [{lo}, {hi}] leaves [{}, {}]",
                        self.alpha_lo, self.alpha_hi
                    )));
                }
            }
        }
        if self.state_count() > 1 && !(self.switching_rate > 0.0 && self.switching_rate.is_finite()) {
            return Err(config("switching_rate must be positive for a multi-state chain"));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.state_count() || w.iter().any(|x| !(*x > 0.0)) {
                return Err(config("weights must be positive, one per chain state"));
            }
        }
        Ok(())
    }
}

/// Stream of per-replica generators derived from one master seed.
pub fn replica_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// A realization of the environment on `[t0, t1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentPath {
    pub spec: EnvironmentSpec,
    pub t0: f64,
    pub t1: f64,
    /// Times at which the chain changes state, strictly increasing in `(t0, t1)`.
    pub jump_times: Vec<f64>,
    /// `states[0]` holds on `[t0, jump_times[0])`, `states[k]` after jump `k - 1`.
    pub states: Vec<usize>,
    pub seed_offset: u64,
}

/// Maximal time interval on which the chain state is constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub state: usize,
}

impl EnvironmentPath {
    pub fn state_at(&self, t: f64) -> Result<usize> {
        self.check_time(t)?;
        Ok(self.states[self.jump_times.partition_point(|&s| s <= t)])
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let slack = 1e-12 * (1.0 + self.t1.abs().max(self.t0.abs()));
        if t < self.t0 - slack || t > self.t1 + slack || t.is_nan() {
            return Err(Error::Domain(format!(
                "time {t} outside path horizon [{}, {}]",
                self.t0, self.t1
            )));
        }
        Ok(())
    }

    /// Piecewise-constant segments covering `[a, b]`.
    pub fn segments(&self, a: f64, b: f64) -> Result<Vec<Segment>> {
        self.check_time(a)?;
        self.check_time(b)?;
        let mut out = Vec::new();
        let mut k = self.jump_times.partition_point(|&s| s <= a);
        let mut start = a;
        while k < self.jump_times.len() && self.jump_times[k] < b {
            out.push(Segment {
                start,
                end: self.jump_times[k],
                state: self.states[k],
            });
            start = self.jump_times[k];
            k += 1;
        }
        out.push(Segment {
            start,
            end: b,
            state: self.states[k],
        });
        Ok(out)
    }

    /// Jump times strictly inside `(a, b)`.
    pub fn jumps_between(&self, a: f64, b: f64) -> Vec<f64> {
        self.jump_times
            .iter()
            .copied()
            .filter(|&s| s > a && s < b)
            .collect()
    }

    /// Path `tau_s omega`: evaluating the result at `t` equals evaluating `self` at `t + s`.
    pub fn shifted(&self, s: f64) -> EnvironmentPath {
        let mut p = self.clone();
        p.t0 -= s;
        p.t1 -= s;
        for j in &mut p.jump_times {
            *j -= s;
        }
        p
    }

    /// Fraction of `[t0, t1]` spent in each state.
    pub fn occupation(&self) -> Vec<f64> {
        let mut occ = vec![0.0; self.spec.state_count()];
        for seg in self.segments(self.t0, self.t1).expect("own horizon") {
            occ[seg.state] += seg.end - seg.start;
        }
        let total = self.t1 - self.t0;
        occ.iter_mut().for_each(|o| *o /= total);
        occ
    }
}

/// Draws a path of the chain on `horizon`, started from its stationary law.
pub fn sample_environment(
    spec: &EnvironmentSpec,
    horizon: (f64, f64),
    seed_offset: u64,
) -> Result<EnvironmentPath> {
    spec.validate()?;
    let (t0, t1) = horizon;
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(config(format!("empty or invalid horizon [{t0}, {t1}]")));
    }
    let mut rng = replica_rng(spec.seed, seed_offset);
    let weights = spec.stationary_weights();
    let k = weights.len();
    let mut state = draw(&mut rng, &weights, None);
    let mut jump_times = Vec::new();
    let mut states = vec![state];
    if k > 1 {
        let mut t = t0;
        loop {
            let leave = spec.switching_rate * (1.0 - weights[state]);
            let hold = Exp::new(leave)
                .map_err(|e| config(format!("bad holding rate {leave}: {e}")))?
                .sample(&mut rng);
            t += hold;
            if t >= t1 {
                break;
            }
            state = draw(&mut rng, &weights, Some(state));
            jump_times.push(t);
            states.push(state);
        }
    }
    Ok(EnvironmentPath {
        spec: spec.clone(),
        t0,
        t1,
        jump_times,
        states,
        seed_offset,
    })
}

fn draw<R: Rng>(rng: &mut R, weights: &[f64], exclude: Option<usize>) -> usize {
    let total: f64 = weights
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(_, w)| w)
        .sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        last = i;
        if u < *w {
            return i;
        }
        u -= w;
    }
    last
}

/// `mu_omega(xi, eta; t)`, periodic in both space arguments.
pub fn evaluate_mu(path: &EnvironmentPath, xi: &[f64], eta: &[f64], t: f64) -> Result<f64> {
    let state = path.state_at(t)?;
    Ok(path.spec.state_mu(state, xi, eta))
}

/// Piecewise-constant scalar process `lambda(t)` of the product model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaPath {
    pub t0: f64,
    pub t1: f64,
    pub jump_times: Vec<f64>,
    pub values: Vec<f64>,
}

impl LambdaPath {
    pub fn value(&self, t: f64) -> f64 {
        self.values[self.jump_times.partition_point(|&s| s <= t)]
    }

    /// Exact integral of `lambda` over `[a, b]` within the horizon.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let mut acc = 0.0;
        let mut start = a;
        let mut k = self.jump_times.partition_point(|&s| s <= a);
        while k < self.jump_times.len() && self.jump_times[k] < b {
            acc += self.values[k] * (self.jump_times[k] - start);
            start = self.jump_times[k];
            k += 1;
        }
        acc + self.values[k] * (b - start)
    }

    pub fn time_average(&self) -> f64 {
        self.integral(self.t0, self.t1) / (self.t1 - self.t0)
    }
}

/// Samples `lambda(t)` for the product model.
pub fn sample_lambda(
    spec: &EnvironmentSpec,
    horizon: (f64, f64),
    seed_offset: u64,
) -> Result<LambdaPath> {
    if spec.model != EnvironmentModel::ProductScalar {
        return Err(config("sample_lambda requires the product_scalar model"));
    }
    Ok(lambda_of(&sample_environment(spec, horizon, seed_offset)?))
}

/// Projects a product-model path onto its scalar factor.
pub fn lambda_of(path: &EnvironmentPath) -> LambdaPath {
    LambdaPath {
        t0: path.t0,
        t1: path.t1,
        jump_times: path.jump_times.clone(),
        values: path
            .states
            .iter()
            .map(|&s| path.spec.lambda_values[s])
            .collect(),
    }
}
