//! Experiment configuration files (TOML) and their validation.
//!
//! Dialect `toml-v1`: a top-level `kind` and `seed`, the tables `[kernel]`,
//! `[environment]` (with `[[environment.profiles]]`), `[cell]`, and the
//! kind-specific tables `[window]`, `[effective]`, `[eps]`, `[clt]`, `[law]`,
//! `[product]`. Every table except `[kernel]` and `[environment]` is optional
//! and falls back to defaults.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cell::{CellConfig, EffectiveOptions};
use crate::env::{EnvironmentModel, EnvironmentSpec, PeriodicProfile};
use crate::eps_sim::{EpsProblem, GaussianBump};
use crate::error::{Error, Result};
use crate::evolution::IntegratorConfig;
use crate::kernels::{DispersalKernel, KernelFamily, KernelSpec};
use crate::stochastics::{CltTolerances, Functional};

pub const DIALECT: &str = "toml-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Cell,
    Effective,
    EpsSweep,
    Clt,
    ProductCase,
    FullPipeline,
}

/// Environment table; bounds default to the guaranteed range of the profiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub model: EnvironmentModel,
    #[serde(default = "one")]
    pub dim: usize,
    pub profiles: Vec<PeriodicProfile>,
    #[serde(default)]
    pub switching_rate: f64,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda_values: Vec<f64>,
    #[serde(default)]
    pub alpha_lo: Option<f64>,
    #[serde(default)]
    pub alpha_hi: Option<f64>,
}

fn one() -> usize {
    1
}

impl EnvironmentConfig {
    pub fn spec(&self, seed: u64) -> EnvironmentSpec {
        let mut spec = match self.model {
            EnvironmentModel::MarkovSwitching => {
                EnvironmentSpec::markov(self.dim, self.profiles.clone(), self.switching_rate, seed)
            }
            EnvironmentModel::ProductScalar => EnvironmentSpec::product(
                self.dim,
                self.profiles.first().cloned().unwrap_or_else(|| PeriodicProfile::constant(0.0)),
                self.lambda_values.clone(),
                self.switching_rate,
                seed,
            ),
            EnvironmentModel::ConstantInTime => EnvironmentSpec::constant(
                self.dim,
                self.profiles.first().cloned().unwrap_or_else(|| PeriodicProfile::constant(0.0)),
                seed,
            ),
        };
        spec.profiles = self.profiles.clone();
        spec.weights = self.weights.clone();
        if let Some(lo) = self.alpha_lo {
            spec.alpha_lo = lo;
        }
        if let Some(hi) = self.alpha_hi {
            spec.alpha_hi = hi;
        }
        spec
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub start: f64,
    pub end: f64,
    pub records: Vec<f64>,
    pub kappa2: bool,
    pub replica: u64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            start: 0.0,
            end: 20.0,
            records: vec![0.0, 10.0, 20.0],
            kappa2: true,
            replica: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffectiveConfig {
    pub drift_horizon: f64,
    pub theta_horizon: f64,
    pub replicas: usize,
}

impl Default for EffectiveConfig {
    fn default() -> Self {
        Self {
            drift_horizon: 2000.0,
            theta_horizon: 2000.0,
            replicas: 1,
        }
    }
}

impl EffectiveConfig {
    pub fn options(&self) -> EffectiveOptions {
        EffectiveOptions {
            drift_horizon: self.drift_horizon,
            theta_horizon: self.theta_horizon,
            replicas: self.replicas,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsConfig {
    pub epsilons: Vec<f64>,
    pub box_length: f64,
    /// Defaults to `cell.n`.
    pub points_per_cell: Option<usize>,
    pub width: f64,
    pub center: Option<f64>,
    pub final_time: f64,
    pub samples: usize,
    pub dt_fraction: f64,
    /// Absolute fast-time step; overrides `dt_fraction` when present.
    pub dt: Option<f64>,
    pub seed_offset: u64,
}

impl Default for EpsConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.2, 0.1, 0.05],
            box_length: 12.0,
            points_per_cell: None,
            width: 0.4,
            center: None,
            final_time: 0.5,
            samples: 10,
            dt_fraction: 1.0,
            dt: None,
            seed_offset: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CltConfig {
    pub epsilon: f64,
    pub times: Vec<f64>,
    pub replicas: usize,
    pub first_stream: u64,
    pub write_paths: bool,
    pub tolerances: CltTolerances,
}

impl Default for CltConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            times: vec![0.0, 0.5, 1.0],
            replicas: 2000,
            first_stream: 1_000_000,
            write_paths: false,
            tolerances: CltTolerances::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LawConfig {
    pub epsilons: Vec<f64>,
    pub replicas: usize,
    pub limit_samples: usize,
    pub functionals: Vec<Functional>,
}

impl Default for LawConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.1, 0.05],
            replicas: 500,
            limit_samples: 20000,
            functionals: vec![Functional::PointValue { x: 6.0 }],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProductConfig {
    /// Seeds of the time-change deviation statistic.
    pub deviation_seeds: u64,
}

impl Default for ProductConfig {
    fn default() -> Self {
        Self { deviation_seeds: 200 }
    }
}

/// A parsed experiment file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    #[serde(default)]
    pub output: Option<String>,
    pub kernel: KernelSpec,
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub cell: CellConfig,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub effective: EffectiveConfig,
    #[serde(default)]
    pub eps: EpsConfig,
    #[serde(default)]
    pub clt: CltConfig,
    #[serde(default)]
    pub law: Option<LawConfig>,
    #[serde(default)]
    pub product: ProductConfig,
}

/// One validation finding, located in the source file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: usize,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}: {}", self.line, self.field, self.message)
    }
}

/// Line of `key` inside `[table]` (dotted `table.key`), falling back to the
/// table header and then to line 1.
pub fn line_of(text: &str, field: &str) -> usize {
    let (table, key) = match field.rsplit_once('.') {
        Some((t, k)) => (t, k),
        None => ("", field),
    };
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == table && header.is_none() {
                header = Some(i + 1);
            }
            continue;
        }
        if current == table {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return i + 1;
                }
            }
        }
    }
    header.unwrap_or(1)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, Vec<Diagnostic>> {
        toml::from_str::<Self>(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| 1 + text[..s.start.min(text.len())].matches('\n').count())
                .unwrap_or(1);
            vec![Diagnostic {
                line,
                field: "syntax".into(),
                message: e.message().to_string(),
            }]
        })
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)?;
        match Self::from_toml(&text) {
            Ok(cfg) => Ok((cfg, text)),
            Err(d) => Err(Error::Config(render(path, &d))),
        }
    }

    pub fn spec(&self) -> EnvironmentSpec {
        self.environment.spec(self.seed)
    }

    pub fn kernel(&self) -> Result<DispersalKernel> {
        DispersalKernel::new(self.kernel.clone(), self.environment.dim)
    }

    pub fn points_per_cell(&self) -> usize {
        self.eps.points_per_cell.unwrap_or(self.cell.n)
    }

    /// Rescaled problem for one epsilon.
    pub fn eps_problem(&self, epsilon: f64) -> EpsProblem {
        let spec = self.spec();
        let dt_fraction = match self.eps.dt {
            Some(dt) => dt / IntegratorConfig::stability_cap(spec.alpha_hi),
            None => self.eps.dt_fraction,
        };
        EpsProblem {
            epsilon,
            box_length: self.eps.box_length,
            points_per_cell: self.points_per_cell(),
            initial: GaussianBump {
                center: self.eps.center,
                width: self.eps.width,
            },
            final_time: self.eps.final_time,
            samples: self.eps.samples,
            dt_fraction,
            kernel: self.kernel.clone(),
            environment: spec,
            seed_offset: self.eps.seed_offset,
        }
    }

    fn uses_eps(&self) -> bool {
        matches!(
            self.kind,
            ExperimentKind::EpsSweep | ExperimentKind::ProductCase | ExperimentKind::FullPipeline
        )
    }

    /// Cross-field checks that need no computation; `text` locates findings.
    pub fn validate(&self, text: &str) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut push = |field: &str, message: String| {
            out.push(Diagnostic {
                line: line_of(text, field),
                field: field.to_string(),
                message,
            })
        };
        let spec = self.spec();
        if let Err(e) = spec.validate() {
            push("environment.model", e.to_string());
        }
        let centered = self.kernel.family == KernelFamily::Gaussian && self.kernel.center.is_empty();
        if !centered && self.kernel.center.len() != self.environment.dim {
            push(
                "kernel.center",
                format!("has {} entries for dimension {}", self.kernel.center.len(), self.environment.dim),
            );
        } else if let Err(e) = self.kernel() {
            push("kernel.width", e.to_string());
        }
        let c = &self.cell;
        for (name, v) in [
            ("tail_tolerance", c.tail_tolerance),
            ("tol", c.tol),
            ("compat_tol", c.compat_tol),
            ("cov_tail", c.cov_tail),
            ("relax_time", c.relax_time),
            ("chunk_length", c.chunk_length),
            ("bin_width", c.bin_width),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                push(&format!("cell.{name}"), format!("must be positive, got {v}"));
            }
        }
        if !(c.dt_fraction > 0.0 && c.dt_fraction <= 1.0) {
            push(
                "cell.dt_fraction",
                format!("must lie in (0, 1]; the finest step is dt_fraction times {:.6}", IntegratorConfig::stability_cap(spec.alpha_hi) / 4.0),
            );
        }
        if c.n < 4 {
            push("cell.n", format!("must be at least 4, got {}", c.n));
        }
        if self.environment.dim == 2 && c.n > 64 {
            push("cell.n", "two-dimensional grids are capped at n = 64".into());
        }
        if self.kind == ExperimentKind::Cell {
            let w = &self.window;
            if !(w.end > w.start) {
                push("window.end", format!("window [{}, {}] is empty", w.start, w.end));
            }
            if w.records.iter().any(|&t| t < w.start || t > w.end) {
                push("window.records", "record times must lie inside the window".into());
            }
        }
        let needs_effective = !matches!(self.kind, ExperimentKind::Cell | ExperimentKind::ProductCase);
        if needs_effective {
            let e = &self.effective;
            if !(e.drift_horizon >= 8.0 * c.bin_width) {
                push("effective.drift_horizon", format!("must hold at least 8 bins of width {}", c.bin_width));
            }
            if !(e.theta_horizon > 0.0) {
                push("effective.theta_horizon", "must be positive".into());
            }
            if e.replicas == 0 {
                push("effective.replicas", "must be at least 1".into());
            }
        }
        if self.uses_eps() {
            let e = &self.eps;
            if e.epsilons.is_empty() {
                push("eps.epsilons", "must not be empty".into());
            }
            if e.epsilons.iter().any(|&x| !(x > 0.0)) {
                push("eps.epsilons", "must be positive".into());
            }
            if e.epsilons.windows(2).any(|w| w[1] >= w[0]) {
                push("eps.epsilons", "must be strictly decreasing".into());
            }
            for &eps in &e.epsilons {
                let r = e.box_length / eps;
                if eps > 0.0 && (r - r.round()).abs() > 1e-9 * r.max(1.0) {
                    push(
                        "eps.box_length",
                        format!("L = {} is not an integer multiple of epsilon = {eps} (L/eps = {r:.6})", e.box_length),
                    );
                }
            }
            let ppc = self.points_per_cell();
            if ppc < 8 {
                push("eps.points_per_cell", format!("{ppc} grid points per cell, at least 8 are required"));
            }
            if ppc != c.n {
                push("eps.points_per_cell", format!("must equal cell.n = {} so both problems share one grid", c.n));
            }
            if self.environment.dim != 1 {
                push("environment.dim", "the rescaled problem is one-dimensional".into());
            }
            let cap = IntegratorConfig::stability_cap(spec.alpha_hi);
            match e.dt {
                Some(dt) if !(dt > 0.0 && dt <= cap) => push(
                    "eps.dt",
                    format!("time step {dt} exceeds the stability cap {cap:.6} = 0.1 / (2 alpha_hi)"),
                ),
                None if !(e.dt_fraction > 0.0 && e.dt_fraction <= 1.0) => push(
                    "eps.dt_fraction",
                    format!("must lie in (0, 1] (stability cap {cap:.6})"),
                ),
                _ => {}
            }
            if !(e.final_time > 0.0) || e.samples == 0 {
                push("eps.final_time", "final time and sample count must be positive".into());
            }
            if !(e.width > 0.0) {
                push("eps.width", "must be positive".into());
            } else if let Some(&eps) = e.epsilons.first() {
                let problem = self.eps_problem(eps);
                if problem.cells().is_ok() && ppc >= 8 && self.environment.dim == 1 {
                    if let Err(Error::Domain(m)) = problem.validate() {
                        push("eps.width", m);
                    }
                }
            }
        }
        if self.kind == ExperimentKind::ProductCase && spec.model != EnvironmentModel::ProductScalar {
            push("environment.model", "product_case needs the product_scalar model".into());
        }
        if self.kind == ExperimentKind::Clt || (self.kind == ExperimentKind::FullPipeline) {
            let k = &self.clt;
            if k.replicas < 100 {
                push("clt.replicas", format!("at least 100 replicas are required, got {}", k.replicas));
            }
            if !(k.epsilon > 0.0) {
                push("clt.epsilon", "must be positive".into());
            }
            if k.times.is_empty() || k.times[0] < 0.0 || k.times.windows(2).any(|w| w[1] <= w[0]) {
                push("clt.times", "must be nonnegative and strictly increasing".into());
            }
        }
        if let Some(law) = &self.law {
            if law.epsilons.windows(2).any(|w| w[1] >= w[0]) || law.epsilons.is_empty() {
                push("law.epsilons", "must be nonempty and strictly decreasing".into());
            }
            for &eps in &law.epsilons {
                let r = self.eps.box_length / eps;
                if (r - r.round()).abs() > 1e-9 * r.max(1.0) {
                    push("law.epsilons", format!("L/eps = {r:.6} is not an integer for epsilon = {eps}"));
                }
            }
            if law.replicas < 2 || law.limit_samples < 2 {
                push("law.replicas", "need at least two replicas and limit samples".into());
            }
        }
        out.sort_by_key(|d| d.line);
        out
    }
}

/// `file:line: field: message` lines.
pub fn render(path: &Path, diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| format!("{}:{}: {}: {}", path.display(), d.line, d.field, d.message))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
kind = "eps_sweep"
seed = 3

[kernel]
family = "gaussian"
center = [0.0]
width = 0.3

[environment]
model = "constant_in_time"

[[environment.profiles]]
offset = 1.0

[cell]
n = 16

[eps]
epsilons = [0.2, 0.1]
box_length = 12.0
"#;

    #[test]
    fn valid_config_has_no_diagnostics() {
        let cfg = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!(cfg.validate(BASE), vec![]);
    }

    #[test]
    fn integrality_violation_located() {
        let text = BASE.replace("box_length = 12.0", "box_length = 2.0").replace("[0.2, 0.1]", "[0.3]");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let d = cfg.validate(&text);
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].field, "eps.box_length");
        assert_eq!(d[0].line, line_of(&text, "eps.box_length"));
        assert!(text.lines().nth(d[0].line - 1).unwrap().contains("box_length"));
    }

    #[test]
    fn step_above_cap_reports_cap() {
        let text = format!("{BASE}dt = 0.5\n");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let d = cfg.validate(&text);
        assert_eq!(d.len(), 1);
        assert!(d[0].message.contains("0.050000"), "{}", d[0].message);
    }

    #[test]
    fn syntax_error_has_line() {
        let text = BASE.replace("width = 0.3", "width = ");
        let d = ExperimentConfig::from_toml(&text).unwrap_err();
        assert_eq!(d[0].line, 8);
    }
}
