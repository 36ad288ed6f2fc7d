//! Executes experiment files and writes their artifacts.
//!
//! A run directory holds `summary.json`, kind-specific CSV files and
//! `manifest.json`. Nothing time- or host-dependent is written, so two runs
//! of the same file and seed produce byte-identical directories.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::cell::{CellSolver, EffectiveModel};
use crate::config::{render, ExperimentConfig, ExperimentKind, DIALECT};
use crate::eps_sim::{cell_for, eps_sweep, product_case_check, time_change_deviation};
use crate::error::{Error, Result};
use crate::stochastics::{clt_check, law_limit_check, sample_g0_paths};

/// Environment variable naming the root under which run directories are created.
pub const OUTPUT_ROOT_ENV: &str = "CONVHOM_OUTPUT_ROOT";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output: Option<PathBuf>,
    /// Output root; usually read from [`OUTPUT_ROOT_ENV`].
    pub output_root: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dialect: String,
    pub version: String,
    pub kind: ExperimentKind,
    pub config_file: String,
    pub config_sha256: String,
    pub seed: u64,
    /// Resolved configuration, defaults included.
    pub config: ExperimentConfig,
    pub artifacts: Vec<ArtifactEntry>,
}

/// In-memory result of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifacts {
    pub summary: Value,
    /// `(file name, contents)` of the CSV outputs.
    pub tables: Vec<(String, String)>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub summary: Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Parses and validates a file; diagnostics become one [`Error::Config`].
pub fn load_validated(path: &Path) -> Result<(ExperimentConfig, String)> {
    let (cfg, text) = ExperimentConfig::load(path)?;
    let diags = cfg.validate(&text);
    if diags.is_empty() {
        Ok((cfg, text))
    } else {
        Err(Error::Config(render(path, &diags)))
    }
}

fn output_dir(cfg: &ExperimentConfig, config_path: &Path, opts: &RunOptions) -> PathBuf {
    if let Some(out) = &opts.output {
        return out.clone();
    }
    let root = opts.output_root.clone().unwrap_or_else(|| PathBuf::from("runs"));
    match &cfg.output {
        Some(o) if Path::new(o).is_absolute() => PathBuf::from(o),
        Some(o) => root.join(o),
        None => root.join(config_path.file_stem().unwrap_or_default()),
    }
}

fn csv<F>(f: F) -> Result<String>
where
    F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Inconsistency(e.to_string()))
}

fn effective(cfg: &ExperimentConfig, cell: &CellSolver) -> Result<EffectiveModel> {
    cell.effective_model(&cfg.effective.options())
}

fn one_d_cell(cfg: &ExperimentConfig) -> Result<CellSolver> {
    let template = cfg.eps_problem(cfg.eps.epsilons[0]);
    cell_for(&template, cfg.cell.clone())
}

fn run_clt(cfg: &ExperimentConfig, cell: &CellSolver, model: &EffectiveModel) -> Result<(Value, Vec<(String, String)>)> {
    let k = &cfg.clt;
    let paths = sample_g0_paths(cell, Some(&model.b), k.epsilon, &k.times, k.replicas, k.first_stream)?;
    let report = clt_check(&paths, &model.sigma_sq, &model.sigma_sq_std_error, &k.tolerances)?;
    let mut tables = Vec::new();
    if k.write_paths {
        tables.push(("g0_paths.csv".into(), csv(|w| paths.write_csv(w))?));
    }
    Ok((serde_json::to_value(report)?, tables))
}

/// Runs the experiment described by `cfg` in the current rayon pool.
pub fn execute(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let mut tables = Vec::new();
    let summary = match cfg.kind {
        ExperimentKind::Cell => {
            let cell = CellSolver::new(&cfg.kernel()?, &cfg.spec(), cfg.cell.clone())?;
            let w = &cfg.window;
            let path = cell.sample_path(w.start, w.end, w.replica)?;
            let sol = cell.solve_window(&path, (w.start, w.end), &w.records, w.kappa2)?;
            let d = cell.dim();
            tables.push((
                "beta.csv".into(),
                series_csv(sol.beta.samples(), &(0..d).map(|i| format!("beta{i}")).collect::<Vec<_>>()),
            ));
            tables.push((
                "theta_inst.csv".into(),
                series_csv(
                    sol.theta_inst.samples(),
                    &(0..d * d).map(|i| format!("theta{}{}", i / d, i % d)).collect::<Vec<_>>(),
                ),
            ));
            let mut fields = String::from("t,quantity,index,value\n");
            for (name, traj) in [("p_inf", &sol.p_inf), ("kappa1", &sol.kappa1)] {
                for (t, f) in traj.times.iter().zip(&traj.fields) {
                    for (i, v) in f.values.iter().enumerate() {
                        let _ = writeln!(fields, "{t},{name},{i},{v:.15e}");
                    }
                }
            }
            tables.push(("fields.csv".into(), fields));
            json!({
                "window": [w.start, w.end],
                "relax_time": sol.relax_time,
                "beta_mean": sol.beta.mean(),
                "theta_inst_mean": sol.theta_inst.mean(),
                "diagnostics": sol.diagnostics,
            })
        }
        ExperimentKind::Effective => {
            let cell = CellSolver::new(&cfg.kernel()?, &cfg.spec(), cfg.cell.clone())?;
            json!({ "effective": effective(cfg, &cell)? })
        }
        ExperimentKind::EpsSweep => {
            let cell = one_d_cell(cfg)?;
            let model = effective(cfg, &cell)?;
            let sweep = eps_sweep(&cfg.eps_problem(cfg.eps.epsilons[0]), &cfg.eps.epsilons, &cell, &model)?;
            tables.push(("eps_errors.csv".into(), csv(|w| sweep.write_csv(w))?));
            json!({
                "effective": model,
                "epsilons": cfg.eps.epsilons,
                "sup_errors": sweep.sup_errors,
                "ratios": sweep.ratios,
                "strictly_decreasing": sweep.strictly_decreasing,
            })
        }
        ExperimentKind::Clt => {
            let cell = CellSolver::new(&cfg.kernel()?, &cfg.spec(), cfg.cell.clone())?;
            let model = effective(cfg, &cell)?;
            let (report, t) = run_clt(cfg, &cell, &model)?;
            tables.extend(t);
            json!({ "effective": model, "clt": report })
        }
        ExperimentKind::ProductCase => {
            let mut checks = Vec::new();
            let mut table = String::from("epsilon,t,s,delta,mismatch\n");
            for &eps in &cfg.eps.epsilons {
                let c = product_case_check(&cfg.eps_problem(eps))?;
                for k in 0..c.times.len() {
                    let _ = writeln!(
                        table,
                        "{eps},{},{:.15e},{:.15e},{:.6e}",
                        c.times[k], c.time_change[k], c.delta[k], c.mismatch[k]
                    );
                }
                checks.push(json!({ "epsilon": eps, "max_mismatch": c.max_mismatch }));
            }
            tables.push(("product.csv".into(), table));
            let rms = time_change_deviation(
                &cfg.spec(),
                &cfg.eps.epsilons,
                cfg.eps.final_time,
                cfg.eps.samples,
                cfg.product.deviation_seeds,
            )?;
            json!({
                "checks": checks,
                "max_mismatch": checks.iter().filter_map(|c| c["max_mismatch"].as_f64()).fold(0.0, f64::max),
                "deviation_rms": rms,
                "deviation_decreasing": rms.windows(2).all(|w| w[1] < w[0]),
            })
        }
        ExperimentKind::FullPipeline => {
            let cell = one_d_cell(cfg)?;
            let model = effective(cfg, &cell)?;
            let template = cfg.eps_problem(cfg.eps.epsilons[0]);
            let sweep = eps_sweep(&template, &cfg.eps.epsilons, &cell, &model)?;
            tables.push(("eps_errors.csv".into(), csv(|w| sweep.write_csv(w))?));
            let (clt, t) = run_clt(cfg, &cell, &model)?;
            tables.extend(t);
            let law = match &cfg.law {
                Some(l) => Some(law_limit_check(&template, &model, &l.epsilons, &l.functionals, l.replicas, l.limit_samples)?),
                None => None,
            };
            json!({
                "effective": model,
                "eps_sweep": {
                    "epsilons": cfg.eps.epsilons,
                    "sup_errors": sweep.sup_errors,
                    "ratios": sweep.ratios,
                    "strictly_decreasing": sweep.strictly_decreasing,
                },
                "clt": clt,
                "law": law,
            })
        }
    };
    Ok(Artifacts { summary, tables })
}

fn series_csv<'a>(samples: impl Iterator<Item = (f64, &'a [f64])>, cols: &[String]) -> String {
    let mut s = format!("t,{}\n", cols.join(","));
    for (t, v) in samples {
        let _ = write!(s, "{t}");
        for x in v {
            let _ = write!(s, ",{x:.15e}");
        }
        s.push('\n');
    }
    s
}

/// Loads, validates and executes `config_path`, then writes the run directory.
pub fn run(config_path: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    let (mut cfg, text) = load_validated(config_path)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    let artifacts = match opts.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
            .install(|| execute(&cfg))?,
        None => execute(&cfg)?,
    };
    let dir = output_dir(&cfg, config_path, opts);
    std::fs::create_dir_all(&dir)?;
    let mut entries = Vec::new();
    let summary_text = serde_json::to_string_pretty(&artifacts.summary)? + "\n";
    for (name, body) in std::iter::once(("summary.json".to_string(), summary_text)).chain(artifacts.tables) {
        std::fs::write(dir.join(&name), &body)?;
        entries.push(ArtifactEntry {
            sha256: sha256_hex(body.as_bytes()),
            name,
        });
    }
    let manifest = Manifest {
        dialect: DIALECT.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        kind: cfg.kind,
        config_file: config_path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        config_sha256: sha256_hex(text.as_bytes()),
        seed: cfg.seed,
        config: cfg,
        artifacts: entries,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(RunOutcome {
        dir,
        manifest,
        summary: artifacts.summary,
    })
}

fn fmt_vec(v: &Value) -> String {
    match v {
        Value::Array(a) => format!(
            "[{}]",
            a.iter().map(fmt_vec).collect::<Vec<_>>().join(", ")
        ),
        Value::Number(n) => n.as_f64().map_or_else(|| n.to_string(), |x| format!("{x:.6e}")),
        other => other.to_string(),
    }
}

/// Human-readable account of a run directory. Fails with an I/O error when
/// files are missing and with an inconsistency when an artifact hash differs.
pub fn report(dir: &Path) -> Result<String> {
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    for a in &manifest.artifacts {
        let body = std::fs::read(dir.join(&a.name))?;
        if sha256_hex(&body) != a.sha256 {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{} does not match its recorded hash", a.name),
            )));
        }
    }
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json"))?)?;
    let mut out = String::new();
    let _ = writeln!(out, "run      {}", dir.display());
    let _ = writeln!(out, "kind     {:?}", manifest.kind);
    let _ = writeln!(out, "config   {} (sha256 {})", manifest.config_file, &manifest.config_sha256[..16]);
    let _ = writeln!(out, "seed     {}", manifest.seed);
    let _ = writeln!(out, "version  {} / {}", manifest.version, manifest.dialect);
    let rows: [(&str, &str); 16] = [
        ("b", "/effective/b"),
        ("b s.e.", "/effective/b_std_error"),
        ("Theta", "/effective/theta"),
        ("Theta s.e.", "/effective/theta_std_error"),
        ("sigma sigma*", "/effective/sigma_sq"),
        ("min eig Theta", "/effective/theta_min_eigenvalue"),
        ("beta mean", "/beta_mean"),
        ("Theta_inst mean", "/theta_inst_mean"),
        ("min eig Theta_inst", "/diagnostics/theta_min_eigenvalue"),
        ("sup errors", "/sup_errors"),
        ("sup errors", "/eps_sweep/sup_errors"),
        ("clt pass", "/clt/pass"),
        ("law pass", "/law/pass"),
        ("max mismatch", "/max_mismatch"),
        ("deviation rms", "/deviation_rms"),
        ("decreasing", "/strictly_decreasing"),
    ];
    for (label, ptr) in rows {
        if let Some(v) = summary.pointer(ptr).filter(|v| !v.is_null()) {
            let _ = writeln!(out, "{label:<20} {}", fmt_vec(v));
        }
    }
    let _ = writeln!(out, "artifacts");
    for a in &manifest.artifacts {
        let _ = writeln!(out, "  {:<16} {}", a.name, &a.sha256[..16]);
    }
    Ok(out)
}
