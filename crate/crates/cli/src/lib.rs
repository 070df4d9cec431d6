//! Command implementations for the `voltgp` binary.
//!
//! Every command returns a [`CliError`] that knows its exit code: 1 for an
//! invalid scenario, 2 for a failure while running it.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use voltgp_core::harness::{
    compare_bound, final_quartile_mean, fmt_float, run_ensemble, EnsembleOptions, EnsembleResult,
};
use voltgp_core::dynamics::expected_drift_bound;
use voltgp_core::scenario::{apply_override, PreparedScenario, Scenario};
use voltgp_core::Error;

/// Environment variable holding the worker count for ensembles.
pub const WORKERS_ENV: &str = "VOLTGP_WORKERS";

pub const SUMMARY_HEADER: &str = "param_value,steady_state_mismatch,steady_state_tracking,bound,ratio";

#[derive(Debug)]
pub enum CliError {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(e) => write!(f, "invalid scenario: {e:#}"),
            CliError::Runtime(e) => write!(f, "run failed: {e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn invalid(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Invalid(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

/// Core errors raised while running an ensemble are runtime failures;
/// everything else means the scenario itself is bad.
fn classify(e: Error) -> CliError {
    match e {
        Error::Episode { .. } | Error::Io(_) => runtime(e),
        other => invalid(other),
    }
}

/// Git-style content hash: SHA-256 over `"blob <len>\0" + bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// A scenario document together with where it came from.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub source: PathBuf,
    /// Directory for resolving relative schedule files.
    pub base_dir: PathBuf,
    pub doc: Value,
    pub overrides: Vec<String>,
    /// Set when the input was a run manifest rather than a scenario.
    pub from_manifest: bool,
}

impl LoadedScenario {
    /// Reads a scenario file or a run manifest (which embeds its resolved
    /// scenario).
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))
            .map_err(invalid)?;
        let doc: Value = serde_json::from_str(&text)
            .with_context(|| format!("{} is not valid JSON", path.display()))
            .map_err(invalid)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if let Ok(manifest) = serde_json::from_value::<RunManifest>(doc.clone()) {
            return Ok(LoadedScenario {
                source: path.to_path_buf(),
                base_dir: PathBuf::from(&manifest.scenario_dir),
                doc: manifest.scenario,
                overrides: Vec::new(),
                from_manifest: true,
            });
        }
        Ok(LoadedScenario {
            source: path.to_path_buf(),
            base_dir: dir,
            doc,
            overrides: Vec::new(),
            from_manifest: false,
        })
    }

    /// Applies `key=value` overrides with dotted key paths.
    pub fn apply(&mut self, overrides: &[String]) -> CliResult<()> {
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| invalid(anyhow!("override '{item}' is not of the form key=value")))?;
            apply_override(&mut self.doc, key.trim(), value.trim()).map_err(invalid)?;
            self.overrides.push(item.clone());
        }
        Ok(())
    }

    pub fn prepare(&self) -> CliResult<PreparedScenario> {
        let scenario = Scenario::from_value(self.doc.clone()).map_err(invalid)?;
        scenario.prepare(Some(&self.base_dir)).map_err(classify)
    }

    /// Canonical resolved scenario text (sorted keys) and its hash.
    pub fn canonical(&self, prepared: &PreparedScenario) -> (Value, String) {
        let value = prepared.scenario.to_value();
        let text = serde_json::to_string(&value).expect("scenario serializes");
        (value, content_hash(text.as_bytes()))
    }

    pub fn stem(&self) -> String {
        self.source
            .file_stem()
            .map(|s| s.to_string_lossy().trim_end_matches(".manifest").to_string())
            .unwrap_or_else(|| "scenario".into())
    }
}

/// Worker count: explicit flag, else the environment variable, else 0
/// (rayon default).
pub fn resolve_workers(flag: Option<usize>) -> CliResult<usize> {
    if let Some(w) = flag {
        return Ok(w);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| invalid(anyhow!("{WORKERS_ENV}='{v}' is not a worker count"))),
        Err(_) => Ok(0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidateReport {
    pub n: usize,
    pub c: f64,
    pub m_lip: f64,
    pub sync_bound: f64,
    pub dynamic_bound: f64,
    pub classical_bound: f64,
    pub epsilon: f64,
    pub warnings: Vec<String>,
}

impl fmt::Display for ValidateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "N          = {}", self.n)?;
        writeln!(f, "C          = {}", self.c)?;
        writeln!(f, "M_lip      = {}", self.m_lip)?;
        writeln!(f, "2/M        = {}", self.sync_bound)?;
        writeln!(f, "2/(C+M)    = {}", self.dynamic_bound)?;
        writeln!(f, "classical  = {}", self.classical_bound)?;
        writeln!(f, "epsilon    = {}", self.epsilon)?;
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

pub fn cmd_validate(path: &Path) -> CliResult<ValidateReport> {
    let loaded = LoadedScenario::read(path)?;
    let p = loaded.prepare()?;
    Ok(ValidateReport {
        n: p.n(),
        c: p.c(),
        m_lip: p.m_lip(),
        sync_bound: p.bounds.sync,
        dynamic_bound: p.bounds.dynamic,
        classical_bound: p.bounds.classical,
        epsilon: p.epsilon,
        warnings: p.warnings.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario_path: String,
    pub scenario_dir: String,
    pub scenario_hash: String,
    pub overrides: Vec<String>,
    /// Fully resolved scenario; running the manifest replays it.
    pub scenario: Value,
    pub resolved: Value,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub csv: String,
    pub sidecar: String,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub overrides: Vec<String>,
    pub out_dir: PathBuf,
    pub workers: Option<usize>,
    pub beta_prime: Option<f64>,
    /// File stem for outputs; defaults to the scenario's.
    pub stem: Option<String>,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            overrides: Vec::new(),
            out_dir: out_dir.into(),
            workers: None,
            beta_prime: None,
            stem: None,
        }
    }
}

/// Outcome of one ensemble, shared by `run` and `sweep`.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub result: EnsembleResult,
    pub steady_mismatch: f64,
    pub steady_tracking: f64,
    pub steady_bound: Option<f64>,
    pub ratio: Option<f64>,
}

fn resolved_summary(p: &PreparedScenario, result: &EnsembleResult) -> (Value, Option<f64>, Option<f64>) {
    let (steady_bound, ratio, max_step_ratio) = match &result.bound_params {
        Some(bp) => match compare_bound(result, bp) {
            Ok(report) => (Some(report.steady_bound), report.ratio, Some(report.max_step_ratio)),
            Err(_) => (None, None, None),
        },
        None => (None, None, None),
    };
    // B1 is only meaningful for the scalar-alpha model.
    let dynamics = &p.sim.dynamics;
    let b1 = (dynamics.transition.is_none() && dynamics.sigma2 > 0.0)
        .then(|| expected_drift_bound(dynamics, &p.sim.mat.d));
    let value = json!({
        "n": p.n(),
        "c": p.c(),
        "m_lip": p.m_lip(),
        "epsilon": p.epsilon,
        "step_size_bounds": p.bounds,
        "beta_prime": result.bound_params.map(|bp| bp.beta_prime_value()),
        "b2_max": result.b2.max,
        "b2_mean": result.b2.mean,
        "b1": b1,
        "b2_mean_over_b1": b1.map(|b1| result.b2.mean / b1),
        "initial_tracking_err": result.initial_err,
        "steady_state_bound": steady_bound,
        "steady_state_ratio": ratio,
        "max_step_ratio": max_step_ratio,
        "diverged_realizations": result.diverged,
        "warnings": p.warnings,
    });
    (value, steady_bound, ratio)
}

/// Runs one ensemble and writes `<stem>.csv`, `<stem>.json` (sidecar) and
/// `<stem>.manifest.json` under the output directory.
pub fn run_loaded(loaded: &LoadedScenario, opts: &RunOptions) -> CliResult<RunOutcome> {
    let started = Instant::now();
    let mut loaded = loaded.clone();
    if let Some(b) = opts.beta_prime {
        loaded.apply(&[format!("beta_prime={b}")])?;
    }
    loaded.apply(&opts.overrides)?;
    let prepared = loaded.prepare()?;
    let workers = resolve_workers(opts.workers)?;
    let (scenario_value, hash) = loaded.canonical(&prepared);

    let ens = EnsembleOptions {
        realizations: prepared.scenario.realizations,
        master_seed: prepared.scenario.master_seed,
        workers,
        beta_prime: prepared.beta_prime,
    };
    let result = run_ensemble(&prepared.sim, &ens).map_err(classify)?;
    let (resolved, steady_bound, ratio) = resolved_summary(&prepared, &result);

    fs::create_dir_all(&opts.out_dir)
        .with_context(|| format!("cannot create {}", opts.out_dir.display()))
        .map_err(runtime)?;
    let stem = opts.stem.clone().unwrap_or_else(|| loaded.stem());
    let csv_path = opts.out_dir.join(format!("{stem}.csv"));
    let sidecar_path = opts.out_dir.join(format!("{stem}.json"));
    let manifest_path = opts.out_dir.join(format!("{stem}.manifest.json"));

    let write = |path: &Path, text: &str| {
        fs::write(path, text)
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(runtime)
    };
    write(&csv_path, &result.to_csv())?;
    let sidecar = json!({
        "scenario_hash": hash,
        "master_seed": result.master_seed,
        "seeds": result.seeds,
        "resolved": resolved,
    });
    write(&sidecar_path, &pretty(&sidecar))?;

    let tracking: Vec<f64> = result.steps.iter().map(|s| s.tracking).collect();
    let mismatch: Vec<f64> = result.steps.iter().map(|s| s.mismatch).collect();
    let manifest = RunManifest {
        scenario_path: loaded.source.display().to_string(),
        scenario_dir: loaded.base_dir.display().to_string(),
        scenario_hash: hash,
        overrides: loaded.overrides.clone(),
        scenario: scenario_value,
        resolved,
        master_seed: result.master_seed,
        seeds: result.seeds.clone(),
        workers,
        csv: csv_path.display().to_string(),
        sidecar: sidecar_path.display().to_string(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    write(&manifest_path, &pretty(&serde_json::to_value(&manifest).expect("manifest serializes")))?;

    Ok(RunOutcome {
        manifest,
        steady_mismatch: final_quartile_mean(&mismatch),
        steady_tracking: final_quartile_mean(&tracking),
        steady_bound,
        ratio,
        result,
    })
}

pub fn cmd_run(path: &Path, opts: &RunOptions) -> CliResult<RunOutcome> {
    run_loaded(&LoadedScenario::read(path)?, opts)
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: String,
    pub outcome: std::result::Result<(f64, f64, Option<f64>, Option<f64>), String>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub summary_path: PathBuf,
}

impl SweepReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{SUMMARY_HEADER}\n");
        let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
        for row in &self.rows {
            match &row.outcome {
                Ok((mismatch, tracking, bound, ratio)) => out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    row.value,
                    fmt_float(*mismatch),
                    fmt_float(*tracking),
                    opt(*bound),
                    opt(*ratio)
                )),
                Err(_) => out.push_str(&format!("{},,,,\n", row.value)),
            }
        }
        out
    }
}

/// One ensemble per grid value of `param`; failures are recorded and the
/// sweep moves on. Writes `summary.csv` and `sweep.json` to the output dir.
pub fn cmd_sweep(path: &Path, param: &str, values: &[String], opts: &RunOptions) -> CliResult<SweepReport> {
    let loaded = LoadedScenario::read(path)?;
    if values.is_empty() {
        return Err(invalid(anyhow!("sweep needs at least one value")));
    }
    let stem = loaded.stem();
    let tag: String = param
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    let mut rows = Vec::with_capacity(values.len());
    let mut manifests = Vec::new();
    for (i, value) in values.iter().enumerate() {
        let mut point = opts.clone();
        point.overrides.push(format!("{param}={value}"));
        point.stem = Some(format!("{stem}_{tag}_{i}"));
        let outcome = match run_loaded(&loaded, &point) {
            Ok(o) => {
                manifests.push(o.manifest.csv.replace(".csv", ".manifest.json"));
                Ok((o.steady_mismatch, o.steady_tracking, o.steady_bound, o.ratio))
            }
            Err(e) => {
                eprintln!("{param}={value}: {e}");
                Err(e.to_string())
            }
        };
        rows.push(SweepRow {
            value: value.clone(),
            outcome,
        });
    }
    let report = SweepReport {
        rows,
        summary_path: opts.out_dir.join("summary.csv"),
    };
    fs::create_dir_all(&opts.out_dir).map_err(runtime)?;
    fs::write(&report.summary_path, report.to_csv()).map_err(runtime)?;
    let failures: Vec<Value> = report
        .rows
        .iter()
        .filter_map(|r| r.outcome.as_ref().err().map(|e| json!({"value": r.value, "error": e})))
        .collect();
    let index = json!({
        "scenario_path": path.display().to_string(),
        "param": param,
        "values": values,
        "manifests": manifests,
        "failures": failures,
    });
    fs::write(opts.out_dir.join("sweep.json"), pretty(&index)).map_err(runtime)?;
    Ok(report)
}

/// Splits a comma-separated grid, trimming blanks.
pub fn parse_values(list: &str) -> Vec<String> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}
