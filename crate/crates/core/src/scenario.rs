//! JSON scenario files.
//!
//! A scenario bundles a topology, controller, dynamics and schedule block
//! with run settings. Schema errors carry the JSON pointer of the offending
//! value; [`Scenario::prepare`] then resolves automatic step sizes and
//! produces a ready-to-run [`Simulation`].

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::control::{
    classical_async_step_size_bound, dynamic_step_size_bound, linear_contraction_factor,
    sync_step_size_bound, ControllerConfig, VarLimits,
};
use crate::dynamics::{ramp_mean_profile, Ar1Params, LimitsProfile};
use crate::error::{Error, Result};
use crate::harness::{Physics, RunMode, ScheduleSpec, Simulation};
use crate::network::{build_matrices_with, Line, RadialNetwork, Scaling};
use crate::oracle::{BetaPrime, BoundParams};
use crate::scheduler::parse_schedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Free-form record of the per-unit base the data were derived from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Value>,
    pub topology: TopologySpec,
    pub controller: ControllerSpec,
    pub dynamics: DynamicsSpec,
    pub schedule: ScheduleBlock,
    pub horizon: usize,
    pub realizations: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub physics: Physics,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_prime: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    /// Bus count including the root.
    pub buses: usize,
    pub lines: Vec<Line>,
    #[serde(default = "unit")]
    pub v0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub epsilon: EpsilonSpec,
    #[serde(default)]
    pub scaling: Scaling,
    #[serde(default)]
    pub mu: ProfileSpec<FlatTag>,
    /// Fraction of the bound used by the automatic step sizes.
    #[serde(default = "half")]
    pub safety: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSpec {
    Value(f64),
    Auto(AutoEpsilon),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoEpsilon {
    /// `safety * 2/M`.
    AutoSync,
    /// `safety * 2/(C+M)`.
    AutoDynamic,
    /// `safety * 2/M / (1 + K + N K)`.
    AutoClassical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlatTag {
    #[default]
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RampTag {
    /// Linear 1.025 to 0.975 profile.
    #[default]
    #[serde(rename = "paper_ramp")]
    Ramp,
}

/// Either a named profile or explicit per-bus values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec<T> {
    Named(T),
    Values(Vec<f64>),
}

impl<T: Default> Default for ProfileSpec<T> {
    fn default() -> Self {
        ProfileSpec::Named(T::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSpec {
    #[serde(default)]
    pub alpha: f64,
    /// Innovation variance. At most one of `sigma2`, `sigma` and
    /// `stationary_variance` may be given; none means noiseless.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    /// Innovation standard deviation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Stationary variance `sigma^2 / (1 - alpha^2)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stationary_variance: Option<f64>,
    #[serde(default)]
    pub mean_profile: ProfileSpec<RampTag>,
    #[serde(default)]
    pub seed: u64,
    pub limits: LimitsSpec,
    /// Full transition matrix, row-major, replacing `alpha * I`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitsMode {
    #[default]
    Static,
    Scaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundSpec {
    Uniform(f64),
    PerBus(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsSpec {
    #[serde(default)]
    pub mode: LimitsMode,
    pub lower: BoundSpec,
    pub upper: BoundSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Sync,
    DutyCycle,
    Adversarial,
    File,
    /// No control at all.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleBlock {
    pub mode: ScheduleMode,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

fn unit() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

/// Step-size bounds of a resolved scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepBounds {
    /// `2/M`.
    pub sync: f64,
    /// `2/(C+M)`.
    pub dynamic: f64,
    /// `1/(M(1+K+NK))` with the schedule's `K` (1 when synchronous).
    pub classical: f64,
}

#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub scenario: Scenario,
    pub sim: Simulation,
    pub epsilon: f64,
    pub bounds: StepBounds,
    pub beta_prime: BetaPrime,
    pub warnings: Vec<String>,
}

impl PreparedScenario {
    pub fn n(&self) -> usize {
        self.sim.n()
    }

    pub fn c(&self) -> f64 {
        self.sim.mat.c
    }

    pub fn m_lip(&self) -> f64 {
        self.sim.mat.m_lip
    }
}

/// Translates a serde path into a JSON pointer.
fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => {
                out.push('/');
                out.push_str(&key.replace('~', "~0").replace('/', "~1"));
            }
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Sets `path` (dot-separated; numeric segments index arrays) in `doc`.
/// `raw` is parsed as JSON when possible and used as a string otherwise.
pub fn apply_override(doc: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.into()));
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::InvalidParameter(format!("malformed override path '{path}'")));
    }
    let mut cursor = doc;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        cursor = match cursor {
            Value::Object(map) => {
                if last {
                    map.insert((*seg).to_string(), value);
                    return Ok(());
                }
                map.entry(*seg).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = seg.parse().map_err(|_| {
                    Error::InvalidParameter(format!("'{seg}' in '{path}' is not an array index"))
                })?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| {
                    Error::InvalidParameter(format!("index {idx} in '{path}' exceeds length {len}"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "override '{path}' descends into a non-container at '{seg}'"
                )))
            }
        };
    }
    unreachable!("loop returns on the last segment")
}

impl Scenario {
    pub fn from_value(value: Value) -> Result<Self> {
        serde_path_to_error::deserialize(value)
            .map_err(|e| Error::scenario(pointer_of(e.path()), e.inner().to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::scenario("/", e.to_string()))?;
        Self::from_value(value)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("scenario serializes")
    }

    /// Validates every block and resolves the scenario. Relative schedule
    /// file paths are looked up under `base_dir`.
    pub fn prepare(&self, base_dir: Option<&Path>) -> Result<PreparedScenario> {
        let topo = &self.topology;
        let net = RadialNetwork::new(topo.buses, topo.lines.clone(), topo.v0)?;
        let n = net.n();
        let ctrl = &self.controller;
        let mat = build_matrices_with(&net, ctrl.scaling);

        if self.horizon == 0 {
            return Err(Error::scenario("/horizon", "must be >= 1"));
        }
        if self.realizations == 0 {
            return Err(Error::scenario("/realizations", "must be >= 1"));
        }

        let schedule = self.schedule_spec(n, base_dir)?;
        let k = schedule.delay_bound().max(1);
        let bounds = StepBounds {
            sync: sync_step_size_bound(&mat),
            dynamic: dynamic_step_size_bound(&mat),
            classical: classical_async_step_size_bound(&mat, k, n)?,
        };

        if !(ctrl.safety.is_finite() && ctrl.safety > 0.0) {
            return Err(Error::scenario("/controller/safety", "must be positive"));
        }
        let epsilon = match ctrl.epsilon {
            EpsilonSpec::Value(e) => e,
            EpsilonSpec::Auto(AutoEpsilon::AutoSync) => ctrl.safety * bounds.sync,
            EpsilonSpec::Auto(AutoEpsilon::AutoDynamic) => ctrl.safety * bounds.dynamic,
            EpsilonSpec::Auto(AutoEpsilon::AutoClassical) => {
                ctrl.safety * bounds.sync / (1 + k + n * k) as f64
            }
        };
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::scenario("/controller/epsilon", format!("must be positive, got {epsilon}")));
        }
        let mu = match &ctrl.mu {
            ProfileSpec::Named(FlatTag::Flat) => DVector::from_element(n, 1.0),
            ProfileSpec::Values(v) => per_bus("/controller/mu", v, n)?,
        };
        let cfg = ControllerConfig::new(epsilon, ctrl.scaling, mu)
            .map_err(|e| Error::scenario("/controller", e.to_string()))?;

        let dynamics = self.dynamics_params(n)?;
        let limits = self.limits_profile(n)?;

        let mut warnings = Vec::new();
        let radius = linear_contraction_factor(mat.c, mat.m_lip, epsilon);
        if radius >= 1.0 {
            let msg = format!(
                "step size {epsilon} gives iteration spectral radius {radius} >= 1 (2/M = {})",
                bounds.sync
            );
            if self.mode == RunMode::Strict {
                return Err(Error::UnstableStepSize {
                    epsilon,
                    radius,
                    bound: bounds.sync,
                });
            }
            warnings.push(msg);
        }
        if epsilon > bounds.dynamic * (1.0 + 1e-12) {
            warnings.push(format!(
                "step size {epsilon} exceeds 2/(C+M) = {}; the tracking bound is not evaluated",
                bounds.dynamic
            ));
        }
        let beta_prime = match self.beta_prime {
            None => BetaPrime::Default,
            Some(b) if b.is_finite() && b > 0.0 => BetaPrime::Value(b),
            Some(b) => return Err(Error::scenario("/beta_prime", format!("must be positive, got {b}"))),
        };
        if epsilon <= bounds.dynamic * (1.0 + 1e-12) {
            if let Err(e) = BoundParams::new(mat.c, mat.m_lip, epsilon, beta_prime, 0.0)
                .and_then(|bp| bp.rho_theta())
            {
                warnings.push(format!("tracking bound unavailable: {e}"));
            }
        }

        let q0 = match &self.q0 {
            Some(v) => Some(per_bus("/q0", v, n)?),
            None => None,
        };

        let sim = Simulation {
            net,
            mat,
            cfg,
            dynamics,
            limits,
            schedule,
            horizon: self.horizon,
            physics: self.physics,
            mode: self.mode,
            q0,
        };
        sim.validate()?;
        Ok(PreparedScenario {
            scenario: self.clone(),
            sim,
            epsilon,
            bounds,
            beta_prime,
            warnings,
        })
    }

    fn schedule_spec(&self, n: usize, base_dir: Option<&Path>) -> Result<ScheduleSpec> {
        let s = &self.schedule;
        let need_k = || {
            s.k.filter(|&k| k >= 1)
                .ok_or_else(|| Error::scenario("/schedule/K", "required and must be >= 1"))
        };
        Ok(match s.mode {
            ScheduleMode::Sync => ScheduleSpec::Synchronous,
            ScheduleMode::None => ScheduleSpec::Idle,
            ScheduleMode::Adversarial => ScheduleSpec::Adversarial { k: need_k()? },
            ScheduleMode::DutyCycle => {
                let k = need_k()?;
                if k < 2 || k % 2 != 0 {
                    return Err(Error::scenario("/schedule/K", format!("must be even and >= 2, got {k}")));
                }
                let eta = s
                    .eta
                    .ok_or_else(|| Error::scenario("/schedule/eta", "required for duty_cycle"))?;
                if !(eta > 0.0 && eta <= 1.0) {
                    return Err(Error::scenario("/schedule/eta", format!("must lie in (0, 1], got {eta}")));
                }
                ScheduleSpec::DutyCycle { k, eta, seed: s.seed }
            }
            ScheduleMode::File => {
                let k = need_k()?;
                let rel = s
                    .path
                    .as_deref()
                    .ok_or_else(|| Error::scenario("/schedule/path", "required for file mode"))?;
                let path = match base_dir {
                    Some(dir) if Path::new(rel).is_relative() => dir.join(rel),
                    _ => PathBuf::from(rel),
                };
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    Error::scenario("/schedule/path", format!("{}: {e}", path.display()))
                })?;
                let sched = parse_schedule(&text, n, k)
                    .map_err(|e| Error::scenario("/schedule/path", e.to_string()))?;
                if sched.horizon() < self.horizon {
                    return Err(Error::scenario(
                        "/schedule/path",
                        format!("file covers {} steps, horizon is {}", sched.horizon(), self.horizon),
                    ));
                }
                ScheduleSpec::Fixed(sched)
            }
        })
    }

    fn dynamics_params(&self, n: usize) -> Result<Ar1Params> {
        let d = &self.dynamics;
        if !(d.alpha.is_finite() && d.alpha.abs() < 1.0) {
            return Err(Error::scenario("/dynamics/alpha", format!("need |alpha| < 1, got {}", d.alpha)));
        }
        let given = [d.sigma2.is_some(), d.sigma.is_some(), d.stationary_variance.is_some()];
        if given.iter().filter(|&&g| g).count() > 1 {
            return Err(Error::scenario(
                "/dynamics",
                "give at most one of sigma2, sigma, stationary_variance",
            ));
        }
        let (sigma2, pointer) = match (d.sigma2, d.sigma, d.stationary_variance) {
            (Some(s2), _, _) => (s2, "/dynamics/sigma2"),
            (_, Some(s), _) => (s * s, "/dynamics/sigma"),
            (_, _, Some(v)) => (v * (1.0 - d.alpha * d.alpha), "/dynamics/stationary_variance"),
            _ => (0.0, "/dynamics"),
        };
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(Error::scenario(pointer, "noise level must be >= 0"));
        }
        let mean = match &d.mean_profile {
            ProfileSpec::Named(RampTag::Ramp) => ramp_mean_profile(n),
            ProfileSpec::Values(v) => per_bus("/dynamics/mean_profile", v, n)?,
        };
        let params = Ar1Params::from_mean(d.alpha, sigma2, &mean, d.seed)
            .map_err(|e| Error::scenario("/dynamics", e.to_string()))?;
        match &d.transition {
            None => Ok(params),
            Some(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::scenario(
                        "/dynamics/transition",
                        format!("must be a {n} x {n} matrix"),
                    ));
                }
                let a = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
                params
                    .with_transition(a, &mean)
                    .map_err(|e| Error::scenario("/dynamics/transition", e.to_string()))
            }
        }
    }

    fn limits_profile(&self, n: usize) -> Result<LimitsProfile> {
        let l = &self.dynamics.limits;
        let expand = |spec: &BoundSpec, pointer: &str| match spec {
            BoundSpec::Uniform(v) => Ok(DVector::from_element(n, *v)),
            BoundSpec::PerBus(v) => per_bus(pointer, v, n),
        };
        let lower = expand(&l.lower, "/dynamics/limits/lower")?;
        let upper = expand(&l.upper, "/dynamics/limits/upper")?;
        let base = VarLimits::new(lower, upper)
            .map_err(|e| Error::scenario("/dynamics/limits", e.to_string()))?;
        match l.mode {
            LimitsMode::Static => {
                if l.scale.is_some() {
                    return Err(Error::scenario("/dynamics/limits/scale", "only valid in scaled mode"));
                }
                Ok(LimitsProfile::Static(base))
            }
            LimitsMode::Scaled => {
                let scale = l
                    .scale
                    .clone()
                    .ok_or_else(|| Error::scenario("/dynamics/limits/scale", "required in scaled mode"))?;
                LimitsProfile::scaled(base, scale)
                    .map_err(|e| Error::scenario("/dynamics/limits/scale", e.to_string()))
            }
        }
    }
}

fn per_bus(pointer: &str, values: &[f64], n: usize) -> Result<DVector<f64>> {
    if values.len() != n {
        return Err(Error::scenario(
            pointer,
            format!("expected {n} values, got {}", values.len()),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::scenario(pointer, "values must be finite"));
    }
    Ok(DVector::from_column_slice(values))
}
