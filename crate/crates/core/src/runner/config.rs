//! Run configuration: one JSON object per experiment, parameters checked
//! against a per-kind schema with unknown keys rejected.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Schema { path: path.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Forward,
    Stationary,
    Linearize,
    ReconstructTorus,
    ReconstructBounded,
    ReconstructKernel,
    Cgo,
    Carleman,
    Anomaly,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        Self::Forward,
        Self::Stationary,
        Self::Linearize,
        Self::ReconstructTorus,
        Self::ReconstructBounded,
        Self::ReconstructKernel,
        Self::Cgo,
        Self::Carleman,
        Self::Anomaly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Forward => "forward",
            Self::Stationary => "stationary",
            Self::Linearize => "linearize",
            Self::ReconstructTorus => "reconstruct-torus",
            Self::ReconstructBounded => "reconstruct-bounded",
            Self::ReconstructKernel => "reconstruct-kernel",
            Self::Cgo => "cgo",
            Self::Carleman => "carleman",
            Self::Anomaly => "anomaly",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            Self::Forward => "time-dependent MFG on the torus with solver certificates",
            Self::Stationary => "ergodic system and the Gibbs identity of its density",
            Self::Linearize => "remainder slopes of first and second order expansions",
            Self::ReconstructTorus => "running and terminal Taylor coefficients on the torus",
            Self::ReconstructBounded => "Hamiltonian weight and running coefficient on a box",
            Self::ReconstructKernel => "nonlocal running kernel on a box",
            Self::Cgo => "remainder decay, corner moments and parabolic remainders",
            Self::Carleman => "weighted estimate checks and stability experiments",
            Self::Anomaly => "boundary records of two inclusions",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardParams {
    pub dim: usize,
    pub nodes: usize,
    pub steps: usize,
    pub horizon: f64,
    /// Running cost `coupling * m`.
    pub coupling: f64,
    /// Initial density `1 + amplitude cos(2 pi x_0)`.
    pub density_amplitude: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub damping: f64,
}

impl Default for ForwardParams {
    fn default() -> Self {
        Self {
            dim: 1,
            nodes: 64,
            steps: 128,
            horizon: 0.5,
            coupling: 0.1,
            density_amplitude: 0.1,
            tol: 1e-10,
            max_iters: 200,
            damping: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationaryParams {
    pub dim: usize,
    pub nodes: usize,
    /// Source `amplitude cos(2 pi x_0)`.
    pub amplitude: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for StationaryParams {
    fn default() -> Self {
        Self { dim: 1, nodes: 64, amplitude: 0.5, tol: 1e-12, max_iters: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearizeParams {
    pub nodes: usize,
    pub steps: usize,
    pub horizon: f64,
    pub epsilons: Vec<f64>,
    /// Direction `1 + amplitude cos(2 pi x)`.
    pub direction_amplitude: f64,
}

impl Default for LinearizeParams {
    fn default() -> Self {
        Self { nodes: 32, steps: 32, horizon: 0.5, epsilons: vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3], direction_amplitude: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TorusParams {
    pub nodes: usize,
    pub steps: usize,
    pub horizon: f64,
    pub cutoff: i64,
    /// Relative measurement noise; zero disables it.
    pub noise: f64,
}

impl Default for TorusParams {
    fn default() -> Self {
        Self { nodes: 64, steps: 64, horizon: 0.5, cutoff: 16, noise: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundedParams {
    pub nodes: usize,
    pub kappa_amplitude: f64,
    pub kappa_horizon: f64,
    pub kappa_steps: usize,
    pub probes: Vec<usize>,
    pub floor: f64,
    pub source_nodes: usize,
    pub source_steps: usize,
    pub source_horizon: f64,
    pub noise: f64,
}

impl Default for BoundedParams {
    fn default() -> Self {
        Self {
            nodes: 64,
            kappa_amplitude: 0.2,
            kappa_horizon: 0.02,
            kappa_steps: 64,
            probes: vec![1, 2],
            floor: 1e-6,
            source_nodes: 48,
            source_steps: 48,
            source_horizon: 0.5,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelParams {
    pub nodes: usize,
    pub steps: usize,
    pub horizon: f64,
    pub count: usize,
    pub offsets: [f64; 2],
    pub noise: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self { nodes: 48, steps: 48, horizon: 0.5, count: 6, offsets: [1.0, 2.0], noise: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CgoParams {
    pub nodes: usize,
    pub scales: Vec<f64>,
    pub corner_taus: Vec<f64>,
    pub corner_half_angle: f64,
    pub corner_radius: f64,
    pub corner_alpha: f64,
    pub parabolic_nodes: usize,
    pub parabolic_steps: usize,
    pub rhos: Vec<f64>,
}

impl Default for CgoParams {
    fn default() -> Self {
        Self {
            nodes: 16,
            scales: vec![8.0, 16.0, 32.0, 64.0],
            corner_taus: vec![10.0, 20.0, 40.0, 80.0, 160.0],
            corner_half_angle: PI / 6.0,
            corner_radius: 0.5,
            corner_alpha: 0.5,
            parabolic_nodes: 257,
            parabolic_steps: 200,
            rhos: vec![8.0, 16.0, 32.0, 64.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarlemanParams {
    pub s_ladder: Vec<f64>,
    pub parabolic_trials: usize,
    pub coupled_trials: usize,
    pub lipschitz_trials: usize,
    pub forward_trials: usize,
    pub resolutions: Vec<usize>,
    pub holder_deltas: Vec<f64>,
    pub holder_nodes: usize,
    pub holder_steps: usize,
}

impl Default for CarlemanParams {
    fn default() -> Self {
        Self {
            s_ladder: vec![4.0, 8.0, 16.0, 32.0],
            parabolic_trials: 50,
            coupled_trials: 30,
            lipschitz_trials: 30,
            forward_trials: 30,
            resolutions: vec![32, 64],
            holder_deltas: vec![1e-2, 1e-3, 1e-4, 1e-5],
            holder_nodes: 64,
            holder_steps: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalyParams {
    pub nodes: usize,
    pub steps: usize,
    pub horizon: f64,
    /// Opposite corners of the two square inclusions.
    pub first: [[f64; 2]; 2],
    pub second: [[f64; 2]; 2],
}

impl Default for AnomalyParams {
    fn default() -> Self {
        Self { nodes: 25, steps: 20, horizon: 0.2, first: [[0.2, 0.2], [0.4, 0.4]], second: [[0.6, 0.55], [0.8, 0.75]] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Forward(ForwardParams),
    Stationary(StationaryParams),
    Linearize(LinearizeParams),
    ReconstructTorus(TorusParams),
    ReconstructBounded(BoundedParams),
    ReconstructKernel(KernelParams),
    Cgo(CgoParams),
    Carleman(CarlemanParams),
    Anomaly(AnomalyParams),
}

impl Params {
    pub fn defaults(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::Forward => Self::Forward(Default::default()),
            ExperimentKind::Stationary => Self::Stationary(Default::default()),
            ExperimentKind::Linearize => Self::Linearize(Default::default()),
            ExperimentKind::ReconstructTorus => Self::ReconstructTorus(Default::default()),
            ExperimentKind::ReconstructBounded => Self::ReconstructBounded(Default::default()),
            ExperimentKind::ReconstructKernel => Self::ReconstructKernel(Default::default()),
            ExperimentKind::Cgo => Self::Cgo(Default::default()),
            ExperimentKind::Carleman => Self::Carleman(Default::default()),
            ExperimentKind::Anomaly => Self::Anomaly(Default::default()),
        }
    }

    fn from_value(kind: ExperimentKind, v: Value) -> Result<Self, ConfigError> {
        fn typed<T: DeserializeOwned>(v: Value) -> Result<T, ConfigError> {
            serde_json::from_value(v).map_err(|e| schema("params", e.to_string()))
        }
        Ok(match kind {
            ExperimentKind::Forward => Self::Forward(typed(v)?),
            ExperimentKind::Stationary => Self::Stationary(typed(v)?),
            ExperimentKind::Linearize => Self::Linearize(typed(v)?),
            ExperimentKind::ReconstructTorus => Self::ReconstructTorus(typed(v)?),
            ExperimentKind::ReconstructBounded => Self::ReconstructBounded(typed(v)?),
            ExperimentKind::ReconstructKernel => Self::ReconstructKernel(typed(v)?),
            ExperimentKind::Cgo => Self::Cgo(typed(v)?),
            ExperimentKind::Carleman => Self::Carleman(typed(v)?),
            ExperimentKind::Anomaly => Self::Anomaly(typed(v)?),
        })
    }

    pub fn to_value(&self) -> Value {
        let v = match self {
            Self::Forward(p) => serde_json::to_value(p),
            Self::Stationary(p) => serde_json::to_value(p),
            Self::Linearize(p) => serde_json::to_value(p),
            Self::ReconstructTorus(p) => serde_json::to_value(p),
            Self::ReconstructBounded(p) => serde_json::to_value(p),
            Self::ReconstructKernel(p) => serde_json::to_value(p),
            Self::Cgo(p) => serde_json::to_value(p),
            Self::Carleman(p) => serde_json::to_value(p),
            Self::Anomaly(p) => serde_json::to_value(p),
        };
        v.expect("parameter structs serialize")
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(schema(format!("params.{name}"), format!("must be positive, got {x}")))
            }
        };
        let at_least = |name: &str, x: usize, lo: usize| {
            if x >= lo {
                Ok(())
            } else {
                Err(schema(format!("params.{name}"), format!("must be at least {lo}, got {x}")))
            }
        };
        let ladder = |name: &str, xs: &[f64], len: usize| {
            if xs.len() < len || xs.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                Err(schema(format!("params.{name}"), format!("needs at least {len} positive entries")))
            } else {
                Ok(())
            }
        };
        let noise = |x: f64| {
            if x >= 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(schema("params.noise", "must be nonnegative"))
            }
        };
        match self {
            Self::Forward(p) => {
                at_least("dim", p.dim, 1)?;
                at_least("nodes", p.nodes, 4)?;
                at_least("steps", p.steps, 1)?;
                at_least("max_iters", p.max_iters, 1)?;
                positive("horizon", p.horizon)?;
                positive("tol", p.tol)?;
                if !(p.damping > 0.0 && p.damping <= 1.0) {
                    return Err(schema("params.damping", "must lie in (0, 1]"));
                }
                if p.density_amplitude.abs() >= 1.0 {
                    return Err(schema("params.density_amplitude", "must keep the density positive"));
                }
            }
            Self::Stationary(p) => {
                at_least("dim", p.dim, 1)?;
                at_least("nodes", p.nodes, 4)?;
                positive("tol", p.tol)?;
            }
            Self::Linearize(p) => {
                at_least("nodes", p.nodes, 4)?;
                at_least("steps", p.steps, 1)?;
                positive("horizon", p.horizon)?;
                ladder("epsilons", &p.epsilons, 4)?;
            }
            Self::ReconstructTorus(p) => {
                at_least("nodes", p.nodes, 4)?;
                at_least("steps", p.steps, 1)?;
                positive("horizon", p.horizon)?;
                if p.cutoff < 1 {
                    return Err(schema("params.cutoff", "must be at least 1"));
                }
                noise(p.noise)?;
            }
            Self::ReconstructBounded(p) => {
                at_least("nodes", p.nodes, 4)?;
                at_least("source_nodes", p.source_nodes, 4)?;
                positive("kappa_horizon", p.kappa_horizon)?;
                positive("source_horizon", p.source_horizon)?;
                positive("floor", p.floor)?;
                if p.probes.is_empty() {
                    return Err(schema("params.probes", "needs at least one probe"));
                }
                if p.kappa_amplitude.abs() >= 1.0 {
                    return Err(schema("params.kappa_amplitude", "must keep kappa positive"));
                }
                noise(p.noise)?;
            }
            Self::ReconstructKernel(p) => {
                at_least("nodes", p.nodes, 4)?;
                at_least("count", p.count, 2)?;
                positive("horizon", p.horizon)?;
                noise(p.noise)?;
            }
            Self::Cgo(p) => {
                at_least("nodes", p.nodes, 4)?;
                ladder("scales", &p.scales, 2)?;
                ladder("corner_taus", &p.corner_taus, 2)?;
                ladder("rhos", &p.rhos, 2)?;
                positive("corner_radius", p.corner_radius)?;
            }
            Self::Carleman(p) => {
                ladder("s_ladder", &p.s_ladder, 2)?;
                ladder("holder_deltas", &p.holder_deltas, 2)?;
                if p.resolutions.len() < 2 {
                    return Err(schema("params.resolutions", "needs at least two resolutions"));
                }
                for (name, n) in [
                    ("parabolic_trials", p.parabolic_trials),
                    ("coupled_trials", p.coupled_trials),
                    ("lipschitz_trials", p.lipschitz_trials),
                    ("forward_trials", p.forward_trials),
                ] {
                    at_least(name, n, 1)?;
                }
            }
            Self::Anomaly(p) => {
                at_least("nodes", p.nodes, 5)?;
                at_least("steps", p.steps, 1)?;
                positive("horizon", p.horizon)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub params: Params,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: ExperimentKind,
    #[serde(default)]
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output: Option<PathBuf>,
    #[serde(default = "empty_object")]
    params: Value,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

/// A validated config and the parameter keys that took default values.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub config: RunConfig,
    pub defaulted: Vec<String>,
}

impl RunConfig {
    pub fn new(kind: ExperimentKind, seed: u64) -> Self {
        Self { experiment: kind, seed, output: None, params: Params::defaults(kind) }
    }

    /// Effective config as a JSON value with every parameter spelled out.
    pub fn to_value(&self) -> Value {
        let raw = RawConfig {
            experiment: self.experiment,
            seed: self.seed,
            output: self.output.clone(),
            params: self.params.to_value(),
        };
        serde_json::to_value(raw).expect("config serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("config serializes") + "\n"
    }
}

pub fn parse_config_str(text: &str) -> Result<ParsedConfig, ConfigError> {
    let v: Value = serde_json::from_str(text).map_err(|e| schema("config", e.to_string()))?;
    if !v.is_object() {
        return Err(schema("config", "config must be a JSON object"));
    }
    let raw: RawConfig = serde_json::from_value(v).map_err(|e| schema("config", e.to_string()))?;
    let given = match &raw.params {
        Value::Object(m) => m.keys().cloned().collect::<Vec<_>>(),
        _ => return Err(schema("params", "must be a JSON object")),
    };
    let params = Params::from_value(raw.experiment, raw.params)?;
    params.validate()?;
    let defaulted = match params.to_value() {
        Value::Object(m) => m.keys().filter(|k| !given.contains(k)).cloned().collect(),
        _ => Vec::new(),
    };
    Ok(ParsedConfig {
        config: RunConfig { experiment: raw.experiment, seed: raw.seed, output: raw.output, params },
        defaulted,
    })
}

pub fn parse_config(path: &Path) -> Result<ParsedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config_str(&text)
}
