//! Run configuration, read from TOML.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::path::{Path, PathBuf};

use ddvel::plant::DiscParams;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::pipeline::ControllerKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; every random stream is derived from it.
    pub seed: u64,
    pub out: PathBuf,
    pub plant: PlantConfig,
    pub data: DataConfig,
    pub velocity: DesignConfig,
    #[serde(rename = "direct-lpv")]
    pub direct_lpv: DesignConfig,
    pub lti: DesignConfig,
    pub weights: WeightsConfig,
    pub solver: SolverConfig,
    pub metrics: MetricsConfig,
    #[serde(rename = "scenario")]
    pub scenarios: Vec<ScenarioConfig>,
}

/// Unbalanced-disc parameters. The defaults are representative, not
/// normative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    pub m: f64,
    pub g: f64,
    pub l: f64,
    pub j: f64,
    pub tau: f64,
    pub km: f64,
    pub ts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Number of samples is `n + 1`.
    pub n: usize,
    pub input_std: f64,
    /// Initial state drawn uniformly from the box `[x1_low, x1_high]`.
    pub x1_low: Vec<f64>,
    pub x1_high: Vec<f64>,
    /// Read the dictionary from this CSV instead of simulating.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignConfig {
    /// `sinc-difference`, `sinc-ratio`, `polynomial-identity` or `none`.
    pub basis: String,
    /// Plant states entering the sinc bases.
    pub states: Vec<usize>,
    /// Scheduling box override; without it the box is built from data.
    pub p_lower: Option<Vec<f64>>,
    pub p_upper: Option<Vec<f64>>,
    pub margin: f64,
    /// Integrator leakage; `None` designs without integral action.
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsConfig {
    /// Diagonal of Q on the (possibly augmented) state.
    pub q: Vec<f64>,
    pub r: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub backend: String,
    pub epsilon: f64,
    pub objective: String,
    pub normalize: bool,
    pub max_iter: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub settle_tol: f64,
    /// Limit-cycle detection window in steps.
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub x_init: Vec<f64>,
    /// Seconds.
    pub duration: f64,
    /// Piecewise-constant reference as `[time, value]` breakpoints.
    #[serde(default)]
    pub reference: Vec<[f64; 2]>,
    /// Expected outcome per controller; a divergence listed here is not an
    /// error.
    #[serde(default)]
    pub expect: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("out"),
            plant: PlantConfig::default(),
            data: DataConfig::default(),
            velocity: DesignConfig {
                basis: "sinc-difference".into(),
                p_lower: Some(vec![-1.0]),
                p_upper: Some(vec![1.0]),
                alpha: Some(1.0),
                ..DesignConfig::default()
            },
            direct_lpv: DesignConfig {
                basis: "sinc-ratio".into(),
                p_lower: Some(vec![-0.2173]),
                p_upper: Some(vec![1.0]),
                alpha: Some(0.9),
                ..DesignConfig::default()
            },
            lti: DesignConfig {
                basis: "none".into(),
                alpha: Some(0.9),
                ..DesignConfig::default()
            },
            weights: WeightsConfig::default(),
            solver: SolverConfig::default(),
            metrics: MetricsConfig::default(),
            scenarios: vec![ScenarioConfig::standard()],
        }
    }
}

impl Default for PlantConfig {
    fn default() -> Self {
        let p = DiscParams::default();
        Self {
            m: p.m,
            g: p.g,
            l: p.l,
            j: p.j,
            tau: p.tau,
            km: p.km,
            ts: p.ts,
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n: 12,
            input_std: 3f64.sqrt(),
            x1_low: vec![0.0, 0.0],
            x1_high: vec![1.0, 1.0],
            file: None,
        }
    }
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            basis: "none".into(),
            states: vec![0],
            p_lower: None,
            p_upper: None,
            margin: ddvel::pbox::DEFAULT_MARGIN,
            alpha: None,
        }
    }
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self {
            q: vec![1.0, 1.0, 1.0],
            r: vec![2.0],
        }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            backend: "clarabel".into(),
            epsilon: ddvel::synthesis::DEFAULT_EPSILON,
            objective: "trace-z-inverse".into(),
            normalize: true,
            max_iter: 400,
        }
    }
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            settle_tol: 0.01,
            window: 100,
        }
    }
}

impl ScenarioConfig {
    /// From `(π/4, 5)`: regulate for one second, then track a step to π/2.
    pub fn standard() -> Self {
        let expect = [
            ("velocity", "settled"),
            ("direct-lpv", "limit-cycle"),
            ("lti", "diverged"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Self {
            name: "step".into(),
            x_init: vec![FRAC_PI_4, 5.0],
            duration: 5.0,
            reference: vec![[0.0, 0.0], [1.0, FRAC_PI_2]],
            expect,
        }
    }

    /// Reference at step `k` (time `(k − 1) T_s`).
    pub fn reference_at(&self, k: usize, ts: f64) -> f64 {
        let t = (k - 1) as f64 * ts;
        // tolerate round-off at the breakpoints
        self.reference
            .iter()
            .filter(|b| b[0] <= t + 1e-9 * ts)
            .last()
            .map_or(0.0, |b| b[1])
    }

    pub fn steps(&self, ts: f64) -> usize {
        (self.duration / ts).round() as usize
    }

    pub fn expects(&self, kind: ControllerKind) -> Option<&str> {
        self.expect.get(kind.name()).map(String::as_str)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        // relative data paths are taken relative to the config file
        if let (Some(file), Some(dir)) = (&cfg.data.file, path.parent()) {
            if file.is_relative() {
                cfg.data.file = Some(dir.join(file));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn disc_params(&self) -> DiscParams {
        let p = &self.plant;
        DiscParams {
            m: p.m,
            g: p.g,
            l: p.l,
            j: p.j,
            tau: p.tau,
            km: p.km,
            ts: p.ts,
        }
    }

    pub fn design(&self, kind: ControllerKind) -> &DesignConfig {
        match kind {
            ControllerKind::Velocity => &self.velocity,
            ControllerKind::DirectLpv => &self.direct_lpv,
            ControllerKind::Lti => &self.lti,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        self.disc_params().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.data.n == 0 {
            return bad("data.n must be at least 1".into());
        }
        if !(self.data.input_std >= 0.0 && self.data.input_std.is_finite()) {
            return bad(format!("data.input_std must be finite and non-negative, got {}", self.data.input_std));
        }
        if self.data.x1_low.len() != 2 || self.data.x1_high.len() != 2 {
            return bad("data.x1_low and data.x1_high need 2 entries".into());
        }
        if self.data.x1_low.iter().zip(&self.data.x1_high).any(|(lo, hi)| lo > hi) {
            return bad("data.x1_low exceeds data.x1_high".into());
        }
        if let Some(f) = &self.data.file {
            if !f.exists() {
                return bad(format!("data.file {} does not exist", f.display()));
            }
        }
        for kind in ControllerKind::ALL {
            let d = self.design(kind);
            if !matches!(d.basis.as_str(), "sinc-difference" | "sinc-ratio" | "polynomial-identity" | "none") {
                return bad(format!("{}.basis: unknown basis `{}`", kind.name(), d.basis));
            }
            if d.p_lower.is_some() != d.p_upper.is_some() {
                return bad(format!("{}: give both p_lower and p_upper or neither", kind.name()));
            }
            if let Some(a) = d.alpha {
                if !(a > 0.0 && a <= 1.0) {
                    return bad(format!("{}.alpha must lie in (0, 1], got {a}", kind.name()));
                }
            }
            if d.states.iter().any(|&s| s >= 2) {
                return bad(format!("{}.states: the disc has states 0 and 1", kind.name()));
            }
        }
        if self.weights.r.is_empty() || self.weights.r.iter().any(|&r| !(r > 0.0)) {
            return bad("weights.r must be positive".into());
        }
        if self.weights.q.iter().any(|&q| !(q >= 0.0)) {
            return bad("weights.q must be non-negative".into());
        }
        ddvel::synthesis::Objective::parse(&self.solver.objective).map_err(|e| CliError::Config(e.to_string()))?;
        if !matches!(self.solver.backend.as_str(), "clarabel" | "projection") {
            return bad(format!("solver.backend: unknown backend `{}`", self.solver.backend));
        }
        if !(self.solver.epsilon > 0.0) {
            return bad("solver.epsilon must be positive".into());
        }
        for s in &self.scenarios {
            if s.x_init.len() != 2 {
                return bad(format!("scenario {}: x_init needs 2 entries", s.name));
            }
            if !(s.duration > 0.0) {
                return bad(format!("scenario {}: duration must be positive", s.name));
            }
            for key in s.expect.keys() {
                if ControllerKind::parse(key).is_none() {
                    return bad(format!("scenario {}: unknown controller `{key}` in expect", s.name));
                }
            }
        }
        Ok(())
    }
}
