//! Run configuration: a single JSON document with defaults for every field,
//! environment overrides and validation that reports all violations at once.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::coupling::{CouplingConfig, CouplingModel};
use crate::flow::{calibrate_alpha, slowest_energy_decay, CalibrationOptions, FlowParams};
use crate::kicks::{ClockSpec, CoordinateLaw, KickSpec, KickedSystem};
use crate::spectral::{EnergyParams, Grid, SpectralField};

/// Prefix of environment overrides. Path segments are joined with `__`,
/// e.g. `KCGL_COUPLING__N_PRIME=6` or `KCGL_FLOW__DT_MAX=5e-3`.
pub const ENV_PREFIX: &str = "KCGL_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    #[serde(rename = "L")]
    pub length: f64,
    pub n_modes: usize,
    /// Defaults to `4 * n_modes`.
    pub n_phys: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            length: std::f64::consts::PI,
            n_modes: 16,
            n_phys: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub nu: f64,
    pub beta: f64,
    pub dt_max: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            nu: 1.0,
            beta: 1.0,
            dt_max: crate::flow::DEFAULT_DT_MAX,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyConfig {
    /// `null` calibrates `α` against the configured flow.
    pub alpha: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KicksConfig {
    pub b0: f64,
    pub decay_exponent: f64,
    pub law: CoordinateLaw,
    pub lambda: f64,
}

impl Default for KicksConfig {
    fn default() -> Self {
        Self {
            b0: 0.5,
            decay_exponent: 1.0,
            law: CoordinateLaw::default(),
            lambda: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub replicas: usize,
    pub horizon: f64,
    /// Spacing of the sampling time grid on `[0, horizon]`.
    pub sample_dt: f64,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    /// Largest tolerated fraction of diverged replicas.
    pub divergence_budget: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            replicas: 200,
            horizon: 20.0,
            sample_dt: 0.5,
            seed: 1,
            threads: 0,
            divergence_budget: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub flow: FlowConfig,
    pub energy: EnergyConfig,
    pub kicks: KicksConfig,
    pub coupling: CouplingConfig,
    pub experiment: ExperimentConfig,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            flow: FlowConfig::default(),
            energy: EnergyConfig::default(),
            kicks: KicksConfig::default(),
            coupling: CouplingConfig::default(),
            experiment: ExperimentConfig::default(),
            output: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{} configuration violation(s):\n  {}", .0.len(), .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\n  "))]
    Invalid(Vec<Violation>),
}

impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ConfigError::Invalid(v) => v,
            ConfigError::Read { .. } => &[],
        }
    }
}

fn violation(path: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation {
        path: path.into(),
        message: message.into(),
    }
}

/// Reads and validates a configuration file, applying environment overrides.
pub fn parse_config(path: &Path, needs_coupling: bool) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| ConfigError::Invalid(vec![violation("$", format!("malformed JSON: {e}"))]))?;
    RunConfig::from_value(value, std::env::vars(), needs_coupling)
}

/// Fields replaced wholesale rather than merged key by key.
const OPAQUE: &[&str] = &["kicks.law"];

impl RunConfig {
    /// Merges `value` and the `KCGL_*` entries of `env` onto the defaults,
    /// then validates.
    pub fn from_value(
        value: Value,
        env: impl IntoIterator<Item = (String, String)>,
        needs_coupling: bool,
    ) -> Result<RunConfig, ConfigError> {
        let mut merged = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        let mut errs = Vec::new();
        merge(&mut merged, value, "", &mut errs);
        for (key, raw) in env {
            if let Some(rest) = key.strip_prefix(ENV_PREFIX) {
                apply_env(&mut merged, rest, &raw, &mut errs);
            }
        }
        if !errs.is_empty() {
            return Err(ConfigError::Invalid(errs));
        }
        let cfg: RunConfig =
            serde_json::from_value(merged).map_err(|e| ConfigError::Invalid(vec![violation("$", e.to_string())]))?;
        let errs = cfg.violations(needs_coupling);
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    /// Every invariant violation, with its field path.
    pub fn violations(&self, needs_coupling: bool) -> Vec<Violation> {
        let mut v = Vec::new();
        let g = &self.grid;
        if !(g.length.is_finite() && g.length > 0.0) {
            v.push(violation("grid.L", format!("must be > 0, got {}", g.length)));
        }
        if g.n_modes == 0 {
            v.push(violation("grid.n_modes", "must be >= 1"));
        }
        if let Some(p) = g.n_phys {
            if p < 2 * g.n_modes {
                v.push(violation("grid.n_phys", format!("must be >= 2 * n_modes = {}", 2 * g.n_modes)));
            }
        }
        let f = &self.flow;
        if !(f.nu.is_finite() && f.nu > 0.0) {
            v.push(violation("flow.nu", format!("must be > 0, got {}", f.nu)));
        }
        if !(f.beta.is_finite() && f.beta > 0.0) {
            v.push(violation("flow.beta", format!("must be > 0, got {}", f.beta)));
        }
        if !(f.dt_max.is_finite() && f.dt_max > 0.0) {
            v.push(violation("flow.dt_max", format!("must be > 0, got {}", f.dt_max)));
        }
        if let Some(a) = self.energy.alpha {
            if !(a.is_finite() && a > 0.0) {
                v.push(violation("energy.alpha", format!("must be > 0 or null, got {a}")));
            }
        }
        let k = &self.kicks;
        if !(k.b0.is_finite() && k.b0 >= 0.0) {
            v.push(violation("kicks.b0", format!("must be >= 0, got {}", k.b0)));
        } else if k.b0 == 0.0 && needs_coupling {
            v.push(violation(
                "kicks.b0",
                "coupling needs nonzero kick coefficients on the coupled coordinates",
            ));
        }
        if !k.decay_exponent.is_finite() {
            v.push(violation("kicks.decay_exponent", "must be finite"));
        }
        if let Err(e) = k.law.validate() {
            v.push(violation("kicks.law", e.to_string()));
        }
        if !(k.lambda.is_finite() && k.lambda > 0.0) {
            v.push(violation("kicks.lambda", format!("must be > 0, got {}", k.lambda)));
        }
        for (field, msg) in self.coupling.violations(g.n_modes.max(1)) {
            v.push(violation(format!("coupling.{field}"), msg));
        }
        let e = &self.experiment;
        if e.replicas == 0 {
            v.push(violation("experiment.replicas", "must be >= 1"));
        }
        if !(e.horizon.is_finite() && e.horizon > 0.0) {
            v.push(violation("experiment.horizon", format!("must be > 0, got {}", e.horizon)));
        }
        if !(e.sample_dt.is_finite() && e.sample_dt > 0.0 && e.sample_dt <= e.horizon) {
            v.push(violation("experiment.sample_dt", "must lie in (0, horizon]"));
        }
        if !(0.0..=1.0).contains(&e.divergence_budget) {
            v.push(violation("experiment.divergence_budget", "must lie in [0, 1]"));
        }
        v
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn grid(&self) -> crate::Result<Arc<Grid>> {
        let g = &self.grid;
        Grid::new(g.length, g.n_modes, g.n_phys.unwrap_or(4 * g.n_modes))
    }

    pub fn flow_params(&self) -> crate::Result<FlowParams> {
        FlowParams::new(self.flow.nu, self.flow.beta, self.flow.dt_max)
    }

    pub fn kick_spec(&self) -> crate::Result<KickSpec> {
        let k = &self.kicks;
        if k.b0 == 0.0 {
            return Ok(KickSpec::silent(self.grid.n_modes));
        }
        KickSpec::power_law(self.grid.n_modes, k.b0, k.decay_exponent, k.law)
    }

    pub fn system(&self) -> crate::Result<KickedSystem> {
        Ok(KickedSystem {
            kicks: self.kick_spec()?,
            clock: ClockSpec::new(self.kicks.lambda)?,
            flow: self.flow_params()?,
        })
    }

    pub fn coupling_model(&self) -> crate::Result<CouplingModel> {
        let sys = self.system()?;
        CouplingModel::new(self.coupling, sys.kicks, sys.clock, sys.flow)
    }

    /// Energy parameters with the decay rate `a` they satisfy on seeded
    /// trial states. `α` is calibrated unless fixed in the file.
    pub fn calibration(&self) -> crate::Result<(EnergyParams, f64)> {
        let flow = self.flow_params()?;
        let grid = self.grid()?;
        let trials = trial_states(&grid, self.experiment.seed ^ 0xCA1, &[0.1, 0.5, 1.0, 2.0, 4.0]);
        let opts = CalibrationOptions::default();
        let Some(alpha) = self.energy.alpha else {
            let cal = calibrate_alpha(&flow, &trials, &opts)?;
            return Ok((cal.energy_params(&flow)?, cal.decay_rate));
        };
        let energy = EnergyParams::new(alpha, flow.beta)?;
        let mut rate = f64::INFINITY;
        for u in &trials {
            match slowest_energy_decay(u, opts.horizon, &flow, &energy)? {
                Some(r) if r > 0.0 => rate = rate.min(r),
                _ => {
                    return Err(crate::Error::Calibration(format!(
                        "energy is not monotone for alpha = {alpha}"
                    )))
                }
            }
        }
        Ok((energy, (1.0 - opts.margin) * rate))
    }

    /// Sampling grid `0, sample_dt, …` up to the horizon.
    pub fn time_grid(&self) -> Vec<f64> {
        let e = &self.experiment;
        let n = (e.horizon / e.sample_dt + 1e-9).floor() as usize;
        (0..=n).map(|i| i as f64 * e.sample_dt).collect()
    }
}

/// Random states with coefficients `amp · j^{−3/2} · U(−1, 1)²`.
pub fn trial_states(grid: &Arc<Grid>, seed: u64, amplitudes: &[f64]) -> Vec<SpectralField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    amplitudes
        .iter()
        .map(|&amp| {
            let c = (1..=grid.n_modes())
                .map(|j| {
                    let s = amp * (j as f64).powf(-1.5);
                    num_complex::Complex64::new(s * rng.random_range(-1.0..1.0), s * rng.random_range(-1.0..1.0))
                })
                .collect();
            SpectralField::from_coeffs(grid, c).expect("length matches grid")
        })
        .collect()
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn merge(base: &mut Value, patch: Value, path: &str, errs: &mut Vec<Violation>) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) if !OPAQUE.contains(&path) => {
            for (key, val) in p {
                let sub = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
                match b.get_mut(&key) {
                    Some(slot) => merge(slot, val, &sub, errs),
                    None => errs.push(violation(sub, "unknown field")),
                }
            }
        }
        (slot, val) => {
            let compatible = OPAQUE.contains(&path)
                || slot.is_null()
                || val.is_null() && path.ends_with("alpha")
                || std::mem::discriminant(slot) == std::mem::discriminant(&val);
            if compatible {
                *slot = val;
            } else {
                errs.push(violation(
                    path,
                    format!("expected {}, found {}", type_name(slot), type_name(&val)),
                ));
            }
        }
    }
}

fn apply_env(root: &mut Value, key: &str, raw: &str, errs: &mut Vec<Violation>) {
    let mut node = root;
    let mut path = Vec::new();
    for seg in key.split("__") {
        let Value::Object(map) = node else {
            errs.push(violation(format!("{ENV_PREFIX}{key}"), "does not name a config field"));
            return;
        };
        let Some(name) = find_key(map, seg) else {
            errs.push(violation(format!("{ENV_PREFIX}{key}"), "does not name a config field"));
            return;
        };
        path.push(name.clone());
        node = map.get_mut(&name).expect("key exists");
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    merge(node, parsed, &path.join("."), errs);
}

fn find_key(map: &Map<String, Value>, seg: &str) -> Option<String> {
    map.keys().find(|k| k.eq_ignore_ascii_case(seg)).cloned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn paths(e: ConfigError) -> Vec<String> {
        e.violations().iter().map(|v| v.path.clone()).collect()
    }

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_value(json!({}), [], true).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.grid().unwrap().n_phys(), 64);
    }

    #[test]
    fn n_prime_above_n_names_the_field() {
        let e = RunConfig::from_value(json!({"coupling": {"N": 4, "N_prime": 3}}), [], false).unwrap_err();
        assert_eq!(paths(e), vec!["coupling.N_prime"]);
    }

    #[test]
    fn all_violations_are_reported() {
        let doc = json!({"grid": {"n_modes": 8, "n_phys": 4}, "flow": {"nu": -1.0}, "kicks": {"lambda": 0.0}});
        let p = paths(RunConfig::from_value(doc, [], false).unwrap_err());
        assert_eq!(p, vec!["grid.n_phys", "flow.nu", "kicks.lambda"]);
        let doc = json!({"grid": {"extra": 1}, "flow": {"nu": "fast"}});
        let p = paths(RunConfig::from_value(doc, [], false).unwrap_err());
        assert_eq!(p, vec!["flow.nu", "grid.extra"]);
    }

    #[test]
    fn silent_kicks_rejected_only_for_coupling() {
        let doc = json!({"kicks": {"b0": 0.0}});
        assert!(RunConfig::from_value(doc.clone(), [], false).is_ok());
        assert_eq!(paths(RunConfig::from_value(doc, [], true).unwrap_err()), vec!["kicks.b0"]);
    }

    #[test]
    fn env_overrides_apply_case_insensitively() {
        let env = [
            ("KCGL_COUPLING__N_PRIME".to_string(), "3".to_string()),
            ("KCGL_OUTPUT".to_string(), "runs/a".to_string()),
            ("KCGL_KICKS__LAW".to_string(), r#"{"family":"triangular","half_width":2.0}"#.to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let cfg = RunConfig::from_value(json!({}), env, true).unwrap();
        assert_eq!(cfg.coupling.n_prime, 3);
        assert_eq!(cfg.output, PathBuf::from("runs/a"));
        assert_eq!(cfg.kicks.law, CoordinateLaw::Triangular { half_width: 2.0 });
        let bad = [("KCGL_FLOW__NOPE".to_string(), "1".to_string())];
        assert_eq!(paths(RunConfig::from_value(json!({}), bad, true).unwrap_err()), vec!["KCGL_FLOW__NOPE"]);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.experiment.seed = 2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn time_grid_covers_horizon() {
        let t = RunConfig::default().time_grid();
        assert_eq!(t.len(), 41);
        assert_eq!(*t.last().unwrap(), 20.0);
    }
}
