//! Flat `key=value` settings: config file, then `DREAM_SEED`, then flags.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use dream_core::arm::FeatureMap;
use dream_core::env::{load_dataset, Environment, SyntheticEnv};
use dream_core::exploration::KappaKind;
use dream_core::harness::{EstimatorKind, ExperimentConfig, MethodSpec};
use dream_core::policy::{Algorithm, BurnInMode, PolicySpec, Schedule};

use crate::CliError;

pub const SEED_ENV: &str = "DREAM_SEED";

/// Every key accepted in a config file. Flags use the same names.
pub const KEYS: &[&str] = &[
    "env",
    "data",
    "algo",
    "T",
    "T0",
    "burn-in-mode",
    "ucb-c",
    "rho",
    "eps",
    "clip",
    "omega",
    "alpha",
    "seed",
    "methods",
    "kappa",
    "known-policy-kappa",
    "feature-map",
    "checkpoints",
    "include-burn-in",
    "oracle-policy",
    "target",
    "reps",
    "sweep-p",
];

/// Resolved settings, ordered by key so that the echo is canonical.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Parses `key=value` lines. Blank lines and lines starting with `#` are
    /// skipped; unknown keys are rejected.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut s = Settings::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{origin} line {}: expected key=value, found `{line}`",
                    i + 1
                ))
            })?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(CliError::Usage(format!(
                    "{origin} line {}: unknown key `{k}`",
                    i + 1
                )));
            }
            s.values.insert(k.to_string(), v.trim().to_string());
        }
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: Option<&str>) {
        debug_assert!(KEYS.contains(&key), "{key}");
        if let Some(v) = value {
            self.values.insert(key.to_string(), v.to_string());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// One `key=value` line per setting, in key order.
    pub fn echo(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::Usage(format!("invalid value for `{key}`: `{v}` ({e})")))
            })
            .transpose()
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<T>().map_err(|e| {
                            CliError::Usage(format!("invalid value for `{key}`: `{s}` ({e})"))
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.get(key) {
            None | Some("false") | Some("0") => Ok(false),
            Some("true") | Some("1") => Ok(true),
            Some(v) => Err(CliError::Usage(format!(
                "invalid value for `{key}`: `{v}` (expected true or false)"
            ))),
        }
    }

    pub fn base_seed(&self) -> Result<u64, CliError> {
        Ok(self.parsed("seed")?.unwrap_or(0))
    }

    pub fn sweep_p(&self) -> Result<Option<Vec<f64>>, CliError> {
        self.list("sweep-p")
    }

    /// Builds and validates the experiment; configuration problems name the
    /// offending key.
    pub fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        let horizon: usize = self.parsed("T")?.ok_or_else(|| {
            CliError::Usage("missing required key `T` (pass --T or set T= in the config)".into())
        })?;
        let algorithm: Algorithm = self.parsed("algo")?.unwrap_or(Algorithm::Ucb);
        let env = match self.get("env").unwrap_or("synthetic") {
            "synthetic" => Environment::Synthetic(SyntheticEnv::default()),
            "dataset" => {
                let path = self
                    .get("data")
                    .ok_or_else(|| CliError::Usage("`env=dataset` requires key `data`".into()))?;
                let data = load_dataset(Path::new(path))
                    .map_err(|e| CliError::Runtime(format!("cannot load dataset {path}: {e}")))?;
                Environment::Dataset(Arc::new(data))
            }
            other => {
                return Err(CliError::Usage(format!(
                    "invalid value for `env`: `{other}` (synthetic or dataset)"
                )))
            }
        };

        let mut policy = PolicySpec::new(algorithm);
        if let Some(v) = self.parsed("T0")? {
            policy.burn_in = v;
        }
        if let Some(v) = self.get("burn-in-mode") {
            policy.burn_in_mode = match v {
                "alternating" => BurnInMode::Alternating,
                "uniform" => BurnInMode::Uniform,
                _ => {
                    return Err(CliError::Usage(format!(
                        "invalid value for `burn-in-mode`: `{v}`"
                    )))
                }
            };
        }
        if let Some(v) = self.parsed::<Schedule>("ucb-c")? {
            policy.ucb_c = v;
        }
        if let Some(v) = self.parsed("rho")? {
            policy.ts_rho = v;
        }
        if let Some(v) = self.parsed::<Schedule>("eps")? {
            policy.eg_eps = v;
        }
        if let Some(v) = self.parsed::<Schedule>("clip")? {
            policy.clipping = v;
        }

        let mut c = ExperimentConfig::new(env, policy, horizon);
        c.base_seed = self.base_seed()?;
        if let Some(v) = self.parsed("omega")? {
            c.omega = v;
        }
        if let Some(v) = self.parsed("alpha")? {
            c.alpha = v;
        }
        if let Some(v) = self.parsed("reps")? {
            c.replications = v;
        }
        if let Some(v) = self.list("checkpoints")? {
            c.checkpoints = v;
        }
        if let Some(v) = self.get("feature-map") {
            c.feature_map = FeatureMap::parse(v).ok_or_else(|| {
                CliError::Usage(format!(
                    "invalid value for `feature-map`: `{v}` (cosine or linear)"
                ))
            })?;
        }
        if let Some(names) = self.list::<String>("methods")? {
            c.methods = names
                .iter()
                .map(|n| {
                    MethodSpec::parse(n).ok_or_else(|| {
                        CliError::Usage(format!(
                            "invalid value for `methods`: unknown method `{n}`"
                        ))
                    })
                })
                .collect::<Result<_, _>>()?;
        }
        if let Some(v) = self.get("kappa") {
            let kind = parse_kappa("kappa", v)?;
            for m in c
                .methods
                .iter_mut()
                .filter(|m| m.name == "dream" || m.name == "dream_mu_linear")
            {
                m.kappa = kind;
            }
        }
        if let Some(v) = self.get("known-policy-kappa") {
            c.known_policy_kappa = parse_kappa("known-policy-kappa", v)?;
        }
        c.include_burn_in = self.flag("include-burn-in")?;
        c.evaluate_oracle_policy = self.flag("oracle-policy")?;
        c.target_value = self.parsed("target")?;
        c.validate()?;
        Ok(c)
    }
}

fn parse_kappa(key: &str, v: &str) -> Result<KappaKind, CliError> {
    KappaKind::parse(v).ok_or_else(|| {
        CliError::Usage(format!(
            "invalid value for `{key}`: `{v}` (logistic, logistic-gap, eg or const:<value>)"
        ))
    })
}

/// Index of the method whose records make up the trace: the first DREAM
/// method, since its records carry the propensities.
pub fn trace_method(config: &ExperimentConfig) -> usize {
    config
        .methods
        .iter()
        .position(|m| m.estimator == EstimatorKind::Dream)
        .unwrap_or(0)
}
