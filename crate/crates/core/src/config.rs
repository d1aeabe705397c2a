//! Master configuration shared by every pipeline stage.
//!
//! A config file is a partial JSON document deep-merged over the selected
//! profile's defaults. Stage seeds default to `derive_seed(master_seed,
//! stage)`, so overriding one stage's seed leaves the others untouched.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::device::DeviceConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::ppo::PpoConfig;
use crate::report::EvalConfig;
use crate::rng::derive_seed;
use crate::surrogate::TrainConfig;
use crate::sweep::{SweepConfig, TargetTransform};
use crate::trace::CorpusConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Full-scale run sizes.
    Paper,
    /// Scaled-down sizes that finish in minutes.
    Test,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "test" => Ok(Profile::Test),
            other => Err(Error::config("profile", format!("unknown profile `{other}` (expected paper or test)"))),
        }
    }
}

/// Labels hashed with the master seed.
pub mod stage {
    pub const CORPUS: &str = "gen-traces";
    pub const SPLIT: &str = "split";
    pub const SURROGATE: &str = "train-surrogate";
    pub const AGENT: &str = "train-agent";
    pub const EVALUATE: &str = "evaluate";
}

/// How sweep rows become training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Train, test, validation fractions.
    pub split: [f64; 3],
    pub split_seed: u64,
    /// Energy, latency, endurance.
    pub transforms: [TargetTransform; 3],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            split: [0.6, 0.2, 0.2],
            split_seed: 0,
            transforms: [TargetTransform::Log, TargetTransform::Log, TargetTransform::Identity],
        }
    }
}

impl DatasetConfig {
    pub fn fractions(&self) -> (f64, f64, f64) {
        (self.split[0], self.split[1], self.split[2])
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config("dataset.split", "fractions must lie in [0, 1] and sum to 1"));
        }
        if self.split[0] == 0.0 || self.split[1] == 0.0 || self.split[2] == 0.0 {
            return Err(Error::config("dataset.split", "every partition must be non-empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MasterConfig {
    pub master_seed: u64,
    pub out_dir: PathBuf,
    pub device: DeviceConfig,
    pub corpus: CorpusConfig,
    pub sweep: SweepConfig,
    pub dataset: DatasetConfig,
    pub surrogate: TrainConfig,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub eval: EvalConfig,
}

impl MasterConfig {
    pub fn profile(profile: Profile, master_seed: u64) -> Self {
        let mut cfg = Self {
            master_seed,
            out_dir: PathBuf::from("out"),
            device: DeviceConfig::default(),
            corpus: CorpusConfig::default(),
            sweep: SweepConfig::default(),
            dataset: DatasetConfig::default(),
            surrogate: TrainConfig::default(),
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
            eval: EvalConfig::default(),
        };
        if profile == Profile::Test {
            cfg.corpus.n_ops = 20_000;
            cfg.env.episode_len = 1_000;
            cfg.ppo.total_steps = 200_000;
        }
        cfg.corpus.seed = derive_seed(master_seed, stage::CORPUS);
        cfg.dataset.split_seed = derive_seed(master_seed, stage::SPLIT);
        cfg.surrogate.seed = derive_seed(master_seed, stage::SURROGATE);
        cfg.ppo.seed = derive_seed(master_seed, stage::AGENT);
        cfg.eval.seed = derive_seed(master_seed, stage::EVALUATE);
        cfg
    }

    /// Merges `overrides` onto the profile defaults. `seed` and `out_dir`
    /// (command-line values) win over the document.
    pub fn resolve(profile: Profile, overrides: Option<&str>, seed: Option<u64>, out_dir: Option<&Path>) -> Result<Self> {
        let user: Value = match overrides {
            Some(text) => serde_json::from_str(text).map_err(|e| Error::config("<config>", e.to_string()))?,
            None => Value::Object(Default::default()),
        };
        if !user.is_object() {
            return Err(Error::config("<config>", "top level must be a JSON object"));
        }
        let master = match (seed, user.get("master_seed")) {
            (Some(s), _) => s,
            (None, Some(v)) => v
                .as_u64()
                .ok_or_else(|| Error::config("master_seed", "must be a non-negative integer"))?,
            (None, None) => 0,
        };
        let mut merged = serde_json::to_value(Self::profile(profile, master))?;
        merge(&mut merged, user);
        merged["master_seed"] = Value::from(master);
        if let Some(dir) = out_dir {
            merged["out_dir"] = Value::from(dir.to_string_lossy().into_owned());
        }
        let cfg: Self = serde_path_to_error::deserialize(merged).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(profile: Profile, path: Option<&Path>, seed: Option<u64>, out_dir: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        Self::resolve(profile, text.as_deref(), seed, out_dir)
    }

    pub fn validate(&self) -> Result<()> {
        under("device", self.device.validate())?;
        under("device", self.device.validate_action_space())?;
        under("corpus", self.corpus.validate())?;
        if self.sweep.op_cap < self.corpus.n_ops as usize {
            return Err(Error::config("sweep.op_cap", "must be at least corpus.n_ops"));
        }
        if self.sweep.address_lines < self.corpus.address_lines {
            return Err(Error::config("sweep.address_lines", "must cover corpus.address_lines"));
        }
        self.dataset.validate()?;
        under("surrogate", self.surrogate.validate())?;
        under("env", self.env.validate(&self.device))?;
        under("ppo", self.ppo.validate())?;
        under("eval", self.eval.validate(&self.device))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Qualifies errors from a section validator with the section name.
fn under(section: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Config { field, reason } if field.starts_with(&format!("{section}.")) => Error::Config { field, reason },
        Error::Config { field, reason } => Error::config(format!("{section}.{field}"), reason),
        other => Error::config(section, other.to_string()),
    })
}

/// Recursive object merge; non-object values in `patch` replace.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_differ_only_in_sizes() {
        let p = MasterConfig::profile(Profile::Paper, 7);
        let t = MasterConfig::profile(Profile::Test, 7);
        assert_eq!(p.corpus.n_ops, 100_000);
        assert_eq!(p.env.episode_len, 100_000);
        assert_eq!(t.corpus.n_ops, 20_000);
        assert_eq!(t.env.episode_len, 1_000);
        assert_eq!(t.ppo.total_steps, 200_000);
        assert_eq!(p.corpus.traces_per_scenario * 3, 60);
        assert_eq!((p.ppo.seed, p.surrogate.seed), (t.ppo.seed, t.surrogate.seed));
        p.validate().unwrap();
        t.validate().unwrap();
    }

    #[test]
    fn partial_override_keeps_defaults() {
        let cfg = MasterConfig::resolve(Profile::Test, Some(r#"{"ppo": {"total_steps": 4096}, "device": {"alpha_set": 0.02}}"#), None, None).unwrap();
        assert_eq!(cfg.ppo.total_steps, 4096);
        assert_eq!(cfg.ppo.rollout_len, 2048);
        assert_eq!(cfg.device.alpha_set, 0.02);
        assert_eq!(cfg.device.alpha_reset, DeviceConfig::default().alpha_reset);
    }

    #[test]
    fn stage_seed_override_is_local() {
        let base = MasterConfig::resolve(Profile::Test, None, Some(3), None).unwrap();
        let tweaked = MasterConfig::resolve(Profile::Test, Some(r#"{"ppo": {"seed": 99}}"#), Some(3), None).unwrap();
        assert_eq!(tweaked.ppo.seed, 99);
        assert_eq!(tweaked.surrogate.seed, base.surrogate.seed);
        assert_eq!(tweaked.corpus.seed, base.corpus.seed);
        let other = MasterConfig::resolve(Profile::Test, None, Some(4), None).unwrap();
        assert_ne!(other.corpus.seed, base.corpus.seed);
    }

    #[test]
    fn command_line_seed_wins() {
        let cfg = MasterConfig::resolve(Profile::Test, Some(r#"{"master_seed": 5}"#), Some(6), None).unwrap();
        assert_eq!(cfg.master_seed, 6);
        assert_eq!(cfg.corpus.seed, derive_seed(6, stage::CORPUS));
    }

    #[test]
    fn unknown_key_reports_path() {
        let err = MasterConfig::resolve(Profile::Test, Some(r#"{"ppo": {"gama": 0.9}}"#), None, None).unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "ppo.gama"),
            e => panic!("{e}"),
        }
        let err = MasterConfig::resolve(Profile::Test, Some(r#"{"colour": 1}"#), None, None).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn wrong_type_reports_path() {
        let err = MasterConfig::resolve(Profile::Test, Some(r#"{"env": {"episode_len": "long"}}"#), None, None).unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "env.episode_len"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn semantic_errors_are_qualified() {
        let err = MasterConfig::resolve(Profile::Test, Some(r#"{"device": {"line_bytes": 0}}"#), None, None).unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "device.line_bytes"),
            e => panic!("{e}"),
        }
        let err = MasterConfig::resolve(Profile::Test, Some(r#"{"env": {"temperature": 30.0}}"#), None, None).unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "env"),
            e => panic!("{e}"),
        }
        let err = MasterConfig::resolve(Profile::Test, Some(r#"{"corpus": {"n_ops": 200000}}"#), None, None).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "sweep.op_cap"));
    }

    #[test]
    fn json_roundtrip() {
        let cfg = MasterConfig::profile(Profile::Paper, 11);
        let back = MasterConfig::resolve(Profile::Test, Some(&cfg.to_json().unwrap()), None, None).unwrap();
        assert_eq!(back, cfg);
    }
}
