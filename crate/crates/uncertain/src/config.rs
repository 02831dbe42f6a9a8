//! The policy configuration file: strict JSON with fail-closed parsing
//! (unknown keys rejected), defaults matching the engine's reference
//! operating point, and conversion into [`PolicySettings`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use uncertain_core::{
    BehaviorConfig, PolicySettings, ProcessEnv, ProtectionRules, StrategyKind, StrategySet,
    ThresholdMode, ThresholdParams, WarmupGate,
};

/// Threshold mode as written in the config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ConfigMode {
    /// `{"static_threshold": 0.10}`
    StaticThreshold(f64),
    /// `{"dynamic": {"t_d": …, "t_max": …, "p": …, "r": …, "warmup": …}}`
    Dynamic(ThresholdParams),
}

impl Default for ConfigMode {
    fn default() -> Self {
        ConfigMode::Dynamic(ThresholdParams::default())
    }
}

fn default_timeout_factor() -> f64 {
    2.0
}

fn default_max_delay() -> f64 {
    0.1
}

fn default_offset_range() -> (i64, i64) {
    (-4096, 4096)
}

fn default_system_binary_dirs() -> Vec<String> {
    BehaviorConfig::default().system_binary_dirs
}

/// The configuration file schema. Every field is optional in the file;
/// omitted fields take the documented defaults. Unknown keys are a hard
/// error (fail-closed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub mode: ConfigMode,
    /// Strategy set for non-whitelisted targets.
    pub strategy_set: StrategySet,
    /// Program-path patterns (literal match plus `*` wildcards) that
    /// select the non-intrusive set for a target program. Applies to
    /// live runs and corpus entries; raw traces carry no program path.
    pub whitelist: Vec<String>,
    pub protected_paths: ProtectionRules,
    pub redirect: uncertain_core::RedirectPolicy,
    /// Inclusive draw range for `FileOffsetChange`.
    #[serde(default = "default_offset_range")]
    pub offset_delta_range: (i64, i64),
    /// Upper bound of the uniform `Delay` draw, seconds.
    #[serde(default = "default_max_delay")]
    pub max_delay: f64,
    /// Extend `ConnectionRestrict` to `sys_connect`.
    pub restrict_connect: bool,
    pub warmup_gate: WarmupGate,
    /// Directories whose mention in unlink/rename paths marks Behavior 4.
    #[serde(default = "default_system_binary_dirs")]
    pub system_binary_dirs: Vec<String>,
    /// Escalate every syscall name on Behaviors 2–4, not just the trigger.
    pub escalate_all_names: bool,
    /// Strict mode: Behaviors 2–4 escalate only after warmup.
    pub escalate_requires_warmup: bool,
    /// When present, restrict drawable strategies to this list.
    pub strategy_filter: Option<Vec<StrategyKind>>,
    /// Runtime budget for traced runs, as a multiple of the baseline
    /// runtime.
    #[serde(default = "default_timeout_factor")]
    pub timeout_factor: f64,
    /// Base RNG seed (overridable by `--seed` / `UNCERTAIN_SEED`).
    pub seed: Option<u64>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            mode: ConfigMode::default(),
            strategy_set: StrategySet::Intrusive,
            whitelist: Vec::new(),
            protected_paths: ProtectionRules::default(),
            redirect: uncertain_core::RedirectPolicy::default(),
            offset_delta_range: default_offset_range(),
            max_delay: default_max_delay(),
            restrict_connect: false,
            warmup_gate: WarmupGate::default(),
            system_binary_dirs: default_system_binary_dirs(),
            escalate_all_names: false,
            escalate_requires_warmup: false,
            strategy_filter: None,
            timeout_factor: default_timeout_factor(),
            seed: None,
        }
    }
}

/// Configuration loading/validation errors (CLI exit code 2).
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl PolicyConfig {
    /// Loads and validates a config file.
    pub fn load(path: &Path) -> Result<PolicyConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: PolicyConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.mode {
            ConfigMode::StaticThreshold(t) => {
                if !(0.0..=1.0).contains(&t) {
                    return Err(ConfigError::Invalid(format!(
                        "static_threshold {t} outside [0, 1]"
                    )));
                }
            }
            ConfigMode::Dynamic(params) => params
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?,
        }
        if !(self.max_delay > 0.0 && self.max_delay <= 10.0) {
            return Err(ConfigError::Invalid(format!(
                "max_delay {} outside (0, 10] seconds",
                self.max_delay
            )));
        }
        if self.offset_delta_range.0 > self.offset_delta_range.1 {
            return Err(ConfigError::Invalid(format!(
                "offset_delta_range [{}, {}] is empty",
                self.offset_delta_range.0, self.offset_delta_range.1
            )));
        }
        if !(self.timeout_factor >= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "timeout_factor {} must be ≥ 1",
                self.timeout_factor
            )));
        }
        if let Some(filter) = &self.strategy_filter {
            if filter.is_empty() {
                return Err(ConfigError::Invalid(
                    "strategy_filter present but empty — no strategy could ever apply".into(),
                ));
            }
        }
        Ok(())
    }

    /// Engine settings for this config (strategy set possibly overridden
    /// per target by [`PolicyConfig::strategy_set_for`]).
    pub fn to_settings(&self) -> PolicySettings {
        PolicySettings {
            mode: match self.mode {
                ConfigMode::StaticThreshold(t) => ThresholdMode::Static(t),
                ConfigMode::Dynamic(params) => ThresholdMode::Dynamic(params),
            },
            strategy_set: self.strategy_set,
            process_env: ProcessEnv::Uncertain,
            protection: self.protected_paths.clone(),
            behavior: BehaviorConfig {
                system_binary_dirs: self.system_binary_dirs.clone(),
                escalate_all_names: self.escalate_all_names,
                escalate_requires_warmup: self.escalate_requires_warmup,
            },
            warmup_gate: self.warmup_gate,
            offset_delta_range: self.offset_delta_range,
            redirect: self.redirect.clone(),
            max_delay: self.max_delay,
            restrict_connect: self.restrict_connect,
            strategy_filter: self.strategy_filter.clone(),
        }
    }

    /// True when `program` matches a whitelist pattern.
    pub fn is_whitelisted(&self, program: &str) -> bool {
        self.whitelist.iter().any(|p| glob_match(p, program))
    }

    /// The strategy set a given target program receives.
    pub fn strategy_set_for(&self, program: &str) -> StrategySet {
        if self.is_whitelisted(program) {
            StrategySet::NonIntrusive
        } else {
            self.strategy_set
        }
    }
}

/// Minimal `*`-wildcard matcher: `*` matches any run of characters
/// (including none); everything else is literal. No character classes.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    if !pattern.contains('*') {
        return pattern == text;
    }
    let parts: Vec<&str> = pattern.split('*').collect();
    let first = parts[0];
    if !text.starts_with(first) {
        return false;
    }
    let mut pos = first.len();
    for part in &parts[1..parts.len() - 1] {
        if part.is_empty() {
            continue;
        }
        match text[pos..].find(part) {
            Some(off) => pos += off + part.len(),
            None => return false,
        }
    }
    let last = parts[parts.len() - 1];
    if last.is_empty() {
        return true;
    }
    text.len() >= pos + last.len() && text.ends_with(last)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_dynamic() {
        let c = PolicyConfig::default();
        c.validate().unwrap();
        assert_eq!(c.mode, ConfigMode::Dynamic(ThresholdParams::default()));
        let s = c.to_settings();
        assert_eq!(s.strategy_set, StrategySet::Intrusive);
        assert_eq!(s.max_delay, 0.1);
    }

    #[test]
    fn parses_static_and_dynamic_modes() {
        let c: PolicyConfig =
            serde_json::from_str(r#"{"mode":{"static_threshold":0.5}}"#).unwrap();
        assert_eq!(c.mode, ConfigMode::StaticThreshold(0.5));
        let c: PolicyConfig = serde_json::from_str(
            r#"{"mode":{"dynamic":{"t_d":0.2,"t_max":0.9,"p":1.5,"r":0.6,"warmup":50}}}"#,
        )
        .unwrap();
        match c.mode {
            ConfigMode::Dynamic(p) => {
                assert_eq!(p.t_d, 0.2);
                assert_eq!(p.warmup, 50);
            }
            _ => panic!("expected dynamic"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = serde_json::from_str::<PolicyConfig>(r#"{"treshold": 0.1}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("treshold"), "{err}");
        // Nested unknown keys too.
        let err = serde_json::from_str::<PolicyConfig>(
            r#"{"mode":{"dynamic":{"t_d":0.1,"t_max":0.9,"p":1.2,"r":0.7,"warmup":100,"warmpu":1}}}"#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("warmpu"), "{err}");
    }

    #[test]
    fn out_of_range_values_fail_validation() {
        let c: PolicyConfig =
            serde_json::from_str(r#"{"mode":{"static_threshold":1.5}}"#).unwrap();
        assert!(c.validate().is_err());
        let c: PolicyConfig = serde_json::from_str(r#"{"max_delay":0.0}"#).unwrap();
        assert!(c.validate().is_err());
        let c: PolicyConfig = serde_json::from_str(r#"{"timeout_factor":0.5}"#).unwrap();
        assert!(c.validate().is_err());
        let c: PolicyConfig =
            serde_json::from_str(r#"{"offset_delta_range":[10,-10]}"#).unwrap();
        assert!(c.validate().is_err());
        let c: PolicyConfig = serde_json::from_str(r#"{"strategy_filter":[]}"#).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn whitelist_selects_non_intrusive() {
        let c: PolicyConfig = serde_json::from_str(
            r#"{"whitelist":["/usr/bin/rsync","/opt/tools/*","*backup*"]}"#,
        )
        .unwrap();
        assert_eq!(
            c.strategy_set_for("/usr/bin/rsync"),
            StrategySet::NonIntrusive
        );
        assert_eq!(
            c.strategy_set_for("/opt/tools/sync-agent"),
            StrategySet::NonIntrusive
        );
        assert_eq!(
            c.strategy_set_for("/home/u/nightly-backup.sh"),
            StrategySet::NonIntrusive
        );
        assert_eq!(c.strategy_set_for("/usr/bin/nc"), StrategySet::Intrusive);
    }

    #[test]
    fn glob_matcher_corners() {
        assert!(glob_match("abc", "abc"));
        assert!(!glob_match("abc", "abcd"));
        assert!(glob_match("*", ""));
        assert!(glob_match("*", "anything"));
        assert!(glob_match("a*c", "abc"));
        assert!(glob_match("a*c", "ac"));
        assert!(!glob_match("a*c", "acx"));
        assert!(glob_match("*tail", "long tail"));
        assert!(!glob_match("*tail", "tails"));
        assert!(glob_match("head*", "headroom"));
        assert!(glob_match("a*b*c", "a__b__c"));
        assert!(!glob_match("a*b*c", "a__c__b"));
        // Overlap guard: the tail anchor must not reuse consumed input.
        assert!(!glob_match("ab*ba", "aba"));
        assert!(glob_match("ab*ba", "abba"));
    }

    #[test]
    fn config_roundtrip_preserves_everything() {
        let c: PolicyConfig = serde_json::from_str(
            r#"{
              "mode": {"static_threshold": 0.1},
              "strategy_set": "non_intrusive",
              "whitelist": ["/bin/echo"],
              "redirect": "random_rfc1918",
              "restrict_connect": true,
              "strategy_filter": ["error_return", "delay"],
              "seed": 42
            }"#,
        )
        .unwrap();
        c.validate().unwrap();
        let json = serde_json::to_string(&c).unwrap();
        let back: PolicyConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.seed, Some(42));
        assert!(back.restrict_connect);
    }
}
