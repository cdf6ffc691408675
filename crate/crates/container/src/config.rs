//! Container configuration, read from a TOML document.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::address::valid_token;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainerConfig {
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Reductions per slice.
    #[serde(default = "default_budget")]
    pub slice_budget: usize,
    #[serde(default = "default_idle")]
    pub idle_passivation_ms: u64,
    #[serde(default)]
    pub clock: ClockMode,
    #[serde(default = "default_ask_timeout")]
    pub ask_timeout_ms: u64,
    /// Write a snapshot whenever a process goes quiet, so a crash loses nothing.
    #[serde(default = "default_true")]
    pub checkpoint: bool,
    #[serde(default)]
    pub tenants: Vec<TenantConfig>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    #[default]
    Real,
    Virtual,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TenantConfig {
    pub id: String,
    pub token: String,
    /// Program name to source file.
    #[serde(default)]
    pub programs: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub connectors: Vec<ConnectorSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnectorKind {
    Http,
    Local,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectorSpec {
    /// Module name seen by programs, e.g. `Supp`.
    pub name: String,
    pub kind: ConnectorKind,
    pub endpoint: Option<String>,
    #[serde(default = "default_call_timeout")]
    pub timeout_ms: u64,
    /// Operations safe to re-issue after a restart.
    #[serde(default)]
    pub idempotent: Vec<String>,
    #[serde(default)]
    pub constants: BTreeMap<String, serde_json::Value>,
    /// Operation to a map from the JSON argument array (or `*`) to the result.
    #[serde(default)]
    pub tables: BTreeMap<String, BTreeMap<String, serde_json::Value>>,
    /// Operation to a map from the first argument to a `timestamp,value` file.
    #[serde(default)]
    pub series: BTreeMap<String, BTreeMap<String, PathBuf>>,
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("ozy-data")
}

fn default_listen() -> String {
    "127.0.0.1:7878".into()
}

fn default_budget() -> usize {
    ozy_core::machine::DEFAULT_BUDGET
}

fn default_idle() -> u64 {
    60_000
}

fn default_ask_timeout() -> u64 {
    5_000
}

pub fn default_call_timeout() -> u64 {
    5_000
}

fn default_true() -> bool {
    true
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}: at `{at}`: {message}")]
    Parse { file: String, at: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl Default for ContainerConfig {
    fn default() -> Self {
        ContainerConfig {
            data_dir: default_data_dir(),
            listen: default_listen(),
            slice_budget: default_budget(),
            idle_passivation_ms: default_idle(),
            clock: ClockMode::Real,
            ask_timeout_ms: default_ask_timeout(),
            checkpoint: true,
            tenants: Vec::new(),
        }
    }
}

impl ContainerConfig {
    /// Parses `text`; relative paths resolve against `base`.
    pub fn from_toml(text: &str, origin: &str, base: &Path) -> Result<ContainerConfig, ConfigError> {
        let parse_err = |at: String, message: String| ConfigError::Parse { file: origin.to_string(), at, message };
        let de = toml::Deserializer::parse(text).map_err(|e| parse_err(".".into(), e.to_string()))?;
        let mut cfg: ContainerConfig = serde_path_to_error::deserialize(de).map_err(|e| parse_err(e.path().to_string(), e.inner().to_string()))?;
        cfg.data_dir = base.join(&cfg.data_dir);
        for t in &mut cfg.tenants {
            for p in t.programs.values_mut() {
                *p = base.join(&*p);
            }
            for c in &mut t.connectors {
                for files in c.series.values_mut() {
                    for f in files.values_mut() {
                        *f = base.join(&*f);
                    }
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies `OZY_DATA_DIR` / `OZY_LISTEN`.
    pub fn load(path: &Path) -> Result<ContainerConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut cfg = ContainerConfig::from_toml(&text, &path.display().to_string(), &base)?;
        if let Ok(d) = std::env::var("OZY_DATA_DIR") {
            cfg.data_dir = PathBuf::from(d);
        }
        if let Ok(l) = std::env::var("OZY_LISTEN") {
            cfg.listen = l;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.slice_budget == 0 {
            return bad("slice_budget must be positive".into());
        }
        let mut ids = BTreeSet::new();
        for t in &self.tenants {
            if !valid_token(&t.id) {
                return bad(format!("tenant id `{}` is not a valid token", t.id));
            }
            if !ids.insert(&t.id) {
                return bad(format!("tenant `{}` declared twice", t.id));
            }
            if t.token.is_empty() {
                return bad(format!("tenant `{}` has an empty token", t.id));
            }
            let mut names = BTreeSet::new();
            for c in &t.connectors {
                if !names.insert(&c.name) {
                    return bad(format!("tenant `{}`: connector `{}` declared twice", t.id, c.name));
                }
                if !c.name.starts_with(|ch: char| ch.is_ascii_uppercase()) || c.name == ozy_core::lang::desugar::ORCH_MODULE {
                    return bad(format!("tenant `{}`: connector name `{}` must be a capitalised module name other than Orch", t.id, c.name));
                }
                match (c.kind, &c.endpoint) {
                    (ConnectorKind::Http, None) => return bad(format!("connector `{}`: http connectors need an endpoint", c.name)),
                    (ConnectorKind::Http, Some(e)) => match reqwest::Url::parse(e) {
                        Ok(u) if matches!(u.scheme(), "http" | "https") => {}
                        _ => return bad(format!("connector `{}`: endpoint `{e}` is not an absolute http(s) URL", c.name)),
                    },
                    (ConnectorKind::Local, Some(_)) => return bad(format!("connector `{}`: local connectors take no endpoint", c.name)),
                    (ConnectorKind::Local, None) => {}
                }
                if c.timeout_ms == 0 {
                    return bad(format!("connector `{}`: timeout_ms must be positive", c.name));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
data_dir = "data"
clock = "virtual"
idle_passivation_ms = 0

[[tenants]]
id = "acme"
token = "secret"
programs = { purchase = "programs/purchase.oz" }

[[tenants.connectors]]
name = "Supp"
kind = "http"
endpoint = "http://127.0.0.1:9/supp"
idempotent = ["getEuro"]

[[tenants.connectors]]
name = "Reg"
kind = "local"
constants = { bankLoc = "bank://central" }
tables = { getIdByQuery = { '*' = "sup-7" } }
series = { level = { tank-1 = "data/tank-1.csv" } }
"#;

    #[test]
    fn parses_sample_and_resolves_paths() {
        let cfg = ContainerConfig::from_toml(SAMPLE, "ozy.toml", Path::new("/srv")).unwrap();
        assert_eq!(cfg.data_dir, PathBuf::from("/srv/data"));
        assert_eq!(cfg.clock, ClockMode::Virtual);
        assert_eq!(cfg.ask_timeout_ms, 5000);
        let t = &cfg.tenants[0];
        assert_eq!(t.programs["purchase"], PathBuf::from("/srv/programs/purchase.oz"));
        assert_eq!(t.connectors[0].timeout_ms, 5000);
        assert_eq!(t.connectors[1].series["level"]["tank-1"], PathBuf::from("/srv/data/tank-1.csv"));
    }

    #[test]
    fn errors_carry_the_offending_path() {
        let text = SAMPLE.replace("kind = \"local\"", "kind = \"soap\"");
        let err = ContainerConfig::from_toml(&text, "ozy.toml", Path::new("/")).unwrap_err().to_string();
        assert!(err.contains("tenants[0].connectors[1].kind"), "{err}");
        let err = ContainerConfig::from_toml("listen = 3", "ozy.toml", Path::new("/")).unwrap_err().to_string();
        assert!(err.contains("listen"), "{err}");
        let err = ContainerConfig::from_toml("colour = 1", "ozy.toml", Path::new("/")).unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");
    }

    #[test]
    fn validation_catches_bad_endpoints_and_duplicates() {
        let text = SAMPLE.replace("http://127.0.0.1:9/supp", "supp.local");
        assert!(matches!(ContainerConfig::from_toml(&text, "c", Path::new("/")), Err(ConfigError::Invalid(_))));
        let text = format!("{SAMPLE}\n[[tenants]]\nid = \"acme\"\ntoken = \"x\"\n");
        assert!(matches!(ContainerConfig::from_toml(&text, "c", Path::new("/")), Err(ConfigError::Invalid(_))));
        let text = SAMPLE.replace("id = \"acme\"", "id = \"ac me\"");
        assert!(matches!(ContainerConfig::from_toml(&text, "c", Path::new("/")), Err(ConfigError::Invalid(_))));
    }
}
