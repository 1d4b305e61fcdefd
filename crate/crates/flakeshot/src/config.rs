//! Experiment manifests in TOML. Relative paths resolve against the file's
//! directory; command-line flags override file values.

use std::path::{Path, PathBuf};

use flakeshot_core::baseline::BaselineConfig;
use flakeshot_core::harness::MccvConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: provider {value:?} is neither \"test\" nor \"pretrained:<dir>\"")]
    Provider { path: PathBuf, value: String },
    #[error("{path}: {what} {target} is not resolvable (parent directory missing)")]
    Unresolvable { path: PathBuf, what: &'static str, target: PathBuf },
    #[error("{path}: invalid mccv section: {message}")]
    Mccv { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectEntry {
    pub id: String,
    /// API root, e.g. `https://gitlab.com/api/v4`.
    #[serde(default)]
    pub base_url: Option<String>,
    pub store: PathBuf,
    /// Manual-label overlay CSV.
    #[serde(default)]
    pub overlay: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub projects: Vec<ProjectEntry>,
    /// `test` or `pretrained:<dir>`.
    pub provider: String,
    pub mccv: MccvConfig,
    pub baseline: BaselineConfig,
    pub output_dir: PathBuf,
    pub verbosity: u8,
    pub jobs: usize,
    /// `mccv.master_seed` was written in the file rather than defaulted; a
    /// manifest seed counts as explicit for stochastic commands.
    #[serde(skip)]
    pub seed_explicit: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            projects: Vec::new(),
            provider: "test".into(),
            mccv: MccvConfig::default(),
            baseline: BaselineConfig::default(),
            output_dir: PathBuf::from("out"),
            verbosity: 0,
            jobs: 1,
            seed_explicit: false,
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        cfg.seed_explicit = text
            .parse::<toml::Table>()
            .ok()
            .and_then(|t| t.get("mccv").and_then(|m| m.get("master_seed")).cloned())
            .is_some();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        let check = |what: &'static str, target: &Path| -> Result<(), ConfigError> {
            let parent_ok = target.parent().is_none_or(|p| p.as_os_str().is_empty() || p.is_dir());
            if target.exists() || parent_ok {
                Ok(())
            } else {
                Err(ConfigError::Unresolvable { path: path.to_path_buf(), what, target: target.to_path_buf() })
            }
        };
        cfg.output_dir = resolve(&base, &cfg.output_dir);
        check("output_dir", &cfg.output_dir)?;
        for p in &mut cfg.projects {
            p.store = resolve(&base, &p.store);
            check("store", &p.store)?;
            if let Some(o) = &mut p.overlay {
                *o = resolve(&base, o);
                if !o.is_file() {
                    return Err(ConfigError::Unresolvable { path: path.to_path_buf(), what: "overlay", target: o.clone() });
                }
            }
        }
        if crate::provider::ProviderSpec::parse(&cfg.provider).is_none() {
            return Err(ConfigError::Provider { path: path.to_path_buf(), value: cfg.provider });
        }
        cfg.mccv.validate().map_err(|e| ConfigError::Mccv { path: path.to_path_buf(), message: e.to_string() })?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_and_resolves() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("stores")).unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            r#"
provider = "test"
output_dir = "out"
jobs = 4

[mccv]
repeats = 20
shots = 8
master_seed = 7

[[projects]]
id = "group/os"
base_url = "https://gitlab.com/api/v4"
store = "stores/os"
"#,
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.mccv.repeats, 20);
        assert_eq!(cfg.mccv.trials, 5);
        assert_eq!(cfg.projects[0].store, dir.path().join("stores/os"));
        assert_eq!(cfg.jobs, 4);
        assert!(cfg.seed_explicit);
    }

    #[test]
    fn unknown_keys_and_missing_paths_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "colour = \"blue\"\n").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(ConfigError::Parse { .. })));
        std::fs::write(&path, "[[projects]]\nid = \"x\"\nstore = \"no/such/dir/store\"\n").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(ConfigError::Unresolvable { what: "store", .. })));
        std::fs::write(&path, "[mccv]\nrepeats = 0\n").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(ConfigError::Mccv { .. })));
    }
}
