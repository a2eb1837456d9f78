//! Daemon configuration: a small TOML file naming the node's owner, the
//! key-table layout, and where the daemon listens and persists.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use icnshare::Construction;
use serde::Deserialize;

/// On-disk daemon configuration.
///
/// Relative paths are resolved against the directory the config file
/// itself lives in, so a node's whole state can be moved as one folder.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    /// Identity of the owner this node serves for.
    pub owner_id: String,
    /// Key-table layout: 1 = one delegation key per subscriber,
    /// 2 = one delegation key per policy membership.
    pub construction: u8,
    /// Listen endpoint, e.g. `127.0.0.1:4433`; port 0 picks an ephemeral
    /// port (reported on stdout at startup).
    pub listen: String,
    /// Snapshot file for the node's tables. Sealed bodies are stored
    /// beside it in `<snapshot>.bodies/`.
    pub snapshot: PathBuf,
    /// Parameter-directory file used to resolve identities.
    pub directory: PathBuf,
}

impl NodeConfig {
    /// Read a config file, resolving its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: NodeConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.snapshot = base.join(&config.snapshot);
        config.directory = base.join(&config.directory);
        Ok(config)
    }

    /// The table layout the numeric flag selects.
    pub fn construction(&self) -> Result<Construction> {
        match self.construction {
            1 => Ok(Construction::PerSubscriber),
            2 => Ok(Construction::PerPolicyMember),
            other => bail!("construction must be 1 or 2, not {other}"),
        }
    }

    /// Where the node stores sealed bodies.
    pub fn bodies_dir(&self) -> PathBuf {
        let mut name = self.snapshot.file_name().unwrap_or_default().to_os_string();
        name.push(".bodies");
        self.snapshot.with_file_name(name)
    }
}
