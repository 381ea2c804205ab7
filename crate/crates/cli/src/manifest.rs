use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::error::{CliError, CliResult};

/// Provenance record written next to every output artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &KvConfig, seed: Option<u64>, outputs: &[&Path]) -> Self {
        Self {
            command: command.to_string(),
            config: config.entries().clone(),
            seed,
            version: spdnorm::VERSION.to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        }
    }

    /// `<artifact>.manifest.json`.
    pub fn path_for(artifact: &Path) -> PathBuf {
        let mut name = artifact.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    }

    /// Writes the manifest next to the first output.
    pub fn write(&self) -> CliResult<PathBuf> {
        let first = self
            .outputs
            .first()
            .ok_or_else(|| CliError::Usage("manifest without outputs".into()))?;
        let path = Self::path_for(Path::new(first));
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::io(&path, std::io::Error::other(e)))?;
        std::fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_path() {
        assert_eq!(
            RunManifest::path_for(Path::new("out/run.csv")),
            PathBuf::from("out/run.csv.manifest.json")
        );
    }

    #[test]
    fn json_round_trip() {
        let kv = KvConfig::parse("a = 1").unwrap();
        let m = RunManifest::new("train", &kv, Some(3), &[Path::new("m.bin")]);
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<RunManifest>(&text).unwrap(), m);
    }
}
