//! Run manifests: a small JSON record written next to every command's
//! outputs, stating what produced them and from what inputs. Contains no
//! timestamps or host details, so rerunning a command reproduces the
//! manifest byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Version of this tool.
    pub tool_version: String,
    /// Which subcommand ran.
    pub command: String,
    /// Schema descriptor the run was based on, as given on the command line.
    pub schema: String,
    /// Fingerprint of the aggregation plan in effect, when one was derived.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan_fingerprint: Option<String>,
    /// Files the command wrote, relative to the manifest's directory.
    pub outputs: Vec<String>,
    /// Command-specific settings (engine, seed, protocol, config).
    pub settings: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, schema: &Path) -> RunManifest {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            schema: schema.display().to_string(),
            plan_fingerprint: None,
            outputs: Vec::new(),
            settings: serde_json::Value::Null,
        }
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path, json)
    }

    pub fn read(path: &Path) -> std::io::Result<RunManifest> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
