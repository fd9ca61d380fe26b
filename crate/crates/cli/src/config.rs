//! Config file loading and backend endpoint parsing.
//!
//! Settings resolve in three layers: built-in defaults, then the TOML file
//! (from `--config` or `$REASONFORGE_CONFIG`), then command-line flags.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use reasonforge_core::synthesis::GeneratorChoice;
use reasonforge_core::tools::BackendChoice;
use reasonforge_core::{RemoteClient, RemoteEndpoint};

pub const CONFIG_ENV: &str = "REASONFORGE_CONFIG";

/// On-disk settings. Every field is optional and unknown keys are rejected,
/// so a typo fails loudly instead of silently running on defaults.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub max_chain_len: Option<usize>,
    pub max_steps: Option<usize>,
    pub crop_alpha: Option<f64>,
    pub delta: Option<f64>,
    pub min_confidence: Option<f64>,
    pub paths_per_scene: Option<usize>,
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub backends: Backends,
}

/// Backend specs by role: `oracle` / `template` for the built-ins, an
/// `http(s)://` URL for an HTTP server, anything else as a command line to
/// spawn as a stdio child.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Backends {
    pub grounding: Option<String>,
    pub highlight: Option<String>,
    pub ocr: Option<String>,
    pub answer: Option<String>,
    pub policy: Option<String>,
    pub questioner: Option<String>,
    pub combiner: Option<String>,
}

impl FileConfig {
    pub fn load(flag: Option<&Path>) -> Result<Self> {
        let path = match flag {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(CONFIG_ENV).map(PathBuf::from),
        };
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let raw = std::fs::read_to_string(&path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        toml::from_str(&raw).with_context(|| format!("parsing config file {}", path.display()))
    }
}

pub fn parse_endpoint(spec: &str) -> Result<RemoteEndpoint> {
    if spec.starts_with("http://") || spec.starts_with("https://") {
        return Ok(RemoteEndpoint::http(spec));
    }
    let command: Vec<String> = spec.split_whitespace().map(str::to_string).collect();
    if command.is_empty() {
        bail!("empty backend endpoint");
    }
    Ok(RemoteEndpoint::subprocess(command))
}

/// One client per distinct endpoint spec, so four tools pointed at the same
/// server share a connection budget (and subprocess endpoints a child).
#[derive(Default)]
pub struct ClientCache {
    clients: HashMap<String, Arc<RemoteClient>>,
}

impl ClientCache {
    pub fn client(&mut self, spec: &str) -> Result<Arc<RemoteClient>> {
        if let Some(client) = self.clients.get(spec) {
            return Ok(client.clone());
        }
        let client = Arc::new(RemoteClient::new(parse_endpoint(spec)?));
        self.clients.insert(spec.to_string(), client.clone());
        Ok(client)
    }

    pub fn tool_backend(&mut self, spec: &str) -> Result<BackendChoice> {
        if spec == "oracle" {
            return Ok(BackendChoice::Oracle);
        }
        Ok(BackendChoice::Remote(self.client(spec)?))
    }

    pub fn generator(&mut self, spec: &str) -> Result<GeneratorChoice> {
        if spec == "template" {
            return Ok(GeneratorChoice::Template);
        }
        Ok(GeneratorChoice::Remote(self.client(spec)?))
    }
}
