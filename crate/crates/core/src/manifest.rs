//! Run manifests: what produced an artifact, from which inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fsutil::{sha256_file, write_atomic};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub started: String,
    pub finished: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub settings: BTreeMap<String, String>,
    pub stages: Vec<Stage>,
    /// SHA-256 of every input and output file.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn new(command: &str, dataset: &str) -> Self {
        RunManifest {
            command: command.to_owned(),
            dataset: dataset.to_owned(),
            ..Default::default()
        }
    }

    pub fn setting(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.settings.insert(key.to_owned(), value.to_string());
        self
    }

    /// Runs `f`, recording its wall-clock span.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let started = now();
        let out = f();
        self.stages.push(Stage {
            name: name.to_owned(),
            started,
            finished: now(),
        });
        out
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// `<artifact>.manifest.json`
    pub fn path_for(artifact: &Path) -> PathBuf {
        let mut name = artifact.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        artifact.with_file_name(name)
    }

    pub fn write_next_to(&self, artifact: &Path) -> Result<PathBuf> {
        let path = Self::path_for(artifact);
        write_atomic(&path, |w| {
            serde_json::to_writer_pretty(&mut *w, self)?;
            std::io::Write::write_all(w, b"\n").map_err(|e| crate::Error::io(&path, e))
        })?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
