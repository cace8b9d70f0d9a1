//! Run directories: result files plus a manifest recording what produced them.
//!
//! Nothing time- or host-dependent is written, so the same configuration and
//! seed give byte-identical directories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    config_sha256: String,
    seed: u64,
    nndiff_version: &'a str,
    files: &'a [String],
    passed: Option<bool>,
}

pub struct RunDir {
    root: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Open a CSV writer for `name` with the given header row.
    pub fn csv(&mut self, name: &str, header: &[&str]) -> Result<csv::Writer<fs::File>, CliError> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        w.write_record(header)?;
        self.files.push(name.to_string());
        Ok(w)
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.path(name), text)?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Write the config snapshot and the manifest. `passed` is the verdict of
    /// the run's statistical check, if it has one.
    pub fn finish(
        mut self,
        subcommand: &str,
        cfg: &ExperimentConfig,
        passed: Option<bool>,
    ) -> Result<(), CliError> {
        let snapshot = serde_json::to_string_pretty(cfg)?;
        fs::write(self.path("config.json"), format!("{snapshot}\n"))?;
        self.files.push("config.json".into());
        let manifest = Manifest {
            subcommand,
            config_sha256: config_hash(&snapshot),
            seed: cfg.seed,
            nndiff_version: env!("CARGO_PKG_VERSION"),
            files: &self.files,
            passed,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(self.path("manifest.json"), format!("{text}\n"))?;
        Ok(())
    }
}

pub fn config_hash(snapshot: &str) -> String {
    let digest = Sha256::digest(snapshot.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Shortest decimal that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}
