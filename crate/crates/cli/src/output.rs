use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Output files collected in memory and written only once the whole run has
/// succeeded, each through a temporary file and an atomic rename.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    /// Headerless CSV, one row per line.
    pub fn csv<R: AsRef<[f64]>>(&mut self, name: &str, rows: impl IntoIterator<Item = R>) {
        let mut text = String::new();
        for row in rows {
            let line: Vec<String> = row.as_ref().iter().map(|v| v.to_string()).collect();
            text.push_str(&line.join(","));
            text.push('\n');
        }
        self.add(name, text.into_bytes());
    }

    /// One value per line.
    pub fn column(&mut self, name: &str, values: &[f64]) {
        self.csv(name, values.iter().map(std::slice::from_ref));
    }

    pub fn names(&self) -> Vec<String> {
        self.files.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn commit(self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.dir)?;
        // Stage everything first so a failure leaves no output behind.
        let mut staged = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
            tmp.write_all(bytes)?;
            tmp.as_file().sync_all()?;
            staged.push((tmp, self.dir.join(name)));
        }
        for (tmp, target) in staged {
            tmp.persist(&target).map_err(|e| CliError::Io(e.error))?;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: &'static str,
    /// SHA-256 of every input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub threads: usize,
    pub wall_time_seconds: f64,
}

/// Records input digests while a subcommand loads its files.
#[derive(Default)]
pub struct Inputs {
    digests: BTreeMap<String, String>,
}

impl Inputs {
    /// Hash a file that is about to be loaded.
    pub fn digest(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        self.digests
            .insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    pub fn into_digests(self) -> BTreeMap<String, String> {
        self.digests
    }
}

pub struct Run {
    pub subcommand: &'static str,
    pub started: Instant,
    pub inputs: Inputs,
    pub outputs: Outputs,
}

impl Run {
    pub fn new(subcommand: &'static str, out: &Path) -> Self {
        Self {
            subcommand,
            started: Instant::now(),
            inputs: Inputs::default(),
            outputs: Outputs::new(out),
        }
    }

    /// Append the manifest and write everything.
    pub fn finish<C: Serialize>(mut self, config: &C, seed: Option<u64>) -> Result<(), CliError> {
        let mut outputs = self.outputs.names();
        outputs.push("manifest.json".into());
        let manifest = RunManifest {
            subcommand: self.subcommand.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            version: env!("CARGO_PKG_VERSION"),
            inputs: self.inputs.into_digests(),
            outputs,
            threads: rayon::current_num_threads(),
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        self.outputs.json("manifest.json", &manifest)?;
        self.outputs.commit()
    }
}
