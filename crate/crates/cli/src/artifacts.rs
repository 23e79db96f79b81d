//! Configuration loading, output files, checks and run manifests.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dualsched::config::{Experiment, ExperimentConfig, Source};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Common;

/// Bad or unreadable configuration; exits with code 2.
#[derive(Debug)]
pub struct ConfigProblem(pub String);

impl fmt::Display for ConfigProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigProblem {}

pub fn config_problem(msg: impl fmt::Display) -> anyhow::Error {
    ConfigProblem(msg.to_string()).into()
}

#[derive(Debug, Clone, Copy)]
pub enum Bundled {
    A,
    B,
}

/// The experiment named by `--config` (or the bundled default) with the
/// command-line overrides applied.
pub fn load_experiment(common: &Common, default: Bundled) -> Result<Experiment> {
    let mut exp = match &common.config {
        Some(path) => Experiment::load(path).map_err(|e| config_problem(format!("{}: {e}", path.display())))?,
        None => match default {
            Bundled::A => Experiment::bundled_a(),
            Bundled::B => Experiment::bundled_b(),
        },
    };
    if let Some(tau) = common.tau {
        exp = exp.with_tau(tau).map_err(|e| config_problem(format!("--tau {tau}: {e}")))?;
    }
    if let Some(seed) = common.seed {
        exp.config.sim.seed = seed;
        exp.config.learning.seed = seed;
    }
    if let Some(r) = common.replications {
        if r == 0 {
            return Err(config_problem("--replications must be at least 1"));
        }
        exp.config.sim.replications = r;
    }
    Ok(exp)
}

/// The configuration with file references inlined, as run.
pub fn resolved_config(exp: &Experiment) -> ExperimentConfig {
    let mut cfg = exp.config.clone();
    cfg.channel = Source::Inline(exp.channel.clone());
    cfg.rates = Source::Inline(exp.rates.clone());
    cfg
}

pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Serialize)]
struct Seeds {
    sim: u64,
    learning: u64,
    tuning: u64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_sha256: String,
    config_file: &'a str,
    seeds: Seeds,
    replications: usize,
    tau: f64,
    args: Vec<String>,
    outputs: &'a [String],
}

/// An output directory that remembers what was written to it.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn file(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.path(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut f = self.file(name)?;
        serde_json::to_writer_pretty(&mut f, value)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }

    /// Writes `checks_<command>.json`, the resolved configuration and the
    /// manifest. Returns whether every check passed.
    pub fn finish(mut self, command: &str, exp: &Experiment, checks: &[Check]) -> Result<bool> {
        self.json(&format!("checks_{command}.json"), &checks)?;
        let cfg = resolved_config(exp);
        let config_file = format!("config_{command}.json");
        self.json(&config_file, &cfg)?;
        let manifest_name = format!("manifest_{command}.json");
        self.written.push(manifest_name.clone());
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: config_hash(&cfg)?,
            config_file: &config_file,
            seeds: Seeds { sim: cfg.sim.seed, learning: cfg.learning.seed, tuning: cfg.sweep.tuning_seed },
            replications: cfg.sim.replications,
            tau: cfg.model.tau,
            args: std::env::args().collect(),
            outputs: &self.written,
        };
        let path = self.path(&manifest_name);
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(checks.iter().all(|c| c.passed))
    }
}
