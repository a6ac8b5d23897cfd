//! Run configuration and output directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use retain_asd::bench::ExperimentConfig;

use crate::ConfigError;

/// Everything a command needs to reproduce its run. `config.json` in every
/// run directory holds the resolved value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let bytes = fs::read(p).map_err(|e| ConfigError(format!("reading {}: {e}", p.display())))?;
                serde_json::from_slice::<RunConfig>(&bytes)
                    .map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.apply_seed();
        Ok(cfg)
    }

    /// Propagates the global seed to every seeded component.
    fn apply_seed(&mut self) {
        let s = self.seed;
        let e = &mut self.experiment;
        e.corpus.seed = s;
        e.train.seed = s;
        e.train.encoder.seed = s;
        e.pools.seed = s;
        e.subset_seed = s;
    }
}

/// Creates `out/<command>-<unix millis>`, adding a suffix rather than reusing
/// an existing directory.
pub fn new_run_dir(out: &Path, command: &str) -> Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let millis = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
    let stem = format!("{command}-{millis}");
    for n in 0.. {
        let name = if n == 0 { stem.clone() } else { format!("{stem}-{n}") };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!("unbounded suffix search")
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}
