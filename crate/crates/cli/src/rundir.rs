//! Per-seed output directories guarded by a manifest.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use prx_core::io::Manifest;

pub const MANIFEST: &str = "manifest.json";

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}

pub struct RunDir {
    pub path: PathBuf,
    pub manifest: Manifest,
}

impl RunDir {
    /// Starts a fresh run directory; files from an earlier run are no longer
    /// listed and therefore cannot be read back.
    pub fn create(root: &Path, seed: u64, config_hash: &str) -> Result<Self> {
        let path = seed_dir(root, seed);
        std::fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        let dir = Self {
            path,
            manifest: Manifest::new(config_hash.to_string(), seed),
        };
        dir.save()?;
        Ok(dir)
    }

    /// Opens an existing run directory, refusing one produced under a
    /// different configuration.
    pub fn open(root: &Path, seed: u64, config_hash: &str) -> Result<Self> {
        let path = seed_dir(root, seed);
        let text = std::fs::read_to_string(path.join(MANIFEST))
            .with_context(|| format!("no run for seed {seed} in {} (run `simulate` first)", root.display()))?;
        let manifest: Manifest = serde_json::from_str(&text).context("reading manifest")?;
        if manifest.config_hash != config_hash {
            bail!(
                "configuration hash mismatch in {}: files were produced with {} but the current configuration hashes to {}",
                path.display(),
                manifest.config_hash,
                config_hash
            );
        }
        if manifest.seed != seed {
            bail!("manifest in {} belongs to seed {}", path.display(), manifest.seed);
        }
        Ok(Self { path, manifest })
    }

    fn save(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(self.path.join(MANIFEST), text + "\n")?;
        Ok(())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let target = self.path.join(name);
        std::fs::write(&target, bytes).with_context(|| format!("writing {}", target.display()))?;
        self.manifest.record(name, bytes);
        self.save()
    }

    pub fn read(&self, name: &str) -> Result<Vec<u8>> {
        Ok(self.manifest.read_verified(&self.path, name)?)
    }
}
