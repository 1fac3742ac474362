//! Output directory: CSV/JSON artifacts and the reproducibility manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use mvsde::path::Trajectory;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::Task;
use crate::config::LoadedConfig;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

/// Everything needed to rerun a task and check its outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub task: Task,
    pub seed: u64,
    pub config_path: PathBuf,
    /// Directory that relative paths in the config resolve against.
    pub config_dir: PathBuf,
    pub config_sha256: String,
    pub config: String,
    pub files: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn with_file<F>(&mut self, name: &str, f: F) -> anyhow::Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        f(&mut w)
            .and_then(|_| w.flush())
            .with_context(|| format!("writing {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        self.with_file(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)
        })
    }

    pub fn trajectory(&mut self, name: &str, t: &Trajectory) -> anyhow::Result<()> {
        self.with_file(name, |w| t.write_csv(w))
    }

    /// Long-format CSV `particle,t,{prefix}1..{prefix}d`.
    pub fn paths(&mut self, name: &str, prefix: &str, paths: &[Trajectory]) -> anyhow::Result<()> {
        self.with_file(name, |w| {
            let mut csv = csv::Writer::from_writer(w);
            let dim = paths.first().map_or(0, |p| p.dim());
            let mut header = vec!["particle".to_string(), "t".to_string()];
            header.extend((1..=dim).map(|j| format!("{prefix}{j}")));
            csv.write_record(&header)?;
            let mut row = Vec::with_capacity(dim + 2);
            for (i, p) in paths.iter().enumerate() {
                for n in 0..p.grid().n_nodes() {
                    row.clear();
                    row.push(i.to_string());
                    row.push(p.grid().time(n).to_string());
                    row.extend(p.node(n).iter().map(|v| v.to_string()));
                    csv.write_record(&row)?;
                }
            }
            csv.flush()
        })
    }

    pub fn write_manifest(&mut self, loaded: &LoadedConfig, task: Task, seed: u64) -> anyhow::Result<()> {
        let mut files = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let bytes = fs::read(self.dir.join(name))?;
            files.push(FileDigest {
                name: name.clone(),
                sha256: sha256_hex(&bytes),
            });
        }
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            task,
            seed,
            config_path: loaded.path.canonicalize().unwrap_or_else(|_| loaded.path.clone()),
            config_dir: loaded.base_dir.clone(),
            config_sha256: sha256_hex(loaded.text.as_bytes()),
            config: loaded.text.clone(),
            files,
        };
        let path = self.dir.join(MANIFEST);
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}
