use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use scenario_core::sampling::quantile;
use scenario_core::Result;

/// Column name for a quantile: `0.16 -> q16`, `0.025 -> q2.5`.
pub fn quantile_column(q: f64) -> String {
    let pct = (q * 1e6).round() / 1e4;
    format!("q{pct}")
}

pub fn mean_and_quantiles(values: &[f64], qs: &[f64]) -> Vec<f64> {
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    let mut out = Vec::with_capacity(qs.len() + 1);
    out.push(mean);
    out.extend(qs.iter().map(|&q| quantile(values, q)));
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes the files of one run and records their hashes for the manifest.
pub struct OutputDir {
    pub root: PathBuf,
    files: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.root.join(name), bytes)?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        self.write(name, &bytes)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    /// Last file of a run; lists every other file with its hash.
    pub fn finish(mut self, manifest: Manifest) -> Result<()> {
        let m = ManifestFile {
            files: std::mem::take(&mut self.files),
            ..manifest.into()
        };
        let mut s = serde_json::to_string_pretty(&m)?;
        s.push('\n');
        std::fs::write(self.root.join("manifest.json"), s)?;
        Ok(())
    }
}

pub struct Manifest {
    pub command: &'static str,
    pub config_sha256: Option<String>,
    pub seed: u64,
    pub chains: usize,
}

#[derive(Serialize)]
struct ManifestFile {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config_sha256: Option<String>,
    seed: u64,
    chains: usize,
    files: BTreeMap<String, String>,
}

impl From<Manifest> for ManifestFile {
    fn from(m: Manifest) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: m.command,
            config_sha256: m.config_sha256,
            seed: m.seed,
            chains: m.chains,
            files: BTreeMap::new(),
        }
    }
}

pub fn fmt(v: f64) -> String {
    format!("{v}")
}
