//! Artifact files and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Versions {
    #[serde(rename = "rbsde-lab")]
    core: &'static str,
    #[serde(rename = "rbsde-lab-cli")]
    cli: &'static str,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_path: String,
    /// Hash of the resolved config after overrides, as canonical TOML.
    config_sha256: String,
    config_file_sha256: String,
    overrides: &'a [String],
    master_seed: u64,
    threads: Option<usize>,
    versions: Versions,
    modules: BTreeMap<&'static str, &'static str>,
    status: &'a str,
    artifacts: &'a [Artifact],
}

const MODULES: [&str; 7] = [
    "core_model",
    "forward_solver",
    "obstacle_pde",
    "rbsde_solver",
    "rate_function",
    "ldp_harness",
    "cli",
];

pub struct RunDir {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl RunDir {
    pub fn create(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, bytes)?;
        self.artifacts.push(Artifact {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    #[allow(clippy::too_many_arguments)]
    pub fn finish(
        self,
        command: &str,
        config_path: &Path,
        canonical_config: &str,
        file_bytes: &[u8],
        overrides: &[String],
        master_seed: u64,
        threads: Option<usize>,
        status: &str,
    ) -> std::io::Result<()> {
        let m = Manifest {
            command,
            config_path: config_path.display().to_string(),
            config_sha256: sha256_hex(canonical_config.as_bytes()),
            config_file_sha256: sha256_hex(file_bytes),
            overrides,
            master_seed,
            threads,
            versions: Versions {
                core: rbsde_lab::VERSION,
                cli: env!("CARGO_PKG_VERSION"),
            },
            modules: MODULES.iter().map(|m| (*m, rbsde_lab::VERSION)).collect(),
            status,
            artifacts: &self.artifacts,
        };
        let mut s = serde_json::to_string_pretty(&m).map_err(std::io::Error::other)?;
        s.push('\n');
        fs::write(self.dir.join("manifest.json"), s)
    }
}
