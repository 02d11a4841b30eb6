use std::path::{Path, PathBuf};

use gpr_odom::trainer::RunMetadata;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::canonical;
use crate::CliError;

/// Output directory of one invocation plus its echo files.
pub struct RunDir {
    pub path: PathBuf,
    quiet: bool,
}

/// First 12 hex digits of SHA-256 over the command name and canonical
/// config.
pub fn config_hash<C: Serialize>(command: &str, cfg: &C) -> String {
    let body = serde_json::to_string(&canonical(cfg)).expect("config serialises");
    let digest = Sha256::new().chain_update(command.as_bytes()).chain_update([0]).chain_update(body).finalize();
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

impl RunDir {
    /// Creates `<out>/<command>-<UTC timestamp>-<config hash>` and writes
    /// `config.json` and `run.json` into it.
    pub fn create<C: Serialize>(
        out: &Path,
        command: &str,
        cfg: &C,
        seed: u64,
        dataset_hash: Option<String>,
        quiet: bool,
    ) -> Result<Self, CliError> {
        let now = chrono::Utc::now();
        let base = format!("{command}-{}-{}", now.format("%Y%m%dT%H%M%S%3fZ"), config_hash(command, cfg));
        let mut path = out.join(&base);
        let mut n = 1;
        while path.exists() {
            path = out.join(format!("{base}-{n}"));
            n += 1;
        }
        std::fs::create_dir_all(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let dir = Self { path, quiet };
        let echo = serde_json::to_string_pretty(&canonical(cfg)).expect("config serialises");
        dir.write("config.json", echo)?;
        let meta = RunMetadata {
            command: command.to_string(),
            created: now.to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            seed,
            config: canonical(cfg),
            dataset_hash,
            threads: gpr_odom::par::threads(),
        };
        meta.write(&dir.file("run.json"))?;
        Ok(dir)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, body: impl AsRef<[u8]>) -> Result<(), CliError> {
        let p = self.file(name);
        std::fs::write(&p, body).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
    }

    /// Progress note on stderr unless `--quiet`.
    pub fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}
