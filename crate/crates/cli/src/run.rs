//! Output directories: an exclusive lockfile while a command writes, and a
//! manifest describing the run once it is done.

use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::LoadedConfig;

pub const LOCK_FILE: &str = ".codeinterp.lock";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Digest of a directory: every regular file below it, in path order, with
/// its relative path. Run bookkeeping files are skipped.
pub fn dir_sha256(dir: &Path) -> anyhow::Result<String> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if !is_bookkeeping(&path) {
                files.push(path);
            }
        }
    }
    files.sort();
    let mut hasher = Sha256::new();
    for f in files {
        hasher.update(f.strip_prefix(dir).unwrap_or(&f).to_string_lossy().as_bytes());
        hasher.update([0]);
        hasher.update(fs::read(&f).with_context(|| format!("reading {}", f.display()))?);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn is_bookkeeping(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n == LOCK_FILE || (n.starts_with("manifest-") && n.ends_with(".json")))
}

#[derive(Debug, Serialize)]
struct InputRecord {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Versions {
    codeinterp: &'static str,
    codeinterp_core: &'static str,
    codeinterp_neural: &'static str,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    seed: u64,
    config_file: Option<String>,
    config_file_sha256: Option<String>,
    /// Digest of the effective settings after flags were applied.
    config_sha256: String,
    settings: &'a Value,
    inputs: &'a [InputRecord],
    outputs: Vec<String>,
    summary: &'a Value,
    versions: Versions,
    created_at: String,
}

/// Holds the lock on an output directory for the duration of a command.
pub struct RunDir {
    dir: PathBuf,
    lock: PathBuf,
    command: &'static str,
    inputs: Vec<InputRecord>,
    outputs: Vec<PathBuf>,
}

impl RunDir {
    /// Creates `dir` if needed and takes its lock. Fails when another run
    /// holds it.
    pub fn open(dir: &Path, command: &'static str) -> anyhow::Result<RunDir> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let lock = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id()).ok();
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                bail!(
                    "{} is locked by another run ({}); remove the file if no run is active",
                    dir.display(),
                    lock.display()
                );
            }
            Err(e) => return Err(e).with_context(|| format!("creating {}", lock.display())),
        }
        Ok(RunDir {
            dir: dir.to_path_buf(),
            lock,
            command,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Records an input file or directory with its digest.
    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let sha256 = if path.is_dir() { dir_sha256(path)? } else { file_sha256(path)? };
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes `contents` to `name` inside the directory and records it.
    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.output(&path);
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<PathBuf> {
        let text = serde_json::to_string_pretty(value).context("serializing")? + "\n";
        self.write(name, text)
    }

    /// Writes `manifest-<command>.json`. This is the only file of a run that
    /// carries a timestamp.
    pub fn finish<S: Serialize>(
        self,
        config: &LoadedConfig,
        seed: u64,
        settings: &S,
        summary: Value,
    ) -> anyhow::Result<PathBuf> {
        let settings = serde_json::to_value(settings).context("serializing settings")?;
        let canonical = serde_json::to_vec(&settings).context("serializing settings")?;
        let manifest = RunManifest {
            command: self.command,
            seed,
            config_file: config.path.as_ref().map(|p| p.display().to_string()),
            config_file_sha256: config.path.as_ref().map(|_| sha256_hex(&config.bytes)),
            config_sha256: sha256_hex(&canonical),
            settings: &settings,
            inputs: &self.inputs,
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
            summary: &summary,
            versions: Versions {
                codeinterp: env!("CARGO_PKG_VERSION"),
                codeinterp_core: codeinterp::VERSION,
                codeinterp_neural: codeinterp_neural::VERSION,
            },
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        };
        let path = self.path(&format!("manifest-{}.json", self.command));
        let text = serde_json::to_string_pretty(&manifest).context("serializing manifest")? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_lock_is_refused_until_released() {
        let dir = tempfile::tempdir().unwrap();
        let first = RunDir::open(dir.path(), "test").unwrap();
        let err = RunDir::open(dir.path(), "test").err().unwrap();
        assert!(err.to_string().contains("locked"), "{err}");
        drop(first);
        assert!(!dir.path().join(LOCK_FILE).exists());
        RunDir::open(dir.path(), "test").unwrap();
    }

    #[test]
    fn manifest_records_seed_hashes_and_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        fs::write(&input, "abc").unwrap();
        let mut run = RunDir::open(&dir.path().join("out"), "demo").unwrap();
        run.input(&input).unwrap();
        run.write("result.csv", "a,b\n").unwrap();
        let path = run
            .finish(&LoadedConfig::default(), 42, &serde_json::json!({"k": 1}), Value::Null)
            .unwrap();
        let m: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(m["seed"], 42);
        assert_eq!(m["command"], "demo");
        assert_eq!(m["inputs"][0]["sha256"], sha256_hex(b"abc"));
        assert_eq!(m["config_sha256"], sha256_hex(br#"{"k":1}"#));
        assert!(m["outputs"][0].as_str().unwrap().ends_with("result.csv"));
        assert!(m["created_at"].as_str().is_some());
    }

    #[test]
    fn directory_digest_ignores_bookkeeping() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), "1").unwrap();
        let before = dir_sha256(dir.path()).unwrap();
        fs::write(dir.path().join("manifest-x.json"), "{}").unwrap();
        assert_eq!(dir_sha256(dir.path()).unwrap(), before);
        fs::write(dir.path().join("b.txt"), "2").unwrap();
        assert_ne!(dir_sha256(dir.path()).unwrap(), before);
    }
}
