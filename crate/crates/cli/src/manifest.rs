//! Run manifests: a JSON record written next to every command's outputs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Failure;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

impl Artifact {
    pub fn of(path: &Path) -> Result<Self, Failure> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// The full command line; `slisemap replay` re-runs it.
    pub argv: Vec<String>,
    pub params: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub duration_secs: f64,
    pub version: String,
}

static ARGV: Mutex<Option<Vec<String>>> = Mutex::new(None);

/// Records `argv` instead of the process arguments in later manifests.
pub fn set_argv(argv: Vec<String>) {
    *ARGV.lock().expect("argv lock") = Some(argv);
}

fn argv() -> Vec<String> {
    ARGV.lock()
        .expect("argv lock")
        .clone()
        .unwrap_or_else(|| std::env::args().collect())
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let mut reader = BufReader::new(File::open(path).map_err(|e| Failure::io(path, e))?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let read = reader.read(&mut buf).map_err(|e| Failure::io(path, e))?;
        if read == 0 {
            break;
        }
        hasher.update(&buf[..read]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// `out.json` -> `out.manifest.json`, next to the main output.
pub fn manifest_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.manifest.json"))
}

/// Collects what a command read and wrote, then writes the manifest.
pub struct Recorder {
    command: &'static str,
    params: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    start: Instant,
}

impl Recorder {
    pub fn new(command: &'static str, params: &impl Serialize, seed: Option<u64>) -> Self {
        Self {
            command,
            params: serde_json::to_value(params).expect("parameters serialize"),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            start: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn finish(self, path: &Path) -> Result<RunManifest, Failure> {
        let digest = |paths: &[PathBuf]| paths.iter().map(|p| Artifact::of(p)).collect::<Result<Vec<_>, _>>();
        let manifest = RunManifest {
            command: self.command.into(),
            argv: argv(),
            params: self.params,
            seed: self.seed,
            inputs: digest(&self.inputs)?,
            outputs: digest(&self.outputs)?,
            duration_secs: self.start.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").into(),
        };
        let mut w = BufWriter::new(File::create(path).map_err(|e| Failure::io(path, e))?);
        serde_json::to_writer_pretty(&mut w, &manifest).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Failure::io(path, e))?;
        Ok(manifest)
    }
}

pub fn load(path: &Path) -> Result<RunManifest, Failure> {
    let file = File::open(path).map_err(|e| Failure::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_known_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("abc.txt");
        std::fs::write(&path, "abc").unwrap();
        assert_eq!(
            sha256_file(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(manifest_path(Path::new("runs/sol.json")), Path::new("runs/sol.manifest.json"));
        assert_eq!(manifest_path(Path::new("plot.svg")), Path::new("plot.manifest.json"));
    }
}
