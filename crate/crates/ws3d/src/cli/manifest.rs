//! Run manifests. Every CLI run writes `manifest.json` before doing any real
//! work: the exact invocation, the resolved configuration, content hashes of
//! the inputs about to be read, and the outputs it intends to produce.
//! A run directory is therefore self-describing and re-runnable. Manifests
//! carry no timestamps so repeated runs stay byte-identical.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub crate_version: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: argv.to_vec(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(path)?,
        });
        Ok(())
    }

    /// Hashes every file with the extension, in name order.
    pub fn add_input_dir(&mut self, dir: &Path, extension: &str) -> Result<()> {
        for path in files_with_extension(dir, extension)? {
            self.add_input(&path)?;
        }
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Writes `manifest.json` at `path`, creating parent directories.
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes =
        fs::read(path).map_err(|e| Error::io(format!("hashing {}", path.display()), e))?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok(hex)
}

/// Files under `dir` with the given extension, sorted by file name.
pub fn files_with_extension(dir: &Path, extension: &str) -> Result<Vec<std::path::PathBuf>> {
    let entries =
        fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some(extension) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn manifest_hashes_inputs_and_round_trips_as_json() {
        let dir = TempDir::new().unwrap();
        let input = dir.path().join("data.bin");
        fs::write(&input, b"abc").unwrap();
        let mut m = RunManifest::new(
            "gen",
            &["gen".into(), "--count".into(), "2".into()],
            serde_json::json!({"seed": 7}),
        );
        m.add_input(&input).unwrap();
        m.add_output(&dir.path().join("out.bin"));
        let path = dir.path().join("run/manifest.json");
        m.write(&path).unwrap();

        let parsed: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(parsed["command"], "gen");
        assert_eq!(parsed["config"]["seed"], 7);
        // Known digest of "abc".
        assert_eq!(
            parsed["inputs"][0]["sha256"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn extension_listing_is_sorted_and_filtered() {
        let dir = TempDir::new().unwrap();
        for name in ["b.ws3d", "a.ws3d", "c.txt"] {
            fs::write(dir.path().join(name), b"x").unwrap();
        }
        let files = files_with_extension(dir.path(), "ws3d").unwrap();
        let names: Vec<_> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap())
            .collect();
        assert_eq!(names, ["a.ws3d", "b.ws3d"]);
    }
}
