//! Run manifest: enough to replay a run and check its outputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::{self, IoResult};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

/// No timestamps and no absolute paths, so repeated runs give identical
/// bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    /// The resolved config the hash was taken over.
    pub config: serde_json::Value,
    pub versions: BTreeMap<String, String>,
    pub outputs: Vec<OutputFile>,
}

/// Collects output files as they are written, then seals them into a
/// manifest.
#[derive(Debug)]
pub struct OutputSet<'a> {
    dir: &'a Path,
    files: BTreeMap<String, String>,
}

impl<'a> OutputSet<'a> {
    pub fn new(dir: &'a Path) -> Self {
        Self {
            dir,
            files: BTreeMap::new(),
        }
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> IoResult<()> {
        io::write_bytes(&self.dir.join(name), bytes)?;
        self.files.insert(name.into(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> IoResult<()> {
        self.bytes(name, &io::to_json_bytes(value))
    }

    /// Writes through `write` to the final path, then hashes what landed.
    pub fn with<F: FnOnce(&Path) -> IoResult<()>>(&mut self, name: &str, write: F) -> IoResult<()> {
        let path = self.dir.join(name);
        write(&path)?;
        let bytes = std::fs::read(&path).map_err(|source| io::IoError::File {
            path: path.clone(),
            source,
        })?;
        self.files.insert(name.into(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    pub fn finish<C: Serialize>(self, command: &str, seed: u64, config_hash: &str, config: &C) -> IoResult<Manifest> {
        let mut versions = BTreeMap::new();
        versions.insert("qboost".into(), env!("CARGO_PKG_VERSION").into());
        versions.insert("qboost-core".into(), qboost_core::VERSION.into());
        let manifest = Manifest {
            command: command.into(),
            seed,
            config_hash: config_hash.into(),
            config: serde_json::to_value(config).expect("serializable config"),
            versions,
            outputs: self
                .files
                .into_iter()
                .map(|(file, sha256)| OutputFile { file, sha256 })
                .collect(),
        };
        io::write_json(&self.dir.join(FILE_NAME), &manifest)?;
        Ok(manifest)
    }
}
