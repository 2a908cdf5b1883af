//! Output directory writer that hashes every file it creates.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::{export_dataset, AttributedDataset};
use crate::error::Result;
use crate::nn::{save_model, Persist};

pub struct Artifacts {
    root: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl Artifacts {
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            hashes: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `rel` (slash-separated, relative to the root).
    pub fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes.as_ref())?;
        self.hashes.insert(rel.to_string(), hex::encode(Sha256::digest(bytes.as_ref())));
        Ok(path)
    }

    pub fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        self.write(rel, serde_json::to_string_pretty(value)? + "\n")
    }

    /// `<stem>.svg` and its CSV twin.
    pub fn figure(&mut self, stem: &str, (svg, csv): (String, String)) -> Result<()> {
        self.write(&format!("{stem}.svg"), svg)?;
        self.write(&format!("{stem}.csv"), csv)?;
        Ok(())
    }

    pub fn model<M: Persist>(&mut self, rel: &str, model: &M) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        save_model(&path, model)?;
        self.hashes.insert(rel.to_string(), sha256_file(&path)?);
        Ok(path)
    }

    /// Registers files written by other means (e.g. dataset export).
    pub fn register(&mut self, rel: &str) -> Result<()> {
        let hash = sha256_file(self.root.join(rel))?;
        self.hashes.insert(rel.to_string(), hash);
        Ok(())
    }

    /// Exports `ds` under `rel` and hashes the exported files.
    pub fn dataset(&mut self, rel: &str, ds: &AttributedDataset, config: serde_json::Value, seed: Option<u64>) -> Result<()> {
        let m = export_dataset(ds, self.root.join(rel), config, seed)?;
        for f in ["manifest.json", m.features_file.as_str(), m.labels_file.as_str()] {
            self.register(&format!("{rel}/{f}"))?;
        }
        Ok(())
    }

    pub fn into_hashes(self) -> BTreeMap<String, String> {
        self.hashes
    }
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_match_known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifacts::create(dir.path()).unwrap();
        a.write("sub/x.csv", "abc").unwrap();
        let h = a.into_hashes();
        assert_eq!(
            h["sub/x.csv"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(fs::read_to_string(dir.path().join("sub/x.csv")).unwrap(), "abc");
    }
}
