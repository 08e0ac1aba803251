use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    /// Image path, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    /// Index into [`DatasetManifest::classes`].
    pub class: usize,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub classes: Vec<ClassEntry>,
    pub samples: Vec<Sample>,
    /// Directory relative sample paths resolve against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    /// Checks schema-level invariants (not image existence).
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::ManifestSchema(format!(
                "version {} is not supported (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        if self.classes.is_empty() {
            return Err(Error::ManifestSchema("no classes".into()));
        }
        let mut ids = HashSet::new();
        for c in &self.classes {
            if !ids.insert(c.id.as_str()) {
                return Err(Error::ManifestSchema(format!("duplicate class id {:?}", c.id)));
            }
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.class >= self.classes.len() {
                return Err(Error::ManifestSchema(format!(
                    "sample {i} ({}) references class {} but only {} classes exist",
                    s.path.display(),
                    s.class,
                    self.classes.len()
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, sample: &Sample) -> PathBuf {
        self.root.join(&sample.path)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.class).collect()
    }

    /// Samples per class, in class order.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes.len()];
        for s in &self.samples {
            h[s.class] += 1;
        }
        h
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Reads and validates a manifest; every referenced image must exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = match std::fs::read(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::ManifestMissing(path.into())),
        Err(e) => return Err(e.into()),
    };
    let mut manifest: DatasetManifest =
        serde_json::from_slice(&text).map_err(|e| Error::ManifestSchema(e.to_string()))?;
    manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest.validate()?;
    for s in &manifest.samples {
        let p = manifest.resolve(s);
        if !p.is_file() {
            return Err(Error::DanglingImage(p));
        }
    }
    Ok(manifest)
}
