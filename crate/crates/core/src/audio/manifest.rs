use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_wav, AudioClip};
use crate::error::{Result, SvcError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    TestSeen,
    TestUnseen,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub singer_id: String,
    pub split: Split,
}

/// A clip together with its singer label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledClip {
    pub clip: AudioClip,
    pub singer_id: String,
}

/// Corpus listing serialized as a JSON array of `{path, singer_id, split}`.
/// Relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, root: impl Into<PathBuf>) -> Self {
        Self {
            entries,
            root: root.into(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(SvcError::MissingFile(path.to_path_buf()));
        }
        let entries: Vec<ManifestEntry> = serde_json::from_slice(&std::fs::read(path)?)
            .map_err(|e| SvcError::InvalidArgument(format!("manifest {}: {e}", path.display())))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self { entries, root };
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.entries)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    /// Checks the split-partition invariants: no train singer is in
    /// test-unseen, and every test-seen singer also appears in train.
    pub fn validate(&self) -> Result<()> {
        let train = self.singers(Split::Train);
        let seen = self.singers(Split::TestSeen);
        let unseen = self.singers(Split::TestUnseen);
        if let Some(s) = train.intersection(&unseen).next() {
            return Err(SvcError::InvalidArgument(format!(
                "singer {s} appears in both train and test-unseen"
            )));
        }
        if let Some(s) = seen.difference(&train).next() {
            return Err(SvcError::InvalidArgument(format!(
                "test-seen singer {s} has no training clips"
            )));
        }
        Ok(())
    }

    pub fn singers(&self, split: Split) -> BTreeSet<String> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.singer_id.clone())
            .collect()
    }

    pub fn all_singers(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.singer_id.clone()).collect()
    }

    pub fn with_split(&self, split: Split) -> impl Iterator<Item = (usize, &ManifestEntry)> {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.split == split)
    }

    /// Entry indices grouped by singer for one split, in manifest order.
    pub fn by_singer(&self, split: Split) -> BTreeMap<String, Vec<usize>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.with_split(split) {
            out.entry(e.singer_id.clone()).or_default().push(i);
        }
        out
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn load_clip(&self, index: usize) -> Result<AudioClip> {
        load_wav(self.resolve(&self.entries[index]))
    }

    /// Loads every clip of one split with its singer label.
    pub fn load_split(&self, split: Split) -> Result<Vec<LabeledClip>> {
        self.with_split(split)
            .map(|(i, e)| {
                Ok(LabeledClip {
                    clip: self.load_clip(i)?,
                    singer_id: e.singer_id.clone(),
                })
            })
            .collect()
    }
}
