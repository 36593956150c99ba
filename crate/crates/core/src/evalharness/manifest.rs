use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::atomic_write;

pub const DEFAULT_LABELS: [&str; 4] = ["positive", "negative", "surprise", "others"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Frame folder, or an `.ami1` file holding a precomputed AMI.
    pub clip_dir: PathBuf,
    pub video_id: String,
    pub subject_id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    label_set: Vec<String>,
    pub dataset_name: String,
}

#[derive(Deserialize, Serialize)]
struct CsvRow {
    clip_dir: String,
    video_id: String,
    subject_id: String,
    label: String,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, label_set: Vec<String>, dataset_name: impl Into<String>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("manifest has no entries"));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.video_id.as_str()) {
                return Err(Error::invalid(format!("duplicate video_id {:?}", e.video_id)));
            }
            if !label_set.contains(&e.label) {
                return Err(Error::invalid(format!(
                    "label {:?} of {} is not in the label set {label_set:?}",
                    e.label, e.video_id
                )));
            }
        }
        if label_set.len() < 2 {
            return Err(Error::invalid("a label set needs at least two classes"));
        }
        Ok(DatasetManifest {
            entries,
            label_set,
            dataset_name: dataset_name.into(),
        })
    }

    /// Uses the default four-class label set when every label belongs to it,
    /// otherwise the sorted distinct labels.
    pub fn with_inferred_labels(entries: Vec<ManifestEntry>, dataset_name: impl Into<String>) -> Result<Self> {
        let labels: BTreeSet<&str> = entries.iter().map(|e| e.label.as_str()).collect();
        let label_set = if labels.iter().all(|l| DEFAULT_LABELS.contains(l)) {
            DEFAULT_LABELS.iter().map(|s| s.to_string()).collect()
        } else {
            labels.into_iter().map(String::from).collect()
        };
        Self::new(entries, label_set, dataset_name)
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn label_set(&self) -> &[String] {
        &self.label_set
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.label_set.iter().position(|l| l == label)
    }

    /// Distinct subject ids in ascending order.
    pub fn subjects(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.entries.iter().map(|e| e.subject_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Reads a `clip_dir,video_id,subject_id,label` CSV. Relative clip paths
    /// resolve against the manifest's directory. The dataset name is the file
    /// stem, or the parent directory's name for a file called `manifest.csv`.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
            _ => Error::Csv(e),
        })?;
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["clip_dir", "video_id", "subject_id", "label"] {
            return Err(Error::Format {
                what: "manifest",
                reason: format!("expected header clip_dir,video_id,subject_id,label, got {headers:?}"),
            });
        }
        let mut entries = Vec::new();
        for row in reader.deserialize::<CsvRow>() {
            let row = row?;
            let clip = PathBuf::from(&row.clip_dir);
            entries.push(ManifestEntry {
                clip_dir: if clip.is_absolute() { clip } else { base.join(clip) },
                video_id: row.video_id,
                subject_id: row.subject_id,
                label: row.label,
            });
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        let name = match stem.as_deref() {
            Some("manifest") => base
                .canonicalize()
                .ok()
                .and_then(|d| d.file_name().map(|n| n.to_string_lossy().into_owned()))
                .unwrap_or_else(|| "manifest".into()),
            Some(s) => s.to_string(),
            None => "dataset".into(),
        };
        Self::with_inferred_labels(entries, name)
    }

    /// Writes the CSV form; clip paths under `path`'s directory are stored relative.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut writer = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            let clip = e.clip_dir.strip_prefix(base).unwrap_or(&e.clip_dir);
            writer.serialize(CsvRow {
                clip_dir: clip.to_string_lossy().into_owned(),
                video_id: e.video_id.clone(),
                subject_id: e.subject_id.clone(),
                label: e.label.clone(),
            })?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::invalid(format!("csv buffer: {e}")))?;
        atomic_write(path, &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(v: &str, s: &str, l: &str) -> ManifestEntry {
        ManifestEntry {
            clip_dir: PathBuf::from(v),
            video_id: v.into(),
            subject_id: s.into(),
            label: l.into(),
        }
    }

    #[test]
    fn validation() {
        let labels: Vec<String> = DEFAULT_LABELS.iter().map(|s| s.to_string()).collect();
        assert!(DatasetManifest::new(vec![entry("a", "s1", "positive"), entry("a", "s2", "negative")], labels.clone(), "d").is_err());
        assert!(DatasetManifest::new(vec![entry("a", "s1", "happy")], labels.clone(), "d").is_err());
        assert!(DatasetManifest::new(vec![], labels, "d").is_err());
    }

    #[test]
    fn inferred_labels() {
        let m = DatasetManifest::with_inferred_labels(vec![entry("a", "s", "negative")], "d").unwrap();
        assert_eq!(m.label_set().len(), 4);
        assert_eq!(m.label_index("negative"), Some(1));
        let m = DatasetManifest::with_inferred_labels(vec![entry("a", "s", "zeta"), entry("b", "s", "alpha")], "d").unwrap();
        assert_eq!(m.label_set(), &["alpha".to_string(), "zeta".to_string()]);
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::with_inferred_labels(
            vec![
                ManifestEntry { clip_dir: dir.path().join("s1/v1"), ..entry("v1", "s1", "surprise") },
                ManifestEntry { clip_dir: dir.path().join("s2/v2"), ..entry("v2", "s2", "others") },
            ],
            "casme",
        )
        .unwrap();
        let path = dir.path().join("casme.csv");
        m.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("clip_dir,video_id,subject_id,label\ns1/v1,v1,s1,surprise\n"));
        let back = DatasetManifest::load_csv(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.subjects(), vec!["s1".to_string(), "s2".to_string()]);
    }

    #[test]
    fn bad_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "dir,id,subject,label\na,b,c,positive\n").unwrap();
        assert!(DatasetManifest::load_csv(&path).is_err());
    }
}
