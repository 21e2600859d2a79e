use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use globset::Glob;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::corpus::wav_duration_s;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub duration_s: f64,
}

/// Utterance list; stored on disk as JSON lines, one entry per line.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative entry paths resolve against.
    pub corpus_root: PathBuf,
}

impl CorpusManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.corpus_root.join(&entry.path)
    }

    /// Writes JSON lines with entry paths rebased onto the manifest's own
    /// directory, falling back to absolute paths outside it.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let absolute = |p: &Path| {
            std::path::absolute(p).map_err(|e| Error::io(format!("resolving {}", p.display()), e))
        };
        let base = absolute(path.parent().unwrap_or(Path::new("")))?;
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut out = BufWriter::new(file);
        for entry in &self.entries {
            let target = absolute(&self.resolve(entry))?;
            let stored = match target.strip_prefix(&base) {
                Ok(rel) => rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect::<Vec<_>>()
                    .join("/"),
                Err(_) => target.to_string_lossy().into_owned(),
            };
            let entry = ManifestEntry { path: stored, ..entry.clone() };
            serde_json::to_writer(&mut out, &entry)?;
            out.write_all(b"\n")
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        out.flush()
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Loads a JSON-lines manifest; relative paths resolve against its directory.
    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let mut entries = Vec::new();
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line)
                .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
            entries.push(entry);
        }
        let manifest = Self {
            entries,
            corpus_root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        manifest.validate().map_err(|reason| Error::format(path, reason))?;
        Ok(manifest)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.id) {
                return Err(format!("duplicate utterance id `{}`", e.id));
            }
            if !(e.duration_s > 0.0) {
                return Err(format!("utterance `{}` has non-positive duration", e.id));
            }
        }
        Ok(())
    }
}

/// Recursively finds files under `root` whose relative path matches the glob
/// `pattern` (e.g. `*.wav`) and records their header durations. Ids are the
/// relative paths without extension, so equal basenames in different
/// directories stay distinct. Entries are sorted by id.
pub fn scan_corpus(root: &Path, pattern: &str) -> Result<CorpusManifest> {
    let matcher = Glob::new(pattern)
        .map_err(|e| Error::Config(format!("bad pattern `{pattern}`: {e}")))?
        .compile_matcher();
    let meta = std::fs::metadata(root).map_err(|e| Error::io(format!("reading {}", root.display()), e))?;
    if !meta.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", root.display())));
    }
    let mut entries = Vec::new();
    for item in WalkDir::new(root).sort_by_file_name() {
        let item = item.map_err(|e| {
            let context = format!("walking {}", root.display());
            match e.into_io_error() {
                Some(io) => Error::io(context, io),
                None => Error::Config(context),
            }
        })?;
        if !item.file_type().is_file() {
            continue;
        }
        let rel = item.path().strip_prefix(root).expect("walk stays under root");
        if !matcher.is_match(rel) && !matcher.is_match(item.file_name()) {
            continue;
        }
        let duration_s = match wav_duration_s(item.path()) {
            Ok(d) if d > 0.0 => d,
            Ok(_) => {
                log::warn!("skipping empty file {}", item.path().display());
                continue;
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", item.path().display());
                continue;
            }
        };
        let id = rel
            .with_extension("")
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        let path = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        entries.push(ManifestEntry { id, path, duration_s });
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(CorpusManifest {
        entries,
        corpus_root: root.to_path_buf(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::write_wav;
    use crate::dsp::AudioBuffer;

    fn wav(path: &Path, seconds: f64) {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        let n = (seconds * 16_000.0) as usize;
        write_wav(path, &AudioBuffer::new(vec![0.1; n], 16_000).unwrap()).unwrap();
    }

    #[test]
    fn empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        let m = scan_corpus(dir.path(), "*.wav").unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn nested_sorted_and_distinct_ids() {
        let dir = tempfile::tempdir().unwrap();
        wav(&dir.path().join("b/x.wav"), 1.0);
        wav(&dir.path().join("a/x.wav"), 0.5);
        wav(&dir.path().join("a/deeper/y.wav"), 2.0);
        std::fs::write(dir.path().join("a/notes.txt"), "hi").unwrap();
        let m = scan_corpus(dir.path(), "*.wav").unwrap();
        let ids: Vec<_> = m.entries.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, vec!["a/deeper/y", "a/x", "b/x"]);
        assert_eq!(m.entries[1].duration_s, 0.5);
        assert_eq!(m.resolve(&m.entries[2]), dir.path().join("b/x.wav"));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        wav(&dir.path().join("u1.wav"), 1.0);
        wav(&dir.path().join("sub/u2.wav"), 1.5);
        let m = scan_corpus(dir.path(), "*.wav").unwrap();
        let path = dir.path().join("manifest.jsonl");
        m.write_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().next().unwrap().contains("\"duration_s\""));
        let back = CorpusManifest::read_jsonl(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn manifest_elsewhere_still_resolves() {
        let dir = tempfile::tempdir().unwrap();
        wav(&dir.path().join("audio/sub/u1.wav"), 1.0);
        let m = scan_corpus(&dir.path().join("audio"), "*.wav").unwrap();
        let path = dir.path().join("lists/m.jsonl");
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        m.write_jsonl(&path).unwrap();
        let back = CorpusManifest::read_jsonl(&path).unwrap();
        assert_eq!(back.entries[0].id, "sub/u1");
        assert!(back.resolve(&back.entries[0]).exists());

        let beside = dir.path().join("m.jsonl");
        m.write_jsonl(&beside).unwrap();
        let back = CorpusManifest::read_jsonl(&beside).unwrap();
        assert_eq!(back.entries[0].path, "audio/sub/u1.wav");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"path\":\"a.wav\",\"duration_s\":1.0}\n{\"id\":\"a\",\"path\":\"b.wav\",\"duration_s\":1.0}\n",
        )
        .unwrap();
        assert!(CorpusManifest::read_jsonl(&path).is_err());
    }

    #[test]
    fn missing_root_is_error() {
        assert!(scan_corpus(Path::new("/definitely/not/here"), "*.wav").is_err());
    }
}
