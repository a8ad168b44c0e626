//! Noun/adjective-tagged corpus ingestion and the persisted retrieval index.
//!
//! A corpus is described by a JSON-lines manifest, one object per line:
//! `{"id": str, "path": str, "noun": str, "adjective": str}`. Building an
//! index precomputes every entry's edge signature at the fixed retrieval
//! size, so a query costs one edge extraction plus N SSIM evaluations.
//!
//! On-disk layout (schema version 1):
//! `<dir>/index.json` plus `<dir>/edges/<id>.png` (8-bit grayscale).

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::edge::{self, EdgeBackendId};
use crate::raster;

/// Side length of the square retrieval signature. Edge maps are extracted
/// from images resized to this fixed size so any two signatures are
/// SSIM-comparable regardless of the original resolutions.
pub const RETRIEVAL_SIZE: usize = 256;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("ParseError: line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("DuplicateId: {0:?}")]
    DuplicateId(String),
    #[error("MissingField: line {line}: {field:?}")]
    MissingField { line: usize, field: &'static str },
    #[error("EntryImageError: {id:?}: {reason}")]
    EntryImage { id: String, reason: String },
    #[error("IoError: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CorruptIndex: {0}")]
    CorruptIndex(String),
    #[error("MissingEdgeMap: entry {id:?}: {path}")]
    MissingEdgeMap { id: String, path: PathBuf },
    #[error(transparent)]
    Edge(#[from] edge::EdgeError),
}

/// One tagged corpus image. `width`, `height` and `edge_path` are filled in
/// by [`build_index`]; a freshly ingested entry carries zeros and an empty
/// edge path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub path: PathBuf,
    pub noun: String,
    pub adjective: String,
    #[serde(default)]
    pub width: u32,
    #[serde(default)]
    pub height: u32,
    /// Relative to the index directory.
    #[serde(default)]
    pub edge_path: String,
}

/// The persisted retrieval index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub schema_version: u32,
    pub edge_backend: EdgeBackendId,
    pub retrieval_size: usize,
    /// Unix seconds at build time; excluded from the determinism contract.
    pub created_at_unix: u64,
    pub entries: Vec<CorpusEntry>,
    /// Sorted, deduplicated `(noun, adjective)` pairs present in `entries`.
    pub vocabulary: Vec<(String, String)>,
    #[serde(skip)]
    root: PathBuf,
}

impl CorpusIndex {
    /// Directory this index was built in or loaded from.
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn edge_map_path(&self, entry: &CorpusEntry) -> PathBuf {
        self.root.join(&entry.edge_path)
    }
}

/// The noun/adjective vocabulary of the desk-scale corpora bundled with the
/// repository tools; indexes accept any vocabulary.
pub const EXAMPLE_VOCABULARY: [(&str, &str); 17] = [
    ("home", "warm"),
    ("river", "clear"),
    ("water", "clear"),
    ("mountain", "clear"),
    ("mountain", "scenic"),
    ("lake", "clear"),
    ("city", "lovely"),
    ("city", "bright"),
    ("city", "great"),
    ("room", "dark"),
    ("water", "muddy"),
    ("river", "muddy"),
    ("mountains", "misty"),
    ("hill", "rough"),
    ("lake", "misty"),
    ("landscape", "harsh"),
    ("city", "poor"),
];

pub fn normalize_tag(tag: &str) -> String {
    tag.trim().to_lowercase()
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

/// Parses a JSON-lines manifest. Tags are lowercased and trimmed; relative
/// image paths resolve against the manifest's parent directory; blank lines
/// are skipped; file order is preserved.
pub fn ingest_manifest(path: impl AsRef<Path>) -> Result<Vec<CorpusEntry>, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| CorpusError::Parse {
                line: line_no,
                reason: e.to_string(),
            })?;
        let obj = value.as_object().ok_or_else(|| CorpusError::Parse {
            line: line_no,
            reason: "expected a JSON object".into(),
        })?;
        let field = |name: &'static str| -> Result<&str, CorpusError> {
            obj.get(name)
                .ok_or(CorpusError::MissingField { line: line_no, field: name })?
                .as_str()
                .ok_or_else(|| CorpusError::Parse {
                    line: line_no,
                    reason: format!("field {name:?} must be a string"),
                })
        };
        let id = field("id")?.to_string();
        if !valid_id(&id) {
            return Err(CorpusError::Parse {
                line: line_no,
                reason: format!(
                    "id {id:?} must be non-empty and limited to [A-Za-z0-9._-]"
                ),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId(id));
        }
        let raw_path = PathBuf::from(field("path")?);
        let resolved = if raw_path.is_absolute() {
            raw_path
        } else {
            base.join(raw_path)
        };
        let noun = normalize_tag(field("noun")?);
        let adjective = normalize_tag(field("adjective")?);
        if noun.is_empty() {
            return Err(CorpusError::MissingField { line: line_no, field: "noun" });
        }
        if adjective.is_empty() {
            return Err(CorpusError::MissingField { line: line_no, field: "adjective" });
        }
        entries.push(CorpusEntry {
            id,
            path: resolved,
            noun,
            adjective,
            width: 0,
            height: 0,
            edge_path: String::new(),
        });
    }
    Ok(entries)
}

fn vocabulary_of(entries: &[CorpusEntry]) -> Vec<(String, String)> {
    entries
        .iter()
        .map(|e| (e.noun.clone(), e.adjective.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn index_entry(
    entry: &CorpusEntry,
    backend: EdgeBackendId,
    edges_dir: &Path,
) -> Result<CorpusEntry, CorpusError> {
    let img = raster::load_image(&entry.path).map_err(|e| CorpusError::EntryImage {
        id: entry.id.clone(),
        reason: e.to_string(),
    })?;
    let sig = raster::resize_exact(&img, RETRIEVAL_SIZE, RETRIEVAL_SIZE);
    let map = edge::edge_response(&sig, backend)?;
    let edge_rel = format!("edges/{}.png", entry.id);
    edge::save_edge_png(&map, edges_dir.join(format!("{}.png", entry.id))).map_err(
        |e| CorpusError::EntryImage {
            id: entry.id.clone(),
            reason: e.to_string(),
        },
    )?;
    Ok(CorpusEntry {
        width: img.width() as u32,
        height: img.height() as u32,
        edge_path: edge_rel,
        ..entry.clone()
    })
}

/// Builds and persists an index: one edge PNG per entry plus `index.json`.
/// Rebuilding from the same inputs reproduces every edge PNG byte for byte
/// and the same `index.json` apart from `created_at_unix`.
pub fn build_index(
    entries: &[CorpusEntry],
    backend: EdgeBackendId,
    out_dir: impl AsRef<Path>,
) -> Result<CorpusIndex, CorpusError> {
    let out_dir = out_dir.as_ref();
    let edges_dir = out_dir.join("edges");
    std::fs::create_dir_all(&edges_dir).map_err(|source| CorpusError::Io {
        path: edges_dir.clone(),
        source,
    })?;

    let mut seen = HashSet::new();
    for e in entries {
        if !seen.insert(&e.id) {
            return Err(CorpusError::DuplicateId(e.id.clone()));
        }
    }

    #[cfg(feature = "parallel")]
    let indexed: Result<Vec<_>, CorpusError> = entries
        .par_iter()
        .map(|e| index_entry(e, backend, &edges_dir))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let indexed: Result<Vec<_>, CorpusError> = entries
        .iter()
        .map(|e| index_entry(e, backend, &edges_dir))
        .collect();
    let indexed = indexed?;

    let index = CorpusIndex {
        schema_version: SCHEMA_VERSION,
        edge_backend: backend,
        retrieval_size: RETRIEVAL_SIZE,
        created_at_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        vocabulary: vocabulary_of(&indexed),
        entries: indexed,
        root: out_dir.to_path_buf(),
    };

    let json_path = out_dir.join("index.json");
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    std::fs::write(&json_path, json).map_err(|source| CorpusError::Io {
        path: json_path,
        source,
    })?;
    Ok(index)
}

/// Loads and fully validates an index directory: schema version, stored
/// vocabulary against the recomputed one, and presence of every edge map.
pub fn load_index(dir: impl AsRef<Path>) -> Result<CorpusIndex, CorpusError> {
    let dir = dir.as_ref();
    let json_path = dir.join("index.json");
    if !json_path.exists() {
        return Err(CorpusError::CorruptIndex(format!(
            "{} does not exist",
            json_path.display()
        )));
    }
    let text = std::fs::read_to_string(&json_path).map_err(|source| CorpusError::Io {
        path: json_path.clone(),
        source,
    })?;
    let mut index: CorpusIndex = serde_json::from_str(&text)
        .map_err(|e| CorpusError::CorruptIndex(e.to_string()))?;
    if index.schema_version != SCHEMA_VERSION {
        return Err(CorpusError::CorruptIndex(format!(
            "unsupported schema_version {}",
            index.schema_version
        )));
    }
    index.root = dir.to_path_buf();

    let mut seen = HashSet::new();
    for e in &index.entries {
        if !seen.insert(&e.id) {
            return Err(CorpusError::CorruptIndex(format!("duplicate id {:?}", e.id)));
        }
        if e.edge_path.is_empty() {
            return Err(CorpusError::CorruptIndex(format!(
                "entry {:?} has no edge map recorded",
                e.id
            )));
        }
    }
    if index.vocabulary != vocabulary_of(&index.entries) {
        return Err(CorpusError::CorruptIndex(
            "stored vocabulary disagrees with the entry tags".into(),
        ));
    }
    for e in &index.entries {
        let p = index.edge_map_path(e);
        if !p.exists() {
            return Err(CorpusError::MissingEdgeMap {
                id: e.id.clone(),
                path: p,
            });
        }
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn write_manifest(dir: &Path, lines: &[&str]) -> PathBuf {
        let path = dir.join("manifest.jsonl");
        std::fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    fn synth_corpus(dir: &Path, n: usize) -> PathBuf {
        let mut lines = Vec::new();
        for i in 0..n {
            let img = synth::scene(48, 64, i as u64, &synth::Palette::CLEAR);
            let name = format!("img{i}.png");
            raster::save_image(&img, dir.join(&name)).unwrap();
            lines.push(format!(
                "{{\"id\": \"r{i}\", \"path\": \"{name}\", \"noun\": \"River\", \"adjective\": \"Clear\"}}"
            ));
        }
        let path = dir.join("manifest.jsonl");
        std::fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    #[test]
    fn ingest_preserves_order_and_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_manifest(
            dir.path(),
            &[
                r#"{"id": "a", "path": "a.png", "noun": " River ", "adjective": "MUDDY"}"#,
                r#"{"id": "b", "path": "b.png", "noun": "lake", "adjective": "misty"}"#,
                r#"{"id": "c", "path": "c.png", "noun": "Lake", "adjective": "Misty"}"#,
            ],
        );
        let entries = ingest_manifest(&manifest).unwrap();
        assert_eq!(entries.len(), 3);
        assert_eq!(entries[0].noun, "river");
        assert_eq!(entries[0].adjective, "muddy");
        assert_eq!(
            entries.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(),
            ["a", "b", "c"]
        );
        assert!(entries[0].path.ends_with("a.png"));
    }

    #[test]
    fn ingest_rejects_duplicate_id() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_manifest(
            dir.path(),
            &[
                r#"{"id": "r1", "path": "a.png", "noun": "river", "adjective": "clear"}"#,
                r#"{"id": "r1", "path": "b.png", "noun": "river", "adjective": "muddy"}"#,
            ],
        );
        match ingest_manifest(&manifest) {
            Err(CorpusError::DuplicateId(id)) => assert_eq!(id, "r1"),
            other => panic!("expected DuplicateId, got {other:?}"),
        }
    }

    #[test]
    fn ingest_reports_missing_field_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_manifest(
            dir.path(),
            &[
                r#"{"id": "r1", "path": "a.png", "noun": "river", "adjective": "clear"}"#,
                r#"{"id": "r2", "path": "b.png", "adjective": "muddy"}"#,
            ],
        );
        match ingest_manifest(&manifest) {
            Err(CorpusError::MissingField { line, field }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "noun");
            }
            other => panic!("expected MissingField, got {other:?}"),
        }
    }

    #[test]
    fn ingest_reports_malformed_line() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_manifest(dir.path(), &["{not json"]);
        assert!(matches!(
            ingest_manifest(&manifest),
            Err(CorpusError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn build_writes_index_and_edge_maps() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_corpus(dir.path(), 2);
        let entries = ingest_manifest(&manifest).unwrap();
        let out = dir.path().join("index");
        let index = build_index(&entries, EdgeBackendId::Sobel, &out).unwrap();
        assert!(out.join("index.json").exists());
        assert!(out.join("edges/r0.png").exists());
        assert!(out.join("edges/r1.png").exists());
        assert_eq!(index.entries.len(), 2);
        assert_eq!(index.entries[0].width, 64);
        assert_eq!(index.entries[0].height, 48);
        assert_eq!(index.vocabulary, vec![("river".into(), "clear".into())]);
    }

    #[test]
    fn build_is_deterministic_per_entry() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_corpus(dir.path(), 3);
        let entries = ingest_manifest(&manifest).unwrap();
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        build_index(&entries, EdgeBackendId::Sobel, &out_a).unwrap();
        // Permuted manifest order must still produce identical per-entry PNGs.
        let mut permuted = entries.clone();
        permuted.reverse();
        build_index(&permuted, EdgeBackendId::Sobel, &out_b).unwrap();
        for i in 0..3 {
            let a = std::fs::read(out_a.join(format!("edges/r{i}.png"))).unwrap();
            let b = std::fs::read(out_b.join(format!("edges/r{i}.png"))).unwrap();
            assert_eq!(a, b, "edge PNG for r{i} differs between builds");
        }
    }

    #[test]
    fn build_names_failing_entry() {
        let dir = tempfile::tempdir().unwrap();
        let entries = vec![CorpusEntry {
            id: "r7".into(),
            path: dir.path().join("missing.png"),
            noun: "river".into(),
            adjective: "clear".into(),
            width: 0,
            height: 0,
            edge_path: String::new(),
        }];
        match build_index(&entries, EdgeBackendId::Sobel, dir.path().join("out")) {
            Err(CorpusError::EntryImage { id, .. }) => assert_eq!(id, "r7"),
            other => panic!("expected EntryImageError, got {other:?}"),
        }
    }

    #[test]
    fn load_round_trips_all_fields() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_corpus(dir.path(), 2);
        let entries = ingest_manifest(&manifest).unwrap();
        let out = dir.path().join("index");
        let built = build_index(&entries, EdgeBackendId::Sobel, &out).unwrap();
        let loaded = load_index(&out).unwrap();
        assert_eq!(loaded.entries, built.entries);
        assert_eq!(loaded.vocabulary, built.vocabulary);
        assert_eq!(loaded.edge_backend, built.edge_backend);
        assert_eq!(loaded.retrieval_size, built.retrieval_size);
        assert_eq!(loaded.root(), out.as_path());
    }

    #[test]
    fn load_detects_missing_edge_map() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_corpus(dir.path(), 2);
        let entries = ingest_manifest(&manifest).unwrap();
        let out = dir.path().join("index");
        build_index(&entries, EdgeBackendId::Sobel, &out).unwrap();
        std::fs::remove_file(out.join("edges/r1.png")).unwrap();
        match load_index(&out) {
            Err(CorpusError::MissingEdgeMap { id, .. }) => assert_eq!(id, "r1"),
            other => panic!("expected MissingEdgeMap, got {other:?}"),
        }
    }

    #[test]
    fn load_empty_dir_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_index(dir.path()),
            Err(CorpusError::CorruptIndex(_))
        ));
    }
}
