//! Single-directory store layout.
//!
//! ```text
//! store/
//!   MANIFEST.json          format version, dim, HNSW params, counts, checksums
//!   dense-<gen>.seg        HNSW graph and vectors
//!   symbolic-<gen>.seg     key directory, posting lists, cluster stats
//!   entries-<gen>.log      one canonical JSON line per entry, embeddings elided
//!   LOCK                   present while a writer holds the store
//! ```
//!
//! A save writes a new generation of segments next to the old one and then
//! renames the manifest into place, which is the commit point. Every segment
//! ends in a CRC-32 of its body and the manifest records each segment's size,
//! CRC-32 and SHA-256, plus a SHA-256 of itself. Any mismatch refuses the open.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Cursor, Read};
use std::path::{Path, PathBuf};

use anchormem_core::dense::{HnswSnapshot, NodeSnapshot};
use anchormem_core::store::StoreError;
use anchormem_core::symbolic::SymbolicIndex;
use anchormem_core::{DiscourseLabel, Embedding, EntryId, HnswIndex, HnswParams, MemoryEntry, MemoryStore};
use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::record::{write_atomic, EntityRecord, TripleRecord};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "MANIFEST.json";
pub const LOCK_FILE: &str = "LOCK";

const DENSE_MAGIC: &[u8; 8] = b"AMDENSE\0";
const SYMBOLIC_MAGIC: &[u8; 8] = b"AMSYMB\0\0";
const SEGMENT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("no store at {0} (missing {MANIFEST_FILE})")]
    NotFound(PathBuf),
    #[error("store {0} is locked by another writer")]
    Locked(PathBuf),
    #[error("store corrupted: {file}: {reason}")]
    Corrupt { file: String, reason: String },
    #[error("unsupported store format version {0}")]
    Version(u32),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl PersistError {
    pub fn is_corruption(&self) -> bool {
        matches!(self, Self::Corrupt { .. } | Self::Version(_))
    }

    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn corrupt(file: &str, reason: impl Into<String>) -> Self {
        Self::Corrupt {
            file: file.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswRecord {
    pub ef_construction: usize,
    pub ef_search: usize,
    pub m: usize,
    pub seed: u64,
}

impl From<HnswParams> for HnswRecord {
    fn from(p: HnswParams) -> Self {
        Self {
            ef_construction: p.ef_construction,
            ef_search: p.ef_search,
            m: p.m,
            seed: p.seed,
        }
    }
}

impl From<HnswRecord> for HnswParams {
    fn from(p: HnswRecord) -> Self {
        Self {
            m: p.m,
            ef_construction: p.ef_construction,
            ef_search: p.ef_search,
            seed: p.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentInfo {
    pub bytes: u64,
    pub crc32: u32,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    /// SHA-256 of the canonical manifest with this field empty.
    pub checksum: String,
    pub config_fingerprint: String,
    pub created_at: String,
    pub dim: usize,
    pub entry_count: usize,
    pub format_version: u32,
    pub generation: u64,
    pub hnsw: HnswRecord,
    pub index_deps: bool,
    pub next_id: u64,
    pub segments: BTreeMap<String, SegmentInfo>,
}

impl Manifest {
    fn body_digest(&self) -> String {
        let mut unsigned = self.clone();
        unsigned.checksum.clear();
        sha256_hex(serde_json::to_string(&unsigned).expect("manifest serializes").as_bytes())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Exclusive writer lock; removed on drop.
#[derive(Debug)]
pub struct WriteLock {
    path: PathBuf,
    dir: PathBuf,
}

impl WriteLock {
    pub fn acquire(dir: &Path) -> Result<Self, PersistError> {
        fs::create_dir_all(dir).map_err(|e| PersistError::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self {
                    path,
                    dir: dir.to_path_buf(),
                })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(PersistError::Locked(dir.to_path_buf())),
            Err(e) => Err(PersistError::io(&path, e)),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl Drop for WriteLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn with_crc(mut body: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&body);
    body.write_u32::<LE>(crc).expect("vec write");
    body
}

/// Body of a segment after checking its CRC-32 trailer.
fn strip_crc<'a>(file: &str, bytes: &'a [u8]) -> Result<&'a [u8], PersistError> {
    if bytes.len() < 4 {
        return Err(PersistError::corrupt(file, "truncated"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(PersistError::corrupt(file, "segment checksum mismatch"));
    }
    Ok(body)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.write_u32::<LE>(s.len() as u32).expect("vec write");
    out.extend_from_slice(s.as_bytes());
}

fn get_str(r: &mut Cursor<&[u8]>) -> io::Result<String> {
    let len = r.read_u32::<LE>()? as usize;
    let remaining = r.get_ref().len() - r.position() as usize;
    if len > remaining {
        return Err(io::ErrorKind::UnexpectedEof.into());
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// Guards allocations driven by length fields.
fn check_len(r: &Cursor<&[u8]>, count: u64, unit: usize) -> io::Result<usize> {
    let remaining = (r.get_ref().len() - r.position() as usize) as u64;
    if count.saturating_mul(unit as u64) > remaining {
        return Err(io::ErrorKind::UnexpectedEof.into());
    }
    Ok(count as usize)
}

pub fn encode_dense(index: &HnswIndex) -> Vec<u8> {
    let snap = index.snapshot();
    let mut out = Vec::new();
    out.extend_from_slice(DENSE_MAGIC);
    let w = &mut out;
    w.write_u32::<LE>(SEGMENT_VERSION).unwrap();
    w.write_u32::<LE>(snap.dim as u32).unwrap();
    w.write_u32::<LE>(snap.params.m as u32).unwrap();
    w.write_u32::<LE>(snap.params.ef_construction as u32).unwrap();
    w.write_u32::<LE>(snap.params.ef_search as u32).unwrap();
    w.write_u64::<LE>(snap.params.seed).unwrap();
    w.write_u64::<LE>(snap.nodes.len() as u64).unwrap();
    w.write_i64::<LE>(snap.entry_point.map_or(-1, i64::from)).unwrap();
    w.write_u32::<LE>(snap.max_level as u32).unwrap();
    for node in &snap.nodes {
        w.write_u64::<LE>(node.id.0).unwrap();
        w.write_u8(u8::from(node.deleted)).unwrap();
        for &v in &node.vector {
            w.write_f32::<LE>(v).unwrap();
        }
        w.write_u32::<LE>(node.links.len() as u32).unwrap();
        for layer in &node.links {
            w.write_u32::<LE>(layer.len() as u32).unwrap();
            for &l in layer {
                w.write_u32::<LE>(l).unwrap();
            }
        }
    }
    with_crc(out)
}

pub fn decode_dense(file: &str, bytes: &[u8]) -> Result<HnswIndex, PersistError> {
    let body = strip_crc(file, bytes)?;
    let bad = |e: io::Error| PersistError::corrupt(file, e.to_string());
    if body.len() < 8 || &body[..8] != DENSE_MAGIC {
        return Err(PersistError::corrupt(file, "bad magic"));
    }
    let mut r = Cursor::new(body);
    r.set_position(8);
    let version = r.read_u32::<LE>().map_err(bad)?;
    if version != SEGMENT_VERSION {
        return Err(PersistError::Version(version));
    }
    let dim = r.read_u32::<LE>().map_err(bad)? as usize;
    let params = HnswParams {
        m: r.read_u32::<LE>().map_err(bad)? as usize,
        ef_construction: r.read_u32::<LE>().map_err(bad)? as usize,
        ef_search: r.read_u32::<LE>().map_err(bad)? as usize,
        seed: r.read_u64::<LE>().map_err(bad)?,
    };
    let count = r.read_u64::<LE>().map_err(bad)?;
    let count = check_len(&r, count, 9 + 4 * dim).map_err(bad)?;
    let ep = r.read_i64::<LE>().map_err(bad)?;
    let max_level = r.read_u32::<LE>().map_err(bad)? as usize;
    let mut nodes = Vec::with_capacity(count);
    for _ in 0..count {
        let id = EntryId(r.read_u64::<LE>().map_err(bad)?);
        let deleted = r.read_u8().map_err(bad)? != 0;
        let mut vector = vec![0f32; dim];
        r.read_f32_into::<LE>(&mut vector).map_err(bad)?;
        let layers = r.read_u32::<LE>().map_err(bad)? as u64;
        let layers = check_len(&r, layers, 4).map_err(bad)?;
        let mut links = Vec::with_capacity(layers);
        for _ in 0..layers {
            let n = r.read_u32::<LE>().map_err(bad)? as u64;
            let n = check_len(&r, n, 4).map_err(bad)?;
            let mut layer = vec![0u32; n];
            r.read_u32_into::<LE>(&mut layer).map_err(bad)?;
            links.push(layer);
        }
        nodes.push(NodeSnapshot {
            id,
            deleted,
            vector,
            links,
        });
    }
    if r.position() as usize != body.len() {
        return Err(PersistError::corrupt(file, "trailing bytes"));
    }
    let entry_point = match ep {
        -1 => None,
        v => Some(u32::try_from(v).map_err(|_| PersistError::corrupt(file, "entry point"))?),
    };
    HnswIndex::from_snapshot(HnswSnapshot {
        params,
        dim,
        entry_point,
        max_level,
        nodes,
    })
    .map_err(|e| PersistError::corrupt(file, e.to_string()))
}

pub fn encode_symbolic(index: &SymbolicIndex) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SYMBOLIC_MAGIC);
    out.write_u32::<LE>(SEGMENT_VERSION).unwrap();
    out.write_u8(u8::from(index.indexes_deps())).unwrap();

    // key directory, then one flat id area the directory points into
    let postings: Vec<(&str, &[EntryId])> = index.postings().collect();
    out.write_u64::<LE>(postings.len() as u64).unwrap();
    let mut offset = 0u64;
    for (key, ids) in &postings {
        put_str(&mut out, key);
        out.write_u64::<LE>(offset).unwrap();
        out.write_u64::<LE>(ids.len() as u64).unwrap();
        offset += ids.len() as u64;
    }
    out.write_u64::<LE>(offset).unwrap();
    for (_, ids) in &postings {
        for id in *ids {
            out.write_u64::<LE>(id.0).unwrap();
        }
    }

    out.write_u64::<LE>(index.clusters().len() as u64).unwrap();
    for (coref, count) in index.clusters() {
        put_str(&mut out, coref);
        out.write_u64::<LE>(*count).unwrap();
    }
    out.write_u64::<LE>(index.registry().len() as u64).unwrap();
    for id in index.registry() {
        out.write_u64::<LE>(id.0).unwrap();
    }
    with_crc(out)
}

pub fn decode_symbolic(file: &str, bytes: &[u8]) -> Result<SymbolicIndex, PersistError> {
    let body = strip_crc(file, bytes)?;
    let bad = |e: io::Error| PersistError::corrupt(file, e.to_string());
    if body.len() < 8 || &body[..8] != SYMBOLIC_MAGIC {
        return Err(PersistError::corrupt(file, "bad magic"));
    }
    let mut r = Cursor::new(body);
    r.set_position(8);
    let version = r.read_u32::<LE>().map_err(bad)?;
    if version != SEGMENT_VERSION {
        return Err(PersistError::Version(version));
    }
    let index_deps = r.read_u8().map_err(bad)? != 0;

    let keys = r.read_u64::<LE>().map_err(bad)?;
    let keys = check_len(&r, keys, 20).map_err(bad)?;
    let mut directory = Vec::with_capacity(keys);
    for _ in 0..keys {
        let key = get_str(&mut r).map_err(bad)?;
        let offset = r.read_u64::<LE>().map_err(bad)?;
        let len = r.read_u64::<LE>().map_err(bad)?;
        directory.push((key, offset, len));
    }
    let total = r.read_u64::<LE>().map_err(bad)?;
    let total = check_len(&r, total, 8).map_err(bad)?;
    let mut ids = vec![0u64; total];
    r.read_u64_into::<LE>(&mut ids).map_err(bad)?;
    let mut postings = BTreeMap::new();
    for (key, offset, len) in directory {
        let end = offset.checked_add(len).filter(|&e| e <= total as u64);
        let Some(end) = end else {
            return Err(PersistError::corrupt(file, format!("posting list {key:?} out of range")));
        };
        let list = ids[offset as usize..end as usize].iter().map(|&i| EntryId(i)).collect();
        postings.insert(key, list);
    }

    let n = r.read_u64::<LE>().map_err(bad)?;
    let n = check_len(&r, n, 12).map_err(bad)?;
    let mut clusters = BTreeMap::new();
    for _ in 0..n {
        let key = get_str(&mut r).map_err(bad)?;
        clusters.insert(key, r.read_u64::<LE>().map_err(bad)?);
    }
    let n = r.read_u64::<LE>().map_err(bad)?;
    let n = check_len(&r, n, 8).map_err(bad)?;
    let mut registry = BTreeSet::new();
    for _ in 0..n {
        registry.insert(EntryId(r.read_u64::<LE>().map_err(bad)?));
    }
    if r.position() as usize != body.len() {
        return Err(PersistError::corrupt(file, "trailing bytes"));
    }
    SymbolicIndex::from_parts(postings, clusters, registry, index_deps)
        .map_err(|e| PersistError::corrupt(file, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EntryLine {
    dep_triples: Vec<TripleRecord>,
    dialogue_id: String,
    discourse: Vec<String>,
    entities: Vec<EntityRecord>,
    id: u64,
    session_id: u32,
    speaker: String,
    timestamp: String,
    turn_id: u32,
    utterance: String,
}

fn encode_entries(store: &MemoryStore) -> Vec<u8> {
    let mut out = String::new();
    for e in store.entries() {
        let line = EntryLine {
            dep_triples: e
                .dep_triples
                .iter()
                .map(|t| TripleRecord {
                    child: t.child.clone(),
                    head: t.head.clone(),
                    label: t.label.clone(),
                })
                .collect(),
            dialogue_id: e.dialogue_id.clone(),
            discourse: e.discourse.iter().map(|d| d.as_str().to_string()).collect(),
            entities: e
                .entities
                .iter()
                .map(|m| EntityRecord {
                    coref_id: m.coref_id.clone(),
                    name: m.name.clone(),
                    ner_type: m.ner_type.clone(),
                    span: m.span.map(|(s, t)| [s, t]),
                })
                .collect(),
            id: e.id.0,
            session_id: e.session_id,
            speaker: e.speaker.clone(),
            timestamp: e.timestamp.clone(),
            turn_id: e.turn_id,
            utterance: e.utterance.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("entry serializes"));
        out.push('\n');
    }
    out.into_bytes()
}

fn decode_entries(file: &str, bytes: &[u8], dense: &HnswIndex) -> Result<Vec<MemoryEntry>, PersistError> {
    let vectors: BTreeMap<EntryId, Vec<f32>> = dense.snapshot().nodes.into_iter().map(|n| (n.id, n.vector)).collect();
    let text = std::str::from_utf8(bytes).map_err(|e| PersistError::corrupt(file, e.to_string()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let l: EntryLine =
            serde_json::from_str(line).map_err(|e| PersistError::corrupt(file, format!("line {}: {e}", i + 1)))?;
        let id = EntryId(l.id);
        let vector = vectors
            .get(&id)
            .ok_or_else(|| PersistError::corrupt(file, format!("entry {id} has no vector")))?;
        out.push(MemoryEntry {
            id,
            utterance: l.utterance,
            speaker: l.speaker,
            timestamp: l.timestamp,
            dialogue_id: l.dialogue_id,
            session_id: l.session_id,
            turn_id: l.turn_id,
            entities: l
                .entities
                .into_iter()
                .map(|m| anchormem_core::EntityMention {
                    name: m.name,
                    coref_id: m.coref_id,
                    ner_type: m.ner_type,
                    span: m.span.map(|[s, t]| (s, t)),
                })
                .collect(),
            dep_triples: l
                .dep_triples
                .into_iter()
                .map(|t| anchormem_core::DependencyTriple {
                    head: t.head,
                    label: t.label,
                    child: t.child,
                })
                .collect(),
            discourse: l.discourse.iter().map(|d| DiscourseLabel::parse(d)).collect(),
            embedding: Embedding::raw(vector.clone()),
        });
    }
    Ok(out)
}

pub fn has_store(dir: &Path) -> bool {
    dir.join(MANIFEST_FILE).is_file()
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, PersistError> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(PersistError::NotFound(dir.to_path_buf())),
        Err(e) => return Err(PersistError::io(&path, e)),
    };
    let manifest: Manifest =
        serde_json::from_slice(&bytes).map_err(|e| PersistError::corrupt(MANIFEST_FILE, e.to_string()))?;
    if manifest.checksum != manifest.body_digest() {
        return Err(PersistError::corrupt(MANIFEST_FILE, "manifest checksum mismatch"));
    }
    if manifest.format_version != FORMAT_VERSION {
        return Err(PersistError::Version(manifest.format_version));
    }
    Ok(manifest)
}

fn read_segment(dir: &Path, manifest: &Manifest, name: &str) -> Result<(String, Vec<u8>), PersistError> {
    let info = manifest
        .segments
        .get(name)
        .ok_or_else(|| PersistError::corrupt(MANIFEST_FILE, format!("missing segment {name}")))?;
    let path = dir.join(&info.file);
    let bytes = fs::read(&path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => PersistError::corrupt(&info.file, "segment file missing"),
        _ => PersistError::io(&path, e),
    })?;
    if bytes.len() as u64 != info.bytes {
        return Err(PersistError::corrupt(&info.file, "size mismatch"));
    }
    if crc32fast::hash(&bytes) != info.crc32 || sha256_hex(&bytes) != info.sha256 {
        return Err(PersistError::corrupt(&info.file, "checksum mismatch"));
    }
    Ok((info.file.clone(), bytes))
}

/// Opens a sealed store, verifying every checksum.
pub fn load(dir: &Path) -> Result<(MemoryStore, Manifest), PersistError> {
    let manifest = read_manifest(dir)?;
    let (file, bytes) = read_segment(dir, &manifest, "dense")?;
    let dense = decode_dense(&file, &bytes)?;
    let (file, bytes) = read_segment(dir, &manifest, "symbolic")?;
    let symbolic = decode_symbolic(&file, &bytes)?;
    let (file, bytes) = read_segment(dir, &manifest, "entries")?;
    let entries = decode_entries(&file, &bytes, &dense)?;
    if dense.dim() != manifest.dim || entries.len() != manifest.entry_count {
        return Err(PersistError::corrupt(MANIFEST_FILE, "counts disagree with segments"));
    }
    let store = MemoryStore::from_parts(entries, dense, symbolic)
        .map_err(|e| PersistError::corrupt(MANIFEST_FILE, e.to_string()))?;
    if store.next_id().0 > manifest.next_id {
        return Err(PersistError::corrupt(MANIFEST_FILE, "next id behind stored ids"));
    }
    Ok((store, manifest))
}

fn now_rfc3339() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs() as i64);
    chrono::DateTime::from_timestamp(secs, 0)
        .map(|t| t.to_rfc3339())
        .unwrap_or_default()
}

/// Writes a new generation and commits it by replacing the manifest.
pub fn save(lock: &WriteLock, store: &MemoryStore, config_fingerprint: &str) -> Result<Manifest, PersistError> {
    let dir = lock.dir();
    let previous = match read_manifest(dir) {
        Ok(m) => Some(m),
        Err(PersistError::NotFound(_)) => None,
        Err(e) => return Err(e),
    };
    let generation = previous.as_ref().map_or(1, |m| m.generation + 1);
    let segments = [
        ("dense", format!("dense-{generation:06}.seg"), encode_dense(store.dense())),
        ("symbolic", format!("symbolic-{generation:06}.seg"), encode_symbolic(store.symbolic())),
        ("entries", format!("entries-{generation:06}.log"), encode_entries(store)),
    ];
    let mut infos = BTreeMap::new();
    for (name, file, bytes) in &segments {
        let path = dir.join(file);
        write_atomic(&path, bytes).map_err(|e| PersistError::io(&path, e))?;
        infos.insert(
            name.to_string(),
            SegmentInfo {
                bytes: bytes.len() as u64,
                crc32: crc32fast::hash(bytes),
                file: file.clone(),
                sha256: sha256_hex(bytes),
            },
        );
    }
    let mut manifest = Manifest {
        checksum: String::new(),
        config_fingerprint: config_fingerprint.into(),
        created_at: previous.map_or_else(now_rfc3339, |m| m.created_at),
        dim: store.dim(),
        entry_count: store.len(),
        format_version: FORMAT_VERSION,
        generation,
        hnsw: (*store.dense().params()).into(),
        index_deps: store.symbolic().indexes_deps(),
        next_id: store.next_id().0,
        segments: infos,
    };
    manifest.checksum = manifest.body_digest();
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_atomic(&path, text.as_bytes()).map_err(|e| PersistError::io(&path, e))?;

    // older generations are unreachable once the manifest is in place
    let live: BTreeSet<&str> = manifest.segments.values().map(|s| s.file.as_str()).collect();
    if let Ok(listing) = fs::read_dir(dir) {
        for item in listing.flatten() {
            let name = item.file_name().to_string_lossy().into_owned();
            let ours = name.starts_with("dense-") || name.starts_with("symbolic-") || name.starts_with("entries-");
            if ours && !live.contains(name.as_str()) {
                let _ = fs::remove_file(item.path());
            }
        }
    }
    Ok(manifest)
}
