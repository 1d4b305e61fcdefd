//! On-disk project store.
//!
//! ```text
//! <root>/manifest.jsonl   one JobRecord per line, sorted by job_id after compaction
//! <root>/logs/<id>.log    raw traces of failed jobs
//! <root>/cursor.json      pagination state for resumable fetches
//! <root>/markers.jsonl    excluded / flagged jobs (missing trace, empty trace, bad UTF-8)
//! <root>/samples.jsonl    labeled samples written by `label`
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use flakeshot_core::{JobRecord, LabeledSample};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Parse { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("{0}: duplicate job_id {1}")]
    DuplicateJob(PathBuf, u64),
    #[error("{0} is not a project store (no manifest.jsonl)")]
    NotAStore(PathBuf),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerKind {
    /// Trace endpoint answered 404; the job is excluded from datasets.
    MissingLog,
    /// Trace was empty; stored, but the job is excluded.
    EmptyLog,
    /// Trace had invalid UTF-8 that was replaced; the job stays usable.
    DecodeReplaced,
}

impl MarkerKind {
    pub fn excludes(self) -> bool {
        !matches!(self, MarkerKind::DecodeReplaced)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Marker {
    pub job_id: u64,
    pub kind: MarkerKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cursor {
    /// Highest job id covered by the last completed fetch.
    pub high_water: Option<u64>,
    /// Page to resume from when a fetch was interrupted.
    pub resume_page: Option<u32>,
    /// Highest job id seen by the interrupted fetch so far.
    pub pending_high_water: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct ProjectStore {
    root: PathBuf,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io(path)(e)),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| StoreError::Parse { path: path.to_path_buf(), line: i + 1, source })?);
    }
    Ok(out)
}

/// Replaces `path` atomically with the given rows.
fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), StoreError> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(io(&tmp))?);
        for r in rows {
            serde_json::to_writer(&mut w, r).map_err(|e| io(&tmp)(e.into()))?;
            w.write_all(b"\n").map_err(io(&tmp))?;
        }
        w.flush().map_err(io(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io(path))
}

impl ProjectStore {
    /// Creates the directory layout if needed.
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let logs = root.join("logs");
        fs::create_dir_all(&logs).map_err(io(&logs))?;
        let manifest = root.join("manifest.jsonl");
        if !manifest.exists() {
            File::create(&manifest).map_err(io(&manifest))?;
        }
        Ok(Self { root })
    }

    /// Opens an existing store without touching it.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        if !root.join("manifest.jsonl").is_file() {
            return Err(StoreError::NotAStore(root));
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.jsonl")
    }

    pub fn samples_path(&self) -> PathBuf {
        self.root.join("samples.jsonl")
    }

    pub fn log_rel_path(job_id: u64) -> String {
        format!("logs/{job_id}.log")
    }

    pub fn jobs(&self) -> Result<Vec<JobRecord>, StoreError> {
        let path = self.manifest_path();
        let jobs: Vec<JobRecord> = read_jsonl(&path)?;
        let mut seen = BTreeSet::new();
        for j in &jobs {
            if !seen.insert(j.job_id) {
                return Err(StoreError::DuplicateJob(path, j.job_id));
            }
        }
        Ok(jobs)
    }

    pub fn job_ids(&self) -> Result<BTreeSet<u64>, StoreError> {
        Ok(self.jobs()?.into_iter().map(|j| j.job_id).collect())
    }

    /// Appends rows; callers guarantee the ids are new.
    pub fn append_jobs(&self, jobs: &[JobRecord]) -> Result<(), StoreError> {
        let path = self.manifest_path();
        let mut w = BufWriter::new(OpenOptions::new().append(true).create(true).open(&path).map_err(io(&path))?);
        for j in jobs {
            serde_json::to_writer(&mut w, j).map_err(|e| io(&path)(e.into()))?;
            w.write_all(b"\n").map_err(io(&path))?;
        }
        w.flush().map_err(io(&path))
    }

    /// Rewrites the manifest sorted by job id, letting later rows for the
    /// same id replace earlier ones.
    pub fn compact(&self) -> Result<(), StoreError> {
        let path = self.manifest_path();
        let rows: Vec<JobRecord> = read_jsonl(&path)?;
        let by_id: BTreeMap<u64, JobRecord> = rows.into_iter().map(|j| (j.job_id, j)).collect();
        write_jsonl(&path, &by_id.into_values().collect::<Vec<_>>())
    }

    /// Replaces existing rows by id and appends unknown ones, then compacts.
    pub fn upsert_jobs(&self, jobs: &[JobRecord]) -> Result<(), StoreError> {
        self.append_jobs(jobs)?;
        self.compact()
    }

    pub fn write_log(&self, job_id: u64, text: &str) -> Result<String, StoreError> {
        let rel = Self::log_rel_path(job_id);
        let path = self.root.join(&rel);
        fs::write(&path, text).map_err(io(&path))?;
        Ok(rel)
    }

    pub fn read_log(&self, rel: &str) -> Result<String, StoreError> {
        let path = self.root.join(rel);
        let bytes = fs::read(&path).map_err(io(&path))?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    pub fn markers(&self) -> Result<Vec<Marker>, StoreError> {
        read_jsonl(&self.root.join("markers.jsonl"))
    }

    /// Adds markers, keeping the file sorted and free of duplicates.
    pub fn add_markers(&self, new: &[Marker]) -> Result<(), StoreError> {
        if new.is_empty() {
            return Ok(());
        }
        let mut all: BTreeSet<Marker> = self.markers()?.into_iter().collect();
        all.extend(new.iter().cloned());
        write_jsonl(&self.root.join("markers.jsonl"), &all.into_iter().collect::<Vec<_>>())
    }

    pub fn excluded(&self) -> Result<BTreeSet<u64>, StoreError> {
        Ok(self.markers()?.into_iter().filter(|m| m.kind.excludes()).map(|m| m.job_id).collect())
    }

    pub fn cursor(&self) -> Result<Cursor, StoreError> {
        let path = self.root.join("cursor.json");
        match fs::read_to_string(&path) {
            Ok(s) => serde_json::from_str(&s).map_err(|source| StoreError::Parse { path, line: 1, source }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Cursor::default()),
            Err(e) => Err(io(&path)(e)),
        }
    }

    pub fn save_cursor(&self, cursor: &Cursor) -> Result<(), StoreError> {
        let path = self.root.join("cursor.json");
        let tmp = self.root.join("cursor.json.tmp");
        let body = serde_json::to_string_pretty(cursor).map_err(|e| io(&path)(e.into()))?;
        fs::write(&tmp, body + "\n").map_err(io(&tmp))?;
        fs::rename(&tmp, &path).map_err(io(&path))
    }

    pub fn samples(&self) -> Result<Vec<LabeledSample>, StoreError> {
        read_samples(&self.samples_path())
    }

    pub fn save_samples(&self, samples: &[LabeledSample]) -> Result<(), StoreError> {
        write_samples(&self.samples_path(), samples)
    }
}

pub fn read_samples(path: &Path) -> Result<Vec<LabeledSample>, StoreError> {
    if !path.exists() {
        return Err(io(path)(std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
    }
    read_jsonl(path)
}

pub fn write_samples(path: &Path, samples: &[LabeledSample]) -> Result<(), StoreError> {
    write_jsonl(path, samples)
}
