//! On-disk run directories.
//!
//! ```text
//! <run>/config.json          manifest: ids, config snapshot, counts
//! <run>/segments.jsonl       one record per segment, with outcome or failure
//! <run>/turns.jsonl          every model reply, verbatim, with its parse
//! <run>/comparisons.jsonl    pair comparisons
//! <run>/embeddings.bin       trace embeddings
//! <run>/cases.jsonl          triage cases
//! <run>/adjudications.jsonl  human resolutions, append-only
//! ```
//!
//! Every JSONL record has a `schema` field such as `"turn/v1"`. Whole files
//! are written to a temporary sibling and renamed into place, so readers see
//! either the old or the new file. The adjudication log is only appended to;
//! a final line without a newline is treated as an interrupted write and
//! skipped.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rtrc_core::analytics::PairComparison;
use rtrc_core::protocol::Outcome;
use rtrc_core::triage::{Adjudication, CaseStatus, TriageCase};
use rtrc_core::{AgentId, DecisionMap, ParsedTurn, Round, Segment, TurnId};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{read_embeddings, write_embeddings};

pub const MANIFEST_FILE: &str = "config.json";
pub const SEGMENTS_FILE: &str = "segments.jsonl";
pub const TURNS_FILE: &str = "turns.jsonl";
pub const COMPARISONS_FILE: &str = "comparisons.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const CASES_FILE: &str = "cases.jsonl";
pub const ADJUDICATIONS_FILE: &str = "adjudications.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {msg}")]
    Corrupt { path: PathBuf, line: usize, msg: String },
    #[error("{0} is not a run directory")]
    NotARun(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Anything stored as a JSONL record.
pub trait Record: Serialize + DeserializeOwned {
    const SCHEMA: &'static str;
}

#[derive(Serialize, Deserialize)]
struct Tagged<T> {
    schema: String,
    #[serde(flatten)]
    record: T,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub segments: usize,
    pub turns: usize,
    pub pairs: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub run_id: String,
    pub created_at: String,
    /// Resolved run config plus the codebook and prompts actually used.
    pub config: serde_json::Value,
    pub counts: Counts,
    pub version: String,
}

impl Manifest {
    pub const SCHEMA: &'static str = "manifest/v1";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFailure {
    /// Request key of the turn that failed.
    pub request_key: String,
    pub kind: String,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment: Segment,
    pub outcome: Option<Outcome>,
    pub final_decision: Option<DecisionMap>,
    pub turn_ids: Vec<TurnId>,
    pub failure: Option<SegmentFailure>,
}

impl Record for SegmentRecord {
    const SCHEMA: &'static str = "segment/v1";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub run_id: String,
    pub segment_id: String,
    pub request_key: String,
    pub turn_id: TurnId,
    pub agent: AgentId,
    pub round: Round,
    pub raw_text: String,
    pub backend_id: String,
    pub latency_ms: u64,
    pub truncated: bool,
    pub parsed: Option<ParsedTurn>,
    pub error: Option<String>,
}

impl Record for TurnRecord {
    const SCHEMA: &'static str = "turn/v1";
}

impl Record for PairComparison {
    const SCHEMA: &'static str = "comparison/v1";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    #[serde(flatten)]
    pub case: TriageCase,
    pub seed: u64,
}

impl Record for CaseRecord {
    const SCHEMA: &'static str = "case/v1";
}

impl Record for Adjudication {
    const SCHEMA: &'static str = "adjudication/v1";
}

/// A run directory. Reads go straight to disk; writes are serialized.
#[derive(Debug)]
pub struct RunStore {
    dir: PathBuf,
    writer: Mutex<()>,
}

impl RunStore {
    pub fn create(dir: &Path) -> Result<RunStore, StoreError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(RunStore {
            dir: dir.to_path_buf(),
            writer: Mutex::new(()),
        })
    }

    pub fn open(dir: &Path) -> Result<RunStore, StoreError> {
        if !dir.join(MANIFEST_FILE).is_file() {
            return Err(StoreError::NotARun(dir.to_path_buf()));
        }
        Ok(RunStore {
            dir: dir.to_path_buf(),
            writer: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    fn replace_with(&self, file: &str, write: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), StoreError> {
        let _guard = self.writer.lock().expect("writer lock");
        let target = self.path(file);
        let tmp = self.path(&format!(".{file}.tmp"));
        let f = File::create(&tmp).map_err(io_err(&tmp))?;
        let mut w = BufWriter::new(f);
        write(&mut w).map_err(io_err(&tmp))?;
        w.into_inner()
            .map_err(|e| e.into_error())
            .and_then(|f| f.sync_all())
            .map_err(io_err(&tmp))?;
        fs::rename(&tmp, &target).map_err(io_err(&target))
    }

    pub fn write_manifest(&self, m: &Manifest) -> Result<(), StoreError> {
        self.replace_with(MANIFEST_FILE, |w| {
            serde_json::to_writer_pretty(&mut *w, m)?;
            w.write_all(b"\n")
        })
    }

    pub fn read_manifest(&self) -> Result<Manifest, StoreError> {
        let path = self.path(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
            path,
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn write_records<T: Record>(&self, file: &str, records: &[T]) -> Result<(), StoreError> {
        self.replace_with(file, |w| {
            for r in records {
                serde_json::to_writer(&mut *w, &Tagged { schema: T::SCHEMA.to_string(), record: r })?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })
    }

    /// Reads a JSONL file; a missing file reads as empty.
    pub fn read_records<T: Record>(&self, file: &str) -> Result<Vec<T>, StoreError> {
        let path = self.path(file);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let complete = match text.rfind('\n') {
            Some(i) => &text[..=i],
            None => "",
        };
        let mut out = Vec::new();
        for (i, line) in complete.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |msg: String| StoreError::Corrupt {
                path: path.clone(),
                line: i + 1,
                msg,
            };
            let tagged: Tagged<T> = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
            if tagged.schema != T::SCHEMA {
                return Err(corrupt(format!("expected schema {}, found {}", T::SCHEMA, tagged.schema)));
            }
            out.push(tagged.record);
        }
        Ok(out)
    }

    pub fn append_record<T: Record>(&self, file: &str, record: &T) -> Result<(), StoreError> {
        let _guard = self.writer.lock().expect("writer lock");
        self.append_unlocked(file, record)
    }

    fn append_unlocked<T: Record>(&self, file: &str, record: &T) -> Result<(), StoreError> {
        let path = self.path(file);
        let mut line = serde_json::to_vec(&Tagged {
            schema: T::SCHEMA.to_string(),
            record,
        })
        .map_err(|e| io_err(&path)(e.into()))?;
        line.push(b'\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        f.write_all(&line).and_then(|_| f.sync_data()).map_err(io_err(&path))
    }

    pub fn write_embeddings(&self, dim: usize, records: &[(TurnId, Vec<f32>)]) -> Result<(), StoreError> {
        self.replace_with(EMBEDDINGS_FILE, |w| write_embeddings(w, dim, records))
    }

    pub fn read_embeddings(&self) -> Result<(usize, crate::embed::EmbeddingRecords), StoreError> {
        let path = self.path(EMBEDDINGS_FILE);
        let f = File::open(&path).map_err(io_err(&path))?;
        read_embeddings(io::BufReader::new(f)).map_err(io_err(&path))
    }

    pub fn segments(&self) -> Result<Vec<SegmentRecord>, StoreError> {
        self.read_records(SEGMENTS_FILE)
    }

    pub fn turns(&self) -> Result<Vec<TurnRecord>, StoreError> {
        self.read_records(TURNS_FILE)
    }

    pub fn comparisons(&self) -> Result<Vec<PairComparison>, StoreError> {
        self.read_records(COMPARISONS_FILE)
    }

    pub fn adjudications(&self) -> Result<Vec<Adjudication>, StoreError> {
        self.read_records(ADJUDICATIONS_FILE)
    }

    /// Cases with their status derived from the adjudication log.
    pub fn cases(&self) -> Result<Vec<TriageCase>, StoreError> {
        let adjudicated: Vec<String> = self.adjudications()?.into_iter().map(|a| a.case_id).collect();
        let mut cases: Vec<TriageCase> = self
            .read_records::<CaseRecord>(CASES_FILE)?
            .into_iter()
            .map(|r| r.case)
            .collect();
        for c in &mut cases {
            if adjudicated.contains(&c.case_id) {
                c.status = CaseStatus::Adjudicated;
            }
        }
        Ok(cases)
    }

    /// Appends an adjudication if `check` accepts the current log. The check
    /// and the append happen under the writer lock.
    pub fn append_adjudication<E: From<StoreError>>(
        &self,
        record: &Adjudication,
        check: impl FnOnce(&[Adjudication]) -> Result<(), E>,
    ) -> Result<(), E> {
        let _guard = self.writer.lock().expect("writer lock");
        check(&self.adjudications()?)?;
        Ok(self.append_unlocked(ADJUDICATIONS_FILE, record)?)
    }
}
