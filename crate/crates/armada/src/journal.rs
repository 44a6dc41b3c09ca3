//! Per-campaign append-only journal: the source of truth for campaign state.
//!
//! One JSON object per line, each carrying a contiguous `seq`. Batch lines
//! are the audit log: they hold the raw, post-blacklist and post-floor
//! vectors, the stats delta, floor and seed of every committed batch.
//!
//! A line is committed once it and its trailing newline are on disk. A torn
//! last line (crash mid-append) is dropped on read; a bad line followed by
//! good ones is corruption.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use armada_core::{ArmId, AuditRecord, CampaignConfig, FloorSchedule};
use serde::{Deserialize, Serialize};

use crate::error::StoreError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JournalEntry {
    Created {
        config: CampaignConfig,
    },
    AddArm {
        arm: ArmId,
        effective_epoch: u64,
    },
    Blacklist {
        arm: ArmId,
        effective_epoch: u64,
    },
    Unblacklist {
        arm: ArmId,
        effective_epoch: u64,
    },
    FloorSchedule {
        schedule: FloorSchedule,
        effective_epoch: u64,
    },
    Batch {
        #[serde(flatten)]
        record: AuditRecord,
        events_cursor: u64,
    },
    /// Events consumed by a batch that saw no data and changed nothing.
    Cursor {
        events_cursor: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalLine {
    pub seq: u64,
    #[serde(flatten)]
    pub entry: JournalEntry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JournalContents {
    pub lines: Vec<JournalLine>,
    /// Byte length of the committed prefix.
    pub committed_len: u64,
    /// Whether bytes after the committed prefix were discarded.
    pub torn_tail: bool,
}

/// Parses journal bytes, keeping the committed prefix.
pub fn parse_journal(bytes: &[u8], path: &Path) -> Result<JournalContents, StoreError> {
    let mut lines = Vec::new();
    let mut offset = 0usize;
    let mut committed_len = 0usize;
    let mut pending_error: Option<(usize, String)> = None;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            // No newline: the write never completed.
            break;
        };
        line_no += 1;
        let raw = &bytes[offset..offset + nl];
        offset += nl + 1;
        if raw.iter().all(u8::is_ascii_whitespace) {
            if pending_error.is_none() {
                committed_len = offset;
            }
            continue;
        }
        if let Some((bad_line, msg)) = pending_error.take() {
            return Err(StoreError::Corrupt { path: path.to_path_buf(), detail: format!("line {bad_line}: {msg}") });
        }
        match serde_json::from_slice::<JournalLine>(raw) {
            Ok(line) => {
                let expected = lines.len() as u64;
                if line.seq != expected {
                    return Err(StoreError::Corrupt {
                        path: path.to_path_buf(),
                        detail: format!("line {line_no}: seq {} where {expected} was expected", line.seq),
                    });
                }
                lines.push(line);
                committed_len = offset;
            }
            Err(e) => pending_error = Some((line_no, e.to_string())),
        }
    }
    Ok(JournalContents { lines, committed_len: committed_len as u64, torn_tail: committed_len < bytes.len() })
}

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    next_seq: u64,
    len: u64,
}

impl Journal {
    /// Creates a new journal; fails if one exists.
    pub fn create(path: impl Into<PathBuf>, config: &CampaignConfig) -> Result<Self, StoreError> {
        let path = path.into();
        OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| StoreError::io(&path, e))?;
        let mut journal = Self { path, next_seq: 0, len: 0 };
        journal.append(JournalEntry::Created { config: config.clone() })?;
        Ok(journal)
    }

    /// Opens an existing journal, discarding a torn tail on disk.
    pub fn open(path: impl Into<PathBuf>) -> Result<(Self, Vec<JournalLine>), StoreError> {
        let path = path.into();
        let contents = read_journal(&path)?;
        if contents.torn_tail {
            let f = OpenOptions::new().write(true).open(&path).map_err(|e| StoreError::io(&path, e))?;
            f.set_len(contents.committed_len).map_err(|e| StoreError::io(&path, e))?;
            f.sync_all().map_err(|e| StoreError::io(&path, e))?;
        }
        let journal = Self { path, next_seq: contents.lines.len() as u64, len: contents.committed_len };
        Ok((journal, contents.lines))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Appends and fsyncs one entry. On failure the file is cut back to its
    /// previous length so the next append starts on a clean line.
    pub fn append(&mut self, entry: JournalEntry) -> Result<JournalLine, StoreError> {
        let line = JournalLine { seq: self.next_seq, entry };
        let mut buf = serde_json::to_vec(&line)
            .map_err(|e| StoreError::Corrupt { path: self.path.clone(), detail: e.to_string() })?;
        buf.push(b'\n');
        let result = (|| {
            let mut f = OpenOptions::new().append(true).open(&self.path)?;
            f.write_all(&buf)?;
            f.sync_data()
        })();
        if let Err(e) = result {
            if let Ok(f) = OpenOptions::new().write(true).open(&self.path) {
                let _ = f.set_len(self.len);
            }
            return Err(StoreError::io(&self.path, e));
        }
        self.len += buf.len() as u64;
        self.next_seq += 1;
        Ok(line)
    }
}

pub fn read_journal(path: &Path) -> Result<JournalContents, StoreError> {
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| StoreError::io(path, e))?;
    parse_journal(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, BTreeSet};

    fn arm(s: &str) -> ArmId {
        ArmId::new(s).unwrap()
    }

    fn batch_line(seq: u64, epoch: u64) -> JournalLine {
        let weights: BTreeMap<_, _> = [(arm("a"), 0.5), (arm("b"), 0.5)].into();
        JournalLine {
            seq,
            entry: JournalEntry::Batch {
                record: AuditRecord {
                    epoch,
                    raw: weights.clone(),
                    post_blacklist: weights.clone(),
                    post_floor: weights,
                    stats_delta: [(arm("a"), armada_core::SufficientStats::new(1, 2))].into(),
                    floor: 0.05,
                    seed: 7,
                    blacklist: BTreeSet::new(),
                    n_draws: 100,
                },
                events_cursor: 12,
            },
        }
    }

    #[test]
    fn batch_line_carries_audit_fields() {
        let v: serde_json::Value = serde_json::to_value(batch_line(3, 2)).unwrap();
        for key in ["seq", "type", "epoch", "raw", "post_blacklist", "post_floor", "stats_delta", "floor", "seed"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["type"], "batch");
        let back: JournalLine = serde_json::from_value(v).unwrap();
        assert_eq!(back, batch_line(3, 2));
    }

    #[test]
    fn torn_tail_is_dropped_and_mid_file_garbage_is_corrupt() {
        let p = Path::new("j");
        let mut bytes = Vec::new();
        for i in 0..3 {
            bytes.extend(serde_json::to_vec(&batch_line(i, i + 1)).unwrap());
            bytes.push(b'\n');
        }
        let full = parse_journal(&bytes, p).unwrap();
        assert_eq!((full.lines.len(), full.torn_tail), (3, false));

        let cut = &bytes[..bytes.len() - 5];
        let torn = parse_journal(cut, p).unwrap();
        assert_eq!(torn.lines.len(), 2);
        assert!(torn.torn_tail);

        let mut garbled = bytes.clone();
        garbled[3] = b'#';
        assert!(matches!(parse_journal(&garbled, p), Err(StoreError::Corrupt { .. })));
    }

    #[test]
    fn seq_must_be_contiguous() {
        let mut bytes = serde_json::to_vec(&batch_line(0, 1)).unwrap();
        bytes.push(b'\n');
        bytes.extend(serde_json::to_vec(&batch_line(2, 2)).unwrap());
        bytes.push(b'\n');
        assert!(matches!(parse_journal(&bytes, Path::new("j")), Err(StoreError::Corrupt { .. })));
    }

    #[test]
    fn open_truncates_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        let config = CampaignConfig::new("c", vec![arm("a")]);
        let mut j = Journal::create(&path, &config).unwrap();
        j.append(JournalEntry::Blacklist { arm: arm("a"), effective_epoch: 1 }).unwrap();
        let good_len = std::fs::metadata(&path).unwrap().len();
        std::fs::OpenOptions::new().append(true).open(&path).unwrap().write_all(b"{\"seq\":2,\"ty").unwrap();
        let (mut j, lines) = Journal::open(&path).unwrap();
        assert_eq!(lines.len(), 2);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), good_len);
        assert_eq!(j.append(JournalEntry::Cursor { events_cursor: 4 }).unwrap().seq, 2);
        assert_eq!(read_journal(&path).unwrap().lines.len(), 3);
    }
}
