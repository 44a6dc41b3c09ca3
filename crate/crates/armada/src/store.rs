//! Campaign persistence: journal replay, per-epoch snapshots and recovery.
//!
//! Layout under the data directory:
//!
//! ```text
//! <root>/<campaign>/journal.jsonl
//! <root>/<campaign>/campaign-<campaign>-epoch-<t>.json
//! <root>/<campaign>/events/events-<date>.jsonl[.gz]
//! ```
//!
//! The journal is authoritative. A batch commits when its journal line is
//! fsynced; the snapshot written afterwards only shortens recovery.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use armada_core::{CampaignConfig, CampaignState};
use serde::{Deserialize, Serialize};

use crate::error::StoreError;
use crate::events::EventLog;
use crate::journal::{read_journal, Journal, JournalEntry, JournalLine};

pub const SNAPSHOT_VERSION: u32 = 1;
pub const JOURNAL_FILE: &str = "journal.jsonl";

/// Campaign state plus how far the event log has been consumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredCampaign {
    pub state: CampaignState,
    pub events_cursor: u64,
}

impl StoredCampaign {
    pub fn new(config: CampaignConfig) -> Result<Self, StoreError> {
        Ok(Self { state: CampaignState::new(config)?, events_cursor: 0 })
    }

    /// Applies one journal line. Batch lines must continue the epoch
    /// sequence; a jump reports the missing epochs.
    pub fn apply(&mut self, line: &JournalLine) -> Result<(), StoreError> {
        let s = &mut self.state;
        match &line.entry {
            JournalEntry::Created { .. } => {
                return Err(StoreError::Corrupt {
                    path: PathBuf::from(JOURNAL_FILE),
                    detail: format!("created entry at seq {}", line.seq),
                })
            }
            JournalEntry::AddArm { arm, .. } => s.add_arm(arm.clone())?,
            JournalEntry::Blacklist { arm, .. } => s.blacklist_arm(arm)?,
            JournalEntry::Unblacklist { arm, .. } => s.unblacklist_arm(arm)?,
            JournalEntry::FloorSchedule { schedule, .. } => s.set_floor_schedule(schedule.clone())?,
            JournalEntry::Batch { record, events_cursor } => {
                if record.epoch > s.epoch + 1 {
                    return Err(StoreError::Gap { from: s.epoch + 1, to: record.epoch - 1 });
                }
                s.apply_audit(record)?;
                self.events_cursor = *events_cursor;
            }
            JournalEntry::Cursor { events_cursor } => self.events_cursor = *events_cursor,
        }
        self.state.journal_cursor = line.seq + 1;
        Ok(())
    }
}

/// Rebuilds campaign state from journal lines, starting from `base` (a
/// snapshot) or from the `created` line when there is none.
pub fn replay(lines: &[JournalLine], base: Option<StoredCampaign>) -> Result<StoredCampaign, StoreError> {
    let (mut campaign, start) = match base {
        Some(b) => {
            let start = b.state.journal_cursor as usize;
            (b, start)
        }
        None => match lines.first() {
            Some(JournalLine { entry: JournalEntry::Created { config }, .. }) => {
                let mut c = StoredCampaign::new(config.clone())?;
                c.state.journal_cursor = 1;
                (c, 1)
            }
            _ => {
                return Err(StoreError::Corrupt {
                    path: PathBuf::from(JOURNAL_FILE),
                    detail: "journal does not start with a created entry".into(),
                })
            }
        },
    };
    if start > lines.len() {
        return Err(StoreError::Corrupt {
            path: PathBuf::from(JOURNAL_FILE),
            detail: format!("snapshot cursor {start} beyond journal length {}", lines.len()),
        });
    }
    for line in &lines[start..] {
        campaign.apply(line)?;
    }
    Ok(campaign)
}

/// Like [`replay`] but re-runs every batch and checks it reproduces the
/// logged record bit for bit.
pub fn replay_verified(lines: &[JournalLine]) -> Result<StoredCampaign, StoreError> {
    let mut campaign = replay(&lines[..1.min(lines.len())], None)?;
    for line in &lines[1..] {
        if let JournalEntry::Batch { record, .. } = &line.entry {
            let rerun = campaign.state.run_batch(&record.stats_delta)?;
            if rerun.audit.as_ref() != Some(record) {
                return Err(StoreError::Corrupt {
                    path: PathBuf::from(JOURNAL_FILE),
                    detail: format!("batch for epoch {} does not reproduce", record.epoch),
                });
            }
        }
        campaign.apply(line)?;
    }
    Ok(campaign)
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotFile {
    version: u32,
    campaign: StoredCampaign,
}

pub fn snapshot_name(campaign_id: &str, epoch: u64) -> String {
    format!("campaign-{campaign_id}-epoch-{epoch}.json")
}

/// Writes `campaign` atomically: temp file, fsync, rename, directory fsync.
pub fn write_snapshot(dir: &Path, campaign: &StoredCampaign) -> Result<PathBuf, StoreError> {
    let id = &campaign.state.campaign_id;
    let path = dir.join(snapshot_name(id, campaign.state.epoch));
    let tmp = dir.join(format!(".{}.tmp", snapshot_name(id, campaign.state.epoch)));
    let body = serde_json::to_vec_pretty(&SnapshotFile { version: SNAPSHOT_VERSION, campaign: campaign.clone() })
        .map_err(|e| StoreError::Corrupt { path: path.clone(), detail: e.to_string() })?;
    let write = || -> std::io::Result<()> {
        let mut f = OpenOptions::new().write(true).create(true).truncate(true).open(&tmp)?;
        f.write_all(&body)?;
        f.sync_all()?;
        fs::rename(&tmp, &path)?;
        File::open(dir)?.sync_all()
    };
    write().map_err(|e| StoreError::io(&path, e))?;
    Ok(path)
}

/// Loads one snapshot file. A missing file is an error, never a default.
pub fn load_snapshot(path: &Path) -> Result<StoredCampaign, StoreError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(StoreError::EmptyCampaign(path.display().to_string()))
        }
        Err(e) => return Err(StoreError::io(path, e)),
    };
    let file: SnapshotFile = serde_json::from_slice(&bytes)
        .map_err(|e| StoreError::Corrupt { path: path.to_path_buf(), detail: e.to_string() })?;
    if file.version != SNAPSHOT_VERSION {
        return Err(StoreError::Corrupt {
            path: path.to_path_buf(),
            detail: format!("unsupported snapshot version {}", file.version),
        });
    }
    Ok(file.campaign)
}

/// Snapshot files in `dir` for `campaign_id`, newest epoch first.
pub fn list_snapshots(dir: &Path, campaign_id: &str) -> Result<Vec<(u64, PathBuf)>, StoreError> {
    let prefix = format!("campaign-{campaign_id}-epoch-");
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| StoreError::io(dir, e))? {
        let path = entry.map_err(|e| StoreError::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let epoch =
            name.strip_prefix(&prefix).and_then(|r| r.strip_suffix(".json")).and_then(|e| e.parse::<u64>().ok());
        if let Some(epoch) = epoch {
            out.push((epoch, path));
        }
    }
    out.sort_by_key(|e| std::cmp::Reverse(e.0));
    Ok(out)
}

/// Durable home of one campaign.
#[derive(Debug)]
pub struct CampaignStore {
    dir: PathBuf,
    journal: Journal,
    events: EventLog,
}

impl CampaignStore {
    pub fn campaign_dir(root: &Path, campaign_id: &str) -> PathBuf {
        root.join(campaign_id)
    }

    /// Creates the campaign directory, journal and epoch-0 snapshot.
    pub fn create(root: &Path, config: &CampaignConfig) -> Result<(Self, StoredCampaign), StoreError> {
        let campaign = StoredCampaign::new(config.clone())?;
        let dir = Self::campaign_dir(root, &config.campaign_id);
        if dir.join(JOURNAL_FILE).exists() {
            return Err(StoreError::AlreadyExists(config.campaign_id.clone()));
        }
        fs::create_dir_all(&dir).map_err(|e| StoreError::io(&dir, e))?;
        let journal = Journal::create(dir.join(JOURNAL_FILE), config)?;
        let events = EventLog::open(dir.join("events")).map_err(|e| StoreError::io(&dir, e))?;
        let mut campaign = campaign;
        campaign.state.journal_cursor = journal.next_seq();
        write_snapshot(&dir, &campaign)?;
        Ok((Self { dir, journal, events }, campaign))
    }

    /// Opens a campaign and recovers its latest committed state: newest
    /// readable snapshot plus the journal lines after it. Unreadable
    /// snapshots are skipped.
    pub fn open(root: &Path, campaign_id: &str) -> Result<(Self, StoredCampaign), StoreError> {
        let dir = Self::campaign_dir(root, campaign_id);
        let journal_path = dir.join(JOURNAL_FILE);
        if !journal_path.exists() {
            return Err(StoreError::EmptyCampaign(campaign_id.to_string()));
        }
        let (journal, lines) = Journal::open(journal_path)?;
        let campaign = recover(&dir, campaign_id, &lines)?;
        let events = EventLog::open(dir.join("events")).map_err(|e| StoreError::io(&dir, e))?;
        Ok((Self { dir, journal, events }, campaign))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    pub fn journal_path(&self) -> &Path {
        self.journal.path()
    }

    pub fn append(&mut self, entry: JournalEntry) -> Result<JournalLine, StoreError> {
        self.journal.append(entry)
    }

    pub fn snapshot(&self, campaign: &StoredCampaign) -> Result<PathBuf, StoreError> {
        write_snapshot(&self.dir, campaign)
    }

    pub fn lines(&self) -> Result<Vec<JournalLine>, StoreError> {
        Ok(read_journal(self.journal.path())?.lines)
    }
}

/// Recovers from the newest usable snapshot in `dir` plus `lines`.
pub fn recover(dir: &Path, campaign_id: &str, lines: &[JournalLine]) -> Result<StoredCampaign, StoreError> {
    for (_, path) in list_snapshots(dir, campaign_id)? {
        let Ok(snap) = load_snapshot(&path) else {
            tracing::warn!(path = %path.display(), "skipping unreadable snapshot");
            continue;
        };
        if snap.state.campaign_id != campaign_id || snap.state.journal_cursor as usize > lines.len() {
            tracing::warn!(path = %path.display(), "skipping snapshot ahead of the journal");
            continue;
        }
        return replay(lines, Some(snap));
    }
    replay(lines, None)
}

/// State at `from_epoch` from its snapshot, rolled forward through the rest
/// of the journal. Epoch 0 may start from the journal alone.
pub fn replay_from(dir: &Path, campaign_id: &str, from_epoch: u64) -> Result<StoredCampaign, StoreError> {
    let lines = read_journal(&dir.join(JOURNAL_FILE))?.lines;
    let path = dir.join(snapshot_name(campaign_id, from_epoch));
    let base = match load_snapshot(&path) {
        Ok(s) => Some(s),
        Err(StoreError::EmptyCampaign(_)) if from_epoch == 0 => None,
        Err(StoreError::EmptyCampaign(_)) => return Err(StoreError::NoSnapshot(from_epoch)),
        Err(e) => return Err(e),
    };
    replay(&lines, base)
}
