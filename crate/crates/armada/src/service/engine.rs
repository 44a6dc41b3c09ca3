//! Campaign registry and the operations behind each endpoint.
//!
//! Readers (allocation, assign, history) work from an immutable published
//! copy swapped under a short lock. Batches and admin mutations go through a
//! per-campaign writer lock; a batch that finds it held reports a conflict
//! instead of queueing. Event ingestion appends under its own lock so it
//! never waits on a batch's sampling.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use armada_core::attribution::{aggregate_all, filter_bots, join_ruds, InteractionEvent, ServedEvent};
use armada_core::randomizer::CumulativeAllocation;
use armada_core::rng::{derive_seed, seeded, SeededRng};
use armada_core::{ArmId, CampaignConfig, FloorSchedule, SufficientStats};
use chrono::Utc;
use parking_lot::{Mutex, RwLock};
use rand::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use super::error::ApiError;
use crate::config::ServiceConfig;
use crate::events::{parse_lines, Event, EventLog, LineRejection};
use crate::journal::{read_journal, JournalEntry, JournalLine};
use crate::store::{CampaignStore, StoredCampaign, JOURNAL_FILE};

const ASSIGN_STREAM: u64 = 0xA551;

#[derive(Debug, Clone, Deserialize)]
pub struct CreateCampaign {
    pub campaign_id: String,
    pub arms: Vec<ArmId>,
    /// Constant floor; ignored when `floor_schedule` is given.
    pub floor: Option<f64>,
    pub floor_schedule: Option<FloorSchedule>,
    pub n_draws: Option<u32>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightBoundary {
    pub arm: ArmId,
    pub weight: f64,
    /// Upper edge of the arm's bucket in `[0, 1)`.
    pub upper: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationView {
    pub campaign_id: String,
    pub epoch: u64,
    pub weights: BTreeMap<ArmId, f64>,
    pub cumulative: Vec<WeightBoundary>,
    pub blacklist: BTreeSet<ArmId>,
    pub floor: f64,
    /// Admin changes waiting for the next batch.
    pub pending_changes: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: Vec<LineRejection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchReport {
    pub campaign_id: String,
    pub epoch: u64,
    pub unchanged: bool,
    pub allocation: BTreeMap<ArmId, f64>,
    pub events_consumed: u64,
    pub malformed_events: u64,
    pub bot_records_dropped: usize,
    pub rejected_events: usize,
    /// Interactions whose visitor had no serve in the batch's slice; most
    /// are clicks that arrived after their serve was counted.
    pub unmatched_interactions: usize,
    pub stats_delta: BTreeMap<ArmId, SufficientStats>,
}

#[derive(Debug, Clone, Deserialize, Default)]
pub struct AssignRequest {
    pub visitor_id: String,
    /// Append the serve to the event log, stamped now.
    #[serde(default)]
    pub record: bool,
    pub request_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Assignment {
    pub arm: ArmId,
    pub epoch: u64,
    pub request_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub alpha: f64,
    pub beta: f64,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl PosteriorSummary {
    pub fn of(stats: SufficientStats) -> Self {
        let alpha = stats.successes as f64 + 1.0;
        let beta = stats.failures as f64 + 1.0;
        let dist = Beta::new(alpha, beta).expect("positive shapes");
        Self {
            alpha,
            beta,
            mean: alpha / (alpha + beta),
            ci_low: dist.inverse_cdf(0.025),
            ci_high: dist.inverse_cdf(0.975),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochHistory {
    pub epoch: u64,
    pub allocation: BTreeMap<ArmId, f64>,
    pub raw: BTreeMap<ArmId, f64>,
    pub floor: f64,
    pub blacklist: BTreeSet<ArmId>,
    pub stats_delta: BTreeMap<ArmId, SufficientStats>,
    pub stats: BTreeMap<ArmId, SufficientStats>,
    pub posteriors: BTreeMap<ArmId, PosteriorSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdminHistory {
    pub action: String,
    pub arm: Option<ArmId>,
    pub schedule: Option<FloorSchedule>,
    pub effective_epoch: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct History {
    pub campaign_id: String,
    pub epochs: Vec<EpochHistory>,
    pub admin: Vec<AdminHistory>,
}

struct Published {
    campaign: StoredCampaign,
    cumulative: CumulativeAllocation,
}

impl Published {
    fn new(campaign: StoredCampaign) -> Self {
        let cumulative = CumulativeAllocation::build(&campaign.state.allocation);
        Self { campaign, cumulative }
    }
}

pub struct CampaignHandle {
    id: String,
    dir: PathBuf,
    published: RwLock<Arc<Published>>,
    writer: Mutex<CampaignStore>,
    events: EventLog,
    ingest: Mutex<()>,
    rng: Mutex<SeededRng>,
}

impl CampaignHandle {
    fn new(store: CampaignStore, campaign: StoredCampaign, assign_seed: Option<u64>) -> Self {
        let rng = match assign_seed {
            Some(s) => seeded(derive_seed(s, ASSIGN_STREAM, fnv(campaign.state.campaign_id.as_bytes()))),
            None => SeededRng::from_os_rng(),
        };
        Self {
            id: campaign.state.campaign_id.clone(),
            dir: store.dir().to_path_buf(),
            events: store.events().clone(),
            published: RwLock::new(Arc::new(Published::new(campaign))),
            writer: Mutex::new(store),
            ingest: Mutex::new(()),
            rng: Mutex::new(rng),
        }
    }

    fn current(&self) -> Arc<Published> {
        self.published.read().clone()
    }

    fn publish(&self, campaign: StoredCampaign) {
        *self.published.write() = Arc::new(Published::new(campaign));
    }

    pub fn campaign(&self) -> StoredCampaign {
        self.current().campaign.clone()
    }
}

fn fnv(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3))
}

/// All campaigns under one data directory.
pub struct Engine {
    config: ServiceConfig,
    campaigns: RwLock<HashMap<String, Arc<CampaignHandle>>>,
    create_lock: Mutex<()>,
}

impl Engine {
    /// Opens every campaign found under the data directory.
    pub fn open(config: ServiceConfig) -> Result<Self, ApiError> {
        std::fs::create_dir_all(&config.data_dir)
            .map_err(|e| ApiError::internal(format!("{}: {e}", config.data_dir.display())))?;
        let mut campaigns = HashMap::new();
        let entries = std::fs::read_dir(&config.data_dir).map_err(|e| ApiError::internal(e.to_string()))?;
        for entry in entries {
            let path = entry.map_err(|e| ApiError::internal(e.to_string()))?.path();
            if !path.join(JOURNAL_FILE).is_file() {
                continue;
            }
            let Some(id) = path.file_name().and_then(|n| n.to_str()).map(str::to_string) else { continue };
            let (store, campaign) = CampaignStore::open(&config.data_dir, &id)?;
            tracing::info!(campaign = %id, epoch = campaign.state.epoch, "recovered campaign");
            campaigns.insert(id, Arc::new(CampaignHandle::new(store, campaign, config.assign_seed)));
        }
        Ok(Self { config, campaigns: RwLock::new(campaigns), create_lock: Mutex::new(()) })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn data_dir(&self) -> &Path {
        &self.config.data_dir
    }

    pub fn campaign_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.campaigns.read().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn handle(&self, id: &str) -> Result<Arc<CampaignHandle>, ApiError> {
        self.campaigns.read().get(id).cloned().ok_or_else(|| ApiError::not_found(format!("campaign {id} not found")))
    }

    pub fn create(&self, req: CreateCampaign) -> Result<AllocationView, ApiError> {
        ArmId::new(req.campaign_id.as_str()).map_err(|e| ApiError::invalid(format!("campaign_id: {e}")))?;
        let schedule = match (req.floor_schedule, req.floor) {
            (Some(s), _) => s,
            (None, Some(f)) => FloorSchedule::constant(f),
            (None, None) => FloorSchedule::constant(self.config.default_floor),
        };
        let mut config = CampaignConfig::new(req.campaign_id.clone(), req.arms);
        config.floor_schedule = schedule;
        config.n_draws = req.n_draws.unwrap_or(self.config.default_n_draws);
        config.seed = req.seed.unwrap_or(fnv(req.campaign_id.as_bytes()));

        let _guard = self.create_lock.lock();
        if self.campaigns.read().contains_key(&req.campaign_id) {
            return Err(ApiError::conflict(format!("campaign {} already exists", req.campaign_id)));
        }
        armada_core::CampaignState::new(config.clone())?;
        let (store, campaign) = CampaignStore::create(&self.config.data_dir, &config)?;
        let handle = Arc::new(CampaignHandle::new(store, campaign, self.config.assign_seed));
        let view = allocation_view(&handle.current().campaign);
        self.campaigns.write().insert(req.campaign_id, handle);
        Ok(view)
    }

    pub fn allocation(&self, id: &str) -> Result<AllocationView, ApiError> {
        Ok(allocation_view(&self.handle(id)?.current().campaign))
    }

    pub fn assign(&self, id: &str, req: &AssignRequest) -> Result<Assignment, ApiError> {
        if req.visitor_id.is_empty() {
            return Err(ApiError::invalid("visitor_id must not be empty"));
        }
        let handle = self.handle(id)?;
        let published = handle.current();
        let arm = published.cumulative.sample(&mut *handle.rng.lock())?.clone();
        let epoch = published.campaign.state.epoch;
        let request_id = if req.record {
            let now = Utc::now();
            let request_id = req
                .request_id
                .clone()
                .unwrap_or_else(|| format!("{}-{:016x}", now.timestamp_millis(), handle.rng.lock().next_u64()));
            let event = Event::Served(ServedEvent {
                visitor_id: req.visitor_id.clone(),
                arm: arm.clone(),
                timestamp: now.timestamp_millis(),
                request_id: request_id.clone(),
            });
            let _g = handle.ingest.lock();
            handle.events.append(&[event], now).map_err(|e| ApiError::internal(e.to_string()))?;
            Some(request_id)
        } else {
            None
        };
        Ok(Assignment { arm, epoch, request_id })
    }

    /// Validates and appends a JSONL body to the campaign's event log.
    pub fn ingest(&self, id: &str, body: &str) -> Result<IngestReport, ApiError> {
        let handle = self.handle(id)?;
        let (events, mut rejected) = parse_lines(body);
        let arms: BTreeSet<ArmId> = handle.current().campaign.state.arms.keys().cloned().collect();
        let mut accepted = Vec::with_capacity(events.len());
        for (line, event) in events {
            match check_event(&event, &arms) {
                Ok(()) => accepted.push(event),
                Err(reason) => rejected.push(LineRejection { line, reason }),
            }
        }
        rejected.sort_by_key(|r| r.line);
        let _g = handle.ingest.lock();
        handle.events.append(&accepted, Utc::now()).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(IngestReport { accepted: accepted.len(), rejected })
    }

    /// Runs the mini-batch over events ingested since the last one.
    pub fn batch(&self, id: &str) -> Result<BatchReport, ApiError> {
        let handle = self.handle(id)?;
        let Some(mut store) = handle.writer.try_lock() else {
            return Err(ApiError::conflict(format!("a batch or admin change for {id} is in progress")));
        };
        let current = handle.current().campaign.clone();
        let slice = {
            let _g = handle.ingest.lock();
            store.events().read_from(current.events_cursor).map_err(|e| ApiError::internal(e.to_string()))?
        };
        let consumed = slice.cursor - current.events_cursor;
        let (served, interactions) = crate::events::partition(slice.events);
        let unmatched = unmatched_interactions(&served, &interactions);
        let joined = join_ruds(&served, &interactions, &self.config.join);
        let (records, bots) = filter_bots(joined.records, |v| self.config.bots.is_bot(v));
        let delta: BTreeMap<ArmId, SufficientStats> =
            aggregate_all(&records).into_iter().filter(|(arm, _)| current.state.arms.contains_key(arm)).collect();

        let outcome = current.state.run_batch(&delta)?;
        let mut next = StoredCampaign { state: outcome.state, events_cursor: slice.cursor };
        let unchanged = outcome.audit.is_none();
        match outcome.audit {
            Some(record) => {
                let line = store.append(JournalEntry::Batch { record, events_cursor: slice.cursor })?;
                next.state.journal_cursor = line.seq + 1;
                if let Err(e) = store.snapshot(&next) {
                    tracing::warn!(campaign = %id, error = %e, "snapshot failed; journal remains authoritative");
                }
            }
            None if consumed > 0 => {
                let line = store.append(JournalEntry::Cursor { events_cursor: slice.cursor })?;
                next.state.journal_cursor = line.seq + 1;
            }
            None => {}
        }
        handle.publish(next.clone());
        if let Err(e) = store.events().rotate(Utc::now().date_naive()) {
            tracing::warn!(campaign = %id, error = %e, "event log rotation failed");
        }
        Ok(BatchReport {
            campaign_id: id.to_string(),
            epoch: next.state.epoch,
            unchanged,
            allocation: next.state.allocation.weights.clone(),
            events_consumed: consumed,
            malformed_events: slice.malformed,
            bot_records_dropped: bots,
            rejected_events: joined.rejected.len(),
            unmatched_interactions: unmatched,
            stats_delta: delta,
        })
    }

    fn mutate<F>(&self, id: &str, f: F) -> Result<AllocationView, ApiError>
    where
        F: FnOnce(&mut armada_core::CampaignState) -> Result<JournalEntry, ApiError>,
    {
        let handle = self.handle(id)?;
        let mut store = handle.writer.lock();
        let mut next = handle.current().campaign.clone();
        let entry = f(&mut next.state)?;
        let line = store.append(entry)?;
        next.state.journal_cursor = line.seq + 1;
        let view = allocation_view(&next);
        handle.publish(next);
        Ok(view)
    }

    pub fn add_arm(&self, id: &str, arm: &str) -> Result<AllocationView, ApiError> {
        let arm = ArmId::new(arm).map_err(|e| ApiError::invalid(e.to_string()))?;
        self.mutate(id, |s| {
            s.add_arm(arm.clone()).map_err(|e| match e {
                armada_core::Error::DuplicateArm(a) => ApiError::conflict(format!("arm {a} already exists")),
                other => other.into(),
            })?;
            Ok(JournalEntry::AddArm { arm, effective_epoch: s.epoch + 1 })
        })
    }

    pub fn blacklist(&self, id: &str, arm: &str, on: bool) -> Result<AllocationView, ApiError> {
        let arm = ArmId::new(arm).map_err(|e| ApiError::invalid(e.to_string()))?;
        self.mutate(id, |s| {
            let effective_epoch = s.epoch + 1;
            if on {
                s.blacklist_arm(&arm)?;
                Ok(JournalEntry::Blacklist { arm, effective_epoch })
            } else {
                s.unblacklist_arm(&arm)?;
                Ok(JournalEntry::Unblacklist { arm, effective_epoch })
            }
        })
    }

    pub fn set_floor_schedule(&self, id: &str, schedule: FloorSchedule) -> Result<AllocationView, ApiError> {
        self.mutate(id, |s| {
            s.set_floor_schedule(schedule.clone())?;
            Ok(JournalEntry::FloorSchedule { schedule, effective_epoch: s.epoch + 1 })
        })
    }

    pub fn history(&self, id: &str) -> Result<History, ApiError> {
        let handle = self.handle(id)?;
        let lines = read_journal(&handle.dir.join(JOURNAL_FILE))?.lines;
        Ok(history_from_journal(&handle.id, &lines))
    }
}

/// Monitoring feed rebuilt from journal lines.
pub fn history_from_journal(campaign_id: &str, lines: &[JournalLine]) -> History {
    let mut stats: BTreeMap<ArmId, SufficientStats> = BTreeMap::new();
    let mut epochs = Vec::new();
    let mut admin = Vec::new();
    let mut push_admin = |action: &str, arm: Option<&ArmId>, schedule: Option<&FloorSchedule>, epoch: u64| {
        admin.push(AdminHistory {
            action: action.to_string(),
            arm: arm.cloned(),
            schedule: schedule.cloned(),
            effective_epoch: epoch,
        });
    };
    for line in lines {
        match &line.entry {
            JournalEntry::Created { config } => {
                for arm in &config.arms {
                    stats.insert(arm.clone(), SufficientStats::ZERO);
                }
            }
            JournalEntry::AddArm { arm, effective_epoch } => {
                stats.entry(arm.clone()).or_default();
                push_admin("add_arm", Some(arm), None, *effective_epoch);
            }
            JournalEntry::Blacklist { arm, effective_epoch } => {
                push_admin("blacklist", Some(arm), None, *effective_epoch)
            }
            JournalEntry::Unblacklist { arm, effective_epoch } => {
                push_admin("unblacklist", Some(arm), None, *effective_epoch)
            }
            JournalEntry::FloorSchedule { schedule, effective_epoch } => {
                push_admin("floor_schedule", None, Some(schedule), *effective_epoch)
            }
            JournalEntry::Batch { record, .. } => {
                for (arm, d) in &record.stats_delta {
                    *stats.entry(arm.clone()).or_default() += *d;
                }
                epochs.push(EpochHistory {
                    epoch: record.epoch,
                    allocation: record.post_floor.clone(),
                    raw: record.raw.clone(),
                    floor: record.floor,
                    blacklist: record.blacklist.clone(),
                    stats_delta: record.stats_delta.clone(),
                    stats: stats.clone(),
                    posteriors: stats.iter().map(|(a, s)| (a.clone(), PosteriorSummary::of(*s))).collect(),
                });
            }
            JournalEntry::Cursor { .. } => {}
        }
    }
    History { campaign_id: campaign_id.to_string(), epochs, admin }
}

fn check_event(event: &Event, arms: &BTreeSet<ArmId>) -> Result<(), String> {
    match event {
        Event::Served(s) => {
            if s.visitor_id.is_empty() {
                Err("empty visitor_id".into())
            } else if s.request_id.is_empty() {
                Err("empty request_id".into())
            } else if !arms.contains(&s.arm) {
                Err(format!("unknown arm {}", s.arm))
            } else {
                Ok(())
            }
        }
        Event::Interaction(i) if i.visitor_id.is_empty() => Err("empty visitor_id".into()),
        Event::Interaction(_) => Ok(()),
    }
}

fn unmatched_interactions(served: &[ServedEvent], interactions: &[InteractionEvent]) -> usize {
    let visitors: BTreeSet<&str> = served.iter().map(|s| s.visitor_id.as_str()).collect();
    interactions.iter().filter(|i| !visitors.contains(i.visitor_id.as_str())).count()
}

fn allocation_view(c: &StoredCampaign) -> AllocationView {
    let s = &c.state;
    let mut acc = 0.0;
    let cumulative = s
        .allocation
        .weights
        .iter()
        .map(|(arm, w)| {
            acc += w;
            WeightBoundary { arm: arm.clone(), weight: *w, upper: acc }
        })
        .collect();
    AllocationView {
        campaign_id: s.campaign_id.clone(),
        epoch: s.epoch,
        weights: s.allocation.weights.clone(),
        cumulative,
        blacklist: s.blacklist.clone(),
        floor: s.floor_schedule.floor_at(s.epoch + 1),
        pending_changes: s.pending_changes,
    }
}
