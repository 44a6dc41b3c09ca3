//! Campaign state and the daily mini-batch.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::allocator::{
    apply_blacklist, apply_floor, raw_allocation, Allocation, ArmId, FloorSchedule, DEFAULT_N_DRAWS,
};
use crate::error::{Error, Result};
use crate::posterior::{BetaPosterior, SufficientStats};
use crate::rng::{derive_seed, seeded};

const BATCH_STREAM: u64 = 0xBA7C;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub campaign_id: String,
    pub arms: Vec<ArmId>,
    #[serde(default)]
    pub floor_schedule: FloorSchedule,
    #[serde(default = "default_n_draws")]
    pub n_draws: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_n_draws() -> u32 {
    DEFAULT_N_DRAWS
}

impl CampaignConfig {
    pub fn new(campaign_id: impl Into<String>, arms: Vec<ArmId>) -> Self {
        Self {
            campaign_id: campaign_id.into(),
            arms,
            floor_schedule: FloorSchedule::default(),
            n_draws: DEFAULT_N_DRAWS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub stats: SufficientStats,
    pub posterior: BetaPosterior,
    /// First epoch whose batch includes the arm.
    pub added_at_epoch: u64,
}

impl ArmState {
    fn fresh(added_at_epoch: u64) -> Self {
        Self { stats: SufficientStats::ZERO, posterior: BetaPosterior::prior(), added_at_epoch }
    }
}

/// Everything needed to run the next batch.
///
/// `epoch` counts committed batches. `allocation` is the published vector
/// serving traffic until the next batch commits. Admin mutations only touch
/// configuration; they reach the allocation at the next batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub campaign_id: String,
    pub arms: BTreeMap<ArmId, ArmState>,
    pub epoch: u64,
    pub floor_schedule: FloorSchedule,
    pub blacklist: BTreeSet<ArmId>,
    pub allocation: Allocation,
    pub n_draws: u32,
    pub seed: u64,
    /// Admin changes made since the last committed batch.
    pub pending_changes: bool,
    /// Position in the campaign journal up to which this state is current.
    pub journal_cursor: u64,
}

/// One committed batch, including every intermediate vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub epoch: u64,
    pub raw: BTreeMap<ArmId, f64>,
    pub post_blacklist: BTreeMap<ArmId, f64>,
    pub post_floor: BTreeMap<ArmId, f64>,
    pub stats_delta: BTreeMap<ArmId, SufficientStats>,
    pub floor: f64,
    pub seed: u64,
    pub blacklist: BTreeSet<ArmId>,
    pub n_draws: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub state: CampaignState,
    pub allocation: Allocation,
    /// `None` when the batch saw no data and nothing was recomputed.
    pub audit: Option<AuditRecord>,
}

impl BatchOutcome {
    pub fn unchanged(&self) -> bool {
        self.audit.is_none()
    }
}

impl CampaignState {
    pub fn new(config: CampaignConfig) -> Result<Self> {
        if config.arms.is_empty() {
            return Err(Error::EmptyArmSet);
        }
        if config.n_draws == 0 {
            return Err(Error::InvalidParameter("n_draws must be >= 1".to_string()));
        }
        let mut arms = BTreeMap::new();
        for arm in config.arms {
            if arms.insert(arm.clone(), ArmState::fresh(1)).is_some() {
                return Err(Error::DuplicateArm(arm));
            }
        }
        config.floor_schedule.check_feasible(arms.len())?;
        let blacklist = BTreeSet::new();
        let allocation = Allocation::uniform(0, arms.keys(), &blacklist)?;
        Ok(Self {
            campaign_id: config.campaign_id,
            arms,
            epoch: 0,
            floor_schedule: config.floor_schedule,
            blacklist,
            allocation,
            n_draws: config.n_draws,
            seed: config.seed,
            pending_changes: false,
            journal_cursor: 0,
        })
    }

    pub fn active_arms(&self) -> usize {
        self.arms.keys().filter(|a| !self.blacklist.contains(*a)).count()
    }

    pub fn posteriors(&self) -> BTreeMap<ArmId, BetaPosterior> {
        self.arms.iter().map(|(a, s)| (a.clone(), s.posterior)).collect()
    }

    pub fn stats(&self) -> BTreeMap<ArmId, SufficientStats> {
        self.arms.iter().map(|(a, s)| (a.clone(), s.stats)).collect()
    }

    /// Seed used by the batch that produces `epoch`.
    pub fn batch_seed(&self, epoch: u64) -> u64 {
        derive_seed(self.seed, BATCH_STREAM, epoch)
    }

    /// Runs one mini-batch over the counts observed since the last one.
    ///
    /// An all-zero delta with no pending admin change leaves the state and the
    /// published allocation exactly as they were. Otherwise counts are
    /// accumulated, posteriors recomputed, and the raw Monte-Carlo allocation
    /// passes through the blacklist and the floor active at the new epoch.
    pub fn run_batch(&self, delta: &BTreeMap<ArmId, SufficientStats>) -> Result<BatchOutcome> {
        if let Some(unknown) = delta.keys().find(|a| !self.arms.contains_key(*a)) {
            return Err(Error::UnknownArm(unknown.clone()));
        }
        if delta.values().all(SufficientStats::is_zero) && !self.pending_changes {
            return Ok(BatchOutcome { state: self.clone(), allocation: self.allocation.clone(), audit: None });
        }

        let epoch = self.epoch + 1;
        let mut next = self.clone();
        for (arm, d) in delta {
            let s = next.arms.get_mut(arm).expect("checked above");
            s.stats += *d;
            s.posterior = BetaPosterior::from_stats(s.stats);
        }

        let seed = self.batch_seed(epoch);
        let floor = self.floor_schedule.floor_at(epoch);
        let raw = raw_allocation(&next.posteriors(), self.n_draws, &mut seeded(seed))?;
        let post_blacklist = apply_blacklist(&raw, &self.blacklist)?;
        let mut post_floor = apply_floor(&post_blacklist, floor, &self.blacklist)?;
        post_floor.epoch = epoch;

        let stats_delta = self.arms.keys().map(|a| (a.clone(), delta.get(a).copied().unwrap_or_default())).collect();
        let audit = AuditRecord {
            epoch,
            raw: raw.weights,
            post_blacklist: post_blacklist.weights,
            post_floor: post_floor.weights.clone(),
            stats_delta,
            floor,
            seed,
            blacklist: self.blacklist.clone(),
            n_draws: self.n_draws,
        };
        next.epoch = epoch;
        next.allocation = post_floor.clone();
        next.pending_changes = false;
        Ok(BatchOutcome { state: next, allocation: post_floor, audit: Some(audit) })
    }

    /// Re-applies a committed batch without re-sampling.
    pub fn apply_audit(&mut self, record: &AuditRecord) -> Result<()> {
        if record.epoch != self.epoch + 1 {
            return Err(Error::EpochGap { expected: self.epoch + 1, found: record.epoch });
        }
        if let Some(unknown) = record.stats_delta.keys().find(|a| !self.arms.contains_key(*a)) {
            return Err(Error::UnknownArm(unknown.clone()));
        }
        for (arm, d) in &record.stats_delta {
            let s = self.arms.get_mut(arm).expect("checked above");
            s.stats += *d;
            s.posterior = BetaPosterior::from_stats(s.stats);
        }
        self.epoch = record.epoch;
        self.allocation = Allocation::new(record.epoch, record.post_floor.clone());
        self.pending_changes = false;
        Ok(())
    }

    /// Adds an arm with a uniform prior; it joins at the next batch.
    pub fn add_arm(&mut self, arm: ArmId) -> Result<()> {
        if self.arms.contains_key(&arm) {
            return Err(Error::DuplicateArm(arm));
        }
        self.floor_schedule.check_feasible(self.active_arms() + 1)?;
        self.arms.insert(arm, ArmState::fresh(self.epoch + 1));
        self.pending_changes = true;
        Ok(())
    }

    pub fn blacklist_arm(&mut self, arm: &ArmId) -> Result<()> {
        if !self.arms.contains_key(arm) {
            return Err(Error::UnknownArm(arm.clone()));
        }
        if self.blacklist.contains(arm) {
            return Ok(());
        }
        if self.active_arms() <= 1 {
            return Err(Error::AllArmsBlacklisted);
        }
        self.blacklist.insert(arm.clone());
        self.pending_changes = true;
        Ok(())
    }

    pub fn unblacklist_arm(&mut self, arm: &ArmId) -> Result<()> {
        if !self.arms.contains_key(arm) {
            return Err(Error::UnknownArm(arm.clone()));
        }
        if !self.blacklist.contains(arm) {
            return Ok(());
        }
        self.floor_schedule.check_feasible(self.active_arms() + 1)?;
        self.blacklist.remove(arm);
        self.pending_changes = true;
        Ok(())
    }

    pub fn set_floor_schedule(&mut self, schedule: FloorSchedule) -> Result<()> {
        schedule.check_feasible(self.active_arms())?;
        self.floor_schedule = schedule;
        self.pending_changes = true;
        Ok(())
    }

    /// Checks that every posterior equals the update of its counts and the
    /// published allocation sums to one.
    pub fn check_invariants(&self) -> Result<()> {
        for (arm, s) in &self.arms {
            if s.posterior != BetaPosterior::from_stats(s.stats) {
                return Err(Error::InvalidParameter(alloc::format!("posterior of {arm} does not match its counts")));
            }
        }
        if (self.allocation.total() - 1.0).abs() > crate::allocator::WEIGHT_TOLERANCE {
            return Err(Error::InvalidParameter(alloc::format!(
                "published allocation sums to {}",
                self.allocation.total()
            )));
        }
        Ok(())
    }
}
