//! Synthetic marketplace driving whole campaigns through the real pipeline.
//!
//! Every epoch the simulator routes visitors through the randomizer, emits
//! served and interaction events, runs attribution and bot filtering, and
//! commits a batch. Arms are Bernoulli click sources whose rate can drift and
//! follow a cyclic seasonality pattern.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::{Allocation, ArmId, FloorSchedule, DEFAULT_N_DRAWS};
use crate::attribution::{
    aggregate_all, filter_bots, join_ruds, InteractionEvent, InteractionKind, JoinConfig, ServedEvent, DAY_MS,
};
use crate::campaign::{CampaignConfig, CampaignState};
use crate::error::{Error, Result};
use crate::posterior::SufficientStats;
use crate::randomizer::CumulativeAllocation;
use crate::rng::{derive_seed, seeded};

const HUMAN_STREAM: u64 = 0x4855;
const BOT_STREAM: u64 = 0xB07;
const CAMPAIGN_STREAM: u64 = 0xCA;

/// Visitor ids with this prefix are bots; the bot predicate keys on it.
pub const BOT_PREFIX: &str = "bot-";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftStep {
    pub from_epoch: u64,
    pub base_ctr: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BotBehavior {
    /// Bots are served but never click.
    #[default]
    Silent,
    /// Bots click every recommendation they are served.
    ClickSpam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    /// Base click-through rate per arm, in `(0, 1)`.
    pub arms: BTreeMap<ArmId, f64>,
    /// Multipliers applied cyclically by epoch; empty means all 1.0.
    #[serde(default)]
    pub seasonality: Vec<f64>,
    /// Piecewise-constant base-rate changes per arm.
    #[serde(default)]
    pub drift: BTreeMap<ArmId, Vec<DriftStep>>,
    pub visitors_per_epoch: u32,
    /// Share of all traffic that comes from bots, in `[0, 1)`.
    #[serde(default)]
    pub bot_fraction: f64,
    #[serde(default)]
    pub bot_behavior: BotBehavior,
    /// Probability that a click is delivered `d` epochs after its serve,
    /// indexed by `d`. Empty means every click lands in the serve epoch.
    #[serde(default)]
    pub click_delay: Vec<f64>,
    /// Serves per human visitor per epoch.
    #[serde(default = "one")]
    pub views_per_visitor: u32,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> u32 {
    1
}

impl EnvironmentSpec {
    pub fn stationary(arms: &[(&str, f64)], visitors_per_epoch: u32, seed: u64) -> Result<Self> {
        let arms = arms.iter().map(|&(a, c)| Ok((ArmId::new(a)?, c))).collect::<Result<_>>()?;
        Ok(Self {
            arms,
            seasonality: Vec::new(),
            drift: BTreeMap::new(),
            visitors_per_epoch,
            bot_fraction: 0.0,
            bot_behavior: BotBehavior::Silent,
            click_delay: Vec::new(),
            views_per_visitor: 1,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidParameter(m));
        if self.arms.is_empty() {
            return Err(Error::EmptyArmSet);
        }
        for (arm, &c) in &self.arms {
            if !(c > 0.0 && c < 1.0) {
                return bad(format!("base ctr of {arm} must be in (0, 1), got {c}"));
            }
        }
        for (arm, steps) in &self.drift {
            if !self.arms.contains_key(arm) {
                return Err(Error::UnknownArm(arm.clone()));
            }
            for (i, s) in steps.iter().enumerate() {
                if !(0.0..=1.0).contains(&s.base_ctr) {
                    return bad(format!("drift ctr of {arm} must be in [0, 1], got {}", s.base_ctr));
                }
                if i > 0 && steps[i - 1].from_epoch >= s.from_epoch {
                    return bad(format!("drift steps of {arm} must have increasing epochs"));
                }
            }
        }
        if self.seasonality.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return bad("seasonality multipliers must be finite and >= 0".to_string());
        }
        if self.visitors_per_epoch == 0 {
            return bad("visitors_per_epoch must be >= 1".to_string());
        }
        if self.views_per_visitor == 0 {
            return bad("views_per_visitor must be >= 1".to_string());
        }
        if !(0.0..1.0).contains(&self.bot_fraction) {
            return bad(format!("bot_fraction must be in [0, 1), got {}", self.bot_fraction));
        }
        if !self.click_delay.is_empty() {
            let total: f64 = self.click_delay.iter().sum();
            if self.click_delay.iter().any(|p| p.is_nan() || *p < 0.0) || (total - 1.0).abs() > 1e-9 {
                return bad("click_delay must be probabilities summing to 1".to_string());
            }
        }
        Ok(())
    }

    pub fn base_ctr(&self, arm: &ArmId, epoch: u64) -> f64 {
        let base = self.arms.get(arm).copied().unwrap_or(0.0);
        self.drift
            .get(arm)
            .and_then(|steps| steps.iter().rev().find(|s| s.from_epoch <= epoch))
            .map_or(base, |s| s.base_ctr)
    }

    pub fn multiplier(&self, epoch: u64) -> f64 {
        if self.seasonality.is_empty() {
            1.0
        } else {
            self.seasonality[(epoch % self.seasonality.len() as u64) as usize]
        }
    }

    /// `clamp(base * multiplier, 0, 1)`.
    pub fn effective_ctr(&self, arm: &ArmId, epoch: u64) -> f64 {
        (self.base_ctr(arm, epoch) * self.multiplier(epoch)).clamp(0.0, 1.0)
    }

    /// Bots per epoch so that they make up `bot_fraction` of all visitors.
    pub fn bots_per_epoch(&self) -> u32 {
        let f = self.bot_fraction;
        libm::round(f64::from(self.visitors_per_epoch) * f / (1.0 - f)) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdminAction {
    Blacklist,
    Unblacklist,
    AddArm,
}

/// Admin change applied at the start of `epoch`; it reaches the allocation
/// at that epoch's batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdminEvent {
    pub epoch: u64,
    pub action: AdminAction,
    pub arm: ArmId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    #[serde(default)]
    pub floor_schedule: FloorSchedule,
    #[serde(default = "default_n_draws")]
    pub n_draws: u32,
    #[serde(default)]
    pub admin_events: Vec<AdminEvent>,
    #[serde(default)]
    pub join: JoinConfig,
    /// Drop bot records before aggregation.
    #[serde(default = "yes")]
    pub filter_bots: bool,
}

fn default_n_draws() -> u32 {
    DEFAULT_N_DRAWS
}

fn yes() -> bool {
    true
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            floor_schedule: FloorSchedule::default(),
            n_draws: DEFAULT_N_DRAWS,
            admin_events: Vec::new(),
            join: JoinConfig::default(),
            filter_bots: true,
        }
    }
}

impl SimulationConfig {
    pub fn with_floor(floor: f64) -> Self {
        Self { floor_schedule: FloorSchedule::constant(floor), ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    /// Allocation that served traffic during this epoch.
    pub allocation: BTreeMap<ArmId, f64>,
    /// Counts fed to this epoch's batch.
    pub stats: BTreeMap<ArmId, SufficientStats>,
    pub cumulative_stats: BTreeMap<ArmId, SufficientStats>,
    pub effective_ctr: BTreeMap<ArmId, f64>,
    pub regret: f64,
    pub cumulative_regret: f64,
    pub bot_records_dropped: u64,
    /// Clicks delivered after their serve's batch had committed.
    pub late_clicks: u64,
    /// Whether the batch at the end of the epoch changed anything.
    pub batch_committed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignTrace {
    pub visitors_per_epoch: u32,
    pub records: Vec<EpochRecord>,
    /// Allocation published by the last batch.
    pub final_allocation: Allocation,
}

impl CampaignTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Cumulative regret after the first `epochs` epochs.
    pub fn regret_until(&self, epochs: usize) -> f64 {
        regret_of(&self.records[..epochs.min(self.records.len())], self.visitors_per_epoch)
    }

    /// Serving weight of `arm` at each epoch.
    pub fn weight_series(&self, arm: &str) -> Vec<f64> {
        self.records.iter().map(|r| r.allocation.get(arm).copied().unwrap_or(0.0)).collect()
    }
}

fn epoch_regret(record: &EpochRecord, visitors: u32) -> f64 {
    let best = record.effective_ctr.values().copied().fold(0.0, f64::max);
    let achieved: f64 =
        record.allocation.iter().map(|(arm, w)| w * record.effective_ctr.get(arm).copied().unwrap_or(0.0)).sum();
    f64::from(visitors) * (best - achieved)
}

fn regret_of(records: &[EpochRecord], visitors: u32) -> f64 {
    records.iter().map(|r| epoch_regret(r, visitors)).sum()
}

/// Expected cumulative regret of the trace: the sum over epochs of
/// `visitors * (best ctr - allocation-weighted ctr)`.
pub fn regret(trace: &CampaignTrace) -> f64 {
    regret_of(&trace.records, trace.visitors_per_epoch)
}

struct PendingClick {
    deliver_epoch: u64,
    serve_epoch: u64,
    event: InteractionEvent,
}

fn sample_delay<R: Rng + ?Sized>(delay: &[f64], rng: &mut R) -> u64 {
    if delay.len() <= 1 {
        return 0;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (d, p) in delay.iter().enumerate() {
        acc += p;
        if u < acc {
            return d as u64;
        }
    }
    (delay.len() - 1) as u64
}

/// Runs a campaign for `n_epochs` epochs. Deterministic in `env.seed`.
pub fn simulate_campaign(env: &EnvironmentSpec, config: &SimulationConfig, n_epochs: u64) -> Result<CampaignTrace> {
    env.validate()?;
    if n_epochs == 0 {
        return Err(Error::InvalidParameter("n_epochs must be >= 1".to_string()));
    }
    let added_later: BTreeSet<&ArmId> =
        config.admin_events.iter().filter(|e| e.action == AdminAction::AddArm).map(|e| &e.arm).collect();
    for e in &config.admin_events {
        if !env.arms.contains_key(&e.arm) {
            return Err(Error::UnknownArm(e.arm.clone()));
        }
    }
    let initial: Vec<ArmId> = env.arms.keys().filter(|a| !added_later.contains(a)).cloned().collect();
    let mut campaign_cfg = CampaignConfig::new("simulation", initial);
    campaign_cfg.floor_schedule = config.floor_schedule.clone();
    campaign_cfg.n_draws = config.n_draws;
    campaign_cfg.seed = derive_seed(env.seed, CAMPAIGN_STREAM, 0);
    let mut state = CampaignState::new(campaign_cfg)?;

    let visitors = env.visitors_per_epoch;
    let bots = env.bots_per_epoch();
    let mut pending: Vec<PendingClick> = Vec::new();
    let mut records = Vec::with_capacity(n_epochs as usize);
    let mut cumulative = 0.0;

    for epoch in 0..n_epochs {
        for ev in config.admin_events.iter().filter(|e| e.epoch == epoch) {
            match ev.action {
                AdminAction::AddArm => state.add_arm(ev.arm.clone())?,
                AdminAction::Blacklist => state.blacklist_arm(&ev.arm)?,
                AdminAction::Unblacklist => state.unblacklist_arm(&ev.arm)?,
            }
        }
        let serving = state.allocation.clone();
        let cum = CumulativeAllocation::build(&serving);
        let ctr: BTreeMap<ArmId, f64> = state.arms.keys().map(|a| (a.clone(), env.effective_ctr(a, epoch))).collect();
        let day_start = epoch as i64 * DAY_MS;
        let click_gap = config.join.click_window_ms.clamp(1, 10 * 60 * 1000);

        let mut served = Vec::with_capacity((visitors * env.views_per_visitor + bots) as usize);
        let mut delivered: Vec<InteractionEvent> = Vec::new();

        let mut rng = seeded(derive_seed(env.seed, HUMAN_STREAM, epoch));
        for v in 0..visitors {
            let visitor = format!("v{epoch}-{v}");
            for view in 0..env.views_per_visitor {
                let arm = cum.sample(&mut rng)?.clone();
                let ts = day_start + rng.random_range(0..DAY_MS - 3_600_000);
                let request_id = format!("q{epoch}-{v}-{view}");
                if rng.random_bool(ctr[&arm]) {
                    let event = InteractionEvent {
                        visitor_id: visitor.clone(),
                        kind: InteractionKind::Click,
                        timestamp: ts + rng.random_range(0..=click_gap),
                        request_id: Some(request_id.clone()),
                    };
                    let delay = sample_delay(&env.click_delay, &mut rng);
                    if delay == 0 {
                        delivered.push(event);
                    } else {
                        pending.push(PendingClick { deliver_epoch: epoch + delay, serve_epoch: epoch, event });
                    }
                }
                served.push(ServedEvent { visitor_id: visitor.clone(), arm, timestamp: ts, request_id });
            }
        }

        let mut bot_rng = seeded(derive_seed(env.seed, BOT_STREAM, epoch));
        for b in 0..bots {
            let visitor = format!("{BOT_PREFIX}{epoch}-{b}");
            let arm = cum.sample(&mut bot_rng)?.clone();
            let ts = day_start + bot_rng.random_range(0..DAY_MS - 3_600_000);
            let request_id = format!("b{epoch}-{b}");
            if env.bot_behavior == BotBehavior::ClickSpam {
                delivered.push(InteractionEvent {
                    visitor_id: visitor.clone(),
                    kind: InteractionKind::Click,
                    timestamp: ts + 1,
                    request_id: Some(request_id.clone()),
                });
            }
            served.push(ServedEvent { visitor_id: visitor, arm, timestamp: ts, request_id });
        }

        // A late click's serve was consumed by an earlier batch; it joins
        // nothing in this slice and counts are never revised.
        let (due, later): (Vec<_>, Vec<_>) = pending.into_iter().partition(|p| p.deliver_epoch == epoch);
        pending = later;
        let late_clicks = due.iter().filter(|p| p.serve_epoch < epoch).count() as u64;
        delivered.extend(due.into_iter().map(|p| p.event));

        let joined = join_ruds(&served, &delivered, &config.join);
        let (records_kept, dropped) = if config.filter_bots {
            filter_bots(joined.records, |v| v.starts_with(BOT_PREFIX))
        } else {
            (joined.records, 0)
        };
        let delta = aggregate_all(&records_kept);

        let mut record = EpochRecord {
            epoch,
            allocation: serving.weights.clone(),
            stats: delta.clone(),
            cumulative_stats: BTreeMap::new(),
            effective_ctr: ctr,
            regret: 0.0,
            cumulative_regret: 0.0,
            bot_records_dropped: dropped as u64,
            late_clicks,
            batch_committed: false,
        };
        record.regret = epoch_regret(&record, visitors);
        cumulative += record.regret;
        record.cumulative_regret = cumulative;

        let outcome = state.run_batch(&delta)?;
        record.batch_committed = !outcome.unchanged();
        state = outcome.state;
        record.cumulative_stats = state.stats();
        records.push(record);
    }

    Ok(CampaignTrace { visitors_per_epoch: visitors, records, final_allocation: state.allocation })
}
