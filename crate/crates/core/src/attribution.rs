//! Reward attribution: served recommendations joined with interaction events.
//!
//! The join runs over a frozen slice of events, so arrival order inside the
//! slice never changes the result. Each serve yields one [`RudsRecord`]; an
//! interaction counts for a serve when it comes from the same visitor, falls
//! inside the look-ahead window and, if it carries a request id, names that
//! serve's request.
//!
//! Counting is visitor based: one Bernoulli trial per (visitor, arm, day).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::allocator::ArmId;
use crate::posterior::SufficientStats;

/// Milliseconds since the Unix epoch.
pub type Timestamp = i64;

pub const DAY_MS: i64 = 86_400_000;
pub const DEFAULT_CLICK_WINDOW_MS: i64 = 30 * 60 * 1000;
pub const DEFAULT_PURCHASE_WINDOW_MS: i64 = 7 * DAY_MS;

/// UTC calendar day (days since 1970-01-01) of a timestamp.
pub fn day_of(ts: Timestamp) -> i64 {
    ts.div_euclid(DAY_MS)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServedEvent {
    pub visitor_id: String,
    pub arm: ArmId,
    pub timestamp: Timestamp,
    pub request_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionKind {
    View,
    Click,
    Purchase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub visitor_id: String,
    pub kind: InteractionKind,
    pub timestamp: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RudsRecord {
    pub visitor_id: String,
    pub arm: ArmId,
    pub request_id: String,
    pub served_at: Timestamp,
    pub clicked: bool,
    pub purchased: bool,
    /// UTC day of `served_at`.
    pub epoch: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinConfig {
    pub click_window_ms: i64,
    pub purchase_window_ms: i64,
}

impl Default for JoinConfig {
    fn default() -> Self {
        Self { click_window_ms: DEFAULT_CLICK_WINDOW_MS, purchase_window_ms: DEFAULT_PURCHASE_WINDOW_MS }
    }
}

impl JoinConfig {
    /// Same window for clicks and purchases.
    pub fn uniform(window_ms: i64) -> Self {
        Self { click_window_ms: window_ms, purchase_window_ms: window_ms }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    EmptyVisitorId,
    EmptyRequestId,
    DuplicateRequestId,
    NegativeWindow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub reason: RejectReason,
    /// Request id (serves) or visitor id (interactions) of the offending event.
    pub key: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JoinOutput {
    /// Sorted by `(served_at, request_id)`.
    pub records: Vec<RudsRecord>,
    pub rejected: Vec<Rejection>,
}

/// Joins serves with interactions inside the look-ahead windows.
///
/// Malformed events are skipped and reported in [`JoinOutput::rejected`];
/// the join itself never fails. When a request id repeats, the serve that
/// sorts first by `(timestamp, visitor_id, arm)` is kept.
pub fn join_ruds(served: &[ServedEvent], interactions: &[InteractionEvent], config: &JoinConfig) -> JoinOutput {
    let mut rejected = Vec::new();
    if config.click_window_ms < 0 || config.purchase_window_ms < 0 {
        rejected.push(Rejection { reason: RejectReason::NegativeWindow, key: String::new() });
        return JoinOutput { records: Vec::new(), rejected };
    }

    let mut by_visitor: BTreeMap<&str, Vec<&InteractionEvent>> = BTreeMap::new();
    for ev in interactions {
        if ev.visitor_id.is_empty() {
            rejected.push(Rejection { reason: RejectReason::EmptyVisitorId, key: String::new() });
            continue;
        }
        by_visitor.entry(ev.visitor_id.as_str()).or_default().push(ev);
    }
    for evs in by_visitor.values_mut() {
        evs.sort_by(|a, b| (a.timestamp, a.kind, &a.request_id).cmp(&(b.timestamp, b.kind, &b.request_id)));
    }

    let mut serves: Vec<&ServedEvent> = Vec::with_capacity(served.len());
    for s in served {
        if s.visitor_id.is_empty() {
            rejected.push(Rejection { reason: RejectReason::EmptyVisitorId, key: s.request_id.clone() });
        } else if s.request_id.is_empty() {
            rejected.push(Rejection { reason: RejectReason::EmptyRequestId, key: s.visitor_id.clone() });
        } else {
            serves.push(s);
        }
    }
    serves.sort_by(|a, b| {
        (&a.request_id, a.timestamp, &a.visitor_id, &a.arm).cmp(&(&b.request_id, b.timestamp, &b.visitor_id, &b.arm))
    });

    let mut records = Vec::with_capacity(serves.len());
    let mut prev: Option<&str> = None;
    for s in serves {
        if prev == Some(s.request_id.as_str()) {
            rejected.push(Rejection { reason: RejectReason::DuplicateRequestId, key: s.request_id.clone() });
            continue;
        }
        prev = Some(s.request_id.as_str());
        let evs = by_visitor.get(s.visitor_id.as_str()).map_or(&[][..], Vec::as_slice);
        let hit = |kind: InteractionKind, window: i64| {
            let end = s.timestamp.saturating_add(window);
            let start = evs.partition_point(|e| e.timestamp < s.timestamp);
            evs[start..]
                .iter()
                .take_while(|e| e.timestamp <= end)
                .any(|e| e.kind == kind && e.request_id.as_deref().is_none_or(|r| r == s.request_id))
        };
        records.push(RudsRecord {
            visitor_id: s.visitor_id.clone(),
            arm: s.arm.clone(),
            request_id: s.request_id.clone(),
            served_at: s.timestamp,
            clicked: hit(InteractionKind::Click, config.click_window_ms),
            purchased: hit(InteractionKind::Purchase, config.purchase_window_ms),
            epoch: day_of(s.timestamp),
        });
    }
    records.sort_by(|a, b| (a.served_at, &a.request_id).cmp(&(b.served_at, &b.request_id)));
    rejected.sort_by(|a, b| (a.reason, &a.key).cmp(&(b.reason, &b.key)));
    JoinOutput { records, rejected }
}

/// Drops records whose visitor is flagged; returns survivors and drop count.
pub fn filter_bots<F>(records: Vec<RudsRecord>, is_bot: F) -> (Vec<RudsRecord>, usize)
where
    F: Fn(&str) -> bool,
{
    let before = records.len();
    let kept: Vec<RudsRecord> = records.into_iter().filter(|r| !is_bot(&r.visitor_id)).collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

/// Visitor-level trial counts for one arm in one epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmCounts {
    /// Clicks drive allocation.
    pub stats: SufficientStats,
    /// Distinct visitors who purchased after a serve of this arm.
    pub purchasers: u64,
}

/// Per-arm visitor counts for records served on UTC day `epoch`.
///
/// Records from other days are ignored.
pub fn aggregate_counts(records: &[RudsRecord], epoch: i64) -> BTreeMap<ArmId, ArmCounts> {
    let mut visitors: BTreeMap<(&ArmId, &str), (bool, bool)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.epoch == epoch) {
        let v = visitors.entry((&r.arm, r.visitor_id.as_str())).or_default();
        v.0 |= r.clicked;
        v.1 |= r.purchased;
    }
    let mut out: BTreeMap<ArmId, ArmCounts> = BTreeMap::new();
    for ((arm, _), (clicked, purchased)) in visitors {
        let c = out.entry(arm.clone()).or_default();
        c.stats.record(clicked);
        c.purchasers += u64::from(purchased);
    }
    out
}

/// One trial per distinct (visitor, arm) in `epoch`; success if any of the
/// visitor's serves of that arm led to a click.
pub fn aggregate_stats(records: &[RudsRecord], epoch: i64) -> BTreeMap<ArmId, SufficientStats> {
    aggregate_counts(records, epoch).into_iter().map(|(a, c)| (a, c.stats)).collect()
}

/// Sum of [`aggregate_stats`] over every epoch present in `records`.
pub fn aggregate_all(records: &[RudsRecord]) -> BTreeMap<ArmId, SufficientStats> {
    let epochs: BTreeSet<i64> = records.iter().map(|r| r.epoch).collect();
    let mut out: BTreeMap<ArmId, SufficientStats> = BTreeMap::new();
    for e in epochs {
        for (arm, s) in aggregate_stats(records, e) {
            *out.entry(arm).or_default() += s;
        }
    }
    out
}
