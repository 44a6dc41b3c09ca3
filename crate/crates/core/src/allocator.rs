//! Posterior beliefs to traffic proportions.
//!
//! [`raw_allocation`] estimates, for every arm, the probability that its click
//! rate is the largest by drawing one sample per arm per round and counting
//! argmax wins. [`apply_blacklist`] and [`apply_floor`] then shape the raw
//! vector into the allocation that serves traffic.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::BetaPosterior;

/// Monte-Carlo rounds per batch.
pub const DEFAULT_N_DRAWS: u32 = 10_000;

/// Minimum share of traffic for every live arm when no schedule entry applies.
pub const DEFAULT_FLOOR: f64 = 0.05;

/// Slack for floating point sums.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

/// Stable arm identifier. Ordering is lexicographic and fixes every
/// tie-break and bucket order in the crate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ArmId(String);

impl ArmId {
    pub const MAX_LEN: usize = 64;

    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        let valid = !id.is_empty()
            && id.len() <= Self::MAX_LEN
            && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'));
        if valid {
            Ok(Self(id))
        } else {
            Err(Error::InvalidArmId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ArmId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Self::new(value)
    }
}

impl TryFrom<&str> for ArmId {
    type Error = Error;

    fn try_from(value: &str) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ArmId> for String {
    fn from(id: ArmId) -> Self {
        id.0
    }
}

impl fmt::Display for ArmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl core::borrow::Borrow<str> for ArmId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

/// Traffic proportions over arms for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub epoch: u64,
    pub weights: BTreeMap<ArmId, f64>,
}

impl Allocation {
    pub fn new(epoch: u64, weights: BTreeMap<ArmId, f64>) -> Self {
        Self { epoch, weights }
    }

    /// Equal split over the arms not in `blacklist`; blacklisted arms get 0.
    pub fn uniform<'a>(
        epoch: u64,
        arms: impl IntoIterator<Item = &'a ArmId>,
        blacklist: &BTreeSet<ArmId>,
    ) -> Result<Self> {
        let arms: Vec<&ArmId> = arms.into_iter().collect();
        if arms.is_empty() {
            return Err(Error::EmptyArmSet);
        }
        let live = arms.iter().filter(|a| !blacklist.contains(**a)).count();
        if live == 0 {
            return Err(Error::AllArmsBlacklisted);
        }
        let share = 1.0 / live as f64;
        let weights = arms
            .into_iter()
            .map(|a| {
                let w = if blacklist.contains(a) { 0.0 } else { share };
                (a.clone(), w)
            })
            .collect();
        Ok(Self { epoch, weights })
    }

    pub fn weight(&self, arm: &str) -> f64 {
        self.weights.get(arm).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.weights.values().sum()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Arm with the largest weight (lowest id on ties).
    pub fn leader(&self) -> Option<&ArmId> {
        let mut best: Option<(&ArmId, f64)> = None;
        for (arm, &w) in &self.weights {
            if best.is_none_or(|(_, b)| w > b) {
                best = Some((arm, w));
            }
        }
        best.map(|(a, _)| a)
    }

    /// Checks the emitted-allocation invariants: weights in `[0, 1]` summing
    /// to one, blacklisted arms at exactly zero and, when feasible, every
    /// live arm at or above `floor`.
    pub fn check_invariants(&self, floor: f64, blacklist: &BTreeSet<ArmId>) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if (self.total() - 1.0).abs() > WEIGHT_TOLERANCE {
            return bad(alloc::format!("weights sum to {}", self.total()));
        }
        let live = self.weights.keys().filter(|a| !blacklist.contains(*a)).count();
        let floor_feasible = live as f64 * floor <= 1.0 + WEIGHT_TOLERANCE;
        for (arm, &w) in &self.weights {
            if !(0.0..=1.0).contains(&w) {
                return bad(alloc::format!("weight of {arm} is {w}"));
            }
            if blacklist.contains(arm) {
                if w != 0.0 {
                    return bad(alloc::format!("blacklisted {arm} has weight {w}"));
                }
            } else if floor_feasible && w < floor - WEIGHT_TOLERANCE {
                return bad(alloc::format!("{arm} weight {w} below floor {floor}"));
            }
        }
        Ok(())
    }
}

/// One step of a floor schedule: `floor` applies from `from_epoch` onwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorEntry {
    pub from_epoch: u64,
    pub floor: f64,
}

/// Epoch-indexed traffic floor. Epochs before the first entry use
/// `default_floor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorSchedule {
    pub default_floor: f64,
    #[serde(default)]
    pub entries: Vec<FloorEntry>,
}

impl Default for FloorSchedule {
    fn default() -> Self {
        Self::constant(DEFAULT_FLOOR)
    }
}

impl FloorSchedule {
    pub fn constant(floor: f64) -> Self {
        Self { default_floor: floor, entries: Vec::new() }
    }

    pub fn with_entries(default_floor: f64, entries: Vec<FloorEntry>) -> Result<Self> {
        let schedule = Self { default_floor, entries };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn floor_at(&self, epoch: u64) -> f64 {
        self.entries.iter().rev().find(|e| e.from_epoch <= epoch).map_or(self.default_floor, |e| e.floor)
    }

    /// Largest floor the schedule can ever apply.
    pub fn max_floor(&self) -> f64 {
        self.entries.iter().map(|e| e.floor).fold(self.default_floor, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |f: f64| (0.0..1.0).contains(&f);
        if !in_range(self.default_floor) {
            return Err(Error::InvalidSchedule(alloc::format!("default floor {} outside [0, 1)", self.default_floor)));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if !in_range(e.floor) {
                return Err(Error::InvalidSchedule(alloc::format!(
                    "floor {} at epoch {} outside [0, 1)",
                    e.floor,
                    e.from_epoch
                )));
            }
            if i > 0 && self.entries[i - 1].from_epoch >= e.from_epoch {
                return Err(Error::InvalidSchedule("from_epoch values must be strictly increasing".to_string()));
            }
        }
        Ok(())
    }

    /// Validates the schedule and checks `active_arms * floor <= 1` for every
    /// floor it contains.
    pub fn check_feasible(&self, active_arms: usize) -> Result<()> {
        self.validate()?;
        check_floor_feasible(self.max_floor(), active_arms)
    }
}

pub(crate) fn check_floor_feasible(floor: f64, active_arms: usize) -> Result<()> {
    if !(floor.is_finite() && floor >= 0.0) {
        return Err(Error::InvalidParameter(alloc::format!("floor {floor} must be >= 0")));
    }
    if active_arms as f64 * floor > 1.0 + WEIGHT_TOLERANCE {
        return Err(Error::InfeasibleFloor { floor, active_arms });
    }
    Ok(())
}

/// Share of `n_draws` rounds in which each arm's posterior draw is the
/// largest. Ties go to the lexicographically smallest arm.
pub fn raw_allocation<R: Rng + ?Sized>(
    posteriors: &BTreeMap<ArmId, BetaPosterior>,
    n_draws: u32,
    rng: &mut R,
) -> Result<Allocation> {
    if posteriors.is_empty() {
        return Err(Error::EmptyArmSet);
    }
    if n_draws == 0 {
        return Err(Error::InvalidParameter("n_draws must be >= 1".to_string()));
    }
    let samplers = posteriors.values().map(BetaPosterior::sampler).collect::<Result<Vec<_>>>()?;
    let mut wins = alloc::vec![0u32; samplers.len()];
    for _ in 0..n_draws {
        let mut best = 0;
        let mut best_draw = f64::NEG_INFINITY;
        for (i, s) in samplers.iter().enumerate() {
            let draw = s.sample(rng);
            if draw > best_draw {
                best = i;
                best_draw = draw;
            }
        }
        wins[best] += 1;
    }
    let n = f64::from(n_draws);
    let weights = posteriors.keys().zip(wins).map(|(arm, w)| (arm.clone(), f64::from(w) / n)).collect();
    Ok(Allocation::new(0, weights))
}

/// Zeroes blacklisted arms and renormalizes the rest to sum to one.
///
/// When the surviving arms carry no mass at all they share the traffic
/// equally. Blacklist entries that are not in the allocation are ignored.
pub fn apply_blacklist(alloc: &Allocation, blacklist: &BTreeSet<ArmId>) -> Result<Allocation> {
    if alloc.is_empty() {
        return Err(Error::EmptyArmSet);
    }
    if blacklist.is_empty() {
        return Ok(alloc.clone());
    }
    let live = alloc.weights.keys().filter(|a| !blacklist.contains(*a)).count();
    if live == 0 {
        return Err(Error::AllArmsBlacklisted);
    }
    let live_mass: f64 = alloc.weights.iter().filter(|(a, _)| !blacklist.contains(*a)).map(|(_, w)| w).sum();
    let weights = alloc
        .weights
        .iter()
        .map(|(arm, &w)| {
            let w = if blacklist.contains(arm) {
                0.0
            } else if live_mass > 0.0 {
                w / live_mass
            } else {
                1.0 / live as f64
            };
            (arm.clone(), w)
        })
        .collect();
    Ok(Allocation::new(alloc.epoch, weights))
}

/// Raises every live arm below `floor` to exactly `floor`, funding the
/// deficit from the arms above it in proportion to their current weights.
///
/// A donor that would drop below the floor is pinned at the floor too and the
/// redistribution restarts, until no donor crosses it. Blacklisted arms are
/// left untouched.
pub fn apply_floor(alloc: &Allocation, floor: f64, blacklist: &BTreeSet<ArmId>) -> Result<Allocation> {
    let active: Vec<(&ArmId, f64)> =
        alloc.weights.iter().filter(|(a, _)| !blacklist.contains(*a)).map(|(a, &w)| (a, w)).collect();
    if active.is_empty() {
        return Err(if alloc.is_empty() { Error::EmptyArmSet } else { Error::AllArmsBlacklisted });
    }
    check_floor_feasible(floor, active.len())?;

    let mut pinned: Vec<bool> = active.iter().map(|&(_, w)| w < floor).collect();
    if !pinned.iter().any(|&p| p) {
        return Ok(alloc.clone());
    }
    let mut result: Vec<f64>;
    loop {
        let deficit: f64 = active.iter().zip(&pinned).filter(|(_, &p)| p).map(|(&(_, w), _)| floor - w).sum();
        let donor_mass: f64 = active.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(&(_, w), _)| w).sum();
        result = active
            .iter()
            .zip(&pinned)
            .map(|(&(_, w), &p)| {
                if p {
                    floor
                } else if donor_mass > 0.0 {
                    w - deficit * w / donor_mass
                } else {
                    w
                }
            })
            .collect();
        let mut changed = false;
        for (i, &w) in result.iter().enumerate() {
            if !pinned[i] && w < floor {
                pinned[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut weights = alloc.weights.clone();
    for (&(arm, _), w) in active.iter().zip(result) {
        weights.insert(arm.clone(), w);
    }
    Ok(Allocation::new(alloc.epoch, weights))
}
