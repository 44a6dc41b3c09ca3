//! Thompson-sampling traffic allocation for competing recommender variants.
//!
//! The crate is `no_std` (with `alloc`) so the allocation kernel can be
//! embedded anywhere; file formats, persistence and the HTTP service live in
//! the `armada` companion crate.
//!
//! Pipeline, one mini-batch per epoch:
//!
//! 1. [`attribution`] joins served recommendations with click/purchase events
//!    inside a look-ahead window, drops bot traffic and counts one Bernoulli
//!    trial per visitor and arm.
//! 2. [`posterior`] turns accumulated counts into `Beta(S + 1, F + 1)` beliefs.
//! 3. [`allocator`] estimates each arm's probability of being best by
//!    Monte-Carlo argmax, then applies the blacklist and the traffic floor.
//! 4. [`randomizer`] maps a uniform draw per request onto the published
//!    cumulative allocation.
//!
//! [`metrics`] provides offline ranking evaluation and [`simulator`] drives
//! whole campaigns against synthetic non-stationary Bernoulli arms.
#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod allocator;
pub mod attribution;
pub mod campaign;
pub mod error;
pub mod metrics;
pub mod posterior;
pub mod randomizer;
pub mod rng;
pub mod simulator;

pub use allocator::{
    apply_blacklist, apply_floor, raw_allocation, Allocation, ArmId, FloorEntry, FloorSchedule, DEFAULT_FLOOR,
    DEFAULT_N_DRAWS,
};
pub use campaign::{AuditRecord, BatchOutcome, CampaignConfig, CampaignState};
pub use error::{Error, Result};
pub use posterior::{BetaPosterior, SufficientStats};
pub use randomizer::CumulativeAllocation;
