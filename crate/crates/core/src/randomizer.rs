//! Per-request arm selection against the published allocation.
//!
//! Buckets follow lexicographic arm order and are half-open: arm `i` owns
//! `[cum[i-1], cum[i])`. Zero-weight arms get empty buckets and can never be
//! picked.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::{Allocation, ArmId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeAllocation {
    pub epoch: u64,
    pub boundaries: Vec<(ArmId, f64)>,
}

impl CumulativeAllocation {
    /// Prefix sums of `alloc` in lexicographic arm order.
    pub fn build(alloc: &Allocation) -> Self {
        let mut acc = 0.0;
        let boundaries = alloc
            .weights
            .iter()
            .map(|(arm, &w)| {
                acc += w;
                (arm.clone(), acc)
            })
            .collect();
        Self { epoch: alloc.epoch, boundaries }
    }

    /// Arm whose bucket contains `u`.
    pub fn pick(&self, u: f64) -> Result<&ArmId> {
        if !(0.0..1.0).contains(&u) {
            return Err(Error::InvalidParameter(alloc::format!("u = {u} outside [0, 1)")));
        }
        let idx = self.boundaries.partition_point(|&(_, c)| c <= u);
        match self.boundaries.get(idx) {
            Some((arm, _)) => Ok(arm),
            // Rounding left the last boundary a hair under one.
            None => self.last_live().ok_or(Error::EmptyArmSet),
        }
    }

    /// Draws `u` from `rng` and picks.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&ArmId> {
        self.pick(rng.random::<f64>())
    }

    fn last_live(&self) -> Option<&ArmId> {
        let mut prev = 0.0;
        let mut live = None;
        for (arm, c) in &self.boundaries {
            if *c > prev {
                live = Some(arm);
            }
            prev = *c;
        }
        live
    }
}

pub fn build_cumulative(alloc: &Allocation) -> CumulativeAllocation {
    CumulativeAllocation::build(alloc)
}

pub fn pick_arm(cum: &CumulativeAllocation, u: f64) -> Result<&ArmId> {
    cum.pick(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cum(pairs: &[(&str, f64)]) -> CumulativeAllocation {
        build_cumulative(&Allocation::new(0, pairs.iter().map(|&(a, w)| (ArmId::new(a).unwrap(), w)).collect()))
    }

    fn bounds(c: &CumulativeAllocation) -> Vec<(&str, f64)> {
        c.boundaries.iter().map(|(a, w)| (a.as_str(), *w)).collect()
    }

    #[test]
    fn prefix_sums_in_arm_order() {
        let c = cum(&[("c", 0.3), ("a", 0.2), ("b", 0.5)]);
        let b = bounds(&c);
        assert_eq!(b.iter().map(|x| x.0).collect::<Vec<_>>(), ["a", "b", "c"]);
        for ((_, got), want) in b.iter().zip([0.2, 0.7, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(bounds(&cum(&[("a", 1.0)])), [("a", 1.0)]);
        assert_eq!(bounds(&cum(&[("a", 0.5), ("b", 0.0), ("c", 0.5)])), [("a", 0.5), ("b", 0.5), ("c", 1.0)]);
    }

    #[test]
    fn picks_half_open_buckets() {
        let c = CumulativeAllocation {
            epoch: 0,
            boundaries: [("a", 0.2), ("b", 0.7), ("c", 1.0)].map(|(a, w)| (ArmId::new(a).unwrap(), w)).to_vec(),
        };
        assert_eq!(pick_arm(&c, 0.65).unwrap().as_str(), "b");
        assert_eq!(pick_arm(&c, 0.0).unwrap().as_str(), "a");
        assert_eq!(pick_arm(&c, 0.7).unwrap().as_str(), "c");
        assert_eq!(pick_arm(&c, 0.2).unwrap().as_str(), "b");
    }

    #[test]
    fn rejects_u_outside_unit_interval() {
        let c = cum(&[("a", 1.0)]);
        assert!(pick_arm(&c, 1.0).is_err());
        assert!(pick_arm(&c, -0.1).is_err());
        assert!(pick_arm(&c, f64::NAN).is_err());
    }

    #[test]
    fn zero_weight_arm_unreachable() {
        let c = cum(&[("a", 0.5), ("b", 0.0), ("c", 0.5)]);
        for u in [0.0, 0.4999999, 0.5, 0.5000001, 0.999999] {
            assert_ne!(pick_arm(&c, u).unwrap().as_str(), "b");
        }
    }

    #[test]
    fn short_total_falls_back_to_last_live_arm() {
        let c = cum(&[("a", 0.3), ("b", 0.6999999999), ("c", 0.0)]);
        assert_eq!(pick_arm(&c, 0.99999999999).unwrap().as_str(), "b");
    }

    proptest! {
        #[test]
        fn never_picks_zero_weight(raw in proptest::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], 1..10), u in 0.0f64..1.0) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 0.0);
            let pairs: Vec<(alloc::string::String, f64)> = raw
                .iter()
                .enumerate()
                .map(|(i, w)| (alloc::format!("arm-{i}"), w / total))
                .collect();
            let c = build_cumulative(&Allocation::new(
                0,
                pairs.iter().map(|(a, w)| (ArmId::new(a.clone()).unwrap(), *w)).collect(),
            ));
            let picked = pick_arm(&c, u).unwrap();
            let w = pairs.iter().find(|(a, _)| a == picked.as_str()).unwrap().1;
            prop_assert!(w > 0.0);
            prop_assert_eq!(pick_arm(&c, u).unwrap(), picked);
        }
    }
}
