//! Offline ranking metrics with binary relevance.
//!
//! Conventions:
//! - users with no relevant items score 0 and stay in the mean;
//! - the NDCG ideal ranking is truncated at `min(k, R)`;
//! - MAP@k divides by `min(k, R)`, where `R` counts every relevant item the
//!   user has, ranked or not.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAP_NORMALIZATION: &str = "min(k, relevant)";
pub const ZERO_RELEVANT_CONVENTION: &str = "users without relevant items score 0 and are counted";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionKind {
    Click,
    Purchase,
}

/// Sparse binary relevance. Pairs that are absent are irrelevant; pairs
/// present with relevance 0 only register the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionMatrix {
    pub kind: InteractionKind,
    entries: BTreeMap<String, BTreeSet<String>>,
}

impl InteractionMatrix {
    pub fn new(kind: InteractionKind) -> Self {
        Self { kind, entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, user: impl Into<String>, item: impl Into<String>, relevant: bool) {
        let items = self.entries.entry(user.into()).or_default();
        if relevant {
            items.insert(item.into());
        }
    }

    pub fn is_relevant(&self, user: &str, item: &str) -> bool {
        self.entries.get(user).is_some_and(|s| s.contains(item))
    }

    pub fn relevant_count(&self, user: &str) -> usize {
        self.entries.get(user).map_or(0, BTreeSet::len)
    }

    pub fn has_user(&self, user: &str) -> bool {
        self.entries.contains_key(user)
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedList {
    pub user_id: String,
    /// Position 1 first.
    pub items: Vec<String>,
}

impl RankedList {
    pub fn new(user_id: impl Into<String>, items: Vec<String>) -> Self {
        Self { user_id: user_id.into(), items }
    }
}

fn validate(lists: &[RankedList]) -> Result<()> {
    if lists.is_empty() {
        return Err(Error::InvalidParameter("no ranked lists".to_string()));
    }
    for l in lists {
        if l.items.is_empty() {
            return Err(Error::InvalidParameter(alloc::format!("empty list for user {}", l.user_id)));
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = l.items.iter().find(|i| !seen.insert(i.as_str())) {
            return Err(Error::InvalidParameter(alloc::format!("duplicate item {dup} in list for user {}", l.user_id)));
        }
    }
    Ok(())
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".to_string()));
    }
    Ok(())
}

fn mean_over<F: Fn(&RankedList) -> f64>(lists: &[RankedList], per_user: F) -> f64 {
    lists.iter().map(per_user).sum::<f64>() / lists.len() as f64
}

fn discount(rank: usize) -> f64 {
    1.0 / libm::log2(rank as f64 + 1.0)
}

pub fn reciprocal_rank(list: &RankedList, truth: &InteractionMatrix) -> f64 {
    list.items.iter().position(|i| truth.is_relevant(&list.user_id, i)).map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

pub fn ndcg(list: &RankedList, truth: &InteractionMatrix, k: usize) -> f64 {
    let relevant = truth.relevant_count(&list.user_id);
    if relevant == 0 {
        return 0.0;
    }
    let dcg: f64 = list
        .items
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| truth.is_relevant(&list.user_id, i))
        .map(|(p, _)| discount(p + 1))
        .sum();
    let idcg: f64 = (1..=k.min(relevant)).map(discount).sum();
    dcg / idcg
}

pub fn average_precision(list: &RankedList, truth: &InteractionMatrix, k: usize) -> f64 {
    let relevant = truth.relevant_count(&list.user_id);
    if relevant == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (p, item) in list.items.iter().take(k).enumerate() {
        if truth.is_relevant(&list.user_id, item) {
            hits += 1;
            sum += hits as f64 / (p + 1) as f64;
        }
    }
    sum / k.min(relevant) as f64
}

/// Mean reciprocal rank of the first relevant item over the full list.
pub fn mrr(lists: &[RankedList], truth: &InteractionMatrix) -> Result<f64> {
    validate(lists)?;
    Ok(mean_over(lists, |l| reciprocal_rank(l, truth)))
}

pub fn ndcg_at_k(lists: &[RankedList], truth: &InteractionMatrix, k: usize) -> Result<f64> {
    check_k(k)?;
    validate(lists)?;
    Ok(mean_over(lists, |l| ndcg(l, truth, k)))
}

pub fn map_at_k(lists: &[RankedList], truth: &InteractionMatrix, k: usize) -> Result<f64> {
    check_k(k)?;
    validate(lists)?;
    Ok(mean_over(lists, |l| average_precision(l, truth, k)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub kind: InteractionKind,
    pub k: usize,
    pub mrr: f64,
    #[serde(rename = "ndcg@k")]
    pub ndcg_at_k: f64,
    #[serde(rename = "map@k")]
    pub map_at_k: f64,
    pub n_users: usize,
    pub map_normalization: String,
    pub zero_relevant_users: String,
}

pub fn evaluate(
    model: impl Into<String>,
    lists: &[RankedList],
    truth: &InteractionMatrix,
    k: usize,
) -> Result<MetricsReport> {
    Ok(MetricsReport {
        model: model.into(),
        kind: truth.kind,
        k,
        mrr: mrr(lists, truth)?,
        ndcg_at_k: ndcg_at_k(lists, truth, k)?,
        map_at_k: map_at_k(lists, truth, k)?,
        n_users: lists.len(),
        map_normalization: MAP_NORMALIZATION.to_string(),
        zero_relevant_users: ZERO_RELEVANT_CONVENTION.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(user: &str, items: &[&str]) -> RankedList {
        RankedList::new(user, items.iter().map(|s| s.to_string()).collect())
    }

    fn truth(pairs: &[(&str, &str)]) -> InteractionMatrix {
        let mut m = InteractionMatrix::new(InteractionKind::Click);
        for (u, i) in pairs {
            m.insert(*u, *i, true);
        }
        m
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn mrr_examples() {
        let t = truth(&[("u1", "c"), ("u2", "x"), ("u3", "y")]);
        assert!(close(mrr(&[list("u1", &["a", "b", "c"])], &t).unwrap(), 1.0 / 3.0));
        let perfect = [list("u1", &["c", "a"]), list("u2", &["x"])];
        assert!(close(mrr(&perfect, &t).unwrap(), 1.0));
        let t2 = truth(&[("u1", "b"), ("u2", "e")]);
        let two = [list("u1", &["a", "b"]), list("u2", &["a", "b", "c", "d", "e"])];
        assert!(close(mrr(&two, &t2).unwrap(), 0.35));
    }

    #[test]
    fn ndcg_examples() {
        let t = truth(&[("u", "a")]);
        assert!(close(ndcg_at_k(&[list("u", &["a", "b"])], &t, 10).unwrap(), 1.0));
        let second = ndcg_at_k(&[list("u", &["b", "a"])], &t, 10).unwrap();
        assert!(close(second, 1.0 / libm::log2(3.0)));
        assert!((second - 0.6309).abs() < 1e-4);
        let t2 = truth(&[("u", "a"), ("u", "c")]);
        let v = ndcg_at_k(&[list("u", &["a", "b", "c"])], &t2, 3).unwrap();
        assert!(close(v, 1.5 / (1.0 + 1.0 / libm::log2(3.0))));
        assert!((v - 0.9197).abs() < 1e-4);
    }

    #[test]
    fn map_examples() {
        let t = truth(&[("u", "a"), ("u", "b")]);
        assert!(close(map_at_k(&[list("u", &["a", "b", "c"])], &t, 10).unwrap(), 1.0));
        let t1 = truth(&[("u", "b")]);
        assert!(close(map_at_k(&[list("u", &["a", "b"])], &t1, 10).unwrap(), 0.5));
        let t2 = truth(&[("u", "a"), ("u", "d")]);
        assert!(close(map_at_k(&[list("u", &["a", "b", "c", "d", "e"])], &t2, 10).unwrap(), 0.75));
    }

    #[test]
    fn zero_relevant_users_count_as_zero() {
        let mut t = truth(&[("u1", "a")]);
        t.insert("u2", "a", false);
        let lists = [list("u1", &["a"]), list("u2", &["a"])];
        assert!(close(mrr(&lists, &t).unwrap(), 0.5));
        assert!(close(ndcg_at_k(&lists, &t, 5).unwrap(), 0.5));
        assert!(close(map_at_k(&lists, &t, 5).unwrap(), 0.5));
        assert!(t.has_user("u2") && t.relevant_count("u2") == 0);
    }

    #[test]
    fn truncation_at_k() {
        let t = truth(&[("u", "c")]);
        let l = [list("u", &["a", "b", "c"])];
        assert_eq!(ndcg_at_k(&l, &t, 2).unwrap(), 0.0);
        assert_eq!(map_at_k(&l, &t, 2).unwrap(), 0.0);
        // MRR looks at the whole list.
        assert!(close(mrr(&l, &t).unwrap(), 1.0 / 3.0));
    }

    #[test]
    fn input_errors() {
        let t = truth(&[]);
        assert!(mrr(&[], &t).is_err());
        assert!(ndcg_at_k(&[list("u", &["a"])], &t, 0).is_err());
        assert!(map_at_k(&[list("u", &[])], &t, 3).is_err());
        assert!(mrr(&[list("u", &["a", "a"])], &t).is_err());
    }

    #[test]
    fn report_carries_conventions() {
        let t = truth(&[("u", "a")]);
        let r = evaluate("m1", &[list("u", &["a"])], &t, 10).unwrap();
        assert_eq!((r.mrr, r.ndcg_at_k, r.map_at_k, r.n_users), (1.0, 1.0, 1.0, 1));
        assert_eq!(r.map_normalization, MAP_NORMALIZATION);
    }
}
