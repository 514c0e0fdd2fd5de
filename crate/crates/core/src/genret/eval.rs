//! Recall@K and NDCG@K with binary gains, macro-averaged over users.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::parallel::Exec;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricAtK {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    /// Users whose result list was shorter than `k`; their metric uses the
    /// available prefix.
    pub short_lists: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub users: usize,
    pub at: Vec<MetricAtK>,
}

impl MetricTable {
    pub fn get(&self, k: usize) -> Option<&MetricAtK> {
        self.at.iter().find(|m| m.k == k)
    }
}

fn user_metrics(ranked: &[u64], truth: &HashSet<u64>, k: usize) -> (f64, f64) {
    let mut seen = HashSet::new();
    let (mut hits, mut dcg) = (0usize, 0.0);
    for (rank, item) in ranked.iter().take(k).enumerate() {
        if truth.contains(item) && seen.insert(*item) {
            hits += 1;
            dcg += 1.0 / ((rank + 2) as f64).log2();
        }
    }
    let idcg: f64 = (0..k.min(truth.len())).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    (hits as f64 / truth.len() as f64, dcg / idcg)
}

/// Evaluates every user in `truth`; users without results count as empty
/// lists.
pub fn eval_recall_ndcg(
    results: &BTreeMap<u64, Vec<u64>>,
    truth: &BTreeMap<u64, Vec<u64>>,
    ks: &[usize],
    exec: Exec,
) -> Result<MetricTable> {
    if truth.is_empty() {
        return Err(Error::UndefinedMetric("no users to evaluate"));
    }
    if ks.contains(&0) {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if truth.values().any(|t| t.is_empty()) {
        return Err(Error::UndefinedMetric("user without ground-truth items"));
    }
    let users: Vec<(&u64, &Vec<u64>)> = truth.iter().collect();
    let per_user = exec.map(&users, |(u, t)| {
        let ranked = results.get(u).map_or(&[][..], |r| r.as_slice());
        let t: HashSet<u64> = t.iter().copied().collect();
        ks.iter().map(|&k| (user_metrics(ranked, &t, k), ranked.len() < k)).collect::<Vec<_>>()
    });
    let n = users.len() as f64;
    let at = ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let (mut r, mut d, mut short) = (0.0, 0.0, 0);
            for u in &per_user {
                r += u[i].0 .0;
                d += u[i].0 .1;
                short += u[i].1 as usize;
            }
            if short > 0 {
                log::info!("{short} result lists shorter than K={k}");
            }
            MetricAtK {
                k,
                recall: r / n,
                ndcg: d / n,
                short_lists: short,
            }
        })
        .collect();
    Ok(MetricTable {
        users: users.len(),
        at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(ranked: &[u64], truth: &[u64], k: usize) -> MetricAtK {
        let r = BTreeMap::from([(1, ranked.to_vec())]);
        let t = BTreeMap::from([(1, truth.to_vec())]);
        eval_recall_ndcg(&r, &t, &[k], Exec::Sequential).unwrap().at[0].clone()
    }

    #[test]
    fn hit_at_rank_one() {
        let m = one(&[7, 1, 2, 3, 4], &[7], 5);
        assert_eq!((m.recall, m.ndcg), (1.0, 1.0));
    }

    #[test]
    fn hit_at_rank_two() {
        let m = one(&[9, 7, 3], &[7], 2);
        assert_eq!(m.recall, 1.0);
        assert!((m.ndcg - 1.0 / 3f64.log2()).abs() < 1e-15);
    }

    #[test]
    fn short_lists_are_flagged() {
        let m = one(&[7], &[7, 8], 5);
        assert_eq!(m.short_lists, 1);
        assert_eq!(m.recall, 0.5);
    }

    #[test]
    fn empty_truth_is_an_error() {
        let r = BTreeMap::new();
        assert!(eval_recall_ndcg(&r, &BTreeMap::from([(1, vec![])]), &[5], Exec::Sequential).is_err());
        assert!(eval_recall_ndcg(&r, &BTreeMap::new(), &[5], Exec::Sequential).is_err());
    }
}
