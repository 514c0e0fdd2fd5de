use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::sid::SemanticId;

#[derive(Debug, Clone, PartialEq)]
pub struct LevelUsage {
    pub used_codes: usize,
    /// `used_codes / K_l`.
    pub utilization: f64,
    /// `exp(H)` of the empirical code distribution at this level.
    pub perplexity: f64,
}

/// Per-level code usage. An empty input reports zero usage and perplexity 1.
pub fn utilization_metrics(sids: &[SemanticId], shape: &[usize]) -> Vec<LevelUsage> {
    shape
        .iter()
        .enumerate()
        .map(|(level, &k)| {
            let mut counts: HashMap<u32, usize> = HashMap::new();
            for s in sids {
                if let Some(&c) = s.codes.get(level) {
                    *counts.entry(c).or_default() += 1;
                }
            }
            let total: usize = counts.values().sum();
            let mut freq: Vec<usize> = counts.values().copied().collect();
            // fixed summation order
            freq.sort_unstable();
            let entropy: f64 = freq
                .iter()
                .map(|&n| {
                    let p = n as f64 / total as f64;
                    -p * p.ln()
                })
                .sum();
            LevelUsage {
                used_codes: counts.len(),
                utilization: counts.len() as f64 / k as f64,
                perplexity: entropy.exp(),
            }
        })
        .collect()
}

/// Distinct SIDs over the number of SIDs.
pub fn uniqueness_of(sids: &[SemanticId]) -> Result<f64> {
    if sids.is_empty() {
        return Err(Error::UndefinedMetric("uniqueness of an empty set"));
    }
    let distinct: HashSet<&SemanticId> = sids.iter().collect();
    Ok(distinct.len() as f64 / sids.len() as f64)
}
