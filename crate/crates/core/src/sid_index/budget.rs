//! Splitting a retrieval budget across ranked candidate SIDs.

use std::collections::HashSet;

use super::SidIndex;
use crate::error::{Error, Result};
use crate::sid::SemanticId;

/// Both modes take the first `top_k` candidates with `per_sid` items each;
/// they differ only in the intended shape (few deep SIDs versus many shallow
/// ones).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetMode {
    Depth { top_k: usize, per_sid: usize },
    Breadth { top_k: usize, per_sid: usize },
}

impl BudgetMode {
    pub fn top_k(&self) -> usize {
        match *self {
            BudgetMode::Depth { top_k, .. } | BudgetMode::Breadth { top_k, .. } => top_k,
        }
    }

    pub fn per_sid(&self) -> usize {
        match *self {
            BudgetMode::Depth { per_sid, .. } | BudgetMode::Breadth { per_sid, .. } => per_sid,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            BudgetMode::Depth { top_k, per_sid } => format!("depth({top_k},{per_sid})"),
            BudgetMode::Breadth { top_k, per_sid } => format!("breadth({top_k},{per_sid})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalPlan {
    pub entries: Vec<(SemanticId, usize)>,
    pub budget: usize,
    /// Set when fewer than `top_k` distinct candidates were available.
    pub truncated: bool,
}

impl RetrievalPlan {
    pub fn allocated(&self) -> usize {
        self.entries.iter().map(|(_, q)| q).sum()
    }
}

fn check(budget: usize, mode: &BudgetMode) -> Result<()> {
    if mode.top_k() == 0 || mode.per_sid() == 0 {
        return Err(Error::Config("budget mode needs top_k >= 1 and per_sid >= 1".into()));
    }
    if mode.top_k().saturating_mul(mode.per_sid()) > budget {
        return Err(Error::Config(format!(
            "{} needs {} items, budget is {budget}",
            mode.label(),
            mode.top_k() * mode.per_sid()
        )));
    }
    Ok(())
}

/// Quota `per_sid` for each of the first `top_k` distinct candidates.
/// Unconsumed budget stays unallocated.
pub fn allocate_budget(candidates: &[SemanticId], budget: usize, mode: BudgetMode) -> Result<RetrievalPlan> {
    check(budget, &mode)?;
    let mut seen = HashSet::new();
    let entries: Vec<(SemanticId, usize)> = candidates
        .iter()
        .map(SemanticId::base)
        .filter(|s| seen.insert(s.clone()))
        .take(mode.top_k())
        .map(|s| (s, mode.per_sid()))
        .collect();
    Ok(RetrievalPlan {
        truncated: entries.len() < mode.top_k(),
        entries,
        budget,
    })
}

/// Like `allocate_budget`, but quotas are capped at posting-list sizes and
/// the shortfall refills from later-ranked candidates until
/// `top_k × per_sid` items are planned or candidates run out. Candidates
/// missing from the index are skipped.
pub fn allocate_with_spillover(
    candidates: &[SemanticId],
    budget: usize,
    mode: BudgetMode,
    index: &SidIndex,
) -> Result<RetrievalPlan> {
    check(budget, &mode)?;
    let target = mode.top_k() * mode.per_sid();
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    let mut planned = 0;
    let mut primary = 0;
    for sid in candidates.iter().map(SemanticId::base) {
        if planned >= target {
            break;
        }
        if !seen.insert(sid.clone()) {
            continue;
        }
        let Some(list) = index.posting(&sid) else { continue };
        let quota = mode.per_sid().min(list.len()).min(target - planned);
        if quota == 0 {
            continue;
        }
        primary += 1;
        planned += quota;
        entries.push((sid, quota));
    }
    Ok(RetrievalPlan {
        truncated: primary < mode.top_k() && planned < target,
        entries,
        budget,
    })
}
