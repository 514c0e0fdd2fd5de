//! End-to-end retrieval: decode SIDs, plan the budget, resolve items.

use std::collections::HashSet;

use super::beam::{beam_search_constrained, SequenceModel};
use super::trie::SidTrie;
use crate::error::Result;
use crate::sid::SemanticId;
use crate::sid_index::{allocate_budget, allocate_with_spillover, resolve, BudgetMode, ResolveStrategy, SidIndex};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalConfig {
    /// Raised to the mode's `top_k` when smaller.
    pub beam_width: usize,
    pub budget: usize,
    pub mode: BudgetMode,
    pub strategy: ResolveStrategy,
    /// Refill short posting lists from later candidates.
    pub spillover: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    pub items: Vec<u64>,
    pub candidates: Vec<(SemanticId, f64)>,
    /// Every planned SID was missing from the index.
    pub all_unknown: bool,
}

pub fn retrieve(
    model: &dyn SequenceModel,
    trie: &SidTrie,
    index: &SidIndex,
    history: &[Vec<u32>],
    cfg: &RetrievalConfig,
) -> Result<Retrieved> {
    let scorer = model.scorer(history)?;
    let width = cfg.beam_width.max(cfg.mode.top_k());
    let candidates = beam_search_constrained(scorer.as_ref(), width, trie)?;
    let sids: Vec<SemanticId> = candidates.iter().map(|(s, _)| s.clone()).collect();
    let plan = if cfg.spillover {
        allocate_with_spillover(&sids, cfg.budget, cfg.mode, index)?
    } else {
        allocate_budget(&sids, cfg.budget, cfg.mode)?
    };
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    let mut any_found = false;
    for (sid, count) in &plan.entries {
        let r = resolve(index, sid, *count, cfg.strategy);
        any_found |= r.found;
        for item in r.items {
            if items.len() < cfg.budget && seen.insert(item) {
                items.push(item);
            }
        }
    }
    Ok(Retrieved {
        items,
        candidates,
        all_unknown: !plan.entries.is_empty() && !any_found,
    })
}
