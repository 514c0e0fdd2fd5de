//! Picking items out of a shared SID.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{PostingEntry, SidIndex};
use crate::sid::SemanticId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolveStrategy {
    /// Uniform sample without replacement, reproducible from the seed.
    Random { seed: u64 },
    /// Highest relevance first, then freshest, then lowest item id.
    RelevanceGuided,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub items: Vec<u64>,
    /// False when the SID is not in the index.
    pub found: bool,
}

pub(crate) fn relevance_order(a: &PostingEntry, b: &PostingEntry) -> std::cmp::Ordering {
    b.relevance
        .total_cmp(&a.relevance)
        .then(b.freshness.cmp(&a.freshness))
        .then(a.item_id.cmp(&b.item_id))
}

/// Up to `count` items of `sid`. Unknown SIDs yield an empty, not-found
/// result.
pub fn resolve(index: &SidIndex, sid: &SemanticId, count: usize, strategy: ResolveStrategy) -> Resolution {
    let Some(list) = index.posting(sid) else {
        return Resolution {
            items: Vec::new(),
            found: false,
        };
    };
    let take = count.min(list.len());
    let items = match strategy {
        ResolveStrategy::RelevanceGuided => {
            let mut sorted: Vec<&PostingEntry> = list.iter().collect();
            sorted.sort_by(|a, b| relevance_order(a, b));
            sorted.iter().take(take).map(|e| e.item_id).collect()
        }
        ResolveStrategy::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::index::sample(&mut rng, list.len(), take)
                .into_iter()
                .map(|i| list[i].item_id)
                .collect()
        }
    };
    Resolution { items, found: true }
}
