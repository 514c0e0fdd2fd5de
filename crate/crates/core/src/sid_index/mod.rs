//! SID → item inverted index with deduplicate tokens, collision metrics,
//! intra-code disambiguation and retrieval budget planning.

pub mod budget;
pub mod io;
pub mod metrics;
pub mod resolve;

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::sid::SemanticId;

pub use budget::{allocate_budget, allocate_with_spillover, BudgetMode, RetrievalPlan};
pub use metrics::{uniqueness_of, utilization_metrics, LevelUsage};
pub use resolve::{resolve, Resolution, ResolveStrategy};

#[derive(Debug, Clone, PartialEq)]
pub struct PostingEntry {
    pub item_id: u64,
    pub relevance: f64,
    /// Epoch seconds.
    pub freshness: i64,
}

/// Items sharing one SID, ordered by item id.
#[derive(Debug, Clone, PartialEq)]
pub struct PostingList {
    pub sid: SemanticId,
    pub items: Vec<PostingEntry>,
}

/// A tokenized item together with its resolution metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedItem {
    pub item_id: u64,
    pub sid: SemanticId,
    pub relevance: f64,
    pub freshness: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SidIndex {
    lists: BTreeMap<Vec<u32>, Vec<PostingEntry>>,
    total: usize,
    shape: Vec<usize>,
}

impl SidIndex {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Total number of indexed items.
    pub fn total_items(&self) -> usize {
        self.total
    }

    pub fn num_sids(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn posting(&self, sid: &SemanticId) -> Option<&[PostingEntry]> {
        self.lists.get(&sid.codes).map(|v| v.as_slice())
    }

    pub fn contains(&self, sid: &SemanticId) -> bool {
        self.lists.contains_key(&sid.codes)
    }

    /// Posting lists in SID order.
    pub fn lists(&self) -> impl Iterator<Item = PostingList> + '_ {
        self.lists.iter().map(|(codes, items)| PostingList {
            sid: SemanticId::new(codes.clone()),
            items: items.clone(),
        })
    }

    pub fn sids(&self) -> impl Iterator<Item = SemanticId> + '_ {
        self.lists.keys().map(|c| SemanticId::new(c.clone()))
    }

    pub fn list_sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.lists.values().map(|v| v.len())
    }
}

/// Groups items by SID. Dedup tokens on the input are ignored.
pub fn build_index(items: &[IndexedItem], shape: &[usize]) -> Result<SidIndex> {
    let mut seen = HashSet::with_capacity(items.len());
    let mut lists: BTreeMap<Vec<u32>, Vec<PostingEntry>> = BTreeMap::new();
    for it in items {
        if !seen.insert(it.item_id) {
            return Err(Error::Data(format!("duplicate item_id {} in index input", it.item_id)));
        }
        it.sid.validate(shape)?;
        lists.entry(it.sid.codes.clone()).or_default().push(PostingEntry {
            item_id: it.item_id,
            relevance: it.relevance,
            freshness: it.freshness,
        });
    }
    for v in lists.values_mut() {
        v.sort_by_key(|e| e.item_id);
    }
    Ok(SidIndex {
        lists,
        total: items.len(),
        shape: shape.to_vec(),
    })
}

/// Extends every item's SID with its rank (by ascending item id) inside its
/// posting list.
pub fn assign_dedup_tokens(index: &SidIndex) -> BTreeMap<u64, SemanticId> {
    let mut out = BTreeMap::new();
    for (codes, items) in &index.lists {
        for (rank, e) in items.iter().enumerate() {
            out.insert(e.item_id, SemanticId::with_dedup(codes.clone(), rank as u32));
        }
    }
    out
}

/// Distinct SIDs in use over the number of items.
pub fn uniqueness(index: &SidIndex) -> Result<f64> {
    if index.total == 0 {
        return Err(Error::UndefinedMetric("uniqueness of an empty index"));
    }
    Ok(index.lists.len() as f64 / index.total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn item(id: u64, codes: &[u32]) -> IndexedItem {
        IndexedItem {
            item_id: id,
            sid: SemanticId::new(codes.to_vec()),
            relevance: 0.0,
            freshness: 0,
        }
    }

    #[test]
    fn four_items_three_lists() {
        let items = vec![item(1, &[0, 0]), item(2, &[0, 0]), item(3, &[1, 0]), item(4, &[2, 1])];
        let idx = build_index(&items, &[4, 4]).unwrap();
        let mut sizes: Vec<usize> = idx.list_sizes().collect();
        sizes.sort();
        assert_eq!(sizes, vec![1, 1, 2]);
        assert_eq!(uniqueness(&idx).unwrap(), 0.75);
    }

    #[test]
    fn empty_index() {
        let idx = build_index(&[], &[4]).unwrap();
        assert_eq!(idx.total_items(), 0);
        assert!(matches!(uniqueness(&idx), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn duplicate_item_rejected() {
        assert!(build_index(&[item(1, &[0]), item(1, &[1])], &[2]).is_err());
    }

    #[test]
    fn out_of_shape_codes_rejected() {
        assert!(matches!(
            build_index(&[item(1, &[5])], &[4]),
            Err(Error::CodeOutOfRange { .. })
        ));
    }

    #[test]
    fn dedup_tokens_follow_item_id_order() {
        let idx = build_index(&[item(7, &[1]), item(2, &[1]), item(9, &[1]), item(4, &[0])], &[2]).unwrap();
        let d = assign_dedup_tokens(&idx);
        assert_eq!(d[&2].dedup, Some(0));
        assert_eq!(d[&7].dedup, Some(1));
        assert_eq!(d[&9].dedup, Some(2));
        assert_eq!(d[&4].dedup, Some(0));
    }

    proptest! {
        #[test]
        fn conservation_and_dedup_injectivity(codes in proptest::collection::vec((0u32..3, 0u32..3), 1..200)) {
            let items: Vec<IndexedItem> = codes.iter().enumerate()
                .map(|(i, (a, b))| item(i as u64 * 3 + 1, &[*a, *b]))
                .collect();
            let idx = build_index(&items, &[3, 3]).unwrap();
            prop_assert_eq!(idx.list_sizes().sum::<usize>(), items.len());
            let dedup = assign_dedup_tokens(&idx);
            let distinct: HashSet<&SemanticId> = dedup.values().collect();
            prop_assert_eq!(distinct.len(), items.len());
            let all_singletons = idx.list_sizes().all(|s| s == 1);
            prop_assert_eq!(uniqueness(&idx).unwrap() == 1.0, all_singletons);
        }

        #[test]
        fn uniqueness_invariant_under_relabeling(codes in proptest::collection::vec(0u32..4, 1..100), shift in 1u64..1000) {
            let a: Vec<IndexedItem> = codes.iter().enumerate().map(|(i, c)| item(i as u64, &[*c])).collect();
            let b: Vec<IndexedItem> = codes.iter().enumerate().map(|(i, c)| item((i as u64) * 7 + shift, &[*c])).collect();
            let ua = uniqueness(&build_index(&a, &[4]).unwrap()).unwrap();
            let ub = uniqueness(&build_index(&b, &[4]).unwrap()).unwrap();
            prop_assert_eq!(ua, ub);
        }
    }
}
