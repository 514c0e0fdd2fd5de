//! Per-user histories turned into next-item examples over SID codes.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::pipeline::UserEvent;
use crate::sid::SemanticId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSequence {
    pub user_id: u64,
    /// Chronological.
    pub items: Vec<u64>,
}

/// Groups events by user (ascending id) and orders each user's items by
/// timestamp, keeping input order among equal timestamps.
pub fn group_events(events: &[UserEvent]) -> Vec<UserSequence> {
    let mut by_user: BTreeMap<u64, Vec<(i64, usize, u64)>> = BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        by_user.entry(e.user_id).or_default().push((e.timestamp, i, e.item_id));
    }
    by_user
        .into_iter()
        .map(|(user_id, mut v)| {
            v.sort_unstable();
            UserSequence {
                user_id,
                items: v.into_iter().map(|t| t.2).collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub user_id: u64,
    /// Index of the target within the user's sequence.
    pub position: usize,
    /// SID codes of the history, oldest first, at most `max_history` items.
    pub history: Vec<Vec<u32>>,
    pub target: Vec<u32>,
    pub target_item: u64,
}

impl Example {
    /// History flattened into token ids behind a begin token.
    pub fn input_tokens(&self, vocab: &super::SidVocabulary) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(1 + self.history.len() * vocab.levels());
        out.push(vocab.bos());
        for codes in &self.history {
            for (l, &c) in codes.iter().enumerate() {
                out.push(vocab.token(l, c)?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceDataset {
    pub examples: Vec<Example>,
    /// Positions skipped because the target or a history item had no SID.
    pub dropped: usize,
}

/// One example per position `p ≥ 1` of every sequence: the (up to)
/// `max_history` items before `p`, and item `p` as target.
pub fn build_training_sequences(
    sequences: &[UserSequence],
    sids: &HashMap<u64, SemanticId>,
    max_history: usize,
) -> Result<SequenceDataset> {
    if max_history == 0 {
        return Err(Error::Config("max_history must be at least 1".into()));
    }
    let mut out = SequenceDataset::default();
    for seq in sequences {
        let codes: Vec<Option<&Vec<u32>>> = seq.items.iter().map(|i| sids.get(i).map(|s| &s.codes)).collect();
        for p in 1..seq.items.len() {
            let start = p.saturating_sub(max_history);
            let window = &codes[start..p];
            let (Some(target), true) = (codes[p], window.iter().all(Option::is_some)) else {
                out.dropped += 1;
                continue;
            };
            out.examples.push(Example {
                user_id: seq.user_id,
                position: p,
                history: window.iter().map(|c| c.unwrap().clone()).collect(),
                target: target.clone(),
                target_item: seq.items[p],
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplit {
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
}

/// Each user's last example is test and the one before it validation; the
/// rest train.
pub fn split_last(examples: Vec<Example>) -> DatasetSplit {
    let mut last: HashMap<u64, (usize, usize)> = HashMap::new();
    for e in &examples {
        let slot = last.entry(e.user_id).or_insert((0, 0));
        if e.position > slot.0 {
            *slot = (e.position, slot.0);
        } else if e.position > slot.1 {
            slot.1 = e.position;
        }
    }
    let mut split = DatasetSplit::default();
    for e in examples {
        let (test, valid) = last[&e.user_id];
        if e.position == test {
            split.test.push(e);
        } else if e.position == valid {
            split.valid.push(e);
        } else {
            split.train.push(e);
        }
    }
    split
}
