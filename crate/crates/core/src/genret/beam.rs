//! Trie-constrained beam search over SID levels.

use super::model::{GrContext, GrModel};
use super::trie::{SidTrie, ROOT};
use crate::error::{Error, Result};
use crate::sid::SemanticId;

/// Scores the codes of the next level given the codes generated so far.
pub trait PrefixScorer {
    fn next_logits(&self, prefix: &[u32]) -> Result<Vec<f64>>;
}

impl PrefixScorer for GrContext<'_> {
    fn next_logits(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        GrContext::next_logits(self, prefix)
    }
}

impl<F: Fn(&[u32]) -> Result<Vec<f64>>> PrefixScorer for F {
    fn next_logits(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        self(prefix)
    }
}

/// A model that conditions a [`PrefixScorer`] on a user's SID history
/// (oldest first).
pub trait SequenceModel: Sync {
    fn scorer<'a>(&'a self, history: &[Vec<u32>]) -> Result<Box<dyn PrefixScorer + 'a>>;
}

impl SequenceModel for GrModel {
    fn scorer<'a>(&'a self, history: &[Vec<u32>]) -> Result<Box<dyn PrefixScorer + 'a>> {
        Ok(Box::new(self.context(history)?))
    }
}

/// `ln Σ exp(logits[c])` over the feasible codes.
fn feasible_lse(logits: &[f64], children: &[(u32, usize)]) -> f64 {
    let m = children.iter().map(|&(c, _)| logits[c as usize]).fold(f64::NEG_INFINITY, f64::max);
    m + children.iter().map(|&(c, _)| (logits[c as usize] - m).exp()).sum::<f64>().ln()
}

/// The `beam_width` best leaves reachable under pruning, scored by summed
/// per-level log-probabilities renormalised over the feasible children of
/// each node. Sorted by score descending, ties by codes ascending.
pub fn beam_search_constrained(
    scorer: &dyn PrefixScorer,
    beam_width: usize,
    trie: &SidTrie,
) -> Result<Vec<(SemanticId, f64)>> {
    if beam_width == 0 {
        return Err(Error::Config("beam_width must be at least 1".into()));
    }
    if trie.num_leaves() == 0 {
        return Err(Error::Data("beam search over an empty trie".into()));
    }
    let mut beams: Vec<(Vec<u32>, usize, f64)> = vec![(Vec::new(), ROOT, 0.0)];
    for _ in 0..trie.levels() {
        let mut next = Vec::new();
        for (prefix, node, score) in &beams {
            let children = trie.children(*node);
            let logits = scorer.next_logits(prefix)?;
            if let Some(&(c, _)) = children.iter().find(|&&(c, _)| c as usize >= logits.len()) {
                return Err(Error::CodeOutOfRange {
                    level: prefix.len(),
                    code: c as usize,
                    cardinality: logits.len(),
                });
            }
            let lse = feasible_lse(&logits, children);
            if !lse.is_finite() {
                return Err(Error::Numerical(format!("non-finite scores after prefix {prefix:?}")));
            }
            for &(code, child) in children {
                let mut p = prefix.clone();
                p.push(code);
                next.push((p, child, score + (logits[code as usize] - lse)));
            }
        }
        next.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
        next.truncate(beam_width);
        beams = next;
    }
    Ok(beams.into_iter().map(|(codes, _, s)| (SemanticId::new(codes), s)).collect())
}
