//! Prefix tree over the SIDs present in an index.

use crate::error::{Error, Result};
use crate::sid::SemanticId;
use crate::sid_index::SidIndex;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct Node {
    /// `(code, child)` sorted by code.
    children: Vec<(u32, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SidTrie {
    nodes: Vec<Node>,
    levels: usize,
    leaves: usize,
}

pub const ROOT: usize = 0;

impl SidTrie {
    /// Builds from arbitrary SIDs of equal length; duplicates and dedup
    /// tokens are ignored.
    pub fn from_sids<'a, I>(sids: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a SemanticId>,
    {
        let mut codes: Vec<&[u32]> = sids.into_iter().map(|s| s.codes.as_slice()).collect();
        codes.sort_unstable();
        codes.dedup();
        let levels = codes.first().map_or(0, |c| c.len());
        if levels == 0 {
            return Err(Error::Data("cannot build a trie from no SIDs".into()));
        }
        let mut nodes = vec![Node::default()];
        for c in &codes {
            if c.len() != levels {
                return Err(Error::shape("trie SID length", levels, c.len()));
            }
            let mut at = ROOT;
            for &code in *c {
                // input is sorted, so a shared prefix always ends in the last child
                at = match nodes[at].children.last() {
                    Some(&(last, child)) if last == code => child,
                    _ => {
                        nodes.push(Node::default());
                        let child = nodes.len() - 1;
                        nodes[at].children.push((code, child));
                        child
                    }
                };
            }
        }
        Ok(SidTrie {
            nodes,
            levels,
            leaves: codes.len(),
        })
    }

    pub fn from_index(index: &SidIndex) -> Result<Self> {
        let sids: Vec<SemanticId> = index.sids().collect();
        SidTrie::from_sids(&sids)
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves
    }

    pub fn children(&self, node: usize) -> &[(u32, usize)] {
        &self.nodes[node].children
    }

    /// Node reached by `prefix`, if it is a valid prefix.
    pub fn walk(&self, prefix: &[u32]) -> Option<usize> {
        let mut at = ROOT;
        for code in prefix {
            let ch = &self.nodes[at].children;
            let i = ch.binary_search_by_key(code, |c| c.0).ok()?;
            at = ch[i].1;
        }
        Some(at)
    }

    pub fn contains(&self, codes: &[u32]) -> bool {
        codes.len() == self.levels && self.walk(codes).is_some()
    }

    /// All leaves in lexicographic order.
    pub fn leaves(&self) -> Vec<SemanticId> {
        let mut out = Vec::with_capacity(self.leaves);
        let mut stack = vec![(ROOT, Vec::new())];
        while let Some((node, prefix)) = stack.pop() {
            if prefix.len() == self.levels {
                out.push(SemanticId::new(prefix));
                continue;
            }
            for &(code, child) in self.nodes[node].children.iter().rev() {
                let mut p = prefix.clone();
                p.push(code);
                stack.push((child, p));
            }
        }
        out
    }
}
