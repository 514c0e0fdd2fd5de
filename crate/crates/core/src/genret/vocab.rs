//! Flat token vocabulary: one disjoint id range per level, then specials.

use crate::error::{Error, Result};
use crate::sid::SemanticId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SidVocabulary {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl SidVocabulary {
    pub fn new(shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Config(format!("invalid codebook shape {shape:?}")));
        }
        let mut offsets = Vec::with_capacity(shape.len());
        let mut acc = 0;
        for &k in shape {
            offsets.push(acc);
            acc += k;
        }
        Ok(SidVocabulary {
            sizes: shape.to_vec(),
            offsets,
        })
    }

    pub fn levels(&self) -> usize {
        self.sizes.len()
    }

    pub fn level_size(&self, level: usize) -> usize {
        self.sizes[level]
    }

    pub fn shape(&self) -> &[usize] {
        &self.sizes
    }

    fn code_tokens(&self) -> usize {
        self.offsets.last().unwrap() + self.sizes.last().unwrap()
    }

    pub fn bos(&self) -> usize {
        self.code_tokens()
    }

    pub fn eos(&self) -> usize {
        self.code_tokens() + 1
    }

    pub fn pad(&self) -> usize {
        self.code_tokens() + 2
    }

    /// Total number of token ids, specials included.
    pub fn size(&self) -> usize {
        self.code_tokens() + 3
    }

    pub fn token(&self, level: usize, code: u32) -> Result<usize> {
        let k = *self
            .sizes
            .get(level)
            .ok_or_else(|| Error::shape("vocabulary level", self.sizes.len(), level + 1))?;
        if code as usize >= k {
            return Err(Error::CodeOutOfRange {
                level,
                code: code as usize,
                cardinality: k,
            });
        }
        Ok(self.offsets[level] + code as usize)
    }

    /// `(level, code)` for a code token, `None` for specials and ids out of
    /// range.
    pub fn decode(&self, token: usize) -> Option<(usize, u32)> {
        if token >= self.code_tokens() {
            return None;
        }
        let level = self.offsets.partition_point(|&o| o <= token) - 1;
        Some((level, (token - self.offsets[level]) as u32))
    }

    /// Code tokens of `sid`, dedup token ignored.
    pub fn encode_sid(&self, sid: &SemanticId) -> Result<Vec<usize>> {
        if sid.levels() != self.levels() {
            return Err(Error::shape("SemanticId levels", self.levels(), sid.levels()));
        }
        sid.codes.iter().enumerate().map(|(l, &c)| self.token(l, c)).collect()
    }
}
