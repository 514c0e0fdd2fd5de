//! Count-based next-SID model: the previous item's SID and the generated
//! prefix predict the next code, backing off to prefix-only counts.

use std::collections::HashMap;

use super::beam::{PrefixScorer, SequenceModel};
use super::Example;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    shape: Vec<usize>,
    /// Additive smoothing of the prefix-only distribution.
    alpha: f64,
    /// Pseudo-count weight of the back-off distribution.
    backoff: f64,
    prefix_counts: HashMap<Vec<u32>, Vec<f64>>,
    context_counts: HashMap<(Vec<u32>, Vec<u32>), Vec<f64>>,
}

impl NgramModel {
    pub fn fit(examples: &[Example], shape: &[usize], alpha: f64, backoff: f64) -> Result<Self> {
        if !(alpha > 0.0 && backoff > 0.0) {
            return Err(Error::Config("n-gram smoothing constants must be positive".into()));
        }
        let mut model = NgramModel {
            shape: shape.to_vec(),
            alpha,
            backoff,
            prefix_counts: HashMap::new(),
            context_counts: HashMap::new(),
        };
        for e in examples {
            if e.target.len() != shape.len() {
                return Err(Error::shape("n-gram target levels", shape.len(), e.target.len()));
            }
            let last = e.history.last().cloned().unwrap_or_default();
            for (l, &code) in e.target.iter().enumerate() {
                if code as usize >= shape[l] {
                    return Err(Error::CodeOutOfRange {
                        level: l,
                        code: code as usize,
                        cardinality: shape[l],
                    });
                }
                let prefix = e.target[..l].to_vec();
                model.prefix_counts.entry(prefix.clone()).or_insert_with(|| vec![0.0; shape[l]])[code as usize] += 1.0;
                model.context_counts.entry((last.clone(), prefix)).or_insert_with(|| vec![0.0; shape[l]])[code as usize] += 1.0;
            }
        }
        Ok(model)
    }

    fn probs(&self, last: &[u32], prefix: &[u32]) -> Result<Vec<f64>> {
        let l = prefix.len();
        if l >= self.shape.len() {
            return Err(Error::shape("decode step", self.shape.len() - 1, l));
        }
        let k = self.shape[l];
        let base: Vec<f64> = match self.prefix_counts.get(prefix) {
            Some(c) => {
                let n: f64 = c.iter().sum();
                c.iter().map(|x| (x + self.alpha) / (n + self.alpha * k as f64)).collect()
            }
            None => vec![1.0 / k as f64; k],
        };
        Ok(match self.context_counts.get(&(last.to_vec(), prefix.to_vec())) {
            Some(c) => {
                let n: f64 = c.iter().sum();
                c.iter().zip(&base).map(|(x, b)| (x + self.backoff * b) / (n + self.backoff)).collect()
            }
            None => base,
        })
    }
}

struct NgramContext<'a> {
    model: &'a NgramModel,
    last: Vec<u32>,
}

impl PrefixScorer for NgramContext<'_> {
    fn next_logits(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        Ok(self.model.probs(&self.last, prefix)?.into_iter().map(f64::ln).collect())
    }
}

impl SequenceModel for NgramModel {
    fn scorer<'a>(&'a self, history: &[Vec<u32>]) -> Result<Box<dyn PrefixScorer + 'a>> {
        Ok(Box::new(NgramContext {
            model: self,
            last: history.last().cloned().unwrap_or_default(),
        }))
    }
}
