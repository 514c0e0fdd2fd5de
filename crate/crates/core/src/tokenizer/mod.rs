//! Residual-quantization tokenizers: the RQ-VAE with its straight-through
//! codebook path, and the non-differentiable residual K-means baseline.

pub mod checkpoint;
pub mod codebook;
pub mod kmeans;
pub mod model;
pub mod quantize;
pub mod train;

pub use codebook::{AssignmentRule, Codebook};
pub use model::{FrozenItem, ItemInputs, LossParts, RqVaeShape, TokenizerModel};
pub use quantize::{assign_codes, quantize, ste_decode_forward, QuantizationTrace};
pub use train::{train, EpochMetrics, TrainConfig};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::parallel::Exec;
use crate::sid::SemanticId;

/// Residual K-means over raw embeddings. With several modalities the input is
/// their concatenation in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct RqKmeansModel {
    pub modalities: Vec<(String, usize)>,
    pub codebooks: Vec<Codebook>,
}

impl RqKmeansModel {
    pub fn encode(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        if inputs.len() != self.modalities.len() {
            let name = self
                .modalities
                .get(inputs.len())
                .map_or("<extra>".to_string(), |m| m.0.clone());
            return Err(Error::MissingModality(name));
        }
        let mut out = Vec::with_capacity(self.modalities.iter().map(|m| m.1).sum());
        for ((_, d), x) in self.modalities.iter().zip(inputs) {
            if x.len() != *d {
                return Err(Error::shape("modality input dim", *d, x.len()));
            }
            out.extend_from_slice(x);
        }
        Ok(out)
    }
}

/// Fits one K-means codebook per level on the raw (concatenated) embeddings
/// and their successive residuals, using the items that have every listed
/// modality. Assignment afterwards is nearest-centroid.
pub fn rq_kmeans_fit(
    corpus: &Corpus,
    modalities: &[String],
    sizes: &[usize],
    max_iters: usize,
    seed: u64,
    exec: Exec,
) -> Result<RqKmeansModel> {
    let dims: Vec<(String, usize)> = modalities
        .iter()
        .map(|n| {
            let i = corpus
                .modality_index(n)
                .ok_or_else(|| Error::MissingModality(n.clone()))?;
            Ok((n.clone(), corpus.modalities()[i].dim))
        })
        .collect::<Result<_>>()?;
    let shell = RqKmeansModel {
        modalities: dims,
        codebooks: Vec::new(),
    };
    let rows: Vec<Vec<f64>> = corpus
        .records()
        .iter()
        .filter_map(|r| corpus.inputs(r, modalities).ok())
        .map(|x| shell.encode(&x))
        .collect::<Result<_>>()?;
    let k_max = sizes.iter().copied().max().unwrap_or(0);
    if rows.len() < k_max {
        return Err(Error::Data(format!(
            "{} items have every modality, fewer than the {k_max} codes requested",
            rows.len()
        )));
    }
    let data = Matrix::from_rows(&rows)?;
    let codebooks = kmeans::residual_kmeans(&data, sizes, max_iters, seed, false, exec)?;
    Ok(RqKmeansModel {
        codebooks,
        ..shell
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tokenizer {
    RqVae(TokenizerModel),
    RqKmeans(RqKmeansModel),
}

impl Tokenizer {
    pub fn modality_names(&self) -> Vec<String> {
        match self {
            Tokenizer::RqVae(m) => m.modality_names(),
            Tokenizer::RqKmeans(m) => m.modalities.iter().map(|(n, _)| n.clone()).collect(),
        }
    }

    pub fn codebooks(&self) -> &[Codebook] {
        match self {
            Tokenizer::RqVae(m) => &m.codebooks,
            Tokenizer::RqKmeans(m) => &m.codebooks,
        }
    }

    pub fn rule(&self) -> AssignmentRule {
        match self {
            Tokenizer::RqVae(m) => m.rule,
            Tokenizer::RqKmeans(_) => AssignmentRule::L2,
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.codebooks().iter().map(|c| c.size()).collect()
    }

    /// The pre-quantization vector `h⁰`.
    pub fn encode(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        match self {
            Tokenizer::RqVae(m) => m.encode(inputs),
            Tokenizer::RqKmeans(m) => m.encode(inputs),
        }
    }

    pub fn tokenize(&self, inputs: &[&[f64]]) -> Result<SemanticId> {
        let h0 = self.encode(inputs)?;
        Ok(SemanticId::new(assign_codes(self.codebooks(), self.rule(), &h0)?.0))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TokenizedCorpus {
    /// Sorted by item id.
    pub entries: Vec<(u64, SemanticId)>,
    /// Items that could not be tokenized, with the reason.
    pub rejects: Vec<(u64, String)>,
}

/// One SID per corpus item, in item-id order. Per-item failures (such as a
/// missing modality) are collected rather than aborting the run.
pub fn tokenize_corpus(tokenizer: &Tokenizer, corpus: &Corpus, exec: Exec) -> TokenizedCorpus {
    let names = tokenizer.modality_names();
    let results = exec.map(corpus.records(), |r| {
        let sid = corpus
            .inputs(r, &names)
            .and_then(|inputs| tokenizer.tokenize(&inputs));
        (r.item_id, sid)
    });
    let mut out = TokenizedCorpus::default();
    for (id, res) in results {
        match res {
            Ok(sid) => out.entries.push((id, sid)),
            Err(e) => out.rejects.push((id, e.to_string())),
        }
    }
    out
}
